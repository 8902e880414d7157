use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{AggregateResult, EpisodeMeta, ExperimentConfig, ResolvedParams, SweepResult};

pub const SERIES_HEADER: &str = "t,regret_mean,regret_std,cost_mean,est_err_mean,detections_mean";
pub const SUMMARY_HEADER: &str = "controller,T,final_regret_mean,final_regret_std,scaling_slope";

/// Decimal rendering with 9 significant digits; `NaN`, `inf`, `-inf` literally.
pub fn format_value(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if exp >= 0 {
        let int_len = exp as usize + 1;
        if digits.len() <= int_len {
            out.push_str(&digits);
            out.extend(std::iter::repeat_n('0', int_len - digits.len()));
        } else {
            out.push_str(&digits[..int_len]);
            out.push('.');
            out.push_str(&digits[int_len..]);
        }
    } else {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
        out.push_str(&digits);
    }
    if out.contains('.') {
        while out.ends_with('0') {
            out.pop();
        }
        if out.ends_with('.') {
            out.pop();
        }
    }
    out
}

/// Parses a value written by [`format_value`].
pub fn parse_value(s: &str) -> Option<f64> {
    match s {
        "NaN" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn series_csv(result: &AggregateResult, controller: usize) -> String {
    let mut out = String::from(SERIES_HEADER);
    out.push('\n');
    for r in &result.controllers[controller].series {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.t,
            format_value(r.regret_mean),
            format_value(r.regret_std),
            format_value(r.cost_mean),
            format_value(r.est_err_mean),
            format_value(r.detections_mean)
        );
    }
    out
}

fn summary_rows(out: &mut String, result: &AggregateResult, slopes: &[Option<f64>]) {
    for (c, slope) in result.controllers.iter().zip(slopes) {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            c.name,
            result.params.horizon,
            format_value(c.final_regret_mean),
            format_value(c.final_regret_std),
            format_value(slope.unwrap_or(f64::NAN))
        );
    }
}

pub fn summary_csv(result: &AggregateResult) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    summary_rows(&mut out, result, &vec![None; result.controllers.len()]);
    out
}

#[derive(Serialize)]
struct ControllerMeta<'a> {
    name: &'a str,
    kind: &'a str,
    final_regrets: &'a [f64],
    detection_times: &'a [Vec<usize>],
}

#[derive(Serialize)]
struct Metadata<'a> {
    config: &'a ExperimentConfig,
    params: &'a ResolvedParams,
    episodes: &'a [EpisodeMeta],
    controllers: Vec<ControllerMeta<'a>>,
}

pub fn metadata_json(cfg: &ExperimentConfig, result: &AggregateResult) -> String {
    let meta = Metadata {
        config: cfg,
        params: &result.params,
        episodes: &result.episodes,
        controllers: result
            .controllers
            .iter()
            .map(|c| ControllerMeta {
                name: &c.name,
                kind: c.kind.name(),
                final_regrets: &c.final_regrets,
                detection_times: &c.detection_times,
            })
            .collect(),
    };
    // non-finite numbers become null
    serde_json::to_string_pretty(&meta).expect("metadata serializes")
}

/// Writes `<label>.csv` per controller, `summary.csv` and `metadata.json`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, result: &AggregateResult) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut written = Vec::new();
    for (j, c) in result.controllers.iter().enumerate() {
        let path = dir.join(format!("{}.csv", c.name));
        write_file(&path, &series_csv(result, j))?;
        written.push(path);
    }
    let summary = dir.join("summary.csv");
    write_file(&summary, &summary_csv(result))?;
    let meta = dir.join("metadata.json");
    write_file(&meta, &metadata_json(cfg, result))?;
    written.extend([summary, meta]);
    Ok(written)
}

/// One `T<horizon>/` directory per horizon plus a combined `summary.csv`
/// carrying the fitted slopes.
pub fn write_sweep(dir: &Path, cfg: &ExperimentConfig, sweep: &SweepResult) -> Result<()> {
    create_dir(dir)?;
    let slopes: Vec<Option<f64>> = sweep.fits.iter().map(|(_, f)| f.as_ref().map(|f| f.slope)).collect();
    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');
    for result in &sweep.results {
        write_run(&dir.join(format!("T{}", result.params.horizon)), cfg, result)?;
        summary_rows(&mut summary, result, &slopes);
    }
    write_file(&dir.join("summary.csv"), &summary)
}
