//! Linear time-varying systems with bounded disturbances: generation,
//! simulation, Markov operators, natural outputs and closed-loop rollouts.

mod cost;
mod disturbance;
mod markov;
mod rollout;
mod system;

pub use cost::{CostKind, CostSpec, StageCost};
pub use disturbance::{
    generate_disturbance, DisturbanceConfig, DisturbanceKind, DisturbanceRealization,
};
pub use markov::{markov_operator, MarkovOperator};
pub use rollout::{
    natural_output, natural_outputs, rollout, step, Controller, EpisodeTrace, StepDiagnostics,
    StepRecord, ZeroController,
};
pub use system::{
    generate_system, DisturbanceMap, OutputMap, Schedule, Stability, SystemConfig, SystemPath,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gaussian_matrix, gaussian_vector, spectral_norm};
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_path(a: f64, b: f64, c: f64, horizon: usize) -> SystemPath {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        SystemPath::new(
            vec![m(a); horizon],
            vec![m(b); horizon],
            vec![m(1.0); horizon],
            vec![m(c); horizon],
            0.5,
            1.0,
        )
        .unwrap()
    }

    fn random_cfg(n: usize, m: usize, p: usize, q: usize) -> SystemConfig {
        SystemConfig {
            n,
            m,
            p,
            q,
            gamma: 0.3,
            kappa_b: 1.5,
            schedule: Schedule::PerStep { jitter: 1.0 },
            output_map: OutputMap::RandomConstant,
            disturbance_map: DisturbanceMap::Random,
        }
    }

    fn uniform_dist(q: usize, p: usize, horizon: usize, seed: u64) -> DisturbanceRealization {
        let cfg = DisturbanceConfig { kind: DisturbanceKind::Uniform, kappa_w: 1.0, kappa_e: 0.3 };
        generate_disturbance(&cfg, q, p, horizon, seed).unwrap()
    }

    #[test]
    fn step_substitution_cases() {
        let z = DMatrix::zeros(2, 2);
        let i = DMatrix::identity(2, 2);
        let sys = SystemPath::new(vec![z.clone()], vec![i.clone()], vec![z], vec![i.clone()], 0.5, 1.0)
            .unwrap();
        let dist = DisturbanceRealization::zeros(1, 2, 2);
        let x = DVector::from_vec(vec![1.5, -2.0]);
        let v = DVector::from_vec(vec![0.25, 4.0]);
        let (x_next, y) = step(&sys, 1, &x, &v, &dist).unwrap();
        assert_eq!(x_next, v);
        assert_eq!(y, x);

        let sys = SystemPath::new_unchecked(
            vec![i.clone()],
            vec![i.clone()],
            vec![i.clone()],
            vec![i.clone()],
        )
        .unwrap();
        let (x_next, _) = step(&sys, 1, &x, &DVector::zeros(2), &dist).unwrap();
        assert_eq!(x_next, x);
    }

    #[test]
    fn step_rejects_bad_dims() {
        let sys = scalar_path(0.5, 1.0, 1.0, 3);
        let dist = DisturbanceRealization::zeros(3, 1, 1);
        let x = DVector::zeros(2);
        assert!(step(&sys, 1, &x, &DVector::zeros(1), &dist).is_err());
        assert!(step(&sys, 4, &DVector::zeros(1), &DVector::zeros(1), &dist).is_err());
    }

    #[test]
    fn step_matches_elementwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sys = generate_system(&random_cfg(3, 3, 3, 3), 5, 2).unwrap();
        let dist = uniform_dist(3, 3, 5, 3);
        let x = gaussian_vector(&mut rng, 3);
        let u = gaussian_vector(&mut rng, 3);
        let (x_next, y) = step(&sys, 2, &x, &u, &dist).unwrap();
        let (a, b, bw, c) = (sys.a(2), sys.b(2), sys.bw(2), sys.c(2));
        let w = dist.w(2).unwrap();
        let e = dist.e(2).unwrap();
        for i in 0..3 {
            let mut xi = 0.0;
            let mut yi = e[i];
            for j in 0..3 {
                xi += a[(i, j)] * x[j] + b[(i, j)] * u[j] + bw[(i, j)] * w[j];
                yi += c[(i, j)] * x[j];
            }
            assert!((x_next[i] - xi).abs() < 1e-12);
            assert!((y[i] - yi).abs() < 1e-12);
        }
    }

    #[test]
    fn markov_scalar_time_invariant() {
        let sys = scalar_path(0.5, 1.0, 1.0, 10);
        let g = markov_operator(&sys, 6, 3).unwrap();
        let vals: Vec<f64> = g.blocks().iter().map(|b| b[(0, 0)]).collect();
        assert_eq!(vals, vec![1.0, 0.5, 0.25]);
        assert!(markov_operator(&sys, 6, 0).is_err());
    }

    #[test]
    fn markov_zero_dynamics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = gaussian_matrix(&mut rng, 2, 1) * 0.2;
        let c = gaussian_matrix(&mut rng, 2, 2);
        let sys = SystemPath::new(
            vec![DMatrix::zeros(2, 2); 8],
            vec![b.clone(); 8],
            vec![DMatrix::identity(2, 2); 8],
            vec![c.clone(); 8],
            0.5,
            1.0,
        )
        .unwrap();
        let g = markov_operator(&sys, 7, 4).unwrap();
        assert_eq!(g.block(1), &(&c * &b));
        for k in 2..=4 {
            assert_eq!(g.block(k), &DMatrix::zeros(2, 1));
        }
    }

    /// Independent oracle: builds each block by walking the product from the
    /// input side instead of the output side.
    fn markov_oracle(sys: &SystemPath, t: i64, h: usize) -> Vec<DMatrix<f64>> {
        let mut out = Vec::new();
        for k in 1..=h as i64 {
            let mut acc = sys.b(t - k).clone();
            for j in (1..k).rev() {
                acc = sys.a(t - j) * acc;
            }
            out.push(sys.c(t) * acc);
        }
        out
    }

    #[test]
    fn markov_matches_product_oracle() {
        for seed in 0..10 {
            let sys = generate_system(&random_cfg(2, 2, 2, 2), 12, seed).unwrap();
            for t in [1i64, 3, 9, 12] {
                let g = markov_operator(&sys, t, 4).unwrap();
                for (got, want) in g.blocks().iter().zip(markov_oracle(&sys, t, 4)) {
                    assert!((got - want).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn markov_blocks_respect_decay_bound() {
        for seed in 0..20 {
            let sys = generate_system(&random_cfg(3, 2, 2, 3), 30, seed).unwrap();
            let st = sys.stability();
            for t in [5i64, 17, 30] {
                let g = markov_operator(&sys, t, 6).unwrap();
                assert!(g.in_set(st.kappa_a, st.kappa_b, st.gamma, 1e-9));
            }
        }
    }

    #[test]
    fn generated_systems_respect_norm_bounds() {
        for seed in 0..10 {
            let cfg = random_cfg(3, 2, 3, 3);
            let sys = generate_system(&cfg, 50, seed).unwrap();
            for t in 1..=50 {
                assert!(spectral_norm(sys.a(t)) <= 1.0 - cfg.gamma + 1e-12);
                assert!(spectral_norm(sys.b(t)) <= cfg.kappa_b + 1e-12);
            }
        }
    }

    #[test]
    fn natural_output_zero_and_noise_passthrough() {
        let sys = scalar_path(0.5, 1.0, 1.0, 6);
        let dist = DisturbanceRealization::zeros(6, 1, 1);
        for t in 1..=6 {
            assert_eq!(natural_output(&sys, &dist, t).unwrap()[0], 0.0);
        }
        let noise: Vec<_> = (1..=6).map(|t| DVector::from_vec(vec![t as f64])).collect();
        let dist = DisturbanceRealization::new(vec![DVector::zeros(1); 6], noise);
        for t in 1..=6 {
            assert_eq!(natural_output(&sys, &dist, t).unwrap()[0], t as f64);
        }
    }

    #[test]
    fn natural_output_subtraction_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let horizon = 40;
        let sys = generate_system(&random_cfg(3, 2, 2, 3), horizon, 7).unwrap();
        let dist = uniform_dist(3, 2, horizon, 8);
        let inputs: Vec<DVector<f64>> = (0..horizon).map(|_| gaussian_vector(&mut rng, 2)).collect();
        let natural = natural_outputs(&sys, &dist, &DVector::zeros(3)).unwrap();
        let mut x = DVector::zeros(3);
        for t in 1..=horizon {
            let (x_next, y) = step(&sys, t, &x, &inputs[t - 1], &dist).unwrap();
            let g = markov_operator(&sys, t as i64, t.max(2) - 1).unwrap();
            let mut s = y.clone();
            for k in 1..t {
                s -= g.block(k) * &inputs[t - k - 1];
            }
            assert!((s - &natural[t - 1]).norm() < 1e-9, "t = {t}");
            x = x_next;
        }
        assert_eq!(natural[10], natural_output(&sys, &dist, 11).unwrap());
    }

    #[test]
    fn rollout_zero_policy_on_quiet_system_costs_nothing() {
        let sys = generate_system(&random_cfg(2, 2, 2, 2), 25, 3).unwrap();
        let dist = DisturbanceRealization::zeros(25, 2, 2);
        let cost = CostSpec::quadratic(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let trace =
            rollout(&sys, &dist, &mut ZeroController { m: 2 }, &cost, &DVector::zeros(2)).unwrap();
        assert_eq!(trace.len(), 25);
        assert_eq!(trace.total_cost(), 0.0);
    }

    #[test]
    fn rollout_total_is_resummed_cost() {
        struct Noisy(ChaCha8Rng);
        impl Controller for Noisy {
            fn act(&mut self, _t: usize, _y: &DVector<f64>) -> crate::Result<DVector<f64>> {
                Ok(gaussian_vector(&mut self.0, 2))
            }
            fn observe(&mut self, _: usize, _: &DVector<f64>, _: &CostSpec) -> crate::Result<()> {
                Ok(())
            }
        }
        let sys = generate_system(&random_cfg(3, 2, 2, 3), 60, 5).unwrap();
        let dist = uniform_dist(3, 2, 60, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = crate::linalg::random_psd(&mut rng, 2);
        let r = crate::linalg::random_psd(&mut rng, 2);
        let cost = CostSpec::quadratic(q.clone(), r.clone()).unwrap();
        let trace = rollout(
            &sys,
            &dist,
            &mut Noisy(ChaCha8Rng::seed_from_u64(2)),
            &cost,
            &DVector::zeros(3),
        )
        .unwrap();
        let resum: f64 = trace
            .records
            .iter()
            .map(|r_| (r_.y.transpose() * &q * &r_.y)[0] + (r_.u.transpose() * &r * &r_.u)[0])
            .sum();
        assert!((trace.total_cost() - resum).abs() < 1e-9 * (1.0 + resum.abs()));
    }

    #[test]
    fn rollout_rejects_wrong_input_dimension() {
        let sys = scalar_path(0.5, 1.0, 1.0, 3);
        let dist = DisturbanceRealization::zeros(3, 1, 1);
        let cost = CostSpec::quadratic(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let err = rollout(&sys, &dist, &mut ZeroController { m: 2 }, &cost, &DVector::zeros(1));
        assert!(matches!(err, Err(crate::Error::Contract(_))));
    }
}
