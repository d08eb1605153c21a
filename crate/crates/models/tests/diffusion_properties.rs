use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparsepose_models::diffusion::{forward_corrupt, posterior, reverse_distribution, ScheduleConfig, TransitionSchedule};

/// Explicit `Q[to, from]` straight from the mask-and-replace definition.
fn q_matrix(k: usize, beta: f64, gamma: f64) -> DMatrix<f64> {
    let alpha = 1.0 - k as f64 * beta - gamma;
    DMatrix::from_fn(k + 1, k + 1, |to, from| match (to == k, from == k) {
        (_, true) => (to == k) as u8 as f64,
        (true, false) => gamma,
        (false, false) => beta + if to == from { alpha } else { 0.0 },
    })
}

fn product(k: usize, beta: &[f64], gamma: &[f64], s: usize, t: usize) -> DMatrix<f64> {
    (s..t).fold(DMatrix::identity(k + 1, k + 1), |m, i| q_matrix(k, beta[i], gamma[i]) * m)
}

fn schedule_strategy() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
    (2usize..7, 1usize..16).prop_flat_map(|(k, steps)| {
        let pairs = prop::collection::vec((0.0f64..0.08, 0.0f64..0.5), steps);
        (Just(k), pairs).prop_map(|(k, pairs)| {
            let (gamma, beta): (Vec<f64>, Vec<f64>) = pairs.into_iter().map(|(g, r)| (g, r * (1.0 - g) / k as f64)).unzip();
            (k, beta, gamma)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cumulative_kernels_match_explicit_products((k, beta, gamma) in schedule_strategy()) {
        let sched = TransitionSchedule::from_steps(k, &beta, &gamma).unwrap();
        for t in 1..=beta.len() {
            let bar = sched.cumulative(t).unwrap().matrix(k);
            prop_assert!((bar.clone() - product(k, &beta, &gamma, 0, t)).abs().max() < 1e-12);
            for c in bar.column_iter() {
                prop_assert!((c.sum() - 1.0).abs() < 1e-12);
            }
            for s in 0..t {
                let hop = sched.between(s, t).unwrap().matrix(k);
                prop_assert!((hop.clone() - product(k, &beta, &gamma, s, t)).abs().max() < 1e-12);
                let composed = hop * sched.cumulative(s).unwrap().matrix(k);
                prop_assert!((composed - &bar).abs().max() < 1e-12);
            }
        }
    }

    #[test]
    fn posteriors_are_normalized_bayes_ratios((k, beta, gamma) in schedule_strategy()) {
        let sched = TransitionSchedule::from_steps(k, &beta, &gamma).unwrap();
        let steps = beta.len();
        for t in 1..=steps {
            let s = t - 1;
            let (hop, to_s, to_t) = (product(k, &beta, &gamma, s, t), product(k, &beta, &gamma, 0, s), product(k, &beta, &gamma, 0, t));
            for z0 in 0..k {
                for z_t in 0..=k {
                    let got = posterior(&sched, z_t, z0, t, s);
                    if to_t[(z_t, z0)] == 0.0 {
                        prop_assert!(got.is_err());
                        continue;
                    }
                    let got = got.unwrap();
                    prop_assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    for j in 0..=k {
                        let expect = hop[(z_t, j)] * to_s[(j, z0)] / to_t[(z_t, z0)];
                        prop_assert!((got[j] - expect).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn reverse_distribution_is_the_weighted_posterior_mixture(
        (k, beta, gamma) in schedule_strategy(),
        raw in prop::collection::vec(0.0f64..1.0, 6),
    ) {
        let sched = TransitionSchedule::from_steps(k, &beta, &gamma).unwrap();
        let mass: f64 = raw[..k].iter().sum::<f64>() + 1e-9;
        let p: Vec<f64> = raw[..k].iter().map(|v| (v + 1e-9 / k as f64) / mass).collect();
        let t = beta.len();
        for s in 0..t {
            for z_t in 0..=k {
                let mut mix = vec![0.0; k + 1];
                let mut reach = 0.0;
                for (x0, &px) in p.iter().enumerate() {
                    if let Ok(post) = posterior(&sched, z_t, x0, t, s) {
                        reach += px;
                        mix.iter_mut().zip(&post).for_each(|(m, q)| *m += px * q);
                    }
                }
                let got = reverse_distribution(&sched, z_t, &p, t, s).unwrap();
                for j in 0..=k {
                    prop_assert!((got[j] - mix[j] / reach).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn default_schedule_ends_almost_fully_masked() {
    let sched = TransitionSchedule::build(100, 64, &ScheduleConfig::default()).unwrap();
    let end = sched.cumulative(100).unwrap();
    assert!(end.gamma > 1.0 - 1e-9 && end.alpha > 0.0);
    let mid = sched.cumulative(50).unwrap();
    assert!((mid.gamma - 0.5).abs() < 1e-9);
}

#[test]
fn forward_corruption_matches_the_cumulative_column() {
    let k = 5;
    let sched = TransitionSchedule::build(20, k, &ScheduleConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 200_000;
    for t in [1usize, 7, 20] {
        let z0 = vec![2usize; n];
        let zt = forward_corrupt(&sched, &z0, t, &mut rng).unwrap();
        let column = sched.cumulative(t).unwrap().matrix(k).column(2).into_owned();
        for state in 0..=k {
            let p = column[state];
            let freq = zt.iter().filter(|&&z| z == state).count() as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt().max(1e-6);
            assert!((freq - p).abs() < 4.0 * se, "t = {t}, state {state}: {freq} vs {p}");
        }
    }
}
