//! Closed-form forward corruption, posterior and reverse mixture for the
//! mask-and-replace chain. All distributions are over `K + 1` states.

use rand::Rng;

use super::schedule::TransitionSchedule;
use crate::error::{Error, Result};

pub fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    // Rounding left u ≥ 0 past the end: fall back to the last non-zero entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Samples `z_t ~ q(z_t | z_0)` independently per token; `t = 0` returns `z0`.
pub fn forward_corrupt<R: Rng>(sched: &TransitionSchedule, z0: &[usize], t: usize, rng: &mut R) -> Result<Vec<usize>> {
    let k = sched.codebook_size();
    if let Some(&bad) = z0.iter().find(|&&z| z >= k) {
        return Err(Error::Domain(format!("z_0 token {bad} is not a codebook index")));
    }
    let c = sched.cumulative(t)?;
    Ok(z0
        .iter()
        .map(|&z| {
            let u: f64 = rng.random();
            if u < c.gamma {
                k
            } else if u < c.gamma + c.alpha {
                z
            } else {
                rng.random_range(0..k)
            }
        })
        .collect())
}

/// `q(z_s | z_t, z_0)` for `s < t` (ordinarily `s = t − 1`).
pub fn posterior(sched: &TransitionSchedule, z_t: usize, z0: usize, t: usize, s: usize) -> Result<Vec<f64>> {
    let k = sched.codebook_size();
    if z0 >= k || z_t > k {
        return Err(Error::Domain(format!("tokens out of range: z_t = {z_t}, z_0 = {z0}")));
    }
    let hop = sched.between(s, t)?;
    let from0_s = sched.cumulative(s)?;
    let denom = sched.cumulative(t)?.prob(k, z_t, z0);
    if denom <= 0.0 {
        return Err(Error::InconsistentPair { z_t, z0, t });
    }
    Ok((0..=k)
        .map(|j| hop.prob(k, z_t, j) * from0_s.prob(k, j, z0) / denom)
        .collect())
}

/// `Σ_{x0} q(z_s | z_t, x0) p(x0)` over the `K` codebook candidates, in O(K).
/// Candidates that cannot reach `z_t` are dropped and the rest renormalized.
pub fn reverse_distribution(
    sched: &TransitionSchedule,
    z_t: usize,
    p_x0: &[f64],
    t: usize,
    s: usize,
) -> Result<Vec<f64>> {
    let k = sched.codebook_size();
    if p_x0.len() != k {
        return Err(Error::Shape(format!("p(x0) has {} entries, expected {k}", p_x0.len())));
    }
    if z_t > k {
        return Err(Error::Domain(format!("z_t = {z_t} out of range")));
    }
    let hop = sched.between(s, t)?;
    let cs = sched.cumulative(s)?;
    let ct = sched.cumulative(t)?;

    // w(x0) = p(x0) / q(z_t | x0) over reachable candidates.
    let mut w = vec![0.0; k];
    let mut mass = 0.0;
    for x0 in 0..k {
        let q = ct.prob(k, z_t, x0);
        if q > 0.0 && p_x0[x0] > 0.0 {
            w[x0] = p_x0[x0] / q;
            mass += p_x0[x0];
        }
    }
    if mass <= 0.0 {
        let z0 = p_x0
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i);
        return Err(Error::InconsistentPair { z_t, z0, t });
    }
    w.iter_mut().for_each(|v| *v /= mass);
    let w_sum: f64 = w.iter().sum();

    // q(z_s = j | x0) = α_s[j = x0] + β_s for j < K, γ_s for j = K.
    let mut out: Vec<f64> = (0..k)
        .map(|j| hop.prob(k, z_t, j) * (cs.alpha * w[j] + cs.beta * w_sum))
        .collect();
    out.push(hop.prob(k, z_t, k) * cs.gamma * w_sum);
    let total: f64 = out.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numeric(format!("reverse distribution has mass {total}")));
    }
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::ScheduleConfig;
    use rand::SeedableRng;

    fn sched(t: usize, k: usize) -> TransitionSchedule {
        TransitionSchedule::build(t, k, &ScheduleConfig::default()).unwrap()
    }

    #[test]
    fn terminal_step_masks_everything() {
        let s = sched(10, 4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let z0 = vec![0, 1, 2, 3, 0, 1];
        assert_eq!(forward_corrupt(&s, &z0, 0, &mut rng).unwrap(), z0);
        let flat = TransitionSchedule::from_steps(4, &[0.01, 0.0], &[0.5, 0.0]).unwrap();
        assert!(forward_corrupt(&flat, &z0, 3, &mut rng).is_err());
        // γ̄_T = 1 − 1e-10; a masked draw is certain for practical purposes.
        assert!(forward_corrupt(&s, &z0, 10, &mut rng).unwrap().iter().all(|&z| z == 4));
    }

    #[test]
    fn posterior_at_first_step_is_a_point_mass() {
        let s = sched(10, 3);
        for z0 in 0..3 {
            for z_t in 0..=3 {
                let p = posterior(&s, z_t, z0, 1, 0).unwrap();
                assert_eq!(p[z0], 1.0);
                assert_eq!(p.iter().sum::<f64>(), 1.0);
            }
        }
    }

    #[test]
    fn posterior_concentrates_on_unchanged_token() {
        let s = TransitionSchedule::from_steps(3, &[0.01, 0.01], &[0.01, 0.01]).unwrap();
        let p = posterior(&s, 2, 2, 2, 1).unwrap();
        assert!(p[2] > 0.95, "{p:?}");
    }

    #[test]
    fn unreachable_pairs_are_reported() {
        // β = γ = 0 at step 1: nothing moves, so z_1 ≠ z_0 is impossible.
        let s = TransitionSchedule::from_steps(3, &[0.0, 0.1], &[0.0, 0.1]).unwrap();
        assert!(matches!(
            posterior(&s, 1, 0, 1, 0),
            Err(Error::InconsistentPair { z_t: 1, z0: 0, t: 1 })
        ));
        assert!(reverse_distribution(&s, 1, &[1.0, 0.0, 0.0], 1, 0).is_err());
        let r = reverse_distribution(&s, 1, &[0.5, 0.5, 0.0], 1, 0).unwrap();
        assert_eq!(r[1], 1.0);
    }

    #[test]
    fn categorical_sampling_respects_support() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let i = sample_categorical(&[0.0, 0.3, 0.0, 0.7, 0.0], &mut rng);
            assert!(i == 1 || i == 3);
        }
    }
}
