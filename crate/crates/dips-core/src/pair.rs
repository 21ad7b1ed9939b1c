//! The exchangeable pair `(pi, pi')`: transpose the images at two uniformly
//! chosen distinct positions `I != J`.
//!
//! With `D` the partial difference `a(I,pi(I)) - a(I,pi(J)) +
//! sum_{s not in {I,J}} [b(I,s,pi(I),pi(s)) - b(I,s,pi(J),pi(s))]`,
//! the conditional-mean identity
//! `E{D | pi} = (1/n)(W + R)` holds exactly for any statistic in normalized
//! form, with `R = (sum_i a(i,pi(i)) - sum_i b(i,i,pi(i),pi(i))) / (n-1)`.
//! The identity is deterministic: averaging `D` over all `n(n-1)` ordered
//! pairs reproduces the right-hand side to rounding error, which turns a
//! distributional condition into a unit test.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::kernel::{evaluate, to_f64, DipsForm};
use crate::perm::Permutation;
use crate::{Error, Real, Result};

/// One draw of the exchangeable pair.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub perm: Permutation,
    /// Swap positions `I != J` (0-based).
    pub i_idx: usize,
    pub j_idx: usize,
    pub w: f64,
    pub w_prime: f64,
    pub d: f64,
    /// `Delta = W - W'`.
    pub delta: f64,
    pub r: f64,
    /// `lambda = 1/n`.
    pub lambda: f64,
}

/// Return the permutation with the images at `i_idx` and `j_idx` swapped.
pub fn swap_pair(perm: &Permutation, i_idx: usize, j_idx: usize) -> Result<Permutation> {
    if i_idx == j_idx {
        return Err(Error::InvalidSpec("swap positions must differ".into()));
    }
    if i_idx >= perm.len() || j_idx >= perm.len() {
        return Err(Error::IndexOutOfRange(format!(
            "swap positions ({}, {}) for n = {}",
            i_idx,
            j_idx,
            perm.len()
        )));
    }
    let mut out = perm.clone();
    out.swap_positions(i_idx, j_idx);
    Ok(out)
}

/// The antisymmetric statistic `D` of the ordered pair `(pi, pi')`.
pub fn d_statistic<T: Real>(
    dips: &impl DipsForm<T>,
    perm: &Permutation,
    i_idx: usize,
    j_idx: usize,
) -> Result<T> {
    let n = dips.n();
    if perm.len() != n {
        return Err(Error::DimensionMismatch("permutation vs dips".into()));
    }
    if i_idx == j_idx || i_idx >= n || j_idx >= n {
        return Err(Error::IndexOutOfRange("swap positions".into()));
    }
    let ki = perm.image(i_idx);
    let kj = perm.image(j_idx);
    let mut d = dips.a(i_idx, ki) - dips.a(i_idx, kj);
    for s in 0..n {
        if s == i_idx || s == j_idx {
            continue;
        }
        let ks = perm.image(s);
        d += dips.b(i_idx, s, ki, ks) - dips.b(i_idx, s, kj, ks);
    }
    Ok(d)
}

/// `W' - W` for the swap at `(i_idx, j_idx)`, in O(n): only terms touching
/// the two positions change. `Delta = W - W'` is the negation.
pub fn w_change_of_swap<T: Real>(
    dips: &impl DipsForm<T>,
    perm: &Permutation,
    i_idx: usize,
    j_idx: usize,
) -> Result<T> {
    let n = dips.n();
    if perm.len() != n {
        return Err(Error::DimensionMismatch("permutation vs dips".into()));
    }
    if i_idx == j_idx || i_idx >= n || j_idx >= n {
        return Err(Error::IndexOutOfRange("swap positions".into()));
    }
    let ki = perm.image(i_idx);
    let kj = perm.image(j_idx);
    let mut ch = dips.a(i_idx, kj) + dips.a(j_idx, ki) - dips.a(i_idx, ki) - dips.a(j_idx, kj);
    for s in 0..n {
        if s == i_idx || s == j_idx {
            continue;
        }
        let ks = perm.image(s);
        ch += dips.b(i_idx, s, kj, ks) - dips.b(i_idx, s, ki, ks);
        ch += dips.b(s, i_idx, ks, kj) - dips.b(s, i_idx, ks, ki);
        ch += dips.b(j_idx, s, ki, ks) - dips.b(j_idx, s, kj, ks);
        ch += dips.b(s, j_idx, ks, ki) - dips.b(s, j_idx, ks, kj);
    }
    ch += dips.b(i_idx, j_idx, kj, ki) - dips.b(i_idx, j_idx, ki, kj);
    ch += dips.b(j_idx, i_idx, ki, kj) - dips.b(j_idx, i_idx, kj, ki);
    Ok(ch)
}

/// The remainder `R = (sum_i a(i,pi(i)) - sum_i b(i,i,pi(i),pi(i))) / (n-1)`.
pub fn remainder_r<T: Real>(dips: &impl DipsForm<T>, perm: &Permutation) -> Result<T> {
    let n = dips.n();
    if perm.len() != n {
        return Err(Error::DimensionMismatch("permutation vs dips".into()));
    }
    let mut s = T::zero();
    for i in 0..n {
        let k = perm.image(i);
        s += dips.a(i, k) - dips.b(i, i, k, k);
    }
    Ok(s / T::from_count(n - 1))
}

/// Exact conditional-mean check: `lhs` is the average of `D` over all
/// `n(n-1)` ordered swap pairs, `rhs = (W + R)/n`. The two agree to
/// rounding error when the zero-marginal invariants hold.
pub fn conditional_mean_d<T: Real>(
    dips: &impl DipsForm<T>,
    perm: &Permutation,
) -> Result<(T, T)> {
    let n = dips.n();
    let mut sum = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += d_statistic(dips, perm, i, j)?;
            }
        }
    }
    let lhs = sum / T::from_count(n * (n - 1));
    let w = evaluate(dips, perm)?;
    let r = remainder_r(dips, perm)?;
    let rhs = (w + r) / T::from_count(n);
    Ok((lhs, rhs))
}

/// Draw one exchangeable-pair sample: uniform `pi`, uniform ordered `(I,J)`.
pub fn sample_pair<T: Real, R: Rng + ?Sized>(
    dips: &impl DipsForm<T>,
    rng: &mut R,
) -> Result<PairSample> {
    let n = dips.n();
    let perm = Permutation::sample(rng, n);
    let i_idx = rng.random_range(0..n);
    let mut j_idx = rng.random_range(0..n - 1);
    if j_idx >= i_idx {
        j_idx += 1;
    }
    let w = to_f64(evaluate(dips, &perm)?);
    let ch = to_f64(w_change_of_swap(dips, &perm, i_idx, j_idx)?);
    let w_prime = w + ch;
    let d = to_f64(d_statistic(dips, &perm, i_idx, j_idx)?);
    let r = to_f64(remainder_r(dips, &perm)?);
    Ok(PairSample {
        perm,
        i_idx,
        j_idx,
        w,
        w_prime,
        d,
        delta: -ch,
        r,
        lambda: 1.0 / n as f64,
    })
}

/// A bound violation witness: the sampled `(pi, I, J)` and the offending
/// magnitudes.
#[derive(Debug, Clone, Serialize)]
pub struct AuditViolation {
    pub sample_index: u64,
    pub perm_one_based: Vec<usize>,
    pub i_idx: usize,
    pub j_idx: usize,
    pub abs_d: f64,
    pub abs_delta: f64,
}

/// Result of a randomized `|D| <= 4 delta`, `|Delta| <= 16 delta` audit.
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub delta: f64,
    pub num_samples: u64,
    pub seed: u64,
    pub max_abs_d: f64,
    pub max_abs_delta: f64,
    pub violations: Vec<AuditViolation>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Sample `num_samples` triples `(pi, I, J)` and audit the boundedness
/// consequences `|D| <= 4 delta` and `|Delta| <= 16 delta`, where `delta`
/// is taken from a [`crate::bounds::DeltaReport`] (the relaxed bound is a
/// valid, conservative choice). `Delta` is computed incrementally in O(n)
/// per sample, so multi-million-sample audits stay cheap.
pub fn pair_bounds_audit<T: Real>(
    dips: &impl DipsForm<T>,
    num_samples: u64,
    seed: u64,
    delta: f64,
) -> Result<AuditReport> {
    let n = dips.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_abs_d = 0f64;
    let mut max_abs_delta = 0f64;
    let mut violations = Vec::new();
    let mut perm_scratch: Vec<usize> = (0..n).collect();
    for s in 0..num_samples {
        for (pos, v) in perm_scratch.iter_mut().enumerate() {
            *v = pos;
        }
        crate::perm::fisher_yates(&mut rng, &mut perm_scratch);
        let perm = Permutation::from_vec(perm_scratch.clone())?;
        let i_idx = rng.random_range(0..n);
        let mut j_idx = rng.random_range(0..n - 1);
        if j_idx >= i_idx {
            j_idx += 1;
        }
        let abs_d = to_f64(d_statistic(dips, &perm, i_idx, j_idx)?).abs();
        let abs_delta = to_f64(w_change_of_swap(dips, &perm, i_idx, j_idx)?).abs();
        max_abs_d = max_abs_d.max(abs_d);
        max_abs_delta = max_abs_delta.max(abs_delta);
        if abs_d > 4.0 * delta || abs_delta > 16.0 * delta {
            violations.push(AuditViolation {
                sample_index: s,
                perm_one_based: perm.to_one_based(),
                i_idx,
                j_idx,
                abs_d,
                abs_delta,
            });
        }
    }
    Ok(AuditReport {
        delta,
        num_samples,
        seed,
        max_abs_d,
        max_abs_delta,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{normalize, DipsForm, Kernel4};
    use crate::perm::AllPermutations;
    use crate::stats::{BuiltinDips, Normalization, StatKind, StatisticSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn descents_dips(n: usize) -> BuiltinDips<f64> {
        let spec = StatisticSpec::new(StatKind::Descents, n, Normalization::VarianceExact).unwrap();
        BuiltinDips::statistic(&spec).unwrap()
    }

    fn random_dips(n: usize, seed: u64) -> crate::NormalizedDips {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernel =
            Kernel4::from_fn(n, |_, _, _, _| rand::Rng::random_range(&mut rng, -1.0..1.0))
                .unwrap();
        normalize(&kernel).unwrap()
    }

    #[test]
    fn swap_examples() {
        let id = Permutation::identity(3);
        let swapped = swap_pair(&id, 0, 1).unwrap();
        assert_eq!(swapped.to_one_based(), vec![2, 1, 3]);
        // involution
        let back = swap_pair(&swapped, 0, 1).unwrap();
        assert_eq!(back, id);
        // multiset of values preserved
        let mut v = swapped.to_one_based();
        v.sort();
        assert_eq!(v, vec![1, 2, 3]);
        assert!(swap_pair(&id, 1, 1).is_err());
    }

    #[test]
    fn d_zero_for_zero_statistic() {
        let kernel = Kernel4::<f64>::from_fn(4, |_, _, _, _| 0.0).unwrap();
        let dips = normalize(&kernel).unwrap();
        let perm = Permutation::identity(4);
        assert_eq!(d_statistic(&dips, &perm, 0, 2).unwrap(), 0.0);
        assert_eq!(w_change_of_swap(&dips, &perm, 0, 2).unwrap(), 0.0);
    }

    #[test]
    fn d_matches_term_by_term_formula() {
        // independent re-summation of the displayed D on the descent dips
        let dips = descents_dips(3);
        let perm = Permutation::identity(3);
        let (i, j) = (0, 1);
        let mut want = dips.a(i, perm.image(i)) - dips.a(i, perm.image(j));
        for s in 0..3 {
            if s != i && s != j {
                want += dips.b(i, s, perm.image(i), perm.image(s));
                want -= dips.b(i, s, perm.image(j), perm.image(s));
            }
        }
        let got = d_statistic(&dips, &perm, i, j).unwrap();
        assert!((got - want).abs() <= 1e-15);
    }

    #[test]
    fn antisymmetry_exhaustive() {
        let dips = random_dips(4, 5);
        for perm in AllPermutations::new(4) {
            for i in 0..4 {
                for j in 0..4 {
                    if i == j {
                        continue;
                    }
                    let d = d_statistic(&dips, &perm, i, j).unwrap();
                    let swapped = swap_pair(&perm, i, j).unwrap();
                    let d_back = d_statistic(&dips, &swapped, i, j).unwrap();
                    assert!((d + d_back).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn w_change_matches_full_reevaluation() {
        let dips = random_dips(5, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..40 {
            let perm = Permutation::sample(&mut rng, 5);
            let i = rand::Rng::random_range(&mut rng, 0..5);
            let mut j = rand::Rng::random_range(&mut rng, 0..4);
            if j >= i {
                j += 1;
            }
            let w = evaluate(&dips, &perm).unwrap();
            let swapped = swap_pair(&perm, i, j).unwrap();
            let w_prime = evaluate(&dips, &swapped).unwrap();
            let ch = w_change_of_swap(&dips, &perm, i, j).unwrap();
            assert!((w_prime - (w + ch)).abs() <= 1e-11);
        }
    }

    #[test]
    fn conditional_mean_identity_descents() {
        let dips = descents_dips(5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let perm = Permutation::sample(&mut rng, 5);
            let (lhs, rhs) = conditional_mean_d(&dips, &perm).unwrap();
            let w = evaluate(&dips, &perm).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * 1f64.max(w.abs()));
        }
    }

    #[test]
    fn conditional_mean_identity_chatterjee_r_reduces_to_diagonal() {
        let spec =
            StatisticSpec::new(StatKind::ChatterjeeOscillation, 6, Normalization::VarianceExact)
                .unwrap();
        let dips = BuiltinDips::<f64>::statistic(&spec).unwrap();
        let perm = Permutation::identity(6);
        let (lhs, rhs) = conditional_mean_d(&dips, &perm).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10);
        // a == 0, so R = -(1/(n-1)) sum_i b(i,i,pi(i),pi(i))
        let r = remainder_r(&dips, &perm).unwrap();
        let mut diag = 0.0;
        for i in 0..6 {
            diag += dips.b(i, i, i, i);
        }
        assert!((r + diag / 5.0).abs() <= 1e-14);
    }

    #[test]
    fn conditional_mean_identity_random_kernels() {
        for seed in [1u64, 2, 3] {
            let dips = random_dips(4, seed);
            for perm in AllPermutations::new(4) {
                let (lhs, rhs) = conditional_mean_d(&dips, &perm).unwrap();
                let w = evaluate(&dips, &perm).unwrap();
                assert!(
                    (lhs - rhs).abs() <= 1e-10 * 1f64.max(w.abs()),
                    "seed {}: {} vs {}",
                    seed,
                    lhs,
                    rhs
                );
            }
        }
    }

    #[test]
    fn exchangeability_exact_enumeration() {
        // the joint law of (W, W') over uniform (pi, I, J) equals that of
        // (W', W): compare sorted pair multisets exactly
        // evaluating both coordinates through the same full evaluation
        // path makes the two multisets agree bitwise
        let dips = random_dips(4, 20);
        let mut fwd: Vec<(u64, u64)> = Vec::new();
        let mut rev: Vec<(u64, u64)> = Vec::new();
        for perm in AllPermutations::new(4) {
            let w = evaluate(&dips, &perm).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    if i != j {
                        let swapped = swap_pair(&perm, i, j).unwrap();
                        let w2 = evaluate(&dips, &swapped).unwrap();
                        fwd.push((w.to_bits(), w2.to_bits()));
                        rev.push((w2.to_bits(), w.to_bits()));
                    }
                }
            }
        }
        fwd.sort_unstable();
        rev.sort_unstable();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn second_moment_identity() {
        // (1/(2 lambda)) E[D Delta] = E[W^2] + E[R W] over exact enumeration
        for (label, dips) in [
            ("random", random_dips(4, 33)),
            ("descents", descents_dips(4).to_dense().unwrap()),
        ] {
            let n = 4usize;
            let mut sum_d_delta = 0.0;
            let mut sum_w2 = 0.0;
            let mut sum_rw = 0.0;
            let mut pairs = 0u64;
            let mut perms = 0u64;
            for perm in AllPermutations::new(n) {
                let w = evaluate(&dips, &perm).unwrap();
                let r = remainder_r(&dips, &perm).unwrap();
                sum_w2 += w * w;
                sum_rw += r * w;
                perms += 1;
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            let d = d_statistic(&dips, &perm, i, j).unwrap();
                            let delta = -w_change_of_swap(&dips, &perm, i, j).unwrap();
                            sum_d_delta += d * delta;
                            pairs += 1;
                        }
                    }
                }
            }
            let lhs = (n as f64 / 2.0) * sum_d_delta / pairs as f64;
            let rhs = (sum_w2 + sum_rw) / perms as f64;
            assert!((lhs - rhs).abs() <= 1e-10, "{}: {} vs {}", label, lhs, rhs);
        }
    }

    #[test]
    fn audit_zero_statistic() {
        let kernel = Kernel4::<f64>::from_fn(4, |_, _, _, _| 0.0).unwrap();
        let dips = normalize(&kernel).unwrap();
        let report = pair_bounds_audit(&dips, 500, 7, 1e-9).unwrap();
        assert_eq!(report.max_abs_d, 0.0);
        assert_eq!(report.max_abs_delta, 0.0);
        assert!(report.passed());
    }

    #[test]
    fn audit_descents_no_violations() {
        let dips = descents_dips(8);
        let delta = crate::bounds::boundedness_delta(&dips, false).unwrap().delta;
        let report = pair_bounds_audit(&dips, 3000, 42, delta).unwrap();
        assert!(report.passed(), "violations: {:?}", report.violations.len());
        assert!(report.max_abs_d <= 4.0 * delta);
        assert!(report.max_abs_delta <= 16.0 * delta);
    }

    #[test]
    fn sample_pair_invariants() {
        let dips = descents_dips(6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let s = sample_pair(&dips, &mut rng).unwrap();
            assert_ne!(s.i_idx, s.j_idx);
            // w_prime recomputable from the transposed permutation
            let swapped = swap_pair(&s.perm, s.i_idx, s.j_idx).unwrap();
            let w2 = to_f64(evaluate(&dips, &swapped).unwrap());
            assert!((s.w_prime - w2).abs() <= 1e-11);
            assert!((s.delta - (s.w - s.w_prime)).abs() <= 1e-12);
            assert_eq!(s.lambda, 1.0 / 6.0);
        }
    }
}
