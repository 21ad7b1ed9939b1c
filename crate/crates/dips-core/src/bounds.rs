//! Boundedness audit for the normalized form: the scale `delta` that the
//! moderate-deviation bound consumes.
//!
//! The boundedness conditions cap `max|a|`, `max|b|`, the permutation-row
//! sums `sum_j |b(i,j,pi(i),pi(j))|` and cross sums of `|b|`. The row
//! condition maximizes over permutations, which is not directly scannable;
//! we always report the relaxed upper bound `sum_j max_l |b(i,j,k,l)|` and
//! optionally solve the row maximization exactly as an assignment problem
//! for small `n`.

use serde::Serialize;

use crate::kernel::{to_f64, DipsForm};
use crate::{Error, Real, Result};

/// Default size cap for the exact assignment-based row bound.
pub const DEFAULT_ASSIGNMENT_CAP: usize = 12;

/// Components of the boundedness scale. All values are nonnegative.
#[derive(Debug, Clone, Serialize)]
pub struct DeltaReport {
    /// `max_{i,k} |a(i,k)|`.
    pub delta_a: f64,
    /// `max |b(i,j,k,l)|`.
    pub delta_b: f64,
    /// `max_{i,k} sum_{j != i} max_l |b(i,j,k,l)|`; always an upper bound
    /// for the permutation-maximized row sum.
    pub delta_row_relaxed: f64,
    /// `max_{i,k} max_pi sum_{j != i} |b(i,j,k,pi(j))|` over injective
    /// assignments; computed only when requested and `n` is under the cap.
    pub delta_row_exact: Option<f64>,
    /// Max over the four (position, value) fixing combinations of the
    /// `|b|` sum over the free position and free value index.
    pub delta_cross: f64,
    /// Overall scale: max of `delta_a`, `delta_b`, the row bound (the exact
    /// one when available, else the relaxed one) and `delta_cross`.
    pub delta: f64,
}

/// Compute the [`DeltaReport`] with the default assignment cap.
pub fn boundedness_delta<T: Real>(
    dips: &impl DipsForm<T>,
    exact_assignment: bool,
) -> Result<DeltaReport> {
    boundedness_delta_with_cap(dips, exact_assignment, DEFAULT_ASSIGNMENT_CAP)
}

/// Compute the [`DeltaReport`], solving the exact row bound when
/// `exact_assignment` is set and `n <= cap`.
pub fn boundedness_delta_with_cap<T: Real>(
    dips: &impl DipsForm<T>,
    exact_assignment: bool,
    cap: usize,
) -> Result<DeltaReport> {
    let n = dips.n();
    if exact_assignment && n > cap {
        return Err(Error::AssignmentCapExceeded { n, cap });
    }

    let mut delta_a = 0f64;
    for i in 0..n {
        for k in 0..n {
            delta_a = delta_a.max(to_f64(dips.a(i, k)).abs());
        }
    }

    let mut delta_b = 0f64;
    let mut delta_row_relaxed = 0f64;
    for i in 0..n {
        for k in 0..n {
            let mut row = 0f64;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let mut best = 0f64;
                for l in 0..n {
                    let v = to_f64(dips.b(i, j, k, l)).abs();
                    best = best.max(v);
                    delta_b = delta_b.max(v);
                }
                row += best;
            }
            delta_row_relaxed = delta_row_relaxed.max(row);
        }
    }
    // diagonal entries b(i,i,.,.) count toward max|b| even though the row
    // sum skips j = i
    for i in 0..n {
        for k in 0..n {
            for l in 0..n {
                delta_b = delta_b.max(to_f64(dips.b(i, i, k, l)).abs());
            }
        }
    }

    let delta_cross = cross_sums(dips);

    let delta_row_exact = if exact_assignment {
        Some(exact_row_bound(dips))
    } else {
        None
    };

    let row = delta_row_exact.unwrap_or(delta_row_relaxed);
    let delta = delta_a.max(delta_b).max(row).max(delta_cross);
    Ok(DeltaReport {
        delta_a,
        delta_b,
        delta_row_relaxed,
        delta_row_exact,
        delta_cross,
        delta,
    })
}

/// Max over the four fix-one-position/fix-one-value combinations and all
/// fixed index values of the `|b|` sum over the free position and value.
fn cross_sums<T: Real>(dips: &impl DipsForm<T>) -> f64 {
    let n = dips.n();
    let mut worst = 0f64;
    // fixed (position s, value t) combination, summing over the other two
    for s in 0..2 {
        for t in 0..2 {
            for fixed_pos in 0..n {
                for fixed_val in 0..n {
                    let mut sum = 0f64;
                    for free_pos in 0..n {
                        for free_val in 0..n {
                            let (i, j) = if s == 0 {
                                (fixed_pos, free_pos)
                            } else {
                                (free_pos, fixed_pos)
                            };
                            let (k, l) = if t == 0 {
                                (fixed_val, free_val)
                            } else {
                                (free_val, fixed_val)
                            };
                            sum += to_f64(dips.b(i, j, k, l)).abs();
                        }
                    }
                    worst = worst.max(sum);
                }
            }
        }
    }
    worst
}

/// Exact permutation-row bound: for each `(i, k)` maximize
/// `sum_{j != i} |b(i,j,k,l_j)|` over injective assignments `j -> l_j`
/// with `l_j != k`, then take the overall max.
fn exact_row_bound<T: Real>(dips: &impl DipsForm<T>) -> f64 {
    let n = dips.n();
    let m = n - 1;
    let mut worst = 0f64;
    let mut weight = vec![0f64; m * m];
    for i in 0..n {
        let rows: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        for k in 0..n {
            let cols: Vec<usize> = (0..n).filter(|&l| l != k).collect();
            for (r, &j) in rows.iter().enumerate() {
                for (c, &l) in cols.iter().enumerate() {
                    weight[r * m + c] = to_f64(dips.b(i, j, k, l)).abs();
                }
            }
            worst = worst.max(max_assignment(&weight, m));
        }
    }
    worst
}

/// Maximum-weight perfect assignment on an `m x m` matrix (Kuhn-Munkres
/// with potentials, O(m^3)); weights enter negated into the min-cost form.
pub fn max_assignment(weight: &[f64], m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let cost = |r: usize, c: usize| -weight[r * m + c];
    let mut u = vec![0f64; m + 1];
    let mut v = vec![0f64; m + 1];
    let mut matched = vec![0usize; m + 1]; // matched[col] = row (1-based; 0 = free)
    let mut way = vec![0usize; m + 1];
    for i in 1..=m {
        matched[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut total = 0f64;
    for j in 1..=m {
        total += weight[(matched[j] - 1) * m + (j - 1)];
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignment_matches_brute_force() {
        use crate::perm::AllPermutations;
        let cases: Vec<(usize, Vec<f64>)> = vec![
            (2, vec![1.0, 2.0, 3.0, 0.5]),
            (3, vec![0.1, 0.9, 0.4, 0.7, 0.2, 0.8, 0.3, 0.6, 0.5]),
            (
                4,
                (0..16)
                    .map(|v| ((v * 37 + 11) % 17) as f64 / 17.0)
                    .collect(),
            ),
        ];
        for (m, w) in cases {
            let exact = max_assignment(&w, m);
            let mut brute = f64::NEG_INFINITY;
            for p in AllPermutations::new(m) {
                let s: f64 = (0..m).map(|r| w[r * m + p.image(r)]).sum();
                brute = brute.max(s);
            }
            assert!((exact - brute).abs() < 1e-12, "m={}: {} vs {}", m, exact, brute);
        }
    }
}

#[cfg(test)]
mod delta_tests {
    use super::*;
    use crate::kernel::normalize;
    use crate::kernel::Kernel4;
    use crate::stats::{BuiltinDips, Normalization, StatKind, StatisticSpec};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_b_leaves_only_delta_a() {
        // a rank-one mean-zero product in (i,k) only: xi(i,j,k,l) = u_i w_k
        // has xi* = 0, so b = 0 and delta comes from a alone
        let u = [1.0, -1.0, 0.5, -0.5];
        let kernel = Kernel4::<f64>::from_fn(4, |i, _, k, _| u[i] * u[k]).unwrap();
        let dips = normalize(&kernel).unwrap();
        let report = boundedness_delta(&dips, true).unwrap();
        assert!(report.delta_b <= 1e-12);
        assert!(report.delta_row_relaxed <= 1e-11);
        assert!(report.delta_row_exact.unwrap() <= 1e-11);
        assert!(report.delta_cross <= 1e-10);
        assert!(report.delta_a > 0.1);
        assert!((report.delta - report.delta_a).abs() <= 1e-12);
    }

    #[test]
    fn exact_row_bound_dominated_by_relaxed_on_sparse_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let n = 6;
        let kernel = Kernel4::<f64>::from_fn(n, |_, _, _, _| {
            if rng.random_range(0.0..1.0) < 0.15 {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            }
        })
        .unwrap();
        let dips = normalize(&kernel).unwrap();
        let report = boundedness_delta(&dips, true).unwrap();
        let exact = report.delta_row_exact.unwrap();
        assert!(exact <= report.delta_row_relaxed + 1e-12);
        assert!(exact >= report.delta_b - 1e-12);
        // brute-force the row maximization for one fixed (i, k)
        use crate::kernel::DipsForm;
        use crate::perm::AllPermutations;
        let (i, k) = (2usize, 3usize);
        let rows: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let cols: Vec<usize> = (0..n).filter(|&l| l != k).collect();
        let mut brute: f64 = 0.0;
        for assign in AllPermutations::new(n - 1) {
            let s: f64 = rows
                .iter()
                .enumerate()
                .map(|(r, &j)| dips.b(i, j, k, cols[assign.image(r)]).abs())
                .sum();
            brute = brute.max(s);
        }
        assert!(brute <= exact + 1e-12);
    }

    #[test]
    fn cap_refusal() {
        let spec =
            StatisticSpec::new(StatKind::Descents, 20, Normalization::VarianceExact).unwrap();
        let dips = BuiltinDips::<f64>::statistic(&spec).unwrap();
        assert!(matches!(
            boundedness_delta(&dips, true),
            Err(crate::Error::AssignmentCapExceeded { .. })
        ));
        assert!(boundedness_delta_with_cap(&dips, true, 24).is_ok());
    }

    #[test]
    fn statistic_scale_delta_shrinks_like_inverse_sqrt_n() {
        // the meaningful boundedness scale max(|a|, |b|, exact row bound)
        // under the statistic normalization fits slope -1/2 +- 0.1 on a
        // log-log grid (the relaxed row and cross sums intentionally
        // excluded: those relaxations grow with n for sparse kernels)
        let sizes = [16usize, 25, 40];
        let mut deltas = Vec::new();
        for &n in &sizes {
            let spec =
                StatisticSpec::new(StatKind::Descents, n, Normalization::VarianceExact).unwrap();
            let dips = BuiltinDips::<f64>::statistic(&spec).unwrap();
            let report = boundedness_delta_with_cap(&dips, true, 40).unwrap();
            let true_delta = report
                .delta_a
                .max(report.delta_b)
                .max(report.delta_row_exact.unwrap());
            assert!(true_delta <= 10.0 / (n as f64).sqrt(), "n = {}: {}", n, true_delta);
            deltas.push(true_delta);
        }
        // least-squares slope of log delta against log n
        let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
        let xbar = xs.iter().sum::<f64>() / 3.0;
        let ybar = ys.iter().sum::<f64>() / 3.0;
        let slope = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - xbar) * (y - ybar))
            .sum::<f64>()
            / xs.iter().map(|x| (x - xbar) * (x - xbar)).sum::<f64>();
        assert!(
            (slope + 0.5).abs() <= 0.1,
            "log-log slope {} not within -0.5 +- 0.1 (deltas {:?})",
            slope,
            deltas
        );
    }
}
