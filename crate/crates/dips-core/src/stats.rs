//! Closed-form evaluators and kernel builders for the four application
//! statistics: descents, inversions, the Mann-Whitney-Wilcoxon count and
//! the Chatterjee rank correlation (oscillation of a permutation).
//!
//! Each statistic exists in three coupled representations:
//!
//! 1. a raw integer evaluator (`descents`, `inversions`, `mww_count`,
//!    `oscillation`) used in the Monte Carlo hot loop;
//! 2. a raw 4-index kernel (`build_kernel`) feeding the generic
//!    decomposition pipeline;
//! 3. closed-form `(a, b, sigma)` arrays (`closed_form_ab`, [`BuiltinDips`])
//!    written down directly from the centered kernel, cross-checkable
//!    against route 2 entrywise.
//!
//! On normalization scales: the proposition-style normalization divides by
//! `sigma^2 = sum eta*^2/(n-1)` (so `sum a^2 = n-1`); the statistic-level
//! scales divide the centered raw statistic by the literal constant or by
//! its exact standard deviation. For descents the candidate scales disagree
//! by factors of 2 and n, so all of them are exposed via
//! [`sigma2_candidates`] and exact enumeration arbitrates which one yields
//! unit variance.

use serde::{Deserialize, Serialize};

use crate::kernel::{DipsForm, Kernel4, NormalizedDips, DENSE_CAP};
use crate::perm::Permutation;
use crate::{Error, Real, Result};

/// Which statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    Descents,
    Inversions,
    Mww,
    ChatterjeeOscillation,
}

impl StatKind {
    pub fn label(&self) -> &'static str {
        match self {
            StatKind::Descents => "descents",
            StatKind::Inversions => "inversions",
            StatKind::Mww => "mww",
            StatKind::ChatterjeeOscillation => "chatterjee",
        }
    }
}

/// Normalization mode for the statistic value.
///
/// `PaperLiteral` uses the literal constants (descents divide by
/// `sqrt((n+1)/6)`); `VarianceExact` divides the centered statistic by its
/// exact standard deviation (descents: `sqrt((n+1)/12)`). The two coincide
/// for inversions, MWW and Chatterjee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    PaperLiteral,
    #[default]
    VarianceExact,
}

/// A fully specified statistic: kind, size and normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatisticSpec {
    pub kind: StatKind,
    pub n: usize,
    /// Group sizes for MWW; must satisfy `n1 + n2 = n`. Ignored otherwise.
    #[serde(default)]
    pub n1: usize,
    #[serde(default)]
    pub n2: usize,
    #[serde(default)]
    pub normalization: Normalization,
}

impl StatisticSpec {
    pub fn new(kind: StatKind, n: usize, normalization: Normalization) -> Result<Self> {
        let (n1, n2) = match kind {
            StatKind::Mww => {
                let n1 = n / 2;
                (n1, n - n1)
            }
            _ => (0, 0),
        };
        let spec = StatisticSpec {
            kind,
            n,
            n1,
            n2,
            normalization,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn mww(n1: usize, n2: usize, normalization: Normalization) -> Result<Self> {
        let spec = StatisticSpec {
            kind: StatKind::Mww,
            n: n1 + n2,
            n1,
            n2,
            normalization,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidSpec(format!(
                "statistic needs n >= 2, got {}",
                self.n
            )));
        }
        if self.kind == StatKind::Mww {
            if self.n1 < 1 || self.n2 < 1 {
                return Err(Error::InvalidSpec("mww needs n1 >= 1 and n2 >= 1".into()));
            }
            if self.n1 + self.n2 != self.n {
                return Err(Error::InvalidSpec(format!(
                    "mww needs n1 + n2 = n, got {} + {} != {}",
                    self.n1, self.n2, self.n
                )));
            }
        }
        Ok(())
    }
}

/// Number of positions `i` with `pi(i) > pi(i+1)`.
pub fn descents(perm: &Permutation) -> usize {
    let m = perm.as_slice();
    m.windows(2).filter(|w| w[0] > w[1]).count()
}

/// Number of pairs `i < j` with `pi(i) > pi(j)`, counted in O(n log n)
/// with a Fenwick tree over values.
pub fn inversions(perm: &Permutation) -> u64 {
    let n = perm.len();
    let mut tree = vec![0u64; n + 1];
    let update = |tree: &mut Vec<u64>, mut pos: usize| {
        while pos <= n {
            tree[pos] += 1;
            pos += pos & pos.wrapping_neg();
        }
    };
    let query = |tree: &Vec<u64>, mut pos: usize| -> u64 {
        let mut s = 0;
        while pos > 0 {
            s += tree[pos];
            pos -= pos & pos.wrapping_neg();
        }
        s
    };
    let mut inv = 0u64;
    for (j, &v) in perm.as_slice().iter().enumerate() {
        // values larger than v already inserted
        inv += j as u64 - query(&tree, v + 1);
        update(&mut tree, v + 1);
    }
    inv
}

/// Oscillation `sum_{i=1}^{n-1} |pi(i) - pi(i+1)|` (non-cyclic).
pub fn oscillation(perm: &Permutation) -> u64 {
    perm.as_slice()
        .windows(2)
        .map(|w| (w[0] as i64 - w[1] as i64).unsigned_abs())
        .sum()
}

/// Number of pairs `(i, j)` with `i <= n1 < j` (1-based) and `pi(i) < pi(j)`.
pub fn mww_count(perm: &Permutation, n1: usize, n2: usize) -> Result<u64> {
    let n = perm.len();
    if n1 + n2 != n || n1 == 0 || n2 == 0 {
        return Err(Error::InvalidSpec(format!(
            "bad mww split {} + {} for n = {}",
            n1, n2, n
        )));
    }
    // mark which values are taken by the first group, then prefix-count
    let mut group1 = vec![0u32; n + 1];
    for i in 0..n1 {
        group1[perm.image(i) + 1] = 1;
    }
    for v in 1..=n {
        group1[v] += group1[v - 1];
    }
    let mut count = 0u64;
    for j in n1..n {
        count += group1[perm.image(j)] as u64; // group-1 values strictly below pi(j)
    }
    Ok(count)
}

/// Chatterjee's rank correlation coefficient for paired real samples.
///
/// Sorts the pairs by `x`, ranks the reordered `y` (`r_i` = number of
/// `y_(j) <= y_(i)`), and returns
/// `sqrt(5n/2) * (1 - 3 sum|r_{i+1}-r_i| / (n^2-1))`.
/// Ties in `x` or in `y` are a hard error: the null theory assumes none.
pub fn chatterjee_xi(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "x has {} samples, y has {}",
            n,
            y.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidSpec("chatterjee needs n >= 2".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpec("samples must be finite".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    for w in order.windows(2) {
        if x[w[0]] == x[w[1]] {
            return Err(Error::TiesDetected("x"));
        }
    }
    let y_sorted_by_x: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    // ranks among the reordered sample; with no ties these are 1..n
    let mut rank_order: Vec<usize> = (0..n).collect();
    rank_order.sort_by(|&a, &b| y_sorted_by_x[a].total_cmp(&y_sorted_by_x[b]));
    for w in rank_order.windows(2) {
        if y_sorted_by_x[w[0]] == y_sorted_by_x[w[1]] {
            return Err(Error::TiesDetected("y"));
        }
    }
    let mut rank = vec![0usize; n];
    for (pos, &i) in rank_order.iter().enumerate() {
        rank[i] = pos + 1;
    }
    let gamma: u64 = rank
        .windows(2)
        .map(|w| (w[0] as i64 - w[1] as i64).unsigned_abs())
        .sum();
    Ok(chatterjee_from_oscillation(n, gamma))
}

/// Eq.-(9)-style normalization of the oscillation value.
pub fn chatterjee_from_oscillation(n: usize, gamma: u64) -> f64 {
    let nf = n as f64;
    (5.0 * nf / 2.0).sqrt() * (1.0 - 3.0 * gamma as f64 / (nf * nf - 1.0))
}

/// Raw integer value of the statistic on a permutation.
pub fn raw_statistic(spec: &StatisticSpec, perm: &Permutation) -> Result<i64> {
    if perm.len() != spec.n {
        return Err(Error::DimensionMismatch(format!(
            "permutation length {} vs spec n = {}",
            perm.len(),
            spec.n
        )));
    }
    Ok(match spec.kind {
        StatKind::Descents => descents(perm) as i64,
        StatKind::Inversions => inversions(perm) as i64,
        StatKind::Mww => mww_count(perm, spec.n1, spec.n2)? as i64,
        StatKind::ChatterjeeOscillation => oscillation(perm) as i64,
    })
}

/// Map a raw integer statistic value to the normalized `W`.
pub fn normalize_raw(spec: &StatisticSpec, raw: i64) -> f64 {
    let n = spec.n as f64;
    match spec.kind {
        StatKind::Descents => {
            let scale = match spec.normalization {
                Normalization::PaperLiteral => ((n + 1.0) / 6.0).sqrt(),
                Normalization::VarianceExact => ((n + 1.0) / 12.0).sqrt(),
            };
            (raw as f64 - (n - 1.0) / 2.0) / scale
        }
        StatKind::Inversions => {
            let scale = (n * (n - 1.0) * (2.0 * n + 5.0) / 72.0).sqrt();
            (raw as f64 - n * (n - 1.0) / 4.0) / scale
        }
        StatKind::Mww => {
            let (n1, n2) = (spec.n1 as f64, spec.n2 as f64);
            let scale = (n1 * n2 * (n + 1.0) / 12.0).sqrt();
            (raw as f64 - n1 * n2 / 2.0) / scale
        }
        StatKind::ChatterjeeOscillation => chatterjee_from_oscillation(spec.n, raw as u64),
    }
}

/// Normalized statistic value on a permutation.
pub fn statistic_value(spec: &StatisticSpec, perm: &Permutation) -> Result<f64> {
    spec.validate()?;
    Ok(normalize_raw(spec, raw_statistic(spec, perm)?))
}

/// Raw 4-index kernel whose normalization reproduces the closed forms.
pub fn build_kernel<T: Real>(spec: &StatisticSpec) -> Result<Kernel4<T>> {
    spec.validate()?;
    let n = spec.n;
    if n > DENSE_CAP {
        return Err(Error::DenseCapExceeded { n, cap: DENSE_CAP });
    }
    match spec.kind {
        StatKind::Descents => Kernel4::from_fn(n, |i, j, k, l| {
            if i < j {
                // k - 1 = l minus k + 1 = l, translation-invariant in base
                if k == l + 1 {
                    T::one()
                } else if k + 1 == l {
                    -T::one()
                } else {
                    T::zero()
                }
            } else {
                T::zero()
            }
        }),
        StatKind::Inversions => Kernel4::from_fn(n, |i, j, k, l| {
            if i < j {
                match k.cmp(&l) {
                    std::cmp::Ordering::Greater => T::one(),
                    std::cmp::Ordering::Less => -T::one(),
                    std::cmp::Ordering::Equal => T::zero(),
                }
            } else {
                T::zero()
            }
        }),
        StatKind::Mww => {
            let n1 = spec.n1;
            Kernel4::from_fn(n, |i, j, k, l| {
                if i < n1 && j >= n1 && k < l {
                    T::one()
                } else {
                    T::zero()
                }
            })
        }
        StatKind::ChatterjeeOscillation => {
            // cyclic successor adjacency: with it every position has exactly
            // one successor, which is what makes eta* vanish identically;
            // the chain-end oscillation statistic itself stays non-cyclic
            let osc = OscillationMatrix::<T>::new(n);
            let denom = T::from_count(n) * T::from_count(n - 1);
            Kernel4::from_fn(n, |i, j, k, l| {
                let mut v = T::zero();
                if j == (i + 1) % n {
                    v += osc.a(k, l);
                }
                v + osc.a(i, i) / denom
            })
        }
    }
}

/// Doubly centered, scale-normalized oscillation matrix
/// `a(k,l) = (|k-l| - row - col + grand) / B(n)`,
/// `B^2(n) = (n+1)(2n^2+7)/45`.
struct OscillationMatrix<T> {
    row_mean: Vec<T>,
    grand_mean: T,
    b_n: T,
}

impl<T: Real> OscillationMatrix<T> {
    fn new(n: usize) -> Self {
        let nf = T::from_count(n);
        let mut row_mean = Vec::with_capacity(n);
        for k0 in 0..n {
            let k = T::from_count(k0 + 1);
            // sum_l |k - l| = k(k-1)/2 + (n-k)(n-k+1)/2, 1-based
            let two = T::from_count(2);
            let s = (k * (k - T::one()) + (nf - k) * (nf - k + T::one())) / two;
            row_mean.push(s / nf);
        }
        let grand_mean = (nf * nf - T::one()) / (T::from_count(3) * nf);
        let b2 = (nf + T::one()) * (T::from_count(2) * nf * nf + T::from_count(7))
            / T::from_count(45);
        OscillationMatrix {
            row_mean,
            grand_mean,
            b_n: b2.sqrt(),
        }
    }

    #[inline]
    fn a(&self, k: usize, l: usize) -> T {
        let alpha = T::from_count(k.abs_diff(l));
        (alpha - self.row_mean[k] - self.row_mean[l] + self.grand_mean) / self.b_n
    }
}

/// Which `(a, b, sigma)` scale a [`BuiltinDips`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DipsScale {
    /// `sigma^2 = sum eta*^2 / (n-1)`, forcing `sum a^2 = n - 1`. This is
    /// what the generic pipeline produces, so the cross-check against
    /// `normalize(build_kernel(..))` aligns with scale factor one.
    Proposition,
    /// The statistic-level scale of the spec's normalization mode (for
    /// descents under `VarianceExact`, `sigma^2 = (n+1)/3`, which makes
    /// `delta = O(1/sqrt n)`); `sum a^2 = n - 1` need not hold.
    Statistic,
}

/// O(1)-per-entry closed-form `(a, b)` accessors for the builtin
/// statistics, usable far beyond the dense cap.
#[derive(Debug, Clone)]
pub struct BuiltinDips<T> {
    spec: StatisticSpec,
    sigma: T,
    mean_shift: T,
    a_zero: bool,
    osc: Option<OscRows<T>>,
}

#[derive(Debug, Clone)]
struct OscRows<T> {
    row_mean: Vec<T>,
    grand_mean: T,
    b_n: T,
}

impl<T: Real> BuiltinDips<T> {
    /// Closed forms under the proposition scale.
    pub fn proposition(spec: &StatisticSpec) -> Result<Self> {
        Self::with_scale(spec, DipsScale::Proposition)
    }

    /// Closed forms under the statistic-level scale of `spec.normalization`.
    pub fn statistic(spec: &StatisticSpec) -> Result<Self> {
        Self::with_scale(spec, DipsScale::Statistic)
    }

    pub fn with_scale(spec: &StatisticSpec, scale: DipsScale) -> Result<Self> {
        spec.validate()?;
        let n = spec.n;
        let nf = T::from_count(n);
        let sigma2 = match scale {
            DipsScale::Proposition => sigma2_proposition::<T>(spec),
            DipsScale::Statistic => sigma2_statistic::<T>(spec),
        };
        let osc = match spec.kind {
            StatKind::ChatterjeeOscillation => {
                let m = OscillationMatrix::<T>::new(n);
                Some(OscRows {
                    row_mean: m.row_mean,
                    grand_mean: m.grand_mean,
                    b_n: m.b_n,
                })
            }
            _ => None,
        };
        let mean_shift = match spec.kind {
            StatKind::Descents | StatKind::Inversions => T::zero(),
            StatKind::Mww => {
                let (n1, n2) = (T::from_count(spec.n1), T::from_count(spec.n2));
                n1 * n2 * (nf * nf - T::one()) / (T::from_count(2) * nf * nf)
            }
            StatKind::ChatterjeeOscillation => {
                let o = osc.as_ref().unwrap();
                let mut s = T::zero();
                for k in 0..n {
                    s += (T::zero() - o.row_mean[k] - o.row_mean[k] + o.grand_mean) / o.b_n;
                }
                s / (nf * (nf - T::one()))
            }
        };
        Ok(BuiltinDips {
            spec: *spec,
            sigma: sigma2.sqrt(),
            mean_shift,
            a_zero: spec.kind == StatKind::ChatterjeeOscillation,
            osc,
        })
    }

    pub fn spec(&self) -> &StatisticSpec {
        &self.spec
    }

    /// Unscaled `eta*(i,k)` (0-based indices, 1-based formulas inside).
    pub fn eta_star_raw(&self, i0: usize, k0: usize) -> T {
        let n = self.spec.n;
        let nf = T::from_count(n);
        let i = T::from_count(i0 + 1);
        let k = T::from_count(k0 + 1);
        let two = T::from_count(2);
        match self.spec.kind {
            StatKind::Descents => {
                let coef = (nf - two * i + T::one()) / nf;
                if k0 + 1 == n {
                    coef
                } else if k0 == 0 {
                    -coef
                } else {
                    T::zero()
                }
            }
            StatKind::Inversions => {
                (nf - two * i + T::one()) * (two * k - nf - T::one()) / nf
            }
            StatKind::Mww => {
                let (n1, n2) = (T::from_count(self.spec.n1), T::from_count(self.spec.n2));
                if i0 < self.spec.n1 {
                    n2 * (nf - two * k + T::one()) / (two * nf)
                } else {
                    n1 * (two * k - nf - T::one()) / (two * nf)
                }
            }
            StatKind::ChatterjeeOscillation => T::zero(),
        }
    }

    /// Unscaled centered kernel `xi*(i,j,k,l)` (0-based indices).
    pub fn xstar_raw(&self, i0: usize, j0: usize, k0: usize, l0: usize) -> T {
        let n = self.spec.n;
        let nf = T::from_count(n);
        let two = T::from_count(2);
        let (i, j) = (T::from_count(i0 + 1), T::from_count(j0 + 1));
        let (k, l) = (T::from_count(k0 + 1), T::from_count(l0 + 1));
        match self.spec.kind {
            StatKind::Descents => {
                // coefficient on the adjacent-value indicator pair
                let half_span = (nf - T::one() + two * (j - i)) / (two * nf);
                let c1 = if i0 < j0 { T::one() - half_span } else { -half_span };
                let c2 = {
                    let ind = if i0 < j0 { T::one() } else { T::zero() };
                    -ind / nf + half_span / nf
                };
                let g = if k0 == l0 + 1 {
                    T::one()
                } else if k0 + 1 == l0 {
                    -T::one()
                } else {
                    T::zero()
                };
                let kk = if k0 + 1 == n {
                    T::one()
                } else if k0 == 0 {
                    -T::one()
                } else {
                    T::zero()
                };
                let ll = if l0 == 0 {
                    T::one()
                } else if l0 + 1 == n {
                    -T::one()
                } else {
                    T::zero()
                };
                c1 * g + c2 * (kk + ll)
            }
            StatKind::Inversions => {
                let half_span = (nf - T::one() + two * (j - i)) / (two * nf);
                let p = if i0 < j0 { T::one() - half_span } else { -half_span };
                let sgn = match k0.cmp(&l0) {
                    std::cmp::Ordering::Greater => T::one(),
                    std::cmp::Ordering::Less => -T::one(),
                    std::cmp::Ordering::Equal => T::zero(),
                };
                let g = sgn - two * (k - l) / nf;
                p * g
            }
            StatKind::Mww => {
                let (n1, n2) = (T::from_count(self.spec.n1), T::from_count(self.spec.n2));
                let u = if i0 < self.spec.n1 { T::one() } else { T::zero() };
                let v = if j0 >= self.spec.n1 { T::one() } else { T::zero() };
                let w = if k0 < l0 { T::one() } else { T::zero() };
                let m = (nf - T::one() + two * (l - k)) / two;
                u * v * w - u * v * m / nf - n2 * u * w / nf - n1 * v * w / nf
                    + n2 * u * m / (nf * nf)
                    + n1 * v * m / (nf * nf)
                    + n1 * n2 * w / (nf * nf)
                    - n1 * n2 * m / (nf * nf * nf)
            }
            StatKind::ChatterjeeOscillation => {
                let o = self.osc.as_ref().unwrap();
                let alpha = T::from_count(k0.abs_diff(l0));
                let a_kl =
                    (alpha - o.row_mean[k0] - o.row_mean[l0] + o.grand_mean) / o.b_n;
                let ind = if j0 == (i0 + 1) % self.spec.n {
                    T::one()
                } else {
                    T::zero()
                };
                (ind - T::one() / nf) * a_kl
            }
        }
    }

    /// Materialize dense `(a, b)` arrays (requires `n` under the dense cap).
    pub fn to_dense(&self) -> Result<NormalizedDips<T>> {
        let n = self.spec.n;
        if n > DENSE_CAP {
            return Err(Error::DenseCapExceeded { n, cap: DENSE_CAP });
        }
        let mut a = Vec::with_capacity(n * n);
        for i in 0..n {
            for k in 0..n {
                a.push(self.a(i, k));
            }
        }
        let mut b = Vec::with_capacity(n * n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        b.push(self.b(i, j, k, l));
                    }
                }
            }
        }
        NormalizedDips::from_parts(n, a, b, self.sigma, self.a_zero, self.mean_shift)
    }
}

impl<T: Real> DipsForm<T> for BuiltinDips<T> {
    fn n(&self) -> usize {
        self.spec.n
    }

    #[inline]
    fn a(&self, i: usize, k: usize) -> T {
        if self.a_zero {
            T::zero()
        } else {
            self.eta_star_raw(i, k) / self.sigma
        }
    }

    #[inline]
    fn b(&self, i: usize, j: usize, k: usize, l: usize) -> T {
        self.xstar_raw(i, j, k, l) / self.sigma
    }

    fn sigma(&self) -> T {
        self.sigma
    }

    fn mean_shift(&self) -> T {
        self.mean_shift
    }

    fn a_is_zero(&self) -> bool {
        self.a_zero
    }
}

/// `sigma^2 = sum eta*^2 / (n-1)` in closed form.
fn sigma2_proposition<T: Real>(spec: &StatisticSpec) -> T {
    let n = spec.n;
    let nf = T::from_count(n);
    let one = T::one();
    match spec.kind {
        // sum eta*^2 = 2 (n^2-1) / (3n)
        StatKind::Descents => {
            T::from_count(2) * (nf + one) / (T::from_count(3) * nf)
        }
        // sum eta*^2 = (n^2-1)^2 / 9
        StatKind::Inversions => (nf - one) * (nf + one) * (nf + one) / T::from_count(9),
        StatKind::Mww => {
            let (n1, n2) = (T::from_count(spec.n1), T::from_count(spec.n2));
            n1 * n2 * (nf + one) / T::from_count(12)
        }
        StatKind::ChatterjeeOscillation => one,
    }
}

/// Statistic-level `sigma^2` for the raw DIPS sum under the chosen
/// normalization mode.
fn sigma2_statistic<T: Real>(spec: &StatisticSpec) -> T {
    let n = spec.n;
    let nf = T::from_count(n);
    let one = T::one();
    match (spec.kind, spec.normalization) {
        // raw sum is 2 Des(pi^{-1}) - (n-1)
        (StatKind::Descents, Normalization::PaperLiteral) => {
            T::from_count(2) * (nf + one) / T::from_count(3)
        }
        (StatKind::Descents, Normalization::VarianceExact) => (nf + one) / T::from_count(3),
        // raw sum is 2 Inv - C(n,2); Var = n(n-1)(2n+5)/18 either way
        (StatKind::Inversions, _) => {
            nf * (nf - one) * (T::from_count(2) * nf + T::from_count(5)) / T::from_count(18)
        }
        (StatKind::Mww, _) => {
            let (n1, n2) = (T::from_count(spec.n1), T::from_count(spec.n2));
            n1 * n2 * (nf + one) / T::from_count(12)
        }
        (StatKind::ChatterjeeOscillation, Normalization::PaperLiteral) => one,
        (StatKind::ChatterjeeOscillation, Normalization::VarianceExact) => {
            // exact variance of T_n = sum a(pi(i), pi(i+1)) for symmetric a
            // with sum a^2 = n-1:
            // 1 + (sum a_ii)^2/((n-1)^2(n-2)) - n sum a_ii^2/((n-1)(n-2))
            let o = OscillationMatrix::<T>::new(n);
            let mut s = T::zero();
            let mut s2 = T::zero();
            for k in 0..n {
                let d = (T::zero() - o.row_mean[k] - o.row_mean[k] + o.grand_mean) / o.b_n;
                s += d;
                s2 += d * d;
            }
            let nm1 = nf - one;
            let nm2 = nf - T::from_count(2);
            one + s * s / (nm1 * nm1 * nm2) - nf * s2 / (nm1 * nm2)
        }
    }
}

/// All `sigma^2` candidates for a statistic, for side-by-side reporting.
#[derive(Debug, Clone, Serialize)]
pub struct Sigma2Candidates {
    /// `sum eta*^2 / (n-1)` (proposition normalization).
    pub proposition: f64,
    /// The literal constant for the raw DIPS sum.
    pub paper_literal: f64,
    /// The exact variance of the raw DIPS sum.
    pub variance_exact: f64,
}

pub fn sigma2_candidates(spec: &StatisticSpec) -> Result<Sigma2Candidates> {
    spec.validate()?;
    let lit = StatisticSpec {
        normalization: Normalization::PaperLiteral,
        ..*spec
    };
    let exact = StatisticSpec {
        normalization: Normalization::VarianceExact,
        ..*spec
    };
    Ok(Sigma2Candidates {
        proposition: sigma2_proposition::<f64>(spec),
        paper_literal: sigma2_statistic::<f64>(&lit),
        variance_exact: sigma2_statistic::<f64>(&exact),
    })
}

/// The closed-form `(a, b, sigma)` arrays under the proposition scale,
/// written down directly (no generic pipeline involved).
pub fn closed_form_ab<T: Real>(spec: &StatisticSpec) -> Result<NormalizedDips<T>> {
    BuiltinDips::<T>::proposition(spec)?.to_dense()
}

/// Two-route check value for the oscillation scale: `B^2(n)` from the
/// closed form `(n+1)(2n^2+7)/45`.
pub fn oscillation_b_squared(n: usize) -> f64 {
    let nf = n as f64;
    (nf + 1.0) * (2.0 * nf * nf + 7.0) / 45.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{evaluate, normalize, reconstruct_check_with, to_f64};
    use crate::perm::AllPermutations;

    fn perm(v: &[usize]) -> Permutation {
        Permutation::from_one_based(v).unwrap()
    }

    #[test]
    fn descents_examples() {
        assert_eq!(descents(&Permutation::identity(6)), 0);
        assert_eq!(descents(&perm(&[2, 1, 3])), 1);
        // Eulerian counts for n = 4: (1, 11, 11, 1)
        let mut counts = [0u64; 4];
        for p in AllPermutations::new(4) {
            counts[descents(&p)] += 1;
        }
        assert_eq!(counts, [1, 11, 11, 1]);
    }

    #[test]
    fn inversions_examples() {
        assert_eq!(inversions(&Permutation::identity(5)), 0);
        assert_eq!(inversions(&perm(&[3, 1, 2])), 2);
        // S_3 values {0,1,1,2,2,3}: variance 11/12 = 3*2*11/72
        let vals: Vec<u64> = AllPermutations::new(3).map(|p| inversions(&p)).collect();
        let mean = vals.iter().sum::<u64>() as f64 / 6.0;
        let var = vals.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 6.0;
        assert!((var - 11.0 / 12.0).abs() <= 1e-12);
        // brute-force oracle on random-ish permutations
        for p in AllPermutations::new(5) {
            let m = p.as_slice();
            let brute = (0..5)
                .flat_map(|i| ((i + 1)..5).map(move |j| (i, j)))
                .filter(|&(i, j)| m[i] > m[j])
                .count() as u64;
            assert_eq!(inversions(&p), brute);
        }
    }

    #[test]
    fn oscillation_examples() {
        assert_eq!(oscillation(&Permutation::identity(4)), 3);
        assert_eq!(oscillation(&perm(&[1, 3, 2])), 3);
        let max = AllPermutations::new(4).map(|p| oscillation(&p)).max();
        assert_eq!(max, Some(7));
        assert_eq!(oscillation(&perm(&[2, 4, 1, 3])), 7);
    }

    #[test]
    fn mww_count_examples() {
        assert_eq!(mww_count(&Permutation::identity(4), 2, 2).unwrap(), 4);
        assert_eq!(mww_count(&perm(&[4, 3, 2, 1]), 2, 2).unwrap(), 0);
        let total: u64 = AllPermutations::new(4)
            .map(|p| mww_count(&p, 2, 2).unwrap())
            .sum();
        assert!((total as f64 / 24.0 - 2.0).abs() <= 1e-12);
        assert!(mww_count(&Permutation::identity(4), 3, 2).is_err());
        // brute force
        for p in AllPermutations::new(5) {
            let m = p.as_slice();
            let brute = (0..2)
                .flat_map(|i| (2..5).map(move |j| (i, j)))
                .filter(|&(i, j)| m[i] < m[j])
                .count() as u64;
            assert_eq!(mww_count(&p, 2, 3).unwrap(), brute);
        }
    }

    #[test]
    fn chatterjee_xi_examples() {
        // perfectly monotone, n = 3: sqrt(7.5) (1 - 3*2/8)
        let x = [1.0, 2.0, 3.0];
        let v = chatterjee_xi(&x, &x).unwrap();
        assert!((v - 7.5f64.sqrt() / 4.0).abs() <= 1e-14);
        // reversed y gives identical |rank gaps|
        let y_rev = [3.0, 2.0, 1.0];
        assert!((chatterjee_xi(&x, &y_rev).unwrap() - v).abs() <= 1e-15);
        // n = 2: always zero
        let v2 = chatterjee_xi(&[0.3, 1.7], &[5.0, -2.0]).unwrap();
        assert!(v2.abs() <= 1e-15);
        // ties are a hard error
        assert!(matches!(
            chatterjee_xi(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::TiesDetected("x"))
        ));
        assert!(matches!(
            chatterjee_xi(&[1.0, 2.0, 3.0], &[1.0, 1.0, 3.0]),
            Err(Error::TiesDetected("y"))
        ));
    }

    #[test]
    fn chatterjee_xi_equals_rank_permutation_statistic() {
        let x = [0.3, -1.2, 2.5, 0.9, -0.4, 1.1];
        let y = [1.4, 0.2, -0.7, 2.2, 0.9, -1.5];
        let xi = chatterjee_xi(&x, &y).unwrap();
        // rank permutation of y after sorting by x
        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let mut ranks = vec![0usize; 6];
        let mut by_y: Vec<usize> = (0..6).collect();
        by_y.sort_by(|&a, &b| ys[a].total_cmp(&ys[b]));
        for (r, &i) in by_y.iter().enumerate() {
            ranks[i] = r + 1;
        }
        let spec =
            StatisticSpec::new(StatKind::ChatterjeeOscillation, 6, Normalization::VarianceExact)
                .unwrap();
        let w = statistic_value(&spec, &perm(&ranks)).unwrap();
        assert_eq!(xi, w);
    }

    #[test]
    fn statistic_value_examples() {
        // mww with n1 = n2 = 1 on [1,2]: (1 - 0.5)/sqrt(1*1*3/12) = 1
        let spec = StatisticSpec::mww(1, 1, Normalization::PaperLiteral).unwrap();
        assert!((statistic_value(&spec, &perm(&[1, 2])).unwrap() - 1.0).abs() <= 1e-14);
        // descents, identity, n = 5, variance-exact: (0-2)/sqrt(6/12) = -2 sqrt 2
        let spec = StatisticSpec::new(StatKind::Descents, 5, Normalization::VarianceExact).unwrap();
        let v = statistic_value(&spec, &Permutation::identity(5)).unwrap();
        assert!((v + 2.0 * 2.0f64.sqrt()).abs() <= 1e-14);
        // inversions, identity, n = 4, literal: (0-3)/sqrt(4*3*13/72)
        let spec = StatisticSpec::new(StatKind::Inversions, 4, Normalization::PaperLiteral).unwrap();
        let v = statistic_value(&spec, &Permutation::identity(4)).unwrap();
        assert!((v + 3.0 / (156.0f64 / 72.0).sqrt()).abs() <= 1e-14);
    }

    #[test]
    fn build_kernel_spot_values() {
        // descent kernel, n = 3, 1-based spots: xi(1,2,2,1)=1, xi(1,2,1,2)=-1,
        // xi(2,1,.,.) = 0
        let spec = StatisticSpec::new(StatKind::Descents, 3, Normalization::VarianceExact).unwrap();
        let kernel = build_kernel::<f64>(&spec).unwrap();
        assert_eq!(kernel.get(0, 1, 1, 0), 1.0);
        assert_eq!(kernel.get(0, 1, 0, 1), -1.0);
        for k in 0..3 {
            for l in 0..3 {
                assert_eq!(kernel.get(1, 0, k, l), 0.0);
            }
        }
        // mww kernel, n = 2, n1 = n2 = 1: xi(1,2,1,2) = 1, zero for k >= l
        let spec = StatisticSpec::mww(1, 1, Normalization::PaperLiteral).unwrap();
        let kernel = build_kernel::<f64>(&spec).unwrap();
        assert_eq!(kernel.get(0, 1, 0, 1), 1.0);
        assert_eq!(kernel.get(0, 1, 1, 0), 0.0);
        assert_eq!(kernel.get(0, 1, 0, 0), 0.0);
        assert_eq!(kernel.get(0, 1, 1, 1), 0.0);
    }

    #[test]
    fn oscillation_scale_two_routes() {
        // closed form vs direct centered-matrix sum at n = 3: both 20/9
        assert!((oscillation_b_squared(3) - 20.0 / 9.0).abs() <= 1e-14);
        for n in [3usize, 5, 8] {
            let alpha = |k: usize, l: usize| k.abs_diff(l) as f64;
            let row: Vec<f64> =
                (0..n).map(|k| (0..n).map(|l| alpha(k, l)).sum::<f64>() / n as f64).collect();
            let grand = row.iter().sum::<f64>() / n as f64;
            let mut sum_sq = 0.0;
            for k in 0..n {
                for l in 0..n {
                    let c = alpha(k, l) - row[k] - row[l] + grand;
                    sum_sq += c * c;
                }
            }
            assert!((sum_sq / (n - 1) as f64 - oscillation_b_squared(n)).abs() <= 1e-10);
        }
    }

    #[test]
    fn closed_form_matches_pipeline_entrywise() {
        // acceptance-grade cross-validation at small n; the proposition
        // scale makes the alignment factor exactly one
        let specs = vec![
            StatisticSpec::new(StatKind::Descents, 5, Normalization::VarianceExact).unwrap(),
            StatisticSpec::new(StatKind::Inversions, 5, Normalization::VarianceExact).unwrap(),
            StatisticSpec::mww(2, 3, Normalization::VarianceExact).unwrap(),
            StatisticSpec::new(StatKind::ChatterjeeOscillation, 5, Normalization::VarianceExact)
                .unwrap(),
        ];
        for spec in specs {
            let kernel = build_kernel::<f64>(&spec).unwrap();
            let pipeline = normalize(&kernel).unwrap();
            let closed = closed_form_ab::<f64>(&spec).unwrap();
            assert_eq!(pipeline.a_is_zero(), closed.a_is_zero(), "{:?}", spec.kind);
            let mut worst = 0.0f64;
            for (p, c) in pipeline.a_values().iter().zip(closed.a_values()) {
                worst = worst.max((p - c).abs());
            }
            for (p, c) in pipeline.b_values().iter().zip(closed.b_values()) {
                worst = worst.max((p - c).abs());
            }
            assert!(worst <= 1e-10, "{:?}: worst = {:e}", spec.kind, worst);
            assert!(
                (pipeline.sigma() - closed.sigma()).abs() <= 1e-10 * closed.sigma(),
                "{:?}: sigma {} vs {}",
                spec.kind,
                pipeline.sigma(),
                closed.sigma()
            );
            assert!(
                (pipeline.mean_shift() - closed.mean_shift()).abs() <= 1e-10,
                "{:?}: shift {} vs {}",
                spec.kind,
                pipeline.mean_shift(),
                closed.mean_shift()
            );
            // reconstruction through the closed form is exact as well
            for p in AllPermutations::new(5) {
                let res = reconstruct_check_with(&kernel, &closed, &p).unwrap();
                assert!(res <= 1e-12, "{:?}: residual {:e}", spec.kind, res);
            }
        }
    }

    #[test]
    fn closed_form_eta_star_displays() {
        // descents: a ~ ((n-2i+1)/n)(1{k=n} - 1{k=1})
        let n = 6;
        let spec = StatisticSpec::new(StatKind::Descents, n, Normalization::VarianceExact).unwrap();
        let d = BuiltinDips::<f64>::proposition(&spec).unwrap();
        for i0 in 0..n {
            let coef = (n as f64 - 2.0 * (i0 + 1) as f64 + 1.0) / n as f64;
            for k0 in 0..n {
                let want = if k0 + 1 == n {
                    coef
                } else if k0 == 0 {
                    -coef
                } else {
                    0.0
                };
                assert!((d.eta_star_raw(i0, k0) - want).abs() <= 1e-14);
            }
        }
        // mww: eta*(i,k) = 1{i<=n1} n2(n-2k+1)/(2n) + 1{i>n1} n1(2k-n-1)/(2n)
        let spec = StatisticSpec::mww(2, 4, Normalization::VarianceExact).unwrap();
        let d = BuiltinDips::<f64>::proposition(&spec).unwrap();
        let n = 6f64;
        for i0 in 0..6 {
            for k0 in 0..6 {
                let k = (k0 + 1) as f64;
                let want = if i0 < 2 {
                    4.0 * (n - 2.0 * k + 1.0) / (2.0 * n)
                } else {
                    2.0 * (2.0 * k - n - 1.0) / (2.0 * n)
                };
                assert!((d.eta_star_raw(i0, k0) - want).abs() <= 1e-14);
            }
        }
        // chatterjee: eta* = 0 identically, a_is_zero
        let spec =
            StatisticSpec::new(StatKind::ChatterjeeOscillation, 5, Normalization::VarianceExact)
                .unwrap();
        let d = closed_form_ab::<f64>(&spec).unwrap();
        assert!(d.a_is_zero());
        assert!(d.a_values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn raw_sum_statistic_identities() {
        // descents kernel sums to 2 Des(pi^{-1}) - (n-1)
        let spec = StatisticSpec::new(StatKind::Descents, 4, Normalization::VarianceExact).unwrap();
        let kernel = build_kernel::<f64>(&spec).unwrap();
        for p in AllPermutations::new(4) {
            let raw = kernel.raw_sum(&p).unwrap();
            let want = 2.0 * descents(&p.inverse()) as f64 - 3.0;
            assert!((raw - want).abs() <= 1e-12);
        }
        // inversions kernel sums to 2 Inv(pi) - C(n,2)
        let spec = StatisticSpec::new(StatKind::Inversions, 4, Normalization::VarianceExact).unwrap();
        let kernel = build_kernel::<f64>(&spec).unwrap();
        for p in AllPermutations::new(4) {
            let raw = kernel.raw_sum(&p).unwrap();
            let want = 2.0 * inversions(&p) as f64 - 6.0;
            assert!((raw - want).abs() <= 1e-12);
        }
        // mww kernel sums to the count itself
        let spec = StatisticSpec::mww(2, 2, Normalization::VarianceExact).unwrap();
        let kernel = build_kernel::<f64>(&spec).unwrap();
        for p in AllPermutations::new(4) {
            let raw = kernel.raw_sum(&p).unwrap();
            assert!((raw - mww_count(&p, 2, 2).unwrap() as f64).abs() <= 1e-12);
        }
    }

    #[test]
    fn descents_self_and_inverse_distributions_match() {
        for n in 3..=6 {
            let mut direct = vec![0u64; n];
            let mut inverse = vec![0u64; n];
            for p in AllPermutations::new(n) {
                direct[descents(&p)] += 1;
                inverse[descents(&p.inverse())] += 1;
            }
            assert_eq!(direct, inverse);
        }
    }

    #[test]
    fn exact_moments_small_n() {
        for n in [4usize, 5] {
            let total = crate::perm::factorial(n) as f64;
            let mut s_des = 0f64;
            let mut s2_des = 0f64;
            let mut s_inv = 0f64;
            let mut s2_inv = 0f64;
            let n1 = n / 2;
            let n2 = n - n1;
            let mut s_mww = 0f64;
            let mut s2_mww = 0f64;
            for p in AllPermutations::new(n) {
                let d = descents(&p) as f64;
                let i = inversions(&p) as f64;
                let m = mww_count(&p, n1, n2).unwrap() as f64;
                s_des += d;
                s2_des += d * d;
                s_inv += i;
                s2_inv += i * i;
                s_mww += m;
                s2_mww += m * m;
            }
            let nf = n as f64;
            let mean_des = s_des / total;
            let var_des = s2_des / total - mean_des * mean_des;
            assert!((mean_des - (nf - 1.0) / 2.0).abs() <= 1e-10);
            assert!((var_des - (nf + 1.0) / 12.0).abs() <= 1e-10);
            let mean_inv = s_inv / total;
            let var_inv = s2_inv / total - mean_inv * mean_inv;
            assert!((mean_inv - nf * (nf - 1.0) / 4.0).abs() <= 1e-10);
            assert!((var_inv - nf * (nf - 1.0) * (2.0 * nf + 5.0) / 72.0).abs() <= 1e-10);
            let mean_mww = s_mww / total;
            let var_mww = s2_mww / total - mean_mww * mean_mww;
            let (n1f, n2f) = (n1 as f64, n2 as f64);
            assert!((mean_mww - n1f * n2f / 2.0).abs() <= 1e-10);
            assert!((var_mww - n1f * n2f * (nf + 1.0) / 12.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn sigma2_candidates_descents_disagree_as_documented() {
        let spec = StatisticSpec::new(StatKind::Descents, 9, Normalization::VarianceExact).unwrap();
        let c = sigma2_candidates(&spec).unwrap();
        let n = 9f64;
        assert!((c.proposition - 2.0 * (n + 1.0) / (3.0 * n)).abs() <= 1e-12);
        assert!((c.paper_literal - 2.0 * (n + 1.0) / 3.0).abs() <= 1e-12);
        assert!((c.variance_exact - (n + 1.0) / 3.0).abs() <= 1e-12);
        // the raw sum 2 Des(pi^{-1}) - (n-1) has exactly the
        // variance-exact sigma^2 as its variance
        let mut s = 0f64;
        let mut s2 = 0f64;
        let total = crate::perm::factorial(6) as f64;
        let spec6 = StatisticSpec::new(StatKind::Descents, 6, Normalization::VarianceExact).unwrap();
        for p in AllPermutations::new(6) {
            let raw = 2.0 * descents(&p.inverse()) as f64 - 5.0;
            s += raw;
            s2 += raw * raw;
        }
        let var = s2 / total - (s / total) * (s / total);
        let c6 = sigma2_candidates(&spec6).unwrap();
        assert!((var - c6.variance_exact).abs() <= 1e-10);
    }

    #[test]
    fn statistic_scale_dips_have_small_delta_for_descents() {
        // under the statistic scale, max|a| and max|b| shrink like 1/sqrt n
        let spec =
            StatisticSpec::new(StatKind::Descents, 100, Normalization::VarianceExact).unwrap();
        let d = BuiltinDips::<f64>::statistic(&spec).unwrap();
        let mut max_a = 0f64;
        for i in 0..100 {
            for k in 0..100 {
                max_a = max_a.max(to_f64(d.a(i, k)).abs());
            }
        }
        assert!(max_a <= 10.0 / 10.0, "max|a| = {}", max_a);
        assert!(max_a >= 0.05);
    }

    #[test]
    fn evaluate_closed_form_tracks_statistic_value() {
        // sigma * W + shift = raw sum = 2 Des(pi^{-1}) - (n-1): the affine
        // bridge between the dips evaluation and the descent count
        let n = 5;
        let spec = StatisticSpec::new(StatKind::Descents, n, Normalization::VarianceExact).unwrap();
        let d = BuiltinDips::<f64>::statistic(&spec).unwrap();
        for p in AllPermutations::new(n) {
            let w = evaluate(&d, &p).unwrap();
            let raw = d.sigma() * w + d.mean_shift();
            let des_inv = descents(&p.inverse()) as f64;
            assert!((raw - (2.0 * des_inv - (n as f64 - 1.0))).abs() <= 1e-11);
            // and the statistic evaluator agrees pointwise through pi^{-1}
            let w_stat = statistic_value(&spec, &p.inverse()).unwrap();
            assert!((w - w_stat).abs() <= 1e-11);
        }
    }

    #[test]
    fn spec_validation() {
        assert!(StatisticSpec::new(StatKind::Descents, 1, Normalization::VarianceExact).is_err());
        assert!(StatisticSpec::mww(0, 4, Normalization::VarianceExact).is_err());
        let mut bad = StatisticSpec::mww(2, 2, Normalization::VarianceExact).unwrap();
        bad.n1 = 3;
        assert!(bad.validate().is_err());
    }
}
