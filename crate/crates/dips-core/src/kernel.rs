//! Kernel decomposition: from a raw 4-index kernel to the normalized
//! `W = sum_i a(i,pi(i)) + sum_{i!=j} b(i,j,pi(i),pi(j))` form.
//!
//! The pipeline is `center_kernel` (all one-index marginal averages of the
//! centered kernel vanish), `eta_from_kernel` (the diagonal-plus-marginal
//! matrix `eta` and its doubly centered `eta*`), and `normalize` (divide by
//! `sigma` with `sigma^2 = sum eta*^2 / (n-1)` when `eta*` is nonzero, so
//! that `sum a^2 = n - 1`). The subtracted constant `n * eta(.,.)` is kept
//! as `mean_shift` so the raw sum can be reconstructed exactly:
//!
//! `sum_{i,j} xi(i,j,pi(i),pi(j)) = sigma * W + mean_shift` for every `pi`.

use num_traits::cast;

use crate::perm::Permutation;
use crate::{Error, Real, Result};

/// Dense storage cap for the generic pipeline (`n^4` reals; ~20 MB of f64
/// at the cap). Large-n work routes through the closed-form statistics.
pub const DENSE_CAP: usize = 40;

/// Relative threshold under which `eta*` is treated as identically zero.
pub const ETA_ZERO_REL_TOL: f64 = 1e-12;

#[inline]
fn idx(n: usize, i: usize, j: usize, k: usize, l: usize) -> usize {
    ((i * n + j) * n + k) * n + l
}

/// Dense 4-index real kernel `xi(i,j,k,l)`, indices 0-based, row-major
/// `(i,j,k,l)` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel4<T> {
    n: usize,
    values: Vec<T>,
}

impl<T: Real> Kernel4<T> {
    /// Construct from a dense value vector of length `n^4`.
    pub fn new(n: usize, values: Vec<T>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSpec(format!("kernel needs n >= 2, got {}", n)));
        }
        if n > DENSE_CAP {
            return Err(Error::DenseCapExceeded { n, cap: DENSE_CAP });
        }
        if values.len() != n * n * n * n {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for n = {}, got {}",
                n * n * n * n,
                n,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("kernel entries must be finite".into()));
        }
        Ok(Kernel4 { n, values })
    }

    /// Build from a function of the four 0-based indices.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Result<Self> {
        let mut values = Vec::with_capacity(n * n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        values.push(f(i, j, k, l));
                    }
                }
            }
        }
        Kernel4::new(n, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> T {
        self.values[idx(self.n, i, j, k, l)]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn max_abs(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Average of `xi` over the free index positions, the fixed ones pinned.
    ///
    /// `fixed[p] = Some(v)` pins index position `p` (order `i,j,k,l`) to the
    /// 0-based value `v`; averaging divides by `n` once per free position.
    pub fn marginal_average(&self, fixed: [Option<usize>; 4]) -> Result<T> {
        let n = self.n;
        for v in fixed.iter().flatten() {
            if *v >= n {
                return Err(Error::IndexOutOfRange(format!(
                    "fixed index {} out of range for n = {}",
                    v, n
                )));
            }
        }
        let range = |f: Option<usize>| match f {
            Some(v) => v..v + 1,
            None => 0..n,
        };
        let mut sum = T::zero();
        for i in range(fixed[0]) {
            for j in range(fixed[1]) {
                for k in range(fixed[2]) {
                    for l in range(fixed[3]) {
                        sum += self.get(i, j, k, l);
                    }
                }
            }
        }
        let free = fixed.iter().filter(|f| f.is_none()).count();
        let denom = T::from_count(n).powi(free as i32);
        Ok(sum / denom)
    }

    /// Raw DIPS sum `sum_{i,j} xi(i,j,pi(i),pi(j))` (diagonal included).
    pub fn raw_sum(&self, perm: &Permutation) -> Result<T> {
        if perm.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "permutation length {} vs kernel n = {}",
                perm.len(),
                self.n
            )));
        }
        let mut sum = T::zero();
        for i in 0..self.n {
            for j in 0..self.n {
                sum += self.get(i, j, perm.image(i), perm.image(j));
            }
        }
        Ok(sum)
    }
}

/// A kernel whose four one-index marginal averages all vanish.
#[derive(Debug, Clone)]
pub struct CenteredKernel<T> {
    n: usize,
    values: Vec<T>,
}

impl<T: Real> CenteredKernel<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> T {
        self.values[idx(self.n, i, j, k, l)]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn max_abs(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Reinterpret as a plain kernel (for re-centering or raw sums).
    pub fn as_kernel(&self) -> Kernel4<T> {
        Kernel4 {
            n: self.n,
            values: self.values.clone(),
        }
    }

    /// Largest absolute one-index marginal average, over all four index
    /// positions and all fixings of the other three.
    pub fn max_marginal_residual(&self) -> T {
        let n = self.n;
        let nn = T::from_count(n);
        let mut worst = T::zero();
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let mut s = [T::zero(); 4];
                    for t in 0..n {
                        s[0] += self.get(t, a, b, c);
                        s[1] += self.get(a, t, b, c);
                        s[2] += self.get(a, b, t, c);
                        s[3] += self.get(a, b, c, t);
                    }
                    for v in s {
                        worst = worst.max((v / nn).abs());
                    }
                }
            }
        }
        worst
    }
}

/// Center a kernel so every one-index marginal average vanishes.
///
/// Sweeping the four index positions and subtracting each axis mean realizes
/// the full inclusion-exclusion over all fifteen marginal averages in one
/// pass per axis. Idempotent and linear.
pub fn center_kernel<T: Real>(kernel: &Kernel4<T>) -> CenteredKernel<T> {
    let n = kernel.n;
    let nn = T::from_count(n);
    let mut values = kernel.values.clone();
    let strides = [n * n * n, n * n, n, 1];
    for axis in 0..4 {
        let stride = strides[axis];
        let others: Vec<usize> = (0..4).filter(|&m| m != axis).map(|m| strides[m]).collect();
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    let base = x * others[0] + y * others[1] + z * others[2];
                    let mut sum = T::zero();
                    for t in 0..n {
                        sum += values[base + t * stride];
                    }
                    let mean = sum / nn;
                    for t in 0..n {
                        values[base + t * stride] = values[base + t * stride] - mean;
                    }
                }
            }
        }
    }
    CenteredKernel { n, values }
}

/// The `eta` matrix extracted from the decomposition and its doubly
/// centered form `eta*` (zero row and column means).
#[derive(Debug, Clone)]
pub struct EtaPair<T> {
    n: usize,
    eta: Vec<T>,
    eta_star: Vec<T>,
}

impl<T: Real> EtaPair<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn eta(&self, i: usize, k: usize) -> T {
        self.eta[i * self.n + k]
    }

    #[inline]
    pub fn eta_star(&self, i: usize, k: usize) -> T {
        self.eta_star[i * self.n + k]
    }

    pub fn eta_star_values(&self) -> &[T] {
        &self.eta_star
    }

    /// Grand mean `eta(.,.)`.
    pub fn eta_grand_mean(&self) -> T {
        let n2 = T::from_count(self.n * self.n);
        self.eta.iter().copied().sum::<T>() / n2
    }

    pub fn max_abs_eta(&self) -> T {
        self.eta.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn max_abs_eta_star(&self) -> T {
        self.eta_star.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Largest absolute row or column mean of `eta*`.
    pub fn max_center_residual(&self) -> T {
        let n = self.n;
        let nn = T::from_count(n);
        let mut worst = T::zero();
        for i in 0..n {
            let mut row = T::zero();
            let mut col = T::zero();
            for k in 0..n {
                row += self.eta_star(i, k);
                col += self.eta_star(k, i);
            }
            worst = worst.max((row / nn).abs()).max((col / nn).abs());
        }
        worst
    }
}

/// Extract `eta(i,k) = xi*(i,i,k,k) + n xi(i,.,k,.) + n xi(.,i,.,k) - n xi(.,.,.,.)`
/// and its doubly centered companion.
pub fn eta_from_kernel<T: Real>(
    kernel: &Kernel4<T>,
    centered: &CenteredKernel<T>,
) -> Result<EtaPair<T>> {
    let n = kernel.n;
    if centered.n != n {
        return Err(Error::DimensionMismatch(format!(
            "kernel n = {} vs centered n = {}",
            n, centered.n
        )));
    }
    let nn = T::from_count(n);
    let grand = kernel.marginal_average([None, None, None, None])?;
    let mut eta = vec![T::zero(); n * n];
    for i in 0..n {
        for k in 0..n {
            let m_ik = kernel.marginal_average([Some(i), None, Some(k), None])?;
            let m_ki = kernel.marginal_average([None, Some(i), None, Some(k)])?;
            eta[i * n + k] = centered.get(i, i, k, k) + nn * m_ik + nn * m_ki - nn * grand;
        }
    }
    // double centering: subtract row and column means, add back the grand mean
    let mut row_mean = vec![T::zero(); n];
    let mut col_mean = vec![T::zero(); n];
    let mut grand_mean = T::zero();
    for i in 0..n {
        for k in 0..n {
            let v = eta[i * n + k];
            row_mean[i] += v;
            col_mean[k] += v;
            grand_mean += v;
        }
    }
    for v in row_mean.iter_mut().chain(col_mean.iter_mut()) {
        *v = *v / nn;
    }
    grand_mean = grand_mean / (nn * nn);
    let mut eta_star = vec![T::zero(); n * n];
    for i in 0..n {
        for k in 0..n {
            eta_star[i * n + k] = eta[i * n + k] - row_mean[i] - col_mean[k] + grand_mean;
        }
    }
    Ok(EtaPair { n, eta, eta_star })
}

/// Access to a statistic in normalized `(a, b, sigma)` form.
///
/// Implemented both by the dense [`NormalizedDips`] produced by the generic
/// pipeline and by the closed-form builtin statistics, so that evaluation,
/// exchangeable-pair identities and boundedness audits share one code path.
pub trait DipsForm<T: Real> {
    fn n(&self) -> usize;
    /// Linear coefficient `a(i,k)` (0-based).
    fn a(&self, i: usize, k: usize) -> T;
    /// Quadratic coefficient `b(i,j,k,l)` (0-based).
    fn b(&self, i: usize, j: usize, k: usize, l: usize) -> T;
    fn sigma(&self) -> T;
    fn mean_shift(&self) -> T;
    fn a_is_zero(&self) -> bool;
}

/// The normalized `(a, b, sigma)` triple with zero-marginal invariants.
#[derive(Debug, Clone)]
pub struct NormalizedDips<T> {
    n: usize,
    /// `n x n`, identically zero when `a_is_zero`.
    a: Vec<T>,
    /// Dense `n^4` array with all four one-index marginals zero.
    b: Vec<T>,
    sigma: T,
    a_is_zero: bool,
    mean_shift: T,
}

impl<T: Real> NormalizedDips<T> {
    /// Assemble from parts; used by the closed-form builders. The marginal
    /// invariants are the caller's responsibility and are checked in tests.
    pub fn from_parts(
        n: usize,
        a: Vec<T>,
        b: Vec<T>,
        sigma: T,
        a_is_zero: bool,
        mean_shift: T,
    ) -> Result<Self> {
        if a.len() != n * n || b.len() != n * n * n * n {
            return Err(Error::DimensionMismatch(
                "normalized-form array sizes".into(),
            ));
        }
        Ok(NormalizedDips {
            n,
            a,
            b,
            sigma,
            a_is_zero,
            mean_shift,
        })
    }

    pub fn a_values(&self) -> &[T] {
        &self.a
    }

    pub fn b_values(&self) -> &[T] {
        &self.b
    }

    pub fn sum_a_squared(&self) -> T {
        self.a.iter().map(|v| *v * *v).sum()
    }
}

impl<T: Real> DipsForm<T> for NormalizedDips<T> {
    fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn a(&self, i: usize, k: usize) -> T {
        self.a[i * self.n + k]
    }

    #[inline]
    fn b(&self, i: usize, j: usize, k: usize, l: usize) -> T {
        self.b[idx(self.n, i, j, k, l)]
    }

    fn sigma(&self) -> T {
        self.sigma
    }

    fn mean_shift(&self) -> T {
        self.mean_shift
    }

    fn a_is_zero(&self) -> bool {
        self.a_is_zero
    }
}

impl<T: Real, F: DipsForm<T> + ?Sized> DipsForm<T> for &F {
    fn n(&self) -> usize {
        (**self).n()
    }
    fn a(&self, i: usize, k: usize) -> T {
        (**self).a(i, k)
    }
    fn b(&self, i: usize, j: usize, k: usize, l: usize) -> T {
        (**self).b(i, j, k, l)
    }
    fn sigma(&self) -> T {
        (**self).sigma()
    }
    fn mean_shift(&self) -> T {
        (**self).mean_shift()
    }
    fn a_is_zero(&self) -> bool {
        (**self).a_is_zero()
    }
}

/// Convert a raw kernel into normalized form.
///
/// When `eta*` is not identically zero (`max|eta*| > 1e-12 * max(1, max|eta|)`),
/// `sigma^2 = sum eta*^2 / (n-1)`, `a = eta*/sigma`, `b = xi*/sigma`, which
/// forces `sum a^2 = n - 1`. Otherwise `a = 0`, `b = xi*`, `sigma = 1`.
/// Either way `mean_shift = n * eta(.,.)`.
pub fn normalize<T: Real>(kernel: &Kernel4<T>) -> Result<NormalizedDips<T>> {
    let centered = center_kernel(kernel);
    let eta = eta_from_kernel(kernel, &centered)?;
    let n = kernel.n;
    let nn = T::from_count(n);
    let mean_shift = nn * eta.eta_grand_mean();
    let zero_tol = T::from_f64(ETA_ZERO_REL_TOL).unwrap() * T::one().max(eta.max_abs_eta());
    let a_is_zero = eta.max_abs_eta_star() <= zero_tol;
    if a_is_zero {
        return Ok(NormalizedDips {
            n,
            a: vec![T::zero(); n * n],
            b: centered.values,
            sigma: T::one(),
            a_is_zero: true,
            mean_shift,
        });
    }
    let sum_sq: T = eta.eta_star.iter().map(|v| *v * *v).sum();
    let sigma2 = sum_sq / T::from_count(n - 1);
    if !(sigma2 > T::zero()) {
        return Err(Error::Inconsistency(
            "eta* nonzero but sigma^2 = 0".into(),
        ));
    }
    let sigma = sigma2.sqrt();
    let a = eta.eta_star.iter().map(|v| *v / sigma).collect();
    let b = centered.values.iter().map(|v| *v / sigma).collect();
    Ok(NormalizedDips {
        n,
        a,
        b,
        sigma,
        a_is_zero: false,
        mean_shift,
    })
}

/// Evaluate `W = sum_i a(i,pi(i)) + sum_{i!=j} b(i,j,pi(i),pi(j))`.
pub fn evaluate<T: Real>(dips: &impl DipsForm<T>, perm: &Permutation) -> Result<T> {
    let n = dips.n();
    if perm.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "permutation length {} vs dips n = {}",
            perm.len(),
            n
        )));
    }
    let mut w = T::zero();
    for i in 0..n {
        w += dips.a(i, perm.image(i));
    }
    for i in 0..n {
        let ki = perm.image(i);
        for j in 0..n {
            if j != i {
                w += dips.b(i, j, ki, perm.image(j));
            }
        }
    }
    Ok(w)
}

/// Absolute residual of the reconstruction identity
/// `raw sum = sigma * W + mean_shift`.
pub fn reconstruct_check<T: Real>(kernel: &Kernel4<T>, perm: &Permutation) -> Result<T> {
    let dips = normalize(kernel)?;
    reconstruct_check_with(kernel, &dips, perm)
}

/// Same as [`reconstruct_check`] with a precomputed normalized form.
pub fn reconstruct_check_with<T: Real>(
    kernel: &Kernel4<T>,
    dips: &NormalizedDips<T>,
    perm: &Permutation,
) -> Result<T> {
    let raw = kernel.raw_sum(perm)?;
    let w = evaluate(dips, perm)?;
    Ok((raw - (dips.sigma * w + dips.mean_shift)).abs())
}

/// Exact mean of `W` under the uniform permutation law, computed from the
/// diagonal of `b`: `E W = sum_{i,k} b(i,i,k,k) / (n(n-1))`. (The linear
/// part has mean zero; the pair part picks up only the excluded-diagonal
/// correction.)
pub fn exact_mean<T: Real>(dips: &impl DipsForm<T>) -> T {
    let n = dips.n();
    let mut s = T::zero();
    for i in 0..n {
        for k in 0..n {
            s += dips.b(i, i, k, k);
        }
    }
    s / T::from_count(n * (n - 1))
}

/// Convert any scalar to f64 for reporting.
pub fn to_f64<T: Real>(x: T) -> f64 {
    cast::<T, f64>(x).expect("scalar convertible to f64")
}
