//! Exact samplers for the distributions the Gibbs steps draw from.
//!
//! Everything here is a pure function of its inputs and an explicit rng, so
//! one rng per chain is all the synchronization parallel chains need.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, Open01, StandardNormal};

use crate::error::{Error, Result};
use crate::normal;

/// Standardized distance into a tail beyond which inverse-CDF sampling is
/// replaced by exponential rejection.
const TAIL_SWITCH: f64 = 4.0;

/// A point of the extended real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    NegInf,
    Finite(f64),
    PosInf,
}

impl ExtReal {
    pub fn value(self) -> f64 {
        match self {
            ExtReal::NegInf => f64::NEG_INFINITY,
            ExtReal::Finite(x) => x,
            ExtReal::PosInf => f64::INFINITY,
        }
    }
}

/// Open interval `(lower, upper)` a normal draw is restricted to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationInterval {
    lower: ExtReal,
    upper: ExtReal,
}

impl TruncationInterval {
    pub fn new(lower: ExtReal, upper: ExtReal) -> Result<Self> {
        if let ExtReal::Finite(x) = lower {
            if !x.is_finite() {
                return Err(Error::param("finite bound must be a finite number"));
            }
        }
        if let ExtReal::Finite(x) = upper {
            if !x.is_finite() {
                return Err(Error::param("finite bound must be a finite number"));
            }
        }
        let (lo, hi) = (lower.value(), upper.value());
        if lower == ExtReal::PosInf || upper == ExtReal::NegInf || lo >= hi {
            return Err(Error::EmptyInterval {
                lower: lo,
                upper: hi,
            });
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded() -> Self {
        Self {
            lower: ExtReal::NegInf,
            upper: ExtReal::PosInf,
        }
    }

    /// `(lower, +∞)`.
    pub fn above(lower: f64) -> Result<Self> {
        Self::new(ExtReal::Finite(lower), ExtReal::PosInf)
    }

    /// `(-∞, upper)`.
    pub fn below(upper: f64) -> Result<Self> {
        Self::new(ExtReal::NegInf, ExtReal::Finite(upper))
    }

    pub fn lower(&self) -> ExtReal {
        self.lower
    }

    pub fn upper(&self) -> ExtReal {
        self.upper
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lower.value() && x < self.upper.value()
    }
}

/// Draws from `N(mean, sd²)` restricted to `iv`.
///
/// Inverse-CDF sampling (on the survival function in the upper half so both
/// tails keep full precision) unless the interval lies at least four standard
/// deviations into a tail, where Robert's exponential-proposal rejection
/// sampler takes over. Narrow finite intervals use uniform-proposal rejection.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    iv: &TruncationInterval,
    rng: &mut R,
) -> Result<f64> {
    if !(sd > 0.0 && sd.is_finite()) {
        return Err(Error::param(format!("standard deviation must be positive, got {sd}")));
    }
    if !mean.is_finite() {
        return Err(Error::param(format!("mean must be finite, got {mean}")));
    }
    let a = (iv.lower.value() - mean) / sd;
    let b = (iv.upper.value() - mean) / sd;
    loop {
        let x = mean + sd * standard_truncated(a, b, rng);
        if iv.contains(x) {
            return Ok(x);
        }
    }
}

fn standard_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a >= TAIL_SWITCH {
        return upper_tail(a, b, rng);
    }
    if b <= -TAIL_SWITCH {
        return -upper_tail(-b, -a, rng);
    }
    if b - a < 0.5 {
        return uniform_rejection(a, b, rng);
    }
    loop {
        let u: f64 = rng.sample(Open01);
        let z = if a > 0.0 {
            let (pa, pb) = (normal::sf(a), normal::sf(b));
            -normal::quantile(pb + (pa - pb) * u)
        } else {
            let (pa, pb) = (normal::cdf(a), normal::cdf(b));
            normal::quantile(pa + (pb - pa) * u)
        };
        if z > a && z < b {
            return z;
        }
    }
}

// a > 0, b may be +∞.
fn upper_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if b.is_finite() && (b - a) * a < 2.0 {
        return uniform_rejection(a, b, rng);
    }
    let rate = (a + (a * a + 4.0).sqrt()) / 2.0;
    loop {
        let e: f64 = rng.sample(Exp1);
        let z = a + e / rate;
        let u: f64 = rng.sample(Open01);
        if u < (-(z - rate) * (z - rate) / 2.0).exp() && z > a && z < b {
            return z;
        }
    }
}

// Both bounds finite.
fn uniform_rejection<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let peak = if a > 0.0 {
        a * a
    } else if b < 0.0 {
        b * b
    } else {
        0.0
    };
    loop {
        let z = a + (b - a) * rng.sample::<f64, _>(Open01);
        let u: f64 = rng.sample(Open01);
        if u.ln() < (peak - z * z) / 2.0 && z > a && z < b {
            return z;
        }
    }
}

/// Inverse-Wishart parameters `(ν, Ψ)`; the scale's Cholesky factor is
/// computed once here.
#[derive(Debug, Clone)]
pub struct WishartParams {
    dof: f64,
    scale: DMatrix<f64>,
    scale_chol: DMatrix<f64>,
}

impl WishartParams {
    pub fn new(dof: f64, scale: DMatrix<f64>) -> Result<Self> {
        let c = scale.nrows();
        if c == 0 || scale.ncols() != c {
            return Err(Error::param("scale matrix must be square and non-empty"));
        }
        if !(dof > (c as f64) - 1.0) || !dof.is_finite() {
            return Err(Error::param(format!(
                "inverse-Wishart needs dof > {} for a {c}x{c} scale, got {dof}",
                c - 1
            )));
        }
        check_symmetric(&scale)?;
        let scale_chol = Cholesky::new(scale.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("inverse-Wishart scale".into()))?
            .l();
        Ok(Self {
            dof,
            scale,
            scale_chol,
        })
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    pub fn dim(&self) -> usize {
        self.scale.nrows()
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let tol = 1e-10 * m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > tol || !m[(i, j)].is_finite() {
                return Err(Error::param("matrix is not symmetric"));
            }
        }
        if !m[(i, i)].is_finite() {
            return Err(Error::param("matrix has non-finite entries"));
        }
    }
    Ok(())
}

/// Draws `Σ ~ inverse-Wishart(ν, Ψ)`.
///
/// Bartlett-decomposes `X ~ Wishart(ν, Ψ⁻¹)` as `U⁻ᵀ A Aᵀ U⁻¹` where
/// `Ψ = U Uᵀ`, so `Σ = X⁻¹ = (U A⁻ᵀ)(U A⁻ᵀ)ᵀ` needs only one triangular
/// solve. The result is exactly symmetric.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(p: &WishartParams, rng: &mut R) -> DMatrix<f64> {
    let c = p.dim();
    let mut bartlett = DMatrix::<f64>::zeros(c, c);
    for i in 0..c {
        let chi = ChiSquared::new(p.dof - i as f64).expect("dof validated at construction");
        bartlett[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            bartlett[(i, j)] = rng.sample(StandardNormal);
        }
    }
    // A Bᵀ = Uᵀ  ⇒  B = U A⁻ᵀ
    let bt = bartlett
        .solve_lower_triangular(&p.scale_chol.transpose())
        .expect("Bartlett diagonal is positive");
    let mut out = DMatrix::<f64>::zeros(c, c);
    for i in 0..c {
        for j in 0..=i {
            let v = bt.column(i).dot(&bt.column(j));
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// `trace(Ψ Σ⁻¹)` through a Cholesky solve.
pub fn trace_psi_sigma_inv(psi: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::NotPositiveDefinite("covariance in trace(ΨΣ⁻¹)".into()))?;
    let solved = chol.solve(psi);
    Ok(solved.trace())
}

/// Draws the working expansion parameter from its conditional prior,
/// `α² = trace(ΨΣ⁻¹) / χ²_{νC}`, i.e. `Inv-Gamma(νC/2, trace(ΨΣ⁻¹)/2)`.
pub fn sample_alpha_sq<R: Rng + ?Sized>(
    nu: f64,
    c: usize,
    psi: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    rng: &mut R,
) -> Result<f64> {
    if !(nu > 0.0) || c == 0 {
        return Err(Error::param("alpha² prior needs nu > 0 and C ≥ 1"));
    }
    let tr = trace_psi_sigma_inv(psi, sigma)?;
    let chi = ChiSquared::new(nu * c as f64).map_err(|e| Error::param(e.to_string()))?;
    Ok(tr / chi.sample(rng))
}

/// Full conditionals `W_j | W_{-j}` of a multivariate normal, precomputed for
/// every coordinate of one covariance matrix.
#[derive(Debug, Clone)]
pub struct ConditionalCoefs {
    /// `coefs[j][k]` = weight of `(w_k - μ_k)` in the conditional mean of
    /// coordinate `j`; zero at `k == j`.
    coefs: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl ConditionalCoefs {
    pub fn new(sigma: &DMatrix<f64>) -> Result<Self> {
        let c = sigma.nrows();
        let mut coefs = Vec::with_capacity(c);
        let mut variances = Vec::with_capacity(c);
        for j in 0..c {
            let (beta, tau_sq) = conditional_regression(sigma, j)?;
            coefs.push(beta);
            variances.push(tau_sq);
        }
        Ok(Self { coefs, variances })
    }

    pub fn dim(&self) -> usize {
        self.variances.len()
    }

    pub fn coefs(&self, j: usize) -> &[f64] {
        &self.coefs[j]
    }

    pub fn variance(&self, j: usize) -> f64 {
        self.variances[j]
    }

    /// Conditional mean of coordinate `j` given the other coordinates of `w`.
    #[inline]
    pub fn mean(&self, j: usize, mu: &[f64], w: &[f64]) -> f64 {
        let beta = &self.coefs[j];
        let mut m = mu[j];
        for k in 0..beta.len() {
            if k != j {
                m += beta[k] * (w[k] - mu[k]);
            }
        }
        m
    }
}

fn conditional_regression(sigma: &DMatrix<f64>, j: usize) -> Result<(Vec<f64>, f64)> {
    let c = sigma.nrows();
    let others: Vec<usize> = (0..c).filter(|&k| k != j).collect();
    let mut beta = vec![0.0; c];
    if others.is_empty() {
        return Ok((beta, sigma[(j, j)]));
    }
    let sub = DMatrix::from_fn(others.len(), others.len(), |a, b| sigma[(others[a], others[b])]);
    let cross = DVector::from_fn(others.len(), |a, _| sigma[(others[a], j)]);
    let chol = Cholesky::new(sub).ok_or_else(|| {
        Error::NotPositiveDefinite(format!("covariance block excluding coordinate {j}"))
    })?;
    let solved = chol.solve(&cross);
    let tau_sq = sigma[(j, j)] - cross.dot(&solved);
    if !(tau_sq > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "conditional variance of coordinate {j} is {tau_sq}"
        )));
    }
    for (a, &k) in others.iter().enumerate() {
        beta[k] = solved[a];
    }
    Ok((beta, tau_sq))
}

/// Conditional mean and variance of `w[j]` given the remaining coordinates,
/// for `w ~ MVN(mu, sigma)`. `j` is zero-based.
pub fn mvn_conditional(
    mu: &[f64],
    sigma: &DMatrix<f64>,
    w: &[f64],
    j: usize,
) -> Result<(f64, f64)> {
    let c = sigma.nrows();
    if j >= c || mu.len() != c || w.len() != c {
        return Err(Error::param("mvn_conditional: dimension mismatch"));
    }
    let (beta, tau_sq) = conditional_regression(sigma, j)?;
    let mut m = mu[j];
    for k in 0..c {
        if k != j {
            m += beta[k] * (w[k] - mu[k]);
        }
    }
    Ok((m, tau_sq))
}

/// Draws `MVN(mean, Σ)` given the lower Cholesky factor of `Σ`.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &[f64], chol_lower: &DMatrix<f64>, rng: &mut R, out: &mut [f64]) {
    let c = mean.len();
    let mut z = [0.0f64; 16];
    let mut zs;
    let z: &mut [f64] = if c <= 16 {
        &mut z[..c]
    } else {
        zs = vec![0.0; c];
        &mut zs
    };
    for zi in z.iter_mut() {
        *zi = rng.sample(StandardNormal);
    }
    for i in 0..c {
        let mut v = mean[i];
        for k in 0..=i {
            v += chol_lower[(i, k)] * z[k];
        }
        out[i] = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn interval_validation() {
        assert!(TruncationInterval::above(1.0).is_ok());
        assert!(TruncationInterval::new(ExtReal::Finite(1.0), ExtReal::Finite(1.0)).is_err());
        assert!(TruncationInterval::new(ExtReal::PosInf, ExtReal::PosInf).is_err());
        assert!(TruncationInterval::new(ExtReal::Finite(f64::NAN), ExtReal::PosInf).is_err());
        assert!(TruncationInterval::unbounded().contains(1e300));
    }

    #[test]
    fn rejects_bad_sd() {
        let mut rng = seeded_rng(1);
        let iv = TruncationInterval::unbounded();
        assert!(sample_truncated_normal(0.0, 0.0, &iv, &mut rng).is_err());
        assert!(sample_truncated_normal(0.0, -1.0, &iv, &mut rng).is_err());
    }

    #[test]
    fn draws_stay_inside_extreme_intervals() {
        let mut rng = seeded_rng(2);
        let cases = [
            TruncationInterval::above(8.0).unwrap(),
            TruncationInterval::below(-30.0).unwrap(),
            TruncationInterval::new(ExtReal::Finite(5.0), ExtReal::Finite(5.001)).unwrap(),
            TruncationInterval::new(ExtReal::Finite(-0.1), ExtReal::Finite(0.1)).unwrap(),
            TruncationInterval::new(ExtReal::Finite(3.9), ExtReal::Finite(12.0)).unwrap(),
        ];
        for iv in &cases {
            for _ in 0..20_000 {
                let x = sample_truncated_normal(0.0, 1.0, iv, &mut rng).unwrap();
                assert!(iv.contains(x), "{x} outside {iv:?}");
            }
        }
    }

    #[test]
    fn same_seed_same_draws() {
        let iv = TruncationInterval::above(0.3).unwrap();
        let a: Vec<f64> = {
            let mut rng = seeded_rng(9);
            (0..100).map(|_| sample_truncated_normal(1.0, 2.0, &iv, &mut rng).unwrap()).collect()
        };
        let b: Vec<f64> = {
            let mut rng = seeded_rng(9);
            (0..100).map(|_| sample_truncated_normal(1.0, 2.0, &iv, &mut rng).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn inverse_wishart_draw_is_symmetric_pd() {
        let mut rng = seeded_rng(3);
        let psi = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
        let p = WishartParams::new(5.5, psi).unwrap();
        for _ in 0..1000 {
            let s = sample_inverse_wishart(&p, &mut rng);
            assert_eq!(s, s.transpose());
            assert!(s.trace() > 0.0);
            assert!(Cholesky::new(s).is_some());
        }
    }

    #[test]
    fn wishart_rejects_non_pd_and_low_dof() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(WishartParams::new(4.0, bad), Err(Error::NotPositiveDefinite(_))));
        assert!(WishartParams::new(0.5, DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn conditional_identity_is_marginal() {
        let sigma = DMatrix::identity(3, 3);
        let (m, t) = mvn_conditional(&[0.3, -1.0, 2.0], &sigma, &[5.0, 6.0, 7.0], 1).unwrap();
        assert_eq!((m, t), (-1.0, 1.0));
    }

    #[test]
    fn conditional_two_by_two() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let (m, t) = mvn_conditional(&[0.0, 0.0], &sigma, &[0.0, 1.0], 0).unwrap();
        assert!((m - 0.5).abs() < 1e-15);
        assert!((t - 0.75).abs() < 1e-15);
    }

    #[test]
    fn conditional_matches_precision_matrix_route() {
        // Oracle: with precision Q = Σ⁻¹, var = 1/Q_jj and
        // mean = μ_j - Σ_{k≠j} Q_jk (w_k - μ_k) / Q_jj.
        let sigma = DMatrix::from_row_slice(
            3,
            3,
            &[1.3, 0.4, -0.35, 0.4, 0.9, 0.2, -0.35, 0.2, 0.8],
        );
        let q = sigma.clone().try_inverse().unwrap();
        let mu = [0.2, -0.4, 1.1];
        let w = [1.0, 0.5, -0.3];
        let coefs = ConditionalCoefs::new(&sigma).unwrap();
        for j in 0..3 {
            let var = 1.0 / q[(j, j)];
            let mut mean = mu[j];
            for k in 0..3 {
                if k != j {
                    mean -= q[(j, k)] * (w[k] - mu[k]) / q[(j, j)];
                }
            }
            let (m, t) = mvn_conditional(&mu, &sigma, &w, j).unwrap();
            assert!((m - mean).abs() < 1e-10);
            assert!((t - var).abs() < 1e-10);
            assert!((coefs.mean(j, &mu, &w) - mean).abs() < 1e-10);
            assert!((coefs.variance(j) - var).abs() < 1e-10);
        }
    }

    #[test]
    fn conditional_rejects_singular_block() {
        let sigma = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0],
        );
        assert!(mvn_conditional(&[0.0; 3], &sigma, &[0.0; 3], 0).is_err());
    }

    #[test]
    fn alpha_sq_singular_sigma_errors() {
        let mut rng = seeded_rng(4);
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(sample_alpha_sq(3.0, 2, &DMatrix::identity(2, 2), &sigma, &mut rng).is_err());
    }
}
