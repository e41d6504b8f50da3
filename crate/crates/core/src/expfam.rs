//! Natural exponential families with entrywise-independent components.
//!
//! A member is the law of a `d`-dimensional observation `Y` with density or
//! mass `h(y) exp(<y, theta> - A(theta))`. The mean parametrization `mu`,
//! the natural parametrization `theta`, the canonical link `phi = (grad A)^-1`
//! and the variance function `Lambda(mu)` follow the standard univariate
//! catalog:
//!
//! | family            | theta = phi(mu)    | Lambda(mu)     | A(theta)            |
//! |-------------------|--------------------|----------------|---------------------|
//! | Gaussian (sigma)  | mu / sigma^2       | sigma^2        | sigma^2 theta^2 / 2 |
//! | Gamma (L)         | -L / mu            | mu^2 / L       | -L log(-theta / L)  |
//! | Poisson           | log mu             | mu             | exp theta           |
//! | Binomial (n)      | log(mu / (n - mu)) | mu - mu^2 / n  | n log(1 + e^theta)  |
//! | NegBinomial (r)   | log(mu / (r + mu)) | mu + mu^2 / r  | -r log(1 - e^theta) |
//!
//! All components are independent, so `Lambda` is diagonal and every
//! operation separates across entries. Domain checks are strict open-interval
//! checks with no epsilon slack; callers clamp before calling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sums::pairwise_sum;

/// Distribution law of one family member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Gaussian,
    Gamma,
    Poisson,
    Binomial,
    NegBinomial,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::Gamma => "gamma",
            FamilyKind::Poisson => "poisson",
            FamilyKind::Binomial => "binomial",
            FamilyKind::NegBinomial => "negbinomial",
        }
    }
}

/// Nuisance (scale/shape) parameters, fixed and known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Nuisance {
    Gaussian { sigma: f64 },
    Gamma { shape: f64 },
    Poisson,
    Binomial { trials: u64 },
    NegBinomial { failures: f64 },
}

/// One member of the natural exponential family in dimension `d`.
///
/// Immutable after construction; all operations are pure. Sampling takes an
/// explicit seed and owns a local generator, so concurrent use needs no
/// synchronization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyModel {
    nuisance: Nuisance,
    dim: usize,
}

/// A point of the natural-parameter domain.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalPoint {
    theta: Vec<f64>,
}

impl NaturalPoint {
    /// Wraps `theta` after validating it against the model's natural domain.
    pub fn new(model: &FamilyModel, theta: Vec<f64>) -> Result<Self> {
        model.check_dim(theta.len())?;
        model.theta_domain_check(&theta)?;
        Ok(NaturalPoint { theta })
    }

    pub fn values(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_values(self) -> Vec<f64> {
        self.theta
    }
}

impl FamilyModel {
    pub fn gaussian(dim: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::domain(format!("gaussian requires sigma > 0, got {sigma}")));
        }
        Self::with(Nuisance::Gaussian { sigma }, dim)
    }

    pub fn gamma(dim: usize, shape: f64) -> Result<Self> {
        if !(shape > 0.0) || !shape.is_finite() {
            return Err(Error::domain(format!("gamma requires shape L > 0, got {shape}")));
        }
        Self::with(Nuisance::Gamma { shape }, dim)
    }

    pub fn poisson(dim: usize) -> Result<Self> {
        Self::with(Nuisance::Poisson, dim)
    }

    pub fn binomial(dim: usize, trials: u64) -> Result<Self> {
        if trials == 0 {
            return Err(Error::domain("binomial requires trials n >= 1"));
        }
        Self::with(Nuisance::Binomial { trials }, dim)
    }

    pub fn neg_binomial(dim: usize, failures: f64) -> Result<Self> {
        if !(failures > 0.0) || !failures.is_finite() {
            return Err(Error::domain(format!(
                "negative binomial requires failures r > 0, got {failures}"
            )));
        }
        Self::with(Nuisance::NegBinomial { failures }, dim)
    }

    fn with(nuisance: Nuisance, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("dimension must be positive"));
        }
        Ok(FamilyModel { nuisance, dim })
    }

    pub fn kind(&self) -> FamilyKind {
        match self.nuisance {
            Nuisance::Gaussian { .. } => FamilyKind::Gaussian,
            Nuisance::Gamma { .. } => FamilyKind::Gamma,
            Nuisance::Poisson => FamilyKind::Poisson,
            Nuisance::Binomial { .. } => FamilyKind::Binomial,
            Nuisance::NegBinomial { .. } => FamilyKind::NegBinomial,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Same family and nuisance parameters, different dimension.
    pub fn with_dim(&self, dim: usize) -> Result<Self> {
        Self::with(self.nuisance, dim)
    }

    /// Gaussian standard deviation, if this is the Gaussian family.
    pub fn sigma(&self) -> Option<f64> {
        match self.nuisance {
            Nuisance::Gaussian { sigma } => Some(sigma),
            _ => None,
        }
    }

    /// Gamma shape parameter L, if this is the Gamma family.
    pub fn gamma_shape(&self) -> Option<f64> {
        match self.nuisance {
            Nuisance::Gamma { shape } => Some(shape),
            _ => None,
        }
    }

    /// Negative-binomial failure count r, if applicable.
    pub fn negbin_failures(&self) -> Option<f64> {
        match self.nuisance {
            Nuisance::NegBinomial { failures } => Some(failures),
            _ => None,
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind(), FamilyKind::Gaussian | FamilyKind::Gamma)
    }

    pub fn is_discrete(&self) -> bool {
        !self.is_continuous()
    }

    /// True when the mean domain is an open subset of the positive reals.
    pub fn positive_mean_domain(&self) -> bool {
        !matches!(self.kind(), FamilyKind::Gaussian)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::domain(format!(
                "expected dimension {}, got vector of length {len}",
                self.dim
            )));
        }
        Ok(())
    }

    // ---- scalar pieces -------------------------------------------------

    fn mu_ok(&self, m: f64) -> bool {
        if !m.is_finite() {
            return false;
        }
        match self.nuisance {
            Nuisance::Gaussian { .. } => true,
            Nuisance::Gamma { .. } | Nuisance::Poisson | Nuisance::NegBinomial { .. } => m > 0.0,
            Nuisance::Binomial { trials } => m > 0.0 && m < trials as f64,
        }
    }

    fn theta_ok(&self, t: f64) -> bool {
        if !t.is_finite() {
            return false;
        }
        match self.nuisance {
            Nuisance::Gaussian { .. } | Nuisance::Poisson | Nuisance::Binomial { .. } => true,
            Nuisance::Gamma { .. } | Nuisance::NegBinomial { .. } => t < 0.0,
        }
    }

    fn y_ok(&self, y: f64) -> bool {
        if !y.is_finite() {
            return false;
        }
        match self.nuisance {
            Nuisance::Gaussian { .. } => true,
            Nuisance::Gamma { .. } => y > 0.0,
            Nuisance::Poisson | Nuisance::NegBinomial { .. } => y >= 0.0 && y.fract() == 0.0,
            Nuisance::Binomial { trials } => {
                y >= 0.0 && y <= trials as f64 && y.fract() == 0.0
            }
        }
    }

    fn phi_scalar(&self, m: f64) -> f64 {
        match self.nuisance {
            Nuisance::Gaussian { sigma } => m / (sigma * sigma),
            Nuisance::Gamma { shape } => -shape / m,
            Nuisance::Poisson => m.ln(),
            Nuisance::Binomial { trials } => (m / (trials as f64 - m)).ln(),
            Nuisance::NegBinomial { failures } => (m / (failures + m)).ln(),
        }
    }

    fn a_scalar(&self, t: f64) -> f64 {
        match self.nuisance {
            Nuisance::Gaussian { sigma } => sigma * sigma * t * t / 2.0,
            Nuisance::Gamma { shape } => -shape * (-t / shape).ln(),
            Nuisance::Poisson => t.exp(),
            // n log(1 + e^t), evaluated stably on both tails.
            Nuisance::Binomial { trials } => {
                let n = trials as f64;
                if t > 0.0 {
                    n * (t + (-t).exp().ln_1p())
                } else {
                    n * t.exp().ln_1p()
                }
            }
            Nuisance::NegBinomial { failures } => -failures * (-t.exp()).ln_1p(),
        }
    }

    fn a_prime_scalar(&self, t: f64) -> f64 {
        match self.nuisance {
            Nuisance::Gaussian { sigma } => sigma * sigma * t,
            Nuisance::Gamma { shape } => -shape / t,
            Nuisance::Poisson => t.exp(),
            Nuisance::Binomial { trials } => {
                let n = trials as f64;
                n / (1.0 + (-t).exp())
            }
            Nuisance::NegBinomial { failures } => {
                let e = t.exp();
                failures * e / (1.0 - e)
            }
        }
    }

    fn lambda_scalar(&self, m: f64) -> f64 {
        match self.nuisance {
            Nuisance::Gaussian { sigma } => sigma * sigma,
            Nuisance::Gamma { shape } => m * m / shape,
            Nuisance::Poisson => m,
            Nuisance::Binomial { trials } => m - m * m / trials as f64,
            Nuisance::NegBinomial { failures } => m + m * m / failures,
        }
    }

    fn phi_prime_scalar(&self, m: f64) -> f64 {
        match self.nuisance {
            Nuisance::Gaussian { sigma } => 1.0 / (sigma * sigma),
            Nuisance::Gamma { shape } => shape / (m * m),
            Nuisance::Poisson => 1.0 / m,
            Nuisance::Binomial { trials } => {
                let n = trials as f64;
                n / (m * (n - m))
            }
            Nuisance::NegBinomial { failures } => failures / (m * (failures + m)),
        }
    }

    fn eta_scalar(&self, m: f64) -> f64 {
        match self.nuisance {
            Nuisance::Gaussian { .. } | Nuisance::Gamma { .. } => self.phi_scalar(m).exp(),
            Nuisance::Poisson => m,
            Nuisance::Binomial { trials } => m / (trials as f64 - m),
            Nuisance::NegBinomial { failures } => m / (failures + m),
        }
    }

    // ---- vector operations ---------------------------------------------

    /// Validates `mu` against the open mean domain.
    pub fn mu_domain_check(&self, mu: &[f64]) -> Result<()> {
        self.check_dim(mu.len())?;
        for (i, &m) in mu.iter().enumerate() {
            if !self.mu_ok(m) {
                return Err(Error::domain(format!(
                    "mu[{i}] = {m} outside the {} mean domain",
                    self.kind().name()
                )));
            }
        }
        Ok(())
    }

    /// Validates `theta` against the open natural domain.
    pub fn theta_domain_check(&self, theta: &[f64]) -> Result<()> {
        for (i, &t) in theta.iter().enumerate() {
            if !self.theta_ok(t) {
                return Err(Error::domain(format!(
                    "theta[{i}] = {t} outside the {} natural domain",
                    self.kind().name()
                )));
            }
        }
        Ok(())
    }

    /// Validates an observation vector (support of the distribution).
    pub fn y_domain_check(&self, y: &[f64]) -> Result<()> {
        self.check_dim(y.len())?;
        for (i, &v) in y.iter().enumerate() {
            if !self.y_ok(v) {
                return Err(Error::domain(format!(
                    "y[{i}] = {v} outside the {} observation domain",
                    self.kind().name()
                )));
            }
        }
        Ok(())
    }

    /// Canonical link `theta = phi(mu)`, entrywise.
    pub fn link(&self, mu: &[f64]) -> Result<NaturalPoint> {
        self.mu_domain_check(mu)?;
        Ok(NaturalPoint {
            theta: mu.iter().map(|&m| self.phi_scalar(m)).collect(),
        })
    }

    /// Entrywise derivative `phi'(mu)` of the canonical link.
    pub fn link_derivative(&self, mu: &[f64]) -> Result<Vec<f64>> {
        self.mu_domain_check(mu)?;
        Ok(mu.iter().map(|&m| self.phi_prime_scalar(m)).collect())
    }

    /// Log-partition `A(theta)`, summed across entries.
    pub fn log_partition(&self, theta: &NaturalPoint) -> Result<f64> {
        self.check_dim(theta.theta.len())?;
        self.theta_domain_check(&theta.theta)?;
        let terms: Vec<f64> = theta.theta.iter().map(|&t| self.a_scalar(t)).collect();
        Ok(pairwise_sum(&terms))
    }

    /// Mean parametrization `mu = grad A(theta)`; inverse of [`Self::link`].
    pub fn mean_from_natural(&self, theta: &NaturalPoint) -> Result<Vec<f64>> {
        self.check_dim(theta.theta.len())?;
        self.theta_domain_check(&theta.theta)?;
        Ok(theta.theta.iter().map(|&t| self.a_prime_scalar(t)).collect())
    }

    /// Diagonal of the variance function `Lambda(mu)`.
    pub fn variance_function(&self, mu: &[f64]) -> Result<Vec<f64>> {
        self.mu_domain_check(mu)?;
        Ok(mu.iter().map(|&m| self.lambda_scalar(m)).collect())
    }

    /// `Lambda` evaluated at observed data, boundary points allowed
    /// (a Poisson count of 0 has variance term 0).
    pub fn variance_at_data(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(y.len())?;
        Ok(y.iter().map(|&v| self.lambda_scalar(v)).collect())
    }

    /// `eta = exp(phi(mu))` entrywise, extended by continuity to the
    /// closure of the mean domain (so 0 maps to 0 for positive families).
    pub fn eta_from_mean(&self, mu: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(mu.len())?;
        Ok(mu
            .iter()
            .map(|&m| if m == 0.0 && self.positive_mean_domain() { 0.0 } else { self.eta_scalar(m) })
            .collect())
    }

    /// KL divergence `D(P_theta0 || P_theta1)` as the Bregman divergence of
    /// the log-partition: `A(t1) - A(t0) - <grad A(t0), t1 - t0>`.
    ///
    /// Nonnegative, zero iff the two points coincide.
    pub fn kl_divergence(&self, theta0: &NaturalPoint, theta1: &NaturalPoint) -> Result<f64> {
        self.check_dim(theta0.theta.len())?;
        self.check_dim(theta1.theta.len())?;
        self.theta_domain_check(&theta0.theta)?;
        self.theta_domain_check(&theta1.theta)?;
        let terms: Vec<f64> = theta0
            .theta
            .iter()
            .zip(&theta1.theta)
            .map(|(&t0, &t1)| {
                self.a_scalar(t1) - self.a_scalar(t0) - self.a_prime_scalar(t0) * (t1 - t0)
            })
            .collect();
        // Cancellation can leave a tiny negative residue for near-equal points.
        Ok(pairwise_sum(&terms).max(0.0))
    }

    /// Base-measure score `grad h(y) / h(y)`, entrywise.
    ///
    /// Defined for the continuous families only: `-y / sigma^2` for Gaussian,
    /// `(L - 1) / y` for Gamma.
    pub fn base_measure_score(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(y.len())?;
        match self.nuisance {
            Nuisance::Gaussian { sigma } => {
                Ok(y.iter().map(|&v| -v / (sigma * sigma)).collect())
            }
            Nuisance::Gamma { shape } => {
                for (i, &v) in y.iter().enumerate() {
                    if !(v > 0.0) {
                        return Err(Error::domain(format!(
                            "base measure score needs y[{i}] > 0 for gamma, got {v}"
                        )));
                    }
                }
                Ok(y.iter().map(|&v| (shape - 1.0) / v).collect())
            }
            _ => Err(Error::UnsupportedFamily {
                family: self.kind().name(),
                op: "base_measure_score",
            }),
        }
    }

    /// Draws one entrywise-independent observation with mean `mu`.
    pub fn sample(&self, mu: &[f64], seed: u64) -> Result<Vec<f64>> {
        self.mu_domain_check(mu)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(mu.len());
        match self.nuisance {
            Nuisance::Gaussian { sigma } => {
                let normal = Normal::new(0.0, sigma).map_err(|e| Error::Numerical(e.to_string()))?;
                for &m in mu {
                    out.push(m + normal.sample(&mut rng));
                }
            }
            Nuisance::Gamma { shape } => {
                for &m in mu {
                    let g = Gamma::new(shape, m / shape)
                        .map_err(|e| Error::Numerical(e.to_string()))?;
                    out.push(g.sample(&mut rng));
                }
            }
            Nuisance::Poisson => {
                for &m in mu {
                    let p = Poisson::new(m).map_err(|e| Error::Numerical(e.to_string()))?;
                    let v: f64 = p.sample(&mut rng);
                    out.push(v);
                }
            }
            Nuisance::Binomial { trials } => {
                for &m in mu {
                    let b = Binomial::new(trials, m / trials as f64)
                        .map_err(|e| Error::Numerical(e.to_string()))?;
                    out.push(b.sample(&mut rng) as f64);
                }
            }
            // Gamma-Poisson mixture: G ~ Gamma(r, mu/r), Y | G ~ Poisson(G).
            Nuisance::NegBinomial { failures } => {
                for &m in mu {
                    let g = Gamma::new(failures, m / failures)
                        .map_err(|e| Error::Numerical(e.to_string()))?;
                    let rate = g.sample(&mut rng);
                    if rate > 0.0 {
                        let p = Poisson::new(rate).map_err(|e| Error::Numerical(e.to_string()))?;
                        let v: f64 = p.sample(&mut rng);
                        out.push(v);
                    } else {
                        out.push(0.0);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nat(model: &FamilyModel, theta: &[f64]) -> NaturalPoint {
        NaturalPoint::new(model, theta.to_vec()).unwrap()
    }

    #[test]
    fn link_matches_catalog() {
        let gauss = FamilyModel::gaussian(1, 2.0).unwrap();
        assert!((gauss.link(&[4.0]).unwrap().values()[0] - 1.0).abs() < 1e-15);

        let gamma = FamilyModel::gamma(1, 3.0).unwrap();
        assert!((gamma.link(&[1.0]).unwrap().values()[0] + 3.0).abs() < 1e-15);

        let poisson = FamilyModel::poisson(1).unwrap();
        assert!((poisson.link(&[1.0]).unwrap().values()[0]).abs() < 1e-15);
    }

    #[test]
    fn log_partition_matches_catalog() {
        let poisson = FamilyModel::poisson(1).unwrap();
        assert!((poisson.log_partition(&nat(&poisson, &[0.0])).unwrap() - 1.0).abs() < 1e-15);

        let gauss = FamilyModel::gaussian(1, 1.0).unwrap();
        assert_eq!(gauss.log_partition(&nat(&gauss, &[0.0])).unwrap(), 0.0);

        // -2 log(2/2) = 0
        let gamma = FamilyModel::gamma(1, 2.0).unwrap();
        assert!((gamma.log_partition(&nat(&gamma, &[-2.0])).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn mean_from_natural_matches_catalog() {
        let poisson = FamilyModel::poisson(1).unwrap();
        assert!((poisson.mean_from_natural(&nat(&poisson, &[0.0])).unwrap()[0] - 1.0).abs() < 1e-15);

        let gamma = FamilyModel::gamma(1, 3.0).unwrap();
        assert!((gamma.mean_from_natural(&nat(&gamma, &[-3.0])).unwrap()[0] - 1.0).abs() < 1e-15);

        let gauss = FamilyModel::gaussian(1, 2.0).unwrap();
        assert!((gauss.mean_from_natural(&nat(&gauss, &[1.0])).unwrap()[0] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn variance_function_matches_catalog() {
        let gamma = FamilyModel::gamma(1, 4.0).unwrap();
        assert!((gamma.variance_function(&[2.0]).unwrap()[0] - 1.0).abs() < 1e-15);

        let poisson = FamilyModel::poisson(1).unwrap();
        assert!((poisson.variance_function(&[5.0]).unwrap()[0] - 5.0).abs() < 1e-15);

        // n = 10, mu = 5 (p = 0.5): mu - mu^2/n = 2.5
        let binom = FamilyModel::binomial(1, 10).unwrap();
        assert!((binom.variance_function(&[5.0]).unwrap()[0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn kl_of_identical_points_is_zero() {
        for model in [
            FamilyModel::gaussian(2, 1.3).unwrap(),
            FamilyModel::gamma(2, 3.0).unwrap(),
            FamilyModel::poisson(2).unwrap(),
            FamilyModel::binomial(2, 7).unwrap(),
            FamilyModel::neg_binomial(2, 2.5).unwrap(),
        ] {
            let theta = model.link(&[1.0, 2.0]).unwrap();
            assert_eq!(model.kl_divergence(&theta, &theta).unwrap(), 0.0);
        }
    }

    #[test]
    fn kl_gaussian_closed_form() {
        // (mu1 - mu0)^2 / (2 sigma^2) = 4 / 2 = 2
        let gauss = FamilyModel::gaussian(1, 1.0).unwrap();
        let t0 = gauss.link(&[0.0]).unwrap();
        let t1 = gauss.link(&[2.0]).unwrap();
        assert!((gauss.kl_divergence(&t0, &t1).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kl_poisson_closed_form() {
        // mu1 - mu0 - mu0 (log mu1 - log mu0) with mu0 = 1, mu1 = e: e - 2
        let poisson = FamilyModel::poisson(1).unwrap();
        let t0 = poisson.link(&[1.0]).unwrap();
        let t1 = poisson.link(&[std::f64::consts::E]).unwrap();
        let expect = std::f64::consts::E - 2.0;
        assert!((poisson.kl_divergence(&t0, &t1).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn base_measure_score_values() {
        let gauss = FamilyModel::gaussian(1, 1.0).unwrap();
        assert_eq!(gauss.base_measure_score(&[0.0]).unwrap()[0], 0.0);

        let gamma3 = FamilyModel::gamma(1, 3.0).unwrap();
        assert!((gamma3.base_measure_score(&[2.0]).unwrap()[0] - 1.0).abs() < 1e-15);

        let gamma1 = FamilyModel::gamma(1, 1.0).unwrap();
        assert_eq!(gamma1.base_measure_score(&[5.0]).unwrap()[0], 0.0);

        let poisson = FamilyModel::poisson(1).unwrap();
        assert!(matches!(
            poisson.base_measure_score(&[1.0]),
            Err(Error::UnsupportedFamily { .. })
        ));
    }

    #[test]
    fn domain_errors_are_strict() {
        let gamma = FamilyModel::gamma(1, 2.0).unwrap();
        assert!(gamma.link(&[0.0]).is_err());
        assert!(gamma.link(&[-1.0]).is_err());
        assert!(NaturalPoint::new(&gamma, vec![0.0]).is_err());
        assert!(FamilyModel::gaussian(1, 0.0).is_err());

        let binom = FamilyModel::binomial(1, 10).unwrap();
        assert!(binom.link(&[10.0]).is_err());
        assert!(binom.link(&[5.0]).is_ok());
    }

    #[test]
    fn link_and_mean_round_trip() {
        let cases: Vec<(FamilyModel, Vec<f64>)> = vec![
            (FamilyModel::gaussian(1, 2.0).unwrap(), vec![-3.0, -0.1, 0.2, 7.5]),
            (FamilyModel::gamma(1, 3.0).unwrap(), vec![0.01, 0.5, 1.0, 42.0]),
            (FamilyModel::poisson(1).unwrap(), vec![0.01, 1.0, 9.0, 300.0]),
            (FamilyModel::binomial(1, 12).unwrap(), vec![0.5, 3.0, 11.2]),
            (FamilyModel::neg_binomial(1, 2.5).unwrap(), vec![0.1, 1.0, 50.0]),
        ];
        for (model, mus) in cases {
            for m in mus {
                let theta = model.link(&[m]).unwrap();
                let back = model.mean_from_natural(&theta).unwrap()[0];
                assert!(
                    (back - m).abs() <= 1e-10 * m.abs().max(1.0),
                    "{}: round trip {m} -> {back}",
                    model.kind().name()
                );
                let theta2 = model.link(&[back]).unwrap().values()[0];
                assert!((theta2 - theta.values()[0]).abs() <= 1e-10 * theta.values()[0].abs().max(1.0));
            }
        }
    }

    #[test]
    fn log_partition_is_convex_on_slices() {
        let cases: Vec<(FamilyModel, Vec<f64>)> = vec![
            (FamilyModel::gaussian(1, 1.5).unwrap(), vec![-2.0, 0.0, 3.0]),
            (FamilyModel::gamma(1, 2.0).unwrap(), vec![-5.0, -1.0, -0.2]),
            (FamilyModel::poisson(1).unwrap(), vec![-1.0, 0.0, 2.0]),
            (FamilyModel::binomial(1, 9).unwrap(), vec![-2.0, 0.0, 2.0]),
            (FamilyModel::neg_binomial(1, 3.0).unwrap(), vec![-3.0, -1.0, -0.1]),
        ];
        let h = 1e-4;
        for (model, thetas) in cases {
            for t in thetas {
                let f = |x: f64| model.a_scalar(x);
                let second = (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h);
                assert!(second >= -1e-6, "{}: A'' at {t} = {second}", model.kind().name());
            }
        }
    }

    #[test]
    fn kl_local_quadratic_matches_variance_function() {
        // kl(theta, theta + t d) / t^2 -> 0.5 d' Hess(A) d, and Hess(A) at
        // theta equals Lambda(grad A(theta)).
        let cases: Vec<(FamilyModel, Vec<f64>)> = vec![
            (FamilyModel::gaussian(3, 1.5).unwrap(), vec![-0.5, 0.3, 1.0]),
            (FamilyModel::gamma(3, 3.0).unwrap(), vec![-2.0, -1.0, -0.5]),
            (FamilyModel::poisson(3).unwrap(), vec![-0.2, 0.5, 1.1]),
            (FamilyModel::binomial(3, 8).unwrap(), vec![-1.0, 0.2, 0.8]),
            (FamilyModel::neg_binomial(3, 2.0).unwrap(), vec![-2.0, -0.8, -0.3]),
        ];
        let t = 1e-4;
        let delta = [0.7, -1.2, 0.4];
        for (model, theta0) in cases {
            let p0 = nat(&model, &theta0);
            let shifted: Vec<f64> = theta0.iter().zip(&delta).map(|(a, d)| a + t * d).collect();
            let p1 = nat(&model, &shifted);
            let kl = model.kl_divergence(&p0, &p1).unwrap();
            let mu0 = model.mean_from_natural(&p0).unwrap();
            let lam = model.variance_function(&mu0).unwrap();
            let quad: f64 = 0.5 * delta.iter().zip(&lam).map(|(d, l)| d * d * l).sum::<f64>();
            let ratio = kl / (t * t);
            assert!(
                (ratio - quad).abs() <= 1e-3 * quad.abs(),
                "{}: ratio {ratio} vs quad {quad}",
                model.kind().name()
            );
        }
    }

    #[test]
    fn sampling_moments_match_mean_and_variance_function() {
        let n = 100_000usize;
        let cases: Vec<(FamilyModel, f64)> = vec![
            (FamilyModel::gaussian(n, 2.0).unwrap(), 3.0),
            (FamilyModel::gamma(n, 3.0).unwrap(), 2.0),
            (FamilyModel::poisson(n).unwrap(), 4.0),
            (FamilyModel::binomial(n, 10).unwrap(), 4.0),
            (FamilyModel::neg_binomial(n, 3.0).unwrap(), 2.0),
        ];
        let rel = 4.0 / (n as f64).sqrt();
        for (model, m) in cases {
            let mu = vec![m; n];
            let y = model.sample(&mu, 1234).unwrap();
            let mean = pairwise_sum(&y) / n as f64;
            let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            let lam = model.variance_function(&[m]).unwrap()[0];
            assert!(
                (mean - m).abs() <= rel * m,
                "{}: mean {mean} vs {m}",
                model.kind().name()
            );
            assert!(
                (var - lam).abs() <= rel * lam,
                "{}: var {var} vs {lam}",
                model.kind().name()
            );
        }
    }

    #[test]
    fn poisson_sample_mean_within_clt_bound() {
        let n = 100_000usize;
        let model = FamilyModel::poisson(n).unwrap();
        let y = model.sample(&vec![3.0; n], 99).unwrap();
        let mean = pairwise_sum(&y) / n as f64;
        let bound = 4.0 * (3.0 / n as f64).sqrt();
        assert!((mean - 3.0).abs() < bound, "mean {mean}");
    }

    #[test]
    fn gamma_shape_one_is_exponential() {
        // Empirical CDF at 1 for unit-mean draws should be near 1 - exp(-1).
        let n = 100_000usize;
        let model = FamilyModel::gamma(n, 1.0).unwrap();
        let y = model.sample(&vec![1.0; n], 7).unwrap();
        let frac = y.iter().filter(|&&v| v <= 1.0).count() as f64 / n as f64;
        let expect = 1.0 - (-1.0f64).exp();
        assert!((frac - expect).abs() < 0.01, "cdf {frac} vs {expect}");
    }

    /// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
    fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> (f64, f64) {
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (n1, n2) = (a.len(), b.len());
        let (mut i, mut j) = (0usize, 0usize);
        let mut d: f64 = 0.0;
        while i < n1 && j < n2 {
            let x = a[i].min(b[j]);
            while i < n1 && a[i] <= x {
                i += 1;
            }
            while j < n2 && b[j] <= x {
                j += 1;
            }
            let diff = (i as f64 / n1 as f64 - j as f64 / n2 as f64).abs();
            d = d.max(diff);
        }
        let ne = (n1 as f64 * n2 as f64) / (n1 + n2) as f64;
        let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
        let mut p = 0.0;
        for k in 1..=100 {
            let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k as f64 * lambda).powi(2)).exp();
            p += term;
        }
        (d, p.clamp(0.0, 1.0))
    }

    #[test]
    fn gamma_matches_scaled_mean_of_exponentials() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Exp};
        let n = 2000usize;
        let l = 3usize;
        let mu = 2.0;

        let model = FamilyModel::gamma(n, l as f64).unwrap();
        let mut a = model.sample(&vec![mu; n], 31).unwrap();

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(32);
        let exp = Exp::new(1.0).unwrap();
        let mut b: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = (0..l).map(|_| exp.sample(&mut rng)).sum();
                mu * s / l as f64
            })
            .collect();

        let (d, p) = ks_two_sample(&mut a, &mut b);
        assert!(p > 0.01, "KS d = {d}, p = {p}");
    }

    #[test]
    fn eta_matches_exp_link() {
        let poisson = FamilyModel::poisson(1).unwrap();
        assert_eq!(poisson.eta_from_mean(&[3.0]).unwrap()[0], 3.0);
        let nb = FamilyModel::neg_binomial(1, 3.0).unwrap();
        assert!((nb.eta_from_mean(&[1.0]).unwrap()[0] - 0.25).abs() < 1e-15);
        assert_eq!(nb.eta_from_mean(&[0.0]).unwrap()[0], 0.0);
    }
}
