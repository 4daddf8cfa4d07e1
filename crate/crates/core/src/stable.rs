//! Univariate stable laws: parameters, characteristic function and a
//! Chambers-Mallows-Stuck sampler for the symmetric case.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `St(alpha, tau, sigma, mu)`: stability index, skewness, scale, shift.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    alpha: f64,
    sigma: f64,
    tau: f64,
    mu: f64,
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 2.0 {
        Ok(())
    } else {
        Err(Error::config(format!("stability index {alpha} outside (0, 2]")))
    }
}

impl StableParams {
    pub fn new(alpha: f64, tau: f64, sigma: f64, mu: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::config(format!("scale {sigma} must be positive")));
        }
        if !(-1.0..=1.0).contains(&tau) {
            return Err(Error::config(format!("skewness {tau} outside [-1, 1]")));
        }
        if !mu.is_finite() {
            return Err(Error::config("shift must be finite"));
        }
        Ok(StableParams { alpha, sigma, tau, mu })
    }

    /// `St(alpha, sigma)`, the symmetric law with characteristic function
    /// `exp(-sigma^alpha |t|^alpha)`.
    pub fn symmetric(alpha: f64, sigma: f64) -> Result<Self> {
        Self::new(alpha, 0.0, sigma, 0.0)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn is_symmetric(&self) -> bool {
        self.tau == 0.0 && self.mu == 0.0
    }

    /// Log characteristic function `psi(t)`.
    pub fn log_cf(&self, t: f64) -> Complex64 {
        if t == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let (a, s, tau, mu) = (self.alpha, self.sigma, self.tau, self.mu);
        let at = t.abs();
        let skew = if a == 1.0 {
            tau * (2.0 / PI) * t.signum() * at.ln()
        } else {
            tau * (a * FRAC_PI_2).tan() * t.signum()
        };
        let scale = if a == 1.0 { s * at } else { (s * at).powf(a) };
        Complex64::new(-scale, -scale * skew + mu * t)
    }
}

/// Characteristic function `E exp(i t A)` for `A ~ St(alpha, tau, sigma, mu)`.
pub fn cf_univariate(params: &StableParams, t: f64) -> Complex64 {
    params.log_cf(t).exp()
}

/// One draw from `St(alpha, 1)`.
///
/// Uses the Chambers-Mallows-Stuck representation; `alpha = 1` and
/// `alpha = 2` take the Cauchy and Gaussian closed forms.
pub fn sample_standard<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    if alpha == 2.0 {
        let z: f64 = StandardNormal.sample(rng);
        return std::f64::consts::SQRT_2 * z;
    }
    // V uniform on the open interval (-pi/2, pi/2)
    let v = loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break PI * (u - 0.5);
        }
    };
    if alpha == 1.0 {
        return v.tan();
    }
    let w: f64 = Exp1.sample(rng);
    let w = w.max(f64::MIN_POSITIVE);
    (alpha * v).sin() / v.cos().powf(1.0 / alpha)
        * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha)
}

/// One draw from a symmetric stable law.
pub fn sample_univariate<R: Rng + ?Sized>(params: &StableParams, rng: &mut R) -> Result<f64> {
    if !params.is_symmetric() {
        return Err(Error::input("only symmetric stable laws can be sampled"));
    }
    Ok(params.sigma * sample_standard(params.alpha, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn rejects_bad_parameters() {
        assert!(StableParams::symmetric(0.0, 1.0).is_err());
        assert!(StableParams::symmetric(2.5, 1.0).is_err());
        assert!(StableParams::symmetric(1.5, 0.0).is_err());
        assert!(StableParams::new(1.5, 1.5, 1.0, 0.0).is_err());
        assert!(StableParams::symmetric(2.0, 1.0).is_ok());
    }

    #[test]
    fn symmetric_cf_values() {
        let p = StableParams::symmetric(1.5, 1.0).unwrap();
        let cf = cf_univariate(&p, 1.0);
        assert!((cf.re - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(cf.im, 0.0);
        for params in [
            p,
            StableParams::new(1.0, 0.7, 2.0, 0.3).unwrap(),
            StableParams::new(0.6, -0.4, 0.5, -1.0).unwrap(),
        ] {
            assert_eq!(cf_univariate(&params, 0.0), Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn scale_property() {
        // St(a, tau, sigma, 0) is sigma * St(a, tau, 1, 0) for a != 1
        let wide = StableParams::new(1.5, 0.3, 2.0, 0.0).unwrap();
        let unit = StableParams::new(1.5, 0.3, 1.0, 0.0).unwrap();
        for t in [-1.7, -0.3, 0.4, 1.0, 2.5] {
            let a = cf_univariate(&wide, t);
            let b = cf_univariate(&unit, 2.0 * t);
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn alpha_one_branch_has_log_term() {
        let p = StableParams::new(1.0, 0.5, 1.0, 0.0).unwrap();
        let t = 2.0f64;
        let expected = Complex64::new(-t, -t * 0.5 * (2.0 / PI) * t.ln()).exp();
        assert!((cf_univariate(&p, t) - expected).norm() < 1e-15);
    }

    #[test]
    fn rejects_asymmetric_sampling() {
        let p = StableParams::new(1.5, 0.5, 1.0, 0.0).unwrap();
        assert!(sample_univariate(&p, &mut SeedStream::new(1).rng()).is_err());
    }

    fn draws(alpha: f64, n: usize, seed: u64) -> Vec<f64> {
        let p = StableParams::symmetric(alpha, 1.0).unwrap();
        let mut rng = SeedStream::new(seed).rng();
        (0..n).map(|_| sample_univariate(&p, &mut rng).unwrap()).collect()
    }

    #[test]
    fn gaussian_case_has_variance_two() {
        let x = draws(2.0, 100_000, 3);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
        assert!((var - 2.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn cauchy_case_quartiles() {
        let mut x = draws(1.0, 100_000, 4);
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q1 = x[x.len() / 4];
        let q3 = x[3 * x.len() / 4];
        assert!((q1 + 1.0).abs() < 0.05 && (q3 - 1.0).abs() < 0.05, "{q1} {q3}");
    }

    #[test]
    fn half_alpha_empirical_cf() {
        let x = draws(0.5, 100_000, 5);
        let re = x.iter().map(|v| v.cos()).sum::<f64>() / x.len() as f64;
        assert!((re - (-1.0f64).exp()).abs() < 0.01, "{re}");
    }
}
