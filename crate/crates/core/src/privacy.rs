//! Gaussian-mechanism noise calibration and release bookkeeping.
//!
//! DP-NTK releases exactly one statistic, so the accountant is a single
//! Gaussian release: no subsampling, no composition. `sigma` is the noise
//! multiplier; the released noise has standard deviation `sigma · Δ`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_DELTA: f64 = 1e-5;

const BRACKET: (f64, f64) = (1e-4, 1e4);
const MAX_BISECTIONS: usize = 400;
const MAX_EXPANSIONS: usize = 60;
const SIGMA_RTOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Calibration {
    /// `σ = √(2 ln(1.25/δ)) / ε`, valid for ε ≤ 1.
    Classical,
    /// Smallest σ meeting the exact Gaussian-mechanism condition.
    Analytic,
}

impl fmt::Display for Calibration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Calibration::Classical => "classical",
            Calibration::Analytic => "analytic",
        })
    }
}

impl std::str::FromStr for Calibration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Calibration::Classical),
            "analytic" => Ok(Calibration::Analytic),
            _ => Err(Error::Domain(format!("unknown calibration {s:?}"))),
        }
    }
}

/// (ε, δ) guarantee, its noise multiplier, and the sensitivity it was applied at.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    pub sigma: f64,
    pub sensitivity: f64,
    pub calibration: Calibration,
}

impl PrivacyParams {
    /// Calibrate σ for (ε, δ); sensitivity starts at 0 until set.
    pub fn calibrate(epsilon: f64, delta: f64, calibration: Calibration) -> Result<Self> {
        let sigma = match calibration {
            Calibration::Classical => classical_sigma(epsilon, delta)?,
            Calibration::Analytic => analytic_sigma(epsilon, delta)?,
        };
        Ok(PrivacyParams {
            epsilon,
            delta,
            sigma,
            sensitivity: 0.0,
            calibration,
        })
    }

    pub fn with_sensitivity(mut self, sensitivity: f64) -> Self {
        self.sensitivity = sensitivity;
        self
    }

    pub fn noise_std(&self) -> f64 {
        self.sigma * self.sensitivity
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")))
    }
}

pub fn classical_sigma(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if epsilon > 1.0 {
        return Err(Error::Domain(format!(
            "classical calibration only holds for epsilon ≤ 1, got {epsilon}"
        )));
    }
    check_delta(delta)?;
    Ok((2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// δ achieved by a unit-sensitivity Gaussian mechanism with multiplier `sigma` at `epsilon`:
/// `Φ(1/(2σ) − εσ) − e^ε Φ(−1/(2σ) − εσ)`.
pub fn analytic_delta(sigma: f64, epsilon: f64) -> f64 {
    let a = 0.5 / sigma - epsilon * sigma;
    let b = -0.5 / sigma - epsilon * sigma;
    let tail = normal_cdf(b);
    let scaled = if tail == 0.0 { 0.0 } else { (epsilon + tail.ln()).exp() };
    (normal_cdf(a) - scaled).max(0.0)
}

/// Smallest σ with `analytic_delta(σ, ε) ≤ δ`, by bisection.
pub fn analytic_sigma(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Domain(format!("epsilon must be positive and finite, got {epsilon}")));
    }
    check_delta(delta)?;
    let (mut lo, mut hi) = BRACKET;
    let mut expansions = 0;
    while analytic_delta(lo, epsilon) <= delta {
        lo /= 10.0;
        expansions += 1;
        if expansions > MAX_EXPANSIONS {
            return Err(Error::Calibration("could not bracket sigma from below".into()));
        }
    }
    while analytic_delta(hi, epsilon) > delta {
        hi *= 10.0;
        expansions += 1;
        if expansions > MAX_EXPANSIONS {
            return Err(Error::Calibration("could not bracket sigma from above".into()));
        }
    }
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= SIGMA_RTOL * hi {
            return Ok(hi);
        }
        let mid = 0.5 * (lo + hi);
        if analytic_delta(mid, epsilon) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Calibration(format!(
        "bisection did not converge in {MAX_BISECTIONS} steps (ε={epsilon}, δ={delta})"
    )))
}

/// `value + N(0, (σΔ)²)` per entry.
pub fn gaussian_mechanism(value: &Tensor, sensitivity: f64, sigma: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(sensitivity >= 0.0) {
        return Err(Error::Domain(format!("sensitivity must be ≥ 0, got {sensitivity}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if sensitivity == 0.0 {
        return Ok(value.clone());
    }
    let std = sigma * sensitivity;
    let mut out = value.clone();
    for v in out.data_mut() {
        *v += std * rng.standard_normal();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReleaseRecord {
    pub budget: String,
    pub what: String,
    pub params: PrivacyParams,
}

/// Every release made against a privacy budget. A budget can be spent once.
#[derive(Debug, Default)]
pub struct ReleaseLog {
    releases: Mutex<BTreeMap<String, ReleaseRecord>>,
}

impl ReleaseLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, budget: &str, what: &str, params: PrivacyParams) -> Result<()> {
        let mut releases = self.releases.lock().expect("release log poisoned");
        if let Some(prev) = releases.get(budget) {
            return Err(Error::Privacy(format!(
                "budget {budget:?} was already spent on {:?}",
                prev.what
            )));
        }
        releases.insert(
            budget.to_string(),
            ReleaseRecord {
                budget: budget.to_string(),
                what: what.to_string(),
                params,
            },
        );
        Ok(())
    }

    pub fn records(&self) -> Vec<ReleaseRecord> {
        self.releases
            .lock()
            .expect("release log poisoned")
            .values()
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classical_closed_form() {
        let s = classical_sigma(1.0, 1e-5).unwrap();
        assert!((s - (2.0 * 125_000f64.ln()).sqrt()).abs() < 1e-15);
        assert!((s - 4.84475).abs() < 1e-4);
        assert_eq!(classical_sigma(0.5, 1e-5).unwrap(), 2.0 * s);
    }

    #[test]
    fn classical_domain() {
        assert!(matches!(classical_sigma(1.5, 1e-5), Err(Error::Domain(_))));
        assert!(classical_sigma(1.0, 1.25).is_err());
        assert!(classical_sigma(1.0, 0.0).is_err());
        assert!(classical_sigma(0.0, 1e-5).is_err());
    }

    #[test]
    fn analytic_is_tighter_and_self_consistent() {
        for eps in [0.2, 0.5, 1.0] {
            let a = analytic_sigma(eps, 1e-5).unwrap();
            assert!(a <= classical_sigma(eps, 1e-5).unwrap());
            assert!((analytic_delta(a, eps) - 1e-5).abs() < 1e-7);
        }
    }

    #[test]
    fn analytic_monotone_in_epsilon() {
        assert!(analytic_sigma(10.0, 1e-5).unwrap() < analytic_sigma(1.0, 1e-5).unwrap());
    }

    #[test]
    fn analytic_domain() {
        assert!(analytic_sigma(-1.0, 1e-5).is_err());
        assert!(analytic_sigma(1.0, 1.0).is_err());
    }

    #[test]
    fn zero_sensitivity_is_identity() {
        let v = Tensor::row_vector(vec![1.0, -2.5, 3.25]);
        let out = gaussian_mechanism(&v, 0.0, 3.0, &mut Rng::new(0)).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn mechanism_is_seeded() {
        let v = Tensor::zeros(&[3, 3]);
        let a = gaussian_mechanism(&v, 0.1, 2.0, &mut Rng::new(4)).unwrap();
        let b = gaussian_mechanism(&v, 0.1, 2.0, &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mechanism_rejects_bad_params() {
        let v = Tensor::zeros(&[2]);
        assert!(gaussian_mechanism(&v, -1.0, 1.0, &mut Rng::new(0)).is_err());
        assert!(gaussian_mechanism(&v, 1.0, 0.0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn second_release_on_same_budget_fails() {
        let log = ReleaseLog::new();
        let p = PrivacyParams::calibrate(1.0, 1e-5, Calibration::Analytic).unwrap();
        log.record("train", "embedding", p).unwrap();
        assert!(matches!(
            log.record("train", "embedding", p),
            Err(Error::Privacy(_))
        ));
        log.record("other", "embedding", p).unwrap();
        assert_eq!(log.records().len(), 2);
    }
}
