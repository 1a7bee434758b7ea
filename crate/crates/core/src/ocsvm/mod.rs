//! nu-parameterized one-class SVM with an RBF kernel.
//!
//! Training sees only real-image features. It separates their kernel
//! images from the origin with maximal margin; the learned function is the
//! support-vector expansion `sum_i alpha_i K(x, t_i) - rho`, nonnegative
//! inside the region occupied by real images.

mod kernel;
mod scaler;
mod solver;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use kernel::rbf_kernel;
pub use scaler::{Scaler, STD_FLOOR};

use crate::error::{Error, Result};
use crate::metrics::Label;
use kernel::{sq_dist, Gram};

pub const MODEL_VERSION: &str = "realonly-ocsvm/1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    /// `1 / (d * mean per-dimension variance)` of the standardized
    /// training features, i.e. `1/d` when no dimension is constant.
    Auto,
    Value(f64),
}

impl std::str::FromStr for Gamma {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "auto" {
            return Ok(Gamma::Auto);
        }
        let v: f64 = s.trim().parse().map_err(|_| Error::Parse {
            what: "gamma",
            reason: format!("expected `auto` or a positive number, got `{s}`"),
        })?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!("gamma must be > 0, got {v}")));
        }
        Ok(Gamma::Value(v))
    }
}

impl std::fmt::Display for Gamma {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Gamma::Auto => f.write_str("auto"),
            Gamma::Value(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcSvmConfig {
    pub nu: f64,
    pub gamma: Gamma,
    pub tol: f64,
    /// Pair-update budget; `None` means `10 * l^2`.
    pub max_iter: Option<usize>,
}

impl Default for OcSvmConfig {
    fn default() -> Self {
        Self {
            nu: 0.1,
            gamma: Gamma::Auto,
            tol: 1e-6,
            max_iter: None,
        }
    }
}

impl OcSvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(Error::invalid(format!("nu must be in (0, 1), got {}", self.nu)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == Some(0) {
            return Err(Error::invalid("max_iter must be >= 1"));
        }
        if let Gamma::Value(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::invalid(format!("gamma must be > 0, got {g}")));
            }
        }
        Ok(())
    }
}

/// How features were produced; persisted so detection reproduces them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureConfig {
    pub k: usize,
    pub extractor: String,
    pub merge: String,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            k: 32,
            extractor: "gaussian:1".into(),
            merge: "mean".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcSvmModel {
    /// Standardized support vectors.
    pub support_vectors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub gamma: f64,
    pub nu: f64,
    pub scaler: Scaler,
    pub feature: FeatureConfig,
    pub version: String,
}

/// Solver diagnostics from one training run.
#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub n_train: usize,
    pub n_support: usize,
    pub n_bounded: usize,
    pub alpha_sum: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub objective: f64,
    /// Fraction of training points with decision below `-tol`.
    pub outlier_fraction: f64,
    pub gamma: f64,
    pub rho: f64,
    /// Full coefficient vector in training order.
    #[serde(skip)]
    pub alpha: Vec<f64>,
    /// Decision value of every training point.
    #[serde(skip)]
    pub decisions: Vec<f64>,
}

pub fn train(features: &[Vec<f64>], config: &OcSvmConfig) -> Result<OcSvmModel> {
    train_with_report(features, config).map(|(m, _)| m)
}

pub fn train_with_report(features: &[Vec<f64>], config: &OcSvmConfig) -> Result<(OcSvmModel, TrainReport)> {
    config.validate()?;
    let l = features.len();
    if l < 2 {
        return Err(Error::invalid(format!("training needs at least 2 vectors, got {l}")));
    }
    if config.nu * (l as f64) < 1.0 {
        return Err(Error::invalid(format!(
            "nu * l = {} < 1: the box 1/(nu l) cannot hold a unit-sum solution",
            config.nu * l as f64
        )));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training features"));
    }
    let scaler = Scaler::fit(features)?;
    let z: Vec<Vec<f64>> = features
        .iter()
        .map(|f| scaler.transform(f))
        .collect::<Result<_>>()?;
    let gamma = match config.gamma {
        Gamma::Value(g) => g,
        Gamma::Auto => auto_gamma(&z),
    };

    let gram = Gram::new(&z, gamma);
    let max_iter = config.max_iter.unwrap_or(10 * l * l);
    let sol = solver::solve(&gram, config.nu, config.tol, max_iter)?;
    let upper = 1.0 / (config.nu * l as f64);

    let mut support_vectors = Vec::new();
    let mut alphas = Vec::new();
    for (zi, &a) in z.iter().zip(&sol.alpha) {
        if a > 0.0 {
            support_vectors.push(zi.clone());
            alphas.push(a);
        }
    }
    let decisions: Vec<f64> = sol.grad.iter().map(|g| g - sol.rho).collect();
    let outliers = decisions.iter().filter(|&&d| d < -config.tol).count();
    let report = TrainReport {
        n_train: l,
        n_support: alphas.len(),
        n_bounded: sol.alpha.iter().filter(|&&a| a >= upper).count(),
        alpha_sum: sol.alpha.iter().sum(),
        iterations: sol.iterations,
        kkt_residual: sol.kkt_gap,
        objective: sol.objective,
        outlier_fraction: outliers as f64 / l as f64,
        gamma,
        rho: sol.rho,
        alpha: sol.alpha,
        decisions,
    };
    let model = OcSvmModel {
        support_vectors,
        alphas,
        rho: sol.rho,
        gamma,
        nu: config.nu,
        scaler,
        feature: FeatureConfig::default(),
        version: MODEL_VERSION.to_string(),
    };
    Ok((model, report))
}

fn auto_gamma(z: &[Vec<f64>]) -> f64 {
    let d = z[0].len();
    let n = z.len() as f64;
    let mut total_var = 0.0;
    for j in 0..d {
        let mean = z.iter().map(|v| v[j]).sum::<f64>() / n;
        total_var += z.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / n;
    }
    let mean_var = total_var / d as f64;
    if mean_var > 0.0 {
        1.0 / (d as f64 * mean_var)
    } else {
        1.0 / d as f64
    }
}

impl OcSvmModel {
    pub fn with_feature_config(mut self, feature: FeatureConfig) -> Self {
        self.feature = feature;
        self
    }

    pub fn dim(&self) -> usize {
        self.scaler.dim()
    }

    /// `sum_i alpha_i K(x, t_i) - rho` for a raw (unstandardized) feature.
    pub fn decision(&self, feature: &[f64]) -> Result<f64> {
        if self.version != MODEL_VERSION {
            return Err(Error::VersionMismatch {
                found: self.version.clone(),
                expected: MODEL_VERSION,
            });
        }
        let z = self.scaler.transform(feature)?;
        let s: f64 = self
            .support_vectors
            .iter()
            .zip(&self.alphas)
            .map(|(sv, a)| a * (-self.gamma * sq_dist(&z, sv)).exp())
            .sum();
        Ok(s - self.rho)
    }

    /// Zero counts as real.
    pub fn predict(&self, feature: &[f64]) -> Result<Label> {
        Ok(verdict(self.decision(feature)?))
    }

    pub fn decision_batch(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        features.par_iter().map(|f| self.decision(f)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            version: self.version.clone(),
            gamma: self.gamma,
            nu: self.nu,
            rho: self.rho,
            k: self.feature.k,
            extractor: self.feature.extractor.clone(),
            merge: self.feature.merge.clone(),
            scaler_mean: self.scaler.mean.clone(),
            scaler_std: self.scaler.std.clone(),
            sv: self.support_vectors.clone(),
            alpha: self.alphas.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != MODEL_VERSION {
            return Err(Error::VersionMismatch {
                found: file.version,
                expected: MODEL_VERSION,
            });
        }
        let d = file.scaler_mean.len();
        let consistent = file.scaler_std.len() == d
            && file.sv.len() == file.alpha.len()
            && file.sv.iter().all(|v| v.len() == d)
            && file.scaler_std.iter().all(|&s| s > 0.0)
            && file.gamma > 0.0;
        if !consistent {
            return Err(Error::Parse {
                what: "model file",
                reason: "inconsistent dimensions or nonpositive scale".into(),
            });
        }
        Ok(Self {
            support_vectors: file.sv,
            alphas: file.alpha,
            rho: file.rho,
            gamma: file.gamma,
            nu: file.nu,
            scaler: Scaler {
                mean: file.scaler_mean,
                std: file.scaler_std,
            },
            feature: FeatureConfig {
                k: file.k,
                extractor: file.extractor,
                merge: file.merge,
            },
            version: file.version,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[inline]
pub fn verdict(decision: f64) -> Label {
    if decision >= 0.0 {
        Label::Real
    } else {
        Label::Generated
    }
}

/// On-disk layout; field names and order are part of the file format.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    gamma: f64,
    nu: f64,
    rho: f64,
    k: usize,
    extractor: String,
    merge: String,
    scaler_mean: Vec<f64>,
    scaler_std: Vec<f64>,
    sv: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn feasibility_and_kkt(seed in 0u64..1000, l in 10usize..80, nu in 0.05f64..0.9, d in 1usize..6) {
            prop_assume!(nu * l as f64 >= 1.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..l)
                .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let cfg = OcSvmConfig { nu, tol: 1e-6, ..Default::default() };
            let (_, report) = train_with_report(&pts, &cfg).unwrap();
            let upper = 1.0 / (nu * l as f64);
            prop_assert!((report.alpha_sum - 1.0).abs() <= 1e-9);
            prop_assert!(report.kkt_residual <= cfg.tol);
            for (&a, &dec) in report.alpha.iter().zip(&report.decisions) {
                prop_assert!(a >= 0.0 && a <= upper + 1e-12);
                if a == 0.0 {
                    prop_assert!(dec >= -cfg.tol);
                } else if a >= upper {
                    prop_assert!(dec <= cfg.tol);
                } else {
                    prop_assert!(dec.abs() <= cfg.tol);
                }
            }
        }

        #[test]
        fn sign_invariant_under_joint_rescaling(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..40)
                .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let model = train(&pts, &OcSvmConfig::default()).unwrap();
            let mut scaled = model.clone();
            scaled.alphas.iter_mut().for_each(|a| *a *= scale);
            scaled.rho *= scale;
            for _ in 0..20 {
                let q: Vec<f64> = (0..3).map(|_| 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
                let (a, b) = (model.decision(&q).unwrap(), scaled.decision(&q).unwrap());
                // the sign is preserved wherever it is not within rounding of 0
                if a.abs() > 1e-12 {
                    prop_assert_eq!(model.predict(&q).unwrap(), scaled.predict(&q).unwrap());
                }
                prop_assert!((b - a * scale).abs() <= 1e-9 * scale.max(1.0));
            }
        }
    }
}
