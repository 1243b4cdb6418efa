//! Residual whiteness analysis and the training/validation report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::plants::SubsystemId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidateError {
    #[error("{n} samples are too few for {max_lag} lags")]
    TooFewSamples { n: usize, max_lag: usize },
    #[error("confidence level {0} must lie in (0, 1/sqrt(2 pi))")]
    AlphaOutOfRange(f64),
    #[error("incomplete run: missing {0}")]
    IncompleteRun(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Biased residual autocorrelation `R(τ) = (1/N) Σ_{t=τ}^{N-1} e(t) e(t-τ)`
/// for `τ = 0..=max_lag`.
pub fn autocorrelation(e: &[f64], max_lag: usize) -> Result<Vec<f64>, ValidateError> {
    let n = e.len();
    if max_lag < 1 || n <= max_lag {
        return Err(ValidateError::TooFewSamples { n, max_lag });
    }
    Ok((0..=max_lag)
        .map(|tau| e[tau..].iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect())
}

/// Root of `exp(-β²/2) / sqrt(2π) = α` for `β > 0`, by bisection.
pub fn beta_for_alpha(alpha: f64) -> Result<f64, ValidateError> {
    let peak = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    if !(alpha > 0.0 && alpha < peak) {
        return Err(ValidateError::AlphaOutOfRange(alpha));
    }
    let g = |b: f64| peak * (-b * b / 2.0).exp() - alpha;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while g(hi) > 0.0 {
        hi *= 2.0;
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Which acceptance threshold the whiteness statistic is compared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// `β²`, with `β` solving the normal-density condition above.
    #[default]
    #[serde(rename = "beta2")]
    BetaSquared,
    /// Upper `α` quantile of `χ²(M)`.
    Chi2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WhitenessConfig {
    pub max_lag: usize,
    pub alpha: f64,
    pub threshold_mode: ThresholdMode,
    pub remove_mean: bool,
}

impl Default for WhitenessConfig {
    fn default() -> Self {
        Self {
            max_lag: 25,
            alpha: 0.01,
            threshold_mode: ThresholdMode::BetaSquared,
            remove_mean: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitenessResult {
    pub autocorr: Vec<f64>,
    /// `N / R(0)² · Σ_{τ=1}^{M} R(τ)²`
    pub statistic: f64,
    pub beta_squared: f64,
    pub chi2_threshold: f64,
    pub threshold_mode: ThresholdMode,
    /// Threshold the verdict used.
    pub threshold: f64,
    pub confidence_alpha: f64,
    pub pass: bool,
    /// Half-width of the per-lag band for `R(τ)/R(0)`: `β / sqrt(N)`.
    pub band: f64,
    pub samples: usize,
}

impl WhitenessResult {
    pub fn normalized(&self) -> Vec<f64> {
        let r0 = self.autocorr[0];
        self.autocorr.iter().map(|r| r / r0).collect()
    }

    pub fn pass_beta_squared(&self) -> bool {
        self.statistic < self.beta_squared
    }

    pub fn pass_chi2(&self) -> bool {
        self.statistic < self.chi2_threshold
    }
}

/// Portmanteau whiteness test of a residual sequence.
pub fn whiteness_test(e: &[f64], cfg: &WhitenessConfig) -> Result<WhitenessResult, ValidateError> {
    let beta = beta_for_alpha(cfg.alpha)?;
    let n = e.len();
    let centered: Vec<f64>;
    let e = if cfg.remove_mean && n > 0 {
        let m = e.iter().sum::<f64>() / n as f64;
        centered = e.iter().map(|v| v - m).collect();
        &centered[..]
    } else {
        e
    };
    let r = autocorrelation(e, cfg.max_lag)?;
    let statistic = if r[0] > 0.0 {
        n as f64 / (r[0] * r[0]) * r[1..].iter().map(|v| v * v).sum::<f64>()
    } else {
        f64::INFINITY
    };
    let chi2_threshold = ChiSquared::new(cfg.max_lag as f64)
        .map(|d| d.inverse_cdf(1.0 - cfg.alpha))
        .unwrap_or(f64::NAN);
    let beta_squared = beta * beta;
    let threshold = match cfg.threshold_mode {
        ThresholdMode::BetaSquared => beta_squared,
        ThresholdMode::Chi2 => chi2_threshold,
    };
    Ok(WhitenessResult {
        autocorr: r,
        statistic,
        beta_squared,
        chi2_threshold,
        threshold_mode: cfg.threshold_mode,
        threshold,
        confidence_alpha: cfg.alpha,
        pass: statistic < threshold,
        band: beta / (n as f64).sqrt(),
        samples: n,
    })
}

// ---------------------------------------------------------------------------
// Reports.

/// Inputs of one subsystem's report row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubsystemRun {
    pub subsystem: Option<SubsystemId>,
    pub training_index: Option<f64>,
    pub validation_index: Option<f64>,
    /// Validation residual of the subsystem's headline output.
    pub residual: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunMetadata {
    pub tool_version: String,
    pub seed: u64,
    pub config_digest: String,
    pub optimizer: String,
    pub data_files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemReport {
    pub id: u8,
    pub label: String,
    pub training_index: Option<f64>,
    pub validation_index: f64,
    pub index_pass: bool,
    pub whiteness: WhitenessResult,
    pub pass: bool,
}

/// One row of the parameter table: value per optimizer column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub name: String,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub metadata: RunMetadata,
    pub index_threshold: f64,
    pub whiteness_config: WhitenessConfig,
    pub subsystems: Vec<SubsystemReport>,
    pub parameters: Vec<ParameterRow>,
    pub pass: bool,
}

/// Assembles per-subsystem indices and whiteness results. A subsystem
/// passes when its validation index is below `index_threshold` and its
/// residual passes the whiteness test.
pub fn build_report(
    runs: &[SubsystemRun],
    parameters: Vec<ParameterRow>,
    metadata: RunMetadata,
    whiteness: &WhitenessConfig,
    index_threshold: f64,
) -> Result<ValidationReport, ValidateError> {
    if runs.is_empty() {
        return Err(ValidateError::IncompleteRun("subsystem runs".into()));
    }
    let mut subsystems = Vec::with_capacity(runs.len());
    for run in runs {
        let id = run
            .subsystem
            .ok_or_else(|| ValidateError::IncompleteRun("subsystem id".into()))?;
        let validation_index = run
            .validation_index
            .ok_or_else(|| ValidateError::IncompleteRun(format!("validation index of {}", id.label())))?;
        let residual = run
            .residual
            .as_ref()
            .ok_or_else(|| ValidateError::IncompleteRun(format!("residual of {}", id.label())))?;
        let w = whiteness_test(residual, whiteness)?;
        let index_pass = validation_index < index_threshold;
        subsystems.push(SubsystemReport {
            id: id.number(),
            label: id.label().to_string(),
            training_index: run.training_index,
            validation_index,
            index_pass,
            pass: index_pass && w.pass,
            whiteness: w,
        });
    }
    subsystems.sort_by_key(|s| s.id);
    let pass = subsystems.iter().all(|s| s.pass);
    Ok(ValidationReport {
        metadata,
        index_threshold,
        whiteness_config: whiteness.clone(),
        subsystems,
        parameters,
        pass,
    })
}

impl ValidationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-lag normalized autocorrelation with the confidence band, one
    /// column per subsystem.
    pub fn autocorr_csv(&self) -> String {
        let mut out = String::from("lag");
        for s in &self.subsystems {
            let _ = write!(out, ",subsystem_{}", s.id);
        }
        for s in &self.subsystems {
            let _ = write!(out, ",band_{}", s.id);
        }
        out.push('\n');
        let lags = self
            .subsystems
            .iter()
            .map(|s| s.whiteness.autocorr.len())
            .max()
            .unwrap_or(0);
        let normalized: Vec<Vec<f64>> = self.subsystems.iter().map(|s| s.whiteness.normalized()).collect();
        for tau in 0..lags {
            let _ = write!(out, "{tau}");
            for n in &normalized {
                match n.get(tau) {
                    Some(v) => {
                        let _ = write!(out, ",{v:?}");
                    }
                    None => out.push(','),
                }
            }
            for s in &self.subsystems {
                let _ = write!(out, ",{:?}", s.whiteness.band);
            }
            out.push('\n');
        }
        out
    }

    /// Error indices in the layout of the training/validation tables.
    pub fn index_csv(&self) -> String {
        let mut out = String::from("subsystem,label,training_index_percent,validation_index_percent,whiteness_statistic,threshold,pass\n");
        for s in &self.subsystems {
            let _ = writeln!(
                out,
                "{},{},{},{:?},{:?},{:?},{}",
                s.id,
                s.label,
                s.training_index.map(|v| format!("{v:?}")).unwrap_or_default(),
                s.validation_index,
                s.whiteness.statistic,
                s.whiteness.threshold,
                s.pass
            );
        }
        out
    }

    /// Writes `report.json`, `autocorr.csv` and `indices.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), ValidateError> {
        let io = |e: std::io::Error| ValidateError::Io(e.to_string());
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("report.json"), self.to_json()).map_err(io)?;
        std::fs::write(dir.join("autocorr.csv"), self.autocorr_csv()).map_err(io)?;
        std::fs::write(dir.join("indices.csv"), self.index_csv()).map_err(io)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_residual_closed_form() {
        let c = 0.3;
        let n = 50;
        let r = autocorrelation(&vec![c; n], 5).unwrap();
        for (tau, v) in r.iter().enumerate() {
            let expected = c * c * (n - tau) as f64 / n as f64;
            assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn alternating_residual() {
        let n = 1000;
        let e: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = autocorrelation(&e, 1).unwrap();
        assert!((r[1] + (n - 1) as f64 / n as f64).abs() < 1e-15);
        assert_eq!(r[0], 1.0);
    }

    #[test]
    fn too_few_samples() {
        assert_eq!(
            autocorrelation(&[1.0, 2.0], 2).unwrap_err(),
            ValidateError::TooFewSamples { n: 2, max_lag: 2 }
        );
    }

    #[test]
    fn beta_by_substitution() {
        let b = beta_for_alpha(0.01).unwrap();
        let lhs = (-b * b / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((lhs - 0.01).abs() < 1e-12);
        assert!((b * b - 7.373).abs() < 1e-3);
        assert!(matches!(beta_for_alpha(0.5), Err(ValidateError::AlphaOutOfRange(_))));
        assert!(matches!(beta_for_alpha(0.0), Err(ValidateError::AlphaOutOfRange(_))));
    }

    #[test]
    fn statistic_is_scale_invariant() {
        let e: Vec<f64> = (0..500).map(|i| ((i * 7919) % 113) as f64 - 56.0).collect();
        let cfg = WhitenessConfig::default();
        let a = whiteness_test(&e, &cfg).unwrap();
        let scaled: Vec<f64> = e.iter().map(|v| -3.5 * v).collect();
        let b = whiteness_test(&scaled, &cfg).unwrap();
        assert!((a.statistic - b.statistic).abs() < 1e-9 * a.statistic);
    }

    #[test]
    fn empty_report_is_incomplete() {
        assert!(matches!(
            build_report(&[], vec![], RunMetadata::default(), &WhitenessConfig::default(), 0.5),
            Err(ValidateError::IncompleteRun(_))
        ));
    }
}
