//! Run configuration: one TOML file per run, validated before any work.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::experiment::Scenario;
use crate::optim::{CsConfig, GaConfig, IdentifyConfig, OptimizerConfig, PsoConfig};
use crate::params::{Param, ParamVector};
use crate::plants::{default_table, ModelKind, OperatingPoint, SubsystemId};
use crate::validate::{ThresholdMode, WhitenessConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("{0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Which optimizer runs, with settings kept for all three.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Cs,
    Ga,
    Pso,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [OptimizerKind::Cs, OptimizerKind::Ga, OptimizerKind::Pso];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Cs => "cs",
            OptimizerKind::Ga => "ga",
            OptimizerKind::Pso => "pso",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub kind: OptimizerKind,
    pub cs: CsConfig,
    pub ga: GaConfig,
    pub pso: PsoConfig,
}

impl OptimizerSection {
    /// Settings of `kind`. The run seed replaces any seed given in the
    /// optimizer tables.
    pub fn build(&self, kind: OptimizerKind, seed: u64) -> OptimizerConfig {
        let mut c = match kind {
            OptimizerKind::Cs => OptimizerConfig::Cs(self.cs.clone()),
            OptimizerKind::Ga => OptimizerConfig::Ga(self.ga.clone()),
            OptimizerKind::Pso => OptimizerConfig::Pso(self.pso.clone()),
        };
        c.settings_mut().seed = seed;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifySection {
    pub ls_seed: bool,
    pub max_rounds: usize,
    pub zero_snap: bool,
}

impl Default for IdentifySection {
    fn default() -> Self {
        Self {
            ls_seed: true,
            max_rounds: 3,
            zero_snap: true,
        }
    }
}

/// Applied to recorded data before identification and validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Preprocess {
    /// Zero-phase Butterworth low-pass; `None` leaves the record unfiltered.
    pub cutoff_hz: Option<f64>,
    pub order: usize,
    /// Per-unit bases, channel name to base in engineering units.
    pub bases: BTreeMap<String, f64>,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            cutoff_hz: None,
            order: 4,
            bases: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataFiles {
    /// Exogenous inputs for `simulate`.
    pub input: Option<PathBuf>,
    pub training: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    /// Fitted parameter file read by `validate`.
    pub fitted: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    /// Error-index pass threshold, percent.
    pub index_threshold: f64,
    pub whiteness: WhitenessConfig,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            index_threshold: 0.5,
            whiteness: WhitenessConfig {
                threshold_mode: ThresholdMode::Chi2,
                ..WhitenessConfig::default()
            },
        }
    }
}

/// Excitation written by `gen-signal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSection {
    pub scenario: Scenario,
    /// Also simulate the plants and record their taps.
    pub simulate: bool,
    /// Measurement noise on the recorded outputs, dB. Needs `simulate`.
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub seeds: Vec<u64>,
    pub optimizers: Vec<OptimizerKind>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            optimizers: OptimizerKind::ALL.to_vec(),
        }
    }
}

/// Partial table entry; missing fields keep the default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ParamOverride {
    pub value: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub free: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Plant to work on; both when absent.
    pub model: Option<ModelKind>,
    /// Subsystem numbers 1..=5; all subsystems of the selected plants when empty.
    pub subsystems: Vec<u8>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub operating_point: OperatingPoint,
    pub params: BTreeMap<String, ParamOverride>,
    pub optimizer: OptimizerSection,
    pub identify: IdentifySection,
    pub preprocess: Preprocess,
    pub data: DataFiles,
    pub validate: ValidateSection,
    pub signal: SignalSection,
    pub compare: CompareSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: None,
            subsystems: Vec::new(),
            seed: 0,
            out_dir: PathBuf::from("govid-out"),
            operating_point: OperatingPoint::default(),
            params: BTreeMap::new(),
            optimizer: OptimizerSection::default(),
            identify: IdentifySection::default(),
            preprocess: Preprocess::default(),
            data: DataFiles::default(),
            validate: ValidateSection::default(),
            signal: SignalSection::default(),
            compare: CompareSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks everything that can be checked without data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let plants = self.plants();
        for &n in &self.subsystems {
            match SubsystemId::from_number(n) {
                None => return invalid(format!("subsystem {n} is not one of 1..=5")),
                Some(id) if !plants.contains(&id.model_kind()) => {
                    return invalid(format!("subsystem {n} does not belong to the selected model"))
                }
                _ => {}
            }
        }
        self.table()?
            .check_bounds()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for kind in OptimizerKind::ALL {
            self.optimizer
                .build(kind, self.seed)
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("[optimizer.{}] {e}", kind.name())))?;
        }
        if self.identify.max_rounds == 0 {
            return invalid("identify.max_rounds must be at least 1".into());
        }
        if let Some(fc) = self.preprocess.cutoff_hz {
            if !(fc > 0.0 && fc.is_finite()) {
                return invalid(format!("preprocess.cutoff_hz must be positive, got {fc}"));
            }
            if self.preprocess.order == 0 {
                return invalid("preprocess.order must be at least 1".into());
            }
        }
        for (name, base) in &self.preprocess.bases {
            if !(*base > 0.0 && base.is_finite()) {
                return invalid(format!("per-unit base of {name} must be positive"));
            }
        }
        let t = &self.validate.threshold_check();
        if let Err(m) = t {
            return invalid(m.clone());
        }
        if self.compare.seeds.is_empty() || self.compare.optimizers.is_empty() {
            return invalid("compare needs at least one seed and one optimizer".into());
        }
        if let Some(snr) = self.signal.snr_db {
            if snr.is_nan() {
                return invalid("signal.snr_db is NaN".into());
            }
            if !self.signal.simulate {
                return invalid("signal.snr_db needs signal.simulate = true".into());
            }
        }
        Ok(())
    }

    pub fn plants(&self) -> Vec<ModelKind> {
        match self.model {
            Some(k) => vec![k],
            None => vec![ModelKind::Ggov1, ModelKind::St6b],
        }
    }

    /// Selected subsystems in ascending order.
    pub fn subsystem_ids(&self) -> Vec<SubsystemId> {
        let mut ids: Vec<SubsystemId> = if self.subsystems.is_empty() {
            self.plants().into_iter().flat_map(SubsystemId::for_kind).collect()
        } else {
            self.subsystems.iter().filter_map(|n| SubsystemId::from_number(*n)).collect()
        };
        ids.sort();
        ids.dedup();
        ids
    }

    /// Default tables of the selected plants with the overrides applied.
    pub fn table(&self) -> Result<ParamVector, ConfigError> {
        let mut entries: Vec<Param> = Vec::new();
        for kind in self.plants() {
            entries.extend(default_table(kind).iter().cloned());
        }
        let mut table = ParamVector::new(entries);
        for (name, o) in &self.params {
            let p = table
                .get_mut(name)
                .ok_or_else(|| ConfigError::Invalid(format!("unknown parameter {name}")))?;
            if let Some(v) = o.value {
                p.value = v;
            }
            if let Some(v) = o.min {
                p.min = v;
            }
            if let Some(v) = o.max {
                p.max = v;
            }
            if let Some(v) = o.free {
                p.free = v;
            }
        }
        Ok(table)
    }

    pub fn identify_config(&self, kind: OptimizerKind, seed: u64) -> Result<IdentifyConfig, ConfigError> {
        let mut c = IdentifyConfig::new(self.table()?, self.optimizer.build(kind, seed));
        c.ls_seed = self.identify.ls_seed;
        c.max_rounds = self.identify.max_rounds;
        c.zero_snap = self.identify.zero_snap;
        Ok(c)
    }
}

impl ValidateSection {
    fn threshold_check(&self) -> Result<(), String> {
        if !(self.index_threshold > 0.0) {
            return Err("validate.index_threshold must be positive".into());
        }
        let w = &self.whiteness;
        if w.max_lag == 0 {
            return Err("validate.whiteness.max_lag must be at least 1".into());
        }
        crate::validate::beta_for_alpha(w.alpha).map_err(|e| e.to_string())?;
        Ok(())
    }
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.subsystem_ids(), SubsystemId::ALL.to_vec());
        assert_eq!(c.table().unwrap().len(), 27 + 15);
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            "bogus = 1",
            "[optimizer]\nkind = \"cs\"\nwhat = 2",
            "[optimizer.cs]\npopulaton = 10",
            "[params.K_pgov]\nvalu = 1.0",
            "[validate.whiteness]\nlags = 3",
        ] {
            assert!(matches!(RunConfig::from_toml(text), Err(ConfigError::Parse(_))), "{text}");
        }
    }

    #[test]
    fn overrides_and_selection() {
        let c = RunConfig::from_toml(
            "model = \"ggov1\"\nsubsystems = [3]\n[params.K_pgov]\nvalue = 2.0\nfree = false\n[optimizer]\nkind = \"pso\"\n[optimizer.pso]\npopulation = 12",
        )
        .unwrap();
        let t = c.table().unwrap();
        assert_eq!(t.value("K_pgov").unwrap(), 2.0);
        assert!(!t.get("K_pgov").unwrap().free);
        assert!(t.get("K_PA").is_none());
        assert_eq!(c.subsystem_ids(), vec![SubsystemId::SpeedController]);
        let o = c.optimizer.build(c.optimizer.kind, 9);
        assert_eq!(o.name(), "pso");
        assert_eq!(o.settings().population, 12);
        assert_eq!(o.settings().seed, 9);
    }

    #[test]
    fn semantic_errors() {
        for text in [
            "subsystems = [6]",
            "model = \"st6b\"\nsubsystems = [1]",
            "[params.nope]\nvalue = 1.0",
            "[params.r]\nvalue = 5.0",
            "[optimizer.cs]\np_a = 1.5",
            "[preprocess]\ncutoff_hz = -1.0",
            "[identify]\nmax_rounds = 0",
            "[signal]\nsnr_db = 40.0",
        ] {
            assert!(matches!(RunConfig::from_toml(text), Err(ConfigError::Invalid(_))), "{text}");
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.preprocess.cutoff_hz = Some(40.0);
        c.preprocess.bases.insert("p_ref".into(), 160.0);
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn digest_is_hex_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
