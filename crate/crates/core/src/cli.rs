//! The `govid` command line: simulate, identify, validate, compare and
//! gen-signal over one configuration file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{sha256_hex, ConfigError, OptimizerKind, RunConfig};
use crate::experiment::{excitation, synthesize, ExperimentError};
use crate::optim::{hybrid_identify, subsystem_error_index, IdentifyResult, OptimError};
use crate::params::ParamVector;
use crate::plants::{
    build_model, input_channels, simulate_subsystem, subsystem_view, Ggov1Params, ModelKind, PlantError,
    St6bParams, SubsystemId,
};
use crate::signals::{butterworth_lowpass, load_csv, per_unitize, write_csv, SignalError, TimeSeries};
use crate::validate::{build_report, ParameterRow, RunMetadata, SubsystemRun, ValidateError};

/// Process exit status. The numbers are stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    ValidationFailed = 1,
    Config = 2,
    Data = 3,
    Simulation = 4,
    StopUnmet = 5,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn fail(exit: Exit, message: impl Into<String>) -> CliError {
    CliError {
        exit,
        message: message.into(),
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        fail(Exit::Config, e.to_string())
    }
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        fail(Exit::Data, e.to_string())
    }
}

impl From<PlantError> for CliError {
    fn from(e: PlantError) -> Self {
        let exit = match e {
            PlantError::MissingChannel(_) | PlantError::RateMismatch { .. } => Exit::Data,
            PlantError::Param(_) => Exit::Config,
            _ => Exit::Simulation,
        };
        fail(exit, e.to_string())
    }
}

impl From<OptimError> for CliError {
    fn from(e: OptimError) -> Self {
        match e {
            OptimError::Plant(p) => p.into(),
            OptimError::InvalidConfig(_) | OptimError::BadLambda(_) | OptimError::InvalidSpace(_) | OptimError::Param(_) => {
                fail(Exit::Config, e.to_string())
            }
            other => fail(Exit::Simulation, other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Plant(p) => p.into(),
            ExperimentError::Signal(s @ (SignalError::DegeneratePeriod { .. } | SignalError::NonPositiveDt(_))) => {
                fail(Exit::Config, s.to_string())
            }
            ExperimentError::Signal(s) => fail(Exit::Simulation, s.to_string()),
        }
    }
}

impl From<ValidateError> for CliError {
    fn from(e: ValidateError) -> Self {
        let exit = match e {
            ValidateError::Io(_) => Exit::Data,
            ValidateError::AlphaOutOfRange(_) => Exit::Config,
            _ => Exit::Simulation,
        };
        fail(exit, e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    fail(Exit::Data, format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "govid", version, about = "Governor and exciter model simulation and identification")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every verb; each overrides the matching config field.
#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Subsystem number 1..=5; repeat for several.
    #[arg(long, global = true)]
    pub subsystem: Vec<u8>,
    #[arg(long, global = true, value_enum)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Start the optimizer from a random population only.
    #[arg(long, global = true)]
    pub no_ls_seed: bool,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Clone)]
pub enum Command {
    /// Simulate the plant(s) over recorded inputs and write every tap.
    Simulate {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Fit the selected subsystems to a training record.
    Identify {
        #[arg(long)]
        training: Option<PathBuf>,
    },
    /// Error indices and whiteness of fitted parameters on held-out data.
    Validate {
        #[arg(long)]
        fitted: Option<PathBuf>,
        #[arg(long)]
        validation: Option<PathBuf>,
        /// Also report training indices on this record.
        #[arg(long)]
        training: Option<PathBuf>,
    },
    /// Run several optimizers over several seeds and tabulate the results.
    Compare {
        #[arg(long)]
        training: Option<PathBuf>,
        #[arg(long)]
        validation: Option<PathBuf>,
        /// Comma-separated seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Write the pulse excitation, optionally with simulated and noisy taps.
    GenSignal {
        #[arg(long)]
        snr_db: Option<f64>,
    },
}

/// Loads the configuration and applies the command-line overrides.
pub fn resolve_config(common: &CommonArgs, command: &Command) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if !common.subsystem.is_empty() {
        cfg.subsystems = common.subsystem.clone();
    }
    if let Some(k) = common.optimizer {
        cfg.optimizer.kind = k;
        cfg.compare.optimizers = vec![k];
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.no_ls_seed {
        cfg.identify.ls_seed = false;
    }
    if let Some(d) = &common.out_dir {
        cfg.out_dir = d.clone();
    }
    let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
        if v.is_some() {
            *slot = v.clone();
        }
    };
    match command {
        Command::Simulate { input } => set(&mut cfg.data.input, input),
        Command::Identify { training } => set(&mut cfg.data.training, training),
        Command::Validate {
            fitted,
            validation,
            training,
        } => {
            set(&mut cfg.data.fitted, fitted);
            set(&mut cfg.data.validation, validation);
            set(&mut cfg.data.training, training);
        }
        Command::Compare {
            training,
            validation,
            seeds,
        } => {
            set(&mut cfg.data.training, training);
            set(&mut cfg.data.validation, validation);
            if !seeds.is_empty() {
                cfg.compare.seeds = seeds.clone();
            }
        }
        Command::GenSignal { snr_db } => {
            if snr_db.is_some() {
                cfg.signal.snr_db = *snr_db;
                cfg.signal.simulate = true;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one command. `Ok` carries the exit status of a completed run.
pub fn run(cli: &Cli) -> Result<Exit, CliError> {
    let cfg = resolve_config(&cli.common, &cli.command)?;
    match &cli.command {
        Command::Simulate { .. } => cmd_simulate(&cfg),
        Command::Identify { .. } => cmd_identify(&cfg),
        Command::Validate { .. } => cmd_validate(&cfg),
        Command::Compare { .. } => cmd_compare(&cfg),
        Command::GenSignal { .. } => cmd_gen_signal(&cfg),
    }
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| fail(Exit::Config, format!("no {what} file given (config [data] or command-line flag)")))
}

/// Reads a record and applies the configured per-unit bases and low-pass.
pub fn load_record(path: &Path, cfg: &RunConfig, filter: bool) -> Result<TimeSeries, CliError> {
    let ts = load_csv(path).map_err(|e| fail(Exit::Data, format!("{}: {e}", path.display())))?;
    let ts = if cfg.preprocess.bases.is_empty() {
        ts
    } else {
        per_unitize(&ts, &cfg.preprocess.bases)?
    };
    match cfg.preprocess.cutoff_hz {
        Some(fc) if filter => Ok(butterworth_lowpass(&ts, fc, cfg.preprocess.order)?),
        _ => Ok(ts),
    }
}

fn create_out_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    let dir = cfg.out_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Appends the channels of `other` that `base` lacks.
fn merge_new(base: &mut TimeSeries, other: &TimeSeries) -> Result<(), CliError> {
    for name in other.names() {
        if !base.contains(name) {
            let c = other.channel_meta(name).expect("listed channel").clone();
            base.push_channel(c)?;
        }
    }
    Ok(())
}

/// Digest of the settings that shape the results; the output location is
/// left out so a rerun elsewhere reproduces the same files.
fn config_digest(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.out_dir = RunConfig::default().out_dir;
    sha256_hex(c.to_toml().as_bytes())
}

fn metadata(cfg: &RunConfig, optimizer: &str, files: &[&Path]) -> Result<RunMetadata, CliError> {
    let mut data_files = BTreeMap::new();
    for path in files {
        let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
        data_files.insert(path.display().to_string(), sha256_hex(&bytes));
    }
    Ok(RunMetadata {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_digest: config_digest(cfg),
        optimizer: optimizer.to_string(),
        data_files,
    })
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Exit, CliError> {
    let path = required(&cfg.data.input, "input")?;
    let inputs = load_record(path, cfg, false)?;
    let table = cfg.table()?;
    // without a model in the config, every plant whose inputs are present
    let plants: Vec<ModelKind> = match cfg.model {
        Some(k) => vec![k],
        None => cfg
            .plants()
            .into_iter()
            .filter(|k| input_channels(*k).iter().all(|c| *c == "i_fd" || inputs.contains(c)))
            .collect(),
    };
    if plants.is_empty() {
        return Err(fail(Exit::Data, format!("{}: no plant has all of its input channels", path.display())));
    }
    let mut out = TimeSeries::new(inputs.dt())?;
    for kind in plants {
        let model = build_model(kind, &table, inputs.dt(), cfg.operating_point)?;
        merge_new(&mut out, &model.simulate(&inputs)?)?;
    }
    let dir = create_out_dir(cfg)?;
    let file = dir.join("simulated.csv");
    write_csv(&out, &file).map_err(|e| fail(Exit::Data, e.to_string()))?;
    println!("wrote {} ({} samples, {} channels)", file.display(), out.len(), out.channels().len());
    Ok(Exit::Ok)
}

#[derive(Debug, Serialize)]
struct IdentifySummary {
    id: u8,
    label: String,
    free_parameters: Vec<String>,
    training_index_percent: f64,
    reached_threshold: bool,
    stop_threshold: f64,
    generations: usize,
    evaluations: usize,
    ls_estimates: Option<BTreeMap<String, f64>>,
    ls_error: Option<String>,
}

#[derive(Debug, Serialize)]
struct IdentifyReport {
    metadata: RunMetadata,
    complete: bool,
    subsystems: Vec<IdentifySummary>,
}

fn identify_all(
    cfg: &RunConfig,
    data: &TimeSeries,
    kind: OptimizerKind,
    seed: u64,
) -> Result<Vec<IdentifyResult>, CliError> {
    let icfg = cfg.identify_config(kind, seed)?;
    let mut out = Vec::new();
    for id in cfg.subsystem_ids() {
        log::info!("identifying {} with {}", id.label(), kind.name());
        out.push(hybrid_identify(id.model_kind(), id, data, &icfg)?);
    }
    Ok(out)
}

/// Configured table with every fitted value written in.
fn fitted_table(cfg: &RunConfig, results: &[IdentifyResult]) -> Result<ParamVector, CliError> {
    let mut table = cfg.table()?;
    for r in results {
        for name in &r.names {
            let v = r.params.value(name).map_err(|e| fail(Exit::Simulation, e.to_string()))?;
            table.set_value(name, v).map_err(|e| fail(Exit::Simulation, e.to_string()))?;
        }
    }
    Ok(table)
}

/// Per-generation best-so-far fitness, one column per subsystem.
fn history_csv(results: &[IdentifyResult]) -> String {
    let histories: Vec<Vec<f64>> = results.iter().map(IdentifyResult::history).collect();
    let mut out = String::from("generation");
    for r in results {
        let _ = write!(out, ",subsystem_{}", r.subsystem.number());
    }
    out.push('\n');
    let rows = histories.iter().map(Vec::len).max().unwrap_or(0);
    for g in 0..rows {
        let _ = write!(out, "{g}");
        for h in &histories {
            match h.get(g) {
                Some(v) => {
                    let _ = write!(out, ",{v:?}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

pub fn cmd_identify(cfg: &RunConfig) -> Result<Exit, CliError> {
    let path = required(&cfg.data.training, "training")?;
    let data = load_record(path, cfg, true)?;
    let kind = cfg.optimizer.kind;
    let results = identify_all(cfg, &data, kind, cfg.seed)?;
    let table = fitted_table(cfg, &results)?;
    let meta = metadata(cfg, kind.name(), &[path])?;
    let threshold = cfg.optimizer.build(kind, cfg.seed).settings().stop_threshold;
    let unmet: Vec<u8> = results
        .iter()
        .filter(|r| !r.reached_threshold)
        .map(|r| r.subsystem.number())
        .collect();

    let dir = create_out_dir(cfg)?;
    let mut fitted = format!(
        "# govid {} fitted parameters\n# optimizer = {}, seed = {}, config sha256 = {}\n",
        meta.tool_version,
        kind.name(),
        cfg.seed,
        meta.config_digest
    );
    if !unmet.is_empty() {
        let _ = writeln!(fitted, "# INCOMPLETE: stop criterion not met for subsystems {unmet:?}");
    }
    fitted.push_str(&toml::to_string(&table).map_err(|e| fail(Exit::Simulation, e.to_string()))?);
    write_text(&dir.join("fitted.toml"), &fitted)?;
    write_text(&dir.join("history.csv"), &history_csv(&results))?;
    let report = IdentifyReport {
        metadata: meta,
        complete: unmet.is_empty(),
        subsystems: results
            .iter()
            .map(|r| IdentifySummary {
                id: r.subsystem.number(),
                label: r.subsystem.label().to_string(),
                free_parameters: r.names.clone(),
                training_index_percent: r.error_index,
                reached_threshold: r.reached_threshold,
                stop_threshold: threshold,
                generations: r.rounds.iter().map(|x| x.generations()).sum(),
                evaluations: r.rounds.iter().map(|x| x.evaluations).sum(),
                ls_estimates: r.ls.as_ref().map(|l| l.raw.iter().cloned().collect()),
                ls_error: r.ls_error.clone(),
            })
            .collect(),
    };
    write_text(
        &dir.join("identify.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    for r in &results {
        let values: Vec<String> = r
            .names
            .iter()
            .map(|n| format!("{n}={:.6}", r.params.value(n).unwrap_or(f64::NAN)))
            .collect();
        println!(
            "{}: index {:.4e} %, {}",
            r.subsystem.label(),
            r.error_index,
            values.join(" ")
        );
    }
    if unmet.is_empty() {
        Ok(Exit::Ok)
    } else {
        eprintln!("govid: stop criterion not met for subsystems {unmet:?}; results written and flagged");
        Ok(Exit::StopUnmet)
    }
}

/// Reads a fitted parameter file written by `identify`.
pub fn load_fitted(path: &Path) -> Result<ParamVector, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| fail(Exit::Config, format!("fitted parameters {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| fail(Exit::Config, format!("fitted parameters {}: {e}", path.display())))
}

fn headline_residual(id: SubsystemId, table: &ParamVector, data: &TimeSeries) -> Result<Vec<f64>, CliError> {
    let view = subsystem_view(id.model_kind(), id)?;
    let sim = simulate_subsystem(id, table, data)?;
    let y = data.require(view.outputs[0])?;
    Ok(y.iter().zip(&sim[0]).map(|(a, b)| a - b).collect())
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<Exit, CliError> {
    let fitted_path = required(&cfg.data.fitted, "fitted parameter")?;
    let table = load_fitted(fitted_path)?;
    let val_path = required(&cfg.data.validation, "validation")?;
    let val = load_record(val_path, cfg, true)?;
    let train = match &cfg.data.training {
        Some(p) => Some(load_record(p, cfg, true)?),
        None => None,
    };
    let mut runs = Vec::new();
    for id in cfg.subsystem_ids() {
        let training_index = match &train {
            Some(t) => Some(subsystem_error_index(id, &table, t)?),
            None => None,
        };
        runs.push(SubsystemRun {
            subsystem: Some(id),
            training_index,
            validation_index: Some(subsystem_error_index(id, &table, &val)?),
            residual: Some(headline_residual(id, &table, &val)?),
        });
    }
    let mut files = vec![fitted_path, val_path];
    if let Some(p) = &cfg.data.training {
        files.push(p);
    }
    let parameters = table
        .iter()
        .filter(|p| p.free)
        .map(|p| ParameterRow {
            name: p.name.clone(),
            values: BTreeMap::from([("fitted".to_string(), p.value)]),
        })
        .collect();
    let report = build_report(
        &runs,
        parameters,
        metadata(cfg, "fitted", &files)?,
        &cfg.validate.whiteness,
        cfg.validate.index_threshold,
    )?;
    report.write(create_out_dir(cfg)?)?;
    for s in &report.subsystems {
        println!(
            "{}: validation index {:.4e} %, whiteness {:.2} vs {:.2}, {}",
            s.label,
            s.validation_index,
            s.whiteness.statistic,
            s.whiteness.threshold,
            if s.pass { "pass" } else { "FAIL" }
        );
    }
    Ok(if report.pass { Exit::Ok } else { Exit::ValidationFailed })
}

/// Parameter rows of the comparison table, in table order.
pub fn comparison_rows() -> Vec<&'static str> {
    Ggov1Params::IDENTIFIED
        .iter()
        .chain(St6bParams::IDENTIFIED.iter())
        .copied()
        .collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<Exit, CliError> {
    let train_path = required(&cfg.data.training, "training")?;
    let val_path = required(&cfg.data.validation, "validation")?;
    let train = load_record(train_path, cfg, true)?;
    let val = load_record(val_path, cfg, true)?;
    let opts = &cfg.compare.optimizers;

    // estimates[opt][param] over seeds; index rows per (opt, seed, subsystem)
    let mut estimates: Vec<BTreeMap<String, Vec<f64>>> = vec![BTreeMap::new(); opts.len()];
    let mut val_index: Vec<BTreeMap<u8, Vec<f64>>> = vec![BTreeMap::new(); opts.len()];
    let mut runs_csv = String::from(
        "optimizer,seed,subsystem,training_index_percent,validation_index_percent,generations,reached_threshold\n",
    );
    for (oi, kind) in opts.iter().enumerate() {
        for &seed in &cfg.compare.seeds {
            for r in identify_all(cfg, &train, *kind, seed)? {
                let vi = subsystem_error_index(r.subsystem, &r.params, &val)?;
                for name in &r.names {
                    let v = r.params.value(name).map_err(|e| fail(Exit::Simulation, e.to_string()))?;
                    estimates[oi].entry(name.clone()).or_default().push(v);
                }
                val_index[oi].entry(r.subsystem.number()).or_default().push(vi);
                let _ = writeln!(
                    runs_csv,
                    "{},{seed},{},{:?},{vi:?},{},{}",
                    kind.name(),
                    r.subsystem.number(),
                    r.error_index,
                    r.rounds.iter().map(|x| x.generations()).sum::<usize>(),
                    r.reached_threshold
                );
            }
        }
    }

    let mut table_csv = String::from("parameter");
    for k in opts {
        let _ = write!(table_csv, ",{}", k.name());
    }
    table_csv.push('\n');
    for name in comparison_rows() {
        table_csv.push_str(name);
        for e in &estimates {
            table_csv.push(',');
            if let Some(m) = e.get(name).and_then(|v| median(v)) {
                let _ = write!(table_csv, "{m:?}");
            }
        }
        table_csv.push('\n');
    }
    let mut index_csv = String::from("subsystem");
    for k in opts {
        let _ = write!(index_csv, ",{}", k.name());
    }
    index_csv.push('\n');
    for id in cfg.subsystem_ids() {
        let _ = write!(index_csv, "{}", id.number());
        for vi in &val_index {
            let m = vi.get(&id.number()).and_then(|v| median(v)).unwrap_or(f64::NAN);
            let _ = write!(index_csv, ",{m:?}");
        }
        index_csv.push('\n');
    }

    let dir = create_out_dir(cfg)?;
    write_text(&dir.join("compare.csv"), &table_csv)?;
    write_text(&dir.join("compare_indices.csv"), &index_csv)?;
    write_text(&dir.join("compare_runs.csv"), &runs_csv)?;
    print!("{index_csv}");
    Ok(Exit::Ok)
}

pub fn cmd_gen_signal(cfg: &RunConfig) -> Result<Exit, CliError> {
    let s = &cfg.signal;
    let table = cfg.table()?;
    let noise = s.snr_db.map(|snr| (snr, cfg.seed));
    let mut out: Option<TimeSeries> = None;
    for kind in cfg.plants() {
        let ts = if s.simulate {
            synthesize(kind, &table, cfg.operating_point, &s.scenario, noise)?
        } else {
            excitation(kind, &s.scenario, &cfg.operating_point)?
        };
        match &mut out {
            Some(o) => merge_new(o, &ts)?,
            None => out = Some(ts),
        }
    }
    let out = out.expect("at least one plant");
    let dir = create_out_dir(cfg)?;
    let file = dir.join("signal.csv");
    write_csv(&out, &file).map_err(|e| fail(Exit::Data, e.to_string()))?;
    println!("wrote {} ({} samples, {} channels)", file.display(), out.len(), out.channels().len());
    Ok(Exit::Ok)
}

/// Entry point of the binary: parses arguments, runs, reports errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { Exit::Config.code() } else { Exit::Ok.code() };
        }
    };
    match run(&cli) {
        Ok(exit) => exit.code(),
        Err(e) => {
            eprintln!("govid: error: {e}");
            e.exit.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_stable() {
        let codes: Vec<i32> = [
            Exit::Ok,
            Exit::ValidationFailed,
            Exit::Config,
            Exit::Data,
            Exit::Simulation,
            Exit::StopUnmet,
        ]
        .iter()
        .map(|e| e.code())
        .collect();
        assert_eq!(codes, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn twenty_table_rows() {
        let rows = comparison_rows();
        assert_eq!(rows.len(), 20);
        assert_eq!(rows[0], "K_pgov");
        assert_eq!(rows[19], "K_FF");
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "govid",
            "identify",
            "--subsystem",
            "3",
            "--optimizer",
            "ga",
            "--seed",
            "11",
            "--no-ls-seed",
            "--training",
            "t.csv",
        ])
        .unwrap();
        let cfg = resolve_config(&cli.common, &cli.command).unwrap();
        assert_eq!(cfg.subsystems, vec![3]);
        assert_eq!(cfg.optimizer.kind, OptimizerKind::Ga);
        assert_eq!(cfg.seed, 11);
        assert!(!cfg.identify.ls_seed);
        assert_eq!(cfg.data.training.as_deref(), Some(Path::new("t.csv")));
    }

    #[test]
    fn bad_subsystem_flag_is_config_error() {
        let cli = Cli::try_parse_from(["govid", "gen-signal", "--subsystem", "9"]).unwrap();
        assert_eq!(resolve_config(&cli.common, &cli.command).unwrap_err().exit, Exit::Config);
    }
}
