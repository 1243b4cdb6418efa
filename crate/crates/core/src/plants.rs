//! GGOV1 turbine-governor and ST6B exciter (AVR mode) assembled from block
//! primitives, plus the subsystem partition used for piecewise
//! identification.
//!
//! Both plants are driven by recorded exogenous channels: the unit is grid
//! connected, so speed deviation and terminal voltage are inputs rather than
//! solved states, and electrical power equals mechanical power delayed by one
//! sample (no machine dynamics).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::{make_block, BlockError, BlockSpec, BlockState, Limits};
use crate::params::{Param, ParamError, ParamVector};
use crate::signals::{SignalError, TimeSeries};

/// Output of an inactive input to a low-value gate.
pub const GATE_OPEN: f64 = 1.0e6;

/// Samples averaged to estimate a measured output's initial level.
pub const INIT_WINDOW: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParams { name: String, reason: String },
    #[error("no steady state at the operating point: {0}")]
    NoSteadyState(String),
    #[error("input sampled at {data} s, model built for {model} s")]
    RateMismatch { model: f64, data: f64 },
    #[error("missing channel {0}")]
    MissingChannel(String),
    #[error("subsystem {id:?} does not belong to {kind:?}")]
    WrongModelKind { kind: ModelKind, id: SubsystemId },
    #[error("sample period must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Block(#[from] BlockError),
}

impl From<SignalError> for PlantError {
    fn from(e: SignalError) -> Self {
        match e {
            SignalError::MissingChannel(c) => PlantError::MissingChannel(c),
            other => PlantError::InvalidParams {
                name: "time series".into(),
                reason: other.to_string(),
            },
        }
    }
}

fn invalid(name: &str, reason: &str) -> PlantError {
    PlantError::InvalidParams {
        name: name.to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ggov1,
    St6b,
}

/// Rows of the error-index tables: four GGOV1 parts and the exciter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubsystemId {
    Valve = 1,
    ElectricalPower = 2,
    SpeedController = 3,
    TemperatureController = 4,
    Exciter = 5,
}

impl SubsystemId {
    pub const ALL: [SubsystemId; 5] = [
        SubsystemId::Valve,
        SubsystemId::ElectricalPower,
        SubsystemId::SpeedController,
        SubsystemId::TemperatureController,
        SubsystemId::Exciter,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.number() == n)
    }

    pub fn model_kind(self) -> ModelKind {
        match self {
            SubsystemId::Exciter => ModelKind::St6b,
            _ => ModelKind::Ggov1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SubsystemId::Valve => "Subsystem (1) valve/turbine",
            SubsystemId::ElectricalPower => "Subsystem (2) electrical power",
            SubsystemId::SpeedController => "Subsystem (3) speed controller",
            SubsystemId::TemperatureController => "Subsystem (4) temperature controller",
            SubsystemId::Exciter => "Exciter (5)",
        }
    }

    pub fn for_kind(kind: ModelKind) -> Vec<SubsystemId> {
        Self::ALL
            .into_iter()
            .filter(|s| s.model_kind() == kind)
            .collect()
    }
}

/// Grid-connected operating point the models are initialized at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatingPoint {
    /// Electrical (= mechanical) power, pu of turbine rating.
    pub p_e0: f64,
    /// Shaft speed, pu.
    pub speed: f64,
    /// Terminal voltage, pu.
    pub v_t: f64,
    /// Exhaust-temperature proxy seen by the load limiter, pu.
    pub temp0: f64,
    /// Exciter output voltage, pu.
    pub e_fd0: f64,
    /// Field current, pu.
    pub i_fd0: f64,
}

impl Default for OperatingPoint {
    fn default() -> Self {
        Self {
            p_e0: 0.75,
            speed: 1.0,
            v_t: 1.0,
            temp0: 0.88,
            e_fd0: 1.5,
            i_fd0: 1.0,
        }
    }
}

/// GGOV1 parameters (times in s, everything else pu).
#[derive(Debug, Clone, PartialEq)]
pub struct Ggov1Params {
    pub r: f64,
    pub t_pelec: f64,
    pub k_pgov: f64,
    pub k_igov: f64,
    pub k_dgov: f64,
    pub t_dgov: f64,
    pub t_act: f64,
    pub k_turb: f64,
    pub w_fnl: f64,
    pub t_b: f64,
    pub t_c: f64,
    pub t_eng: f64,
    pub t_fload: f64,
    pub k_pload: f64,
    pub k_iload: f64,
    pub l_dref: f64,
    pub dm: f64,
    pub k_imw: f64,
    pub p_mwset: f64,
    pub k_a: f64,
    pub t_a: f64,
    pub a_set: f64,
    pub accel_enabled: bool,
    pub v_min: f64,
    pub v_max: f64,
    pub fsrt_min: f64,
    pub fsrt_max: f64,
}

impl Ggov1Params {
    /// Parameter names as they appear in tables and configuration files.
    pub const IDENTIFIED: [&'static str; 16] = [
        "K_pgov", "K_igov", "K_dgov", "T_dgov", "T_act", "K_turb", "T_b", "T_c", "T_eng",
        "T_fload", "K_pload", "K_iload", "T_pelec", "L_dref", "r", "W_fnl",
    ];

    /// Values identified for the studied unit (cuckoo-search column).
    pub fn reference() -> Self {
        Self {
            r: 0.05,
            t_pelec: 1.10,
            k_pgov: 3.10,
            k_igov: 0.90,
            k_dgov: 0.0,
            t_dgov: 0.0,
            t_act: 1.83,
            k_turb: 0.31,
            w_fnl: 0.43,
            t_b: 0.79,
            t_c: 0.0,
            t_eng: 0.10,
            t_fload: 3.0,
            k_pload: 25.01,
            k_iload: 0.10,
            l_dref: 0.90,
            dm: 0.0,
            k_imw: 0.0,
            p_mwset: 0.0,
            k_a: 10.0,
            t_a: 0.1,
            a_set: 0.01,
            accel_enabled: false,
            v_min: 0.0,
            v_max: 4.0,
            fsrt_min: 0.0,
            fsrt_max: 5.0,
        }
    }

    /// Default table: reference values, search bounds, and the identification
    /// flags (acceleration and power-controller loops fixed).
    pub fn default_table() -> ParamVector {
        let p = Self::reference();
        ParamVector::new(vec![
            Param::new("K_pgov", p.k_pgov, 0.1, 10.0, true),
            Param::new("K_igov", p.k_igov, 0.01, 5.0, true),
            Param::new("K_dgov", p.k_dgov, 0.0, 1.0, true),
            Param::new("T_dgov", p.t_dgov, 0.0, 1.0, true),
            Param::new("T_act", p.t_act, 0.05, 5.0, true),
            Param::new("K_turb", p.k_turb, 0.05, 2.0, true),
            Param::new("T_b", p.t_b, 0.05, 5.0, true),
            Param::new("T_c", p.t_c, 0.0, 2.0, true),
            Param::new("T_eng", p.t_eng, 0.0, 0.5, true),
            Param::new("T_fload", p.t_fload, 0.1, 10.0, true),
            Param::new("K_pload", p.k_pload, 1.0, 50.0, true),
            Param::new("K_iload", p.k_iload, 0.0, 1.0, true),
            Param::new("T_pelec", p.t_pelec, 0.05, 5.0, true),
            Param::new("L_dref", p.l_dref, 0.5, 1.2, true),
            Param::new("r", p.r, 0.01, 0.2, true),
            Param::new("W_fnl", p.w_fnl, 0.0, 0.9, true),
            Param::fixed("Dm", p.dm),
            Param::fixed("K_imw", p.k_imw),
            Param::fixed("P_mwset", p.p_mwset),
            Param::fixed("K_a", p.k_a),
            Param::fixed("T_a", p.t_a),
            Param::fixed("A_set", p.a_set),
            Param::fixed("accel_enable", 0.0),
            Param::fixed("V_min", p.v_min),
            Param::fixed("V_max", p.v_max),
            Param::fixed("FSRT_min", p.fsrt_min),
            Param::fixed("FSRT_max", p.fsrt_max),
        ])
    }

    pub fn from_table(t: &ParamVector) -> Result<Self, PlantError> {
        let v = |n: &str| t.value(n);
        let p = Self {
            r: v("r")?,
            t_pelec: v("T_pelec")?,
            k_pgov: v("K_pgov")?,
            k_igov: v("K_igov")?,
            k_dgov: v("K_dgov")?,
            t_dgov: v("T_dgov")?,
            t_act: v("T_act")?,
            k_turb: v("K_turb")?,
            w_fnl: v("W_fnl")?,
            t_b: v("T_b")?,
            t_c: v("T_c")?,
            t_eng: v("T_eng")?,
            t_fload: v("T_fload")?,
            k_pload: v("K_pload")?,
            k_iload: v("K_iload")?,
            l_dref: v("L_dref")?,
            dm: v("Dm")?,
            k_imw: v("K_imw")?,
            p_mwset: v("P_mwset")?,
            k_a: v("K_a")?,
            t_a: v("T_a")?,
            a_set: v("A_set")?,
            accel_enabled: v("accel_enable")? != 0.0,
            v_min: v("V_min")?,
            v_max: v("V_max")?,
            fsrt_min: v("FSRT_min")?,
            fsrt_max: v("FSRT_max")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_table(&self, template: &ParamVector) -> Result<ParamVector, PlantError> {
        let mut t = template.clone();
        for (name, value) in [
            ("r", self.r),
            ("T_pelec", self.t_pelec),
            ("K_pgov", self.k_pgov),
            ("K_igov", self.k_igov),
            ("K_dgov", self.k_dgov),
            ("T_dgov", self.t_dgov),
            ("T_act", self.t_act),
            ("K_turb", self.k_turb),
            ("W_fnl", self.w_fnl),
            ("T_b", self.t_b),
            ("T_c", self.t_c),
            ("T_eng", self.t_eng),
            ("T_fload", self.t_fload),
            ("K_pload", self.k_pload),
            ("K_iload", self.k_iload),
            ("L_dref", self.l_dref),
        ] {
            t.set_value(name, value)?;
        }
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.r > 0.0) {
            return Err(invalid("r", "permanent droop must be positive"));
        }
        if !(0.0..1.0).contains(&self.w_fnl) {
            return Err(invalid("W_fnl", "no-load fuel must lie in [0, 1)"));
        }
        for (name, value) in [
            ("T_act", self.t_act),
            ("T_b", self.t_b),
            ("T_pelec", self.t_pelec),
            ("T_fload", self.t_fload),
        ] {
            if !(value > 0.0) {
                return Err(invalid(name, "time constant must be positive"));
            }
        }
        for (name, value) in [("T_c", self.t_c), ("T_dgov", self.t_dgov), ("T_eng", self.t_eng)] {
            if !(value >= 0.0) {
                return Err(invalid(name, "time constant must be non-negative"));
            }
        }
        if self.k_dgov < 0.0 {
            return Err(invalid("K_dgov", "derivative gain must be non-negative"));
        }
        if self.k_dgov > 0.0 && self.t_dgov == 0.0 {
            return Err(invalid("T_dgov", "a derivative gain needs a positive filter time constant"));
        }
        if !(self.k_turb != 0.0 && self.k_turb.is_finite()) {
            return Err(invalid("K_turb", "turbine gain must be non-zero"));
        }
        if !(self.v_min < self.v_max) {
            return Err(invalid("V_max", "valve limits are empty"));
        }
        if !(self.fsrt_min < self.fsrt_max) {
            return Err(invalid("FSRT_max", "load-limiter limits are empty"));
        }
        if self.accel_enabled && !(self.t_a > 0.0) {
            return Err(invalid("T_a", "time constant must be positive"));
        }
        Ok(())
    }
}

/// ST6B parameters (AVR mode plus the field-current limiter branch).
#[derive(Debug, Clone, PartialEq)]
pub struct St6bParams {
    pub k_pa: f64,
    pub k_ia: f64,
    pub k_m: f64,
    pub k_ff: f64,
    pub k_lr: f64,
    pub k_ci: f64,
    pub i_lr: f64,
    pub k_g: f64,
    pub t_g: f64,
    /// Available exciter voltage V_B, pu.
    pub v_b: f64,
    pub v_amin: f64,
    pub v_amax: f64,
    pub v_rmin: f64,
    pub v_rmax: f64,
    pub limiter_enabled: bool,
}

impl St6bParams {
    pub const IDENTIFIED: [&'static str; 4] = ["K_PA", "K_IA", "K_M", "K_FF"];

    pub fn reference() -> Self {
        Self {
            k_pa: 3.95,
            k_ia: 2.84,
            k_m: 1.10,
            k_ff: 1.30,
            k_lr: 17.33,
            k_ci: 1.0577,
            i_lr: 4.164,
            k_g: 1.0,
            t_g: 0.02,
            v_b: 1.0,
            v_amin: -3.85,
            v_amax: 4.81,
            v_rmin: -3.85,
            v_rmax: 4.81,
            limiter_enabled: false,
        }
    }

    pub fn default_table() -> ParamVector {
        let p = Self::reference();
        ParamVector::new(vec![
            Param::new("K_PA", p.k_pa, 0.1, 10.0, true),
            Param::new("K_IA", p.k_ia, 0.1, 10.0, true),
            Param::new("K_M", p.k_m, 0.1, 5.0, true),
            Param::new("K_FF", p.k_ff, 0.1, 5.0, true),
            Param::fixed("K_LR", p.k_lr),
            Param::fixed("K_CI", p.k_ci),
            Param::fixed("I_LR", p.i_lr),
            Param::fixed("K_G", p.k_g),
            Param::fixed("T_G", p.t_g),
            Param::fixed("V_B", p.v_b),
            Param::fixed("V_AMIN", p.v_amin),
            Param::fixed("V_AMAX", p.v_amax),
            Param::fixed("V_RMIN", p.v_rmin),
            Param::fixed("V_RMAX", p.v_rmax),
            Param::fixed("limiter_enable", 0.0),
        ])
    }

    pub fn from_table(t: &ParamVector) -> Result<Self, PlantError> {
        let v = |n: &str| t.value(n);
        let p = Self {
            k_pa: v("K_PA")?,
            k_ia: v("K_IA")?,
            k_m: v("K_M")?,
            k_ff: v("K_FF")?,
            k_lr: v("K_LR")?,
            k_ci: v("K_CI")?,
            i_lr: v("I_LR")?,
            k_g: v("K_G")?,
            t_g: v("T_G")?,
            v_b: v("V_B")?,
            v_amin: v("V_AMIN")?,
            v_amax: v("V_AMAX")?,
            v_rmin: v("V_RMIN")?,
            v_rmax: v("V_RMAX")?,
            limiter_enabled: v("limiter_enable")? != 0.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.t_g > 0.0) {
            return Err(invalid("T_G", "time constant must be positive"));
        }
        if !(self.v_b > 0.0) {
            return Err(invalid("V_B", "available exciter voltage must be positive"));
        }
        if !(self.v_amin < self.v_amax) {
            return Err(invalid("V_AMAX", "regulator limits are empty"));
        }
        if !(self.v_rmin < self.v_rmax) {
            return Err(invalid("V_RMAX", "inner-loop limits are empty"));
        }
        for (name, value) in [("K_PA", self.k_pa), ("K_IA", self.k_ia), ("K_M", self.k_m), ("K_FF", self.k_ff)] {
            if !value.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        Ok(())
    }
}

/// Default table of the given plant.
pub fn default_table(kind: ModelKind) -> ParamVector {
    match kind {
        ModelKind::Ggov1 => Ggov1Params::default_table(),
        ModelKind::St6b => St6bParams::default_table(),
    }
}

/// Exogenous input channels of each plant.
pub fn input_channels(kind: ModelKind) -> &'static [&'static str] {
    match kind {
        ModelKind::Ggov1 => &GGOV1_INPUTS,
        ModelKind::St6b => &ST6B_INPUTS,
    }
}

/// Internal taps written by [`PlantModel::simulate`], after the inputs.
pub fn tap_channels(kind: ModelKind) -> &'static [&'static str] {
    match kind {
        ModelKind::Ggov1 => &GGOV1_TAPS,
        ModelKind::St6b => &ST6B_TAPS,
    }
}

const GGOV1_INPUTS: [&str; 3] = ["p_ref", "speed_dev", "temp_proxy"];
const GGOV1_TAPS: [&str; 15] = [
    "p_elec",
    "p_elec_meas",
    "droop",
    "pmw_int",
    "speed_error",
    "fsrn",
    "temp_meas",
    "fsrt",
    "fsra",
    "fsr",
    "valve",
    "fuel_flow",
    "fuel_delayed",
    "fuel_turbine",
    "p_mech",
];
const ST6B_INPUTS: [&str; 3] = ["v_ref", "v_c", "i_fd"];
const ST6B_TAPS: [&str; 6] = ["v_err", "v_a", "v_g", "v_r", "v_lim", "e_fd"];

// ---------------------------------------------------------------------------
// GGOV1 building blocks shared by the whole model and the subsystem views.

#[derive(Debug, Clone)]
struct TurbinePath {
    actuator: BlockState,
    valve_limits: Limits,
    delay: BlockState,
    leadlag: BlockState,
    k_turb: f64,
    w_fnl: f64,
    dm: f64,
}

#[derive(Debug, Clone, Copy)]
struct TurbineTaps {
    valve: f64,
    fuel_flow: f64,
    fuel_delayed: f64,
    fuel_turbine: f64,
    p_mech: f64,
}

impl TurbinePath {
    fn new(p: &Ggov1Params, dt: f64, fsr0: f64, speed_dev0: f64) -> Result<Self, PlantError> {
        let valve_limits = Limits::new(p.v_min, p.v_max)?;
        let valve0 = valve_limits.clamp(fsr0);
        let fuel0 = valve0 * (1.0 + speed_dev0);
        Ok(Self {
            actuator: make_block(BlockSpec::lag(1.0, p.t_act), dt, valve0)?,
            valve_limits,
            delay: make_block(BlockSpec::PureDelay { t: p.t_eng }, dt, fuel0)?,
            leadlag: make_block(
                BlockSpec::LeadLag {
                    t_lead: p.t_c,
                    t_lag: p.t_b,
                },
                dt,
                fuel0,
            )?,
            k_turb: p.k_turb,
            w_fnl: p.w_fnl,
            dm: p.dm,
        })
    }

    fn step(&mut self, fsr: f64, speed_dev: f64) -> TurbineTaps {
        let mut valve = self.actuator.advance(fsr);
        if !self.valve_limits.contains(valve) {
            valve = self.valve_limits.clamp(valve);
            self.actuator.force_output(valve);
        }
        let fuel_flow = valve * (1.0 + speed_dev);
        let fuel_delayed = self.delay.advance(fuel_flow);
        let fuel_turbine = self.leadlag.advance(fuel_delayed);
        let p_mech = self.k_turb * (fuel_turbine - self.w_fnl) - self.dm * speed_dev;
        TurbineTaps {
            valve,
            fuel_flow,
            fuel_delayed,
            fuel_turbine,
            p_mech,
        }
    }
}

#[derive(Debug, Clone)]
struct DroopPath {
    transducer: BlockState,
    r: f64,
}

impl DroopPath {
    fn new(p: &Ggov1Params, dt: f64, p_elec0: f64) -> Result<Self, PlantError> {
        Ok(Self {
            transducer: make_block(BlockSpec::lag(1.0, p.t_pelec), dt, p_elec0)?,
            r: p.r,
        })
    }

    fn step(&mut self, p_elec: f64) -> (f64, f64) {
        let meas = self.transducer.advance(p_elec);
        (meas, self.r * meas)
    }
}

fn governor_block(p: &Ggov1Params, dt: f64, err0: f64, fsrn0: f64) -> Result<BlockState, PlantError> {
    let spec = BlockSpec::Pid {
        kp: p.k_pgov,
        ki: p.k_igov,
        kd: p.k_dgov,
        td: p.t_dgov,
        integrator_limits: Some(Limits::new(p.v_min, p.v_max)?),
        output_limits: None,
    };
    let mut b = make_block(spec, dt, fsrn0)?;
    b.settle(err0, fsrn0);
    Ok(b)
}

#[derive(Debug, Clone)]
struct LoadLimiter {
    transducer: BlockState,
    pi: BlockState,
    l_dref: f64,
}

impl LoadLimiter {
    /// With `fsrt0 = None` the integrator starts wound to the limit implied
    /// by the sign of the initial error (the only equilibria of a PI with a
    /// non-zero error).
    fn new(p: &Ggov1Params, dt: f64, temp0: f64, fsrt0: Option<f64>) -> Result<Self, PlantError> {
        let transducer = make_block(BlockSpec::lag(1.0, p.t_fload), dt, temp0)?;
        let limits = Limits::new(p.fsrt_min, p.fsrt_max)?;
        let spec = BlockSpec::Pid {
            kp: p.k_pload,
            ki: p.k_iload,
            kd: 0.0,
            td: 0.0,
            integrator_limits: Some(limits),
            output_limits: None,
        };
        let err0 = p.l_dref - temp0;
        let integral0 = match fsrt0 {
            Some(y) => y - p.k_pload * err0,
            None if err0 < 0.0 => limits.min,
            None => limits.max,
        };
        let mut pi = make_block(spec, dt, 0.0)?;
        pi.settle(err0, integral0 + p.k_pload * err0);
        Ok(Self {
            transducer,
            pi,
            l_dref: p.l_dref,
        })
    }

    fn fsrt0(&self, temp0: f64) -> f64 {
        let kp = match self.pi.spec() {
            BlockSpec::Pid { kp, .. } => *kp,
            _ => 0.0,
        };
        self.pi.integral_state().unwrap_or(0.0) + kp * (self.l_dref - temp0)
    }

    fn step(&mut self, temp: f64) -> (f64, f64) {
        let meas = self.transducer.advance(temp);
        (meas, self.pi.advance(self.l_dref - meas))
    }
}

/// Which input of the GGOV1 low-value select is active (0 = FSRN,
/// 1 = FSRT, 2 = FSRA); ties resolve to the lower index.
pub fn selected_branch(fsrn: f64, fsrt: f64, fsra: f64) -> u8 {
    if fsrn <= fsrt && fsrn <= fsra {
        0
    } else if fsrt <= fsra {
        1
    } else {
        2
    }
}

/// Full GGOV1 model in AVR-independent, grid-connected form.
#[derive(Debug, Clone)]
pub struct Ggov1Model {
    params: Ggov1Params,
    dt: f64,
    op: OperatingPoint,
    turbine: TurbinePath,
    droop: DroopPath,
    governor: BlockState,
    limiter: LoadLimiter,
    power_controller: BlockState,
    accel_filter: BlockState,
    p_mech_prev: f64,
    fsr_prev: f64,
}

impl Ggov1Model {
    pub fn new(params: Ggov1Params, dt: f64, op: OperatingPoint) -> Result<Self, PlantError> {
        params.validate()?;
        if !(dt > 0.0) {
            return Err(PlantError::NonPositiveDt(dt));
        }
        let speed_dev0 = op.speed - 1.0;
        // mechanical power law solved for the steady fuel command
        let fuel0 = params.w_fnl + (op.p_e0 + params.dm * speed_dev0) / params.k_turb;
        if fuel0 < params.w_fnl.max(0.0) {
            return Err(PlantError::NoSteadyState(format!(
                "required fuel {fuel0:.4} is below the no-load fuel {:.4}",
                params.w_fnl
            )));
        }
        let valve0 = fuel0 / (1.0 + speed_dev0);
        if valve0 < params.v_min || valve0 > params.v_max {
            return Err(PlantError::NoSteadyState(format!(
                "required valve position {valve0:.4} outside [{}, {}]",
                params.v_min, params.v_max
            )));
        }
        if params.k_imw != 0.0 && (params.p_mwset - op.p_e0).abs() > 1e-12 {
            return Err(PlantError::NoSteadyState(
                "power controller active with set-point different from p_e0".into(),
            ));
        }
        let turbine = TurbinePath::new(&params, dt, valve0, speed_dev0)?;
        let droop = DroopPath::new(&params, dt, op.p_e0)?;
        let governor = governor_block(&params, dt, 0.0, valve0)?;
        if (governor.integral_state().unwrap_or(valve0) - valve0).abs() > 1e-12 {
            return Err(PlantError::NoSteadyState(
                "governor integrator cannot hold the required fuel".into(),
            ));
        }
        let limiter = LoadLimiter::new(&params, dt, op.temp0, None)?;
        if limiter.fsrt0(op.temp0) < valve0 {
            return Err(PlantError::NoSteadyState(
                "load limiter would take over the low-value select".into(),
            ));
        }
        let power_controller = make_block(
            BlockSpec::LimitedIntegrator {
                k: params.k_imw,
                limits: Limits::new(-1.0, 1.0)?,
            },
            dt,
            0.0,
        )?;
        let t_a = if params.t_a > 0.0 { params.t_a } else { 1.0 };
        let accel_filter = make_block(BlockSpec::pid(0.0, 0.0, 1.0, t_a), dt, 0.0)?;
        Ok(Self {
            params,
            dt,
            op,
            turbine,
            droop,
            governor,
            limiter,
            power_controller,
            accel_filter,
            p_mech_prev: op.p_e0,
            fsr_prev: valve0,
        })
    }

    pub fn params(&self) -> &Ggov1Params {
        &self.params
    }

    pub fn operating_point(&self) -> &OperatingPoint {
        &self.op
    }

    /// Steady input levels matching the operating point.
    pub fn steady_inputs(&self) -> [(&'static str, f64); 3] {
        [
            ("p_ref", self.op.p_e0),
            ("speed_dev", self.op.speed - 1.0),
            ("temp_proxy", self.op.temp0),
        ]
    }

    fn step(&mut self, p_ref: f64, speed_dev: f64, temp: f64) -> [f64; 15] {
        let p = &self.params;
        let p_elec = self.p_mech_prev;
        let (p_elec_meas, droop) = self.droop.step(p_elec);
        let pmw_int = self.power_controller.advance(p.p_mwset - p_elec_meas);
        let speed_error = p.r * (p_ref + pmw_int) - droop - speed_dev;
        let fsrn = self.governor.advance(speed_error);
        let (temp_meas, fsrt) = self.limiter.step(temp);
        let fsra = if p.accel_enabled {
            let accel = self.accel_filter.advance(speed_dev);
            self.fsr_prev + p.k_a * self.dt * (p.a_set - accel)
        } else {
            GATE_OPEN
        };
        let fsr = fsrn.min(fsrt).min(fsra);
        let t = self.turbine.step(fsr, speed_dev);
        self.p_mech_prev = t.p_mech;
        self.fsr_prev = fsr;
        [
            p_elec,
            p_elec_meas,
            droop,
            pmw_int,
            speed_error,
            fsrn,
            temp_meas,
            fsrt,
            fsra,
            fsr,
            t.valve,
            t.fuel_flow,
            t.fuel_delayed,
            t.fuel_turbine,
            t.p_mech,
        ]
    }
}

/// ST6B exciter core: PI regulator, inner field-voltage loop, optional
/// field-current limiter through the low-value gate.
#[derive(Debug, Clone)]
struct ExciterCore {
    p: St6bParams,
    regulator: BlockState,
    fb_a: f64,
    fb_b: f64,
    fb_state: f64,
    e_prev: f64,
}

#[derive(Debug, Clone, Copy)]
struct ExciterTaps {
    v_err: f64,
    v_a: f64,
    v_g: f64,
    v_r: f64,
    v_lim: f64,
    e_fd: f64,
}

impl ExciterCore {
    fn new(p: &St6bParams, dt: f64, err0: f64, v_a0: f64, i_fd0: f64) -> Result<Self, PlantError> {
        let limits = Limits::new(p.v_amin, p.v_amax)?;
        let spec = BlockSpec::Pid {
            kp: p.k_pa,
            ki: p.k_ia,
            kd: 0.0,
            td: 0.0,
            integrator_limits: Some(limits),
            output_limits: Some(limits),
        };
        let mut regulator = make_block(spec, dt, v_a0)?;
        regulator.settle(err0, v_a0);
        let den = 2.0 * p.t_g + dt;
        let mut core = Self {
            p: p.clone(),
            regulator,
            fb_a: (2.0 * p.t_g - dt) / den,
            fb_b: dt / den,
            fb_state: 0.0,
            e_prev: 0.0,
        };
        // steady inner loop for the given regulator output
        let v_r = (p.k_ff + p.k_m) * v_a0 / (1.0 + p.k_m * p.k_g * p.v_b);
        let e0 = p.v_b * core.gate(v_r, i_fd0);
        core.fb_state = e0;
        core.e_prev = e0;
        Ok(core)
    }

    fn limiter_output(&self, i_fd: f64) -> f64 {
        if self.p.limiter_enabled {
            self.p.k_lr * (self.p.k_ci * self.p.i_lr - i_fd)
        } else {
            GATE_OPEN
        }
    }

    fn gate(&self, v_r: f64, i_fd: f64) -> f64 {
        v_r.clamp(self.p.v_rmin, self.p.v_rmax)
            .min(self.limiter_output(i_fd))
    }

    fn step(&mut self, v_ref: f64, v_c: f64, i_fd: f64) -> ExciterTaps {
        let p = &self.p;
        let v_err = v_ref - v_c;
        let v_a = self.regulator.advance(v_err);
        let loop_gain = p.k_m * p.k_g;
        let carried = self.fb_a * self.fb_state + self.fb_b * self.e_prev;
        // same-sample feedback through the trapezoidal lag, solved exactly
        let e_lin = p.v_b * ((p.k_ff + p.k_m) * v_a - loop_gain * carried)
            / (1.0 + p.v_b * loop_gain * self.fb_b);
        let v_lim = self.limiter_output(i_fd);
        let e_fd = p.v_b * self.gate(e_lin / p.v_b, i_fd);
        self.fb_state = carried + self.fb_b * e_fd;
        self.e_prev = e_fd;
        let v_g = p.k_g * self.fb_state;
        let v_r = ((p.k_ff + p.k_m) * v_a - p.k_m * v_g).clamp(p.v_rmin, p.v_rmax);
        ExciterTaps {
            v_err,
            v_a,
            v_g,
            v_r,
            v_lim,
            e_fd,
        }
    }
}

#[derive(Debug, Clone)]
pub struct St6bModel {
    params: St6bParams,
    dt: f64,
    op: OperatingPoint,
    core: ExciterCore,
}

impl St6bModel {
    pub fn new(params: St6bParams, dt: f64, op: OperatingPoint) -> Result<Self, PlantError> {
        params.validate()?;
        if !(dt > 0.0) {
            return Err(PlantError::NonPositiveDt(dt));
        }
        let p = &params;
        let gain = p.k_ff + p.k_m;
        if gain <= 0.0 {
            return Err(PlantError::NoSteadyState(
                "K_FF + K_M must be positive to hold a field voltage".into(),
            ));
        }
        let v_r0 = op.e_fd0 / p.v_b;
        if v_r0 < p.v_rmin || v_r0 > p.v_rmax {
            return Err(PlantError::NoSteadyState(format!(
                "field voltage {:.4} needs V_R outside its limits",
                op.e_fd0
            )));
        }
        let v_a0 = (v_r0 + p.k_m * p.k_g * op.e_fd0) / gain;
        if v_a0 < p.v_amin || v_a0 > p.v_amax {
            return Err(PlantError::NoSteadyState(format!(
                "regulator output {v_a0:.4} outside its limits"
            )));
        }
        let core = ExciterCore::new(&params, dt, 0.0, v_a0, op.i_fd0)?;
        if (core.e_prev - op.e_fd0).abs() > 1e-9 {
            return Err(PlantError::NoSteadyState(
                "field-current limiter is active at the operating point".into(),
            ));
        }
        Ok(Self {
            params,
            dt,
            op,
            core,
        })
    }

    pub fn params(&self) -> &St6bParams {
        &self.params
    }

    pub fn steady_inputs(&self) -> [(&'static str, f64); 3] {
        [
            ("v_ref", self.op.v_t),
            ("v_c", self.op.v_t),
            ("i_fd", self.op.i_fd0),
        ]
    }
}

/// Either plant, initialized at its operating point.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum PlantModel {
    Ggov1(Ggov1Model),
    St6b(St6bModel),
}

/// Builds a model from a parameter table at the operating point.
pub fn build_model(
    kind: ModelKind,
    params: &ParamVector,
    dt: f64,
    op: OperatingPoint,
) -> Result<PlantModel, PlantError> {
    match kind {
        ModelKind::Ggov1 => Ok(PlantModel::Ggov1(Ggov1Model::new(
            Ggov1Params::from_table(params)?,
            dt,
            op,
        )?)),
        ModelKind::St6b => Ok(PlantModel::St6b(St6bModel::new(
            St6bParams::from_table(params)?,
            dt,
            op,
        )?)),
    }
}

fn check_rate(model_dt: f64, data: &TimeSeries) -> Result<(), PlantError> {
    if (data.dt() - model_dt).abs() > 1e-9 * model_dt {
        return Err(PlantError::RateMismatch {
            model: model_dt,
            data: data.dt(),
        });
    }
    Ok(())
}

impl PlantModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            PlantModel::Ggov1(_) => ModelKind::Ggov1,
            PlantModel::St6b(_) => ModelKind::St6b,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            PlantModel::Ggov1(m) => m.dt,
            PlantModel::St6b(m) => m.dt,
        }
    }

    pub fn steady_inputs(&self) -> Vec<(&'static str, f64)> {
        match self {
            PlantModel::Ggov1(m) => m.steady_inputs().to_vec(),
            PlantModel::St6b(m) => m.steady_inputs().to_vec(),
        }
    }

    /// Runs the model from its initial state over `inputs` and returns the
    /// inputs followed by every internal tap. The model itself is unchanged.
    pub fn simulate(&self, inputs: &TimeSeries) -> Result<TimeSeries, PlantError> {
        check_rate(self.dt(), inputs)?;
        let kind = self.kind();
        let names = input_channels(kind);
        let needs_ifd = matches!(self, PlantModel::St6b(m) if m.params.limiter_enabled);
        let mut cols: Vec<&[f64]> = Vec::with_capacity(3);
        let n = inputs.len();
        let fallback = vec![0.0; n];
        for name in names {
            match inputs.channel(name) {
                Some(c) => cols.push(c),
                None if *name == "i_fd" && !needs_ifd => cols.push(&fallback),
                None => return Err(PlantError::MissingChannel(name.to_string())),
            }
        }
        let taps = tap_channels(kind);
        let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(n); taps.len()];
        match self {
            PlantModel::Ggov1(m) => {
                let mut m = m.clone();
                for k in 0..n {
                    let row = m.step(cols[0][k], cols[1][k], cols[2][k]);
                    for (col, v) in out.iter_mut().zip(row) {
                        col.push(v);
                    }
                }
            }
            PlantModel::St6b(m) => {
                let mut core = m.core.clone();
                for k in 0..n {
                    let t = core.step(cols[0][k], cols[1][k], cols[2][k]);
                    for (col, v) in out
                        .iter_mut()
                        .zip([t.v_err, t.v_a, t.v_g, t.v_r, t.v_lim, t.e_fd])
                    {
                        col.push(v);
                    }
                }
            }
        }
        let mut ts = TimeSeries::new(inputs.dt())?;
        for (name, col) in names.iter().zip(&cols) {
            ts.push(*name, col.to_vec())?;
        }
        for (name, col) in taps.iter().zip(out) {
            ts.push(*name, col)?;
        }
        Ok(ts)
    }
}

// ---------------------------------------------------------------------------
// Subsystem partition.

/// Inputs, outputs and parameters of one identification subsystem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsystemView {
    pub id: SubsystemId,
    pub kind: ModelKind,
    pub inputs: Vec<&'static str>,
    /// Fitted taps; the first one is the subsystem's headline output.
    pub outputs: Vec<&'static str>,
    /// Identifiable parameters owned by this subsystem.
    pub params: Vec<&'static str>,
}

impl SubsystemView {
    /// Parameters of this subsystem flagged free in `table`.
    pub fn free_params<'a>(&self, table: &'a ParamVector) -> Vec<&'a str> {
        table
            .iter()
            .filter(|p| p.free && self.params.contains(&p.name.as_str()))
            .map(|p| p.name.as_str())
            .collect()
    }
}

pub fn subsystem_view(kind: ModelKind, id: SubsystemId) -> Result<SubsystemView, PlantError> {
    if id.model_kind() != kind {
        return Err(PlantError::WrongModelKind { kind, id });
    }
    let (inputs, outputs, params): (Vec<&'static str>, Vec<&'static str>, Vec<&'static str>) = match id {
        SubsystemId::Valve => (
            vec!["fsr", "speed_dev"],
            vec!["valve", "p_mech"],
            vec!["T_act", "K_turb", "T_b", "T_c", "T_eng", "W_fnl"],
        ),
        SubsystemId::ElectricalPower => (vec!["p_elec"], vec!["droop"], vec!["T_pelec", "r"]),
        SubsystemId::SpeedController => (
            vec!["speed_error"],
            vec!["fsrn"],
            vec!["K_pgov", "K_igov", "K_dgov", "T_dgov"],
        ),
        SubsystemId::TemperatureController => (
            vec!["temp_proxy"],
            vec!["fsrt"],
            vec!["T_fload", "K_pload", "K_iload", "L_dref"],
        ),
        SubsystemId::Exciter => (
            vec!["v_ref", "v_c"],
            vec!["e_fd", "v_a"],
            vec!["K_PA", "K_IA", "K_M", "K_FF"],
        ),
    };
    Ok(SubsystemView {
        id,
        kind,
        inputs,
        outputs,
        params,
    })
}

/// Mean of the first few samples, the initial level of a measured output.
pub fn initial_level(x: &[f64]) -> f64 {
    let n = x.len().clamp(1, INIT_WINDOW);
    x[..n].iter().sum::<f64>() / n as f64
}

/// Simulates one subsystem in isolation from its recorded inputs. Integral
/// states start from the initial level of the recorded outputs; all other
/// states start in equilibrium with the first input sample. Returns the
/// simulated outputs in the order of [`SubsystemView::outputs`].
pub fn simulate_subsystem(
    id: SubsystemId,
    params: &ParamVector,
    data: &TimeSeries,
) -> Result<Vec<Vec<f64>>, PlantError> {
    let dt = data.dt();
    let n = data.len();
    if n == 0 {
        return Err(PlantError::MissingChannel("(empty record)".into()));
    }
    let req = |name: &str| data.require(name).map_err(PlantError::from);
    match id {
        SubsystemId::Valve => {
            let p = Ggov1Params::from_table(params)?;
            let fsr = req("fsr")?;
            let sd = req("speed_dev")?;
            let mut path = TurbinePath::new(&p, dt, fsr[0], sd[0])?;
            let mut valve = Vec::with_capacity(n);
            let mut p_mech = Vec::with_capacity(n);
            for k in 0..n {
                let t = path.step(fsr[k], sd[k]);
                valve.push(t.valve);
                p_mech.push(t.p_mech);
            }
            Ok(vec![valve, p_mech])
        }
        SubsystemId::ElectricalPower => {
            let p = Ggov1Params::from_table(params)?;
            let pe = req("p_elec")?;
            let mut path = DroopPath::new(&p, dt, pe[0])?;
            Ok(vec![pe.iter().map(|&u| path.step(u).1).collect()])
        }
        SubsystemId::SpeedController => {
            let p = Ggov1Params::from_table(params)?;
            let err = req("speed_error")?;
            let y0 = initial_level(req("fsrn")?);
            let mut gov = governor_block(&p, dt, err[0], y0)?;
            Ok(vec![err.iter().map(|&u| gov.advance(u)).collect()])
        }
        SubsystemId::TemperatureController => {
            let p = Ggov1Params::from_table(params)?;
            let temp = req("temp_proxy")?;
            let y0 = initial_level(req("fsrt")?);
            let mut lim = LoadLimiter::new(&p, dt, temp[0], Some(y0))?;
            Ok(vec![temp.iter().map(|&u| lim.step(u).1).collect()])
        }
        SubsystemId::Exciter => {
            let p = St6bParams::from_table(params)?;
            let v_ref = req("v_ref")?;
            let v_c = req("v_c")?;
            let zeros;
            let i_fd = match data.channel("i_fd") {
                Some(c) => c,
                None if !p.limiter_enabled => {
                    zeros = vec![0.0; n];
                    &zeros
                }
                None => return Err(PlantError::MissingChannel("i_fd".into())),
            };
            let v_a0 = initial_level(req("v_a")?);
            let mut core = ExciterCore::new(&p, dt, v_ref[0] - v_c[0], v_a0, i_fd[0])?;
            let mut e_fd = Vec::with_capacity(n);
            let mut v_a = Vec::with_capacity(n);
            for k in 0..n {
                let t = core.step(v_ref[k], v_c[k], i_fd[k]);
                e_fd.push(t.e_fd);
                v_a.push(t.v_a);
            }
            Ok(vec![e_fd, v_a])
        }
    }
}
