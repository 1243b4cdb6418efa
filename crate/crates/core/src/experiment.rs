//! Synthetic pulse experiments: excitation design, plant simulation and
//! measurement noise on the recorded taps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::{make_block, run_block, BlockSpec};
use crate::params::ParamVector;
use crate::plants::{build_model, subsystem_view, ModelKind, OperatingPoint, PlantError, SubsystemId};
use crate::signals::{add_noise_to, square_pulse, SignalError, TimeSeries};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

impl From<crate::blocks::BlockError> for ExperimentError {
    fn from(e: crate::blocks::BlockError) -> Self {
        ExperimentError::Plant(e.into())
    }
}

/// Square wave starting at `low`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    pub period: f64,
    pub duty: f64,
    pub low: f64,
    pub high: f64,
}

/// Excitation of both plants for one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub dt: f64,
    pub duration: f64,
    /// Power reference `p_ref`, pu of turbine rating.
    pub power: PulseSpec,
    /// Exhaust-temperature proxy `temp_proxy`.
    pub temperature: PulseSpec,
    /// Voltage reference `v_ref`.
    pub voltage: PulseSpec,
    /// `v_c` follows `v_ref` through a unit lag with this time constant.
    pub v_c_lag: f64,
}

/// Turbine rating used as the power base, MW.
pub const TURBINE_RATING_MW: f64 = 160.0;

/// Power-reference step of the pulse tests, MW.
pub const PULSE_STEP_MW: f64 = 5.0;

impl Default for Scenario {
    fn default() -> Self {
        Self::training()
    }
}

impl Scenario {
    /// 60 s at 1 ms, 20 s pulses of 5 MW on the 160 MW base.
    pub fn training() -> Self {
        Self {
            dt: 0.001,
            duration: 60.0,
            power: PulseSpec {
                period: 20.0,
                duty: 0.5,
                low: 0.75,
                high: 0.75 + PULSE_STEP_MW / TURBINE_RATING_MW,
            },
            temperature: PulseSpec {
                period: 20.0,
                duty: 0.5,
                low: 0.88,
                high: 0.92,
            },
            voltage: PulseSpec {
                period: 20.0,
                duty: 0.5,
                low: 1.0,
                high: 1.01,
            },
            v_c_lag: 1.0,
        }
    }

    /// Held-out recording: different pulse timing and amplitudes.
    pub fn validation() -> Self {
        let t = Self::training();
        Self {
            power: PulseSpec {
                period: 30.0,
                duty: 0.4,
                high: 0.75 + 0.8 * PULSE_STEP_MW / TURBINE_RATING_MW,
                ..t.power
            },
            temperature: PulseSpec {
                period: 24.0,
                duty: 0.6,
                high: 0.915,
                ..t.temperature
            },
            voltage: PulseSpec {
                period: 30.0,
                duty: 0.4,
                high: 1.008,
                ..t.voltage
            },
            ..t
        }
    }

    pub fn with_duration(mut self, duration: f64) -> Self {
        self.duration = duration;
        self
    }
}

fn pulse(name: &str, dt: f64, duration: f64, p: &PulseSpec) -> Result<Vec<f64>, SignalError> {
    let ts = square_pulse(name, dt, duration, p.period, p.duty, p.low, p.high)?;
    Ok(ts.require(name)?.to_vec())
}

/// Exogenous inputs of a plant for the scenario. The unit is grid
/// connected at nominal speed; field current is held at the operating point.
pub fn excitation(kind: ModelKind, s: &Scenario, op: &OperatingPoint) -> Result<TimeSeries, ExperimentError> {
    let mut ts = TimeSeries::new(s.dt)?;
    match kind {
        ModelKind::Ggov1 => {
            let p_ref = pulse("p_ref", s.dt, s.duration, &s.power)?;
            let n = p_ref.len();
            ts.push("p_ref", p_ref)?;
            ts.push("speed_dev", vec![op.speed - 1.0; n])?;
            ts.push("temp_proxy", pulse("temp_proxy", s.dt, s.duration, &s.temperature)?)?;
        }
        ModelKind::St6b => {
            let v_ref = pulse("v_ref", s.dt, s.duration, &s.voltage)?;
            let n = v_ref.len();
            let mut lag = make_block(BlockSpec::lag(1.0, s.v_c_lag), s.dt, v_ref[0])?;
            let v_c = run_block(&mut lag, &v_ref);
            ts.push("v_ref", v_ref)?;
            ts.push("v_c", v_c)?;
            ts.push("i_fd", vec![op.i_fd0; n])?;
        }
    }
    Ok(ts)
}

/// Recorded output taps of a plant: the outputs of its subsystems.
pub fn measured_outputs(kind: ModelKind) -> Vec<&'static str> {
    let mut out = Vec::new();
    for id in SubsystemId::for_kind(kind) {
        if let Ok(v) = subsystem_view(kind, id) {
            out.extend(v.outputs);
        }
    }
    out
}

/// Simulates the plant over the scenario's excitation and, if `noise` is
/// given as `(snr_db, seed)`, adds white Gaussian noise to every measured
/// output tap.
pub fn synthesize(
    kind: ModelKind,
    table: &ParamVector,
    op: OperatingPoint,
    scenario: &Scenario,
    noise: Option<(f64, u64)>,
) -> Result<TimeSeries, ExperimentError> {
    let model = build_model(kind, table, scenario.dt, op)?;
    let inputs = excitation(kind, scenario, &op)?;
    let out = model.simulate(&inputs)?;
    match noise {
        Some((snr_db, seed)) => Ok(add_noise_to(&out, &measured_outputs(kind), snr_db, seed)?),
        None => Ok(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::default_table;

    #[test]
    fn training_scenario_shape() {
        let s = Scenario::training();
        let op = OperatingPoint::default();
        let ts = excitation(ModelKind::Ggov1, &s, &op).unwrap();
        assert_eq!(ts.len(), 60_001);
        let p = ts.channel("p_ref").unwrap();
        assert_eq!(p[0], 0.75);
        assert_eq!(p[10_000], 0.78125);
    }

    #[test]
    fn noise_only_touches_outputs() {
        let s = Scenario::training().with_duration(5.0);
        let op = OperatingPoint::default();
        let t = default_table(ModelKind::St6b);
        let clean = synthesize(ModelKind::St6b, &t, op, &s, None).unwrap();
        let noisy = synthesize(ModelKind::St6b, &t, op, &s, Some((40.0, 1))).unwrap();
        assert_eq!(clean.channel("v_c"), noisy.channel("v_c"));
        assert_ne!(clean.channel("e_fd"), noisy.channel("e_fd"));
    }
}
