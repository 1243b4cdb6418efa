//! Discrete-time block primitives.
//!
//! Every continuous-time block is realized with the trapezoidal (bilinear)
//! rule at a fixed sample period. Linear blocks are stored internally as the
//! same difference equation that [`discretize_linear`] returns, so simulation
//! and least-squares regressors are consistent sample by sample.

use thiserror::Error;

/// Errors raised while building or stepping blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlockError {
    #[error("sample period must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("invalid limits: min {min} must be below max {max}")]
    InvalidLimits { min: f64, max: f64 },
    #[error("delay {delay} s is positive but shorter than the sample period {dt} s")]
    DelayShorterThanDt { delay: f64, dt: f64 },
    #[error("block built for dt = {built} stepped with dt = {given}")]
    DtMismatch { built: f64, given: f64 },
    #[error("{0:?} has no linear difference-equation form")]
    NonlinearBlock(BlockKind),
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("{kind:?} expects {expected} input(s)")]
    ArityMismatch { kind: BlockKind, expected: usize },
}

/// Tag of a block variant, used in diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Gain,
    FirstOrderLag,
    LeadLag,
    Pid,
    LimitedIntegrator,
    PureDelay,
    LowValueGate,
    HighValueGate,
    Saturation,
    RateLimiter,
}

/// Closed output (or state) range in per-unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub min: f64,
    pub max: f64,
}

impl Limits {
    pub fn new(min: f64, max: f64) -> Result<Self, BlockError> {
        if min < max {
            Ok(Self { min, max })
        } else {
            Err(BlockError::InvalidLimits { min, max })
        }
    }

    /// Range with no effective bound.
    pub fn unbounded() -> Self {
        Self {
            min: f64::NEG_INFINITY,
            max: f64::INFINITY,
        }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min, self.max)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }
}

/// Block parameters. Time constants are in seconds, gains are per-unit.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockSpec {
    Gain {
        k: f64,
    },
    /// `k / (1 + s t)`
    FirstOrderLag {
        k: f64,
        t: f64,
    },
    /// `(1 + s t_lead) / (1 + s t_lag)`; `t_lead = 0` reduces to a unit lag.
    LeadLag {
        t_lead: f64,
        t_lag: f64,
    },
    /// `kp + ki/s + kd s / (1 + s td)`. `integrator_limits` clamps the
    /// integral state (anti-windup), `output_limits` clamps the sum.
    Pid {
        kp: f64,
        ki: f64,
        kd: f64,
        td: f64,
        integrator_limits: Option<Limits>,
        output_limits: Option<Limits>,
    },
    /// `k/s` with the state clamped into `limits`.
    LimitedIntegrator {
        k: f64,
        limits: Limits,
    },
    /// Transport delay quantized to `round(t / dt)` samples.
    PureDelay {
        t: f64,
    },
    LowValueGate,
    HighValueGate,
    Saturation {
        limits: Limits,
    },
    /// Slew-rate limit in per-unit per second.
    RateLimiter {
        down: f64,
        up: f64,
    },
}

impl BlockSpec {
    pub fn kind(&self) -> BlockKind {
        match self {
            BlockSpec::Gain { .. } => BlockKind::Gain,
            BlockSpec::FirstOrderLag { .. } => BlockKind::FirstOrderLag,
            BlockSpec::LeadLag { .. } => BlockKind::LeadLag,
            BlockSpec::Pid { .. } => BlockKind::Pid,
            BlockSpec::LimitedIntegrator { .. } => BlockKind::LimitedIntegrator,
            BlockSpec::PureDelay { .. } => BlockKind::PureDelay,
            BlockSpec::LowValueGate => BlockKind::LowValueGate,
            BlockSpec::HighValueGate => BlockKind::HighValueGate,
            BlockSpec::Saturation { .. } => BlockKind::Saturation,
            BlockSpec::RateLimiter { .. } => BlockKind::RateLimiter,
        }
    }

    pub fn lag(k: f64, t: f64) -> Self {
        BlockSpec::FirstOrderLag { k, t }
    }

    pub fn pid(kp: f64, ki: f64, kd: f64, td: f64) -> Self {
        BlockSpec::Pid {
            kp,
            ki,
            kd,
            td,
            integrator_limits: None,
            output_limits: None,
        }
    }

    /// Checks the parameter invariants that do not depend on `dt`.
    pub fn validate(&self) -> Result<(), BlockError> {
        fn positive(name: &'static str, value: f64) -> Result<(), BlockError> {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(BlockError::InvalidParameter {
                    name,
                    value,
                    reason: "must be positive",
                })
            }
        }
        fn non_negative(name: &'static str, value: f64) -> Result<(), BlockError> {
            if value >= 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(BlockError::InvalidParameter {
                    name,
                    value,
                    reason: "must be non-negative",
                })
            }
        }
        fn finite(name: &'static str, value: f64) -> Result<(), BlockError> {
            if value.is_finite() {
                Ok(())
            } else {
                Err(BlockError::InvalidParameter {
                    name,
                    value,
                    reason: "must be finite",
                })
            }
        }
        fn check_limits(l: &Limits) -> Result<(), BlockError> {
            Limits::new(l.min, l.max).map(|_| ())
        }

        match self {
            BlockSpec::Gain { k } => finite("k", *k),
            BlockSpec::FirstOrderLag { k, t } => {
                finite("k", *k)?;
                positive("t", *t)
            }
            BlockSpec::LeadLag { t_lead, t_lag } => {
                non_negative("t_lead", *t_lead)?;
                positive("t_lag", *t_lag)
            }
            BlockSpec::Pid {
                kp,
                ki,
                kd,
                td,
                integrator_limits,
                output_limits,
            } => {
                finite("kp", *kp)?;
                finite("ki", *ki)?;
                non_negative("kd", *kd)?;
                non_negative("td", *td)?;
                if *kd > 0.0 && *td == 0.0 {
                    return Err(BlockError::InvalidParameter {
                        name: "td",
                        value: *td,
                        reason: "a derivative gain needs a positive filter time constant",
                    });
                }
                if let Some(l) = integrator_limits {
                    check_limits(l)?;
                }
                if let Some(l) = output_limits {
                    check_limits(l)?;
                }
                Ok(())
            }
            BlockSpec::LimitedIntegrator { k, limits } => {
                finite("k", *k)?;
                check_limits(limits)
            }
            BlockSpec::PureDelay { t } => non_negative("t", *t),
            BlockSpec::LowValueGate | BlockSpec::HighValueGate => Ok(()),
            BlockSpec::Saturation { limits } => check_limits(limits),
            BlockSpec::RateLimiter { down, up } => {
                positive("down", *down)?;
                positive("up", *up)
            }
        }
    }

    /// Steady-state gain from input to output, where one exists.
    pub fn dc_gain(&self) -> Option<f64> {
        match self {
            BlockSpec::Gain { k } | BlockSpec::FirstOrderLag { k, .. } => Some(*k),
            BlockSpec::LeadLag { .. } | BlockSpec::PureDelay { .. } => Some(1.0),
            _ => None,
        }
    }
}

/// Coefficients of `y[n] = Σ a[i] y[n-1-i] + Σ b[j] u[n-j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffEq {
    /// Feedback coefficients, `a[0]` multiplies `y[n-1]`.
    pub a: Vec<f64>,
    /// Feedforward coefficients, `b[0]` multiplies `u[n]`.
    pub b: Vec<f64>,
}

impl DiffEq {
    /// Runs the difference equation from rest (all past samples zero).
    pub fn simulate(&self, input: &[f64]) -> Vec<f64> {
        let mut y = Vec::with_capacity(input.len());
        for n in 0..input.len() {
            let mut acc = 0.0;
            for (j, bj) in self.b.iter().enumerate() {
                if n >= j {
                    acc += bj * input[n - j];
                }
            }
            for (i, ai) in self.a.iter().enumerate() {
                if n > i {
                    acc += ai * y[n - 1 - i];
                }
            }
            y.push(acc);
        }
        y
    }

    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 - self.a.iter().sum::<f64>())
    }
}

/// Bilinear coefficients of `k / (1 + s t)`.
fn lag_coefficients(k: f64, t: f64, dt: f64) -> (f64, f64) {
    let den = 2.0 * t + dt;
    ((2.0 * t - dt) / den, k * dt / den)
}

fn check_dt(dt: f64) -> Result<(), BlockError> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(BlockError::NonPositiveDt(dt))
    }
}

/// Difference-equation form of a linear block under the bilinear rule.
pub fn discretize_linear(spec: &BlockSpec, dt: f64) -> Result<DiffEq, BlockError> {
    check_dt(dt)?;
    spec.validate()?;
    match *spec {
        BlockSpec::Gain { k } => Ok(DiffEq {
            a: vec![],
            b: vec![k],
        }),
        BlockSpec::FirstOrderLag { k, t } => {
            let (a1, b) = lag_coefficients(k, t, dt);
            Ok(DiffEq {
                a: vec![a1],
                b: vec![b, b],
            })
        }
        BlockSpec::LeadLag { t_lead, t_lag } => {
            let den = 2.0 * t_lag + dt;
            Ok(DiffEq {
                a: vec![(2.0 * t_lag - dt) / den],
                b: vec![(2.0 * t_lead + dt) / den, (dt - 2.0 * t_lead) / den],
            })
        }
        BlockSpec::Pid {
            kp,
            ki,
            kd,
            td,
            integrator_limits: None,
            output_limits: None,
        } => Ok(pid_diff_eq(kp, ki, kd, td, dt)),
        _ => Err(BlockError::NonlinearBlock(spec.kind())),
    }
}

// Polynomials in z^-1, lowest power first.
fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, pi) in p.iter().enumerate() {
        for (j, qj) in q.iter().enumerate() {
            out[i + j] += pi * qj;
        }
    }
    out
}

fn poly_add(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len().max(q.len())];
    for (i, v) in p.iter().enumerate() {
        out[i] += v;
    }
    for (i, v) in q.iter().enumerate() {
        out[i] += v;
    }
    out
}

/// Parallel sum of the three PID paths over a common denominator.
fn pid_diff_eq(kp: f64, ki: f64, kd: f64, td: f64, dt: f64) -> DiffEq {
    let has_d = kd != 0.0;
    let has_i = ki != 0.0;
    // proportional: kp / 1
    let mut num = vec![kp];
    let mut den = vec![1.0];
    if has_i {
        // ki dt/2 (1 + z^-1) / (1 - z^-1)
        let n = [ki * dt / 2.0, ki * dt / 2.0];
        let d = [1.0, -1.0];
        num = poly_add(&poly_mul(&num, &d), &poly_mul(&n, &den));
        den = poly_mul(&den, &d);
    }
    if has_d {
        // 2 kd (1 - z^-1) / ((2 td + dt) - (2 td - dt) z^-1)
        let scale = 2.0 * td + dt;
        let n = [2.0 * kd / scale, -2.0 * kd / scale];
        let d = [1.0, -(2.0 * td - dt) / scale];
        num = poly_add(&poly_mul(&num, &d), &poly_mul(&n, &den));
        den = poly_mul(&den, &d);
    }
    DiffEq {
        a: den[1..].iter().map(|c| -c).collect(),
        b: num,
    }
}

/// Input to a block step: single signal, or the pair compared by a gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockInput {
    Single(f64),
    Pair(f64, f64),
}

impl From<f64> for BlockInput {
    fn from(v: f64) -> Self {
        BlockInput::Single(v)
    }
}

impl From<(f64, f64)> for BlockInput {
    fn from((a, b): (f64, f64)) -> Self {
        BlockInput::Pair(a, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Internal {
    Stateless,
    /// Generic difference equation with input/output history.
    Linear {
        eq: DiffEq,
        u_hist: Vec<f64>,
        y_hist: Vec<f64>,
    },
    Pid {
        kp: f64,
        ki_half_dt: f64,
        d_a1: f64,
        d_b: f64,
        integral: f64,
        deriv: f64,
        prev_input: f64,
    },
    Integrator {
        k_half_dt: f64,
        value: f64,
        prev_input: f64,
    },
    Delay {
        buffer: Vec<f64>,
        head: usize,
    },
    Rate {
        max_down: f64,
        max_up: f64,
    },
}

/// A block together with its state at a fixed sample period.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockState {
    spec: BlockSpec,
    dt: f64,
    internal: Internal,
    last_output: f64,
}

/// Builds a block in equilibrium at `initial_output`.
///
/// Feeding [`BlockState::steady_input`] keeps the output at
/// `initial_output` indefinitely. Blocks without a finite DC gain (PID,
/// integrators) are settled at zero input with the integral state carrying
/// the output.
pub fn make_block(spec: BlockSpec, dt: f64, initial_output: f64) -> Result<BlockState, BlockError> {
    check_dt(dt)?;
    spec.validate()?;
    let y0 = initial_output;
    let internal = match spec {
        BlockSpec::Gain { .. }
        | BlockSpec::LowValueGate
        | BlockSpec::HighValueGate
        | BlockSpec::Saturation { .. } => Internal::Stateless,
        BlockSpec::FirstOrderLag { k, .. } => {
            let eq = discretize_linear(&spec, dt)?;
            let u0 = if k != 0.0 { y0 / k } else { 0.0 };
            Internal::Linear {
                u_hist: vec![u0; eq.b.len()],
                y_hist: vec![y0; eq.a.len()],
                eq,
            }
        }
        BlockSpec::LeadLag { .. } => {
            let eq = discretize_linear(&spec, dt)?;
            Internal::Linear {
                u_hist: vec![y0; eq.b.len()],
                y_hist: vec![y0; eq.a.len()],
                eq,
            }
        }
        BlockSpec::Pid {
            kp,
            ki,
            kd,
            td,
            integrator_limits,
            ..
        } => {
            let (d_a1, d_b) = if kd != 0.0 {
                let scale = 2.0 * td + dt;
                ((2.0 * td - dt) / scale, 2.0 * kd / scale)
            } else {
                (0.0, 0.0)
            };
            let integral = integrator_limits.map_or(y0, |l| l.clamp(y0));
            Internal::Pid {
                kp,
                ki_half_dt: ki * dt / 2.0,
                d_a1,
                d_b,
                integral,
                deriv: 0.0,
                prev_input: 0.0,
            }
        }
        BlockSpec::LimitedIntegrator { k, limits } => Internal::Integrator {
            k_half_dt: k * dt / 2.0,
            value: limits.clamp(y0),
            prev_input: 0.0,
        },
        BlockSpec::PureDelay { t } => {
            let samples = (t / dt).round();
            if t > 0.0 && samples < 1.0 {
                return Err(BlockError::DelayShorterThanDt { delay: t, dt });
            }
            Internal::Delay {
                buffer: vec![y0; samples as usize],
                head: 0,
            }
        }
        BlockSpec::RateLimiter { down, up } => Internal::Rate {
            max_down: down * dt,
            max_up: up * dt,
        },
    };
    let last_output = match &spec {
        BlockSpec::Saturation { limits } => limits.clamp(y0),
        BlockSpec::LimitedIntegrator { limits, .. } => limits.clamp(y0),
        _ => y0,
    };
    Ok(BlockState {
        spec,
        dt,
        internal,
        last_output,
    })
}

impl BlockState {
    pub fn spec(&self) -> &BlockSpec {
        &self.spec
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn last_output(&self) -> f64 {
        self.last_output
    }

    /// Input that holds the block at its current equilibrium output.
    pub fn steady_input(&self) -> f64 {
        match (&self.spec, &self.internal) {
            (BlockSpec::Gain { k }, _) | (BlockSpec::FirstOrderLag { k, .. }, _) => {
                if *k != 0.0 {
                    self.last_output / k
                } else {
                    0.0
                }
            }
            (BlockSpec::Pid { .. }, _) | (BlockSpec::LimitedIntegrator { .. }, _) => 0.0,
            _ => self.last_output,
        }
    }

    /// Number of samples held by a delay block (0 for other kinds).
    pub fn delay_samples(&self) -> usize {
        match &self.internal {
            Internal::Delay { buffer, .. } => buffer.len(),
            _ => 0,
        }
    }

    /// Integral state of a PID or limited integrator.
    pub fn integral_state(&self) -> Option<f64> {
        match &self.internal {
            Internal::Pid { integral, .. } => Some(*integral),
            Internal::Integrator { value, .. } => Some(*value),
            _ => None,
        }
    }

    /// Overrides the integral state (clamped to the block's integrator limits).
    pub fn set_integral_state(&mut self, value: f64) {
        let limits = match &self.spec {
            BlockSpec::Pid {
                integrator_limits, ..
            } => integrator_limits.unwrap_or_else(Limits::unbounded),
            BlockSpec::LimitedIntegrator { limits, .. } => *limits,
            _ => return,
        };
        match &mut self.internal {
            Internal::Pid { integral, .. } => *integral = limits.clamp(value),
            Internal::Integrator { value: v, .. } => *v = limits.clamp(value),
            _ => {}
        }
    }

    /// Sets the history as if `input` had been applied and `output` produced
    /// on the previous sample. For PID blocks the derivative path starts at
    /// rest and the integral absorbs `output - kp * input`.
    pub fn settle(&mut self, input: f64, output: f64) {
        match &mut self.internal {
            Internal::Linear { u_hist, y_hist, .. } => {
                u_hist.iter_mut().for_each(|u| *u = input);
                y_hist.iter_mut().for_each(|y| *y = output);
            }
            Internal::Pid {
                kp,
                integral,
                deriv,
                prev_input,
                ..
            } => {
                *integral = output - *kp * input;
                *deriv = 0.0;
                *prev_input = input;
            }
            Internal::Integrator {
                value, prev_input, ..
            } => {
                *value = output;
                *prev_input = input;
            }
            Internal::Delay { buffer, .. } => buffer.iter_mut().for_each(|b| *b = output),
            Internal::Stateless | Internal::Rate { .. } => {}
        }
        if let Some(v) = self.integral_state() {
            // re-apply limits
            self.set_integral_state(v);
        }
        self.last_output = output;
    }

    /// Overwrites the most recent output of a lag-type block, so the next
    /// sample continues from `y` (non-windup output limiting).
    pub fn force_output(&mut self, y: f64) {
        if let Internal::Linear { y_hist, .. } = &mut self.internal {
            if let Some(h) = y_hist.first_mut() {
                *h = y;
            }
        }
        self.last_output = y;
    }

    /// Advances one sample, checking the sample period and input arity.
    pub fn step(&mut self, input: impl Into<BlockInput>, dt: f64) -> Result<f64, BlockError> {
        if dt != self.dt {
            return Err(BlockError::DtMismatch {
                built: self.dt,
                given: dt,
            });
        }
        let input = input.into();
        let gate = matches!(
            self.spec,
            BlockSpec::LowValueGate | BlockSpec::HighValueGate
        );
        match (gate, input) {
            (true, BlockInput::Pair(a, b)) => Ok(self.advance_pair(a, b)),
            (false, BlockInput::Single(u)) => Ok(self.advance(u)),
            (true, _) => Err(BlockError::ArityMismatch {
                kind: self.spec.kind(),
                expected: 2,
            }),
            (false, _) => Err(BlockError::ArityMismatch {
                kind: self.spec.kind(),
                expected: 1,
            }),
        }
    }

    /// Gate step without arity checks.
    pub fn advance_pair(&mut self, a: f64, b: f64) -> f64 {
        let y = match self.spec {
            BlockSpec::LowValueGate => a.min(b),
            BlockSpec::HighValueGate => a.max(b),
            _ => a,
        };
        self.last_output = y;
        y
    }

    /// Single-input step without checks. Gates pass the input through.
    pub fn advance(&mut self, u: f64) -> f64 {
        let y = match (&self.spec, &mut self.internal) {
            (BlockSpec::Gain { k }, _) => k * u,
            (BlockSpec::Saturation { limits }, _) => limits.clamp(u),
            (BlockSpec::LowValueGate | BlockSpec::HighValueGate, _) => u,
            (_, Internal::Linear { eq, u_hist, y_hist }) => {
                u_hist.rotate_right(1);
                u_hist[0] = u;
                let mut acc = 0.0;
                for (bj, uj) in eq.b.iter().zip(u_hist.iter()) {
                    acc += bj * uj;
                }
                for (ai, yi) in eq.a.iter().zip(y_hist.iter()) {
                    acc += ai * yi;
                }
                if !y_hist.is_empty() {
                    y_hist.rotate_right(1);
                    y_hist[0] = acc;
                }
                acc
            }
            (
                BlockSpec::Pid {
                    integrator_limits,
                    output_limits,
                    ..
                },
                Internal::Pid {
                    kp,
                    ki_half_dt,
                    d_a1,
                    d_b,
                    integral,
                    deriv,
                    prev_input,
                },
            ) => {
                let next = *integral + *ki_half_dt * (u + *prev_input);
                *integral = match integrator_limits {
                    Some(l) => l.clamp(next),
                    None => next,
                };
                if *d_b != 0.0 {
                    *deriv = *d_a1 * *deriv + *d_b * (u - *prev_input);
                }
                *prev_input = u;
                let out = *kp * u + *integral + *deriv;
                match output_limits {
                    Some(l) => l.clamp(out),
                    None => out,
                }
            }
            (
                BlockSpec::LimitedIntegrator { limits, .. },
                Internal::Integrator {
                    k_half_dt,
                    value,
                    prev_input,
                },
            ) => {
                *value = limits.clamp(*value + *k_half_dt * (u + *prev_input));
                *prev_input = u;
                *value
            }
            (_, Internal::Delay { buffer, head }) => {
                if buffer.is_empty() {
                    u
                } else {
                    let out = buffer[*head];
                    buffer[*head] = u;
                    *head = (*head + 1) % buffer.len();
                    out
                }
            }
            (_, Internal::Rate { max_down, max_up }) => {
                let prev = self.last_output;
                u.clamp(prev - *max_down, prev + *max_up)
            }
            _ => unreachable!("block state does not match its spec"),
        };
        self.last_output = y;
        y
    }
}

/// Applies `block` to a whole input sequence.
pub fn run_block(block: &mut BlockState, input: &[f64]) -> Vec<f64> {
    input.iter().map(|&u| block.advance(u)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 0.001;

    #[test]
    fn lag_holds_initial_output() {
        let mut b = make_block(BlockSpec::lag(1.0, 1.83), DT, 0.5).unwrap();
        let u = b.steady_input();
        for _ in 0..1000 {
            assert_eq!(b.advance(u), 0.5);
        }
    }

    #[test]
    fn delay_length_is_rounded_sample_count() {
        let b = make_block(BlockSpec::PureDelay { t: 0.10 }, DT, 0.0).unwrap();
        assert_eq!(b.delay_samples(), 100);
        let b = make_block(BlockSpec::PureDelay { t: 0.0 }, DT, 0.0).unwrap();
        assert_eq!(b.delay_samples(), 0);
    }

    #[test]
    fn gain_is_stateless_identity_for_unit_k() {
        let mut b = make_block(BlockSpec::Gain { k: 1.0 }, DT, 0.7).unwrap();
        assert_eq!(b.steady_input(), 0.7);
        assert_eq!(b.advance(0.7), 0.7);
        assert_eq!(b.advance(-3.0), -3.0);
    }

    #[test]
    fn construction_errors() {
        assert_eq!(
            make_block(BlockSpec::lag(1.0, 1.0), 0.0, 0.0).unwrap_err(),
            BlockError::NonPositiveDt(0.0)
        );
        assert!(matches!(
            make_block(
                BlockSpec::Saturation {
                    limits: Limits { min: 1.0, max: 1.0 }
                },
                DT,
                0.0
            ),
            Err(BlockError::InvalidLimits { .. })
        ));
        assert!(matches!(
            make_block(BlockSpec::PureDelay { t: 0.0004 }, DT, 0.0),
            Err(BlockError::DelayShorterThanDt { .. })
        ));
        assert!(matches!(
            make_block(BlockSpec::pid(1.0, 1.0, 0.5, 0.0), DT, 0.0),
            Err(BlockError::InvalidParameter { name: "td", .. })
        ));
    }

    #[test]
    fn step_checks_dt_and_arity() {
        let mut b = make_block(BlockSpec::lag(1.0, 1.0), DT, 0.0).unwrap();
        assert!(matches!(
            b.step(1.0, 0.002),
            Err(BlockError::DtMismatch { .. })
        ));
        assert!(matches!(
            b.step((1.0, 2.0), DT),
            Err(BlockError::ArityMismatch { expected: 1, .. })
        ));
        let mut g = make_block(BlockSpec::LowValueGate, DT, 0.0).unwrap();
        assert!(matches!(
            g.step(1.0, DT),
            Err(BlockError::ArityMismatch { expected: 2, .. })
        ));
    }

    #[test]
    fn gates_select_low_and_high() {
        let mut lv = make_block(BlockSpec::LowValueGate, DT, 0.0).unwrap();
        let mut hv = make_block(BlockSpec::HighValueGate, DT, 0.0).unwrap();
        assert_eq!(lv.step((0.3, 0.7), DT).unwrap(), 0.3);
        assert_eq!(hv.step((0.3, 0.7), DT).unwrap(), 0.7);
    }

    #[test]
    fn lag_step_response_at_one_time_constant() {
        // Trapezoidal rule puts a sampled step half a sample early, so the
        // sub-sample period keeps that offset below the tolerance.
        let dt = 1e-4;
        let mut b = make_block(BlockSpec::lag(1.0, 1.0), dt, 0.0).unwrap();
        let mut y = 0.0;
        for _ in 0..10_000 {
            y = b.step(1.0, dt).unwrap();
        }
        assert!((y - (1.0 - (-1.0f64).exp())).abs() < 1e-4, "{y}");
    }

    #[test]
    fn zero_lead_leadlag_equals_lag() {
        let mut ll = make_block(
            BlockSpec::LeadLag {
                t_lead: 0.0,
                t_lag: 0.79,
            },
            DT,
            0.0,
        )
        .unwrap();
        let mut lag = make_block(BlockSpec::lag(1.0, 0.79), DT, 0.0).unwrap();
        for _ in 0..5000 {
            let a = ll.advance(1.0);
            let b = lag.advance(1.0);
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn lag_coefficients_match_bilinear_algebra() {
        let (t, dt) = (1.83, DT);
        let eq = discretize_linear(&BlockSpec::lag(1.0, t), dt).unwrap();
        assert_eq!(eq.a, vec![(2.0 * t - dt) / (2.0 * t + dt)]);
        assert_eq!(eq.b, vec![dt / (2.0 * t + dt), dt / (2.0 * t + dt)]);
        let g = discretize_linear(&BlockSpec::Gain { k: 2.5 }, dt).unwrap();
        assert!(g.a.is_empty());
        assert_eq!(g.b, vec![2.5]);
    }

    #[test]
    fn nonlinear_blocks_have_no_difference_equation() {
        for spec in [
            BlockSpec::LowValueGate,
            BlockSpec::PureDelay { t: 0.1 },
            BlockSpec::Saturation {
                limits: Limits { min: 0.0, max: 1.0 },
            },
            BlockSpec::Pid {
                kp: 1.0,
                ki: 1.0,
                kd: 0.0,
                td: 0.0,
                integrator_limits: Some(Limits { min: 0.0, max: 1.0 }),
                output_limits: None,
            },
        ] {
            assert!(matches!(
                discretize_linear(&spec, DT),
                Err(BlockError::NonlinearBlock(_))
            ));
        }
    }

    #[test]
    fn leadlag_difference_equation_matches_step_block() {
        let spec = BlockSpec::LeadLag {
            t_lead: 0.0,
            t_lag: 0.79,
        };
        let eq = discretize_linear(&spec, DT).unwrap();
        let input = vec![1.0; 5000];
        let reference = eq.simulate(&input);
        let mut b = make_block(spec, DT, 0.0).unwrap();
        for (n, u) in input.iter().enumerate() {
            let y = b.step(*u, DT).unwrap();
            assert!((y - reference[n]).abs() <= 1e-12);
        }
    }

    #[test]
    fn pid_difference_equation_matches_step_block() {
        for spec in [
            BlockSpec::pid(3.10, 0.90, 0.0, 0.0),
            BlockSpec::pid(2.9, 0.95, 0.10, 0.15),
            BlockSpec::pid(0.0, 0.0, 0.4, 0.05),
        ] {
            let eq = discretize_linear(&spec, DT).unwrap();
            let input: Vec<f64> = (0..4000).map(|n| ((n as f64) * 0.013).sin()).collect();
            let reference = eq.simulate(&input);
            let mut b = make_block(spec, DT, 0.0).unwrap();
            for (n, u) in input.iter().enumerate() {
                assert!((b.advance(*u) - reference[n]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn limited_integrator_clamps_state() {
        let spec = BlockSpec::LimitedIntegrator {
            k: 10.0,
            limits: Limits { min: -0.5, max: 0.5 },
        };
        let mut b = make_block(spec, DT, 0.0).unwrap();
        for _ in 0..1000 {
            assert!(b.advance(1.0) <= 0.5);
        }
        assert_eq!(b.last_output(), 0.5);
        // trapezoidal average of +1 and -1 is zero, then the state leaves the limit
        assert_eq!(b.advance(-1.0), 0.5);
        assert!(b.advance(-1.0) < 0.5);
    }

    #[test]
    fn rate_limiter_bounds_slew() {
        let mut b = make_block(BlockSpec::RateLimiter { down: 1.0, up: 2.0 }, DT, 0.0).unwrap();
        assert!((b.advance(1.0) - 0.002).abs() < 1e-15);
        assert!((b.advance(-1.0) - 0.001).abs() < 1e-15);
    }
}
