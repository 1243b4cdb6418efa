//! Least-squares pre-identification, the MSE objective and the error index.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::blocks::{discretize_linear, make_block, run_block, BlockError, BlockSpec};
use crate::params::{ParamError, ParamVector};
use crate::plants::{
    initial_level, selected_branch, simulate_subsystem, PlantError, SubsystemId, GATE_OPEN,
};
use crate::signals::{SignalError, TimeSeries};

/// Squared-condition threshold above which a regressor counts as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Points per parameter in coarse grid scans.
pub const GRID_POINTS: usize = 11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("{rows} rows for {terms} regressor terms")]
    InsufficientData { rows: usize, terms: usize },
    #[error("regressor is singular (scaled condition number {condition:e})")]
    SingularRegressor { condition: f64 },
    #[error("low-value select changes branch at sample {index}")]
    GateSwitchInWindow { index: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty signal")]
    Empty,
    #[error("non-finite value in regression data")]
    NonFinite,
    #[error("least-squares stage failed: {0}")]
    LsFailed(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

/// Linear regression problem `Y ≈ X θ`.
#[derive(Debug, Clone)]
pub struct Regressor {
    x: DMatrix<f64>,
    y: DVector<f64>,
    term_names: Vec<String>,
    scale: Vec<f64>,
}

impl Regressor {
    /// Builds from named columns of equal length and the target vector.
    pub fn new(columns: Vec<(String, Vec<f64>)>, y: Vec<f64>) -> Result<Self, EstimateError> {
        let rows = y.len();
        let terms = columns.len();
        if terms == 0 || rows <= terms {
            return Err(EstimateError::InsufficientData { rows, terms });
        }
        let mut x = DMatrix::zeros(rows, terms);
        let mut names = Vec::with_capacity(terms);
        let mut scale = Vec::with_capacity(terms);
        for (j, (name, col)) in columns.into_iter().enumerate() {
            if col.len() != rows {
                return Err(EstimateError::LengthMismatch {
                    left: col.len(),
                    right: rows,
                });
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(EstimateError::NonFinite);
            }
            scale.push(col.iter().map(|v| v * v).sum::<f64>().sqrt());
            x.set_column(j, &DVector::from_vec(col));
            names.push(name);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(EstimateError::NonFinite);
        }
        Ok(Self {
            x,
            y: DVector::from_vec(y),
            term_names: names,
            scale,
        })
    }

    /// Convenience constructor from a row-major matrix.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self, EstimateError> {
        let terms = rows.first().map_or(0, Vec::len);
        let columns = (0..terms)
            .map(|j| (format!("x{j}"), rows.iter().map(|r| r[j]).collect()))
            .collect();
        Self::new(columns, y)
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn terms(&self) -> usize {
        self.x.ncols()
    }

    pub fn term_names(&self) -> &[String] {
        &self.term_names
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Euclidean norm of each column, the scaling used for conditioning.
    pub fn column_scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn predict(&self, theta: &[f64]) -> Vec<f64> {
        (&self.x * DVector::from_column_slice(theta)).iter().copied().collect()
    }

    pub fn residual_ss(&self, theta: &[f64]) -> f64 {
        let r = &self.y - &self.x * DVector::from_column_slice(theta);
        r.norm_squared()
    }
}

/// Lag structure of an ARX regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct ArxSpec {
    /// Number of past outputs `y(k-1) .. y(k-na)`.
    pub output_lags: usize,
    /// Input channel, number of taps, and pure delay in samples: the taps
    /// are `u(k-d) .. u(k-d-nb+1)`.
    pub inputs: Vec<(String, usize, usize)>,
    pub intercept: bool,
}

impl ArxSpec {
    /// ARX form of a linear block, from its bilinear difference equation.
    pub fn for_block(spec: &BlockSpec, dt: f64, input: &str) -> Result<Self, EstimateError> {
        let eq = discretize_linear(spec, dt)?;
        Ok(Self {
            output_lags: eq.a.len(),
            inputs: vec![(input.to_string(), eq.b.len(), 0)],
            intercept: false,
        })
    }

    /// First sample for which every lagged term exists.
    pub fn first_row(&self) -> usize {
        self.inputs
            .iter()
            .map(|(_, nb, d)| (d + nb).saturating_sub(1))
            .chain(std::iter::once(self.output_lags))
            .max()
            .unwrap_or(0)
    }
}

/// Builds `[y(k-1..), u(k-d..), 1]` rows for `k` in the window `[start, end)`.
pub fn build_regressor_window(
    data: &TimeSeries,
    output: &str,
    spec: &ArxSpec,
    start: usize,
    end: usize,
) -> Result<Regressor, EstimateError> {
    let y = data.require(output)?;
    let first = start.max(spec.first_row());
    let end = end.min(y.len());
    let rows: Vec<usize> = (first..end).collect();
    let mut columns = Vec::new();
    for i in 1..=spec.output_lags {
        columns.push((format!("{output}(k-{i})"), rows.iter().map(|&k| y[k - i]).collect()));
    }
    for (name, nb, d) in &spec.inputs {
        let u = data.require(name)?;
        for j in 0..*nb {
            let lag = d + j;
            columns.push((format!("{name}(k-{lag})"), rows.iter().map(|&k| u[k - lag]).collect()));
        }
    }
    if spec.intercept {
        columns.push(("1".into(), vec![1.0; rows.len()]));
    }
    let terms = columns.len();
    if rows.len() <= terms {
        return Err(EstimateError::InsufficientData {
            rows: rows.len(),
            terms,
        });
    }
    Regressor::new(columns, rows.iter().map(|&k| y[k]).collect())
}

/// ARX regressor over the whole record. If the record carries the three
/// low-select inputs, the selected branch must not change inside it.
pub fn build_regressor(data: &TimeSeries, output: &str, spec: &ArxSpec) -> Result<Regressor, EstimateError> {
    check_gate_window(data, 0, data.len())?;
    build_regressor_window(data, output, spec, 0, data.len())
}

fn gate_branches(data: &TimeSeries) -> Option<Vec<u8>> {
    let fsrn = data.channel("fsrn")?;
    let fsrt = data.channel("fsrt")?;
    let fsra = data.channel("fsra");
    Some(
        (0..fsrn.len())
            .map(|k| selected_branch(fsrn[k], fsrt[k], fsra.map_or(GATE_OPEN, |a| a[k])))
            .collect(),
    )
}

/// Fails with the first index where the low-select changes branch inside
/// `[start, end)`. Records without the select inputs pass.
pub fn check_gate_window(data: &TimeSeries, start: usize, end: usize) -> Result<(), EstimateError> {
    if let Some(b) = gate_branches(data) {
        let end = end.min(b.len());
        for k in (start + 1)..end {
            if b[k] != b[k - 1] {
                return Err(EstimateError::GateSwitchInWindow { index: k });
            }
        }
    }
    Ok(())
}

/// Longest window `[start, end)` with a constant low-select branch.
pub fn longest_gate_window(data: &TimeSeries) -> (usize, usize) {
    let Some(b) = gate_branches(data) else {
        return (0, data.len());
    };
    let mut best = (0, 0);
    let mut start = 0;
    for k in 1..=b.len() {
        if k == b.len() || b[k] != b[k - 1] {
            if k - start > best.1 - best.0 {
                best = (start, k);
            }
            start = k;
        }
    }
    best
}

/// Least-squares solution and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LsFit {
    pub theta: Vec<f64>,
    /// Condition number of the column-scaled regressor.
    pub condition: f64,
    pub residual_ss: f64,
    pub rows: usize,
}

/// Solves `min ‖Y − Xθ‖²` by SVD of the column-scaled regressor.
pub fn ls_estimate(reg: &Regressor) -> Result<LsFit, EstimateError> {
    if reg.scale.contains(&0.0) {
        return Err(EstimateError::SingularRegressor {
            condition: f64::INFINITY,
        });
    }
    let mut xs = reg.x.clone();
    for (j, s) in reg.scale.iter().enumerate() {
        xs.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = xs.svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition * condition <= CONDITION_LIMIT) {
        return Err(EstimateError::SingularRegressor { condition });
    }
    let sol = svd
        .solve(&reg.y, 0.0)
        .map_err(|e| EstimateError::LsFailed(e.to_string()))?;
    let theta: Vec<f64> = sol.iter().zip(&reg.scale).map(|(t, s)| t / s).collect();
    let residual_ss = reg.residual_ss(&theta);
    Ok(LsFit {
        theta,
        condition,
        residual_ss,
        rows: reg.rows(),
    })
}

/// Mean squared error.
pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64, EstimateError> {
    if y.len() != yhat.len() {
        return Err(EstimateError::LengthMismatch {
            left: y.len(),
            right: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(EstimateError::Empty);
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// Error index in percent: `100 · mse` on per-unit signals.
pub fn error_index_percent(y: &[f64], yhat: &[f64]) -> Result<f64, EstimateError> {
    Ok(100.0 * mse(y, yhat)?)
}

// ---------------------------------------------------------------------------
// Physical maps of the bilinear forms.

/// Time constant of a unit lag from its feedback coefficient.
pub fn lag_time_constant(a1: f64, dt: f64) -> f64 {
    dt * (1.0 + a1) / (2.0 * (1.0 - a1))
}

/// Result of the least-squares stage for one subsystem.
#[derive(Debug, Clone)]
pub struct PreIdentification {
    /// Parameter table with LS estimates written in (clipped into bounds).
    pub params: ParamVector,
    /// Raw estimates before clipping, in identification order.
    pub raw: Vec<(String, f64)>,
    pub fits: Vec<LsFit>,
}

fn write_estimates(
    table: &ParamVector,
    raw: &[(String, f64)],
) -> Result<ParamVector, EstimateError> {
    let mut out = table.clone();
    for (name, v) in raw {
        let p = out
            .get_mut(name)
            .ok_or_else(|| ParamError::Unknown(name.clone()))?;
        if !p.free {
            continue;
        }
        let v = if v.is_finite() { *v } else { p.value };
        p.value = v.clamp(p.min, p.max);
    }
    Ok(out)
}

fn window_series(data: &TimeSeries, id: SubsystemId) -> Result<TimeSeries, EstimateError> {
    if id != SubsystemId::Valve {
        return Ok(data.clone());
    }
    match check_gate_window(data, 0, data.len()) {
        Ok(()) => Ok(data.clone()),
        Err(EstimateError::GateSwitchInWindow { index }) => {
            let (s, e) = longest_gate_window(data);
            log::info!("low-select switches at sample {index}; LS restricted to samples {s}..{e}");
            Ok(data.slice(s, e)?)
        }
        Err(e) => Err(e),
    }
}

/// Least-squares pre-identification of one subsystem from its input and
/// output channels. Linear sub-structures are solved in closed form;
/// parameters outside them (delay, derivative path) are scanned.
pub fn ls_preidentify(
    id: SubsystemId,
    data: &TimeSeries,
    table: &ParamVector,
) -> Result<PreIdentification, EstimateError> {
    let data = window_series(data, id)?;
    let dt = data.dt();
    let mut fits = Vec::new();
    let raw: Vec<(String, f64)> = match id {
        SubsystemId::Valve => turbine_scan(&data, table, &mut fits)?,
        SubsystemId::ElectricalPower => droop_scan(&data, table)?,
        SubsystemId::SpeedController => {
            let (kp, ki, _, fit) = pi_level_fit(&data, "speed_error", "fsrn")?;
            fits.push(fit);
            let mut raw = vec![("K_pgov".to_string(), kp), ("K_igov".to_string(), ki)];
            let mut t = write_estimates(table, &raw)?;
            let (kd, td) = derivative_scan(&data, &mut t)?;
            raw.push(("K_dgov".into(), kd));
            raw.push(("T_dgov".into(), td));
            raw
        }
        SubsystemId::TemperatureController => load_limiter_scan(&data, table)?,
        SubsystemId::Exciter => {
            let mut with_err = data.clone();
            let v_err: Vec<f64> = data
                .require("v_ref")?
                .iter()
                .zip(data.require("v_c")?)
                .map(|(r, c)| r - c)
                .collect();
            with_err.push("v_err_ls", v_err)?;
            let (kp, ki, v_a_hat, fit) = pi_level_fit(&with_err, "v_err_ls", "v_a")?;
            fits.push(fit);
            let (k_m, k_ff) = inner_loop_scan(&v_a_hat, data.require("e_fd")?, table, dt)?;
            vec![
                ("K_PA".into(), kp),
                ("K_IA".into(), ki),
                ("K_M".into(), k_m),
                ("K_FF".into(), k_ff),
            ]
        }
    };
    let params = write_estimates(table, &raw)?;
    Ok(PreIdentification { params, raw, fits })
}

/// First-order lead-lag with gain and offset after `d` samples of delay:
/// `y(k) = a1 y(k-1) + c0 u(k-d) + c1 u(k-d-1) + c`, solved in the
/// better-conditioned sum/difference basis. Theta is `[a1, c0, c1, c]`.
fn lead_lag_fit(u: &[f64], y: &[f64], d: usize, start: usize) -> Result<LsFit, EstimateError> {
    let first = start.max(d + 1);
    let rows: Vec<usize> = (first..y.len()).collect();
    let cols = vec![
        ("y(k-1)".to_string(), rows.iter().map(|&k| y[k - 1]).collect::<Vec<f64>>()),
        ("sum".to_string(), rows.iter().map(|&k| u[k - d] + u[k - d - 1]).collect()),
        ("diff".to_string(), rows.iter().map(|&k| u[k - d] - u[k - d - 1]).collect()),
        ("1".to_string(), vec![1.0; rows.len()]),
    ];
    let mut fit = ls_estimate(&Regressor::new(cols, rows.iter().map(|&k| y[k]).collect())?)?;
    let (s, df) = (fit.theta[1], fit.theta[2]);
    fit.theta[1] = s + df;
    fit.theta[2] = s - df;
    Ok(fit)
}

/// Residual sum of squares of [`lead_lag_fit`], solved through the normal
/// equations of the centered problem and summed directly; the expanded
/// quadratic form loses every digit on noiseless records.
fn lead_lag_scan_residual(u: &[f64], y: &[f64], d: usize, start: usize) -> Option<f64> {
    let first = start.max(d + 1);
    let row = |k: usize| nalgebra::Vector3::new(y[k - 1], u[k - d] + u[k - d - 1], u[k - d] - u[k - d - 1]);
    let m = (y.len() - first) as f64;
    let (mut xm, mut ym) = (nalgebra::Vector3::<f64>::zeros(), 0.0);
    for k in first..y.len() {
        xm += row(k);
        ym += y[k];
    }
    xm /= m;
    ym /= m;
    let mut xtx = nalgebra::Matrix3::<f64>::zeros();
    let mut xty = nalgebra::Vector3::<f64>::zeros();
    for k in first..y.len() {
        let r = row(k) - xm;
        xtx += r * r.transpose();
        xty += r * (y[k] - ym);
    }
    let theta = xtx.cholesky()?.solve(&xty);
    Some((first..y.len()).map(|k| (y[k] - ym - (row(k) - xm).dot(&theta)).powi(2)).sum())
}

fn subsystem_mse(id: SubsystemId, table: &ParamVector, data: &TimeSeries, outputs: &[&str]) -> f64 {
    match simulate_subsystem(id, table, data) {
        Ok(sim) => {
            let mut total = 0.0;
            for (name, yhat) in outputs.iter().zip(&sim) {
                match data.channel(name).map(|y| mse(y, yhat)) {
                    Some(Ok(v)) if v.is_finite() => total += v,
                    _ => return f64::INFINITY,
                }
            }
            total / outputs.len() as f64
        }
        Err(_) => f64::INFINITY,
    }
}

fn grid(min: f64, max: f64) -> Vec<f64> {
    if min == max {
        return vec![min];
    }
    (0..GRID_POINTS)
        .map(|i| min + (max - min) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect()
}

/// Coarse scan of the derivative path with the PI gains held.
fn derivative_scan(data: &TimeSeries, table: &mut ParamVector) -> Result<(f64, f64), EstimateError> {
    let kd_p = table.get("K_dgov").cloned().ok_or_else(|| ParamError::Unknown("K_dgov".into()))?;
    let td_p = table.get("T_dgov").cloned().ok_or_else(|| ParamError::Unknown("T_dgov".into()))?;
    let kds = if kd_p.free { grid(kd_p.min, kd_p.max) } else { vec![kd_p.value] };
    let tds = if td_p.free { grid(td_p.min, td_p.max) } else { vec![td_p.value] };
    let mut best = (f64::INFINITY, kd_p.value, td_p.value);
    for &kd in &kds {
        for &td in &tds {
            if kd > 0.0 && td == 0.0 {
                continue;
            }
            let td = if kd == 0.0 && td_p.free { 0.0 } else { td };
            table.set_value("K_dgov", kd)?;
            table.set_value("T_dgov", td)?;
            let m = subsystem_mse(SubsystemId::SpeedController, table, data, &["fsrn"]);
            if m < best.0 {
                best = (m, kd, td);
            }
        }
    }
    table.set_value("K_dgov", best.1)?;
    table.set_value("T_dgov", best.2)?;
    Ok((best.1, best.2))
}

/// Sum of squared differences.
fn sse(y: &[f64], yhat: &[f64]) -> f64 {
    y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Search box of the named parameters: their bounds when free, the fixed
/// value otherwise.
fn search_box(table: &ParamVector, names: &[&str]) -> Result<(Vec<f64>, Vec<f64>), EstimateError> {
    let mut lo = Vec::with_capacity(names.len());
    let mut hi = Vec::with_capacity(names.len());
    for name in names {
        let p = table.get(name).ok_or_else(|| ParamError::Unknown(name.to_string()))?;
        if p.free {
            lo.push(p.min);
            hi.push(p.max);
        } else {
            lo.push(p.value);
            hi.push(p.value);
        }
    }
    Ok((lo, hi))
}

/// Coarse-to-fine grid search of `f` over the box `[lo, hi]`. A grid of
/// `coarse[j]` points on axis `j` is evaluated first; its best
/// `ZOOM_BASINS` local minima and the `starts` are then each refined by
/// 5-point grids on a box halved around the incumbent at every level, until
/// the box is `ZOOM_TOL` of the original width. The first axis varies
/// slowest, so callers put the parameter with the costliest response first
/// and cache on it. Non-finite values never win.
fn zoom_scan(
    lo: &[f64],
    hi: &[f64],
    coarse: &[usize],
    starts: &[Vec<f64>],
    mut f: impl FnMut(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    let dim = lo.len();
    let points: Vec<usize> = coarse.iter().map(|&c| c.max(2)).collect();
    let step: Vec<f64> = (0..dim).map(|j| (hi[j] - lo[j]) / (points[j] - 1) as f64).collect();
    let total: usize = points.iter().product();
    let at = |idx: usize| -> Vec<f64> {
        let mut x = vec![0.0; dim];
        let mut r = idx;
        for j in (0..dim).rev() {
            x[j] = lo[j] + step[j] * (r % points[j]) as f64;
            r /= points[j];
        }
        x
    };
    let values: Vec<f64> = (0..total)
        .map(|idx| {
            let v = f(&at(idx));
            if v.is_finite() { v } else { f64::INFINITY }
        })
        .collect();
    // grid points no worse than any axis neighbour
    let mut stride = vec![1usize; dim];
    for j in (0..dim.saturating_sub(1)).rev() {
        stride[j] = stride[j + 1] * points[j + 1];
    }
    let mut minima: Vec<usize> = (0..total)
        .filter(|&idx| {
            values[idx].is_finite()
                && (0..dim).all(|j| {
                    let i = idx / stride[j] % points[j];
                    (i == 0 || values[idx - stride[j]] >= values[idx])
                        && (i + 1 == points[j] || values[idx + stride[j]] >= values[idx])
                })
        })
        .collect();
    minima.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    minima.truncate(ZOOM_BASINS);

    let mut candidates: Vec<(Vec<f64>, f64)> = minima.iter().map(|&i| (at(i), values[i])).collect();
    for x in starts {
        if x.len() == dim && (0..dim).all(|j| x[j] >= lo[j] && x[j] <= hi[j]) {
            let v = f(x);
            candidates.push((x.clone(), if v.is_finite() { v } else { f64::INFINITY }));
        }
    }
    let mut best = (lo.to_vec(), f64::INFINITY);
    for (x0, v0) in candidates {
        let r = refine(lo, hi, &step, x0, v0, &mut f);
        if r.1 < best.1 {
            best = r;
        }
    }
    best
}

/// Relative box width at which [`zoom_scan`] stops.
const ZOOM_TOL: f64 = 1e-10;
const ZOOM_BASINS: usize = 4;

fn refine(
    lo: &[f64],
    hi: &[f64],
    half: &[f64],
    x0: Vec<f64>,
    v0: f64,
    f: &mut impl FnMut(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    let dim = lo.len();
    let mut best = (x0, v0);
    let mut half = half.to_vec();
    let mut x = vec![0.0; dim];
    while (0..dim).any(|j| 2.0 * half[j] > ZOOM_TOL * (hi[j] - lo[j])) {
        let box_lo: Vec<f64> = (0..dim).map(|j| (best.0[j] - half[j]).max(lo[j])).collect();
        let box_hi: Vec<f64> = (0..dim).map(|j| (best.0[j] + half[j]).min(hi[j])).collect();
        let centre = best.0.clone();
        for idx in 0..5usize.pow(dim as u32) {
            let mut r = idx;
            for j in (0..dim).rev() {
                x[j] = box_lo[j] + (box_hi[j] - box_lo[j]) * (r % 5) as f64 / 4.0;
                r /= 5;
            }
            if x == centre {
                continue;
            }
            let v = f(&x);
            if v < best.1 {
                best = (x.clone(), v);
            }
        }
        for h in &mut half {
            *h *= 0.5;
        }
    }
    best
}

/// Response of a block started in equilibrium with `u[0]`.
fn block_response(spec: BlockSpec, u: &[f64], dt: f64) -> Option<Vec<f64>> {
    let mut b = make_block(spec, dt, u[0]).ok()?;
    Some(run_block(&mut b, u))
}

/// Least squares `y ≈ k g + c` (`c = 0` without `offset`), residual summed
/// directly. Returns `(k, c, sse)`.
fn gain_fit(n: usize, g: impl Fn(usize) -> f64, y: &[f64], offset: bool) -> (f64, f64, f64) {
    let (gm, ym) = if offset {
        ((0..n).map(&g).sum::<f64>() / n as f64, y.iter().sum::<f64>() / n as f64)
    } else {
        (0.0, 0.0)
    };
    let (mut sgy, mut sgg) = (0.0, 0.0);
    for (k, yk) in y.iter().enumerate().take(n) {
        let gc = g(k) - gm;
        sgy += gc * (yk - ym);
        sgg += gc * gc;
    }
    if !(sgg > 0.0) {
        return (f64::NAN, f64::NAN, f64::INFINITY);
    }
    let k = sgy / sgg;
    let c = ym - k * gm;
    let r = (0..n).map(|i| (y[i] - k * g(i) - c).powi(2)).sum();
    (k, c, r)
}

/// Valve and turbine by output error. The actuator lag is scanned against
/// the stroke, then the lead-lag is scanned on the fuel flow rebuilt from
/// the fitted stroke over lead, lag and delay, with gain and no-load offset
/// solved in closed form. No regressor ever holds
/// a noisy measurement.
fn turbine_scan(
    data: &TimeSeries,
    table: &ParamVector,
    fits: &mut Vec<LsFit>,
) -> Result<Vec<(String, f64)>, EstimateError> {
    let dt = data.dt();
    let fsr = data.require("fsr")?;
    let valve = data.require("valve")?;
    let sd = data.require("speed_dev")?;
    let p_mech = data.require("p_mech")?;
    let n = fsr.len();
    let failed = || EstimateError::LsFailed("turbine path".into());

    let actuator = |t: f64| block_response(BlockSpec::lag(1.0, t), fsr, dt);
    let (lo, hi) = search_box(table, &["T_act"])?;
    let (x, _) = zoom_scan(&lo, &hi, &[GRID_POINTS], &[], |x| {
        actuator(x[0]).map_or(f64::INFINITY, |v| sse(valve, &v))
    });
    let t_act = x[0];
    let valve_hat = actuator(t_act).ok_or_else(failed)?;
    let fuel: Vec<f64> = valve_hat.iter().zip(sd).map(|(v, s)| v * (1.0 + s)).collect();
    let dm = table.value("Dm")?;
    let target: Vec<f64> = p_mech.iter().zip(sd).map(|(p, s)| p + dm * s).collect();

    // ARX delay and lead-lag as an extra starting point of the scan
    let (lo, hi) = search_box(table, &["T_b", "T_c", "T_eng"])?;
    let d_lo = (lo[2] / dt).round().max(0.0) as usize;
    let d_hi = (hi[2] / dt).round().max(0.0) as usize;
    let mut starts = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for d in d_lo..=d_hi {
        if let Some(rss) = lead_lag_scan_residual(&fuel, &target, d, d_hi + 1) {
            if best.is_none_or(|(_, b)| rss < b) {
                best = Some((d, rss));
            }
        }
    }
    if let Some((d, _)) = best {
        let fit = lead_lag_fit(&fuel, &target, d, d_hi + 1)?;
        let [a1, c0, c1, _]: [f64; 4] = fit.theta.clone().try_into().expect("four terms");
        let t_b = lag_time_constant(a1, dt);
        let t_c = 0.5 * dt * (c0 - c1) / (c0 + c1);
        starts.push(vec![t_b, t_c, d as f64 * dt]);
        fits.push(fit);
    }
    // lead-lag response cached per (T_b, T_c); the delay is a shift
    let mut cache: Option<(f64, f64, Vec<f64>)> = None;
    let mut profile = |x: &[f64]| -> Option<(f64, usize, f64, f64)> {
        if cache.as_ref().is_none_or(|(b, c, _)| *b != x[0] || *c != x[1]) {
            let g = block_response(BlockSpec::LeadLag { t_lead: x[1], t_lag: x[0] }, &fuel, dt)?;
            cache = Some((x[0], x[1], g));
        }
        let g = &cache.as_ref()?.2;
        let d = (x[2] / dt).round().max(0.0) as usize;
        let (k, c, r) = gain_fit(n, |i| g[i.saturating_sub(d)], &target, true);
        Some((r, d, k, c))
    };
    let (x, _) = zoom_scan(&lo, &hi, &[GRID_POINTS; 3], &starts, |x| {
        profile(x).map_or(f64::INFINITY, |p| p.0)
    });
    let (_, d, k_turb, c) = profile(&x).ok_or_else(failed)?;
    Ok(vec![
        ("T_act".into(), t_act),
        ("T_eng".into(), d as f64 * dt),
        ("T_b".into(), x[0]),
        ("T_c".into(), x[1]),
        ("K_turb".into(), k_turb),
        ("W_fnl".into(), -c / k_turb),
    ])
}

/// Load limiter: lag on the temperature proxy, then a PI on
/// `L_dref - temp_meas` whose integrator is clamped to the FSRT limits.
///
/// A coarse output-error scan over `(T_fload, L_dref, K_iload)`, with
/// `K_pload` in closed form, finds the proportional part but not the
/// integral: the integrator only moves while `L_dref` sits inside the
/// measured temperature range, a basin far narrower than any grid. The
/// integral is recovered from the level form instead. With the clamp
/// pattern known, every free stretch is linear in the parameters,
/// `y = -kp tm + ki L (t - t_s) - ki ∫tm + c_s`, and every clamped one is
/// `y = -kp tm + c`. The pattern starts either from the plateau of
/// `y + kp tm` or from the steady start of the record, and is then
/// re-simulated from each estimate.
fn load_limiter_scan(data: &TimeSeries, table: &ParamVector) -> Result<Vec<(String, f64)>, EstimateError> {
    let dt = data.dt();
    let temp = data.require("temp_proxy")?;
    let y = data.require("fsrt")?;
    let limits = (table.value("FSRT_min")?, table.value("FSRT_max")?);
    let y0 = initial_level(y);
    let kp_p = table.get("K_pload").ok_or_else(|| ParamError::Unknown("K_pload".into()))?;
    let failed = || EstimateError::LsFailed("load limiter".into());

    // output error of x = [T_fload, L_dref, K_iload] with kp solved, as (sse, kp)
    let mut cache: Option<(f64, Vec<f64>)> = None;
    let mut eval = |x: &[f64], kp0: f64| -> Option<(f64, f64)> {
        if cache.as_ref().is_none_or(|(t, _)| *t != x[0]) {
            cache = Some((x[0], block_response(BlockSpec::lag(1.0, x[0]), temp, dt)?));
        }
        let tm = &cache.as_ref()?.1;
        let path = || limiter_path(tm, temp[0], y0, kp0, x[1], x[2], dt, limits);
        let kp = if kp_p.free {
            let (mut sey, mut see) = (0.0, 0.0);
            for ((e, xi, _), yk) in path().zip(y) {
                sey += e * (yk - xi);
                see += e * e;
            }
            if !(see > 0.0) {
                return None;
            }
            sey / see
        } else {
            kp_p.value
        };
        let r = path().zip(y).map(|((e, xi, _), yk)| (yk - xi - kp * e).powi(2)).sum();
        Some((r, kp))
    };
    let (lo, hi) = search_box(table, &["T_fload", "L_dref", "K_iload"])?;
    let kp_start = if kp_p.free { 0.5 * (kp_p.min + kp_p.max) } else { kp_p.value };
    let (x, _) = zoom_scan(&lo, &hi, &[GRID_POINTS; 3], &[], |x| {
        eval(x, kp_start).map_or(f64::INFINITY, |v| v.0)
    });
    let (mut best_sse, mut kp) = eval(&x, kp_start).ok_or_else(failed)?;
    let mut best = [x[0], kp, x[2], x[1]];

    // level form on the clamp pattern, refreshed from each estimate
    let tm = block_response(BlockSpec::lag(1.0, x[0]), temp, dt).ok_or_else(failed)?;
    let (t_lo, t_hi) = search_box(table, &["T_fload"])?;
    let mut level: Option<(f64, Vec<f64>, f64)> = None;
    for mut clamped in [plateau_rows(y, &tm, kp), steady_start_rows(temp)] {
        let mut t_prev = best[0];
        for _ in 0..LEVEL_PASSES {
            let (t, _) = zoom_scan(&t_lo, &t_hi, &[GRID_POINTS], &[vec![t_prev]], |t| {
                block_response(BlockSpec::lag(1.0, t[0]), temp, dt)
                    .and_then(|tm| limiter_level_fit(&tm, y, dt, &clamped))
                    .map_or(f64::INFINITY, |v| v.0)
            });
            t_prev = t[0];
            let tm = block_response(BlockSpec::lag(1.0, t[0]), temp, dt).ok_or_else(failed)?;
            let Some((_, kp_l, ki, l_dref)) = limiter_level_fit(&tm, y, dt, &clamped) else {
                break;
            };
            let kp_l = if kp_p.free { kp_l } else { kp_p.value };
            let (ki, l_dref) = (ki.clamp(lo[2], hi[2]), l_dref.clamp(lo[1], hi[1]));
            let Some((sse, kp_fit)) = eval(&[t[0], l_dref, ki], kp_l) else {
                break;
            };
            if level.as_ref().is_none_or(|l| sse < l.0) {
                level = Some((sse, vec![t[0], l_dref, ki], kp_l));
            }
            if sse < best_sse {
                best_sse = sse;
                best = [t[0], kp_fit, ki, l_dref];
            }
            let next: Vec<bool> = limiter_path(&tm, temp[0], y0, kp_l, l_dref, ki, dt, limits)
                .map(|(_, _, c)| c)
                .collect();
            if next == clamped {
                break;
            }
            clamped = next;
        }
    }
    // the level fit lands inside the narrow basin; finish on output error
    if let Some((v0, x0, kp0)) = level {
        let half: Vec<f64> = x0.iter().map(|v| LEVEL_POLISH * v.abs().max(1e-3)).collect();
        let (x, _) = refine(&lo, &hi, &half, x0, v0, &mut |x| {
            eval(x, kp0).map_or(f64::INFINITY, |v| v.0)
        });
        if let Some((sse, kp_fit)) = eval(&x, kp0) {
            if sse < best_sse {
                best = [x[0], kp_fit, x[2], x[1]];
            }
        }
    }
    kp = best[1];
    Ok(vec![
        ("T_fload".into(), best[0]),
        ("K_pload".into(), kp),
        ("K_iload".into(), best[2]),
        ("L_dref".into(), best[3]),
    ])
}

const LEVEL_PASSES: usize = 6;

/// Load-limiter PI driven by the measured temperature `tm`, started the way
/// the subsystem simulation starts it. Yields `(error, integral, clamped)`.
#[allow(clippy::too_many_arguments)]
fn limiter_path<'a>(
    tm: &'a [f64],
    temp0: f64,
    y0: f64,
    kp: f64,
    l_dref: f64,
    ki: f64,
    dt: f64,
    (lo, hi): (f64, f64),
) -> impl Iterator<Item = (f64, f64, bool)> + 'a {
    let mut integral = (y0 - kp * (l_dref - temp0)).clamp(lo, hi);
    let mut prev = l_dref - tm[0];
    tm.iter().map(move |t| {
        let e = l_dref - t;
        let next = integral + 0.5 * ki * dt * (e + prev);
        integral = next.clamp(lo, hi);
        prev = e;
        (e, integral, next != integral)
    })
}

/// Rows where `y + kp tm` sits on its top or bottom plateau, i.e. where the
/// integrator looks clamped. The sum is smoothed over `PLATEAU_WINDOW`
/// samples first so the test is not decided by measurement noise.
fn plateau_rows(y: &[f64], tm: &[f64], kp: f64) -> Vec<bool> {
    let n = y.len();
    let z: Vec<f64> = y.iter().zip(tm).map(|(a, b)| a + kp * b).collect();
    let w = PLATEAU_WINDOW.min(n);
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in &z {
        prefix.push(prefix.last().copied().unwrap_or(0.0) + v);
    }
    let smooth: Vec<f64> = (0..n)
        .map(|k| {
            let a = k.saturating_sub(w / 2);
            let b = (a + w).min(n);
            (prefix[b] - prefix[a]) / (b - a) as f64
        })
        .collect();
    let zmax = smooth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let zmin = smooth.iter().copied().fold(f64::INFINITY, f64::min);
    let band = 0.1 * (zmax - zmin);
    let count = |pred: &dyn Fn(f64) -> bool| smooth.iter().filter(|v| pred(**v)).count();
    let hi = count(&|v| v >= zmax - band) > n / 100;
    let lo = count(&|v| v <= zmin + band) > n / 100;
    smooth
        .iter()
        .map(|&v| (hi && v >= zmax - band) || (lo && v <= zmin + band))
        .collect()
}

const PLATEAU_WINDOW: usize = 200;
/// Relative half-width of the output-error polish after the level fit.
const LEVEL_POLISH: f64 = 0.02;

/// Rows before the first change of the temperature input. A PI held in
/// equilibrium with a non-zero error can only be sitting on a limit.
fn steady_start_rows(temp: &[f64]) -> Vec<bool> {
    let first = temp.iter().position(|v| *v != temp[0]).unwrap_or(temp.len());
    (0..temp.len()).map(|k| k < first).collect()
}

/// Level-form fit of the load limiter for one clamp pattern. Each run of
/// equal clamp state gets its own intercept; free runs add the ramp and the
/// running integral of `tm`. Rows right after a change of state are left
/// out. Returns `(sse, kp, ki, L_dref)`.
fn limiter_level_fit(tm: &[f64], y: &[f64], dt: f64, clamped: &[bool]) -> Option<(f64, f64, f64, f64)> {
    let n = y.len();
    // runs of constant clamp state
    let mut runs: Vec<(usize, usize, bool)> = Vec::new();
    let mut start = 0;
    for k in 1..=n {
        if k == n || clamped[k] != clamped[start] {
            if k - start >= MIN_RUN {
                runs.push((start, k, clamped[start]));
            }
            start = k;
        }
    }
    if !runs.iter().any(|r| !r.2) {
        return None;
    }
    let terms = 3 + runs.len();
    let mut rows: Vec<(usize, [f64; 3], usize)> = Vec::new();
    for (ri, &(s, e, c)) in runs.iter().enumerate() {
        let mut integral = 0.0;
        for k in s..e {
            if k > s {
                integral += 0.5 * dt * (tm[k] + tm[k - 1]);
            }
            if k < s + RUN_GUARD {
                continue;
            }
            let row = if c {
                [-tm[k], 0.0, 0.0]
            } else {
                [-tm[k], (k - s) as f64 * dt, -integral]
            };
            rows.push((k, row, ri));
        }
    }
    let mut xtx = DMatrix::<f64>::zeros(terms, terms);
    let mut xty = DVector::<f64>::zeros(terms);
    let full = |row: &[f64; 3], ri: usize| {
        let mut v = vec![0.0; terms];
        v[..3].copy_from_slice(row);
        v[3 + ri] = 1.0;
        v
    };
    for (k, row, ri) in &rows {
        let v = full(row, *ri);
        for i in 0..terms {
            if v[i] == 0.0 {
                continue;
            }
            xty[i] += v[i] * y[*k];
            for j in 0..terms {
                xtx[(i, j)] += v[i] * v[j];
            }
        }
    }
    // equilibrate before the factorization
    let d: Vec<f64> = (0..terms).map(|i| xtx[(i, i)].sqrt()).collect();
    if d.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let scaled = DMatrix::from_fn(terms, terms, |i, j| xtx[(i, j)] / (d[i] * d[j]));
    let rhs = DVector::from_fn(terms, |i, _| xty[i] / d[i]);
    let sol = scaled.cholesky()?.solve(&rhs);
    let theta: Vec<f64> = (0..terms).map(|i| sol[i] / d[i]).collect();
    let sse = rows
        .iter()
        .map(|(k, row, ri)| {
            let v = full(row, *ri);
            let fit: f64 = v.iter().zip(&theta).map(|(a, b)| a * b).sum();
            (y[*k] - fit).powi(2)
        })
        .sum();
    let (kp, ki_l, ki) = (theta[0], theta[1], theta[2]);
    Some((sse, kp, ki, ki_l / ki))
}

const MIN_RUN: usize = 50;
const RUN_GUARD: usize = 5;

/// Droop by output error: `droop = r * lag(p_elec)`, the lag scanned and
/// `r` solved in closed form.
fn droop_scan(data: &TimeSeries, table: &ParamVector) -> Result<Vec<(String, f64)>, EstimateError> {
    let dt = data.dt();
    let p_elec = data.require("p_elec")?;
    let droop = data.require("droop")?;
    let r_p = table.get("r").ok_or_else(|| ParamError::Unknown("r".into()))?;
    let fit = |t: f64| -> Option<(f64, f64)> {
        let m = block_response(BlockSpec::lag(1.0, t), p_elec, dt)?;
        if r_p.free {
            let (r, _, rss) = gain_fit(m.len(), |k| m[k], droop, false);
            Some((rss, r))
        } else {
            Some(((0..m.len()).map(|k| (droop[k] - r_p.value * m[k]).powi(2)).sum(), r_p.value))
        }
    };
    let (lo, hi) = search_box(table, &["T_pelec"])?;
    let (x, _) = zoom_scan(&lo, &hi, &[GRID_POINTS], &[], |x| fit(x[0]).map_or(f64::INFINITY, |v| v.0));
    let (_, r) = fit(x[0]).ok_or_else(|| EstimateError::LsFailed("droop".into()))?;
    Ok(vec![("T_pelec".into(), x[0]), ("r".into(), r)])
}

/// PI gains from the level form `y(k) = kp e(k) + ki I(k) + c`, with `I`
/// the trapezoidal running integral of `e`. The regressors hold only the
/// error signal, so output noise enters the fit unfiltered and unbiased.
/// Returns the gains and the fitted output.
fn pi_level_fit(
    data: &TimeSeries,
    error: &str,
    output: &str,
) -> Result<(f64, f64, Vec<f64>, LsFit), EstimateError> {
    let e = data.require(error)?;
    let y = data.require(output)?;
    let dt = data.dt();
    let mut acc = 0.0;
    let integral: Vec<f64> = (0..e.len())
        .map(|k| {
            acc += 0.5 * dt * (e[k] + e[k.saturating_sub(1)]);
            acc
        })
        .collect();
    let reg = Regressor::new(
        vec![
            ("e".into(), e.to_vec()),
            ("integral(e)".into(), integral),
            ("1".into(), vec![1.0; e.len()]),
        ],
        y.to_vec(),
    )?;
    let fit = ls_estimate(&reg)?;
    let yhat = reg.predict(&fit.theta);
    Ok((fit.theta[0], fit.theta[1], yhat, fit))
}

/// ST6B inner loop by output error on the fitted regulator output. With
/// the gate open the field voltage is `(K_FF + K_M)` times the response of
/// a loop that depends on `K_M` alone, so `K_M` is scanned and the sum
/// solved in closed form.
fn inner_loop_scan(v_a: &[f64], e_fd: &[f64], table: &ParamVector, dt: f64) -> Result<(f64, f64), EstimateError> {
    let v_b = table.value("V_B")?;
    let k_g = table.value("K_G")?;
    let t_g = table.value("T_G")?;
    let fb_a = (2.0 * t_g - dt) / (2.0 * t_g + dt);
    let fb_b = dt / (2.0 * t_g + dt);
    let n = v_a.len();
    // unit-sum response, same recursion as the plant
    let response = |k_m: f64| -> Vec<f64> {
        let loop_gain = k_m * k_g;
        let e0 = v_b * v_a[0] / (1.0 + k_m * k_g * v_b);
        let (mut state, mut prev) = (e0, e0);
        v_a.iter()
            .map(|&va| {
                let carried = fb_a * state + fb_b * prev;
                let e = v_b * (va - loop_gain * carried) / (1.0 + v_b * loop_gain * fb_b);
                state = carried + fb_b * e;
                prev = e;
                e
            })
            .collect()
    };
    let kff_p = table.get("K_FF").ok_or_else(|| ParamError::Unknown("K_FF".into()))?;
    let score = |k_m: f64| -> (f64, f64) {
        let h = response(k_m);
        if kff_p.free {
            let (s, _, r) = gain_fit(n, |k| h[k], e_fd, false);
            (r, s)
        } else {
            let s = kff_p.value + k_m;
            ((0..n).map(|k| (e_fd[k] - s * h[k]).powi(2)).sum(), s)
        }
    };
    let (lo, hi) = search_box(table, &["K_M"])?;
    let (x, _) = zoom_scan(&lo, &hi, &[GRID_POINTS], &[], |x| score(x[0]).0);
    let (_, s) = score(x[0]);
    Ok((x[0], s - x[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{make_block, run_block};

    #[test]
    fn identity_regressor_returns_target() {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        // one extra zero row keeps the problem overdetermined
        let mut rows = rows;
        rows.push(vec![0.0; 4]);
        let y = vec![1.0, -2.0, 3.5, 0.25, 0.0];
        let fit = ls_estimate(&Regressor::from_rows(&rows, y).unwrap()).unwrap();
        for (t, e) in fit.theta.iter().zip([1.0, -2.0, 3.5, 0.25]) {
            assert!((t - e).abs() < 1e-14);
        }
    }

    #[test]
    fn duplicate_columns_are_singular() {
        let col: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let reg = Regressor::new(
            vec![("a".into(), col.clone()), ("b".into(), col.clone())],
            col,
        )
        .unwrap();
        assert!(matches!(
            ls_estimate(&reg),
            Err(EstimateError::SingularRegressor { .. })
        ));
    }

    #[test]
    fn too_few_rows() {
        let mut ts = TimeSeries::new(0.001).unwrap();
        ts.push("u", vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        ts.push("y", vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let spec = ArxSpec::for_block(&BlockSpec::lag(1.0, 1.0), 0.001, "u").unwrap();
        assert_eq!(spec.first_row(), 1);
        assert_eq!(
            build_regressor(&ts, "y", &spec).unwrap_err(),
            EstimateError::InsufficientData { rows: 3, terms: 3 }
        );
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(mse(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert!(matches!(mse(&[], &[]), Err(EstimateError::Empty)));
        assert!(matches!(
            mse(&[1.0], &[1.0, 2.0]),
            Err(EstimateError::LengthMismatch { .. })
        ));
        let y: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let yh: Vec<f64> = y.iter().map(|v| v + 0.01).collect();
        assert!((error_index_percent(&y, &yh).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn recovers_lag_time_constant() {
        let dt = 0.001;
        let u: Vec<f64> = (0..20_000)
            .map(|k| if (k / 2500) % 2 == 0 { 0.5 } else { 0.6 })
            .collect();
        let mut b = make_block(BlockSpec::lag(1.0, 1.83), dt, 0.5).unwrap();
        let y = run_block(&mut b, &u);
        let mut ts = TimeSeries::new(dt).unwrap();
        ts.push("u", u).unwrap();
        ts.push("y", y).unwrap();
        let spec = ArxSpec::for_block(&BlockSpec::lag(1.0, 1.83), dt, "u").unwrap();
        let reg = build_regressor(&ts, "y", &spec).unwrap();
        assert_eq!(reg.terms(), 3);
        let fit = ls_estimate(&reg).unwrap();
        let t = lag_time_constant(fit.theta[0], dt);
        assert!((t / 1.83 - 1.0).abs() < 1e-6, "{t}");
    }
}
