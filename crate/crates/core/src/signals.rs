//! Uniformly sampled multi-channel records, CSV I/O and preprocessing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("malformed CSV at line {line}: {reason}")]
    MalformedCsv { line: u64, reason: String },
    #[error("non-uniform sampling at sample {0}")]
    NonUniformSampling(usize),
    #[error("empty file")]
    EmptyFile,
    #[error("missing channel {0}")]
    MissingChannel(String),
    #[error("channel {name} has {got} samples, expected {expected}")]
    LengthMismatch {
        name: String,
        got: usize,
        expected: usize,
    },
    #[error("a time series needs at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("sample period must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("cutoff {cutoff_hz} Hz is not below the Nyquist frequency {nyquist_hz} Hz")]
    CutoffAboveNyquist { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("filter order must be at least 1")]
    ZeroOrder,
    #[error("no per-unit base given for channel {0}")]
    MissingBase(String),
    #[error("per-unit base for channel {name} must be positive, got {base}")]
    NonPositiveBase { name: String, base: f64 },
    #[error("degenerate pulse: period {period} s, duty {duty} at dt {dt} s")]
    DegeneratePeriod { period: f64, duty: f64, dt: f64 },
    #[error("channel {0} is constant, SNR is undefined")]
    ConstantChannel(String),
    #[error("duplicate channel {0}")]
    DuplicateChannel(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for SignalError {
    fn from(e: std::io::Error) -> Self {
        SignalError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Pu,
    #[serde(rename = "MW")]
    Mw,
    V,
    A,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub unit: Unit,
    /// Per-unit base the values were (or will be) divided by.
    pub base: f64,
    pub values: Vec<f64>,
}

/// Uniformly sampled record. All channels share one length of at least 2.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    dt: f64,
    len: Option<usize>,
    channels: Vec<Channel>,
}

impl TimeSeries {
    pub fn new(dt: f64) -> Result<Self, SignalError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SignalError::NonPositiveDt(dt));
        }
        Ok(Self {
            dt,
            len: None,
            channels: Vec::new(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of samples per channel (0 while empty).
    pub fn len(&self) -> usize {
        self.len.unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len().saturating_sub(1) as f64 * self.dt
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|c| c.name.as_str())
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channel_meta(name).map(|c| c.values.as_slice())
    }

    pub fn channel_meta(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&[f64], SignalError> {
        self.channel(name)
            .ok_or_else(|| SignalError::MissingChannel(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.channel_meta(name).is_some()
    }

    /// Appends a per-unit channel.
    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<(), SignalError> {
        self.push_channel(Channel {
            name: name.into(),
            unit: Unit::Pu,
            base: 1.0,
            values,
        })
    }

    pub fn push_channel(&mut self, channel: Channel) -> Result<(), SignalError> {
        if self.contains(&channel.name) {
            return Err(SignalError::DuplicateChannel(channel.name));
        }
        self.check_len(&channel.name, channel.values.len())?;
        self.len = Some(channel.values.len());
        self.channels.push(channel);
        Ok(())
    }

    /// Replaces the values of an existing channel or appends a new one.
    pub fn set(&mut self, name: &str, values: Vec<f64>) -> Result<(), SignalError> {
        if let Some(idx) = self.channels.iter().position(|c| c.name == name) {
            self.check_len(name, values.len())?;
            self.channels[idx].values = values;
            Ok(())
        } else {
            self.push(name, values)
        }
    }

    fn check_len(&self, name: &str, got: usize) -> Result<(), SignalError> {
        match self.len {
            Some(expected) if expected != got => Err(SignalError::LengthMismatch {
                name: name.to_string(),
                got,
                expected,
            }),
            None if got < 2 => Err(SignalError::TooShort(got)),
            _ => Ok(()),
        }
    }

    /// Copy restricted to `names`, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<TimeSeries, SignalError> {
        let mut out = TimeSeries::new(self.dt)?;
        for name in names {
            let meta = self
                .channel_meta(name)
                .ok_or_else(|| SignalError::MissingChannel(name.to_string()))?;
            out.push_channel(meta.clone())?;
        }
        Ok(out)
    }

    /// Samples `[start, end)` of every channel.
    pub fn slice(&self, start: usize, end: usize) -> Result<TimeSeries, SignalError> {
        let end = end.min(self.len());
        let mut out = TimeSeries::new(self.dt)?;
        for c in &self.channels {
            out.push_channel(Channel {
                values: c.values[start.min(end)..end].to_vec(),
                ..c.clone()
            })?;
        }
        Ok(out)
    }

    /// Merges the channels of `other` (same dt and length) into `self`.
    pub fn merge(&mut self, other: &TimeSeries) -> Result<(), SignalError> {
        for c in &other.channels {
            self.push_channel(c.clone())?;
        }
        Ok(())
    }

    fn map_channels(
        &self,
        mut f: impl FnMut(usize, &Channel) -> Result<Channel, SignalError>,
    ) -> Result<TimeSeries, SignalError> {
        let mut out = TimeSeries::new(self.dt)?;
        for (i, c) in self.channels.iter().enumerate() {
            out.push_channel(f(i, c)?)?;
        }
        Ok(out)
    }
}

/// Reads a CSV record: first column `time_s`, one column per channel,
/// `#` comment lines.
pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeries, SignalError> {
    let file = std::fs::File::open(path)?;
    read_csv(file)
}

pub fn read_csv<R: Read>(reader: R) -> Result<TimeSeries, SignalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| malformed(&e, 1))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(SignalError::EmptyFile);
    }
    if headers.len() < 2 {
        return Err(SignalError::MalformedCsv {
            line: 1,
            reason: "expected a time column and at least one channel".into(),
        });
    }

    let mut times = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len() - 1];
    for record in rdr.records() {
        let record = record.map_err(|e| malformed(&e, 0))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(SignalError::MalformedCsv {
                line,
                reason: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
        }
        let mut fields = record.iter().map(|field| {
            field.parse::<f64>().map_err(|_| SignalError::MalformedCsv {
                line,
                reason: format!("not a number: {field:?}"),
            })
        });
        times.push(fields.next().expect("non-empty record")?);
        for (col, value) in columns.iter_mut().zip(fields) {
            col.push(value?);
        }
    }
    if times.is_empty() {
        return Err(SignalError::EmptyFile);
    }
    if times.len() < 2 {
        return Err(SignalError::TooShort(times.len()));
    }

    let dt = times[1] - times[0];
    if !(dt > 0.0) {
        return Err(SignalError::NonUniformSampling(1));
    }
    for i in 1..times.len() {
        let tol = 1e-9 * dt + 4.0 * f64::EPSILON * times[i].abs();
        if ((times[i] - times[i - 1]) - dt).abs() > tol {
            return Err(SignalError::NonUniformSampling(i));
        }
    }

    let mut ts = TimeSeries::new(dt)?;
    for (name, values) in headers.into_iter().skip(1).zip(columns) {
        ts.push_channel(Channel {
            name,
            unit: Unit::None,
            base: 1.0,
            values,
        })?;
    }
    Ok(ts)
}

fn malformed(e: &csv::Error, fallback_line: u64) -> SignalError {
    let line = e.position().map_or(fallback_line, |p| p.line());
    SignalError::MalformedCsv {
        line,
        reason: e.to_string(),
    }
}

pub fn write_csv(ts: &TimeSeries, path: impl AsRef<Path>) -> Result<(), SignalError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(to_csv_string(ts).as_bytes())?;
    file.flush()?;
    Ok(())
}

/// CSV text with shortest round-trip number formatting.
pub fn to_csv_string(ts: &TimeSeries) -> String {
    let mut out = String::from("time_s");
    for name in ts.names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..ts.len() {
        let _ = write!(out, "{:?}", i as f64 * ts.dt());
        for c in ts.channels() {
            let _ = write!(out, ",{:?}", c.values[i]);
        }
        out.push('\n');
    }
    out
}

/// Second-order section `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct-form II state for a constant input `x`.
    fn steady_state(&self, x: f64) -> [f64; 2] {
        let y = self.dc_gain() * x;
        let s2 = self.b[2] * x - self.a[1] * y;
        let s1 = self.b[1] * x - self.a[0] * y + s2;
        [s1, s2]
    }

    fn run(&self, data: &mut [f64]) {
        let Some(&first) = data.first() else {
            return;
        };
        let [mut s1, mut s2] = self.steady_state(first);
        for x in data.iter_mut() {
            let u = *x;
            let y = self.b[0] * u + s1;
            s1 = self.b[1] * u - self.a[0] * y + s2;
            s2 = self.b[2] * u - self.a[1] * y;
            *x = y;
        }
    }
}

/// Digital Butterworth low-pass as cascaded sections (bilinear transform
/// with the cutoff prewarped).
pub fn butterworth_sections(
    cutoff_hz: f64,
    order: usize,
    dt: f64,
) -> Result<Vec<Biquad>, SignalError> {
    if order == 0 {
        return Err(SignalError::ZeroOrder);
    }
    let nyquist_hz = 0.5 / dt;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist_hz) {
        return Err(SignalError::CutoffAboveNyquist {
            cutoff_hz,
            nyquist_hz,
        });
    }
    let w = (std::f64::consts::PI * cutoff_hz * dt).tan();
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for k in 0..order / 2 {
        // pole pair at angle theta from the negative real axis
        let theta = std::f64::consts::PI * (2 * k + 1) as f64 / (2 * order) as f64;
        let two_zeta = 2.0 * theta.cos();
        let a0 = 1.0 + two_zeta * w + w * w;
        let g = w * w / a0;
        sections.push(Biquad {
            b: [g, 2.0 * g, g],
            a: [(2.0 * w * w - 2.0) / a0, (1.0 - two_zeta * w + w * w) / a0],
        });
    }
    if order % 2 == 1 {
        let a0 = 1.0 + w;
        sections.push(Biquad {
            b: [w / a0, w / a0, 0.0],
            a: [(w - 1.0) / a0, 0.0],
        });
    }
    Ok(sections)
}

/// Forward-backward (zero-phase) filtering of one channel with odd-extension
/// padding and steady-state section initialization.
pub fn filtfilt(sections: &[Biquad], x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = pad.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Zero-phase Butterworth low-pass applied to every channel.
pub fn butterworth_lowpass(
    ts: &TimeSeries,
    cutoff_hz: f64,
    order: usize,
) -> Result<TimeSeries, SignalError> {
    let sections = butterworth_sections(cutoff_hz, order, ts.dt())?;
    // several time constants of the slowest pole
    let pad = (6.0 / (cutoff_hz * ts.dt())).ceil() as usize;
    ts.map_channels(|_, c| {
        Ok(Channel {
            values: filtfilt(&sections, &c.values, pad),
            ..c.clone()
        })
    })
}

/// Divides every channel listed in `bases` by its base and marks it per-unit.
/// Channels without an entry are passed through unchanged.
pub fn per_unitize(ts: &TimeSeries, bases: &BTreeMap<String, f64>) -> Result<TimeSeries, SignalError> {
    for (name, &base) in bases {
        if !ts.contains(name) {
            return Err(SignalError::MissingChannel(name.clone()));
        }
        if !(base > 0.0 && base.is_finite()) {
            return Err(SignalError::NonPositiveBase {
                name: name.clone(),
                base,
            });
        }
    }
    ts.map_channels(|_, c| match bases.get(&c.name) {
        Some(&base) => Ok(Channel {
            name: c.name.clone(),
            unit: Unit::Pu,
            base,
            values: c.values.iter().map(|v| v / base).collect(),
        }),
        None => Ok(c.clone()),
    })
}

/// Per-unitizes exactly the named channels, failing if any base is absent.
pub fn per_unitize_channels(
    ts: &TimeSeries,
    channels: &[&str],
    bases: &BTreeMap<String, f64>,
) -> Result<TimeSeries, SignalError> {
    let mut selected = BTreeMap::new();
    for name in channels {
        let base = bases
            .get(*name)
            .ok_or_else(|| SignalError::MissingBase(name.to_string()))?;
        selected.insert(name.to_string(), *base);
    }
    per_unitize(ts, &selected)
}

/// Inverse of [`per_unitize`] for every per-unit channel.
pub fn de_per_unitize(ts: &TimeSeries, units: &BTreeMap<String, Unit>) -> Result<TimeSeries, SignalError> {
    ts.map_channels(|_, c| {
        if c.unit != Unit::Pu {
            return Ok(c.clone());
        }
        Ok(Channel {
            name: c.name.clone(),
            unit: units.get(&c.name).copied().unwrap_or(Unit::None),
            base: c.base,
            values: c.values.iter().map(|v| v * c.base).collect(),
        })
    })
}

/// Square wave starting in the low phase. With `P = round(period / dt)`
/// samples per period, the high phase lasts `floor(duty * P)` samples and the
/// low phase the rest. The record holds `round(duration / dt) + 1` samples.
pub fn square_pulse(
    channel: &str,
    dt: f64,
    duration: f64,
    period: f64,
    duty: f64,
    low: f64,
    high: f64,
) -> Result<TimeSeries, SignalError> {
    let mut ts = TimeSeries::new(dt)?;
    let degenerate = || SignalError::DegeneratePeriod { period, duty, dt };
    if !(duty > 0.0 && duty < 1.0) || !(period >= 2.0 * dt) {
        return Err(degenerate());
    }
    let per = (period / dt).round() as usize;
    let high_count = (duty * per as f64).floor() as usize;
    let low_count = per - high_count;
    if high_count == 0 || low_count == 0 {
        return Err(degenerate());
    }
    let n = (duration / dt).round() as usize + 1;
    let values = (0..n)
        .map(|k| if k % per < low_count { low } else { high })
        .collect();
    ts.push(channel, values)?;
    Ok(ts)
}

/// Adds zero-mean Gaussian noise to every channel at `snr_db`
/// (signal variance over noise variance). `f64::INFINITY` is the identity.
pub fn add_noise(ts: &TimeSeries, snr_db: f64, seed: u64) -> Result<TimeSeries, SignalError> {
    let names: Vec<String> = ts.names().map(str::to_string).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    add_noise_to(ts, &refs, snr_db, seed)
}

/// [`add_noise`] restricted to the listed channels. Each channel draws from
/// its own stream, keyed by its position in the record.
pub fn add_noise_to(
    ts: &TimeSeries,
    channels: &[&str],
    snr_db: f64,
    seed: u64,
) -> Result<TimeSeries, SignalError> {
    for name in channels {
        ts.require(name)?;
    }
    if snr_db == f64::INFINITY {
        return Ok(ts.clone());
    }
    ts.map_channels(|idx, c| {
        if !channels.contains(&c.name.as_str()) {
            return Ok(c.clone());
        }
        let var = variance(&c.values);
        if !(var > 0.0) {
            return Err(SignalError::ConstantChannel(c.name.clone()));
        }
        let sigma = (var / 10f64.powf(snr_db / 10.0)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(idx as u64);
        let values = c
            .values
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + sigma * z
            })
            .collect();
        Ok(Channel {
            values,
            ..c.clone()
        })
    })
}

pub(crate) fn variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, dt: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|k| (2.0 * std::f64::consts::PI * freq * k as f64 * dt).sin())
            .collect()
    }

    fn amplitude(x: &[f64]) -> f64 {
        x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn loads_uniform_file() {
        let mut text = String::from("# recorded at 1 ms\ntime_s,p_ref,p_mech\n");
        for i in 0..5001 {
            text.push_str(&format!("{},{},{}\n", i as f64 * 0.001, 0.75, 0.5 + i as f64 * 1e-4));
        }
        let ts = read_csv(text.as_bytes()).unwrap();
        assert_eq!(ts.dt(), 0.001);
        assert_eq!(ts.len(), 5001);
        assert_eq!(ts.names().collect::<Vec<_>>(), ["p_ref", "p_mech"]);
    }

    #[test]
    fn detects_gap() {
        let mut text = String::from("time_s,x\n");
        for i in 0..200 {
            let t = if i >= 100 { (i + 1) as f64 * 0.001 } else { i as f64 * 0.001 };
            text.push_str(&format!("{t},{i}\n"));
        }
        assert!(matches!(
            read_csv(text.as_bytes()),
            Err(SignalError::NonUniformSampling(100))
        ));
    }

    #[test]
    fn empty_and_malformed_files() {
        assert!(matches!(read_csv("".as_bytes()), Err(SignalError::EmptyFile)));
        assert!(matches!(
            read_csv("time_s,x\n".as_bytes()),
            Err(SignalError::EmptyFile)
        ));
        assert!(matches!(
            read_csv("time_s,x\n0,1\n0.001,abc\n".as_bytes()),
            Err(SignalError::MalformedCsv { line: 3, .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let mut ts = TimeSeries::new(0.001).unwrap();
        ts.push("a", vec![0.1, -2.5e-9, 3.0, 1.0 / 3.0]).unwrap();
        ts.push("b", vec![1e12, 0.0, -0.0, 7.25]).unwrap();
        let back = read_csv(to_csv_string(&ts).as_bytes()).unwrap();
        assert_eq!(back.dt(), ts.dt());
        for name in ["a", "b"] {
            assert_eq!(back.channel(name), ts.channel(name));
        }
    }

    #[test]
    fn lowpass_keeps_constants() {
        let mut ts = TimeSeries::new(0.001).unwrap();
        ts.push("c", vec![0.43; 3000]).unwrap();
        let out = butterworth_lowpass(&ts, 40.0, 2).unwrap();
        for v in out.channel("c").unwrap() {
            assert!((v - 0.43).abs() < 1e-12);
        }
    }

    #[test]
    fn lowpass_passband_and_stopband() {
        let dt = 0.001;
        let n = 4000;
        let mut ts = TimeSeries::new(dt).unwrap();
        ts.push("lo", sine(5.0, dt, n)).unwrap();
        ts.push("hi", sine(200.0, dt, n)).unwrap();
        let out = butterworth_lowpass(&ts, 40.0, 2).unwrap();
        let mid = 1000..3000;
        let lo = amplitude(&out.channel("lo").unwrap()[mid.clone()]);
        let hi = amplitude(&out.channel("hi").unwrap()[mid]);
        // analytic forward-backward gain: 1 / (1 + (tan(pi f dt)/tan(pi fc dt))^4)
        let gain = |f: f64| {
            let r = (std::f64::consts::PI * f * dt).tan() / (std::f64::consts::PI * 40.0 * dt).tan();
            1.0 / (1.0 + r.powi(4))
        };
        assert!((lo - 1.0).abs() < 0.01, "{lo}");
        assert!((lo - gain(5.0)).abs() < 1e-3);
        assert!(hi <= 0.03, "{hi}");
        assert!((hi - gain(200.0)).abs() < 1e-3);
    }

    #[test]
    fn cutoff_above_nyquist_is_rejected() {
        let mut ts = TimeSeries::new(0.001).unwrap();
        ts.push("x", vec![0.0; 10]).unwrap();
        assert!(matches!(
            butterworth_lowpass(&ts, 600.0, 2),
            Err(SignalError::CutoffAboveNyquist { .. })
        ));
        assert!(matches!(butterworth_lowpass(&ts, 40.0, 0), Err(SignalError::ZeroOrder)));
    }

    #[test]
    fn per_unit_conversion() {
        let mut ts = TimeSeries::new(0.001).unwrap();
        ts.push_channel(Channel {
            name: "p".into(),
            unit: Unit::Mw,
            base: 1.0,
            values: vec![160.0, 80.0],
        })
        .unwrap();
        ts.push("q", vec![0.3, 0.4]).unwrap();
        let bases = BTreeMap::from([("p".to_string(), 160.0), ("q".to_string(), 1.0)]);
        let pu = per_unitize(&ts, &bases).unwrap();
        assert_eq!(pu.channel("p").unwrap(), &[1.0, 0.5]);
        assert_eq!(pu.channel("q").unwrap(), &[0.3, 0.4]);
        assert_eq!(pu.channel_meta("p").unwrap().unit, Unit::Pu);

        let units = BTreeMap::from([("p".to_string(), Unit::Mw)]);
        let back = de_per_unitize(&pu, &units).unwrap();
        assert_eq!(back.channel("p").unwrap(), &[160.0, 80.0]);
        assert_eq!(back.channel_meta("p").unwrap().unit, Unit::Mw);

        let bad = BTreeMap::from([("p".to_string(), 0.0)]);
        assert!(matches!(
            per_unitize(&ts, &bad),
            Err(SignalError::NonPositiveBase { .. })
        ));
        assert!(matches!(
            per_unitize_channels(&ts, &["p"], &BTreeMap::new()),
            Err(SignalError::MissingBase(_))
        ));
    }

    #[test]
    fn square_pulse_counts() {
        let ts = square_pulse("p_ref", 0.001, 60.0, 20.0, 0.5, 0.75, 0.78125).unwrap();
        let v = ts.channel("p_ref").unwrap();
        assert_eq!(v.len(), 60_001);
        let high = v[..20_000].iter().filter(|&&x| x == 0.78125).count();
        assert_eq!(high, 10_000);
        assert_eq!(v[0], 0.75);
        assert_eq!(v[10_000], 0.78125);
        assert!((0.78125f64 - 0.75 - 5.0 / 160.0).abs() < 1e-15);

        let flat = square_pulse("x", 0.001, 1.0, 0.2, 0.5, 0.4, 0.4).unwrap();
        assert!(flat.channel("x").unwrap().iter().all(|&x| x == 0.4));

        assert!(matches!(
            square_pulse("x", 0.001, 1.0, 0.001, 0.5, 0.0, 1.0),
            Err(SignalError::DegeneratePeriod { .. })
        ));
        assert!(matches!(
            square_pulse("x", 0.001, 1.0, 1.0, 1.0, 0.0, 1.0),
            Err(SignalError::DegeneratePeriod { .. })
        ));
    }

    #[test]
    fn noise_is_seeded_and_hits_snr() {
        let dt = 0.001;
        let mut ts = TimeSeries::new(dt).unwrap();
        ts.push("s", sine(3.0, dt, 100_000)).unwrap();
        let a = add_noise(&ts, 40.0, 11).unwrap();
        let b = add_noise(&ts, 40.0, 11).unwrap();
        assert_eq!(a, b);
        let clean = ts.channel("s").unwrap();
        let noise: Vec<f64> = a
            .channel("s")
            .unwrap()
            .iter()
            .zip(clean)
            .map(|(x, y)| x - y)
            .collect();
        let snr = 10.0 * (variance(clean) / variance(&noise)).log10();
        assert!((snr - 40.0).abs() < 0.5, "{snr}");

        assert_eq!(add_noise(&ts, f64::INFINITY, 1).unwrap(), ts);

        let mut flat = TimeSeries::new(dt).unwrap();
        flat.push("c", vec![1.0; 10]).unwrap();
        assert!(matches!(
            add_noise(&flat, 40.0, 1),
            Err(SignalError::ConstantChannel(_))
        ));
    }
}
