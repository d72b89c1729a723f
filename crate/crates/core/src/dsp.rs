//! Windowed-sinc band-pass filter construction and analytic tap derivatives.
//!
//! A filter is parametrized by its low cutoff `f1` and bandwidth `band`, both
//! in normalized frequency (cycles per sample, `[0, 0.5]`). Hz appears only at
//! the serialization and initialization boundary. The time-domain taps are
//!
//! ```text
//! g[n] = w[n] * (2*f2*sinc(2*pi*f2*n) - 2*f1*sinc(2*pi*f1*n))
//! ```
//!
//! on the centered index `n in [-(L-1)/2, (L-1)/2]`, with `sinc(x) = sin(x)/x`
//! and `w` an even window. Both the taps and their derivatives with respect to
//! the cutoffs are exactly even-symmetric: each half is computed once and
//! mirrored.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default minimum learnable bandwidth: 50 Hz at the configured sample rate,
/// in normalized frequency.
pub fn default_band_min(sample_rate: f64) -> f64 {
    50.0 / sample_rate
}

/// Window function applied to the truncated sinc difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hamming,
    Hann,
    Blackman,
    Rectangular,
}

impl Window {
    /// Window value at centered index `n` for an odd length `l`.
    ///
    /// All windows here are even about n=0 and equal 1.0 at the center, so
    /// windowing never breaks tap symmetry.
    pub fn value(&self, n: i64, l: usize) -> f64 {
        let x = TAU * n as f64 / l as f64;
        match self {
            Window::Rectangular => 1.0,
            Window::Hamming => 0.54 + 0.46 * x.cos(),
            Window::Hann => 0.5 + 0.5 * x.cos(),
            Window::Blackman => 0.42 + 0.5 * x.cos() + 0.08 * (2.0 * x).cos(),
        }
    }
}

/// Learnable cutoff parameters of one band-pass filter.
///
/// Stored as (low cutoff, bandwidth) in normalized frequency; the high cutoff
/// is derived as `f2 = min(f1 + band, 0.5)`. [`SincParams::projected`] is the
/// projection applied after every optimizer step to restore the invariants
/// `0 <= f1 <= f2 <= 0.5` and `band >= band_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SincParams {
    f1: f64,
    band: f64,
}

impl SincParams {
    /// Creates parameters from a low cutoff and a bandwidth, both normalized.
    ///
    /// `band = 0` is allowed here (it builds an all-zero filter); the stricter
    /// `band >= band_min` invariant is enforced by [`SincParams::projected`]
    /// on the training path.
    pub fn new(f1: f64, band: f64) -> Result<Self> {
        if !f1.is_finite() || !band.is_finite() {
            return Err(Error::ParamDomain(format!(
                "non-finite cutoff parameters (f1={f1}, band={band})"
            )));
        }
        if !(0.0..=0.5).contains(&f1) {
            return Err(Error::ParamDomain(format!(
                "low cutoff {f1} outside [0, 0.5]"
            )));
        }
        if band < 0.0 {
            return Err(Error::ParamDomain(format!(
                "negative bandwidth {band} (f1 > f2)"
            )));
        }
        Ok(SincParams { f1, band })
    }

    /// Creates parameters from band edges, `f1 <= f2`, both normalized.
    pub fn from_edges(f1: f64, f2: f64) -> Result<Self> {
        if f2 > 0.5 + 1e-12 {
            return Err(Error::ParamDomain(format!(
                "high cutoff {f2} outside [0, 0.5]"
            )));
        }
        Self::new(f1, f2 - f1)
    }

    /// Projects raw optimizer output back into the admissible set:
    /// `f1 = clamp(|f1|, 0, 0.5)`, `band = clamp(|band|, band_min, 0.5 - f1)`,
    /// with the lower bound winning when the interval is empty.
    pub fn projected(f1_raw: f64, band_raw: f64, band_min: f64) -> Self {
        let f1 = f1_raw.abs().min(0.5);
        let band = band_raw.abs().min(0.5 - f1).max(band_min);
        SincParams { f1, band }
    }

    /// Low cutoff in normalized frequency.
    pub fn f1(&self) -> f64 {
        self.f1
    }

    /// Bandwidth in normalized frequency.
    pub fn band(&self) -> f64 {
        self.band
    }

    /// High cutoff `min(f1 + band, 0.5)` in normalized frequency.
    pub fn f2(&self) -> f64 {
        (self.f1 + self.band).min(0.5)
    }
}

/// Static shape of every filter in a bank: odd tap count, window, sample rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    /// Tap count L; must be odd so the center tap n=0 exists.
    pub length: usize,
    pub window: Window,
    /// Sample rate in Hz; used only at the Hz boundary (init, serialization).
    pub sample_rate: f64,
}

impl FilterSpec {
    pub fn new(length: usize, window: Window, sample_rate: f64) -> Result<Self> {
        let spec = FilterSpec {
            length,
            window,
            sample_rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || self.length % 2 == 0 {
            return Err(Error::Spec(format!(
                "filter length must be odd, got {}",
                self.length
            )));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::Spec(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        Ok(())
    }
}

/// Builds the windowed-sinc band-pass taps for one filter.
///
/// The center tap (n=0) is `w[0] * 2 * (f2 - f1)` by the sinc limit; the
/// output is exactly even-symmetric.
pub fn build_filter(params: &SincParams, spec: &FilterSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let (f1, f2) = (params.f1(), params.f2());
    let half = half_taps(spec, |w, n| {
        if n == 0.0 {
            w * 2.0 * (f2 - f1)
        } else {
            w * ((TAU * f2 * n).sin() - (TAU * f1 * n).sin()) / (PI * n)
        }
    });
    Ok(mirror(&half, spec.length))
}

/// Analytic derivatives of the windowed taps with respect to the cutoffs:
/// `d g/d f1[n] = -2 w[n] cos(2 pi f1 n)` and
/// `d g/d f2[n] = +2 w[n] cos(2 pi f2 n)`, both even-symmetric.
pub fn filter_grad(params: &SincParams, spec: &FilterSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    let (f1, f2) = (params.f1(), params.f2());
    let d_f1 = half_taps(spec, |w, n| -2.0 * w * (TAU * f1 * n).cos());
    let d_f2 = half_taps(spec, |w, n| 2.0 * w * (TAU * f2 * n).cos());
    Ok((mirror(&d_f1, spec.length), mirror(&d_f2, spec.length)))
}

fn half_taps(spec: &FilterSpec, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let center = (spec.length - 1) / 2;
    (0..=center)
        .map(|k| f(spec.window.value(k as i64, spec.length), k as f64))
        .collect()
}

fn mirror(half: &[f64], length: usize) -> Vec<f64> {
    let center = (length - 1) / 2;
    let mut taps = vec![0.0; length];
    for (k, &v) in half.iter().enumerate() {
        taps[center + k] = v;
        taps[center - k] = v;
    }
    taps
}

/// Magnitude of the ideal (rectangular) band-pass response at normalized `f`.
///
/// Boundary convention: the rectangle is 1 on the closed half-width, so the
/// response is 1 at `f = f2` and 0 at `f = f1`.
pub fn ideal_response(params: &SincParams, f: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&f) {
        return Err(Error::Domain(format!(
            "frequency {f} outside [0, 0.5] normalized"
        )));
    }
    let rect = |f: f64, cutoff: f64| -> f64 {
        if f <= cutoff {
            1.0
        } else {
            0.0
        }
    };
    Ok(rect(f, params.f2()) - rect(f, params.f1()))
}

/// Magnitude response of one filter or the cumulative bank on a frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseCurve {
    /// Grid frequencies in Hz, monotone increasing from 0 to sample_rate/2.
    pub freqs_hz: Vec<f64>,
    /// DFT magnitude at each grid frequency; nonnegative.
    pub magnitude: Vec<f64>,
}

impl ResponseCurve {
    /// CSV with header `freq_hz,magnitude`, one row per grid point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,magnitude\n");
        for (f, m) in self.freqs_hz.iter().zip(&self.magnitude) {
            out.push_str(&format!("{f},{m}\n"));
        }
        out
    }
}

/// Samples the tap vector's DFT magnitude on `grid_size` uniform points over
/// `[0, sample_rate/2]` (inclusive endpoints).
pub fn realized_response(
    taps: &[f64],
    grid_size: usize,
    sample_rate: f64,
) -> Result<ResponseCurve> {
    if taps.is_empty() {
        return Err(Error::Domain("empty tap vector".into()));
    }
    if grid_size < 2 * taps.len() {
        return Err(Error::Domain(format!(
            "grid size {grid_size} below 2L = {}",
            2 * taps.len()
        )));
    }
    let mut freqs_hz = Vec::with_capacity(grid_size);
    let mut magnitude = Vec::with_capacity(grid_size);
    for k in 0..grid_size {
        let f = 0.5 * k as f64 / (grid_size - 1) as f64;
        let mut re = 0.0;
        let mut im = 0.0;
        for (l, &tap) in taps.iter().enumerate() {
            let phase = TAU * f * l as f64;
            re += tap * phase.cos();
            im -= tap * phase.sin();
        }
        freqs_hz.push(f * sample_rate);
        magnitude.push(re.hypot(im));
    }
    Ok(ResponseCurve { freqs_hz, magnitude })
}

/// Mel value of a frequency in Hz: `2595 * log10(1 + f/700)`.
pub fn hz_to_mel(f_hz: f64) -> f64 {
    2595.0 * (1.0 + f_hz / 700.0).log10()
}

/// Frequency in Hz of a mel value: `700 * (10^(m/2595) - 1)`.
pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Mel-scale initialization: `count + 2` points equally spaced on the mel
/// scale between `f_low_hz` and `sample_rate/2`; filter `i` spans points
/// `(i, i+2)`, converted to normalized frequency and projected.
pub fn mel_init(count: usize, spec: &FilterSpec, f_low_hz: f64) -> Result<Vec<SincParams>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::Config("filter count must be at least 1".into()));
    }
    let nyquist = spec.sample_rate / 2.0;
    if !(0.0 < f_low_hz && f_low_hz < nyquist) {
        return Err(Error::Config(format!(
            "low edge {f_low_hz} Hz outside (0, {nyquist}) Hz"
        )));
    }
    let band_min = default_band_min(spec.sample_rate);
    let mel_low = hz_to_mel(f_low_hz);
    let mel_high = hz_to_mel(nyquist);
    let step = (mel_high - mel_low) / (count + 1) as f64;
    let point = |i: usize| mel_to_hz(mel_low + step * i as f64);
    Ok((0..count)
        .map(|i| {
            let f1 = point(i) / spec.sample_rate;
            let f2 = point(i + 2) / spec.sample_rate;
            SincParams::projected(f1, f2 - f1, band_min)
        })
        .collect())
}

/// Random initialization: each filter draws two cutoffs uniformly in
/// `(0, 0.5)`, takes the lower one as `f1`, and projects. Deterministic for a
/// given seed.
pub fn random_init(count: usize, spec: &FilterSpec, seed: u64) -> Result<Vec<SincParams>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::Config("filter count must be at least 1".into()));
    }
    let band_min = default_band_min(spec.sample_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let a: f64 = rng.random_range(0.0..0.5);
            let b: f64 = rng.random_range(0.0..0.5);
            let f1 = a.min(b);
            SincParams::projected(f1, (a - b).abs(), band_min)
        })
        .collect())
}

/// A realized bank of `F` windowed-sinc filters with cached taps and
/// tap-gradients. Immutable after construction; updating parameters means
/// building a new bank.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    params: Vec<SincParams>,
    spec: FilterSpec,
    taps: Vec<Vec<f64>>,
    dtaps_df1: Vec<Vec<f64>>,
    dtaps_df2: Vec<Vec<f64>>,
}

impl FilterBank {
    pub fn new(params: Vec<SincParams>, spec: FilterSpec) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Config("filter bank needs at least one filter".into()));
        }
        let mut taps = Vec::with_capacity(params.len());
        let mut dtaps_df1 = Vec::with_capacity(params.len());
        let mut dtaps_df2 = Vec::with_capacity(params.len());
        for p in &params {
            taps.push(build_filter(p, &spec)?);
            let (d1, d2) = filter_grad(p, &spec)?;
            dtaps_df1.push(d1);
            dtaps_df2.push(d2);
        }
        Ok(FilterBank {
            params,
            spec,
            taps,
            dtaps_df1,
            dtaps_df2,
        })
    }

    pub fn mel(count: usize, spec: FilterSpec, f_low_hz: f64) -> Result<Self> {
        Self::new(mel_init(count, &spec, f_low_hz)?, spec)
    }

    pub fn random(count: usize, spec: FilterSpec, seed: u64) -> Result<Self> {
        Self::new(random_init(count, &spec, seed)?, spec)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[SincParams] {
        &self.params
    }

    pub fn spec(&self) -> &FilterSpec {
        &self.spec
    }

    pub fn taps(&self, i: usize) -> &[f64] {
        &self.taps[i]
    }

    pub fn dtaps_df1(&self, i: usize) -> &[f64] {
        &self.dtaps_df1[i]
    }

    pub fn dtaps_df2(&self, i: usize) -> &[f64] {
        &self.dtaps_df2[i]
    }

    /// Realized magnitude response of filter `i` over `[0, sample_rate/2]`.
    pub fn response(&self, i: usize, grid_size: usize) -> Result<ResponseCurve> {
        realized_response(&self.taps[i], grid_size, self.spec.sample_rate)
    }

    /// Serializable form with frequencies in Hz at the boundary.
    pub fn to_doc(&self) -> FilterBankDoc {
        let fs = self.spec.sample_rate;
        FilterBankDoc {
            sample_rate: fs,
            length: self.spec.length,
            window: self.spec.window,
            filters: self
                .params
                .iter()
                .map(|p| FilterDocEntry {
                    f1_hz: p.f1() * fs,
                    band_hz: p.band() * fs,
                })
                .collect(),
        }
    }

    pub fn from_doc(doc: &FilterBankDoc) -> Result<Self> {
        let spec = FilterSpec::new(doc.length, doc.window, doc.sample_rate)?;
        let params = doc
            .filters
            .iter()
            .map(|f| SincParams::new(f.f1_hz / doc.sample_rate, f.band_hz / doc.sample_rate))
            .collect::<Result<Vec<_>>>()?;
        Self::new(params, spec)
    }
}

/// JSON document form of a filter bank: `{sample_rate, L, window, filters}`
/// with per-filter `{f1_hz, band_hz}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterBankDoc {
    pub sample_rate: f64,
    #[serde(rename = "L")]
    pub length: usize,
    pub window: Window,
    pub filters: Vec<FilterDocEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterDocEntry {
    pub f1_hz: f64,
    pub band_hz: f64,
}
