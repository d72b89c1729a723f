//! Waveform framing, first-layer convolution, and layer normalization.
//!
//! Convolution is valid-mode (no padding): a chunk of N samples filtered by L
//! taps yields T = N - L + 1 outputs. [`convolve_symmetric`] is the fast path
//! for even-symmetric taps: it pairs mirrored input samples against each
//! unique tap, doing ceil(L/2) multiplications per output sample instead of L.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed-duration frame of raw waveform with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalChunk {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    /// Opaque tag of the source utterance; chunks of one utterance share it.
    pub source_id: String,
    /// Class index of the source utterance.
    pub label: usize,
}

/// First-layer output: one row of T filtered samples per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub filters: usize,
    pub steps: usize,
    /// Row-major F x T values.
    pub values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(filters: usize, steps: usize) -> Self {
        FeatureMap {
            filters,
            steps,
            values: vec![0.0; filters * steps],
        }
    }

    pub fn row(&self, filter: usize) -> &[f64] {
        &self.values[filter * self.steps..(filter + 1) * self.steps]
    }

    pub fn row_mut(&mut self, filter: usize) -> &mut [f64] {
        &mut self.values[filter * self.steps..(filter + 1) * self.steps]
    }

    /// Debug CSV with header `filter_index,time_index,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("filter_index,time_index,value\n");
        for f in 0..self.filters {
            for (t, v) in self.row(f).iter().enumerate() {
                out.push_str(&format!("{f},{t},{v}\n"));
            }
        }
        out
    }
}

/// Number of samples in a chunk of `chunk_ms` milliseconds.
pub fn chunk_samples(sample_rate: f64, chunk_ms: f64) -> usize {
    (sample_rate * chunk_ms / 1000.0).round() as usize
}

/// Splits a waveform into chunks of `chunk_ms` starting every
/// `chunk_ms - overlap_ms`; a trailing partial chunk is dropped. A waveform
/// shorter than one chunk yields an empty list.
pub fn frame_signal(
    waveform: &[f64],
    sample_rate: f64,
    chunk_ms: f64,
    overlap_ms: f64,
    source_id: &str,
    label: usize,
) -> Result<Vec<SignalChunk>> {
    if !(overlap_ms >= 0.0 && chunk_ms > overlap_ms) {
        return Err(Error::Config(format!(
            "need chunk_ms > overlap_ms >= 0, got chunk {chunk_ms} ms, overlap {overlap_ms} ms"
        )));
    }
    let chunk_len = chunk_samples(sample_rate, chunk_ms);
    let hop = chunk_samples(sample_rate, chunk_ms - overlap_ms);
    if chunk_len == 0 || hop == 0 {
        return Err(Error::Config(format!(
            "chunk ({chunk_len}) and hop ({hop}) must be at least one sample"
        )));
    }
    let mut chunks = Vec::new();
    let mut start = 0;
    while start + chunk_len <= waveform.len() {
        chunks.push(SignalChunk {
            samples: waveform[start..start + chunk_len].to_vec(),
            sample_rate,
            source_id: source_id.to_string(),
            label,
        });
        start += hop;
    }
    Ok(chunks)
}

fn check_shapes(samples: &[f64], taps: &[f64]) -> Result<usize> {
    if taps.is_empty() {
        return Err(Error::Shape("empty tap vector".into()));
    }
    if samples.len() < taps.len() {
        return Err(Error::Shape(format!(
            "chunk of {} samples shorter than {} taps",
            samples.len(),
            taps.len()
        )));
    }
    Ok(samples.len() - taps.len() + 1)
}

/// Valid-mode convolution: `y[n] = sum_l x[n+l] * taps[L-1-l]`.
pub fn convolve_valid(samples: &[f64], taps: &[f64]) -> Result<Vec<f64>> {
    let steps = check_shapes(samples, taps)?;
    let l = taps.len();
    let mut out = Vec::with_capacity(steps);
    for n in 0..steps {
        let window = &samples[n..n + l];
        let mut acc = 0.0;
        for (x, tap) in window.iter().zip(taps.iter().rev()) {
            acc += x * tap;
        }
        out.push(acc);
    }
    Ok(out)
}

/// [`convolve_valid`] with an inner-loop multiplication counter, for the
/// operation-count assertions.
pub fn convolve_valid_counted(samples: &[f64], taps: &[f64]) -> Result<(Vec<f64>, u64)> {
    let out = convolve_valid(samples, taps)?;
    let muls = (taps.len() * out.len()) as u64;
    Ok((out, muls))
}

fn require_symmetric(taps: &[f64]) -> Result<()> {
    let l = taps.len();
    for k in 0..l / 2 {
        if (taps[k] - taps[l - 1 - k]).abs() > 1e-12 {
            return Err(Error::Shape(format!(
                "taps not even-symmetric at index {k}: {} vs {}",
                taps[k],
                taps[l - 1 - k]
            )));
        }
    }
    Ok(())
}

/// Symmetric-filter convolution: pairs `x[n+k] + x[n+L-1-k]` against each
/// unique tap, halving the multiplication count. Output equals
/// [`convolve_valid`] for even-symmetric taps.
pub fn convolve_symmetric(samples: &[f64], taps: &[f64]) -> Result<Vec<f64>> {
    Ok(convolve_symmetric_counted(samples, taps)?.0)
}

/// [`convolve_symmetric`] returning the number of inner-loop multiplications
/// performed: `ceil(L/2) * T`.
pub fn convolve_symmetric_counted(samples: &[f64], taps: &[f64]) -> Result<(Vec<f64>, u64)> {
    let steps = check_shapes(samples, taps)?;
    require_symmetric(taps)?;
    let l = taps.len();
    let pairs = l / 2;
    let mut muls = 0u64;
    let mut out = Vec::with_capacity(steps);
    for n in 0..steps {
        let window = &samples[n..n + l];
        let mut acc = 0.0;
        for k in 0..pairs {
            acc += (window[k] + window[l - 1 - k]) * taps[k];
            muls += 1;
        }
        if l % 2 == 1 {
            acc += window[pairs] * taps[pairs];
            muls += 1;
        }
        out.push(acc);
    }
    Ok((out, muls))
}

/// Layer normalization with a scalar gain and bias:
/// `(x - mean) / sqrt(var + epsilon) * gain + bias`, statistics over the
/// whole vector (population variance).
pub fn layer_norm(values: &[f64], gain: f64, bias: f64, epsilon: f64) -> Vec<f64> {
    let (mean, var) = mean_var(values);
    let inv_std = 1.0 / (var + epsilon).sqrt();
    values
        .iter()
        .map(|&v| (v - mean) * inv_std * gain + bias)
        .collect()
}

pub(crate) fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}
