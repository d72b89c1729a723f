//! Python bindings for the sinc filterbank front-end: filter construction,
//! analytic derivatives, frequency responses, the fast symmetric convolution
//! and the analysis helpers.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use sincfront::analysis;
use sincfront::conv;
use sincfront::dsp::{self, FilterSpec, SincParams, Window};
use sincfront::model;

fn value_err(e: sincfront::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_window(name: &str) -> PyResult<Window> {
    match name {
        "hamming" => Ok(Window::Hamming),
        "hann" => Ok(Window::Hann),
        "blackman" => Ok(Window::Blackman),
        "rectangular" => Ok(Window::Rectangular),
        other => Err(PyValueError::new_err(format!(
            "unknown window '{other}' (expected hamming, hann, blackman or rectangular)"
        ))),
    }
}

fn spec(length: usize, window: &str, sample_rate: f64) -> PyResult<FilterSpec> {
    FilterSpec::new(length, parse_window(window)?, sample_rate).map_err(value_err)
}

fn params(f1: f64, band: f64) -> PyResult<SincParams> {
    SincParams::new(f1, band).map_err(value_err)
}

/// A bank of windowed-sinc band-pass filters with cached taps and
/// tap-gradients.
#[pyclass(name = "FilterBank")]
struct PyFilterBank {
    inner: dsp::FilterBank,
}

#[pymethods]
impl PyFilterBank {
    /// Builds a bank from explicit `(f1, band)` pairs in normalized frequency.
    #[new]
    fn new(cutoffs: Vec<(f64, f64)>, length: usize, window: &str, sample_rate: f64) -> PyResult<Self> {
        let params = cutoffs
            .into_iter()
            .map(|(f1, band)| SincParams::new(f1, band))
            .collect::<sincfront::Result<Vec<_>>>()
            .map_err(value_err)?;
        let inner =
            dsp::FilterBank::new(params, spec(length, window, sample_rate)?).map_err(value_err)?;
        Ok(PyFilterBank { inner })
    }

    /// Mel-scale initialized bank between `f_low_hz` and Nyquist.
    #[staticmethod]
    fn mel(count: usize, length: usize, window: &str, sample_rate: f64, f_low_hz: f64) -> PyResult<Self> {
        let inner = dsp::FilterBank::mel(count, spec(length, window, sample_rate)?, f_low_hz)
            .map_err(value_err)?;
        Ok(PyFilterBank { inner })
    }

    /// Randomly initialized bank, deterministic per seed.
    #[staticmethod]
    fn random(count: usize, length: usize, window: &str, sample_rate: f64, seed: u64) -> PyResult<Self> {
        let inner = dsp::FilterBank::random(count, spec(length, window, sample_rate)?, seed)
            .map_err(value_err)?;
        Ok(PyFilterBank { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(f1, band)` pairs in normalized frequency.
    fn cutoffs(&self) -> Vec<(f64, f64)> {
        self.inner.params().iter().map(|p| (p.f1(), p.band())).collect()
    }

    fn taps(&self, filter: usize) -> PyResult<Vec<f64>> {
        self.check(filter)?;
        Ok(self.inner.taps(filter).to_vec())
    }

    /// Analytic `(d taps/d f1, d taps/d f2)` of one filter.
    fn tap_gradients(&self, filter: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        self.check(filter)?;
        Ok((
            self.inner.dtaps_df1(filter).to_vec(),
            self.inner.dtaps_df2(filter).to_vec(),
        ))
    }

    /// Magnitude response of one filter: `(freqs_hz, magnitude)`.
    fn response(&self, filter: usize, grid_size: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        self.check(filter)?;
        let curve = self.inner.response(filter, grid_size).map_err(value_err)?;
        Ok((curve.freqs_hz, curve.magnitude))
    }

    /// Cumulative magnitude response of the bank: `(freqs_hz, magnitude)`.
    fn cumulative_response(&self, grid_size: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let layer = model::FirstLayer::Sinc(self.inner.clone());
        let curve = analysis::cumulative_response(&layer, grid_size).map_err(value_err)?;
        Ok((curve.freqs_hz, curve.magnitude))
    }

    /// Learnable parameter count: always 2F, independent of filter length.
    fn count_params(&self) -> usize {
        model::count_params(&model::FirstLayer::Sinc(self.inner.clone()))
    }

    /// Bank serialized as the filterbank JSON document.
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner.to_doc())
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

impl PyFilterBank {
    fn check(&self, filter: usize) -> PyResult<()> {
        if filter < self.inner.len() {
            Ok(())
        } else {
            Err(PyValueError::new_err(format!(
                "filter index {filter} out of range for bank of {}",
                self.inner.len()
            )))
        }
    }
}

/// Windowed-sinc band-pass taps for cutoffs `(f1, f1+band)` in normalized
/// frequency.
#[pyfunction]
fn build_filter(f1: f64, band: f64, length: usize, window: &str, sample_rate: f64) -> PyResult<Vec<f64>> {
    dsp::build_filter(&params(f1, band)?, &spec(length, window, sample_rate)?).map_err(value_err)
}

/// Analytic `(d taps/d f1, d taps/d f2)` for one filter.
#[pyfunction]
fn filter_grad(
    f1: f64,
    band: f64,
    length: usize,
    window: &str,
    sample_rate: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    dsp::filter_grad(&params(f1, band)?, &spec(length, window, sample_rate)?).map_err(value_err)
}

/// Ideal rectangular band-pass magnitude at normalized frequency `f`.
#[pyfunction]
fn ideal_response(f1: f64, band: f64, f: f64) -> PyResult<f64> {
    dsp::ideal_response(&params(f1, band)?, f).map_err(value_err)
}

/// DFT magnitude of arbitrary taps on a uniform grid over `[0, fs/2]`.
#[pyfunction]
fn realized_response(taps: Vec<f64>, grid_size: usize, sample_rate: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let curve = dsp::realized_response(&taps, grid_size, sample_rate).map_err(value_err)?;
    Ok((curve.freqs_hz, curve.magnitude))
}

#[pyfunction]
fn hz_to_mel(f_hz: f64) -> f64 {
    dsp::hz_to_mel(f_hz)
}

#[pyfunction]
fn mel_to_hz(mel: f64) -> f64 {
    dsp::mel_to_hz(mel)
}

/// Valid-mode convolution.
#[pyfunction]
fn convolve_valid(samples: Vec<f64>, taps: Vec<f64>) -> PyResult<Vec<f64>> {
    conv::convolve_valid(&samples, &taps).map_err(value_err)
}

/// Symmetric-filter fast path; returns `(output, multiplications)`.
#[pyfunction]
fn convolve_symmetric(samples: Vec<f64>, taps: Vec<f64>) -> PyResult<(Vec<f64>, u64)> {
    conv::convolve_symmetric_counted(&samples, &taps).map_err(value_err)
}

/// Layer normalization with scalar gain and bias.
#[pyfunction]
fn layer_norm(values: Vec<f64>, gain: f64, bias: f64, epsilon: f64) -> Vec<f64> {
    conv::layer_norm(&values, gain, bias, epsilon)
}

/// Argmax of the mean posterior; ties break to the lowest class.
#[pyfunction]
fn sentence_vote(posteriors: Vec<Vec<f64>>) -> PyResult<usize> {
    analysis::sentence_vote(&posteriors).map_err(value_err)
}

/// Valley metric of a response curve in dB.
#[pyfunction]
fn valley_depth(
    freqs_hz: Vec<f64>,
    magnitude: Vec<f64>,
    band_low_hz: f64,
    band_high_hz: f64,
    flank_hz: f64,
) -> PyResult<f64> {
    let curve = analysis::ResponseCurve { freqs_hz, magnitude };
    analysis::valley_depth(&curve, band_low_hz, band_high_hz, flank_hz).map_err(value_err)
}

#[pymodule]
fn sincfront_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFilterBank>()?;
    m.add_function(wrap_pyfunction!(build_filter, m)?)?;
    m.add_function(wrap_pyfunction!(filter_grad, m)?)?;
    m.add_function(wrap_pyfunction!(ideal_response, m)?)?;
    m.add_function(wrap_pyfunction!(realized_response, m)?)?;
    m.add_function(wrap_pyfunction!(hz_to_mel, m)?)?;
    m.add_function(wrap_pyfunction!(mel_to_hz, m)?)?;
    m.add_function(wrap_pyfunction!(convolve_valid, m)?)?;
    m.add_function(wrap_pyfunction!(convolve_symmetric, m)?)?;
    m.add_function(wrap_pyfunction!(layer_norm, m)?)?;
    m.add_function(wrap_pyfunction!(sentence_vote, m)?)?;
    m.add_function(wrap_pyfunction!(valley_depth, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
