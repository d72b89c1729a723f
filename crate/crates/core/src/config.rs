//! Experiment configuration: one JSON document that wires the filterbank,
//! model, optimizer, dataset and noise settings into a reproducible run.
//!
//! Defaults follow the reference training setup where it is explicit (80
//! Hamming filters of length 251, mel initialization, 200 ms chunks with
//! 10 ms overlap, RMSprop with lr 0.001, alpha 0.95, epsilon 1e-7, batch
//! 128); the classifier head is desk-scale (one hidden layer). A config is
//! validated as a whole before any work happens.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conv::{self, SignalChunk};
use crate::data::{self, SynthSpec, Utterance};
use crate::dsp::{FilterBank, FilterSpec, Window};
use crate::error::{Error, Result};
use crate::model::{FirstLayer, ModelState, OptState};

/// Which first layer the experiment trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FirstLayerKind {
    Sinc,
    Learned,
}

/// Cutoff initialization for the sinc variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Mel,
    Random,
}

/// Where the training utterances come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Built-in 10-class synthetic task.
    SynthDefault,
    /// Synthesis description loaded from JSON.
    Synth { path: PathBuf },
    /// WAV manifest: JSON list of `{path, label}`.
    Manifest { path: PathBuf },
}

/// Band-limited corruption applied to every utterance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSettings {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    /// In-band SNR in dB; omit the whole `noise` object for clean data.
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub first_layer: FirstLayerKind,
    pub filters: usize,
    pub filter_len: usize,
    pub window: Window,
    pub init: InitKind,
    /// Low edge of the mel initialization range, Hz.
    pub f_low_hz: f64,
    pub sample_rate: f64,
    pub chunk_ms: f64,
    pub overlap_ms: f64,
    pub pool_width: usize,
    pub hidden_size: usize,
    pub leaky_slope: f64,
    pub lr: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dataset: DatasetSource,
    pub noise: Option<NoiseSettings>,
    /// Utterances per class reserved for held-out evaluation.
    pub holdout_per_class: usize,
    /// Optimizer updates between valley checkpoints.
    pub checkpoint_every: u64,
    /// Flank width for the valley metric, Hz.
    pub flank_hz: f64,
    /// Frequency-grid size for response curves.
    pub grid_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            first_layer: FirstLayerKind::Sinc,
            filters: 80,
            filter_len: 251,
            window: Window::Hamming,
            init: InitKind::Mel,
            f_low_hz: 30.0,
            sample_rate: 16_000.0,
            chunk_ms: 200.0,
            overlap_ms: 10.0,
            pool_width: 3,
            hidden_size: 256,
            leaky_slope: 0.2,
            lr: 0.001,
            alpha: 0.95,
            epsilon: 1e-7,
            batch_size: 128,
            epochs: 10,
            seed: 0,
            dataset: DatasetSource::SynthDefault,
            noise: None,
            holdout_per_class: 2,
            checkpoint_every: 5,
            flank_hz: 250.0,
            grid_size: 4096,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies one `key=value` override onto the JSON form of the config.
    /// Values parse as JSON when possible and fall back to strings, so
    /// `--set filters=40` and `--set window=hann` both work.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment.split_once('=').ok_or_else(|| {
            Error::Config(format!("override '{assignment}' is not of the form key=value"))
        })?;
        let mut doc = serde_json::to_value(&*self)?;
        let map = doc
            .as_object_mut()
            .expect("config serializes to an object");
        if !map.contains_key(key) {
            return Err(Error::Config(format!("unknown config key '{key}'")));
        }
        let value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        map.insert(key.to_string(), value);
        *self = serde_json::from_value(doc)?;
        Ok(())
    }

    /// Samples per chunk at this configuration.
    pub fn chunk_len(&self) -> usize {
        conv::chunk_samples(self.sample_rate, self.chunk_ms)
    }

    /// Checks every module precondition up front; no work may start on an
    /// invalid config.
    pub fn validate(&self) -> Result<()> {
        if self.filters == 0 {
            return Err(Error::Config("filters must be at least 1".into()));
        }
        if self.filter_len == 0 || self.filter_len % 2 == 0 {
            return Err(Error::Config(format!(
                "filter_len must be odd, got {}",
                self.filter_len
            )));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if !(self.overlap_ms >= 0.0 && self.chunk_ms > self.overlap_ms) {
            return Err(Error::Config(format!(
                "need chunk_ms > overlap_ms >= 0, got {} and {}",
                self.chunk_ms, self.overlap_ms
            )));
        }
        let chunk_len = self.chunk_len();
        if chunk_len < self.filter_len {
            return Err(Error::Config(format!(
                "chunk of {chunk_len} samples shorter than filter_len {}",
                self.filter_len
            )));
        }
        let steps = chunk_len - self.filter_len + 1;
        if self.pool_width == 0 || steps / self.pool_width == 0 {
            return Err(Error::Config(format!(
                "pool_width {} leaves no pooled outputs from {steps} steps",
                self.pool_width
            )));
        }
        if self.hidden_size == 0 {
            return Err(Error::Config("hidden_size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config("alpha must be in [0, 1)".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let nyquist = self.sample_rate / 2.0;
        if !(0.0 < self.f_low_hz && self.f_low_hz < nyquist) {
            return Err(Error::Config(format!(
                "f_low_hz {} outside (0, {nyquist})",
                self.f_low_hz
            )));
        }
        if self.grid_size < 2 * self.filter_len {
            return Err(Error::Config(format!(
                "grid_size {} below 2L = {}",
                self.grid_size,
                2 * self.filter_len
            )));
        }
        if self.flank_hz <= 0.0 {
            return Err(Error::Config("flank_hz must be positive".into()));
        }
        if let Some(noise) = &self.noise {
            if !(0.0 <= noise.band_low_hz
                && noise.band_low_hz < noise.band_high_hz
                && noise.band_high_hz <= nyquist)
            {
                return Err(Error::Config(format!(
                    "noise band [{}, {}] Hz invalid for Nyquist {nyquist} Hz",
                    noise.band_low_hz, noise.band_high_hz
                )));
            }
            if !noise.snr_db.is_finite() {
                return Err(Error::Config("noise snr_db must be finite".into()));
            }
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        Ok(())
    }

    pub fn filter_spec(&self) -> Result<FilterSpec> {
        FilterSpec::new(self.filter_len, self.window, self.sample_rate)
    }

    /// Builds the requested first-layer variant. The sinc cutoffs come from
    /// the configured initialization; learned taps are Glorot-uniform from a
    /// salted seed so they never alias the classifier initialization.
    pub fn build_first_layer(&self, kind: FirstLayerKind, seed: u64) -> Result<FirstLayer> {
        match kind {
            FirstLayerKind::Sinc => {
                let spec = self.filter_spec()?;
                let bank = match self.init {
                    InitKind::Mel => FilterBank::mel(self.filters, spec, self.f_low_hz)?,
                    InitKind::Random => FilterBank::random(self.filters, spec, seed)?,
                };
                Ok(FirstLayer::Sinc(bank))
            }
            FirstLayerKind::Learned => Ok(FirstLayer::glorot_learned(
                self.filters,
                self.filter_len,
                self.sample_rate,
                seed ^ 0x7e_a9_01,
            )),
        }
    }

    /// Builds the model for one variant. `seed` drives the classifier-head
    /// initialization, so both variants built with the same seed share it.
    pub fn build_model(&self, kind: FirstLayerKind, classes: usize, seed: u64) -> Result<ModelState> {
        ModelState::new(
            self.build_first_layer(kind, seed)?,
            self.chunk_len(),
            self.pool_width,
            self.hidden_size,
            classes,
            self.leaky_slope,
            seed,
        )
    }

    pub fn build_opt(&self, state: &ModelState) -> Result<OptState> {
        OptState::new(state, self.lr, self.alpha, self.epsilon, self.batch_size)
    }

    /// Loads or synthesizes the utterance set, applying the configured band
    /// noise. Deterministic per seed.
    pub fn load_utterances(&self, seed: u64) -> Result<Vec<Utterance>> {
        let utts = match &self.dataset {
            DatasetSource::SynthDefault => data::synth_dataset(&SynthSpec::default_task(), seed)?,
            DatasetSource::Synth { path } => {
                let spec: SynthSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
                data::synth_dataset(&spec, seed)?
            }
            DatasetSource::Manifest { path } => data::read_manifest(path)?,
        };
        match &self.noise {
            None => Ok(utts),
            Some(noise) => utts
                .iter()
                .enumerate()
                .map(|(i, u)| {
                    data::inject_band_noise(
                        u,
                        noise.band_low_hz,
                        noise.band_high_hz,
                        noise.snr_db,
                        seed ^ 0xba5e ^ (i as u64) << 16,
                    )
                })
                .collect(),
        }
    }

    /// Frames every utterance into training chunks.
    pub fn frame_all(&self, utts: &[Utterance]) -> Result<Vec<SignalChunk>> {
        let mut chunks = Vec::new();
        for u in utts {
            chunks.extend(conv::frame_signal(
                &u.samples,
                u.sample_rate,
                self.chunk_ms,
                self.overlap_ms,
                &u.id,
                u.label,
            )?);
        }
        Ok(chunks)
    }
}

/// Splits utterances into (train, held-out), reserving the last
/// `holdout_per_class` utterances of each class for evaluation.
pub fn split_holdout(
    utts: &[Utterance],
    holdout_per_class: usize,
) -> (Vec<Utterance>, Vec<Utterance>) {
    let classes = utts.iter().map(|u| u.label).max().map_or(0, |m| m + 1);
    let mut train = Vec::new();
    let mut held = Vec::new();
    for class in 0..classes {
        let members: Vec<&Utterance> = utts.iter().filter(|u| u.label == class).collect();
        let cut = members.len().saturating_sub(holdout_per_class);
        for (i, u) in members.iter().enumerate() {
            if i < cut {
                train.push((*u).clone());
            } else {
                held.push((*u).clone());
            }
        }
    }
    (train, held)
}

/// Number of classes implied by the labels (max label + 1).
pub fn class_count(utts: &[Utterance]) -> Result<usize> {
    utts.iter()
        .map(|u| u.label)
        .max()
        .map(|m| m + 1)
        .ok_or_else(|| Error::Config("empty dataset".into()))
}
