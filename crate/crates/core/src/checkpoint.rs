//! Model checkpoint serialization: one JSON document embedding the filterbank
//! document plus all dense weights as base64 little-endian f64 and every
//! architecture hyperparameter.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::dsp::FilterBankDoc;
use crate::error::{Error, Result};
use crate::model::{FirstLayer, ModelState, NormParams};

fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    BASE64.encode(bytes)
}

fn decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes = BASE64
        .decode(text)
        .map_err(|e| Error::Format(format!("bad base64 weight blob: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format("weight blob is not a multiple of 8 bytes".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FirstLayerDoc {
    Sinc {
        bank: FilterBankDoc,
    },
    Learned {
        filters: usize,
        length: usize,
        sample_rate: f64,
        taps: String,
    },
}

/// Serialized form of a trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointDoc {
    pub first_layer: FirstLayerDoc,
    pub dense_w: String,
    pub dense_b: String,
    pub out_w: String,
    pub out_b: String,
    pub norm_input: NormParams,
    pub norm_feature: NormParams,
    pub norm_hidden: NormParams,
    pub pool_width: usize,
    pub leaky_slope: f64,
    pub chunk_len: usize,
    pub hidden_size: usize,
    pub classes: usize,
}

impl CheckpointDoc {
    pub fn from_state(state: &ModelState) -> Self {
        let first_layer = match &state.first_layer {
            FirstLayer::Sinc(bank) => FirstLayerDoc::Sinc { bank: bank.to_doc() },
            FirstLayer::Learned { taps, sample_rate } => FirstLayerDoc::Learned {
                filters: taps.len(),
                length: taps[0].len(),
                sample_rate: *sample_rate,
                taps: encode_f64s(&taps.concat()),
            },
        };
        CheckpointDoc {
            first_layer,
            dense_w: encode_f64s(&state.dense_w),
            dense_b: encode_f64s(&state.dense_b),
            out_w: encode_f64s(&state.out_w),
            out_b: encode_f64s(&state.out_b),
            norm_input: state.norm_input,
            norm_feature: state.norm_feature,
            norm_hidden: state.norm_hidden,
            pool_width: state.pool_width,
            leaky_slope: state.leaky_slope,
            chunk_len: state.chunk_len,
            hidden_size: state.hidden,
            classes: state.classes,
        }
    }

    pub fn into_state(self) -> Result<ModelState> {
        let first_layer = match self.first_layer {
            FirstLayerDoc::Sinc { bank } => {
                FirstLayer::Sinc(crate::dsp::FilterBank::from_doc(&bank)?)
            }
            FirstLayerDoc::Learned {
                filters,
                length,
                sample_rate,
                taps,
            } => {
                let flat = decode_f64s(&taps)?;
                if flat.len() != filters * length {
                    return Err(Error::Format(format!(
                        "learned taps hold {} values, expected {}x{}",
                        flat.len(),
                        filters,
                        length
                    )));
                }
                FirstLayer::Learned {
                    taps: flat.chunks_exact(length).map(|c| c.to_vec()).collect(),
                    sample_rate,
                }
            }
        };
        let dense_w = decode_f64s(&self.dense_w)?;
        let dense_b = decode_f64s(&self.dense_b)?;
        let out_w = decode_f64s(&self.out_w)?;
        let out_b = decode_f64s(&self.out_b)?;
        let length = first_layer.filter_len();
        if self.chunk_len < length {
            return Err(Error::Format(format!(
                "checkpoint chunk_len {} shorter than filter length {length}",
                self.chunk_len
            )));
        }
        let steps = self.chunk_len - length + 1;
        if self.pool_width == 0 || steps / self.pool_width == 0 {
            return Err(Error::Format("checkpoint pool width is degenerate".into()));
        }
        let flat = first_layer.filters() * (steps / self.pool_width);
        if dense_w.len() != self.hidden_size * flat
            || dense_b.len() != self.hidden_size
            || out_w.len() != self.classes * self.hidden_size
            || out_b.len() != self.classes
        {
            return Err(Error::Format("checkpoint weight shapes are inconsistent".into()));
        }
        Ok(ModelState {
            first_layer,
            dense_w,
            dense_b,
            out_w,
            out_b,
            norm_input: self.norm_input,
            norm_feature: self.norm_feature,
            norm_hidden: self.norm_hidden,
            pool_width: self.pool_width,
            leaky_slope: self.leaky_slope,
            chunk_len: self.chunk_len,
            hidden: self.hidden_size,
            classes: self.classes,
        })
    }
}

/// Writes a model checkpoint as pretty-printed JSON.
pub fn save(state: &ModelState, path: &Path) -> Result<()> {
    let doc = CheckpointDoc::from_state(state);
    std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

/// Loads a model checkpoint.
pub fn load(path: &Path) -> Result<ModelState> {
    let doc: CheckpointDoc = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    doc.into_state()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{tiny_chunk, tiny_state};
    use crate::model::forward;

    #[test]
    fn roundtrip_preserves_posteriors() {
        // learned taps roundtrip bitwise through base64; sinc cutoffs pass
        // through the Hz boundary (f * fs and back), which costs about 1 ulp
        for (sinc, tol) in [(true, 1e-12), (false, 0.0)] {
            let state = tiny_state(sinc, 31).unwrap();
            let doc = CheckpointDoc::from_state(&state);
            let json = serde_json::to_string(&doc).unwrap();
            let parsed: CheckpointDoc = serde_json::from_str(&json).unwrap();
            let back = parsed.into_state().unwrap();
            let chunk = tiny_chunk(8, 0);
            let (a, _) = forward(&state, &chunk).unwrap();
            let (b, _) = forward(&back, &chunk).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= tol, "sinc={sinc}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn sinc_checkpoint_embeds_filterbank_doc() {
        let state = tiny_state(true, 31).unwrap();
        let json = serde_json::to_string(&CheckpointDoc::from_state(&state)).unwrap();
        assert!(json.contains("\"kind\":\"sinc\""));
        assert!(json.contains("\"L\":17"));
        assert!(json.contains("f1_hz"));
    }

    #[test]
    fn corrupt_blobs_are_rejected() {
        let state = tiny_state(false, 31).unwrap();
        let mut doc = CheckpointDoc::from_state(&state);
        doc.dense_w = "!!!not base64!!!".into();
        assert!(doc.clone().into_state().is_err());
        doc.dense_w = encode_f64s(&[1.0, 2.0]);
        assert!(matches!(doc.into_state(), Err(Error::Format(_))));
    }
}
