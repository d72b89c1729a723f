//! Full-model finite-difference verification of the analytic gradients.
//!
//! Every learnable scalar is perturbed by a central difference of the
//! cross-entropy loss and compared against [`crate::model::backward`]. The
//! tiny configuration (F=4, L=17, pool 4, hidden 16, 2 classes, 64-sample
//! chunks) keeps the exhaustive sweep instant while exercising every code
//! path, including the chain through the analytic tap derivatives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::SignalChunk;
use crate::dsp::{FilterBank, FilterSpec, SincParams, Window};
use crate::error::Result;
use crate::model::{
    backward, chunk_loss, forward, FirstLayer, FirstLayerGrads, Gradients, ModelState,
};

/// Parameter groups reported by the check, in report order.
pub const GROUPS: [&str; 6] = ["first_layer", "dense_w", "dense_b", "out_w", "out_b", "norm"];

/// Default central-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error above which a parameter counts as failing.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Differences below this are treated as zero before forming the ratio.
pub const ABS_FLOOR: f64 = 1e-8;

/// Worst relative error found in one parameter group.
#[derive(Debug, Clone)]
pub struct GroupReport {
    pub group: &'static str,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
}

impl GroupReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Relative error with an absolute floor for near-zero gradients.
fn rel_err(analytic: f64, fd: f64) -> f64 {
    let diff = (analytic - fd).abs();
    if diff <= ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(fd.abs())
    }
}

fn group_len(state: &ModelState, group: &str) -> usize {
    match group {
        "first_layer" => match &state.first_layer {
            FirstLayer::Sinc(bank) => 2 * bank.len(),
            FirstLayer::Learned { taps, .. } => taps.len() * taps[0].len(),
        },
        "dense_w" => state.dense_w.len(),
        "dense_b" => state.dense_b.len(),
        "out_w" => state.out_w.len(),
        "out_b" => state.out_b.len(),
        "norm" => 6,
        _ => unreachable!("unknown parameter group {group}"),
    }
}

fn get_param(state: &ModelState, group: &str, idx: usize) -> f64 {
    match group {
        "first_layer" => match &state.first_layer {
            FirstLayer::Sinc(bank) => {
                let p = &bank.params()[idx / 2];
                if idx % 2 == 0 {
                    p.f1()
                } else {
                    p.band()
                }
            }
            FirstLayer::Learned { taps, .. } => {
                let l = taps[0].len();
                taps[idx / l][idx % l]
            }
        },
        "dense_w" => state.dense_w[idx],
        "dense_b" => state.dense_b[idx],
        "out_w" => state.out_w[idx],
        "out_b" => state.out_b[idx],
        "norm" => {
            let p = [state.norm_input, state.norm_feature, state.norm_hidden][idx / 2];
            if idx % 2 == 0 {
                p.gain
            } else {
                p.bias
            }
        }
        _ => unreachable!(),
    }
}

fn set_param(state: &mut ModelState, group: &str, idx: usize, value: f64) -> Result<()> {
    match group {
        "first_layer" => match &mut state.first_layer {
            FirstLayer::Sinc(bank) => {
                let spec = *bank.spec();
                let mut params = bank.params().to_vec();
                let p = params[idx / 2];
                params[idx / 2] = if idx % 2 == 0 {
                    SincParams::new(value, p.band())?
                } else {
                    SincParams::new(p.f1(), value)?
                };
                *bank = FilterBank::new(params, spec)?;
            }
            FirstLayer::Learned { taps, .. } => {
                let l = taps[0].len();
                taps[idx / l][idx % l] = value;
            }
        },
        "dense_w" => state.dense_w[idx] = value,
        "dense_b" => state.dense_b[idx] = value,
        "out_w" => state.out_w[idx] = value,
        "out_b" => state.out_b[idx] = value,
        "norm" => {
            let p = [
                &mut state.norm_input,
                &mut state.norm_feature,
                &mut state.norm_hidden,
            ]
            .into_iter()
            .nth(idx / 2)
            .unwrap();
            if idx % 2 == 0 {
                p.gain = value;
            } else {
                p.bias = value;
            }
        }
        _ => unreachable!(),
    }
    Ok(())
}

fn get_grad(grads: &Gradients, group: &str, idx: usize) -> f64 {
    match group {
        "first_layer" => match &grads.first_layer {
            FirstLayerGrads::Sinc(g) => {
                if idx % 2 == 0 {
                    g[idx / 2].f1
                } else {
                    g[idx / 2].band
                }
            }
            FirstLayerGrads::Learned(rows) => {
                let l = rows[0].len();
                rows[idx / l][idx % l]
            }
        },
        "dense_w" => grads.dense_w[idx],
        "dense_b" => grads.dense_b[idx],
        "out_w" => grads.out_w[idx],
        "out_b" => grads.out_b[idx],
        "norm" => {
            let t = [grads.norm_input, grads.norm_feature, grads.norm_hidden][idx / 2];
            if idx % 2 == 0 {
                t.0
            } else {
                t.1
            }
        }
        _ => unreachable!(),
    }
}

/// Checks every learnable parameter of `state` against central finite
/// differences of the loss on `chunk`. With `corrupt_first_layer` set, the
/// first first-layer gradient entry is sign-flipped before comparison; the
/// report must then fail on that group (harness self-test).
pub fn full_model_check(
    state: &ModelState,
    chunk: &SignalChunk,
    step: f64,
    corrupt_first_layer: bool,
) -> Result<Vec<GroupReport>> {
    let (_, cache) = forward(state, chunk)?;
    let mut grads = backward(state, &cache, chunk.label)?;
    if corrupt_first_layer {
        match &mut grads.first_layer {
            FirstLayerGrads::Sinc(g) => g[0].f1 = -g[0].f1,
            FirstLayerGrads::Learned(rows) => rows[0][0] = -rows[0][0],
        }
    }
    let mut reports = Vec::with_capacity(GROUPS.len());
    for group in GROUPS {
        let n = group_len(state, group);
        let mut max_rel = 0.0;
        let mut worst = 0;
        for idx in 0..n {
            let v = get_param(state, group, idx);
            let probe = |value: f64| -> Result<f64> {
                let mut s = state.clone();
                set_param(&mut s, group, idx, value)?;
                Ok(chunk_loss(&s, chunk)?.0)
            };
            let fd = (probe(v + step)? - probe(v - step)?) / (2.0 * step);
            let err = rel_err(get_grad(&grads, group, idx), fd);
            if err > max_rel {
                max_rel = err;
                worst = idx;
            }
        }
        reports.push(GroupReport {
            group,
            checked: n,
            max_rel_err: max_rel,
            worst_index: worst,
        });
    }
    Ok(reports)
}

/// The tiny sinc filterbank used by the exhaustive check: four interior
/// bands, away from the 0/0.5 edges so no projection clamp is active at the
/// probe points.
pub fn tiny_sinc_bank() -> Result<FilterBank> {
    let spec = FilterSpec::new(17, Window::Hamming, 16_000.0)?;
    let edges = [(0.05, 0.12), (0.12, 0.22), (0.22, 0.33), (0.33, 0.45)];
    let params = edges
        .iter()
        .map(|&(a, b)| SincParams::from_edges(a, b))
        .collect::<Result<Vec<_>>>()?;
    FilterBank::new(params, spec)
}

/// Tiny model (F=4, L=17, pool 4, hidden 16, 2 classes, 64-sample chunks)
/// with the requested first-layer variant.
pub fn tiny_state(sinc: bool, seed: u64) -> Result<ModelState> {
    let layer = if sinc {
        FirstLayer::Sinc(tiny_sinc_bank()?)
    } else {
        FirstLayer::glorot_learned(4, 17, 16_000.0, seed ^ 0x51ac_d00d)
    };
    ModelState::new(layer, 64, 4, 16, 2, 0.2, seed)
}

/// Seeded random chunk matching [`tiny_state`]'s input shape.
pub fn tiny_chunk(seed: u64, label: usize) -> SignalChunk {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SignalChunk {
        samples: (0..64).map(|_| rng.random_range(-1.0..1.0)).collect(),
        sample_rate: 16_000.0,
        source_id: format!("gradcheck-{seed}"),
        label,
    }
}

/// Convenience wrapper: runs the tiny-config check for one variant and
/// returns the per-group reports.
pub fn tiny_config_check(sinc: bool, seed: u64, corrupt: bool) -> Result<Vec<GroupReport>> {
    let state = tiny_state(sinc, seed)?;
    let chunk = tiny_chunk(seed.wrapping_add(1), 1);
    full_model_check(&state, &chunk, DEFAULT_STEP, corrupt)
}
