//! Experiment commands behind the CLI subcommands. Each command validates
//! its configuration completely before touching the filesystem, writes only
//! under its output directory, and is byte-reproducible for a fixed config
//! and seed.

use std::fmt::Write as _;
use std::path::Path;

use crate::analysis::{
    cumulative_response, local_maxima, valley_experiment, ValleyTrace, VALLEY_THRESHOLD_DB,
};
use crate::checkpoint;
use crate::config::{class_count, split_holdout, DatasetSource, ExperimentConfig};
use crate::data;
use crate::dsp::realized_response;
use crate::error::{Error, Result};
use crate::gradcheck::{tiny_config_check, DEFAULT_TOLERANCE};
use crate::model::{train, EpochTrace};

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn trace_csv(traces: &[EpochTrace]) -> String {
    let mut out = String::from("epoch,mean_loss,chunk_error\n");
    for t in traces {
        let _ = writeln!(out, "{},{},{}", t.epoch, t.mean_loss, t.chunk_error);
    }
    out
}

/// Trains one model per the config and writes `checkpoint.json`, `trace.csv`
/// and a `config.json` echo into `out_dir`.
pub fn cmd_train(config: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    config.validate()?;
    let utts = config.load_utterances(config.seed)?;
    let classes = class_count(&utts)?;
    let (train_utts, _) = split_holdout(&utts, config.holdout_per_class);
    let chunks = config.frame_all(&train_utts)?;
    let state = config.build_model(config.first_layer, classes, config.seed)?;
    let opt = config.build_opt(&state)?;
    let (state, traces) = train(state, opt, &chunks, config.epochs, config.seed)?;

    std::fs::create_dir_all(out_dir)?;
    checkpoint::save(&state, &out_dir.join("checkpoint.json"))?;
    write_text(out_dir, "trace.csv", &trace_csv(&traces))?;
    write_text(out_dir, "config.json", &config.to_json())?;
    Ok(())
}

/// Exports per-filter response CSVs plus the cumulative curve and its local
/// maxima for a saved checkpoint.
pub fn cmd_respond(checkpoint_path: &Path, grid_size: usize, out_dir: &Path) -> Result<()> {
    let state = checkpoint::load(checkpoint_path)?;
    let layer = &state.first_layer;
    // probe one response before creating anything so a bad grid size leaves
    // no partial outputs
    realized_response(layer.taps(0), grid_size, layer.sample_rate())?;

    std::fs::create_dir_all(out_dir)?;
    for f in 0..layer.filters() {
        let curve = realized_response(layer.taps(f), grid_size, layer.sample_rate())?;
        write_text(out_dir, &format!("filter_{f:03}.csv"), &curve.to_csv())?;
    }
    let cumulative = cumulative_response(layer, grid_size)?;
    write_text(out_dir, "cumulative.csv", &cumulative.to_csv())?;
    let peaks = local_maxima(&cumulative);
    write_text(out_dir, "peaks.json", &serde_json::to_string_pretty(&peaks)?)?;
    Ok(())
}

/// Runs the tiny-config finite-difference suite for both first-layer
/// variants, printing the max relative error per parameter group. Returns
/// whether every group passed. `corrupt_first_layer` sign-flips one
/// first-layer gradient to prove the harness catches bad gradients.
pub fn cmd_gradcheck(seed: u64, corrupt_first_layer: bool) -> Result<bool> {
    let mut all_pass = true;
    for (label, sinc) in [("sinc", true), ("learned", false)] {
        let reports = tiny_config_check(sinc, seed, corrupt_first_layer)?;
        for r in &reports {
            let pass = r.passes(DEFAULT_TOLERANCE);
            all_pass &= pass;
            println!(
                "gradcheck {label} {}: max_rel_err {:.3e} over {} params -> {}",
                r.group,
                r.max_rel_err,
                r.checked,
                if pass { "PASS" } else { "FAIL" }
            );
        }
    }
    Ok(all_pass)
}

fn summary_json(sinc: &ValleyTrace, learned: &ValleyTrace) -> String {
    let doc = serde_json::json!({
        "sinc_first_checkpoint_over_3db": sinc.first_over(VALLEY_THRESHOLD_DB),
        "learned_first_checkpoint_over_3db": learned.first_over(VALLEY_THRESHOLD_DB),
    });
    serde_json::to_string_pretty(&doc).expect("summary serializes")
}

/// Runs the paired noisy-band adaptation experiment and writes both valley
/// traces plus a summary of the first checkpoints past 3 dB.
pub fn cmd_valley(config: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    config.validate()?;
    let (sinc, learned) = valley_experiment(config, config.seed)?;
    std::fs::create_dir_all(out_dir)?;
    write_text(out_dir, "sinc_valley.csv", &sinc.to_csv())?;
    write_text(out_dir, "learned_valley.csv", &learned.to_csv())?;
    write_text(out_dir, "summary.json", &summary_json(&sinc, &learned))?;
    Ok(())
}

/// Synthesizes the configured dataset and writes one WAV per utterance plus
/// a `manifest.json` of `{path, label}` rows.
pub fn cmd_synth(config: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    config.validate()?;
    if matches!(config.dataset, DatasetSource::Manifest { .. }) {
        return Err(Error::Config(
            "synth needs a synthetic dataset source, not a manifest".into(),
        ));
    }
    let utts = config.load_utterances(config.seed)?;
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = Vec::with_capacity(utts.len());
    for u in &utts {
        let name = format!("{}.wav", u.id);
        data::write_wav(&out_dir.join(&name), &u.samples, u.sample_rate)?;
        manifest.push(data::ManifestEntry {
            path: name.into(),
            label: u.label,
        });
    }
    write_text(out_dir, "manifest.json", &serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
