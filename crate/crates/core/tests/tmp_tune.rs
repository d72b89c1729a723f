use sincfront::config::*;
use sincfront::model::{evaluate, train_with};

fn desk_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.filters = 32;
    c.filter_len = 251;
    c.pool_width = 25;
    c.hidden_size = 48;
    c.batch_size = 128;
    c.epochs = 12;
    c
}

#[test]
fn tune_convergence() {
    let config = desk_config();
    for seed in [1u64, 2u64] {
        let utts = config.load_utterances(seed).unwrap();
        let classes = class_count(&utts).unwrap();
        let (train_utts, held_utts) = split_holdout(&utts, config.holdout_per_class);
        let train_chunks = config.frame_all(&train_utts).unwrap();
        let held_chunks = config.frame_all(&held_utts).unwrap();
        for kind in [FirstLayerKind::Sinc, FirstLayerKind::Learned] {
            let state = config.build_model(kind, classes, seed).unwrap();
            let opt = config.build_opt(&state).unwrap();
            let t0 = std::time::Instant::now();
            let mut held_errs = vec![];
            let (_, _) = train_with(
                state, opt, &train_chunks, config.epochs, seed,
                |_, _| Ok(()),
                |_, state, _| {
                    let (_, he) = evaluate(state, &held_chunks)?;
                    held_errs.push(he);
                    Ok(())
                },
            ).unwrap();
            let line: Vec<String> = held_errs.iter().map(|e| format!("{:.3}", e)).collect();
            println!("seed {seed} {kind:?} held: [{}] {:.0}s", line.join(" "), t0.elapsed().as_secs_f64());
        }
    }
}
