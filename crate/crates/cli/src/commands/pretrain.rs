use std::fmt::Write as _;

use ctxppi_core::pretrain::{EpochRecord, PretrainError, TrainReport, Trainer};

use super::{
    bundle_bytes, hash_parts, load_graph, stage_dir, write_json, write_output, CELL_EMBEDDINGS,
    CHECKPOINT_FILE, PROTEIN_EMBEDDINGS,
};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::RunConfig;

/// Hash binding a checkpoint to its training keys and graph bundle.
pub fn pretrain_hash(config: &RunConfig) -> anyhow::Result<u64> {
    let bundle = bundle_bytes(&config.graph_dir())?;
    Ok(hash_parts(config, RunConfig::TRAINING_KEYS, &[&bundle]))
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss,valid_auroc\n");
    for r in history {
        let v = r.valid_auroc.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{v}", r.epoch, r.loss);
    }
    s
}

/// Trains on `<graph>`, optionally resuming from `resume`, and writes the
/// checkpoint, report and embeddings to `<out>/pretrain`.
pub fn pretrain(config: &RunConfig) -> anyhow::Result<TrainReport> {
    let kg = load_graph(config)?;
    let hash = pretrain_hash(config)?;
    let dir = stage_dir(config, "pretrain");
    let ckpt_path = dir.join(CHECKPOINT_FILE);

    let mut trainer = Trainer::new(&kg, &config.model_config(), &config.train_config())?;
    if let Some(path) = &config.resume {
        let ckpt = load_checkpoint(path)?;
        ckpt.check_hash(hash)?;
        let state = ckpt.into_trainer_state(&trainer.state().params)?;
        trainer.restore(state)?;
        eprintln!(
            "resumed from {} at epoch {}",
            path.display(),
            trainer.epoch()
        );
    }

    while !trainer.is_done() {
        match trainer.step() {
            Ok(r) => {
                let v = r
                    .valid_auroc
                    .map_or("n/a".to_string(), |v| format!("{v:.4}"));
                eprintln!("epoch {:>4}  loss {:.6}  valid auroc {v}", r.epoch, r.loss);
                if config.checkpoint_every > 0 && r.epoch % config.checkpoint_every == 0 {
                    save_checkpoint(&ckpt_path, &Checkpoint::from_trainer(hash, trainer.state()))?;
                }
            }
            Err(e @ PretrainError::Diverged { .. }) => {
                save_checkpoint(&ckpt_path, &Checkpoint::from_trainer(hash, trainer.state()))?;
                eprintln!(
                    "last finite state (epoch {}) saved to {}",
                    trainer.epoch(),
                    ckpt_path.display()
                );
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        }
    }
    save_checkpoint(&ckpt_path, &Checkpoint::from_trainer(hash, trainer.state()))?;

    let (_, table, report) = trainer.finish()?;
    write_json(&dir.join("report.json"), &report)?;
    write_output(&dir.join("test_metrics.csv"), report.metrics_csv())?;
    write_output(&dir.join("history.csv"), history_csv(&report.history))?;
    write_output(&dir.join(PROTEIN_EMBEDDINGS), table.protein_tsv())?;
    write_output(&dir.join(CELL_EMBEDDINGS), table.cell_tsv())?;
    if let Some(m) = report.mean_test_auroc {
        eprintln!("mean test auroc {m:.4} ({:.1} s)", report.wall_clock_secs);
    }
    Ok(report)
}
