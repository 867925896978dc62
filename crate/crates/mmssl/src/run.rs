//! One training run and its artifacts.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use mmssl_core::datagen::Dataset;
use mmssl_core::metrics::Metrics;
use mmssl_core::model::ModelParams;
use mmssl_core::reconstruct::ReconstructionMode;
use mmssl_core::trainer::{train, EpochRecord};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{write_text, Checkpoint};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Epoch records in flight between the trainer and the writer thread.
const QUEUE_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    pub seed: u64,
    pub mode: ReconstructionMode,
    pub epochs: usize,
    pub epochs_to_target: Option<usize>,
    pub final_eval: Option<Metrics>,
    pub final_tau: Vec<f64>,
    pub config: ExperimentConfig,
    pub timing: Timing,
}

impl Summary {
    pub fn accuracy(&self) -> Option<f64> {
        self.final_eval.as_ref().map(|m| m.accuracy)
    }

    /// Recall of the rarest test class (class 1 for binary problems).
    pub fn minority_recall(&self) -> Option<f64> {
        let m = self.final_eval.as_ref()?;
        if let Some(h) = &m.headline {
            return Some(h.recall);
        }
        m.per_class.iter().min_by_key(|c| c.support).map(|c| c.recall)
    }

    pub fn macro_f1(&self) -> Option<f64> {
        let m = self.final_eval.as_ref()?;
        Some(m.per_class.iter().map(|c| c.f1).sum::<f64>() / m.per_class.len() as f64)
    }

    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::read(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

fn spawn_writer(path: PathBuf) -> CliResult<(mpsc::SyncSender<EpochRecord>, thread::JoinHandle<CliResult<()>>)> {
    let file = fs::File::create(&path).map_err(|e| CliError::write(&path, e))?;
    let (tx, rx) = mpsc::sync_channel::<EpochRecord>(QUEUE_DEPTH);
    let handle = thread::spawn(move || {
        let mut out = BufWriter::new(file);
        for rec in rx {
            let line = serde_json::to_string(&rec).expect("epoch record serializes");
            writeln!(out, "{line}").map_err(|e| CliError::write(&path, e))?;
        }
        out.flush().map_err(|e| CliError::write(&path, e))
    });
    Ok((tx, handle))
}

/// Trains on `data`, writes metrics.jsonl, summary.json and checkpoint.json
/// into `out`, and returns the summary.
pub fn run_training(
    exp: &ExperimentConfig,
    data: &Dataset,
    test: Option<&Dataset>,
    out: &Path,
    label: &str,
) -> CliResult<Summary> {
    exp.setup().validate()?;
    fs::create_dir_all(out).map_err(|e| CliError::write(out, e))?;
    let setup = exp.setup();
    let shape = setup.train.model_shape(data, setup.reconstruct.k);
    let params = ModelParams::init(shape, setup.train.seed)?;

    let start = Instant::now();
    let (tx, writer) = spawn_writer(out.join(METRICS_FILE))?;
    let mut send_failed = false;
    let result = train(data, test, params, &setup, &mut |rec| {
        let mut rec = rec.clone();
        rec.batches.clear();
        send_failed |= tx.send(rec).is_err();
    });
    drop(tx);
    let written = writer.join().map_err(|_| CliError::Runtime("metrics writer panicked".into()))?;
    let output = result?;
    written?;
    if send_failed {
        return Err(CliError::Runtime("metrics writer stopped early".into()));
    }

    let ck = Checkpoint::new(exp, &output.params, &output.subspaces, output.mode, &output.thresholds.tau);
    write_text(&out.join(CHECKPOINT_FILE), &ck.to_json())?;
    let summary = Summary {
        label: label.to_string(),
        seed: setup.train.seed,
        mode: output.mode,
        epochs: output.record.epochs.len(),
        epochs_to_target: output.record.epochs_to_target,
        final_eval: output.record.final_eval,
        final_tau: output.thresholds.tau,
        config: exp.clone(),
        timing: Timing { wall_seconds: start.elapsed().as_secs_f64() },
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_text(&out.join(SUMMARY_FILE), &text)?;
    Ok(summary)
}
