//! Subcommand implementations.

use std::path::{Path, PathBuf};

use mmssl_core::datagen::{generate_split, Dataset};

use crate::ablate::{run_ablation, Comparison};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::formats::{dataset_to_json, read_dataset, test_split_path, write_text};
use crate::log;
use crate::plot::{curves_csv, read_curve, svg_chart};
use crate::run::{run_training, Summary};

fn resolve(config: Option<&Path>, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let mut exp = ExperimentConfig::load_or_default(config)?;
    if let Some(s) = seed {
        exp.gen.seed = s;
        exp.train.seed = s;
    }
    exp.validate()?;
    Ok(exp)
}

fn describe(name: &str, data: &Dataset) -> String {
    let mut counts = vec![0usize; data.num_classes()];
    for s in data.samples() {
        if let Some(y) = s.label {
            counts[y] += 1;
        }
    }
    let ids: Vec<usize> = (0..data.len()).collect();
    let missing: Vec<String> =
        (0..data.num_modalities()).map(|m| format!("{:.3}", data.missing_fraction(m, &ids))).collect();
    format!(
        "{name}: {} samples, {} labeled, labeled per class {:?}, missing fraction per modality [{}]",
        data.len(),
        data.labeled_ids().len(),
        counts,
        missing.join(", ")
    )
}

/// Writes the training split to `out` and the test split next to it.
pub fn cmd_generate(config: Option<&Path>, out: &Path, seed: Option<u64>) -> CliResult<()> {
    let exp = resolve(config, seed)?;
    let (train, test) = generate_split(&exp.gen)?;
    write_text(out, &dataset_to_json(&train))?;
    let test_path = test_split_path(out);
    write_text(&test_path, &dataset_to_json(&test))?;
    println!("{}", describe(&out.display().to_string(), &train));
    println!("{}", describe(&test_path.display().to_string(), &test));
    Ok(())
}

/// Trains on `data`; the test split is `test` or the generator's sibling
/// file when present.
pub fn cmd_train(
    config: Option<&Path>,
    data: &Path,
    test: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> CliResult<Summary> {
    let exp = resolve(config, seed)?;
    let train = read_dataset(data)?;
    let test_path = test.map(Path::to_path_buf).or_else(|| Some(test_split_path(data)).filter(|p| p.exists()));
    let test = test_path.as_deref().map(read_dataset).transpose()?;
    if test.is_none() {
        log::info("no test split found; runs are not evaluated");
    }
    if exp.setup().effective_mode(train.num_modalities()) != exp.reconstruct.mode {
        log::info("single-modality data: reconstruction disabled");
    }
    let label = exp.label.clone().unwrap_or_else(|| {
        out.file_name().map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned())
    });
    let summary = run_training(&exp, &train, test.as_ref(), out, &label)?;
    match summary.accuracy() {
        Some(a) => log::info(&format!("{label}: {} epochs, test accuracy {a:.4}", summary.epochs)),
        None => log::info(&format!("{label}: {} epochs", summary.epochs)),
    }
    Ok(summary)
}

/// Runs the configured grid; `data` fixes the dataset for grid points that
/// keep the base missing rate.
pub fn cmd_ablate(config: Option<&Path>, data: Option<&Path>, out: &Path, seed: Option<u64>) -> CliResult<Comparison> {
    let exp = resolve(config, seed)?;
    let shared = data
        .map(|d| -> CliResult<_> {
            let test_path = test_split_path(d);
            let test = if test_path.exists() { Some(read_dataset(&test_path)?) } else { None };
            Ok((read_dataset(d)?, test))
        })
        .transpose()?;
    let comparison = run_ablation(&exp, shared, out)?;
    for v in &comparison.variants {
        log::info(&format!(
            "{}: median accuracy {}, minority recall {}",
            v.variant.label,
            v.median.accuracy.map_or("-".into(), |x| format!("{x:.4}")),
            v.median.minority_recall.map_or("-".into(), |x| format!("{x:.4}"))
        ));
    }
    Ok(comparison)
}

/// Writes `curves.csv` and `<metric>.svg` into `out`.
pub fn cmd_plot(runs: &[PathBuf], out: &Path, metric: &str) -> CliResult<()> {
    if runs.is_empty() {
        return Err(CliError::Usage("plot needs at least one run directory".into()));
    }
    let curves = runs.iter().map(|r| read_curve(r)).collect::<CliResult<Vec<_>>>()?;
    if curves.iter().all(|c| c.series(metric).is_empty()) {
        return Err(CliError::Usage(format!("metric {metric} not found in the given runs")));
    }
    write_text(&out.join("curves.csv"), &curves_csv(&curves))?;
    let name: String = metric.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
    write_text(&out.join(format!("{name}.svg")), &svg_chart(&curves, metric))?;
    Ok(())
}
