//! Ablation grids: toggle cross products over shared data.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::thread;

use mmssl_core::datagen::{generate_split, Dataset};
use mmssl_core::reconstruct::ReconstructionMode;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::formats::write_text;
use crate::log;
use crate::run::{run_training, Summary};

pub const COMPARISON_JSON: &str = "comparison.json";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const MEDIANS_CSV: &str = "medians.csv";

/// Metrics compared across variants, in CSV column order.
pub const METRICS: [&str; 4] = ["accuracy", "minority_recall", "macro_f1", "epochs_to_target"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub label: String,
    pub adaptive_threshold: bool,
    pub contrastive: bool,
    pub mode: ReconstructionMode,
    pub missing_rate: Option<f64>,
}

impl Variant {
    fn make_label(adaptive: bool, contrastive: bool, mode: ReconstructionMode, rate: Option<f64>) -> String {
        let mode = match mode {
            ReconstructionMode::None => "none",
            ReconstructionMode::ZeroFill => "zero_fill",
            ReconstructionMode::SubspaceMap => "subspace_map",
        };
        let mut s = format!(
            "{}+{}+{mode}",
            if adaptive { "adaptive" } else { "fixed" },
            if contrastive { "con" } else { "nocon" }
        );
        if let Some(r) = rate {
            write!(s, "+miss{r}").expect("string write");
        }
        s
    }

    pub fn apply(&self, base: &ExperimentConfig, seed: u64) -> ExperimentConfig {
        let mut exp = base.clone();
        exp.train.adaptive_threshold = self.adaptive_threshold;
        exp.train.contrastive = self.contrastive;
        exp.reconstruct.mode = self.mode;
        exp.train.seed = seed;
        if let Some(r) = self.missing_rate {
            for spec in &mut exp.gen.missing {
                spec.rate = r;
            }
        }
        exp.label = Some(format!("{}/seed{seed}", self.label));
        exp
    }
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

/// Cross product of the declared axes, missing rate outermost.
pub fn variants(exp: &ExperimentConfig) -> Vec<Variant> {
    let a = &exp.ablate;
    let rates: Vec<Option<f64>> =
        if a.missing_rate.is_empty() { vec![None] } else { a.missing_rate.iter().copied().map(Some).collect() };
    let mut out = Vec::new();
    for &rate in &rates {
        for &adaptive in &axis(&a.adaptive_threshold, exp.train.adaptive_threshold) {
            for &contrastive in &axis(&a.contrastive, exp.train.contrastive) {
                for &mode in &axis(&a.mode, exp.reconstruct.mode) {
                    out.push(Variant {
                        label: Variant::make_label(adaptive, contrastive, mode, rate),
                        adaptive_threshold: adaptive,
                        contrastive,
                        mode,
                        missing_rate: rate,
                    });
                }
            }
        }
    }
    out
}

pub fn seeds(exp: &ExperimentConfig) -> Vec<u64> {
    axis(&exp.ablate.seeds, exp.train.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub dir: PathBuf,
    pub accuracy: Option<f64>,
    pub minority_recall: Option<f64>,
    pub macro_f1: Option<f64>,
    pub epochs_to_target: Option<f64>,
}

impl RunRow {
    fn from_summary(seed: u64, dir: PathBuf, s: &Summary) -> Self {
        Self {
            seed,
            dir,
            accuracy: s.accuracy(),
            minority_recall: s.minority_recall(),
            macro_f1: s.macro_f1(),
            epochs_to_target: s.epochs_to_target.map(|e| e as f64),
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => self.accuracy,
            "minority_recall" => self.minority_recall,
            "macro_f1" => self.macro_f1,
            "epochs_to_target" => self.epochs_to_target,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Medians {
    pub accuracy: Option<f64>,
    pub minority_recall: Option<f64>,
    pub macro_f1: Option<f64>,
    pub epochs_to_target: Option<f64>,
}

impl Medians {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => self.accuracy,
            "minority_recall" => self.minority_recall,
            "macro_f1" => self.macro_f1,
            "epochs_to_target" => self.epochs_to_target,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub runs: Vec<RunRow>,
    pub median: Medians,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub complete: bool,
    pub variants: Vec<VariantResult>,
}

/// Median of the present values; even counts average the middle pair.
pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

fn medians(runs: &[RunRow]) -> Medians {
    let m = |name: &str| median(runs.iter().filter_map(|r| r.metric(name)));
    Medians {
        accuracy: m("accuracy"),
        minority_recall: m("minority_recall"),
        macro_f1: m("macro_f1"),
        epochs_to_target: m("epochs_to_target"),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Long format: one row per (variant, seed) plus one median row per variant.
pub fn comparison_csv(c: &Comparison) -> String {
    let mut out = format!("variant,seed,{}\n", METRICS.join(","));
    for v in &c.variants {
        let label = csv_field(&v.variant.label);
        for r in &v.runs {
            let cells: Vec<String> = METRICS.iter().map(|m| cell(r.metric(m))).collect();
            writeln!(out, "{label},{},{}", r.seed, cells.join(",")).expect("string write");
        }
        let cells: Vec<String> = METRICS.iter().map(|m| cell(v.median.get(m))).collect();
        writeln!(out, "{label},median,{}", cells.join(",")).expect("string write");
    }
    out
}

/// Wide format: one column per variant label, one row per metric median.
pub fn medians_csv(c: &Comparison) -> String {
    let labels: Vec<String> = c.variants.iter().map(|v| csv_field(&v.variant.label)).collect();
    let mut out = format!("metric,{}\n", labels.join(","));
    for m in METRICS {
        let cells: Vec<String> = c.variants.iter().map(|v| cell(v.median.get(m))).collect();
        writeln!(out, "{m},{}", cells.join(",")).expect("string write");
    }
    out
}

fn write_comparison(out: &Path, c: &Comparison) -> CliResult<()> {
    write_text(&out.join(COMPARISON_JSON), &serde_json::to_string_pretty(c).expect("comparison serializes"))?;
    write_text(&out.join(COMPARISON_CSV), &comparison_csv(c))?;
    write_text(&out.join(MEDIANS_CSV), &medians_csv(c))
}

pub fn run_dir(out: &Path, variant: &Variant, seed: u64) -> PathBuf {
    out.join("runs").join(&variant.label).join(format!("seed{seed}"))
}

struct Job {
    variant: usize,
    seed: u64,
    data: usize,
}

/// Runs the grid. `shared` supplies the data for every grid point that does
/// not override the missing rate; otherwise data are generated from the
/// variant's resolved config.
pub fn run_ablation(exp: &ExperimentConfig, shared: Option<(Dataset, Option<Dataset>)>, out: &Path) -> CliResult<Comparison> {
    exp.validate()?;
    let vars = variants(exp);
    let seed_list = seeds(exp);

    // One dataset per distinct missing rate.
    let mut rates: Vec<Option<f64>> = Vec::new();
    for v in &vars {
        if !rates.iter().any(|r| r.map(f64::to_bits) == v.missing_rate.map(f64::to_bits)) {
            rates.push(v.missing_rate);
        }
    }
    let mut datasets: Vec<(Dataset, Option<Dataset>)> = Vec::with_capacity(rates.len());
    for &rate in &rates {
        match (&shared, rate) {
            (Some(d), None) => datasets.push(d.clone()),
            _ => {
                let probe = Variant { missing_rate: rate, ..vars[0].clone() }.apply(exp, 0);
                let (train, test) = generate_split(&probe.gen)?;
                datasets.push((train, Some(test)));
            }
        }
    }
    let data_index = |v: &Variant| {
        rates.iter().position(|r| r.map(f64::to_bits) == v.missing_rate.map(f64::to_bits)).expect("rate listed")
    };

    let jobs: Vec<Job> = vars
        .iter()
        .enumerate()
        .flat_map(|(i, v)| seed_list.iter().map(move |&seed| (i, v, seed)))
        .map(|(i, v, seed)| Job { variant: i, seed, data: data_index(v) })
        .collect();
    let workers = match exp.ablate.workers {
        0 => thread::available_parallelism().map_or(1, |n| n.get()),
        w => w,
    }
    .min(jobs.len().max(1));
    log::info(&format!("ablation: {} variants x {} seeds on {workers} workers", vars.len(), seed_list.len()));

    let results: Vec<Mutex<Option<CliResult<RunRow>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    let failed = std::sync::atomic::AtomicBool::new(false);
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failed.load(std::sync::atomic::Ordering::SeqCst) {
                    break;
                }
                let idx = {
                    let mut n = next.lock().expect("job counter");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(job) = jobs.get(idx) else { break };
                let v = &vars[job.variant];
                let run_exp = v.apply(exp, job.seed);
                let dir = run_dir(out, v, job.seed);
                let (train, test) = &datasets[job.data];
                let label = run_exp.label.clone().unwrap_or_default();
                let res = run_training(&run_exp, train, test.as_ref(), &dir, &label)
                    .map(|s| RunRow::from_summary(job.seed, dir.clone(), &s));
                if res.is_err() {
                    failed.store(true, std::sync::atomic::Ordering::SeqCst);
                }
                *results[idx].lock().expect("result slot") = Some(res);
            });
        }
    });

    let mut first_error = None;
    let mut per_variant: Vec<Vec<RunRow>> = vec![Vec::new(); vars.len()];
    for (job, slot) in jobs.iter().zip(results) {
        match slot.into_inner().expect("result slot") {
            Some(Ok(row)) => per_variant[job.variant].push(row),
            Some(Err(e)) => {
                first_error.get_or_insert(e);
            }
            None => {}
        }
    }
    let comparison = Comparison {
        complete: first_error.is_none(),
        variants: vars
            .into_iter()
            .zip(per_variant)
            .map(|(variant, runs)| VariantResult { median: medians(&runs), variant, runs })
            .collect(),
    };
    write_comparison(out, &comparison)?;
    match first_error {
        Some(e) => Err(CliError::Runtime(format!("ablation aborted, partial results kept in {}: {e}", out.display()))),
        None => Ok(comparison),
    }
}
