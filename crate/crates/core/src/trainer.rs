//! Joint semi-supervised training with missing-modality recovery.
//!
//! Every batch pairs `batch_size` labeled samples with a slice of the
//! unlabeled set and takes one Adam step on
//!
//! ```text
//! L_all = L_cls + λ_p·L_pl + λ_c·L_con + L_recover
//! ```
//!
//! where each term is averaged over the samples that contribute to it.
//! Thresholds and class statistics are updated once per epoch, after the
//! batch loop; subspaces are refit at the start of every `refresh`-th epoch.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::datagen::{augment_strong, augment_weak, AugmentConfig, Dataset, MultimodalSample, Views};
use crate::error::{config_err, Result};
use crate::metrics::Metrics;
use crate::model::{bind, encode, fuse, predict, zero_fill, AdamConfig, AdamState, ModelParams, ModelShape, ParamVars};
use crate::numeric::{argmax, softmax, Matrix, Rng};
use crate::reconstruct::{
    choose_hidden_modality, fit_subspaces, recover, recover_loss_node, recover_node, PcaSubspace,
    ReconstructConfig, ReconstructionMode,
};
use crate::ssl::{cls_loss_node, con_loss_node, decide, pl_loss_node, ContrastiveConfig, PseudoLabelDecision, ThresholdState};

const TRAIN_STREAM: u64 = 0x0074_7261_696e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub tau: f64,
    pub tau_high: f64,
    pub lambda_p: f64,
    pub lambda_c: f64,
    pub temperature: f64,
    pub negatives: usize,
    pub adaptive_threshold: bool,
    pub contrastive: bool,
    pub hidden: usize,
    pub feature_dim: usize,
    pub eval_every: usize,
    /// Accuracy that counts as converged for `epochs_to_target`.
    pub target_accuracy: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 20,
            batch_size: 8,
            lr: 1e-4,
            tau: 0.95,
            tau_high: 0.95,
            lambda_p: 0.1,
            lambda_c: 0.1,
            temperature: 0.05,
            negatives: 8,
            adaptive_threshold: true,
            contrastive: true,
            hidden: 32,
            feature_dim: 32,
            eval_every: 1,
            target_accuracy: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(config_err!("epochs must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(config_err!("batch_size must be >= 2"));
        }
        if !(self.lr > 0.0) {
            return Err(config_err!("lr must be positive"));
        }
        if !(0.0..=1.0).contains(&self.tau) || !(0.0..=1.0).contains(&self.tau_high) {
            return Err(config_err!("tau and tau_high must lie in [0, 1]"));
        }
        if self.lambda_p < 0.0 || self.lambda_c < 0.0 {
            return Err(config_err!("lambda_p and lambda_c must be non-negative"));
        }
        if self.hidden == 0 || self.feature_dim == 0 || self.eval_every == 0 {
            return Err(config_err!("hidden, feature_dim and eval_every must be >= 1"));
        }
        self.contrastive_config().validate()
    }

    pub fn contrastive_config(&self) -> ContrastiveConfig {
        ContrastiveConfig { temperature: self.temperature, negatives: self.negatives }
    }

    pub fn model_shape(&self, data: &Dataset, k: usize) -> ModelShape {
        ModelShape {
            dims: data.dims().to_vec(),
            num_classes: data.num_classes(),
            hidden: self.hidden,
            feature_dim: self.feature_dim,
            k,
        }
    }
}

/// Counts and loss values of one optimizer step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchStats {
    pub labeled: usize,
    pub unlabeled: usize,
    pub accepted: usize,
    pub contrastive: usize,
    /// Unlabeled ids that entered the pseudo-label loss.
    pub accepted_ids: Vec<usize>,
    /// Unlabeled ids that anchored the contrastive loss.
    pub contrastive_ids: Vec<usize>,
    pub hidden: Option<usize>,
    pub l_cls: f64,
    pub l_pl: f64,
    pub l_con: f64,
    pub l_recover: f64,
    pub l_all: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_cls: f64,
    pub l_pl: f64,
    pub l_con: f64,
    pub l_recover: f64,
    pub l_all: f64,
    /// Thresholds in effect during the epoch.
    pub tau: Vec<f64>,
    /// Accepted pseudo-labels per class during the epoch.
    pub sigma_u: Vec<usize>,
    pub accept_rate: f64,
    pub eval: Option<Metrics>,
    #[serde(skip)]
    pub batches: Vec<BatchStats>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    pub final_eval: Option<Metrics>,
    /// First epoch (1-based) whose evaluation reached the target accuracy.
    pub epochs_to_target: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub subspaces: Vec<PcaSubspace>,
    pub thresholds: ThresholdState,
    /// Mode actually used; a single-modality dataset falls back to `None`.
    pub mode: ReconstructionMode,
    pub record: RunRecord,
}

#[derive(Debug, Clone, Default)]
pub struct TrainSetup {
    pub train: TrainConfig,
    pub reconstruct: ReconstructConfig,
    pub augment: AugmentConfig,
}

impl TrainSetup {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.reconstruct.validate()?;
        self.augment.validate()
    }

    pub fn effective_mode(&self, num_modalities: usize) -> ReconstructionMode {
        if num_modalities < 2 && self.reconstruct.mode == ReconstructionMode::SubspaceMap {
            ReconstructionMode::None
        } else {
            self.reconstruct.mode
        }
    }
}

/// Stacks modality `m` of `views` into an `n × d` matrix with zero rows for
/// missing entries.
fn input_batch(views: &[Views], m: usize, d: usize) -> (Matrix, Vec<bool>) {
    let mut x = Matrix::zeros(views.len(), d);
    let mut avail = vec![false; views.len()];
    for (i, v) in views.iter().enumerate() {
        if let Some(xm) = &v[m] {
            x.row_mut(i).copy_from_slice(xm);
            avail[i] = true;
        }
    }
    (x, avail)
}

/// Fused `n × M·F` features with missing slots handled per `mode`.
fn fused_batch(
    tape: &mut Tape,
    pv: &ParamVars,
    shape: &ModelShape,
    views: &[Views],
    mode: ReconstructionMode,
    subspaces: &[PcaSubspace],
) -> Result<Var> {
    let n = views.len();
    let f = shape.feature_dim;
    let m_count = shape.dims.len();
    let mut encoded: Vec<Option<Var>> = Vec::with_capacity(m_count);
    let mut avail: Vec<Vec<bool>> = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let (x, a) = input_batch(views, m, shape.dims[m]);
        let any = a.iter().any(|&b| b);
        let z = if any || mode == ReconstructionMode::ZeroFill {
            let xv = tape.constant(x);
            Some(pv.encode_batch(tape, m, xv)?)
        } else {
            None
        };
        encoded.push(z);
        avail.push(a);
    }
    let mut slots = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let all = avail[m].iter().all(|&b| b);
        let slot = match (mode, encoded[m]) {
            (ReconstructionMode::ZeroFill, Some(z)) => z,
            (_, Some(z)) if all => z,
            (ReconstructionMode::SubspaceMap, z) => {
                let rec = recover_node(tape, &encoded, &avail, m, pv.mapping[m], subspaces)?;
                match z {
                    Some(z) => tape.select(z, rec, avail[m].clone())?,
                    None => rec,
                }
            }
            (_, z) => {
                let zeros = tape.constant(Matrix::zeros(n, f));
                match z {
                    Some(z) => tape.select(z, zeros, avail[m].clone())?,
                    None => zeros,
                }
            }
        };
        slots.push(slot);
    }
    tape.concat_cols(&slots)
}

fn row_softmax(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let p = softmax(m.row(i)).expect("non-empty row");
        out.row_mut(i).copy_from_slice(&p);
    }
    out
}

struct Batch<'a> {
    labeled: Vec<&'a MultimodalSample>,
    unlabeled: Vec<&'a MultimodalSample>,
}

struct Trainer<'a> {
    setup: &'a TrainSetup,
    mode: ReconstructionMode,
    missing_rates: Vec<f64>,
    contrastive: ContrastiveConfig,
}

impl Trainer<'_> {
    fn step(
        &self,
        params: &mut ModelParams,
        adam: &mut AdamState,
        subspaces: &[PcaSubspace],
        thresholds: &ThresholdState,
        batch: &Batch<'_>,
        rng: &mut Rng,
        decisions: &mut Vec<PseudoLabelDecision>,
    ) -> Result<BatchStats> {
        let cfg = &self.setup.train;
        let aug = &self.setup.augment;
        let shape = params.shape.clone();
        let mut tape = Tape::new();
        let pv = bind(&mut tape, params);
        let mut stats = BatchStats {
            labeled: batch.labeled.len(),
            unlabeled: batch.unlabeled.len(),
            ..BatchStats::default()
        };
        let mut terms: Vec<(Var, f64)> = Vec::new();

        if !batch.labeled.is_empty() {
            let strong = batch.labeled.iter().map(|s| augment_strong(s, aug, rng)).collect::<Result<Vec<_>>>()?;
            let fused = fused_batch(&mut tape, &pv, &shape, &strong, self.mode, subspaces)?;
            let logits = pv.logits(&mut tape, fused)?;
            let labels: Vec<usize> = batch.labeled.iter().map(|s| s.label.expect("labeled")).collect();
            let cls = cls_loss_node(&mut tape, logits, &labels, 1.0 / labels.len() as f64)?;
            stats.l_cls = tape.scalar(cls);
            terms.push((cls, 1.0));
        }

        if self.mode == ReconstructionMode::SubspaceMap {
            stats.hidden = choose_hidden_modality(&self.missing_rates, rng);
            let complete: Vec<&MultimodalSample> =
                batch.labeled.iter().copied().filter(|s| s.is_complete()).collect();
            if let (Some(m), false) = (stats.hidden, complete.is_empty()) {
                let weak = complete.iter().map(|s| augment_weak(s, aug, rng)).collect::<Result<Vec<_>>>()?;
                let z: Vec<Var> = (0..shape.dims.len())
                    .map(|j| {
                        let (x, _) = input_batch(&weak, j, shape.dims[j]);
                        let xv = tape.constant(x);
                        pv.encode_batch(&mut tape, j, xv)
                    })
                    .collect::<Result<_>>()?;
                let mut sources: Vec<Option<Var>> = z.iter().copied().map(Some).collect();
                sources[m] = None;
                let avail = vec![vec![true; complete.len()]; shape.dims.len()];
                let rec = recover_node(&mut tape, &sources, &avail, m, pv.mapping[m], subspaces)?;
                let fused_true = tape.concat_cols(&z)?;
                let logits_true = pv.logits(&mut tape, fused_true)?;
                let target = row_softmax(tape.value(logits_true));
                let mut rec_slots = z.clone();
                rec_slots[m] = rec;
                let fused_rec = tape.concat_cols(&rec_slots)?;
                let logits_rec = pv.logits(&mut tape, fused_rec)?;
                let loss =
                    recover_loss_node(&mut tape, rec, z[m], logits_rec, target, self.setup.reconstruct.lambda_r)?;
                stats.l_recover = tape.scalar(loss);
                terms.push((loss, 1.0));
            }
        }

        if !batch.unlabeled.is_empty() {
            let weak = batch.unlabeled.iter().map(|s| augment_weak(s, aug, rng)).collect::<Result<Vec<_>>>()?;
            let strong = batch.unlabeled.iter().map(|s| augment_strong(s, aug, rng)).collect::<Result<Vec<_>>>()?;
            let fused_w = fused_batch(&mut tape, &pv, &shape, &weak, self.mode, subspaces)?;
            let logits_w = pv.logits(&mut tape, fused_w)?;
            let probs_w = row_softmax(tape.value(logits_w));
            let batch_decisions: Vec<PseudoLabelDecision> =
                batch.unlabeled.iter().enumerate().map(|(i, s)| decide(s.id, probs_w.row(i), thresholds)).collect();
            let fused_s = fused_batch(&mut tape, &pv, &shape, &strong, self.mode, subspaces)?;
            stats.accepted_ids = batch_decisions.iter().filter(|d| d.accepted).map(|d| d.id).collect();
            stats.accepted = stats.accepted_ids.len();
            let rejected = batch_decisions.len() - stats.accepted;
            if stats.accepted > 0 {
                let logits_s = pv.logits(&mut tape, fused_s)?;
                let pl = pl_loss_node(&mut tape, logits_s, &batch_decisions, 1.0 / stats.accepted as f64)?;
                stats.l_pl = tape.scalar(pl);
                terms.push((pl, cfg.lambda_p));
            }
            if cfg.contrastive && rejected > 0 && batch_decisions.len() >= 2 {
                let low_conf: Vec<bool> = batch_decisions.iter().map(|d| !d.accepted).collect();
                let con =
                    con_loss_node(&mut tape, fused_w, fused_s, &low_conf, &self.contrastive, 1.0 / rejected as f64)?;
                stats.contrastive = rejected;
                stats.contrastive_ids = batch_decisions.iter().filter(|d| !d.accepted).map(|d| d.id).collect();
                stats.l_con = tape.scalar(con);
                terms.push((con, cfg.lambda_c));
            }
            decisions.extend(batch_decisions);
        }

        if terms.is_empty() {
            return Ok(stats);
        }
        let total = tape.weighted_sum(&terms)?;
        stats.l_all = tape.scalar(total);
        let grads = tape.backward(total)?;
        let g = pv.collect_grads(&grads, params);
        adam.step_model(params, &g)?;
        Ok(stats)
    }
}

/// Splits `ids` into consecutive batches of `size`; a trailing batch of one
/// sample is merged into its predecessor so contrastive batches have ≥ 2.
fn chunk(ids: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = ids.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() >= 2 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Trains `params` on `data`, evaluating on `test` when given.
///
/// `observer` sees every epoch record as soon as it is complete.
pub fn train(
    data: &Dataset,
    test: Option<&Dataset>,
    mut params: ModelParams,
    setup: &TrainSetup,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutput> {
    setup.validate()?;
    let cfg = &setup.train;
    let expected = cfg.model_shape(data, setup.reconstruct.k);
    if params.shape != expected {
        return Err(config_err!("model shape does not match dataset and configuration"));
    }
    let labeled_ids = data.labeled_ids();
    let unlabeled_ids = data.unlabeled_ids();
    if labeled_ids.is_empty() {
        return Err(config_err!("training needs at least one labeled sample"));
    }
    let mode = setup.effective_mode(data.num_modalities());
    let all_ids: Vec<usize> = (0..data.len()).collect();
    let trainer = Trainer {
        setup,
        mode,
        missing_rates: (0..data.num_modalities()).map(|m| data.missing_fraction(m, &all_ids)).collect(),
        contrastive: cfg.contrastive_config(),
    };
    let complete_labeled: Vec<&MultimodalSample> =
        labeled_ids.iter().map(|&i| data.sample(i)).filter(|s| s.is_complete()).collect();
    if mode == ReconstructionMode::SubspaceMap && complete_labeled.len() < setup.reconstruct.k {
        return Err(config_err!(
            "subspace_map needs at least k = {} modality-complete labeled samples, found {}",
            setup.reconstruct.k,
            complete_labeled.len()
        ));
    }

    let labeled_counts = data.labeled_counts();
    let mut thresholds = ThresholdState::new(data.num_classes(), cfg.tau, cfg.tau_high);
    thresholds.update_class_stats(&[], &labeled_counts)?;
    if cfg.adaptive_threshold {
        thresholds.update_thresholds()?;
    } else {
        thresholds.use_fixed_thresholds();
    }

    let adam_cfg = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut adam = AdamState::for_model(adam_cfg, &params);
    let mut rng = Rng::derive(cfg.seed, TRAIN_STREAM);
    let mut subspaces: Vec<PcaSubspace> = Vec::new();
    let mut record = RunRecord::default();
    let mut labeled_perm = labeled_ids.clone();
    let mut unlabeled_perm = unlabeled_ids.clone();
    let bs = cfg.batch_size;

    for epoch in 0..cfg.epochs {
        if mode == ReconstructionMode::SubspaceMap && epoch % setup.reconstruct.refresh == 0 {
            subspaces = fit_subspaces(&params, &complete_labeled, &setup.reconstruct)?;
        }
        rng.shuffle(&mut labeled_perm);
        rng.shuffle(&mut unlabeled_perm);
        let unlabeled_batches = chunk(&unlabeled_perm, bs);
        let n_batches = if unlabeled_batches.is_empty() { labeled_perm.len().div_ceil(bs) } else { unlabeled_batches.len() };
        let take = bs.min(labeled_perm.len());
        let mut cursor = 0;
        let mut decisions = Vec::with_capacity(unlabeled_ids.len());
        let mut batches = Vec::with_capacity(n_batches);
        let tau_in_effect = thresholds.tau.clone();

        for b in 0..n_batches {
            let labeled = (0..take)
                .map(|_| {
                    let s = data.sample(labeled_perm[cursor]);
                    cursor = (cursor + 1) % labeled_perm.len();
                    s
                })
                .collect();
            let unlabeled = unlabeled_batches.get(b).map_or_else(Vec::new, |ids| ids.iter().map(|&i| data.sample(i)).collect());
            let batch = Batch { labeled, unlabeled };
            batches.push(trainer.step(&mut params, &mut adam, &subspaces, &thresholds, &batch, &mut rng, &mut decisions)?);
        }

        thresholds.update_class_stats(&decisions, &labeled_counts)?;
        if cfg.adaptive_threshold {
            thresholds.update_thresholds()?;
        } else {
            thresholds.use_fixed_thresholds();
        }

        let last = epoch + 1 == cfg.epochs;
        let eval = match test {
            Some(t) if last || (epoch + 1) % cfg.eval_every == 0 => {
                Some(evaluate(&params, t, mode, &subspaces)?.with_epoch(epoch))
            }
            _ => None,
        };
        if let (None, Some(m)) = (record.epochs_to_target, &eval) {
            if m.accuracy >= cfg.target_accuracy {
                record.epochs_to_target = Some(epoch + 1);
            }
        }
        let accepted = decisions.iter().filter(|d| d.accepted).count();
        let entry = EpochRecord {
            epoch,
            l_cls: mean(batches.iter().map(|b| b.l_cls)),
            l_pl: mean(batches.iter().map(|b| b.l_pl)),
            l_con: mean(batches.iter().map(|b| b.l_con)),
            l_recover: mean(batches.iter().map(|b| b.l_recover)),
            l_all: mean(batches.iter().map(|b| b.l_all)),
            tau: tau_in_effect,
            sigma_u: thresholds.sigma_u.clone(),
            accept_rate: if unlabeled_ids.is_empty() { 0.0 } else { accepted as f64 / unlabeled_ids.len() as f64 },
            eval: eval.clone(),
            batches,
        };
        observer(&entry);
        record.epochs.push(entry);
        if last {
            record.final_eval = eval;
        }
    }

    Ok(TrainOutput { params, subspaces, thresholds, mode, record })
}

/// Class probabilities for one sample with missing modalities handled per
/// `mode`.
pub fn predict_sample(
    params: &ModelParams,
    sample: &MultimodalSample,
    mode: ReconstructionMode,
    subspaces: &[PcaSubspace],
) -> Result<Vec<f64>> {
    let f = params.shape.feature_dim;
    let order: Vec<usize> = (0..params.num_modalities()).collect();
    let mut z = match mode {
        ReconstructionMode::ZeroFill => {
            let filled: Views = sample
                .inputs
                .iter()
                .enumerate()
                .map(|(m, x)| Some(x.clone().unwrap_or_else(|| vec![0.0; params.shape.dims[m]])))
                .collect();
            encode(params, &filled)?
        }
        _ => encode(params, &sample.inputs)?,
    };
    if mode == ReconstructionMode::SubspaceMap && z.iter().any(Option::is_none) {
        if subspaces.len() != z.len() {
            return Err(config_err!("subspace_map evaluation needs fitted subspaces"));
        }
        let recovered: Vec<Option<Vec<f64>>> = (0..z.len())
            .map(|m| match z[m] {
                Some(_) => Ok(None),
                None => recover(&z, m, &params.mapping.w[m], subspaces).map(Some),
            })
            .collect::<Result<_>>()?;
        for (slot, r) in z.iter_mut().zip(recovered) {
            if r.is_some() {
                *slot = r;
            }
        }
    }
    zero_fill(&mut z, f);
    predict(&params.classifier, &fuse(&z, &order)?)
}

/// Test-set metrics; every test sample must carry a label.
pub fn evaluate(
    params: &ModelParams,
    test: &Dataset,
    mode: ReconstructionMode,
    subspaces: &[PcaSubspace],
) -> Result<Metrics> {
    let mut predicted = Vec::with_capacity(test.len());
    let mut truth = Vec::with_capacity(test.len());
    for s in test.samples() {
        let label = s.label.ok_or_else(|| config_err!("test sample {} has no label", s.id))?;
        predicted.push(argmax(&predict_sample(params, s, mode, subspaces)?));
        truth.push(label);
    }
    Metrics::from_predictions(&predicted, &truth, test.num_classes())
}
