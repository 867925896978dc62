//! Missing-modality recovery in feature space.
//!
//! Each modality's labeled features are summarized by a `K`-dimensional
//! principal subspace `μᵐ + span(Vᵐ)`. A missing feature is recovered from
//! the available ones through the trainable map `Wᵐ`:
//!
//! ```text
//! ẑᵐ = (1/|A|) · Σ_{m'∈A} (z^{m'} − μ^{m'}) · Wᵐ · (Vᵐ)ᵀ + μᵐ
//! ```
//!
//! With uncentered subspaces (`pca_center = false`) all means are zero and
//! this is the plain averaged linear map. Subspaces are constants between
//! refits, so no gradient reaches `V` or `μ`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::datagen::MultimodalSample;
use crate::error::{config_err, Error, Result};
use crate::model::{encode, ModelParams};
use crate::numeric::{pca_fit, Matrix, Pca, Rng};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionMode {
    /// Missing feature slots are zeros.
    None,
    /// Missing raw inputs are zeros and go through the encoder.
    ZeroFill,
    /// Missing features are recovered through the principal subspaces.
    #[default]
    SubspaceMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub k: usize,
    /// Weight of the prediction-consistency term.
    pub lambda_r: f64,
    /// Refit the subspaces every `refresh` epochs.
    pub refresh: usize,
    pub mode: ReconstructionMode,
    pub pca_center: bool,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self { k: 4, lambda_r: 0.1, refresh: 1, mode: ReconstructionMode::SubspaceMap, pca_center: true }
    }
}

impl ReconstructConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.refresh == 0 || self.lambda_r < 0.0 {
            return Err(config_err!("reconstruct needs k >= 1, refresh >= 1 and lambda_r >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSubspace {
    pub modality: usize,
    pub pca: Pca,
    pub fitted_on: usize,
}

impl PcaSubspace {
    pub fn mean(&self) -> &[f64] {
        &self.pca.mean
    }

    pub fn components(&self) -> &Matrix {
        &self.pca.components
    }
}

/// Encodes the modality-complete `samples` with the current encoders and
/// fits a `k`-component subspace per modality.
pub fn fit_subspaces(
    params: &ModelParams,
    samples: &[&MultimodalSample],
    cfg: &ReconstructConfig,
) -> Result<Vec<PcaSubspace>> {
    if samples.len() < cfg.k {
        return Err(config_err!("need at least k = {} labeled samples to fit subspaces, got {}", cfg.k, samples.len()));
    }
    let m_count = params.num_modalities();
    let f = params.shape.feature_dim;
    let mut per_modality: Vec<Vec<f64>> = vec![Vec::with_capacity(samples.len() * f); m_count];
    for s in samples {
        if !s.is_complete() {
            return Err(config_err!("sample {} is not modality-complete", s.id));
        }
        let z = encode(params, &s.inputs)?;
        for (buf, zm) in per_modality.iter_mut().zip(z) {
            buf.extend(zm.expect("complete sample"));
        }
    }
    per_modality
        .into_iter()
        .enumerate()
        .map(|(m, data)| {
            let feats = Matrix::from_vec(samples.len(), f, data)?;
            Ok(PcaSubspace { modality: m, pca: pca_fit(&feats, cfg.k, cfg.pca_center)?, fitted_on: samples.len() })
        })
        .collect()
}

/// Recovers `ẑᵐ` for one sample from its available features.
pub fn recover(
    features: &[Option<Vec<f64>>],
    target: usize,
    w: &Matrix,
    subspaces: &[PcaSubspace],
) -> Result<Vec<f64>> {
    let f = w.rows();
    let sources: Vec<usize> =
        (0..features.len()).filter(|&m| m != target && features[m].is_some()).collect();
    if sources.is_empty() {
        return Err(Error::Contract(alloc::format!("no source modality to recover modality {target}")));
    }
    let mut acc = vec![0.0; f];
    for &m in &sources {
        let z = features[m].as_ref().expect("source");
        for ((a, &zi), &mu) in acc.iter_mut().zip(z).zip(subspaces[m].mean()) {
            *a += zi - mu;
        }
    }
    let inv = 1.0 / sources.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    let coords = Matrix::row_vector(&acc).matmul(w)?;
    let sub = &subspaces[target];
    let back = coords.matmul_t(sub.components())?;
    Ok(back.data().iter().zip(sub.mean()).map(|(b, m)| b + m).collect())
}

/// Batched recovery on the tape.
///
/// `sources[m']` is the `n × F` feature batch of modality `m'` (or `None`
/// when not computed) and `available[m'][i]` tells whether row `i` may use
/// it. Rows without any source come out as `μᵐ`.
pub fn recover_node(
    tape: &mut Tape,
    sources: &[Option<Var>],
    available: &[Vec<bool>],
    target: usize,
    w: Var,
    subspaces: &[PcaSubspace],
) -> Result<Var> {
    let n = available.first().map_or(0, Vec::len);
    let counts: Vec<usize> = (0..n)
        .map(|i| (0..sources.len()).filter(|&m| m != target && sources[m].is_some() && available[m][i]).count())
        .collect();
    let mut sum: Option<Var> = None;
    for (m, src) in sources.iter().enumerate() {
        let Some(z) = *src else { continue };
        if m == target {
            continue;
        }
        let neg_mu: Vec<f64> = subspaces[m].mean().iter().map(|v| -v).collect();
        let neg_mu = tape.constant(Matrix::row_vector(&neg_mu));
        let centered = tape.add_row(z, neg_mu)?;
        let weights = (0..n)
            .map(|i| if available[m][i] && counts[i] > 0 { 1.0 / counts[i] as f64 } else { 0.0 })
            .collect();
        let part = tape.row_scale(centered, weights)?;
        sum = Some(match sum {
            Some(s) => tape.add(s, part)?,
            None => part,
        });
    }
    let sum = sum.ok_or_else(|| Error::Contract(alloc::format!("no source modality to recover modality {target}")))?;
    let coords = tape.matmul(sum, w)?;
    let sub = &subspaces[target];
    let vt = tape.constant(sub.components().transpose());
    let back = tape.matmul(coords, vt)?;
    let mu = tape.constant(Matrix::row_vector(sub.mean()));
    tape.add_row(back, mu)
}

/// `(1/n) Σᵢ [‖ẑᵢ − zᵢ‖² + λ_r · H(pᵢ^true, pᵢ^rec)]` with soft
/// cross-entropy `H(t, p) = −Σ t ln p`.
pub fn loss_recover(
    true_z: &[Vec<f64>],
    recovered: &[Vec<f64>],
    probs_recovered: &[Vec<f64>],
    probs_true: &[Vec<f64>],
    lambda_r: f64,
) -> f64 {
    let n = true_z.len();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = (0..n)
        .map(|i| {
            let mse: f64 = true_z[i].iter().zip(&recovered[i]).map(|(a, b)| (b - a) * (b - a)).sum();
            let ce: f64 = probs_true[i]
                .iter()
                .zip(&probs_recovered[i])
                .map(|(&t, &p)| if t == 0.0 { 0.0 } else { -t * libm::log(p) })
                .sum();
            mse + lambda_r * ce
        })
        .sum();
    total / n as f64
}

/// Tape version of [`loss_recover`]. `true_z` and `target_probs` are treated
/// as constants; gradient flows through `recovered` and `logits_recovered`.
pub fn recover_loss_node(
    tape: &mut Tape,
    recovered: Var,
    true_z: Var,
    logits_recovered: Var,
    target_probs: Matrix,
    lambda_r: f64,
) -> Result<Var> {
    let n = tape.value(recovered).rows();
    if n == 0 {
        return Err(config_err!("reconstruction loss on an empty batch"));
    }
    let inv = 1.0 / n as f64;
    let target = tape.detach(true_z);
    let diff = tape.sub(recovered, target)?;
    let mse = tape.sum_sq(diff, vec![inv; n])?;
    if lambda_r == 0.0 {
        return Ok(mse);
    }
    let ce = tape.softmax_xent(logits_recovered, target_probs, vec![inv; n])?;
    tape.weighted_sum(&[(mse, 1.0), (ce, lambda_r)])
}

/// Modality to hide on a labeled batch: uniform among modalities with a
/// positive configured missing rate, or among all when none is configured.
/// `None` when there is a single modality (reconstruction disabled).
pub fn choose_hidden_modality(missing_rates: &[f64], rng: &mut Rng) -> Option<usize> {
    if missing_rates.len() < 2 {
        return None;
    }
    let configured: Vec<usize> = (0..missing_rates.len()).filter(|&m| missing_rates[m] > 0.0).collect();
    if configured.is_empty() {
        Some(rng.below(missing_rates.len()))
    } else {
        Some(configured[rng.below(configured.len())])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference, max_relative_error};
    use crate::model::ModelShape;
    use crate::numeric::softmax;

    fn gaussian(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
    }

    fn subspace(m: usize, feats: &Matrix, k: usize, center: bool) -> PcaSubspace {
        PcaSubspace { modality: m, pca: pca_fit(feats, k, center).unwrap(), fitted_on: feats.rows() }
    }

    #[test]
    fn zero_map_recovers_mean() {
        let mut rng = Rng::new(0);
        let a = gaussian(&mut rng, 20, 5);
        let b = gaussian(&mut rng, 20, 5);
        let subs = vec![subspace(0, &a, 2, true), subspace(1, &b, 2, true)];
        let z = vec![None, Some(b.row(0).to_vec())];
        let r = recover(&z, 0, &Matrix::zeros(5, 2), &subs).unwrap();
        assert_eq!(r, subs[0].mean().to_vec());
        assert!(matches!(recover(&[None, None], 0, &Matrix::zeros(5, 2), &subs), Err(Error::Contract(_))));
    }

    #[test]
    fn single_source_formula() {
        let mut rng = Rng::new(1);
        let a = gaussian(&mut rng, 20, 4);
        let b = gaussian(&mut rng, 20, 4);
        let subs = vec![subspace(0, &a, 2, true), subspace(1, &b, 2, true)];
        let w = gaussian(&mut rng, 4, 2);
        let src = b.row(3).to_vec();
        let r = recover(&[None, Some(src.clone())], 0, &w, &subs).unwrap();
        let centered: Vec<f64> = src.iter().zip(subs[1].mean()).map(|(x, m)| x - m).collect();
        let expect = subs[0]
            .pca
            .back_project(&Matrix::row_vector(&centered).matmul(&w).unwrap())
            .unwrap();
        for (x, y) in r.iter().zip(expect.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    /// Features that are exact linear images of shared `K`-dim coordinates
    /// are recovered exactly by the matching `W`.
    #[test]
    fn linear_relation_recovered_exactly() {
        let mut rng = Rng::new(2);
        let k = 3;
        let latent = gaussian(&mut rng, 30, k);
        let basis_a = pca_fit(&gaussian(&mut rng, 10, 6), k, false).unwrap().components; // 6×3 orthonormal
        let basis_b = pca_fit(&gaussian(&mut rng, 10, 6), k, false).unwrap().components;
        let rel = gaussian(&mut rng, k, k);
        let zb = latent.matmul_t(&basis_b).unwrap();
        let za = latent.matmul(&rel).unwrap().matmul_t(&basis_a).unwrap();
        let subs = vec![subspace(0, &za, k, false), subspace(1, &zb, k, false)];
        // W = V_b · R · (V_aᵀ · V_a_fit) maps b-features into fitted a-coordinates.
        let w = basis_b
            .matmul(&rel)
            .unwrap()
            .matmul(&basis_a.t_matmul(subs[0].components()).unwrap())
            .unwrap();
        for i in 0..30 {
            let r = recover(&[None, Some(zb.row(i).to_vec())], 0, &w, &subs).unwrap();
            for (x, y) in r.iter().zip(za.row(i)) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn node_matches_plain_and_stays_in_subspace() {
        let mut rng = Rng::new(3);
        let f = 5;
        let feats: Vec<Matrix> = (0..3).map(|_| gaussian(&mut rng, 12, f)).collect();
        let subs: Vec<PcaSubspace> = feats.iter().enumerate().map(|(m, z)| subspace(m, z, 2, true)).collect();
        let w = gaussian(&mut rng, f, 2);
        let avail = vec![vec![true; 4], vec![true, false, true, true], vec![false, true, true, false]];
        let mut tape = Tape::new();
        let srcs: Vec<Option<Var>> = feats.iter().map(|z| Some(tape.constant(z.select_rows(&[0, 1, 2, 3])))).collect();
        let wv = tape.param(w.clone());
        let out = recover_node(&mut tape, &srcs, &avail, 0, wv, &subs).unwrap();
        for i in 0..4 {
            let slots: Vec<Option<Vec<f64>>> =
                (0..3).map(|m| (m == 0 || avail[m][i]).then(|| feats[m].row(i).to_vec())).collect();
            let plain = recover(&slots, 0, &w, &subs).unwrap();
            let row = tape.value(out).row(i);
            for (a, b) in plain.iter().zip(row) {
                assert!((a - b).abs() < 1e-12);
            }
            // Re-projection residual.
            let single = Matrix::row_vector(row);
            let re = subs[0].pca.back_project(&subs[0].pca.project(&single).unwrap()).unwrap();
            assert!(re.sub(&single).unwrap().max_abs() <= 1e-8);
        }
    }

    #[test]
    fn loss_examples() {
        let z = vec![vec![0.5; 32]];
        let zp = vec![vec![1.5; 32]];
        let p = vec![vec![0.7, 0.3]];
        assert!((loss_recover(&z, &zp, &p, &p, 0.0) - 32.0).abs() < 1e-12);
        let ent = -(0.7 * libm::log(0.7) + 0.3 * libm::log(0.3));
        assert!((loss_recover(&z, &z, &p, &p, 0.1) - 0.1 * ent).abs() < 1e-12);
    }

    #[test]
    fn node_loss_matches_plain_and_fd() {
        let mut rng = Rng::new(4);
        let shape = ModelShape { dims: vec![2, 2], num_classes: 2, hidden: 3, feature_dim: 3, k: 2 };
        let params = ModelParams::init(shape, 1).unwrap();
        let feats_b = gaussian(&mut rng, 6, 3);
        let feats_a = gaussian(&mut rng, 6, 3);
        let subs = vec![subspace(0, &feats_a, 2, true), subspace(1, &feats_b, 2, true)];
        let avail = vec![vec![true; 6], vec![true; 6]];
        let targets: Vec<Vec<f64>> = (0..6).map(|_| softmax(&[rng.normal(), rng.normal()]).unwrap()).collect();
        let target_m = Matrix::from_rows(&targets).unwrap();
        let build = |w: &Matrix| {
            let mut t = Tape::new();
            let wv = t.param(w.clone());
            let za = t.constant(feats_a.clone());
            let zb = t.constant(feats_b.clone());
            let rec = recover_node(&mut t, &[None, Some(zb)], &avail, 0, wv, &subs).unwrap();
            let fused = t.concat_cols(&[rec, zb]).unwrap();
            let pv = crate::model::bind(&mut t, &params);
            let logits = pv.logits(&mut t, fused).unwrap();
            let loss = recover_loss_node(&mut t, rec, za, logits, target_m.clone(), 0.1).unwrap();
            (t, wv, rec, logits, loss)
        };
        let w = gaussian(&mut rng, 3, 2);
        let (t, wv, rec, logits, loss) = build(&w);
        let recovered: Vec<Vec<f64>> = (0..6).map(|i| t.value(rec).row(i).to_vec()).collect();
        let probs: Vec<Vec<f64>> = (0..6).map(|i| softmax(t.value(logits).row(i)).unwrap()).collect();
        let truth: Vec<Vec<f64>> = (0..6).map(|i| feats_a.row(i).to_vec()).collect();
        let plain = loss_recover(&truth, &recovered, &probs, &targets, 0.1);
        assert!((t.scalar(loss) - plain).abs() < 1e-12);
        let g = t.backward(loss).unwrap();
        let fd = finite_difference(&w, 1e-5, |p| {
            let (t, .., l) = build(p);
            t.scalar(l)
        });
        assert!(max_relative_error(g.get(wv).unwrap(), &fd) < 1e-4);
    }

    #[test]
    fn hidden_modality_schedule() {
        let mut rng = Rng::new(5);
        assert_eq!(choose_hidden_modality(&[0.0], &mut rng), None);
        assert!((0..50).all(|_| choose_hidden_modality(&[0.0, 0.9, 0.0], &mut rng) == Some(1)));
        let draws = 10_000;
        let ones = (0..draws).filter(|_| choose_hidden_modality(&[0.3, 0.0, 0.6], &mut rng) == Some(0)).count();
        assert!((ones as f64 / draws as f64 - 0.5).abs() < 0.02);
        assert!((0..100).all(|_| choose_hidden_modality(&[0.0, 0.0], &mut rng).unwrap() < 2));
    }
}
