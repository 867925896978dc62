//! Trainable parameters: a two-layer dense encoder per modality, a
//! two-layer classifier over the concatenated features and one `F × K`
//! mapping matrix per modality, plus Adam.
//!
//! The plain functions ([`encode`], [`fuse`], [`predict`]) evaluate single
//! samples directly. Training goes through [`bind`], which records the
//! parameters on an autodiff tape and exposes batched forward passes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Grads, Tape, Var};
use crate::error::{config_err, Error, Result};
use crate::numeric::{softmax_unchecked, Matrix, Rng};

/// Shapes of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub dims: Vec<usize>,
    pub num_classes: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    /// Principal components per modality (columns of each mapping matrix).
    pub k: usize,
}

/// `x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Affine {
    fn glorot(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let data = (0..fan_in * fan_out).map(|_| rng.uniform_in(-a, a)).collect();
        Self {
            weight: Matrix::from_vec(fan_in, fan_out, data).expect("shape"),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Matrix::zeros(fan_in, fan_out), bias: Matrix::zeros(1, fan_out) }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.data().to_vec();
        for (i, &xi) in x.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(self.weight.row(i)) {
                *o += xi * w;
            }
        }
        out
    }
}

fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// `affine₂(relu(affine₁(x)))`, `d_m → H → F`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub l1: Affine,
    pub l2: Affine,
}

/// `affine₂(relu(affine₁(fused)))`, `M·F → H → C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub l1: Affine,
    pub l2: Affine,
}

/// One `F × K` matrix per target modality.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingParams {
    pub w: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub encoders: Vec<EncoderParams>,
    pub classifier: ClassifierParams,
    pub mapping: MappingParams,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, zero mapping matrices.
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self> {
        if shape.dims.is_empty() || shape.dims.contains(&0) {
            return Err(config_err!("model needs positive modality dims"));
        }
        if shape.hidden == 0 || shape.feature_dim == 0 || shape.num_classes < 2 || shape.k == 0 {
            return Err(config_err!("hidden, feature_dim and k must be positive and num_classes >= 2"));
        }
        if shape.k > shape.feature_dim {
            return Err(config_err!("k = {} exceeds feature_dim = {}", shape.k, shape.feature_dim));
        }
        let mut rng = Rng::derive(seed, 0x6d6f_64656c);
        let (h, f) = (shape.hidden, shape.feature_dim);
        let encoders = shape
            .dims
            .iter()
            .map(|&d| EncoderParams { l1: Affine::glorot(d, h, &mut rng), l2: Affine::glorot(h, f, &mut rng) })
            .collect();
        let m = shape.dims.len();
        let classifier = ClassifierParams {
            l1: Affine::glorot(m * f, h, &mut rng),
            l2: Affine::glorot(h, shape.num_classes, &mut rng),
        };
        let mapping = MappingParams { w: (0..m).map(|_| Matrix::zeros(f, shape.k)).collect() };
        Ok(Self { shape, encoders, classifier, mapping })
    }

    /// All-zero parameters of the given shape.
    pub fn zeros(shape: ModelShape) -> Self {
        let (h, f) = (shape.hidden, shape.feature_dim);
        let m = shape.dims.len();
        Self {
            encoders: shape
                .dims
                .iter()
                .map(|&d| EncoderParams { l1: Affine::zeros(d, h), l2: Affine::zeros(h, f) })
                .collect(),
            classifier: ClassifierParams { l1: Affine::zeros(m * f, h), l2: Affine::zeros(h, shape.num_classes) },
            mapping: MappingParams { w: (0..m).map(|_| Matrix::zeros(f, shape.k)).collect() },
            shape,
        }
    }

    pub fn num_modalities(&self) -> usize {
        self.encoders.len()
    }

    /// Tensors in canonical order with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (m, e) in self.encoders.iter().enumerate() {
            out.push((format!("encoder.{m}.l1.weight"), &e.l1.weight));
            out.push((format!("encoder.{m}.l1.bias"), &e.l1.bias));
            out.push((format!("encoder.{m}.l2.weight"), &e.l2.weight));
            out.push((format!("encoder.{m}.l2.bias"), &e.l2.bias));
        }
        let c = &self.classifier;
        out.push((String::from("classifier.l1.weight"), &c.l1.weight));
        out.push((String::from("classifier.l1.bias"), &c.l1.bias));
        out.push((String::from("classifier.l2.weight"), &c.l2.weight));
        out.push((String::from("classifier.l2.bias"), &c.l2.bias));
        for (m, w) in self.mapping.w.iter().enumerate() {
            out.push((format!("mapping.{m}"), w));
        }
        out
    }

    /// Mutable tensors, same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for e in &mut self.encoders {
            out.push(&mut e.l1.weight);
            out.push(&mut e.l1.bias);
            out.push(&mut e.l2.weight);
            out.push(&mut e.l2.bias);
        }
        let c = &mut self.classifier;
        out.push(&mut c.l1.weight);
        out.push(&mut c.l1.bias);
        out.push(&mut c.l2.weight);
        out.push(&mut c.l2.bias);
        out.extend(self.mapping.w.iter_mut());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.data().len()).sum()
    }

    /// Rebuilds parameters from named tensors; every canonical name must be
    /// present with the expected shape.
    pub fn from_named_tensors(shape: ModelShape, tensors: &[(String, Matrix)]) -> Result<Self> {
        let mut params = Self::zeros(shape);
        let names: Vec<(String, (usize, usize))> =
            params.named_tensors().into_iter().map(|(n, t)| (n, t.shape())).collect();
        for ((name, expected), slot) in names.into_iter().zip(params.tensors_mut()) {
            let (_, t) = tensors
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| config_err!("missing tensor {name}"))?;
            if t.shape() != expected {
                return Err(config_err!("tensor {name} has shape {:?}, expected {expected:?}", t.shape()));
            }
            *slot = t.clone();
        }
        Ok(params)
    }
}

/// Per-modality features `zᵐ`; missing modalities yield `None`.
pub fn encode(params: &ModelParams, x: &[Option<Vec<f64>>]) -> Result<Vec<Option<Vec<f64>>>> {
    if x.len() != params.encoders.len() {
        return Err(config_err!("got {} modality slots, model has {}", x.len(), params.encoders.len()));
    }
    x.iter()
        .zip(&params.encoders)
        .enumerate()
        .map(|(m, (xm, enc))| {
            xm.as_ref()
                .map(|v| {
                    if v.len() != params.shape.dims[m] {
                        return Err(config_err!(
                            "modality {m} input has length {}, expected {}",
                            v.len(),
                            params.shape.dims[m]
                        ));
                    }
                    let mut h = enc.l1.apply(v);
                    relu(&mut h);
                    Ok(enc.l2.apply(&h))
                })
                .transpose()
        })
        .collect()
}

/// Concatenates feature slots in `order`; every slot must be filled.
pub fn fuse(features: &[Option<Vec<f64>>], order: &[usize]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for &m in order {
        let z = features
            .get(m)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Contract(format!("feature slot {m} is empty")))?;
        out.extend_from_slice(z);
    }
    Ok(out)
}

/// Class probabilities for one fused vector.
pub fn predict(classifier: &ClassifierParams, fused: &[f64]) -> Result<Vec<f64>> {
    if fused.len() != classifier.l1.weight.rows() {
        return Err(config_err!(
            "fused length {} does not match classifier input {}",
            fused.len(),
            classifier.l1.weight.rows()
        ));
    }
    let mut h = classifier.l1.apply(fused);
    relu(&mut h);
    Ok(softmax_unchecked(&classifier.l2.apply(&h)))
}

#[derive(Debug, Clone, Copy)]
pub struct AffineVars {
    pub weight: Var,
    pub bias: Var,
}

/// Parameter handles on a tape, same layout as [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub encoders: Vec<[AffineVars; 2]>,
    pub classifier: [AffineVars; 2],
    pub mapping: Vec<Var>,
}

/// Records every parameter as a trainable leaf.
pub fn bind(tape: &mut Tape, params: &ModelParams) -> ParamVars {
    let mut aff = |a: &Affine| AffineVars { weight: tape.param(a.weight.clone()), bias: tape.param(a.bias.clone()) };
    let encoders = params.encoders.iter().map(|e| [aff(&e.l1), aff(&e.l2)]).collect();
    let classifier = [aff(&params.classifier.l1), aff(&params.classifier.l2)];
    let mapping = params.mapping.w.iter().map(|w| tape.param(w.clone())).collect();
    ParamVars { encoders, classifier, mapping }
}

fn affine(tape: &mut Tape, x: Var, a: AffineVars) -> Result<Var> {
    let xw = tape.matmul(x, a.weight)?;
    tape.add_row(xw, a.bias)
}

fn two_layer(tape: &mut Tape, x: Var, layers: [AffineVars; 2]) -> Result<Var> {
    let h = affine(tape, x, layers[0])?;
    let h = tape.relu(h);
    affine(tape, h, layers[1])
}

impl ParamVars {
    /// Encodes a batch of modality-`m` inputs (`n × d_m`) into `n × F`.
    pub fn encode_batch(&self, tape: &mut Tape, m: usize, x: Var) -> Result<Var> {
        two_layer(tape, x, self.encoders[m])
    }

    /// Classifier logits for a fused batch (`n × M·F`).
    pub fn logits(&self, tape: &mut Tape, fused: Var) -> Result<Var> {
        two_layer(tape, fused, self.classifier)
    }

    /// Gradients in [`ModelParams::tensors_mut`] order; untouched parameters
    /// get zeros.
    pub fn collect_grads(&self, grads: &Grads, params: &ModelParams) -> Vec<Matrix> {
        let mut vars = Vec::new();
        for e in &self.encoders {
            for a in e {
                vars.push(a.weight);
                vars.push(a.bias);
            }
        }
        for a in &self.classifier {
            vars.push(a.weight);
            vars.push(a.bias);
        }
        vars.extend(self.mapping.iter().copied());
        vars.iter()
            .zip(params.named_tensors())
            .map(|(&v, (_, t))| grads.get_or_zeros(v, t.shape()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam moments for a fixed list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<Matrix>,
    pub second: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect::<Vec<_>>();
        Self { config, first: zeros(), second: zeros(), step: 0 }
    }

    pub fn for_model(config: AdamConfig, params: &ModelParams) -> Self {
        let shapes: Vec<_> = params.named_tensors().iter().map(|(_, t)| t.shape()).collect();
        Self::new(config, &shapes)
    }

    /// One update of every tensor in `params` with the matching `grads`.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Contract(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Contract(format!(
                    "adam shape mismatch: param {:?}, grad {:?}, moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(beta1, t as f64);
        let bc2 = 1.0 - libm::pow(beta2, t as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for (((pi, &gi), mi), vi) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }

    /// Updates all model tensors.
    pub fn step_model(&mut self, params: &mut ModelParams, grads: &[Matrix]) -> Result<()> {
        let mut tensors = params.tensors_mut();
        self.step(&mut tensors, grads)
    }
}

/// Fills missing modality features with zeros.
pub fn zero_fill(features: &mut [Option<Vec<f64>>], feature_dim: usize) {
    for z in features.iter_mut().filter(|z| z.is_none()) {
        *z = Some(vec![0.0; feature_dim]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference, max_relative_error};

    fn shape() -> ModelShape {
        ModelShape { dims: vec![3, 2], num_classes: 2, hidden: 4, feature_dim: 3, k: 2 }
    }

    /// Layer-by-layer re-evaluation with explicit loops.
    fn oracle_affine(a: &Affine, x: &[f64]) -> Vec<f64> {
        (0..a.weight.cols())
            .map(|j| a.bias[(0, j)] + (0..x.len()).map(|i| x[i] * a.weight[(i, j)]).sum::<f64>())
            .collect()
    }

    #[test]
    fn zero_params_encode_to_zero_and_predict_uniform() {
        let p = ModelParams::zeros(shape());
        let z = encode(&p, &[Some(vec![1.0, 2.0, 3.0]), Some(vec![4.0, 5.0])]).unwrap();
        assert!(z.iter().all(|v| v.as_ref().unwrap().iter().all(|&e| e == 0.0)));
        let probs = predict(&p.classifier, &[0.0; 6]).unwrap();
        assert_eq!(probs, vec![0.5, 0.5]);
    }

    #[test]
    fn identity_first_layer_gives_relu() {
        let s = ModelShape { dims: vec![3], num_classes: 2, hidden: 3, feature_dim: 3, k: 1 };
        let mut p = ModelParams::zeros(s);
        p.encoders[0].l1.weight = Matrix::identity(3);
        p.encoders[0].l2.weight = Matrix::identity(3);
        let z = encode(&p, &[Some(vec![-1.0, 0.5, 2.0])]).unwrap();
        assert_eq!(z[0].as_ref().unwrap(), &vec![0.0, 0.5, 2.0]);
    }

    #[test]
    fn encode_matches_layer_oracle() {
        let p = ModelParams::init(shape(), 3).unwrap();
        let x = vec![Some(vec![0.3, -1.2, 2.0]), None];
        let z = encode(&p, &x).unwrap();
        assert!(z[1].is_none());
        let e = &p.encoders[0];
        let h: Vec<f64> = oracle_affine(&e.l1, x[0].as_ref().unwrap()).into_iter().map(|v| v.max(0.0)).collect();
        let expect = oracle_affine(&e.l2, &h);
        for (a, b) in z[0].as_ref().unwrap().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(encode(&p, &[Some(vec![1.0]), None]).is_err());
    }

    #[test]
    fn fuse_layouts() {
        let z = vec![Some(vec![1.0, 2.0]), Some(vec![3.0])];
        assert_eq!(fuse(&z[..1], &[0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(fuse(&z, &[0, 1]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(fuse(&z, &[1, 0]).unwrap(), vec![3.0, 1.0, 2.0]);
        assert!(matches!(fuse(&[Some(vec![1.0]), None], &[0, 1]), Err(Error::Contract(_))));
    }

    #[test]
    fn predict_constructed_logits() {
        let s = ModelShape { dims: vec![1], num_classes: 2, hidden: 1, feature_dim: 1, k: 1 };
        let mut p = ModelParams::zeros(s);
        p.classifier.l2.bias = Matrix::row_vector(&[libm::log(3.0), 0.0]);
        let probs = predict(&p.classifier, &[0.0]).unwrap();
        assert!((probs[0] - 0.75).abs() < 1e-12 && (probs[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn batched_forward_matches_plain() {
        let p = ModelParams::init(shape(), 9).unwrap();
        let mut rng = Rng::new(1);
        let rows: Vec<[Vec<f64>; 2]> = (0..5)
            .map(|_| [(0..3).map(|_| rng.normal()).collect(), (0..2).map(|_| rng.normal()).collect()])
            .collect();
        let mut t = Tape::new();
        let pv = bind(&mut t, &p);
        let mut parts = Vec::new();
        for m in 0..2 {
            let x = Matrix::from_rows(&rows.iter().map(|r| r[m].clone()).collect::<Vec<_>>()).unwrap();
            let xv = t.constant(x);
            parts.push(pv.encode_batch(&mut t, m, xv).unwrap());
        }
        let fused = t.concat_cols(&parts).unwrap();
        let logits = pv.logits(&mut t, fused).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let z = encode(&p, &[Some(r[0].clone()), Some(r[1].clone())]).unwrap();
            let probs = predict(&p.classifier, &fuse(&z, &[0, 1]).unwrap()).unwrap();
            let tape_probs = softmax_unchecked(t.value(logits).row(i));
            for (a, b) in probs.iter().zip(&tape_probs) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn end_to_end_gradient_matches_fd() {
        let p = ModelParams::init(shape(), 4).unwrap();
        let x0 = Matrix::from_rows(&[vec![0.5, -0.2, 1.0], vec![-1.0, 0.3, 0.2]]).unwrap();
        let x1 = Matrix::from_rows(&[vec![0.1, 0.9], vec![1.5, -0.4]]).unwrap();
        let targets = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let loss_of = |p: &ModelParams| {
            let mut t = Tape::new();
            let pv = bind(&mut t, p);
            let a = t.constant(x0.clone());
            let b = t.constant(x1.clone());
            let za = pv.encode_batch(&mut t, 0, a).unwrap();
            let zb = pv.encode_batch(&mut t, 1, b).unwrap();
            let f = t.concat_cols(&[za, zb]).unwrap();
            let l = pv.logits(&mut t, f).unwrap();
            let loss = t.softmax_xent(l, targets.clone(), vec![0.5, 0.5]).unwrap();
            (t, pv, loss)
        };
        let (t, pv, loss) = loss_of(&p);
        let grads = pv.collect_grads(&t.backward(loss).unwrap(), &p);
        let n = p.named_tensors().len();
        for k in 0..n {
            let base = p.named_tensors()[k].1.clone();
            let fd = finite_difference(&base, 1e-5, |probe| {
                let mut q = p.clone();
                *q.tensors_mut()[k] = probe.clone();
                let (t, _, l) = loss_of(&q);
                t.scalar(l)
            });
            assert!(max_relative_error(&grads[k], &fd) < 1e-6, "tensor {k}");
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut w = Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let mut st = AdamState::new(AdamConfig::default(), &[(1, 2)]);
        st.step(&mut [&mut w], &[Matrix::zeros(1, 2)]).unwrap();
        assert_eq!(w.data(), &[1.0, -2.0]);
        assert_eq!(st.step, 1);

        st.first[0] = Matrix::row_vector(&[0.5, 0.5]);
        st.second[0] = Matrix::row_vector(&[2.0, 2.0]);
        st.step(&mut [&mut w], &[Matrix::zeros(1, 2)]).unwrap();
        assert_eq!(st.first[0].data(), &[0.9 * 0.5, 0.9 * 0.5]);
        assert_eq!(st.second[0].data(), &[0.999 * 2.0, 0.999 * 2.0]);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        let mut w = Matrix::row_vector(&[1.0, 1.0, 1.0]);
        let g = Matrix::row_vector(&[3.0, -0.5, 1e-3]);
        let mut st = AdamState::new(cfg, &[(1, 3)]);
        st.step(&mut [&mut w], core::slice::from_ref(&g)).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps).
        for (wi, &gi) in w.data().iter().zip(g.data()) {
            let expect = 1.0 - 0.01 * gi / (gi.abs() + 1e-8);
            assert!((wi - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_shape_mismatch_is_contract_violation() {
        let mut w = Matrix::zeros(2, 2);
        let mut st = AdamState::new(AdamConfig::default(), &[(2, 2)]);
        assert!(matches!(st.step(&mut [&mut w], &[Matrix::zeros(1, 2)]), Err(Error::Contract(_))));
    }

    #[test]
    fn named_tensor_round_trip() {
        let p = ModelParams::init(shape(), 2).unwrap();
        let named: Vec<(String, Matrix)> = p.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
        let q = ModelParams::from_named_tensors(p.shape.clone(), &named).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.parameter_count(), ModelParams::init(shape(), 99).unwrap().parameter_count());
    }
}
