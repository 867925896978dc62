//! Reverse-mode differentiation over a recorded tape.
//!
//! Only the operations the training losses compose are supported. Values are
//! recorded eagerly; [`Tape::backward`] walks the tape once in reverse.
//! Constants (including detached copies of recorded values) never receive
//! gradient.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numeric::{self, Matrix, COSINE_EPS};

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a (n×c) + bias (1×c)` broadcast over rows.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    /// Row `i` multiplied by `w[i]`.
    RowScale(Var, Vec<f64>),
    Relu(Var),
    ConcatCols(Vec<Var>),
    /// Row `i` from `a` when `mask[i]`, else from `b`.
    Select(Var, Var, Vec<bool>),
    /// `Σᵢ wᵢ Σ_c −t_ic ln softmax(zᵢ)_c`.
    SoftmaxXent { logits: Var, targets: Matrix, weights: Vec<f64> },
    /// `Σᵢ wᵢ Σⱼ a_ij²`.
    SumSq(Var, Vec<f64>),
    /// Row-wise cosine similarity, `n × 1`.
    RowCosine(Var, Var),
    /// `w Σ_{i∈anchors} [−sᵢ/T + ln Σ_{j∈{i}∪negᵢ} exp(s_j/T)]`.
    PairContrast { sims: Var, anchors: Vec<usize>, negatives: Vec<Vec<usize>>, inv_t: f64, weight: f64 },
    /// `Σ cₖ·xₖ` over `1 × 1` inputs.
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Gradients indexed by [`Var`].
pub struct Grads(Vec<Option<Matrix>>);

impl Grads {
    /// Gradient of `v`; `None` when `v` does not influence the loss or is a
    /// constant.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.0.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros of `shape` when absent.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Contract(alloc::format!("{what}: incompatible shapes {a:?} and {b:?}"))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A constant copy of `v` (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b)).map_err(|_| {
            shape_err("matmul", self.value(a).shape(), self.value(b).shape())
        })?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(shape_err("add_row", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(out, Op::AddRow(a, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .add(self.value(b))
            .map_err(|_| shape_err("add", self.value(a).shape(), self.value(b).shape()))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self
            .value(a)
            .sub(self.value(b))
            .map_err(|_| shape_err("sub", self.value(a).shape(), self.value(b).shape()))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn row_scale(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        let av = self.value(a);
        if weights.len() != av.rows() {
            return Err(shape_err("row_scale", av.shape(), (weights.len(), 1)));
        }
        let mut out = av.clone();
        for (i, &w) in weights.iter().enumerate() {
            out.row_mut(i).iter_mut().for_each(|v| *v *= w);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::RowScale(a, weights), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.value(p).rows()).unwrap_or(0);
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(shape_err("concat_cols", (rows, cols), v.shape()));
            }
            cols += v.cols();
        }
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                out.row_mut(i)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn select(&mut self, a: Var, b: Var, mask: Vec<bool>) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() || mask.len() != av.rows() {
            return Err(shape_err("select", av.shape(), bv.shape()));
        }
        let mut out = bv.clone();
        for (i, &take_a) in mask.iter().enumerate() {
            if take_a {
                out.row_mut(i).copy_from_slice(av.row(i));
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Select(a, b, mask), rg))
    }

    /// Weighted soft-target cross-entropy of row-wise softmax.
    pub fn softmax_xent(&mut self, logits: Var, targets: Matrix, weights: Vec<f64>) -> Result<Var> {
        let z = self.value(logits);
        if targets.shape() != z.shape() || weights.len() != z.rows() {
            return Err(shape_err("softmax_xent", z.shape(), targets.shape()));
        }
        let mut total = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let row = z.row(i);
            let lse = numeric::log_sum_exp(row);
            let ce: f64 = row.iter().zip(targets.row(i)).map(|(&zc, &t)| -t * (zc - lse)).sum();
            total += w * ce;
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(Matrix::scalar(total), Op::SoftmaxXent { logits, targets, weights }, rg))
    }

    /// Weighted row sums of squares.
    pub fn sum_sq(&mut self, a: Var, weights: Vec<f64>) -> Result<Var> {
        let av = self.value(a);
        if weights.len() != av.rows() {
            return Err(shape_err("sum_sq", av.shape(), (weights.len(), 1)));
        }
        let total = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| w * av.row(i).iter().map(|v| v * v).sum::<f64>())
            .sum();
        let rg = self.rg(&[a]);
        Ok(self.push(Matrix::scalar(total), Op::SumSq(a, weights), rg))
    }

    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("row_cosine", av.shape(), bv.shape()));
        }
        let sims: Vec<f64> = (0..av.rows()).map(|i| numeric::cosine(av.row(i), bv.row(i))).collect();
        let n = sims.len();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Matrix::from_vec(n, 1, sims)?, Op::RowCosine(a, b), rg))
    }

    /// Contrastive objective over per-pair similarities `sims` (`n × 1`).
    ///
    /// For anchor `i` the positive score is `exp(sᵢ/T)` and each negative
    /// `k ∈ negatives[i]` scores `exp(s_k/T)`; the result is
    /// `weight · Σᵢ −ln(posᵢ / (posᵢ + Σ_k neg_k))`.
    pub fn pair_contrast(
        &mut self,
        sims: Var,
        anchors: Vec<usize>,
        negatives: Vec<Vec<usize>>,
        temperature: f64,
        weight: f64,
    ) -> Result<Var> {
        let s = self.value(sims);
        if s.cols() != 1 || anchors.len() != negatives.len() {
            return Err(Error::Contract(String::from("pair_contrast expects n x 1 sims and one negative set per anchor")));
        }
        let n = s.rows();
        if anchors.iter().chain(negatives.iter().flatten()).any(|&i| i >= n) {
            return Err(Error::Contract(String::from("pair_contrast index out of range")));
        }
        let inv_t = 1.0 / temperature;
        let mut total = 0.0;
        let mut scores = Vec::new();
        for (&i, neg) in anchors.iter().zip(&negatives) {
            scores.clear();
            scores.push(s.data()[i] * inv_t);
            scores.extend(neg.iter().map(|&k| s.data()[k] * inv_t));
            total += numeric::log_sum_exp(&scores) - s.data()[i] * inv_t;
        }
        let rg = self.rg(&[sims]);
        Ok(self.push(
            Matrix::scalar(weight * total),
            Op::PairContrast { sims, anchors, negatives, inv_t, weight },
            rg,
        ))
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, c) in terms {
            let val = self.value(v);
            if val.shape() != (1, 1) {
                return Err(Error::Contract(String::from("weighted_sum takes scalars")));
            }
            total += c * val.data()[0];
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.rg(&vars);
        Ok(self.push(Matrix::scalar(total), Op::WeightedSum(terms.to_vec()), rg))
    }

    /// Gradients of the scalar `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(String::from("backward needs a scalar loss")));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        Ok(Grads(grads))
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, g.matmul_t(bv)?)?;
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, av.t_matmul(g)?)?;
                }
            }
            Op::AddRow(a, bias) => {
                self.accumulate(grads, *a, g.clone())?;
                if self.nodes[bias.0].requires_grad {
                    let mut gb = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (acc, &v) in gb.data_mut().iter_mut().zip(g.row(i)) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *bias, gb)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.scale(-1.0))?;
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s))?,
            Op::RowScale(a, w) => {
                let mut ga = g.clone();
                for (i, &wi) in w.iter().enumerate() {
                    ga.row_mut(i).iter_mut().for_each(|v| *v *= wi);
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let mut ga = g.clone();
                for (gv, &x) in ga.data_mut().iter_mut().zip(av.data()) {
                    if x <= 0.0 {
                        *gv = 0.0;
                    }
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = self.value(p).cols();
                    if self.nodes[p.0].requires_grad {
                        let mut gp = Matrix::zeros(g.rows(), cols);
                        for i in 0..g.rows() {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + cols]);
                        }
                        self.accumulate(grads, p, gp)?;
                    }
                    off += cols;
                }
            }
            Op::Select(a, b, mask) => {
                let mut ga = g.clone();
                let mut gb = g.clone();
                for (i, &take_a) in mask.iter().enumerate() {
                    let zero = if take_a { gb.row_mut(i) } else { ga.row_mut(i) };
                    zero.iter_mut().for_each(|v| *v = 0.0);
                }
                self.accumulate(grads, *a, ga)?;
                self.accumulate(grads, *b, gb)?;
            }
            Op::SoftmaxXent { logits, targets, weights } => {
                let gs = g.data()[0];
                let z = self.value(*logits);
                let mut gz = Matrix::zeros(z.rows(), z.cols());
                for (i, &w) in weights.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let p = numeric::softmax_unchecked(z.row(i));
                    let t = targets.row(i);
                    let tsum: f64 = t.iter().sum();
                    for (c, out) in gz.row_mut(i).iter_mut().enumerate() {
                        *out = gs * w * (p[c] * tsum - t[c]);
                    }
                }
                self.accumulate(grads, *logits, gz)?;
            }
            Op::SumSq(a, weights) => {
                let gs = g.data()[0];
                let av = self.value(*a);
                let mut ga = av.clone();
                for (i, &w) in weights.iter().enumerate() {
                    ga.row_mut(i).iter_mut().for_each(|v| *v *= 2.0 * w * gs);
                }
                self.accumulate(grads, *a, ga)?;
            }
            Op::RowCosine(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                for i in 0..av.rows() {
                    let (x, y) = (av.row(i), bv.row(i));
                    let gi = g.data()[i];
                    let (nx, ny) = (numeric::norm(x), numeric::norm(y));
                    let d = nx * ny + COSINE_EPS;
                    let xy = numeric::dot(x, y);
                    // s = xy / d, ∂d/∂x = ny·x/nx.
                    let cx = if nx > 0.0 { xy * ny / (nx * d * d) } else { 0.0 };
                    let cy = if ny > 0.0 { xy * nx / (ny * d * d) } else { 0.0 };
                    for j in 0..x.len() {
                        ga[(i, j)] = gi * (y[j] / d - cx * x[j]);
                        gb[(i, j)] = gi * (x[j] / d - cy * y[j]);
                    }
                }
                self.accumulate(grads, *a, ga)?;
                self.accumulate(grads, *b, gb)?;
            }
            Op::PairContrast { sims, anchors, negatives, inv_t, weight } => {
                let gs = g.data()[0] * weight;
                let s = self.value(*sims);
                let mut gsims = Matrix::zeros(s.rows(), 1);
                let mut group = Vec::new();
                let mut scores = Vec::new();
                for (&i, neg) in anchors.iter().zip(negatives) {
                    group.clear();
                    group.push(i);
                    group.extend_from_slice(neg);
                    scores.clear();
                    scores.extend(group.iter().map(|&j| s.data()[j] * inv_t));
                    let p = numeric::softmax_unchecked(&scores);
                    gsims.data_mut()[i] -= gs * inv_t;
                    for (&j, pj) in group.iter().zip(&p) {
                        gsims.data_mut()[j] += gs * inv_t * pj;
                    }
                }
                self.accumulate(grads, *sims, gsims)?;
            }
            Op::WeightedSum(terms) => {
                for &(v, c) in terms {
                    self.accumulate(grads, v, g.scale(c))?;
                }
            }
        }
        Ok(())
    }
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
///
/// Intended for gradient checks; `f` is evaluated `2·len(x)` times.
pub fn finite_difference(x: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for k in 0..x.data().len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + h;
        let up = f(&probe);
        probe.data_mut()[k] = orig - h;
        let down = f(&probe);
        probe.data_mut()[k] = orig;
        g.data_mut()[k] = (up - down) / (2.0 * h);
    }
    g
}

/// Max over entries of `|a − b| / max(1, |a|, |b|)`.
pub fn max_relative_error(a: &Matrix, b: &Matrix) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs() / 1.0_f64.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;
    use alloc::vec;

    fn rand(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn half_square_norm_gradient_is_identity() {
        let mut rng = Rng::new(0);
        let w = rand(&mut rng, 3, 4);
        let mut t = Tape::new();
        let wv = t.param(w.clone());
        let loss = t.sum_sq(wv, vec![0.5; 3]).unwrap();
        let g = t.backward(loss).unwrap();
        assert!(g.get(wv).unwrap().sub(&w).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn detached_branch_gets_no_gradient() {
        let mut rng = Rng::new(1);
        let mut t = Tape::new();
        let a = t.param(rand(&mut rng, 2, 3));
        let b = t.param(rand(&mut rng, 3, 2));
        let ab = t.matmul(a, b).unwrap();
        let target = t.detach(ab);
        let c = t.param(rand(&mut rng, 2, 2));
        let diff = t.sub(c, target).unwrap();
        let loss = t.sum_sq(diff, vec![1.0; 2]).unwrap();
        let g = t.backward(loss).unwrap();
        assert!(g.get(a).is_none());
        assert!(g.get(b).is_none());
        assert!(g.get(c).is_some());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let a = t.param(Matrix::zeros(2, 2));
        assert!(matches!(t.backward(a), Err(Error::Contract(_))));
    }

    /// Builds a composite graph touching every op and checks it against
    /// finite differences.
    fn composite(t: &mut Tape, x: &Matrix, w: &Matrix, bias: &Matrix) -> (Var, Var, Var, Var) {
        let xv = t.param(x.clone());
        let wv = t.param(w.clone());
        let bv = t.param(bias.clone());
        let h = t.matmul(xv, wv).unwrap();
        let h = t.add_row(h, bv).unwrap();
        let r = t.relu(h);
        let zeros = t.constant(Matrix::zeros(4, 3));
        let sel = t.select(r, zeros, vec![true, false, true, true]).unwrap();
        let sc = t.row_scale(sel, vec![1.0, 2.0, 0.5, -1.0]).unwrap();
        let mixed = t.add(sc, h).unwrap();
        let cat = t.concat_cols(&[mixed, h]).unwrap();
        let mut targets = Matrix::zeros(4, 6);
        for i in 0..4 {
            targets[(i, i)] = 0.7;
            targets[(i, 5)] = 0.3;
        }
        let xent = t.softmax_xent(cat, targets, vec![1.0, 0.5, 0.25, 1.0]).unwrap();
        let sims = t.row_cosine(mixed, h).unwrap();
        let con = t
            .pair_contrast(sims, vec![0, 2], vec![vec![1, 2, 3], vec![0, 1, 3]], 0.5, 0.5)
            .unwrap();
        let d = t.sub(mixed, h).unwrap();
        let sq = t.sum_sq(d, vec![0.1; 4]).unwrap();
        let half = t.scale(sq, 0.5);
        let loss = t.weighted_sum(&[(xent, 1.0), (con, 0.3), (half, 2.0)]).unwrap();
        (loss, xv, wv, bv)
    }

    #[test]
    fn composite_graph_matches_finite_differences() {
        let mut rng = Rng::new(7);
        let x = rand(&mut rng, 4, 2);
        let w = rand(&mut rng, 2, 3);
        let bias = rand(&mut rng, 1, 3);
        let mut t = Tape::new();
        let (loss, xv, wv, bv) = composite(&mut t, &x, &w, &bias);
        let g = t.backward(loss).unwrap();

        let eval = |x: &Matrix, w: &Matrix, b: &Matrix| {
            let mut t = Tape::new();
            let (l, ..) = composite(&mut t, x, w, b);
            t.scalar(l)
        };
        let fx = finite_difference(&x, 1e-5, |p| eval(p, &w, &bias));
        let fw = finite_difference(&w, 1e-5, |p| eval(&x, p, &bias));
        let fb = finite_difference(&bias, 1e-5, |p| eval(&x, &w, p));
        assert!(max_relative_error(g.get(xv).unwrap(), &fx) < 1e-6);
        assert!(max_relative_error(g.get(wv).unwrap(), &fw) < 1e-6);
        assert!(max_relative_error(g.get(bv).unwrap(), &fb) < 1e-6);
    }
}
