use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mat::{Mat, SparseMat};
use crate::seeds;

/// Row norms below this are floored (with a warning count) instead of
/// dividing by ~zero.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct NodeId(usize);

enum Op {
    Input,
    Param,
    Linear { x: NodeId, w: NodeId, b: NodeId },
    SparseLinear { feats: SparseMat, w: NodeId, b: NodeId },
    Tanh { x: NodeId },
    Dropout { x: NodeId, mask: Vec<f64> },
    RowL2Normalize { x: NodeId, norms: Vec<f64>, floored: Vec<bool> },
    CosineSim { a: NodeId, b: NodeId },
    ConcatCols { parts: Vec<NodeId> },
    ScaleByTemp { x: NodeId, log_tau: NodeId },
    RowMaxSubDetached { x: NodeId },
    CrossEntropyRows { logits: NodeId, softmax: Mat, labels: Vec<usize>, per_row: Vec<f64> },
    ElemMul { a: NodeId, b: NodeId },
    SumAll { x: NodeId },
}

struct NodeData {
    value: Mat,
    grad: Mat,
    op: Op,
}

/// Reverse-mode differentiation over dense f64 matrices. Nodes are appended
/// in construction order, which is therefore a topological order; backward
/// walks it once in reverse.
pub struct Graph {
    nodes: Vec<NodeData>,
    params: BTreeMap<String, NodeId>,
    /// Rows hit by the row_l2_normalize epsilon floor (degenerate inputs).
    pub norm_floor_events: u64,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: BTreeMap::new(), norm_floor_events: 0 }
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        let grad = Mat::zeros(value.rows(), value.cols());
        self.nodes.push(NodeData { value, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant (non-trainable) input.
    pub fn input(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Named trainable parameter; names must be unique per graph.
    pub fn param(&mut self, name: &str, value: Mat) -> Result<NodeId> {
        if self.params.contains_key(name) {
            return Err(Error::State(format!("parameter '{name}' registered twice")));
        }
        let id = self.push(value, Op::Param);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    /// Existing parameter id, if registered.
    pub fn get_param(&self, name: &str) -> Option<NodeId> {
        self.params.get(name).copied()
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].grad
    }

    /// x·w + b (b broadcast over rows).
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if bv.rows() != 1 || bv.cols() != wv.cols() {
            return Err(Error::Shape(format!(
                "linear: bias {}x{} must be 1x{}",
                bv.rows(),
                bv.cols(),
                wv.cols()
            )));
        }
        let mut out = xv.matmul(wv)?;
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for (j, r) in row.iter_mut().enumerate() {
                *r += bv.at(0, j);
            }
        }
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    /// feats·w + b where feats is a constant sparse matrix (the feature
    /// layer); gradients flow to w and b only.
    pub fn sparse_linear(&mut self, feats: SparseMat, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (wv, bv) = (self.value(w), self.value(b));
        if bv.rows() != 1 || bv.cols() != wv.cols() {
            return Err(Error::Shape("sparse_linear: bias shape".into()));
        }
        let mut out = feats.matmul(wv)?;
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for (j, r) in row.iter_mut().enumerate() {
                *r += bv.at(0, j);
            }
        }
        Ok(self.push(out, Op::SparseLinear { feats, w, b }))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh { x })
    }

    /// Inverted dropout: in training mode each entry is zeroed with
    /// probability p and survivors are scaled by 1/(1-p); eval mode is the
    /// identity. The mask is drawn once at construction from the seed.
    pub fn dropout(&mut self, x: NodeId, p: f64, training: bool, seed: u64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout p={p} outside [0,1)")));
        }
        let xv = self.value(x);
        let n = xv.rows() * xv.cols();
        let mask: Vec<f64> = if training && p > 0.0 {
            let mut rng = seeds::rng(seed, "dropout", &[]);
            let keep = 1.0 / (1.0 - p);
            (0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect()
        } else {
            vec![1.0; n]
        };
        let mut out = xv.clone();
        for (o, m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    /// Scale each row to unit L2 norm (exact Jacobian in backward). Rows
    /// with norm < NORM_EPS are divided by NORM_EPS instead and counted.
    pub fn row_l2_normalize(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let mut norms = Vec::with_capacity(xv.rows());
        let mut floored = Vec::with_capacity(xv.rows());
        let mut out = xv.clone();
        for i in 0..out.rows() {
            let n = out.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            let (n, fl) = if n < NORM_EPS { (NORM_EPS, true) } else { (n, false) };
            if fl {
                self.norm_floor_events += 1;
            }
            for v in out.row_mut(i) {
                *v /= n;
            }
            norms.push(n);
            floored.push(fl);
        }
        self.push(out, Op::RowL2Normalize { x, norms, floored })
    }

    /// a·bᵀ; with unit-norm rows this is the cosine similarity matrix.
    pub fn cosine_sim(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(out, Op::CosineSim { a, b }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols: no parts".into()));
        }
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::Shape("concat_cols: row mismatch".into()));
            }
            cols += self.value(p).cols();
        }
        let mut out = Mat::zeros(rows, cols);
        for i in 0..rows {
            let orow = out.row_mut(i);
            let mut off = 0;
            for &p in parts {
                let prow = self.nodes[p.0].value.row(i);
                orow[off..off + prow.len()].copy_from_slice(prow);
                off += prow.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols { parts: parts.to_vec() }))
    }

    /// x * exp(-log_tau), i.e. division by the temperature τ = exp(log_tau).
    pub fn scale_by_temp(&mut self, x: NodeId, log_tau: NodeId) -> Result<NodeId> {
        let lt = self.value(log_tau);
        if lt.rows() != 1 || lt.cols() != 1 {
            return Err(Error::Shape("scale_by_temp: log_tau must be 1x1".into()));
        }
        let s = (-lt.at(0, 0)).exp();
        let out = self.value(x).map(|v| v * s);
        Ok(self.push(out, Op::ScaleByTemp { x, log_tau }))
    }

    /// Subtract each row's max; the max is a constant in backward (the
    /// gradient passes through unchanged). Shift-invariance of softmax makes
    /// this a value-level no-op for downstream cross-entropy while keeping
    /// exponents bounded at small τ.
    pub fn row_max_sub_detached(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for i in 0..out.rows() {
            let m = out.row(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in out.row_mut(i) {
                *v -= m;
            }
        }
        self.push(out, Op::RowMaxSubDetached { x })
    }

    /// Mean over rows of −log softmax(logits_i)[labels_i], log-sum-exp form.
    pub fn cross_entropy_rows(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        if labels.len() != lv.rows() {
            return Err(Error::Shape(format!(
                "cross_entropy_rows: {} labels for {} rows",
                labels.len(),
                lv.rows()
            )));
        }
        let k = lv.cols();
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(Error::Validation(format!(
                    "label {l} out of range [0,{k}) at row {i}"
                )));
            }
        }
        let mut softmax = Mat::zeros(lv.rows(), k);
        let mut per_row = Vec::with_capacity(lv.rows());
        for i in 0..lv.rows() {
            let row = lv.row(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &v in row {
                z += (v - m).exp();
            }
            let lse = m + z.ln();
            per_row.push(lse - row[labels[i]]);
            let srow = softmax.row_mut(i);
            for (j, &v) in row.iter().enumerate() {
                srow[j] = (v - m).exp() / z;
            }
        }
        let total = per_row.iter().sum::<f64>() / per_row.len() as f64;
        let value = Mat::from_vec(1, 1, vec![total])?;
        Ok(self.push(value, Op::CrossEntropyRows { logits, softmax, labels: labels.to_vec(), per_row }))
    }

    /// Per-row losses of a cross_entropy_rows node.
    pub fn per_row_losses(&self, ce: NodeId) -> Option<&[f64]> {
        match &self.nodes[ce.0].op {
            Op::CrossEntropyRows { per_row, .. } => Some(per_row),
            _ => None,
        }
    }

    pub fn elem_mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if (av.rows(), av.cols()) != (bv.rows(), bv.cols()) {
            return Err(Error::Shape("elem_mul: shape mismatch".into()));
        }
        let mut out = av.clone();
        for (o, x) in out.data_mut().iter_mut().zip(bv.data()) {
            *o *= x;
        }
        Ok(self.push(out, Op::ElemMul { a, b }))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum::<f64>();
        self.push(Mat::from_vec(1, 1, vec![s]).unwrap(), Op::SumAll { x })
    }

    /// Reverse pass from a scalar loss; returns the gradient for every
    /// registered parameter (zero for parameters off the loss path).
    pub fn backward(&mut self, loss: NodeId) -> Result<BTreeMap<String, Mat>> {
        {
            let lv = self.value(loss);
            if lv.rows() != 1 || lv.cols() != 1 {
                return Err(Error::Shape(format!(
                    "backward needs a scalar loss, got {}x{}",
                    lv.rows(),
                    lv.cols()
                )));
            }
        }
        for n in &mut self.nodes {
            n.grad.fill(0.0);
        }
        *self.nodes[loss.0].grad.at_mut(0, 0) = 1.0;

        for id in (0..=loss.0).rev() {
            // split borrows: take the op out is not possible (owns data);
            // clone the out-grad instead, it is small relative to the values.
            let g = self.nodes[id].grad.clone();
            match &self.nodes[id].op {
                Op::Input | Op::Param => {}
                Op::Linear { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    // g is N×dout, w is din×dout: dx = g·wᵀ, dw = xᵀ·g
                    let dx = g.matmul_nt(self.value(w))?;
                    let dw = self.value(x).matmul_tn(&g)?;
                    self.nodes[x.0].grad.axpy(1.0, &dx);
                    self.nodes[w.0].grad.axpy(1.0, &dw);
                    let db = col_sums(&g);
                    self.nodes[b.0].grad.axpy(1.0, &db);
                }
                Op::SparseLinear { feats, w, b } => {
                    let (w, b) = (*w, *b);
                    let mut dw = Mat::zeros(feats.dim, g.cols());
                    feats.accumulate_weight_grad(&g, &mut dw);
                    self.nodes[w.0].grad.axpy(1.0, &dw);
                    let db = col_sums(&g);
                    self.nodes[b.0].grad.axpy(1.0, &db);
                }
                Op::Tanh { x } => {
                    let x = *x;
                    let y = &self.nodes[id].value;
                    let mut dx = g.clone();
                    for (d, yv) in dx.data_mut().iter_mut().zip(y.data()) {
                        *d *= 1.0 - yv * yv;
                    }
                    self.nodes[x.0].grad.axpy(1.0, &dx);
                }
                Op::Dropout { x, mask } => {
                    let x = *x;
                    let mut dx = g.clone();
                    for (d, m) in dx.data_mut().iter_mut().zip(mask) {
                        *d *= m;
                    }
                    self.nodes[x.0].grad.axpy(1.0, &dx);
                }
                Op::RowL2Normalize { x, norms, floored } => {
                    let x = *x;
                    let y = &self.nodes[id].value;
                    let mut dx = Mat::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let gi = g.row(i);
                        let yi = y.row(i);
                        let n = norms[i];
                        let drow = dx.row_mut(i);
                        if floored[i] {
                            // y = x / EPS is linear in x here
                            for (d, gv) in drow.iter_mut().zip(gi) {
                                *d = gv / n;
                            }
                        } else {
                            let dot: f64 = gi.iter().zip(yi).map(|(a, b)| a * b).sum();
                            for j in 0..gi.len() {
                                drow[j] = (gi[j] - yi[j] * dot) / n;
                            }
                        }
                    }
                    self.nodes[x.0].grad.axpy(1.0, &dx);
                }
                Op::CosineSim { a, b } => {
                    let (a, b) = (*a, *b);
                    // y = a bᵀ: da = g·b, db = gᵀ·a
                    let da = g.matmul(self.value(b))?;
                    let db = g.matmul_tn(self.value(a))?;
                    self.nodes[a.0].grad.axpy(1.0, &da);
                    self.nodes[b.0].grad.axpy(1.0, &db);
                }
                Op::ConcatCols { parts } => {
                    let parts = parts.clone();
                    let mut off = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.cols();
                        let mut dp = Mat::zeros(g.rows(), w);
                        for i in 0..g.rows() {
                            dp.row_mut(i).copy_from_slice(&g.row(i)[off..off + w]);
                        }
                        self.nodes[p.0].grad.axpy(1.0, &dp);
                        off += w;
                    }
                }
                Op::ScaleByTemp { x, log_tau } => {
                    let (x, lt) = (*x, *log_tau);
                    let s = (-self.value(lt).at(0, 0)).exp();
                    let y = &self.nodes[id].value;
                    // dx = g * e^{-t}; dt = -Σ g ⊙ y
                    let mut dt = 0.0;
                    for (gv, yv) in g.data().iter().zip(y.data()) {
                        dt -= gv * yv;
                    }
                    let mut dx = g.clone();
                    for d in dx.data_mut() {
                        *d *= s;
                    }
                    self.nodes[x.0].grad.axpy(1.0, &dx);
                    *self.nodes[lt.0].grad.at_mut(0, 0) += dt;
                }
                Op::RowMaxSubDetached { x } => {
                    // max treated as constant: gradient passes through
                    let x = *x;
                    self.nodes[x.0].grad.axpy(1.0, &g);
                }
                Op::CrossEntropyRows { logits, softmax, labels, .. } => {
                    let logits = *logits;
                    let gs = g.at(0, 0);
                    let n = softmax.rows() as f64;
                    let mut dl = softmax.clone();
                    for (i, &l) in labels.iter().enumerate() {
                        *dl.at_mut(i, l) -= 1.0;
                    }
                    for d in dl.data_mut() {
                        *d *= gs / n;
                    }
                    self.nodes[logits.0].grad.axpy(1.0, &dl);
                }
                Op::ElemMul { a, b } => {
                    let (a, b) = (*a, *b);
                    let mut da = g.clone();
                    for (d, bv) in da.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
                        *d *= bv;
                    }
                    let mut db = g;
                    for (d, av) in db.data_mut().iter_mut().zip(self.nodes[a.0].value.data()) {
                        *d *= av;
                    }
                    self.nodes[a.0].grad.axpy(1.0, &da);
                    self.nodes[b.0].grad.axpy(1.0, &db);
                }
                Op::SumAll { x } => {
                    let x = *x;
                    let gs = g.at(0, 0);
                    let (r, c) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                    let ones = Mat::from_fn(r, c, |_, _| gs);
                    self.nodes[x.0].grad.axpy(1.0, &ones);
                }
            }
        }

        let mut out = BTreeMap::new();
        for (name, id) in &self.params {
            out.insert(name.clone(), self.nodes[id.0].grad.clone());
        }
        Ok(out)
    }
}

fn col_sums(g: &Mat) -> Mat {
    let mut out = Mat::zeros(1, g.cols());
    for i in 0..g.rows() {
        for (j, v) in g.row(i).iter().enumerate() {
            *out.at_mut(0, j) += v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(g: &Graph, id: NodeId) -> f64 {
        g.value(id).at(0, 0)
    }

    #[test]
    fn linear_identity_and_scalar_chain() {
        let mut g = Graph::new();
        let x = g.input(Mat::from_vec(2, 2, vec![1., 2., 3., 4.]).unwrap());
        let w = g.param("w", Mat::from_vec(2, 2, vec![1., 0., 0., 1.]).unwrap()).unwrap();
        let b = g.param("b", Mat::zeros(1, 2)).unwrap();
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());

        // N=1,d=1: x=2,w=3,b=1 → 7; ∂out/∂w = 2
        let mut g = Graph::new();
        let x = g.input(Mat::from_vec(1, 1, vec![2.0]).unwrap());
        let w = g.param("w", Mat::from_vec(1, 1, vec![3.0]).unwrap()).unwrap();
        let b = g.param("b", Mat::from_vec(1, 1, vec![1.0]).unwrap()).unwrap();
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(scalar(&g, y), 7.0);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads["w"].at(0, 0), 2.0);
        assert_eq!(grads["b"].at(0, 0), 1.0);
    }

    #[test]
    fn square_grad_and_disconnected_param() {
        let mut g = Graph::new();
        let w = g.param("w", Mat::from_vec(1, 1, vec![3.0]).unwrap()).unwrap();
        let unused = g.param("unused", Mat::from_vec(1, 1, vec![5.0]).unwrap()).unwrap();
        let y = g.elem_mul(w, w).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads["w"].at(0, 0), 6.0);
        assert_eq!(grads["unused"].at(0, 0), 0.0);
        let _ = unused;
    }

    #[test]
    fn row_normalize_values() {
        let mut g = Graph::new();
        let x = g.input(Mat::from_vec(2, 2, vec![3., 4., 0.6, 0.8]).unwrap());
        let y = g.row_l2_normalize(x);
        assert_eq!(g.value(y).row(0), &[0.6, 0.8]);
        let r1 = g.value(y).row(1);
        assert!((r1[0] - 0.6).abs() < 1e-15 && (r1[1] - 0.8).abs() < 1e-15);
        assert_eq!(g.norm_floor_events, 0);

        let mut g2 = Graph::new();
        let z = g2.input(Mat::zeros(1, 3));
        let _ = g2.row_l2_normalize(z);
        assert_eq!(g2.norm_floor_events, 1);
    }

    #[test]
    fn cosine_sim_values() {
        let mut g = Graph::new();
        let a = g.input(Mat::from_vec(1, 2, vec![1., 0.]).unwrap());
        let s = g.cosine_sim(a, a).unwrap();
        assert_eq!(scalar(&g, s), 1.0);
        let b = g.input(Mat::from_vec(1, 2, vec![0., 1.]).unwrap());
        let o = g.cosine_sim(a, b).unwrap();
        assert_eq!(scalar(&g, o), 0.0);
        let c = g.input(Mat::zeros(1, 3));
        assert!(g.cosine_sim(a, c).is_err());
    }

    #[test]
    fn concat_shapes_and_single_identity() {
        let mut g = Graph::new();
        let n = 3;
        let p1 = g.input(Mat::from_fn(n, n, |i, j| (i + j) as f64));
        let p2 = g.input(Mat::from_fn(n, n, |i, j| (i * j) as f64));
        let p3 = g.input(Mat::from_fn(n, n, |i, j| (i as f64) - (j as f64)));
        let cat = g.concat_cols(&[p1, p2, p3]).unwrap();
        assert_eq!(g.value(cat).cols(), 3 * n);
        let single = g.concat_cols(&[p1]).unwrap();
        assert_eq!(g.value(single).data(), g.value(p1).data());
        let short = g.input(Mat::zeros(2, 1));
        assert!(g.concat_cols(&[p1, short]).is_err());
    }

    #[test]
    fn row_max_sub_examples() {
        let mut g = Graph::new();
        let x = g.input(Mat::from_vec(2, 2, vec![0., -2., 5., 3.]).unwrap());
        let y = g.row_max_sub_detached(x);
        assert_eq!(g.value(y).row(0), &[0., -2.]);
        assert_eq!(g.value(y).row(1), &[0., -2.]);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::new();
        let l = g.input(Mat::from_vec(1, 3, vec![1., -1., -1.]).unwrap());
        let ce = g.cross_entropy_rows(l, &[0]).unwrap();
        let expected = (1.0 + 2.0 * (-2.0f64).exp()).ln();
        assert!((scalar(&g, ce) - expected).abs() < 1e-15);
        assert!((expected - 0.23954).abs() < 1e-5);

        let mut g = Graph::new();
        let l = g.input(Mat::from_vec(2, 4, vec![0.5; 8]).unwrap());
        let ce = g.cross_entropy_rows(l, &[1, 3]).unwrap();
        assert!((scalar(&g, ce) - 4.0f64.ln()).abs() < 1e-15);
        assert_eq!(g.per_row_losses(ce).unwrap().len(), 2);

        let bad = g.input(Mat::zeros(1, 3));
        assert!(g.cross_entropy_rows(bad, &[3]).is_err());
    }

    #[test]
    fn cross_entropy_shift_invariance() {
        let mut rng = seeds::rng(3, "shift", &[]);
        for _ in 0..50 {
            let m = Mat::from_fn(3, 7, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let c: f64 = rng.random::<f64>() * 100.0 - 50.0;
            let labels = [0usize, 3, 6];

            let mut g1 = Graph::new();
            let x1 = g1.input(m.clone());
            let ce1 = g1.cross_entropy_rows(x1, &labels).unwrap();

            let mut g2 = Graph::new();
            let x2 = g2.input(m.map(|v| v + c));
            let ce2 = g2.cross_entropy_rows(x2, &labels).unwrap();

            assert!((scalar(&g1, ce1) - scalar(&g2, ce2)).abs() < 1e-12);

            // and the detached row-max step is a value-level no-op
            let mut g3 = Graph::new();
            let x3 = g3.input(m.clone());
            let sub = g3.row_max_sub_detached(x3);
            let ce3 = g3.cross_entropy_rows(sub, &labels).unwrap();
            assert!((scalar(&g1, ce1) - scalar(&g3, ce3)).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_behavior() {
        let mut g = Graph::new();
        let x = g.input(Mat::from_fn(100, 10, |_, _| 1.0));
        let id0 = g.dropout(x, 0.0, true, 1).unwrap();
        assert_eq!(g.value(id0).data(), g.value(x).data());
        let id_eval = g.dropout(x, 0.5, false, 1).unwrap();
        assert_eq!(g.value(id_eval).data(), g.value(x).data());

        let mut g = Graph::new();
        let x = g.input(Mat::from_fn(1000, 100, |_, _| 1.0));
        let d = g.dropout(x, 0.1, true, 7).unwrap();
        let zeros = g.value(d).data().iter().filter(|v| **v == 0.0).count();
        let rate = zeros as f64 / 1e5;
        assert!((rate - 0.1).abs() < 0.01, "zero rate {rate}");
        // survivors scaled by 1/(1-p)
        let kept = g.value(d).data().iter().find(|v| **v != 0.0).unwrap();
        assert!((kept - 1.0 / 0.9).abs() < 1e-12);

        assert!(g.dropout(x, 1.0, true, 1).is_err());
    }

    #[test]
    fn backward_requires_scalar_and_is_interleaving_independent() {
        let mut g = Graph::new();
        let x = g.input(Mat::zeros(2, 2));
        assert!(g.backward(x).is_err());

        let build = |interleave: bool| -> Mat {
            let mut g = Graph::new();
            let w = g.param("w", Mat::from_vec(2, 2, vec![0.3, -0.1, 0.7, 0.2]).unwrap()).unwrap();
            if interleave {
                let _ = g.input(Mat::zeros(5, 5)); // unrelated node
            }
            let x = g.input(Mat::from_vec(1, 2, vec![1.0, 2.0]).unwrap());
            let b = g.param("b", Mat::zeros(1, 2)).unwrap();
            let y = g.linear(x, w, b).unwrap();
            let t = g.tanh(y);
            let n = g.row_l2_normalize(t);
            let s = g.sum_all(n);
            let grads = g.backward(s).unwrap();
            grads["w"].clone()
        };
        assert_eq!(build(false), build(true));
    }

    #[test]
    fn duplicate_param_rejected() {
        let mut g = Graph::new();
        g.param("w", Mat::zeros(1, 1)).unwrap();
        assert!(g.param("w", Mat::zeros(1, 1)).is_err());
    }
}
