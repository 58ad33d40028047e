//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Tape`] records every operation of one forward pass in order.
//! [`Tape::backward`] walks the record in reverse and accumulates adjoints;
//! adjoints reaching parameter leaves are summed into a [`Gradients`] store.

use super::tensor::{matmul, matmul_nt, matmul_tn, Gradients, ParameterStore, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F> {
    Param(usize),
    Const,
    Gather { param: usize, ids: Vec<u32> },
    Windows { x: Var, width: usize },
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Tensor<F>),
    Scale(Var, F),
    Gelu(Var),
    MaxRows { x: Var, argmax: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor<F>, inv_std: Vec<F> },
    Bce { logits: Var, labels: Vec<F>, probs: Vec<F> },
    WeightedSum(Vec<(Var, F)>),
}

struct Node<F> {
    value: Option<Tensor<F>>,
    op: Op<F>,
}

pub struct Tape<'p, F: Real> {
    params: &'p ParameterStore<F>,
    nodes: Vec<Node<F>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Lower clamp for probabilities in the cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;

pub fn sigmoid<F: Real>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

fn gelu<F: Real>(x: F) -> F {
    let c = F::c(GELU_C);
    let a = F::c(GELU_A);
    F::c(0.5) * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::c(GELU_C);
    let a = F::c(GELU_A);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let du = c * (F::one() + F::c(3.0) * a * x * x);
    F::c(0.5) * (F::one() + t) + F::c(0.5) * x * (F::one() - t * t) * du
}

impl<'p, F: Real> Tape<'p, F> {
    pub fn new(params: &'p ParameterStore<F>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParameterStore<F> {
        self.params
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.tensor(*id),
            _ => unreachable!("only parameter leaves borrow their value"),
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: usize) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Const)
    }

    /// Rows `ids` of parameter `param` (embedding lookup).
    pub fn gather(&mut self, param: usize, ids: &[u32]) -> Result<Var> {
        let table = self.params.tensor(param);
        let cols = table.cols();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            if i as usize >= table.rows() {
                return Err(Error::Invalid(format!(
                    "row {i} out of range for {} ({} rows)",
                    self.params.name(param),
                    table.rows()
                )));
            }
            data.extend_from_slice(table.row_slice(i as usize));
        }
        let value = Tensor::matrix(ids.len(), cols, data);
        Ok(self.push(value, Op::Gather { param, ids: ids.to_vec() }))
    }

    /// Sliding windows: row `r` is rows `r..r+width` of `x` laid end to end.
    pub fn windows(&mut self, x: Var, width: usize) -> Var {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        assert!(n >= width && width >= 1, "windows needs at least `width` rows");
        let out_rows = n - width + 1;
        let mut data = Vec::with_capacity(out_rows * width * c);
        for r in 0..out_rows {
            data.extend_from_slice(&xv.data()[r * c..(r + width) * c]);
        }
        let value = Tensor::matrix(out_rows, width * c, data);
        self.push(value, Op::Windows { x, width })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(self.value(a), self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// Adds row vector `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let bv = self.value(bias);
        assert_eq!(xv.cols(), bv.len(), "add_row width");
        let c = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv.data()[i % c])
            .collect();
        let value = Tensor::matrix(xv.rows(), c, data);
        self.push(value, Op::AddRow(x, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.len(), bv.len(), "add shapes");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::matrix(av.rows(), av.cols(), data);
        self.push(value, Op::Add(a, b))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, mask: Tensor<F>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), mask.len(), "mul_const shapes");
        let data = xv.data().iter().zip(mask.data()).map(|(&a, &b)| a * b).collect();
        let value = Tensor::matrix(xv.rows(), xv.cols(), data);
        self.push(value, Op::Mul(x, mask))
    }

    pub fn scale(&mut self, x: Var, s: F) -> Var {
        let value = self.value(x).map(|v| v * s);
        self.push(value, Op::Scale(x, s))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(gelu);
        self.push(value, Op::Gelu(x))
    }

    /// Column-wise maximum over rows (max-over-time pooling), `1×cols`.
    pub fn max_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        let mut argmax = vec![0usize; c];
        let mut best: Vec<F> = xv.row_slice(0).to_vec();
        for r in 1..n {
            for (j, &v) in xv.row_slice(r).iter().enumerate() {
                if v > best[j] {
                    best[j] = v;
                    argmax[j] = r;
                }
            }
        }
        self.push(Tensor::row(best), Op::MaxRows { x, argmax })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat_cols rows");
                data.extend_from_slice(pv.row_slice(r));
            }
        }
        self.push(Tensor::matrix(rows, cols, data), Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows cols");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        self.push(Tensor::matrix(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let rows = xv.rows();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.row_slice(r)[start..start + len]);
        }
        self.push(Tensor::matrix(rows, len, data), Op::SliceCols { x, start })
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = matmul_nt(self.value(a), self.value(b));
        self.push(value, Op::MatMulNt(a, b))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        let mut data = Vec::with_capacity(n * c);
        for r in 0..n {
            let row = xv.row_slice(r);
            let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
            let exps: Vec<F> = row.iter().map(|&v| (v - m).exp()).collect();
            let z: F = exps.iter().copied().sum();
            data.extend(exps.into_iter().map(|e| e / z));
        }
        self.push(Tensor::matrix(n, c, data), Op::SoftmaxRows(x))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let eps = F::c(1e-5);
        let xv = self.value(x);
        let (n, c) = (xv.rows(), xv.cols());
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut xhat = Vec::with_capacity(n * c);
        let mut inv_std = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * c);
        let cf = F::c(c as f64);
        for r in 0..n {
            let row = xv.row_slice(r);
            let mean = row.iter().copied().sum::<F>() / cf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / cf;
            let is = F::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let value = Tensor::matrix(n, c, out);
        let xhat = Tensor::matrix(n, c, xhat);
        self.push(value, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `labels`,
    /// probabilities clamped to `[1e-7, 1 - 1e-7]`. Returns a `1×1` value.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        let zv = self.value(logits);
        if zv.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} logits for {} labels",
                zv.len(),
                labels.len()
            )));
        }
        let probs: Vec<F> = zv.data().iter().map(|&z| sigmoid(z)).collect();
        let labels: Vec<F> = labels.iter().map(|&l| F::c(l as f64)).collect();
        let loss = bce_loss(&probs, &labels)?;
        Ok(self.push(Tensor::scalar(loss), Op::Bce { logits, labels, probs }))
    }

    /// `Σ wᵢ·xᵢ` over `1×1` values.
    pub fn weighted_sum(&mut self, terms: &[(Var, F)]) -> Var {
        let total = terms
            .iter()
            .fold(F::zero(), |s, &(v, w)| s + w * self.value(v).data()[0]);
        self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()))
    }

    /// Gradients of the scalar `root` times `seed` with respect to every
    /// parameter in the store.
    pub fn backward(&self, root: Var, seed: F) -> Result<Gradients<F>> {
        let mut grads = Gradients::zeros_like(self.params);
        let mut adj: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        let root_val = self.value(root);
        adj[root.0] = Some(Tensor::full(&[root_val.rows(), root_val.cols()], seed));

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Param(id) => grads.tensor_mut(*id).axpy(F::one(), &g),
                Op::Const => {}
                Op::Gather { param, ids } => {
                    let gt = grads.tensor_mut(*param);
                    let cols = gt.cols();
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut gt.data_mut()[id as usize * cols..(id as usize + 1) * cols];
                        for (d, &s) in dst.iter_mut().zip(g.row_slice(r)) {
                            *d = *d + s;
                        }
                    }
                }
                Op::Windows { x, width } => {
                    let xv = self.value(*x);
                    let (n, c) = (xv.rows(), xv.cols());
                    let mut dx = vec![F::zero(); n * c];
                    for r in 0..g.rows() {
                        let row = g.row_slice(r);
                        for k in 0..width * c {
                            dx[r * c + k] = dx[r * c + k] + row[k];
                        }
                    }
                    accumulate(&mut adj, *x, Tensor::matrix(n, c, dx));
                }
                Op::MatMul(a, b) => {
                    let da = matmul_nt(&g, self.value(*b));
                    let db = matmul_tn(self.value(*a), &g);
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::MatMulNt(a, b) => {
                    let da = matmul(&g, self.value(*b));
                    let db = matmul_tn(&g, self.value(*a));
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::AddRow(x, bias) => {
                    let c = g.cols();
                    let mut db = vec![F::zero(); c];
                    for r in 0..g.rows() {
                        for (d, &v) in db.iter_mut().zip(g.row_slice(r)) {
                            *d = *d + v;
                        }
                    }
                    accumulate(&mut adj, *bias, Tensor::row(db));
                    accumulate(&mut adj, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Mul(x, mask) => {
                    let data = g.data().iter().zip(mask.data()).map(|(&a, &b)| a * b).collect();
                    accumulate(&mut adj, *x, Tensor::matrix(g.rows(), g.cols(), data));
                }
                Op::Scale(x, s) => {
                    let s = *s;
                    accumulate(&mut adj, *x, g.map(|v| v * s));
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gv, &xv)| gv * gelu_grad(xv))
                        .collect();
                    accumulate(&mut adj, *x, Tensor::matrix(g.rows(), g.cols(), data));
                }
                Op::MaxRows { x, argmax } => {
                    let xv = self.value(*x);
                    let (n, c) = (xv.rows(), xv.cols());
                    let mut dx = vec![F::zero(); n * c];
                    for (j, &r) in argmax.iter().enumerate() {
                        dx[r * c + j] = g.data()[j];
                    }
                    accumulate(&mut adj, *x, Tensor::matrix(n, c, dx));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let mut data = Vec::with_capacity(g.rows() * pc);
                        for r in 0..g.rows() {
                            data.extend_from_slice(&g.row_slice(r)[offset..offset + pc]);
                        }
                        accumulate(&mut adj, p, Tensor::matrix(g.rows(), pc, data));
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let c = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pr = self.value(p).rows();
                        let data = g.data()[offset * c..(offset + pr) * c].to_vec();
                        accumulate(&mut adj, p, Tensor::matrix(pr, c, data));
                        offset += pr;
                    }
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let (n, c) = (xv.rows(), xv.cols());
                    let len = g.cols();
                    let mut dx = vec![F::zero(); n * c];
                    for r in 0..n {
                        dx[r * c + start..r * c + start + len].copy_from_slice(g.row_slice(r));
                    }
                    accumulate(&mut adj, *x, Tensor::matrix(n, c, dx));
                }
                Op::SoftmaxRows(x) => {
                    let y = self.nodes[i].value.as_ref().unwrap();
                    let (n, c) = (y.rows(), y.cols());
                    let mut dx = Vec::with_capacity(n * c);
                    for r in 0..n {
                        let yr = y.row_slice(r);
                        let gr = g.row_slice(r);
                        let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        dx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                    }
                    accumulate(&mut adj, *x, Tensor::matrix(n, c, dx));
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let (n, c) = (xhat.rows(), xhat.cols());
                    let gv = self.value(*gain).data();
                    let mut dgain = vec![F::zero(); c];
                    let mut dbias = vec![F::zero(); c];
                    let mut dx = Vec::with_capacity(n * c);
                    let cf = F::c(c as f64);
                    for r in 0..n {
                        let gr = g.row_slice(r);
                        let hr = xhat.row_slice(r);
                        let dh: Vec<F> = gr.iter().zip(gv).map(|(&a, &b)| a * b).collect();
                        for j in 0..c {
                            dgain[j] = dgain[j] + gr[j] * hr[j];
                            dbias[j] = dbias[j] + gr[j];
                        }
                        let mean_dh = dh.iter().copied().sum::<F>() / cf;
                        let mean_dh_h = dh.iter().zip(hr).map(|(&a, &b)| a * b).sum::<F>() / cf;
                        let is = inv_std[r];
                        dx.extend(
                            dh.iter()
                                .zip(hr)
                                .map(|(&d, &h)| is * (d - mean_dh - h * mean_dh_h)),
                        );
                    }
                    accumulate(&mut adj, *x, Tensor::matrix(n, c, dx));
                    accumulate(&mut adj, *gain, Tensor::row(dgain));
                    accumulate(&mut adj, *bias, Tensor::row(dbias));
                }
                Op::Bce { logits, labels, probs } => {
                    let n = F::c(labels.len() as f64);
                    let lo = F::c(PROB_CLAMP);
                    let hi = F::one() - lo;
                    let seed = g.data()[0];
                    let zv = self.value(*logits);
                    let data = probs
                        .iter()
                        .zip(labels)
                        .map(|(&p, &y)| {
                            if p < lo || p > hi {
                                F::zero()
                            } else {
                                seed * (p - y) / n
                            }
                        })
                        .collect();
                    accumulate(&mut adj, *logits, Tensor::matrix(zv.rows(), zv.cols(), data));
                }
                Op::WeightedSum(terms) => {
                    let seed = g.data()[0];
                    for &(v, w) in terms {
                        accumulate(&mut adj, v, Tensor::scalar(seed * w));
                    }
                }
            }
        }
        grads.check_finite()?;
        Ok(grads)
    }
}

fn accumulate<F: Real>(adj: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
    match &mut adj[v.0] {
        Some(t) => t.axpy(F::one(), &g),
        slot @ None => *slot = Some(g),
    }
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn bce_loss<F: Real>(probabilities: &[F], labels: &[F]) -> Result<F> {
    if probabilities.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probabilities for {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    if probabilities.is_empty() {
        return Err(Error::Invalid("cross-entropy of an empty sequence".into()));
    }
    let lo = F::c(PROB_CLAMP);
    let hi = F::one() - lo;
    let total: F = probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.max(lo).min(hi);
            -(y * p.ln() + (F::one() - y) * (F::one() - p).ln())
        })
        .sum();
    Ok(total / F::c(probabilities.len() as f64))
}
