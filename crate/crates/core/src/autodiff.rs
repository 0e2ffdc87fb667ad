//! Tape-based reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value. [`Tape::backward`] walks the nodes in reverse, applying each
//! operation's vector-Jacobian product. Parameters enter as borrowed leaves,
//! so building a graph never copies weights.
//!
//! The operation set is exactly what a pre-norm transformer needs: matrix
//! products, bias rows, layer norm, GELU, row gathers (embeddings and slot
//! selection), masked multi-head attention and cross-entropy.

use std::borrow::Cow;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayViewMut1, Axis, Zip};

use crate::objective::AttentionMask;
use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    /// `a · bᵀ`
    MatMulT { a: Var, b: Var },
    Add { a: Var, b: Var },
    AddRow { x: Var, bias: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, normed: Array2<T>, inv_std: Vec<T> },
    Gelu { x: Var },
    Gather { table: Var, rows: Vec<usize> },
    Attention { qkv: Var, heads: usize, seq_len: usize, masks: Vec<AttentionMask>, probs: Vec<Array2<T>> },
    CrossEntropy { logits: Var, rows: Vec<(usize, usize)>, probs: Array2<T> },
    WeightedSum { x: Var, weights: Array2<T> },
}

struct Node<'p, T: Scalar> {
    value: Cow<'p, Array2<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients indexed by [`Var`]; `None` for nodes the loss does not reach.
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Array2<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<T>> {
        self.grads[v.0].take()
    }
}

fn buf<'g, T: Scalar>(grads: &'g mut [Option<Array2<T>>], v: Var, shape: (usize, usize)) -> &'g mut Array2<T> {
    grads[v.0].get_or_insert_with(|| Array2::zeros(shape))
}

#[inline]
fn gelu_parts<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation; returns (value, derivative)
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let k = T::of(0.044715);
    let half = T::of(0.5);
    let one = T::one();
    let x2 = x * x;
    let inner = c * (x + k * x2 * x);
    let t = inner.tanh();
    let value = half * x * (one + t);
    let d_inner = c * (one + T::of(3.0) * k * x2);
    let deriv = half * (one + t) + half * x * (one - t * t) * d_inner;
    (value, deriv)
}

/// Softmax of the allowed entries of `row`, in place; disallowed entries
/// become exactly zero, and a row with nothing allowed becomes all zeros.
fn masked_softmax<T: Scalar>(mut row: ArrayViewMut1<T>, allowed: &[bool]) {
    let mut max = T::neg_infinity();
    for (x, &ok) in row.iter().zip(allowed) {
        if ok && *x > max {
            max = *x;
        }
    }
    if max == T::neg_infinity() {
        row.fill(T::zero());
        return;
    }
    let mut sum = T::zero();
    for (x, &ok) in row.iter_mut().zip(allowed) {
        *x = if ok { (*x - max).exp() } else { T::zero() };
        sum += *x;
    }
    let inv = T::one() / sum;
    row.mapv_inplace(|x| x * inv);
}

fn log_sum_exp<T: Scalar>(row: ArrayView1<T>) -> T {
    let max = row.fold(T::neg_infinity(), |m, &x| if x > m { x } else { m });
    let sum: T = row.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Array2<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    /// A borrowed leaf, typically a parameter.
    pub fn param(&mut self, value: &'p Array2<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// An owned leaf that may or may not need a gradient.
    pub fn input(&mut self, value: Array2<T>, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(value), Op::MatMul { a, b }, rg)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(value), Op::MatMulT { a, b }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(value), Op::Add { a, b }, rg)
    }

    /// Add a `[1, n]` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Var {
        let value = self.value(x) + self.value(bias);
        let rg = self.rg(x) || self.rg(bias);
        self.push(Cow::Owned(value), Op::AddRow { x, bias }, rg)
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let y = self.matmul(x, weight);
        self.add_row(y, bias)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let eps = T::of(LAYER_NORM_EPS);
        let n = T::of(cols as f64);
        let mut normed = Array2::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (src, mut dst) in xv.outer_iter().zip(normed.outer_iter_mut()) {
            let mean = src.sum() / n;
            let var = src.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / n;
            let r = T::one() / (var + eps).sqrt();
            Zip::from(&mut dst).and(&src).for_each(|d, &s| *d = (s - mean) * r);
            inv_std.push(r);
        }
        let g = self.value(gain).row(0);
        let b = self.value(bias).row(0);
        let mut value = normed.clone();
        for mut row in value.outer_iter_mut() {
            Zip::from(&mut row).and(&g).and(&b).for_each(|y, &g, &b| *y = *y * g + b);
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            Cow::Owned(value),
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                inv_std,
            },
            rg,
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| gelu_parts(v).0);
        let rg = self.rg(x);
        self.push(Cow::Owned(value), Op::Gelu { x }, rg)
    }

    /// Rows of `table` selected by index (embedding lookup or slot selection).
    pub fn gather(&mut self, table: Var, rows: Vec<usize>) -> Var {
        let t = self.value(table);
        let mut value = Array2::zeros((rows.len(), t.ncols()));
        for (mut dst, &r) in value.outer_iter_mut().zip(&rows) {
            dst.assign(&t.row(r));
        }
        let rg = self.rg(table);
        self.push(Cow::Owned(value), Op::Gather { table, rows }, rg)
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `qkv` is `[batch * seq_len, 3 * d]` holding queries, keys and values
    /// side by side; `masks[b]` restricts sequence `b`. Disallowed pairs get
    /// exactly zero weight.
    pub fn attention(&mut self, qkv: Var, heads: usize, seq_len: usize, masks: Vec<AttentionMask>) -> Var {
        let x = self.value(qkv);
        let d = x.ncols() / 3;
        let dh = d / heads;
        let batch = masks.len();
        assert_eq!(x.nrows(), batch * seq_len, "qkv rows must equal batch * seq_len");
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut out = Array2::zeros((batch * seq_len, d));
        let mut probs = Vec::with_capacity(batch * heads);
        for (b, mask) in masks.iter().enumerate() {
            let rows = b * seq_len..(b + 1) * seq_len;
            for h in 0..heads {
                let q = x.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                let k = x.slice(s![rows.clone(), d + h * dh..d + (h + 1) * dh]);
                let v = x.slice(s![rows.clone(), 2 * d + h * dh..2 * d + (h + 1) * dh]);
                let mut p = Array2::zeros((seq_len, seq_len));
                general_mat_mul(scale, &q, &k.t(), T::zero(), &mut p);
                for (i, row) in p.outer_iter_mut().enumerate() {
                    masked_softmax(row, mask.row(i));
                }
                let mut o = out.slice_mut(s![rows.clone(), h * dh..(h + 1) * dh]);
                general_mat_mul(T::one(), &p, &v, T::zero(), &mut o);
                probs.push(p);
            }
        }
        let rg = self.rg(qkv);
        self.push(
            Cow::Owned(out),
            Op::Attention {
                qkv,
                heads,
                seq_len,
                masks,
                probs,
            },
            rg,
        )
    }

    /// Mean negative log-likelihood over rows that have a target. Returns the
    /// scalar loss node and the per-row NLL.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> (Var, Vec<Option<f64>>) {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len());
        let rows: Vec<(usize, usize)> = targets
            .iter()
            .enumerate()
            .filter_map(|(r, t)| t.map(|t| (r, t)))
            .collect();
        let mut probs = Array2::zeros((rows.len(), lv.ncols()));
        let mut per_row = vec![None; targets.len()];
        let mut total = T::zero();
        for (k, &(r, t)) in rows.iter().enumerate() {
            let row = lv.row(r);
            let lse = log_sum_exp(row);
            let nll = lse - row[t];
            total += nll;
            per_row[r] = Some(nll.as_f64());
            Zip::from(probs.row_mut(k)).and(&row).for_each(|p, &x| *p = (x - lse).exp());
        }
        let mean = if rows.is_empty() {
            T::zero()
        } else {
            total / T::of(rows.len() as f64)
        };
        let rg = self.rg(logits);
        let var = self.push(
            Cow::Owned(Array2::from_elem((1, 1), mean)),
            Op::CrossEntropy { logits, rows, probs },
            rg,
        );
        (var, per_row)
    }

    /// `sum(x ⊙ weights)` as a `[1, 1]` node.
    pub fn weighted_sum(&mut self, x: Var, weights: Array2<T>) -> Var {
        let value = (self.value(x) * &weights).sum();
        let rg = self.rg(x);
        self.push(
            Cow::Owned(Array2::from_elem((1, 1), value)),
            Op::WeightedSum { x, weights },
            rg,
        )
    }

    /// Reverse sweep from a `[1, 1]` node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        grads[loss.0] = Some(Array2::from_elem((1, 1), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        general_mat_mul(T::one(), &g, &bv.t(), T::one(), buf(&mut grads, *a, av.dim()));
                    }
                    if self.rg(*b) {
                        general_mat_mul(T::one(), &av.t(), &g, T::one(), buf(&mut grads, *b, bv.dim()));
                    }
                }
                Op::MatMulT { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.rg(*a) {
                        general_mat_mul(T::one(), &g, bv, T::one(), buf(&mut grads, *a, av.dim()));
                    }
                    if self.rg(*b) {
                        general_mat_mul(T::one(), &g.t(), av, T::one(), buf(&mut grads, *b, bv.dim()));
                    }
                }
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        if self.rg(v) {
                            *buf(&mut grads, v, g.dim()) += &g;
                        }
                    }
                }
                Op::AddRow { x, bias } => {
                    if self.rg(*bias) {
                        let sum = g.sum_axis(Axis(0));
                        let mut row = buf(&mut grads, *bias, (1, g.ncols())).row_mut(0);
                        row += &sum;
                    }
                    if self.rg(*x) {
                        *buf(&mut grads, *x, g.dim()) += &g;
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normed,
                    inv_std,
                } => {
                    let gv = self.value(*gain).row(0).to_owned();
                    let cols = g.ncols();
                    if self.rg(*gain) {
                        let dg = (&g * normed).sum_axis(Axis(0));
                        let mut row = buf(&mut grads, *gain, (1, cols)).row_mut(0);
                        row += &dg;
                    }
                    if self.rg(*bias) {
                        let db = g.sum_axis(Axis(0));
                        let mut row = buf(&mut grads, *bias, (1, cols)).row_mut(0);
                        row += &db;
                    }
                    if self.rg(*x) {
                        let n = T::of(cols as f64);
                        let dx = buf(&mut grads, *x, g.dim());
                        for (r, ((gr, xr), mut dr)) in g
                            .outer_iter()
                            .zip(normed.outer_iter())
                            .zip(dx.outer_iter_mut())
                            .enumerate()
                        {
                            let dxhat: Vec<T> = gr.iter().zip(gv.iter()).map(|(&a, &b)| a * b).collect();
                            let mean_d = dxhat.iter().copied().sum::<T>() / n;
                            let mean_dx = dxhat.iter().zip(xr.iter()).map(|(&a, &b)| a * b).sum::<T>() / n;
                            let rs = inv_std[r];
                            for ((d, &dh), &xh) in dr.iter_mut().zip(&dxhat).zip(xr.iter()) {
                                *d += rs * (dh - mean_d - xh * mean_dx);
                            }
                        }
                    }
                }
                Op::Gelu { x } => {
                    let xv = self.value(*x);
                    let dx = buf(&mut grads, *x, g.dim());
                    Zip::from(dx)
                        .and(&g)
                        .and(xv)
                        .for_each(|d, &gy, &xi| *d += gy * gelu_parts(xi).1);
                }
                Op::Gather { table, rows } => {
                    let dim = self.value(*table).dim();
                    let dt = buf(&mut grads, *table, dim);
                    for (src, &r) in g.outer_iter().zip(rows) {
                        let mut dst = dt.row_mut(r);
                        dst += &src;
                    }
                }
                Op::Attention {
                    qkv,
                    heads,
                    seq_len,
                    masks,
                    probs,
                } => {
                    let x = self.value(*qkv);
                    let d = x.ncols() / 3;
                    let dh = d / heads;
                    let l = *seq_len;
                    let scale = T::one() / T::of(dh as f64).sqrt();
                    let dx = buf(&mut grads, *qkv, x.dim());
                    let mut dp = Array2::zeros((l, l));
                    for b in 0..masks.len() {
                        let rows = b * l..(b + 1) * l;
                        for h in 0..*heads {
                            let p = &probs[b * heads + h];
                            let (qc, kc, vc) = (h * dh, d + h * dh, 2 * d + h * dh);
                            let q = x.slice(s![rows.clone(), qc..qc + dh]);
                            let k = x.slice(s![rows.clone(), kc..kc + dh]);
                            let v = x.slice(s![rows.clone(), vc..vc + dh]);
                            let go = g.slice(s![rows.clone(), h * dh..(h + 1) * dh]);
                            general_mat_mul(
                                T::one(),
                                &p.t(),
                                &go,
                                T::one(),
                                &mut dx.slice_mut(s![rows.clone(), vc..vc + dh]),
                            );
                            general_mat_mul(T::one(), &go, &v.t(), T::zero(), &mut dp);
                            // dS = P ⊙ (dP - rowsum(P ⊙ dP))
                            for (mut dpr, pr) in dp.outer_iter_mut().zip(p.outer_iter()) {
                                let dot: T = dpr.iter().zip(pr.iter()).map(|(&a, &b)| a * b).sum();
                                Zip::from(&mut dpr).and(&pr).for_each(|ds, &pi| *ds = pi * (*ds - dot));
                            }
                            general_mat_mul(
                                scale,
                                &dp,
                                &k,
                                T::one(),
                                &mut dx.slice_mut(s![rows.clone(), qc..qc + dh]),
                            );
                            general_mat_mul(
                                scale,
                                &dp.t(),
                                &q,
                                T::one(),
                                &mut dx.slice_mut(s![rows.clone(), kc..kc + dh]),
                            );
                        }
                    }
                }
                Op::CrossEntropy { logits, rows, probs } => {
                    if rows.is_empty() {
                        continue;
                    }
                    let scale = g[[0, 0]] / T::of(rows.len() as f64);
                    let dim = self.value(*logits).dim();
                    let dl = buf(&mut grads, *logits, dim);
                    for (k, &(r, t)) in rows.iter().enumerate() {
                        let mut dst = dl.row_mut(r);
                        Zip::from(&mut dst).and(probs.row(k)).for_each(|d, &p| *d += p * scale);
                        dst[t] -= scale;
                    }
                }
                Op::WeightedSum { x, weights } => {
                    let scale = g[[0, 0]];
                    let dx = buf(&mut grads, *x, weights.dim());
                    Zip::from(dx).and(weights).for_each(|d, &w| *d += w * scale);
                }
            }
        }
        Gradients { grads }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::AttentionSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of d f / d inputs[i] for every input entry.
    fn check<F>(inputs: Vec<Array2<f64>>, f: F)
    where
        F: Fn(&mut Tape<'_, f64>, &[Var]) -> Var,
    {
        let eval = |vals: &[Array2<f64>]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|v| tape.param(v)).collect();
            let out = f(&mut tape, &vars);
            tape.value(out)[[0, 0]]
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v)).collect();
        let out = f(&mut tape, &vars);
        let grads = tape.backward(out);
        let h = 1e-5;
        for (i, input) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[i]).cloned().unwrap_or_else(|| Array2::zeros(input.dim()));
            for idx in 0..input.len() {
                let (r, c) = (idx / input.ncols(), idx % input.ncols());
                let mut plus = inputs.clone();
                plus[i][[r, c]] += h;
                let mut minus = inputs.clone();
                minus[i][[r, c]] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic[[r, c]];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(err < 1e-5, "input {i} entry ({r},{c}): analytic {a} numeric {numeric}");
            }
        }
    }

    #[test]
    fn matmul_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random(3, 4, &mut rng);
        check(vec![random(2, 3, &mut rng), random(3, 4, &mut rng)], |t, v| {
            let y = t.matmul(v[0], v[1]);
            t.weighted_sum(y, w.clone().slice_move(s![..2, ..]).to_owned())
        });
        let w2 = random(2, 5, &mut rng);
        check(vec![random(2, 3, &mut rng), random(5, 3, &mut rng)], |t, v| {
            let y = t.matmul_t(v[0], v[1]);
            t.weighted_sum(y, w2.clone())
        });
    }

    #[test]
    fn layer_norm_and_gelu_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random(3, 5, &mut rng);
        check(
            vec![random(3, 5, &mut rng), random(1, 5, &mut rng), random(1, 5, &mut rng)],
            |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2]);
                let z = t.gelu(y);
                t.weighted_sum(z, w.clone())
            },
        );
    }

    #[test]
    fn gather_add_and_bias_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random(4, 3, &mut rng);
        check(
            vec![random(5, 3, &mut rng), random(4, 3, &mut rng), random(1, 3, &mut rng)],
            |t, v| {
                let g = t.gather(v[0], vec![4, 0, 4, 2]);
                let s = t.add(g, v[1]);
                let y = t.add_row(s, v[2]);
                t.weighted_sum(y, w.clone())
            },
        );
    }

    #[test]
    fn attention_gradients_with_prefix_and_padding() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let seq = 5;
        let mut padded = AttentionSpec::single(3, 2);
        padded.len = seq;
        let masks = vec![AttentionSpec::single(seq, 2).mask(), padded.mask()];
        let w = random(2 * seq, 4, &mut rng);
        check(vec![random(2 * seq, 12, &mut rng)], |t, v| {
            let y = t.attention(v[0], 2, seq, masks.clone());
            t.weighted_sum(y, w.clone())
        });
    }

    #[test]
    fn cross_entropy_gradients_and_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let targets = vec![Some(2), None, Some(0)];
        check(vec![random(3, 4, &mut rng)], |t, v| t.cross_entropy(v[0], &targets).0);

        let uniform = Array2::zeros((2, 7));
        let mut tape = Tape::<f64>::new();
        let x = tape.param(&uniform);
        let (loss, per_row) = tape.cross_entropy(x, &[Some(1), Some(6)]);
        assert!((tape.value(loss)[[0, 0]] - 7f64.ln()).abs() < 1e-12);
        assert!(per_row.iter().all(|r| (r.unwrap() - 7f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn fully_masked_rows_yield_zero_output() {
        let mut spec = AttentionSpec::single(2, 0);
        spec.len = 3;
        let qkv = Array2::from_elem((3, 6), 1.0);
        let mut tape = Tape::<f64>::new();
        let x = tape.param(&qkv);
        let y = tape.attention(x, 1, 3, vec![spec.mask()]);
        assert!(tape.value(y).row(2).iter().all(|&v| v == 0.0));
        assert!(tape.value(y).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn unreached_leaves_have_no_gradient() {
        let a = Array2::from_elem((2, 2), 1.0);
        let b = Array2::from_elem((2, 2), 2.0);
        let mut tape = Tape::<f64>::new();
        let va = tape.param(&a);
        let vb = tape.param(&b);
        let out = tape.weighted_sum(va, Array2::from_elem((2, 2), 1.0));
        let grads = tape.backward(out);
        assert!(grads.get(vb).is_none());
        assert_eq!(grads.get(va).unwrap(), &Array2::from_elem((2, 2), 1.0));
    }
}
