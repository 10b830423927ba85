//! Reverse-mode differentiation over matrices. A graph records one forward
//! pass; `backward` consumes it.

use super::params::ParamStore;
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Leaf,
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// Adds a `1 x n` row to every row.
    AddRow(Var, Var),
    Mul(Var, Var),
    /// Multiplies every row by a `1 x n` row.
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Silu(Var),
    Sigmoid(Var),
    Exp(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    consumed: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn as_matrix(t: Tensor) -> Tensor {
        let (r, c) = (t.rows(), t.cols());
        Tensor::matrix(r, c, t.into_data())
    }

    /// Constant: no gradient is reported for it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Self::as_matrix(t), Op::Input)
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Self::as_matrix(t), Op::Leaf)
    }

    /// Leaf holding a named parameter; its gradient is reported by name.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        let t = store
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter `{name}`"))
            .clone();
        let v = self.leaf(t);
        self.params.push((name.to_string(), v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(a);
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        self.push(Tensor::matrix(r, c, data), op)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "elementwise shape mismatch");
        let (r, c) = self.dims(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(Tensor::matrix(r, c, data), op)
    }

    fn row_op(&mut self, a: Var, row: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(self.dims(row), (1, c), "row broadcast mismatch");
        let rv = self.value(row).data().to_vec();
        let data = self
            .value(a)
            .data()
            .chunks(c)
            .flat_map(|xs| xs.iter().zip(&rv).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>())
            .collect();
        self.push(Tensor::matrix(r, c, data), op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        assert_eq!(k, k2, "matmul inner dimension");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        assert_eq!(k, k2, "matmul_nt inner dimension");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), true, &mut out, 0.0);
        self.push(Tensor::matrix(m, n, out), Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        self.row_op(a, row, |x, y| x + y, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        self.row_op(a, row, |x, y| x * y, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.map(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.map(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - m).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        self.push(Tensor::matrix(r, c, data), Op::SoftmaxRows(a))
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
        }
        self.push(Tensor::matrix(r, c, data), Op::LayerNormRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.dims(p).0, r, "concat row mismatch");
                self.dims(p).1
            })
            .collect();
        let c: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push(Tensor::matrix(r, c, data), Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.dims(a);
        assert!(start + len <= c, "column slice out of range");
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&self.value(a).row(i)[start..start + len]);
        }
        self.push(Tensor::matrix(r, len, data), Op::SliceCols(a, start))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Gradients of the scalar `loss` with respect to every leaf.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Usage("graph already consumed by backward".into()));
        }
        if self.dims(loss) != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got {:?}",
                self.dims(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            match node.op {
                Op::Input => continue,
                Op::Leaf => continue,
                _ => {}
            }
            let Some(g) = grads[i].take() else { continue };
            let (r, c) = (node.value.rows(), node.value.cols());
            let y = node.value.data();
            let val = |v: Var| self.nodes[v.0].value.data();
            let nodes = &self.nodes;
            let mut acc = |v: Var, d: Vec<f64>| {
                if matches!(nodes[v.0].op, Op::Input) {
                    return;
                }
                match &mut grads[v.0] {
                    Some(e) => e.iter_mut().zip(&d).for_each(|(e, d)| *e += d),
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Input | Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let k = self.nodes[a.0].value.cols();
                    let mut da = vec![0.0; r * k];
                    gemm(r, c, k, &g, false, val(*b), true, &mut da, 0.0);
                    let mut db = vec![0.0; k * c];
                    gemm(k, r, c, val(*a), true, &g, false, &mut db, 0.0);
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::MatMulNT(a, b) => {
                    let k = self.nodes[a.0].value.cols();
                    let mut da = vec![0.0; r * k];
                    gemm(r, c, k, &g, false, val(*b), false, &mut da, 0.0);
                    let mut db = vec![0.0; c * k];
                    gemm(c, r, k, &g, true, val(*a), false, &mut db, 0.0);
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.iter().map(|x| -x).collect());
                    acc(*a, g);
                }
                Op::AddRow(a, row) => {
                    let mut dr = vec![0.0; c];
                    for gr in g.chunks(c) {
                        dr.iter_mut().zip(gr).for_each(|(d, x)| *d += x);
                    }
                    acc(*row, dr);
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                    let db = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::MulRow(a, row) => {
                    let rv = val(*row);
                    let av = val(*a);
                    let mut dr = vec![0.0; c];
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            let gij = g[i * c + j];
                            da[i * c + j] = gij * rv[j];
                            dr[j] += gij * av[i * c + j];
                        }
                    }
                    acc(*a, da);
                    acc(*row, dr);
                }
                Op::Scale(a, s) => acc(*a, g.iter().map(|x| x * s).collect()),
                Op::AddScalar(a) => acc(*a, g),
                Op::Silu(a) => {
                    let d = g
                        .iter()
                        .zip(val(*a))
                        .map(|(g, &x)| {
                            let s = sigmoid(x);
                            g * s * (1.0 + x * (1.0 - s))
                        })
                        .collect();
                    acc(*a, d);
                }
                Op::Sigmoid(a) => acc(*a, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect()),
                Op::Exp(a) => acc(*a, g.iter().zip(y).map(|(g, y)| g * y).collect()),
                Op::SoftmaxRows(a) => {
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        let (gr, yr) = (&g[i * c..(i + 1) * c], &y[i * c..(i + 1) * c]);
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for j in 0..c {
                            d[i * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(*a, d);
                }
                Op::LayerNormRows(a) => {
                    let x = val(*a);
                    let mut d = vec![0.0; r * c];
                    for i in 0..r {
                        let xr = &x[i * c..(i + 1) * c];
                        let mean = xr.iter().sum::<f64>() / c as f64;
                        let var = xr.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let (gr, yr) = (&g[i * c..(i + 1) * c], &y[i * c..(i + 1) * c]);
                        let gm = gr.iter().sum::<f64>() / c as f64;
                        let gy = gr.iter().zip(yr).map(|(g, y)| g * y).sum::<f64>() / c as f64;
                        for j in 0..c {
                            d[i * c + j] = inv * (gr[j] - gm - yr[j] * gy);
                        }
                    }
                    acc(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.cols();
                        let mut d = Vec::with_capacity(r * w);
                        for i in 0..r {
                            d.extend_from_slice(&g[i * c + off..i * c + off + w]);
                        }
                        acc(*p, d);
                        off += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let ac = self.nodes[a.0].value.cols();
                    let mut d = vec![0.0; r * ac];
                    for i in 0..r {
                        d[i * ac + start..i * ac + start + c].copy_from_slice(&g[i * c..(i + 1) * c]);
                    }
                    acc(*a, d);
                }
                Op::Sum(a) => acc(*a, vec![g[0]; self.nodes[a.0].value.len()]),
                Op::Mean(a) => {
                    let n = self.nodes[a.0].value.len();
                    acc(*a, vec![g[0] / n as f64; n]);
                }
            }
        }
        let params = std::mem::take(&mut self.params);
        Ok(Gradients { grads, params })
    }
}

pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    /// Gradient of a leaf; `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// `(name, gradient)` for every parameter leaf, in creation order. A
    /// parameter loaded more than once appears once per load.
    pub fn params(&self) -> impl Iterator<Item = (&str, Option<&[f64]>)> {
        self.params.iter().map(|(n, v)| (n.as_str(), self.get(*v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng as _;

    fn rand_tensor(r: usize, c: usize, seed: u64) -> Tensor {
        let mut g = stream(seed, "graph-test", 0);
        Tensor::matrix(r, c, (0..r * c).map(|_| g.gen_range(-1.0..1.0)).collect())
    }

    /// Central differences of `f` with respect to every entry of `inputs`.
    fn check(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = f(&mut g, &vars);
        let grads = g.backward(loss).unwrap();
        let eval = |ins: &[Tensor]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
            let l = f(&mut g, &vars);
            g.value(l).data()[0]
        };
        let h = 1e-5;
        for (k, t) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).map(|g| g.to_vec()).unwrap_or(vec![0.0; t.len()]);
            for e in 0..t.len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[e] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[e] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let err = (fd - analytic[e]).abs() / fd.abs().max(analytic[e].abs()).max(1e-6);
                assert!(err < 1e-5, "input {k} entry {e}: fd {fd} vs {}", analytic[e]);
            }
        }
    }

    #[test]
    fn sum_of_leaf_has_unit_gradient() {
        let mut g = Graph::new();
        let p = g.leaf(rand_tensor(3, 4, 1));
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(p).unwrap().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn squared_norm_of_product() {
        // loss = ||W x||^2, dW = 2 (W x) x^T
        let w = rand_tensor(3, 2, 2);
        let x = rand_tensor(2, 1, 3);
        let mut g = Graph::new();
        let wv = g.leaf(w.clone());
        let xv = g.input(x.clone());
        let y = g.matmul(wv, xv);
        let sq = g.mul(y, y);
        let l = g.sum(sq);
        let grads = g.backward(l).unwrap();
        let yv = g.value(y).data().to_vec();
        for i in 0..3 {
            for j in 0..2 {
                let want = 2.0 * yv[i] * x.data()[j];
                assert!((grads.get(wv).unwrap()[i * 2 + j] - want).abs() < 1e-12);
            }
        }
        assert!(grads.get(xv).is_none());
    }

    #[test]
    fn backward_twice_is_a_usage_error() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::scalar(2.0));
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Usage(_))));
    }

    #[test]
    fn op_gradients_match_finite_differences() {
        check(vec![rand_tensor(3, 4, 5), rand_tensor(4, 2, 6)], |g, v| {
            let m = g.matmul(v[0], v[1]);
            let s = g.silu(m);
            g.sum(s)
        });
        check(vec![rand_tensor(3, 4, 7), rand_tensor(5, 4, 8)], |g, v| {
            let m = g.matmul_nt(v[0], v[1]);
            let s = g.softmax_rows(m);
            let w = g.input(rand_tensor(3, 5, 9));
            let p = g.mul(s, w);
            g.sum(p)
        });
        check(vec![rand_tensor(4, 6, 10), rand_tensor(1, 6, 11), rand_tensor(1, 6, 12)], |g, v| {
            let n = g.layer_norm_rows(v[0]);
            let a = g.mul_row(n, v[1]);
            let b = g.add_row(a, v[2]);
            let w = g.input(rand_tensor(4, 6, 13));
            let p = g.mul(b, w);
            g.mean(p)
        });
        check(vec![rand_tensor(2, 3, 14), rand_tensor(2, 2, 15)], |g, v| {
            let c = g.concat_cols(&[v[0], v[1]]);
            let s = g.slice_cols(c, 1, 3);
            let e = g.exp(s);
            let sg = g.sigmoid(v[1]);
            let sc = g.scale(sg, -0.7);
            let sc = g.add_scalar(sc, 0.3);
            let d = g.sub(e, e);
            let t = g.sum(d);
            let u = g.sum(e);
            let w = g.sum(sc);
            let tu = g.add(t, u);
            g.add(tu, w)
        });
    }
}
