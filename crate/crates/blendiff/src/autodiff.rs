//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Operations append nodes to an acyclic graph; each node keeps its
//! forward value and, per parent, a closure mapping the output gradient
//! to that parent's gradient contribution. `backward` walks the tape in
//! reverse insertion order (parents always precede children) and
//! accumulates gradients for every node.
//!
//! The op set is exactly what the sequence models here need: dense
//! matrix products, 1D convolution, group/layer normalization, biased
//! row softmax, slicing/concatenation, and elementwise nonlinearities.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

type Vjp = Box<dyn Fn(&Tensor) -> Tensor>;

struct Node {
    value: Tensor,
    parents: Vec<(usize, Vjp)>,
}

struct Inner {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

#[derive(Clone)]
pub struct Graph {
    inner: Rc<RefCell<Inner>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            inner: Rc::new(RefCell::new(Inner {
                nodes: Vec::new(),
                grads: Vec::new(),
            })),
        }
    }

    /// Insert a leaf value (parameter or constant input).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Vec::new())
    }

    pub fn scalar(&self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor, parents: Vec<(usize, Vjp)>) -> Var {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len();
        inner.nodes.push(Node { value, parents });
        inner.grads.push(None);
        Var {
            graph: self.clone(),
            idx,
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone)]
pub struct Var {
    graph: Graph,
    idx: usize,
}

impl Var {
    pub fn value(&self) -> Tensor {
        self.graph.inner.borrow().nodes[self.idx].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.inner.borrow().nodes[self.idx]
            .value
            .shape()
            .to_vec()
    }

    /// Gradient accumulated by the last `backward` call, zeros if this
    /// node was not reached.
    pub fn grad(&self) -> Tensor {
        let inner = self.graph.inner.borrow();
        match &inner.grads[self.idx] {
            Some(g) => g.clone(),
            None => Tensor::zeros(inner.nodes[self.idx].value.shape().to_vec()),
        }
    }

    /// Backpropagate from a scalar loss, filling gradients for every
    /// node that influences it.
    pub fn backward(&self) -> Result<()> {
        {
            let inner = self.graph.inner.borrow();
            let v = &inner.nodes[self.idx].value;
            if !v.is_scalar() {
                return Err(Error::NonScalarLoss(v.shape().to_vec()));
            }
        }
        let mut inner = self.graph.inner.borrow_mut();
        let n = inner.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[self.idx] = Some(Tensor::scalar(1.0));
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            for (pidx, vjp) in &inner.nodes[i].parents {
                let contrib = vjp(&g);
                match &mut grads[*pidx] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }
        inner.grads = grads;
        Ok(())
    }

    fn unary(&self, value: Tensor, vjp: Vjp) -> Var {
        self.graph.push(value, vec![(self.idx, vjp)])
    }

    fn binary(&self, other: &Var, value: Tensor, vjp_a: Vjp, vjp_b: Vjp) -> Var {
        assert!(
            Rc::ptr_eq(&self.graph.inner, &other.graph.inner),
            "vars must share a graph"
        );
        self.graph
            .push(value, vec![(self.idx, vjp_a), (other.idx, vjp_b)])
    }

    pub fn add(&self, other: &Var) -> Var {
        let v = self.value().add(&other.value());
        self.binary(
            other,
            v,
            Box::new(|g| g.clone()),
            Box::new(|g| g.clone()),
        )
    }

    pub fn sub(&self, other: &Var) -> Var {
        let v = self.value().sub(&other.value());
        self.binary(
            other,
            v,
            Box::new(|g| g.clone()),
            Box::new(|g| g.scale(-1.0)),
        )
    }

    pub fn mul(&self, other: &Var) -> Var {
        let a = self.value();
        let b = other.value();
        let v = a.mul(&b);
        self.binary(
            other,
            v,
            Box::new(move |g| g.mul(&b)),
            Box::new(move |g| g.mul(&a)),
        )
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn scale(&self, s: f64) -> Var {
        self.unary(self.value().scale(s), Box::new(move |g| g.scale(s)))
    }

    pub fn add_scalar(&self, s: f64) -> Var {
        self.unary(self.value().map(|x| x + s), Box::new(|g| g.clone()))
    }

    pub fn matmul(&self, other: &Var) -> Var {
        let a = self.value();
        let b = other.value();
        let v = a.matmul(&b);
        let a2 = a.clone();
        let b2 = b.clone();
        self.binary(
            other,
            v,
            Box::new(move |g| g.matmul(&b2.transpose())),
            Box::new(move |g| a2.transpose().matmul(g)),
        )
    }

    pub fn transpose(&self) -> Var {
        self.unary(self.value().transpose(), Box::new(|g| g.transpose()))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Var {
        let old = self.shape();
        self.unary(
            self.value().reshape(shape),
            Box::new(move |g| g.reshape(old.clone())),
        )
    }

    pub fn slice_rows(&self, from: usize, to: usize) -> Var {
        let v = self.value();
        let shape = v.shape().to_vec();
        let out = v.slice_rows(from, to);
        self.unary(
            out,
            Box::new(move |g| {
                let mut dx = Tensor::zeros(shape.clone());
                let c = shape[1];
                dx.data_mut()[from * c..to * c].copy_from_slice(g.data());
                dx
            }),
        )
    }

    pub fn slice_cols(&self, from: usize, to: usize) -> Var {
        let v = self.value();
        let (r, c) = (v.rows(), v.cols());
        let out = v.slice_cols(from, to);
        self.unary(
            out,
            Box::new(move |g| {
                let mut dx = Tensor::zeros(vec![r, c]);
                let w = to - from;
                for i in 0..r {
                    for j in 0..w {
                        dx.data_mut()[i * c + from + j] = g.data()[i * w + j];
                    }
                }
                dx
            }),
        )
    }

    pub fn concat_cols(parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let values: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().collect();
        let out = Tensor::concat_cols(&refs);
        let mut parents: Vec<(usize, Vjp)> = Vec::with_capacity(parts.len());
        let mut offset = 0;
        for (p, v) in parts.iter().zip(&values) {
            let (from, to) = (offset, offset + v.cols());
            offset = to;
            parents.push((
                p.idx,
                Box::new(move |g: &Tensor| g.slice_cols(from, to)) as Vjp,
            ));
        }
        parts[0].graph.push(out, parents)
    }

    /// Stack a rank-1 vector as `n` identical rows.
    pub fn broadcast_rows(&self, n: usize) -> Var {
        let v = self.value();
        assert_eq!(v.rank(), 1, "broadcast_rows expects a rank-1 vector");
        let out = Tensor::broadcast_rows(v.data(), n);
        let c = v.numel();
        self.unary(
            out,
            Box::new(move |g| {
                let mut dv = Tensor::zeros(vec![c]);
                for i in 0..n {
                    for j in 0..c {
                        dv.data_mut()[j] += g.data()[i * c + j];
                    }
                }
                dv
            }),
        )
    }

    /// Add a rank-1 bias vector to every row of a matrix.
    pub fn add_bias_rows(&self, bias: &Var) -> Var {
        let x = self.value();
        let b = bias.value();
        assert_eq!(b.rank(), 1);
        assert_eq!(x.cols(), b.numel());
        let (n, c) = (x.rows(), x.cols());
        let mut out = x.clone();
        for i in 0..n {
            for j in 0..c {
                out.data_mut()[i * c + j] += b.data()[j];
            }
        }
        self.binary(
            bias,
            out,
            Box::new(|g| g.clone()),
            Box::new(move |g| {
                let mut dv = Tensor::zeros(vec![c]);
                for i in 0..n {
                    for j in 0..c {
                        dv.data_mut()[j] += g.data()[i * c + j];
                    }
                }
                dv
            }),
        )
    }

    /// 1D convolution along rows: input `[n, c_in]`, weight
    /// `[c_out, c_in, k]` (k odd), bias `[c_out]`, zero-padded to keep
    /// `n` rows.
    pub fn conv1d(&self, weight: &Var, bias: &Var) -> Var {
        let x = self.value();
        let w = weight.value();
        let b = bias.value();
        assert_eq!(w.rank(), 3);
        let (n, c_in) = (x.rows(), x.cols());
        let (c_out, w_cin, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        assert_eq!(c_in, w_cin, "conv1d channel mismatch");
        assert_eq!(b.numel(), c_out);
        assert!(k % 2 == 1, "conv1d kernel must be odd");
        let pad = k / 2;

        let out = conv1d_forward(&x, &w, b.data(), n, c_in, c_out, k, pad);
        let (x2, w2) = (x.clone(), w.clone());
        let w3 = w.clone();
        let parents: Vec<(usize, Vjp)> = vec![
            (
                self.idx,
                Box::new(move |g: &Tensor| {
                    // dx[m, ci] = sum_{co, j} g[m - j + pad, co] * w[co, ci, j]
                    let mut dx = Tensor::zeros(vec![n, c_in]);
                    for m in 0..n {
                        for j in 0..k {
                            let nn = m as isize - j as isize + pad as isize;
                            if nn < 0 || nn >= n as isize {
                                continue;
                            }
                            let nn = nn as usize;
                            for co in 0..c_out {
                                let gv = g.data()[nn * c_out + co];
                                if gv == 0.0 {
                                    continue;
                                }
                                for ci in 0..c_in {
                                    dx.data_mut()[m * c_in + ci] +=
                                        gv * w3.data()[(co * c_in + ci) * k + j];
                                }
                            }
                        }
                    }
                    dx
                }) as Vjp,
            ),
            (
                weight.idx,
                Box::new(move |g: &Tensor| {
                    let mut dw = Tensor::zeros(vec![c_out, c_in, k]);
                    for nn in 0..n {
                        for j in 0..k {
                            let m = nn as isize + j as isize - pad as isize;
                            if m < 0 || m >= n as isize {
                                continue;
                            }
                            let m = m as usize;
                            for co in 0..c_out {
                                let gv = g.data()[nn * c_out + co];
                                if gv == 0.0 {
                                    continue;
                                }
                                for ci in 0..c_in {
                                    dw.data_mut()[(co * c_in + ci) * k + j] +=
                                        gv * x2.data()[m * c_in + ci];
                                }
                            }
                        }
                    }
                    let _ = &w2;
                    dw
                }) as Vjp,
            ),
            (
                bias.idx,
                Box::new(move |g: &Tensor| {
                    let mut db = Tensor::zeros(vec![c_out]);
                    for nn in 0..n {
                        for co in 0..c_out {
                            db.data_mut()[co] += g.data()[nn * c_out + co];
                        }
                    }
                    db
                }) as Vjp,
            ),
        ];
        self.graph.push(out, parents)
    }

    /// Group normalization over `[n, c]` with per-channel scale/shift.
    /// Statistics are taken per row over the channels of each group, so
    /// normalization never mixes information across frames.
    pub fn group_norm(&self, gamma: &Var, beta: &Var, groups: usize) -> Var {
        let x = self.value();
        let (n, c) = (x.rows(), x.cols());
        assert!(groups > 0 && c % groups == 0, "channels must divide into groups");
        let cg = c / groups;
        let eps = 1e-5;

        let mut xhat = Tensor::zeros(vec![n, c]);
        let mut inv_std = vec![0.0f64; n * groups];
        for i in 0..n {
            for g in 0..groups {
                let (c0, c1) = (g * cg, (g + 1) * cg);
                let m = cg as f64;
                let mut mean = 0.0;
                for j in c0..c1 {
                    mean += x.at(i, j);
                }
                mean /= m;
                let mut var = 0.0;
                for j in c0..c1 {
                    let d = x.at(i, j) - mean;
                    var += d * d;
                }
                var /= m;
                let s = 1.0 / (var + eps).sqrt();
                inv_std[i * groups + g] = s;
                for j in c0..c1 {
                    xhat.set(i, j, (x.at(i, j) - mean) * s);
                }
            }
        }
        let gm = gamma.value();
        let bt = beta.value();
        assert_eq!(gm.numel(), c);
        assert_eq!(bt.numel(), c);
        let mut out = Tensor::zeros(vec![n, c]);
        for i in 0..n {
            for j in 0..c {
                out.set(i, j, gm.data()[j] * xhat.at(i, j) + bt.data()[j]);
            }
        }

        let xhat_x = xhat.clone();
        let gm2 = gm.clone();
        let xhat_g = xhat.clone();
        let parents: Vec<(usize, Vjp)> = vec![
            (
                self.idx,
                Box::new(move |g: &Tensor| {
                    let mut dx = Tensor::zeros(vec![n, c]);
                    for i in 0..n {
                        for grp in 0..groups {
                            let (c0, c1) = (grp * cg, (grp + 1) * cg);
                            let m = cg as f64;
                            let mut mean_dxhat = 0.0;
                            let mut mean_dxhat_xhat = 0.0;
                            for j in c0..c1 {
                                let dxh = g.at(i, j) * gm2.data()[j];
                                mean_dxhat += dxh;
                                mean_dxhat_xhat += dxh * xhat_x.at(i, j);
                            }
                            mean_dxhat /= m;
                            mean_dxhat_xhat /= m;
                            for j in c0..c1 {
                                let dxh = g.at(i, j) * gm2.data()[j];
                                dx.set(
                                    i,
                                    j,
                                    inv_std[i * groups + grp]
                                        * (dxh
                                            - mean_dxhat
                                            - xhat_x.at(i, j) * mean_dxhat_xhat),
                                );
                            }
                        }
                    }
                    dx
                }) as Vjp,
            ),
            (
                gamma.idx,
                Box::new(move |g: &Tensor| {
                    let mut dg = Tensor::zeros(vec![c]);
                    for i in 0..n {
                        for j in 0..c {
                            dg.data_mut()[j] += g.at(i, j) * xhat_g.at(i, j);
                        }
                    }
                    dg
                }) as Vjp,
            ),
            (
                beta.idx,
                Box::new(move |g: &Tensor| {
                    let mut db = Tensor::zeros(vec![c]);
                    for i in 0..n {
                        for j in 0..c {
                            db.data_mut()[j] += g.at(i, j);
                        }
                    }
                    db
                }) as Vjp,
            ),
        ];
        self.graph.push(out, parents)
    }

    /// Per-row layer normalization with per-channel scale/shift.
    pub fn layer_norm(&self, gamma: &Var, beta: &Var) -> Var {
        let x = self.value();
        let (n, c) = (x.rows(), x.cols());
        let eps = 1e-5;
        let mut xhat = Tensor::zeros(vec![n, c]);
        let mut inv_std = vec![0.0f64; n];
        for i in 0..n {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[i] = s;
            for j in 0..c {
                xhat.set(i, j, (row[j] - mean) * s);
            }
        }
        let gm = gamma.value();
        let bt = beta.value();
        let mut out = Tensor::zeros(vec![n, c]);
        for i in 0..n {
            for j in 0..c {
                out.set(i, j, gm.data()[j] * xhat.at(i, j) + bt.data()[j]);
            }
        }
        let xhat_x = xhat.clone();
        let gm2 = gm.clone();
        let xhat_g = xhat;
        let parents: Vec<(usize, Vjp)> = vec![
            (
                self.idx,
                Box::new(move |g: &Tensor| {
                    let mut dx = Tensor::zeros(vec![n, c]);
                    for i in 0..n {
                        let m = c as f64;
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..c {
                            let dxh = g.at(i, j) * gm2.data()[j];
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xhat_x.at(i, j);
                        }
                        mean_dxhat /= m;
                        mean_dxhat_xhat /= m;
                        for j in 0..c {
                            let dxh = g.at(i, j) * gm2.data()[j];
                            dx.set(
                                i,
                                j,
                                inv_std[i]
                                    * (dxh - mean_dxhat - xhat_x.at(i, j) * mean_dxhat_xhat),
                            );
                        }
                    }
                    dx
                }) as Vjp,
            ),
            (
                gamma.idx,
                Box::new(move |g: &Tensor| {
                    let mut dg = Tensor::zeros(vec![c]);
                    for i in 0..n {
                        for j in 0..c {
                            dg.data_mut()[j] += g.at(i, j) * xhat_g.at(i, j);
                        }
                    }
                    dg
                }) as Vjp,
            ),
            (
                beta.idx,
                Box::new(move |g: &Tensor| {
                    let mut db = Tensor::zeros(vec![c]);
                    for i in 0..n {
                        for j in 0..c {
                            db.data_mut()[j] += g.at(i, j);
                        }
                    }
                    db
                }) as Vjp,
            ),
        ];
        self.graph.push(out, parents)
    }

    pub fn silu(&self) -> Var {
        let x = self.value();
        let out = x.map(|v| v * sigmoid(v));
        self.unary(
            out,
            Box::new(move |g| {
                g.zip(&x, |gv, xv| {
                    let s = sigmoid(xv);
                    gv * s * (1.0 + xv * (1.0 - s))
                })
            }),
        )
    }

    pub fn relu(&self) -> Var {
        let x = self.value();
        let out = x.map(|v| v.max(0.0));
        self.unary(
            out,
            Box::new(move |g| g.zip(&x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })),
        )
    }

    pub fn tanh(&self) -> Var {
        let y = self.value().map(f64::tanh);
        let y2 = y.clone();
        self.unary(y, Box::new(move |g| g.zip(&y2, |gv, yv| gv * (1.0 - yv * yv))))
    }

    pub fn exp(&self) -> Var {
        let y = self.value().map(f64::exp);
        let y2 = y.clone();
        self.unary(y, Box::new(move |g| g.mul(&y2)))
    }

    /// Elementwise absolute value with sign(0) = 0.
    pub fn abs(&self) -> Var {
        let x = self.value();
        let out = x.map(f64::abs);
        self.unary(
            out,
            Box::new(move |g| {
                g.zip(&x, |gv, xv| {
                    if xv > 0.0 {
                        gv
                    } else if xv < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                })
            }),
        )
    }

    pub fn sum(&self) -> Var {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.unary(
            Tensor::scalar(x.sum()),
            Box::new(move |g| Tensor::filled(shape.clone(), g.item())),
        )
    }

    pub fn mean(&self) -> Var {
        let x = self.value();
        let shape = x.shape().to_vec();
        let n = x.numel() as f64;
        self.unary(
            Tensor::scalar(x.mean()),
            Box::new(move |g| Tensor::filled(shape.clone(), g.item() / n)),
        )
    }

    /// Row softmax of `x + bias` where `bias` is a constant matrix that
    /// may contain `-inf` sentinels; masked entries get exactly zero
    /// probability. Rows must keep at least one finite entry.
    pub fn softmax_rows_bias(&self, bias: &Tensor) -> Var {
        let x = self.value();
        assert_eq!(x.shape(), bias.shape(), "softmax bias shape mismatch");
        let (n, m) = (x.rows(), x.cols());
        let mut p = Tensor::zeros(vec![n, m]);
        for i in 0..n {
            let mut mx = f64::NEG_INFINITY;
            let mut has_nan = false;
            for j in 0..m {
                let z = x.at(i, j) + bias.at(i, j);
                has_nan |= z.is_nan();
                mx = mx.max(z);
            }
            if has_nan {
                // let non-finite values surface at the loss check
                for j in 0..m {
                    p.set(i, j, f64::NAN);
                }
                continue;
            }
            assert!(mx.is_finite(), "softmax row {i} fully masked");
            let mut z = 0.0;
            for j in 0..m {
                let e = (x.at(i, j) + bias.at(i, j) - mx).exp();
                p.set(i, j, e);
                z += e;
            }
            for j in 0..m {
                let v = p.at(i, j) / z;
                p.set(i, j, v);
            }
        }
        let p2 = p.clone();
        self.unary(
            p,
            Box::new(move |g| {
                let mut dx = Tensor::zeros(vec![n, m]);
                for i in 0..n {
                    let mut dot = 0.0;
                    for j in 0..m {
                        dot += g.at(i, j) * p2.at(i, j);
                    }
                    for j in 0..m {
                        dx.set(i, j, p2.at(i, j) * (g.at(i, j) - dot));
                    }
                }
                dx
            }),
        )
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn conv1d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &[f64],
    n: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
    pad: usize,
) -> Tensor {
    let mut out = Tensor::zeros(vec![n, c_out]);
    for nn in 0..n {
        for co in 0..c_out {
            let mut acc = b[co];
            for j in 0..k {
                let m = nn as isize + j as isize - pad as isize;
                if m < 0 || m >= n as isize {
                    continue;
                }
                let m = m as usize;
                for ci in 0..c_in {
                    acc += w.data()[(co * c_in + ci) * k + j] * x.data()[m * c_in + ci];
                }
            }
            out.set(nn, co, acc);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_gradients() {
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let y = g.leaf(Tensor::scalar(3.0));
        let loss = x.mul(&y).sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().item(), 3.0);
        assert_eq!(y.grad().item(), 2.0);
    }

    #[test]
    fn l1_subgradient_sign_zero_is_zero() {
        let g = Graph::new();
        let x = g.leaf(Tensor::new(vec![3], vec![-1.0, 2.0, 0.0]));
        let loss = x.abs().sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().data(), &[-1.0, 1.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![2, 2]));
        match x.backward() {
            Err(Error::NonScalarLoss(shape)) => assert_eq!(shape, vec![2, 2]),
            other => panic!("expected NonScalarLoss, got {other:?}"),
        }
    }

    #[test]
    fn fan_out_accumulates() {
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        // x*x + x => 2x + 1 = 7
        let loss = x.mul(&x).add(&x).sum();
        loss.backward().unwrap();
        assert_eq!(x.grad().item(), 7.0);
    }

    #[test]
    fn matmul_gradient_known() {
        let g = Graph::new();
        let a = g.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = g.leaf(Tensor::from_rows(&[vec![5.0], vec![6.0]]));
        let loss = a.matmul(&b).sum();
        loss.backward().unwrap();
        // d/dA sum(A b) = 1 b^T broadcast over rows
        assert_eq!(a.grad().data(), &[5.0, 6.0, 5.0, 6.0]);
        // d/db = A^T 1
        assert_eq!(b.grad().data(), &[4.0, 6.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_mask_exact_zero() {
        let g = Graph::new();
        let x = g.leaf(Tensor::from_rows(&[vec![0.3, -0.7, 1.1]]));
        let bias = Tensor::from_rows(&[vec![0.0, f64::NEG_INFINITY, 0.0]]);
        let p = x.softmax_rows_bias(&bias);
        let v = p.value();
        assert_eq!(v.at(0, 1), 0.0);
        assert!((v.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn graph_reuse_backward_resets() {
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let l1 = x.mul(&x).sum();
        l1.backward().unwrap();
        assert_eq!(x.grad().item(), 4.0);
        let l2 = x.scale(3.0).sum();
        l2.backward().unwrap();
        assert_eq!(x.grad().item(), 3.0);
    }
}
