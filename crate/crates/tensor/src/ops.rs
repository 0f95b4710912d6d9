//! Differentiable elementwise, reduction, shape and linear-algebra ops.

use crate::error::{contract, shape_err, Result};
use crate::graph::Var;
use crate::tensor::{matmul_nt, matmul_raw, matmul_tn, numel, strides, Tensor};

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(shape_err(op, a, b)),
        };
    }
    Ok(out)
}

/// For every flat output index, the flat index into an input of `in_shape`
/// broadcast to `out_shape`.
fn broadcast_map(out_shape: &[usize], in_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let pad = rank - in_shape.len();
    let in_strides = strides(in_shape);
    let eff: Vec<usize> = (0..rank)
        .map(|i| {
            if i < pad || in_shape[i - pad] == 1 {
                0
            } else {
                in_strides[i - pad]
            }
        })
        .collect();
    let n = numel(out_shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

fn reduce_to(grad: &[f64], map: &Option<Vec<usize>>, shape: &[usize]) -> Tensor {
    match map {
        None => Tensor::from_parts(shape.to_vec(), grad.to_vec()),
        Some(m) => {
            let mut out = vec![0.0; numel(shape)];
            for (g, &i) in grad.iter().zip(m) {
                out[i] += g;
            }
            Tensor::from_parts(shape.to_vec(), out)
        }
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl Var {
    fn binary(&self, other: &Var, kind: BinOp) -> Result<Var> {
        let name = match kind {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        };
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        let out_shape = broadcast_shape(name, &sa, &sb)?;
        let (ma, mb) = if sa == out_shape && sb == out_shape {
            (None, None)
        } else {
            (
                (sa != out_shape).then(|| broadcast_map(&out_shape, &sa)),
                (sb != out_shape).then(|| broadcast_map(&out_shape, &sb)),
            )
        };
        let a = self.value_rc();
        let b = other.value_rc();
        let n = numel(&out_shape);
        let ia = |i: usize| ma.as_ref().map_or(i, |m| m[i]);
        let ib = |i: usize| mb.as_ref().map_or(i, |m| m[i]);
        let (ad, bd) = (a.data(), b.data());
        let data: Vec<f64> = (0..n)
            .map(|i| {
                let (x, y) = (ad[ia(i)], bd[ib(i)]);
                match kind {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                }
            })
            .collect();
        let value = Tensor::from_parts(out_shape, data);
        Ok(self
            .graph()
            .record(name, &[self, other], value, move |g, needs| {
                let gd = g.data();
                let (ad, bd) = (a.data(), b.data());
                let at = |i: usize| ma.as_ref().map_or(i, |m| m[i]);
                let bt = |i: usize| mb.as_ref().map_or(i, |m| m[i]);
                let ga = needs[0].then(|| {
                    let local: Vec<f64> = match kind {
                        BinOp::Add | BinOp::Sub => gd.to_vec(),
                        BinOp::Mul => (0..gd.len()).map(|i| gd[i] * bd[bt(i)]).collect(),
                        BinOp::Div => (0..gd.len()).map(|i| gd[i] / bd[bt(i)]).collect(),
                    };
                    reduce_to(&local, &ma, &sa)
                });
                let gb = needs[1].then(|| {
                    let local: Vec<f64> = match kind {
                        BinOp::Add => gd.to_vec(),
                        BinOp::Sub => gd.iter().map(|v| -v).collect(),
                        BinOp::Mul => (0..gd.len()).map(|i| gd[i] * ad[at(i)]).collect(),
                        BinOp::Div => (0..gd.len())
                            .map(|i| {
                                let y = bd[bt(i)];
                                -gd[i] * ad[at(i)] / (y * y)
                            })
                            .collect(),
                    };
                    reduce_to(&local, &mb, &sb)
                });
                vec![ga, gb]
            }))
    }

    /// Broadcasting sum.
    pub fn add(&self, other: &Var) -> Result<Var> {
        self.binary(other, BinOp::Add)
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        self.binary(other, BinOp::Sub)
    }

    /// Broadcasting elementwise product.
    pub fn mul(&self, other: &Var) -> Result<Var> {
        self.binary(other, BinOp::Mul)
    }

    pub fn div(&self, other: &Var) -> Result<Var> {
        self.binary(other, BinOp::Div)
    }

    /// Elementwise map with derivative `df(x, y)` expressed through input and output.
    fn unary(
        &self,
        name: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let x = self.value_rc();
        let out = x.map(f);
        let y = std::rc::Rc::new(out.clone());
        self.graph().record(name, &[self], out, move |g, _| {
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .zip(y.data())
                .map(|((gv, &xv), &yv)| gv * df(xv, yv))
                .collect();
            vec![Some(Tensor::from_parts(g.shape().to_vec(), data))]
        })
    }

    pub fn scale(&self, k: f64) -> Var {
        self.unary("scale", move |x| k * x, move |_, _| k)
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        self.unary("add_scalar", move |x| x + c, |_, _| 1.0)
    }

    /// `c - x`.
    pub fn rsub_scalar(&self, c: f64) -> Var {
        self.unary("rsub_scalar", move |x| c - x, |_, _| -1.0)
    }

    pub fn exp(&self) -> Var {
        self.unary("exp", f64::exp, |_, y| y)
    }

    pub fn log(&self) -> Var {
        self.unary("log", f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Var {
        self.unary("sqrt", f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(&self) -> Var {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    pub fn relu(&self) -> Var {
        self.unary(
            "relu",
            |x| x.max(0.0),
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    pub fn tanh(&self) -> Var {
        self.unary("tanh", f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Var {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping applied.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var {
        self.unary(
            "clamp",
            move |x| x.clamp(lo, hi),
            move |x, _| if x < lo || x > hi { 0.0 } else { 1.0 },
        )
    }

    pub fn sum(&self) -> Var {
        let shape = self.shape().to_vec();
        let value = Tensor::scalar(self.value().sum());
        self.graph().record("sum", &[self], value, move |g, _| {
            vec![Some(Tensor::full(shape.clone(), g.item()))]
        })
    }

    pub fn mean(&self) -> Var {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Var> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(contract(
                "sum_axis",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value().data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let value = Tensor::from_parts(out_shape, data);
        Ok(self
            .graph()
            .record("sum_axis", &[self], value, move |g, _| {
                let gd = g.data();
                let mut out = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for a in 0..len {
                        let base = (o * len + a) * inner;
                        out[base..base + inner].copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(Tensor::from_parts(shape.clone(), out))]
            }))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        let old = self.shape().to_vec();
        let value = self.value().reshape(shape)?;
        Ok(self.graph().record("reshape", &[self], value, move |g, _| {
            vec![Some(Tensor::from_parts(old.clone(), g.data().to_vec()))]
        }))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var> {
        let value = self.value().permute(perm)?;
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(self.graph().record("permute", &[self], value, move |g, _| {
            vec![Some(g.permute(&inverse).expect("inverse permutation"))]
        }))
    }

    /// 2-D transpose.
    pub fn t(&self) -> Result<Var> {
        if self.value().rank() != 2 {
            return Err(contract(
                "transpose",
                format!("expected rank 2, got {:?}", self.shape()),
            ));
        }
        self.permute(&[1, 0])
    }

    /// Matrix product `[m,k]·[k,n] → [m,n]`.
    pub fn matmul(&self, other: &Var) -> Result<Var> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let a = self.value_rc();
        let b = other.value_rc();
        let value = Tensor::from_parts(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n));
        Ok(self
            .graph()
            .record("matmul", &[self, other], value, move |g, needs| {
                let ga = needs[0].then(|| {
                    Tensor::from_parts(vec![m, k], matmul_nt(g.data(), b.data(), m, n, k))
                });
                let gb = needs[1].then(|| {
                    Tensor::from_parts(vec![k, n], matmul_tn(a.data(), g.data(), m, k, n))
                });
                vec![ga, gb]
            }))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(contract(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let src = self.value().data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let value = Tensor::from_parts(out_shape, data);
        Ok(self.graph().record("narrow", &[self], value, move |g, _| {
            let mut out = vec![0.0; numel(&shape)];
            let gd = g.data();
            for o in 0..outer {
                let base = (o * full + start) * inner;
                out[base..base + len * inner]
                    .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::from_parts(shape.clone(), out))]
        }))
    }

    /// Numerically stable softmax along `axis` (max subtracted first).
    pub fn softmax(&self, axis: usize) -> Result<Var> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(contract(
                "softmax",
                format!("axis {axis} out of range for {shape:?}"),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value().data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let max = (0..len)
                    .map(|a| src[at(a)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for a in 0..len {
                    let e = (src[at(a)] - max).exp();
                    data[at(a)] = e;
                    total += e;
                }
                for a in 0..len {
                    data[at(a)] /= total;
                }
            }
        }
        let value = Tensor::from_parts(shape.clone(), data);
        let y = std::rc::Rc::new(value.clone());
        Ok(self.graph().record("softmax", &[self], value, move |g, _| {
            let (gd, yd) = (g.data(), y.data());
            let mut out = vec![0.0; gd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |a: usize| (o * len + a) * inner + i;
                    let dot: f64 = (0..len).map(|a| gd[at(a)] * yd[at(a)]).sum();
                    for a in 0..len {
                        out[at(a)] = yd[at(a)] * (gd[at(a)] - dot);
                    }
                }
            }
            vec![Some(Tensor::from_parts(shape.clone(), out))]
        }))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&self, eps: f64) -> Result<Var> {
        let shape = self.shape().to_vec();
        let Some(&d) = shape.last() else {
            return Err(contract("layer_norm", "rank-0 input"));
        };
        let rows = numel(&shape) / d.max(1);
        let src = self.value().data();
        let mut data = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for (o, v) in data[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let value = Tensor::from_parts(shape.clone(), data);
        let xhat = std::rc::Rc::new(value.clone());
        Ok(self
            .graph()
            .record("layer_norm", &[self], value, move |g, _| {
                let (gd, xd) = (g.data(), xhat.data());
                let mut out = vec![0.0; gd.len()];
                for r in 0..rows {
                    let gr = &gd[r * d..(r + 1) * d];
                    let xr = &xd[r * d..(r + 1) * d];
                    let mg = gr.iter().sum::<f64>() / d as f64;
                    let mgx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        out[r * d + j] = inv_std[r] * (gr[j] - mg - xr[j] * mgx);
                    }
                }
                vec![Some(Tensor::from_parts(shape.clone(), out))]
            }))
    }
}

/// Concatenates along `axis`; all other dimensions must agree.
pub fn concat(parts: &[Var], axis: usize) -> Result<Var> {
    let Some(first) = parts.first() else {
        return Err(contract("concat", "no inputs"));
    };
    let base = first.shape().to_vec();
    if axis >= base.len() {
        return Err(contract(
            "concat",
            format!("axis {axis} out of range for {base:?}"),
        ));
    }
    for p in parts {
        let s = p.shape();
        if s.len() != base.len()
            || s.iter()
                .zip(&base)
                .enumerate()
                .any(|(i, (a, b))| i != axis && a != b)
        {
            return Err(shape_err("concat", &base, s));
        }
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    let total: usize = lens.iter().sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (p, &len) in parts.iter().zip(&lens) {
            let src = p.value().data();
            data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
        }
    }
    let mut out_shape = base.clone();
    out_shape[axis] = total;
    let value = Tensor::from_parts(out_shape, data);
    let refs: Vec<&Var> = parts.iter().collect();
    let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
    Ok(first
        .graph()
        .record("concat", &refs, value, move |g, needs| {
            let gd = g.data();
            let mut offset = 0;
            let mut grads = Vec::with_capacity(lens.len());
            for (k, &len) in lens.iter().enumerate() {
                if needs[k] {
                    let mut out = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        out.extend_from_slice(&gd[start..start + len * inner]);
                    }
                    grads.push(Some(Tensor::from_parts(shapes[k].clone(), out)));
                } else {
                    grads.push(None);
                }
                offset += len;
            }
            grads
        }))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Graph;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(
            broadcast_shape("t", &[3, 1, 4], &[2, 1]).unwrap(),
            vec![3, 2, 4]
        );
        assert!(broadcast_shape("t", &[3], &[4]).is_err());
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let g = Graph::new();
        let x = g.leaf(Tensor::ones([2, 3]));
        let b = g.leaf(Tensor::ones([3]));
        let y = x.add(&b).unwrap().sum();
        let grads = g.backward(&y).unwrap();
        assert_eq!(grads.get(&b).unwrap().data(), &[2.0, 2.0, 2.0]);
        assert_eq!(grads.get(&x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn softmax_symmetric_and_stable() {
        let g = Graph::new();
        let s = g.constant(Tensor::zeros([3])).softmax(0).unwrap();
        for v in s.value().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = g
            .constant(Tensor::new([2], vec![1000.0, 0.0]).unwrap())
            .softmax(0)
            .unwrap();
        assert!((s.value().data()[0] - 1.0).abs() < 1e-12);
        assert!(s.value().data()[1].abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_symmetric() {
        assert_eq!(sigmoid(0.0), 0.5);
        for x in [0.3, 2.0, 40.0, 800.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_identity_and_annihilation() {
        let g = Graph::new();
        let i2 = g.constant(Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = g.constant(Tensor::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        assert_eq!(i2.matmul(&m).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
        let a = g.constant(Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let b = g.constant(Tensor::new([2, 1], vec![0.0, 5.0]).unwrap());
        assert_eq!(a.matmul(&b).unwrap().value().data(), &[0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let g = Graph::new();
        let a = g.constant(Tensor::zeros([2, 3]));
        let b = g.constant(Tensor::zeros([2, 3]));
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn concat_and_narrow_roundtrip() {
        let g = Graph::new();
        let a = g.leaf(Tensor::from_fn([2, 3], |i| i as f64));
        let b = g.leaf(Tensor::from_fn([2, 2], |i| 10.0 + i as f64));
        let c = concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.shape(), &[2, 5]);
        assert_eq!(
            c.value().data(),
            &[0.0, 1.0, 2.0, 10.0, 11.0, 3.0, 4.0, 5.0, 12.0, 13.0]
        );
        let back = c.narrow(1, 3, 2).unwrap();
        assert_eq!(back.value(), b.value());
        let loss = back.sum();
        let grads = g.backward(&loss).unwrap();
        assert_eq!(grads.get(&b).unwrap().data(), &[1.0; 4]);
        assert_eq!(grads.get(&a).unwrap().data(), &[0.0; 6]);
    }
}
