//! Spatial ops on `[C, H, W]` feature maps.

use crate::error::{contract, shape_err, Result, TensorError};
use crate::graph::Var;
use crate::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};

fn dims3(op: &'static str, v: &Var) -> Result<(usize, usize, usize)> {
    match *v.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(contract(
            op,
            format!("expected [C,H,W], got {:?}", v.shape()),
        )),
    }
}

impl Var {
    /// Per-channel `k×k` cross-correlation with zero "same" padding.
    ///
    /// `self: [C,H,W]`, `kernel: [C,k,k]` with odd `k`.
    pub fn depthwise_conv2d(&self, kernel: &Var) -> Result<Var> {
        let (c, h, w) = dims3("depthwise_conv2d", self)?;
        let ks = kernel.shape().to_vec();
        if ks.len() != 3 || ks[0] != c || ks[1] != ks[2] {
            return Err(shape_err("depthwise_conv2d", self.shape(), &ks));
        }
        let k = ks[1];
        if k.is_multiple_of(2) {
            return Err(TensorError::Config(format!(
                "depthwise kernel size must be odd, got {k}"
            )));
        }
        let p = (k / 2) as isize;
        let x = self.value_rc();
        let kv = kernel.value_rc();
        let taps = move |f: &mut dyn FnMut(usize, usize, usize)| {
            // f(input offset, kernel offset, output offset)
            for ch in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        let o = (ch * h + y) * w + xx;
                        for i in 0..k {
                            let sy = y as isize + i as isize - p;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for j in 0..k {
                                let sx = xx as isize + j as isize - p;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                f(
                                    (ch * h + sy as usize) * w + sx as usize,
                                    (ch * k + i) * k + j,
                                    o,
                                );
                            }
                        }
                    }
                }
            }
        };
        let mut out = vec![0.0; c * h * w];
        {
            let (xd, kd) = (x.data(), kv.data());
            taps(&mut |xi, ki, oi| out[oi] += kd[ki] * xd[xi]);
        }
        let value = Tensor::from_parts(vec![c, h, w], out);
        Ok(self.graph().record(
            "depthwise_conv2d",
            &[self, kernel],
            value,
            move |g, needs| {
                let (xd, kd, gd) = (x.data(), kv.data(), g.data());
                let mut gx = needs[0].then(|| vec![0.0; xd.len()]);
                let mut gk = needs[1].then(|| vec![0.0; kd.len()]);
                taps(&mut |xi, ki, oi| {
                    if let Some(gx) = gx.as_mut() {
                        gx[xi] += kd[ki] * gd[oi];
                    }
                    if let Some(gk) = gk.as_mut() {
                        gk[ki] += xd[xi] * gd[oi];
                    }
                });
                vec![
                    gx.map(|d| Tensor::from_parts(vec![c, h, w], d)),
                    gk.map(|d| Tensor::from_parts(vec![c, k, k], d)),
                ]
            },
        ))
    }

    /// Dense `k×k` convolution with zero "same" padding.
    ///
    /// `self: [Cin,H,W]`, `weight: [Cout,Cin,k,k]`, odd `k`. No bias.
    pub fn conv2d(&self, weight: &Var) -> Result<Var> {
        let (cin, h, w) = dims3("conv2d", self)?;
        let ws = weight.shape().to_vec();
        if ws.len() != 4 || ws[1] != cin || ws[2] != ws[3] {
            return Err(shape_err("conv2d", self.shape(), &ws));
        }
        let (cout, k) = (ws[0], ws[2]);
        if k % 2 == 0 {
            return Err(TensorError::Config(format!(
                "conv kernel size must be odd, got {k}"
            )));
        }
        let p = (k / 2) as isize;
        let hw = h * w;
        let rows = cin * k * k;
        // im2col index table: for each (row, pixel) the flat input offset, if inside.
        let mut table = vec![usize::MAX; rows * hw];
        for ci in 0..cin {
            for i in 0..k {
                for j in 0..k {
                    let r = (ci * k + i) * k + j;
                    for y in 0..h {
                        let sy = y as isize + i as isize - p;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx as isize + j as isize - p;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            table[r * hw + y * w + xx] = (ci * h + sy as usize) * w + sx as usize;
                        }
                    }
                }
            }
        }
        let x = self.value_rc();
        let cols: Vec<f64> = table
            .iter()
            .map(|&t| if t == usize::MAX { 0.0 } else { x.data()[t] })
            .collect();
        let wv = weight.value_rc();
        let out = matmul_raw(wv.data(), &cols, cout, rows, hw);
        let value = Tensor::from_parts(vec![cout, h, w], out);
        Ok(self
            .graph()
            .record("conv2d", &[self, weight], value, move |g, needs| {
                let gd = g.data();
                let gw = needs[1]
                    .then(|| Tensor::from_parts(ws.clone(), matmul_nt(gd, &cols, cout, hw, rows)));
                let gx = needs[0].then(|| {
                    let gcols = matmul_tn(wv.data(), gd, cout, rows, hw);
                    let mut gx = vec![0.0; cin * hw];
                    for (gc, &t) in gcols.iter().zip(&table) {
                        if t != usize::MAX {
                            gx[t] += gc;
                        }
                    }
                    Tensor::from_parts(vec![cin, h, w], gx)
                });
                vec![gx, gw]
            }))
    }

    /// Transposed convolution whose stride equals its kernel size.
    ///
    /// `self: [Cin,h,w]`, `weight: [Cin,Cout,s,s]` → `[Cout, h·s, w·s]`. No bias.
    pub fn conv_transpose2d(&self, weight: &Var) -> Result<Var> {
        let (cin, h, w) = dims3("conv_transpose2d", self)?;
        let ws = weight.shape().to_vec();
        if ws.len() != 4 || ws[0] != cin || ws[2] != ws[3] {
            return Err(shape_err("conv_transpose2d", self.shape(), &ws));
        }
        let (cout, s) = (ws[1], ws[2]);
        let tokens = self.reshape([cin, h * w])?.t()?;
        let w2 = weight.reshape([cin, cout * s * s])?;
        tokens
            .matmul(&w2)?
            .reshape([h, w, cout, s, s])?
            .permute(&[2, 0, 3, 1, 4])?
            .reshape([cout, h * s, w * s])
    }

    /// Mean over non-overlapping `f×f` blocks of the last two axes.
    ///
    /// Accepts `[H,W]` or `[C,H,W]`; `H` and `W` must be divisible by `f`.
    pub fn avg_pool2d(&self, f: usize) -> Result<Var> {
        let shape = self.shape().to_vec();
        let (c, h, w, rank2) = match shape[..] {
            [h, w] => (1, h, w, true),
            [c, h, w] => (c, h, w, false),
            _ => {
                return Err(contract(
                    "avg_pool2d",
                    format!("expected [H,W] or [C,H,W], got {shape:?}"),
                ))
            }
        };
        if f == 0 || h % f != 0 || w % f != 0 {
            return Err(contract(
                "avg_pool2d",
                format!("spatial dims {h}x{w} are not divisible by {f}"),
            ));
        }
        let (oh, ow) = (h / f, w / f);
        let pooled = self
            .reshape([c, oh, f, ow, f])?
            .permute(&[0, 1, 3, 2, 4])?
            .reshape([c, oh, ow, f * f])?
            .sum_axis(3)?
            .scale(1.0 / (f * f) as f64);
        if rank2 {
            pooled.reshape([oh, ow])
        } else {
            Ok(pooled)
        }
    }

    /// Bilinear upsampling by an integer factor (half-pixel centers, edge clamped).
    ///
    /// `self: [C,h,w]` → `[C, h·f, w·f]`.
    pub fn upsample_bilinear(&self, f: usize) -> Result<Var> {
        let (c, h, w) = dims3("upsample_bilinear", self)?;
        if f == 0 {
            return Err(contract("upsample_bilinear", "factor must be positive"));
        }
        let g = self.graph();
        let ax = g.constant(bilinear_matrix(w, f).transpose()?); // [w, W]
        let ay = g.constant(bilinear_matrix(h, f).transpose()?); // [h, H]
        let (oh, ow) = (h * f, w * f);
        self.reshape([c * h, w])?
            .matmul(&ax)?
            .reshape([c, h, ow])?
            .permute(&[0, 2, 1])?
            .reshape([c * ow, h])?
            .matmul(&ay)?
            .reshape([c, ow, oh])?
            .permute(&[0, 2, 1])
    }
}

/// Interpolation weights `[n·f, n]` for 1-D bilinear upsampling.
pub fn bilinear_matrix(n: usize, f: usize) -> Tensor {
    let out = n * f;
    let mut m = vec![0.0; out * n];
    for o in 0..out {
        let src = ((o as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let t = src - lo as f64;
        m[o * n + lo] += 1.0 - t;
        m[o * n + hi] += t;
    }
    Tensor::from_parts(vec![out, n], m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Graph;

    #[test]
    fn delta_kernel_is_identity() {
        let g = Graph::new();
        let x = g.constant(Tensor::from_fn([2, 5, 5], |i| (i as f64 * 0.37).sin()));
        let mut k = Tensor::zeros([2, 3, 3]);
        k.data_mut()[4] = 1.0;
        k.data_mut()[9 + 4] = 1.0;
        let y = x.depthwise_conv2d(&g.constant(k)).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn ones_kernel_on_constant_interior() {
        let g = Graph::new();
        let x = g.constant(Tensor::full([1, 5, 5], 0.7));
        let y = x
            .depthwise_conv2d(&g.constant(Tensor::ones([1, 3, 3])))
            .unwrap();
        assert!((y.value().at(&[0, 2, 2]) - 9.0 * 0.7).abs() < 1e-12);
        assert!((y.value().at(&[0, 0, 0]) - 4.0 * 0.7).abs() < 1e-12);
    }

    #[test]
    fn even_kernel_is_config_error() {
        let g = Graph::new();
        let x = g.constant(Tensor::zeros([1, 4, 4]));
        let err = x
            .depthwise_conv2d(&g.constant(Tensor::zeros([1, 2, 2])))
            .unwrap_err();
        assert!(matches!(err, TensorError::Config(_)));
    }

    #[test]
    fn conv2d_matches_direct_sum() {
        let g = Graph::new();
        let x = Tensor::from_fn([2, 4, 3], |i| (i as f64 * 0.71).cos());
        let w = Tensor::from_fn([3, 2, 3, 3], |i| (i as f64 * 0.13).sin());
        let y = g
            .constant(x.clone())
            .conv2d(&g.constant(w.clone()))
            .unwrap();
        for o in 0..3 {
            for yy in 0..4 {
                for xx in 0..3 {
                    let mut s = 0.0;
                    for c in 0..2 {
                        for i in 0..3 {
                            for j in 0..3 {
                                let (sy, sx) =
                                    (yy as isize + i as isize - 1, xx as isize + j as isize - 1);
                                if (0..4).contains(&sy) && (0..3).contains(&sx) {
                                    s += w.at(&[o, c, i, j]) * x.at(&[c, sy as usize, sx as usize]);
                                }
                            }
                        }
                    }
                    assert!((y.value().at(&[o, yy, xx]) - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn avg_pool_blocks() {
        let g = Graph::new();
        let mut m = Tensor::zeros([32, 32]);
        for y in 0..16 {
            for x in 16..32 {
                m.data_mut()[y * 32 + x] = 1.0;
            }
        }
        let p = g.constant(m).avg_pool2d(16).unwrap();
        assert_eq!(p.value().data(), &[0.0, 1.0, 0.0, 0.0]);
        assert!(g.constant(Tensor::zeros([20, 32])).avg_pool2d(16).is_err());
    }

    #[test]
    fn bilinear_preserves_constants() {
        let g = Graph::new();
        let x = g.constant(Tensor::full([2, 3, 4], 1.25));
        let y = x.upsample_bilinear(4).unwrap();
        assert_eq!(y.shape(), &[2, 12, 16]);
        for v in y.value().data() {
            assert!((v - 1.25).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_conv_places_blocks() {
        let g = Graph::new();
        let x = g.constant(Tensor::new([1, 1, 2], vec![1.0, 2.0]).unwrap());
        let w = g.constant(Tensor::from_fn([1, 1, 2, 2], |i| i as f64));
        let y = x.conv_transpose2d(&w).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4]);
        assert_eq!(y.value().data(), &[0.0, 1.0, 0.0, 2.0, 2.0, 3.0, 4.0, 6.0]);
    }
}
