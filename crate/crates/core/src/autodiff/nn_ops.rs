//! Neural-network ops: matrix products, 2D convolution (im2col), softmax,
//! normalization layers, and broadcasting helpers.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use ndarray::{Array2, ArrayD, ArrayView2, Axis, Ix2, Ix3, IxDyn};

use crate::elem::Elem;

use super::Tensor;

impl<F: Elem> Tensor<F> {
    /// 2D matrix product `(m, k) x (k, n) -> (m, n)`.
    pub fn matmul(&self, other: &Tensor<F>) -> Tensor<F> {
        let a = self.value_clone().into_dimensionality::<Ix2>().unwrap();
        let b = other.value_clone().into_dimensionality::<Ix2>().unwrap();
        let value = a.dot(&b).into_dyn();
        Tensor::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents, _| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let a = parents[0].value_clone().into_dimensionality::<Ix2>().unwrap();
                let b = parents[1].value_clone().into_dimensionality::<Ix2>().unwrap();
                let ga = g2.dot(&b.t()).into_dyn();
                let gb = a.t().dot(&g2).into_dyn();
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    /// Batched matrix product `(B, m, k) x (B, k, n) -> (B, m, n)`.
    pub fn bmm(&self, other: &Tensor<F>) -> Tensor<F> {
        let a = self.value_clone().into_dimensionality::<Ix3>().unwrap();
        let b = other.value_clone().into_dimensionality::<Ix3>().unwrap();
        assert_eq!(a.shape()[0], b.shape()[0], "bmm batch dims must agree");
        assert_eq!(a.shape()[2], b.shape()[1], "bmm inner dims must agree");
        let (nb, m, n) = (a.shape()[0], a.shape()[1], b.shape()[2]);
        let mut out = ndarray::Array3::<F>::zeros((nb, m, n));
        for i in 0..nb {
            out.index_axis_mut(Axis(0), i)
                .assign(&a.index_axis(Axis(0), i).dot(&b.index_axis(Axis(0), i)));
        }
        Tensor::from_op(
            out.into_dyn(),
            vec![self.clone(), other.clone()],
            Box::new(move |g, parents, _| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let a = parents[0].value_clone().into_dimensionality::<Ix3>().unwrap();
                let b = parents[1].value_clone().into_dimensionality::<Ix3>().unwrap();
                let mut ga = ndarray::Array3::<F>::zeros(a.raw_dim());
                let mut gb = ndarray::Array3::<F>::zeros(b.raw_dim());
                for i in 0..g3.shape()[0] {
                    let gi = g3.index_axis(Axis(0), i);
                    ga.index_axis_mut(Axis(0), i)
                        .assign(&gi.dot(&b.index_axis(Axis(0), i).t()));
                    gb.index_axis_mut(Axis(0), i)
                        .assign(&a.index_axis(Axis(0), i).t().dot(&gi));
                }
                vec![Some(ga.into_dyn()), Some(gb.into_dyn())]
            }),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&self) -> Tensor<F> {
        let shape = self.shape();
        let cols = *shape.last().unwrap();
        let rows = self.len() / cols;
        let x = self.value();
        let x2 = x
            .view()
            .into_shape_with_order((rows, cols))
            .expect("standard layout");
        let mut y = Array2::<F>::zeros((rows, cols));
        for (mut yr, xr) in y.rows_mut().into_iter().zip(x2.rows()) {
            let mx = xr.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut s = F::zero();
            for (yv, &xv) in yr.iter_mut().zip(xr.iter()) {
                let e = (xv - mx).exp();
                *yv = e;
                s = s + e;
            }
            yr.mapv_inplace(|v| v / s);
        }
        drop(x);
        let value = y.into_dyn().into_shape_with_order(IxDyn(&shape)).unwrap();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, out| {
                let g2 = g
                    .view()
                    .into_shape_with_order((rows, cols))
                    .unwrap();
                let y2 = out.view().into_shape_with_order((rows, cols)).unwrap();
                let mut dx = Array2::<F>::zeros((rows, cols));
                for ((mut dr, gr), yr) in dx.rows_mut().into_iter().zip(g2.rows()).zip(y2.rows()) {
                    let mut dot = F::zero();
                    for (&gv, &yv) in gr.iter().zip(yr.iter()) {
                        dot = dot + gv * yv;
                    }
                    for ((dv, &gv), &yv) in dr.iter_mut().zip(gr.iter()).zip(yr.iter()) {
                        *dv = yv * (gv - dot);
                    }
                }
                vec![Some(
                    dx.into_dyn().into_shape_with_order(g.raw_dim()).unwrap(),
                )]
            }),
        )
    }

    /// Add a per-channel bias `(C,)` to the last axis of `(..., C)`.
    pub fn add_bias_last(&self, bias: &Tensor<F>) -> Tensor<F> {
        let shape = self.shape();
        let c = *shape.last().unwrap();
        assert_eq!(bias.shape(), &[c]);
        let rows = self.len() / c;
        let mut value = self.value_clone();
        {
            let b = bias.value();
            let bs = b.as_slice().unwrap();
            let vs = value.as_slice_mut().unwrap();
            for r in 0..rows {
                for j in 0..c {
                    vs[r * c + j] = vs[r * c + j] + bs[j];
                }
            }
        }
        Tensor::from_op(
            value,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, _, _| {
                let gsl = g.as_standard_layout();
                let gs = gsl.as_slice().unwrap();
                let mut db = vec![F::zero(); c];
                for r in 0..rows {
                    for j in 0..c {
                        db[j] = db[j] + gs[r * c + j];
                    }
                }
                vec![
                    Some(g.clone()),
                    Some(ArrayD::from_shape_vec(IxDyn(&[c]), db).unwrap()),
                ]
            }),
        )
    }

    /// Add a per-channel bias `(C,)` to axis 1 of a `(B, C, H, W)` tensor.
    pub fn add_bias_channel(&self, bias: &Tensor<F>) -> Tensor<F> {
        let shape = self.shape();
        assert_eq!(shape.len(), 4);
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        assert_eq!(bias.shape(), &[c]);
        let hw = h * w;
        let mut value = self.value_clone();
        {
            let bv = bias.value();
            let bs = bv.as_slice().unwrap();
            let vs = value.as_slice_mut().unwrap();
            for bi in 0..b {
                for ch in 0..c {
                    let base = (bi * c + ch) * hw;
                    for k in 0..hw {
                        vs[base + k] = vs[base + k] + bs[ch];
                    }
                }
            }
        }
        Tensor::from_op(
            value,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, _, _| {
                let gsl = g.as_standard_layout();
                let gs = gsl.as_slice().unwrap();
                let mut db = vec![F::zero(); c];
                for bi in 0..b {
                    for ch in 0..c {
                        let base = (bi * c + ch) * hw;
                        let mut acc = F::zero();
                        for k in 0..hw {
                            acc = acc + gs[base + k];
                        }
                        db[ch] = db[ch] + acc;
                    }
                }
                vec![
                    Some(g.clone()),
                    Some(ArrayD::from_shape_vec(IxDyn(&[c]), db).unwrap()),
                ]
            }),
        )
    }

    /// FiLM-style conditioning: `y = x * (1 + s) + t` with `s`, `t` of shape
    /// `(B, C)` broadcast over the spatial axes of `(B, C, H, W)`.
    pub fn scale_shift(&self, scale: &Tensor<F>, shift: &Tensor<F>) -> Tensor<F> {
        let shape = self.shape();
        assert_eq!(shape.len(), 4);
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        assert_eq!(scale.shape(), &[b, c]);
        assert_eq!(shift.shape(), &[b, c]);
        let hw = h * w;
        let mut value = self.value_clone();
        {
            let sv = scale.value();
            let tv = shift.value();
            let ss = sv.as_slice().unwrap();
            let ts = tv.as_slice().unwrap();
            let vs = value.as_slice_mut().unwrap();
            for bc in 0..b * c {
                let m = F::one() + ss[bc];
                let base = bc * hw;
                for k in 0..hw {
                    vs[base + k] = vs[base + k] * m + ts[bc];
                }
            }
        }
        Tensor::from_op(
            value,
            vec![self.clone(), scale.clone(), shift.clone()],
            Box::new(move |g, parents, _| {
                let gsl = g.as_standard_layout();
                let gs = gsl.as_slice().unwrap();
                let xv = parents[0].value();
                let xv = xv.as_standard_layout();
                let xs = xv.as_slice().unwrap();
                let sv = parents[1].value();
                let ss = sv.as_slice().unwrap();
                let mut dx = vec![F::zero(); b * c * hw];
                let mut dscale = vec![F::zero(); b * c];
                let mut dshift = vec![F::zero(); b * c];
                for bc in 0..b * c {
                    let m = F::one() + ss[bc];
                    let base = bc * hw;
                    let mut dsc = F::zero();
                    let mut dsh = F::zero();
                    for k in 0..hw {
                        let gv = gs[base + k];
                        dx[base + k] = gv * m;
                        dsc = dsc + gv * xs[base + k];
                        dsh = dsh + gv;
                    }
                    dscale[bc] = dsc;
                    dshift[bc] = dsh;
                }
                vec![
                    Some(ArrayD::from_shape_vec(IxDyn(&[b, c, h, w]), dx).unwrap()),
                    Some(ArrayD::from_shape_vec(IxDyn(&[b, c]), dscale).unwrap()),
                    Some(ArrayD::from_shape_vec(IxDyn(&[b, c]), dshift).unwrap()),
                ]
            }),
        )
    }

    /// Mean over the spatial axes: `(B, C, H, W) -> (B, C)`.
    pub fn spatial_mean(&self) -> Tensor<F> {
        let shape = self.shape();
        assert_eq!(shape.len(), 4);
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let hw = h * w;
        let inv = F::one() / F::from_usize_(hw);
        let x = self.value();
        let xs = x.as_slice().unwrap();
        let mut out = vec![F::zero(); b * c];
        for bc in 0..b * c {
            let mut acc = F::zero();
            for k in 0..hw {
                acc = acc + xs[bc * hw + k];
            }
            out[bc] = acc * inv;
        }
        drop(x);
        Tensor::from_op(
            ArrayD::from_shape_vec(IxDyn(&[b, c]), out).unwrap(),
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let gs = g.as_slice().unwrap();
                let mut dx = vec![F::zero(); b * c * hw];
                for bc in 0..b * c {
                    let gv = gs[bc] * inv;
                    for k in 0..hw {
                        dx[bc * hw + k] = gv;
                    }
                }
                vec![Some(
                    ArrayD::from_shape_vec(IxDyn(&[b, c, h, w]), dx).unwrap(),
                )]
            }),
        )
    }

    /// Normalize each row of a `(B, D)` matrix to unit L2 norm.
    pub fn l2_normalize_rows(&self) -> Tensor<F> {
        let shape = self.shape();
        assert_eq!(shape.len(), 2);
        let (b, d) = (shape[0], shape[1]);
        let x = self.value_clone().into_dimensionality::<Ix2>().unwrap();
        let mut y = x.clone();
        let mut norms = Vec::with_capacity(b);
        for mut row in y.rows_mut() {
            let n = row.iter().fold(F::zero(), |a, &v| a + v * v).sqrt();
            assert!(n > F::zero(), "l2_normalize_rows: zero-norm row");
            norms.push(n);
            row.mapv_inplace(|v| v / n);
        }
        Tensor::from_op(
            y.into_dyn(),
            vec![self.clone()],
            Box::new(move |g, _, out| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let y2 = out.view().into_dimensionality::<Ix2>().unwrap();
                let mut dx = Array2::<F>::zeros((b, d));
                for i in 0..b {
                    let gi = g2.row(i);
                    let yi = y2.row(i);
                    let dot = gi
                        .iter()
                        .zip(yi.iter())
                        .fold(F::zero(), |a, (&gv, &yv)| a + gv * yv);
                    for j in 0..d {
                        dx[[i, j]] = (gi[j] - yi[j] * dot) / norms[i];
                    }
                }
                vec![Some(dx.into_dyn())]
            }),
        )
    }

    /// Layer normalization over the last axis with per-channel affine
    /// parameters `gamma`, `beta` of shape `(C,)`.
    pub fn layer_norm(&self, gamma: &Tensor<F>, beta: &Tensor<F>, eps: F) -> Tensor<F> {
        let shape = self.shape();
        let c = *shape.last().unwrap();
        assert_eq!(gamma.shape(), &[c]);
        assert_eq!(beta.shape(), &[c]);
        let rows = self.len() / c;
        let (value, xhat) = {
            let x = self.value();
            let xs = x.as_slice().unwrap();
            let gv = gamma.value();
            let gvs = gv.as_slice().unwrap();
            let bv = beta.value();
            let bvs = bv.as_slice().unwrap();
            norm_forward(xs, rows, c, eps, gvs, bvs)
        };
        let shape_b = shape.clone();
        Tensor::from_op(
            ArrayD::from_shape_vec(IxDyn(&shape), value).unwrap(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, parents, _| {
                let gsl = g.as_standard_layout();
                let gs = gsl.as_slice().unwrap();
                let xv = parents[0].value();
                let xv = xv.as_standard_layout();
                let xs = xv.as_slice().unwrap();
                let gv = parents[1].value();
                let gvs = gv.as_slice().unwrap();
                let (dx, dgamma, dbeta) = norm_backward(
                    gs,
                    xs,
                    &xhat,
                    rows,
                    c,
                    eps,
                    gvs,
                    |row, j| row * c + j,
                );
                vec![
                    Some(ArrayD::from_shape_vec(IxDyn(&shape_b), dx).unwrap()),
                    Some(ArrayD::from_shape_vec(IxDyn(&[c]), dgamma).unwrap()),
                    Some(ArrayD::from_shape_vec(IxDyn(&[c]), dbeta).unwrap()),
                ]
            }),
        )
    }
}

/// Forward pass shared by normalization layers operating on contiguous rows.
/// Returns (output, xhat) where xhat is the pre-affine normalized value.
fn norm_forward<F: Elem>(
    xs: &[F],
    rows: usize,
    c: usize,
    eps: F,
    gamma: &[F],
    beta: &[F],
) -> (Vec<F>, Vec<F>) {
    let inv_c = F::one() / F::from_usize_(c);
    let mut out = vec![F::zero(); rows * c];
    let mut xhat = vec![F::zero(); rows * c];
    for r in 0..rows {
        let base = r * c;
        let mut mean = F::zero();
        for j in 0..c {
            mean = mean + xs[base + j];
        }
        mean = mean * inv_c;
        let mut var = F::zero();
        for j in 0..c {
            let d = xs[base + j] - mean;
            var = var + d * d;
        }
        var = var * inv_c;
        let istd = F::one() / (var + eps).sqrt();
        for j in 0..c {
            let xh = (xs[base + j] - mean) * istd;
            xhat[base + j] = xh;
            out[base + j] = gamma[j] * xh + beta[j];
        }
    }
    (out, xhat)
}

/// Backward pass shared by normalization layers; `ch_of(row, j)` maps a row
/// element to its affine channel.
#[allow(clippy::too_many_arguments)]
fn norm_backward<F: Elem>(
    gs: &[F],
    xs: &[F],
    xhat: &[F],
    rows: usize,
    c: usize,
    eps: F,
    gamma: &[F],
    ch_of: impl Fn(usize, usize) -> usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let inv_c = F::one() / F::from_usize_(c);
    let n_ch = gamma.len();
    let mut dx = vec![F::zero(); rows * c];
    let mut dgamma = vec![F::zero(); n_ch];
    let mut dbeta = vec![F::zero(); n_ch];
    for r in 0..rows {
        let base = r * c;
        // recompute istd from x
        let mut mean = F::zero();
        for j in 0..c {
            mean = mean + xs[base + j];
        }
        mean = mean * inv_c;
        let mut var = F::zero();
        for j in 0..c {
            let d = xs[base + j] - mean;
            var = var + d * d;
        }
        var = var * inv_c;
        let istd = F::one() / (var + eps).sqrt();
        let mut sum_dxhat = F::zero();
        let mut sum_dxhat_xhat = F::zero();
        for j in 0..c {
            let idx = base + j;
            let ch = ch_of(r, j) % n_ch;
            let gv = gs[idx];
            let dxh = gv * gamma[ch];
            dgamma[ch] = dgamma[ch] + gv * xhat[idx];
            dbeta[ch] = dbeta[ch] + gv;
            sum_dxhat = sum_dxhat + dxh;
            sum_dxhat_xhat = sum_dxhat_xhat + dxh * xhat[idx];
        }
        let m1 = sum_dxhat * inv_c;
        let m2 = sum_dxhat_xhat * inv_c;
        for j in 0..c {
            let idx = base + j;
            let ch = ch_of(r, j) % n_ch;
            let dxh = gs[idx] * gamma[ch];
            dx[idx] = (dxh - m1 - xhat[idx] * m2) * istd;
        }
    }
    (dx, dgamma, dbeta)
}

impl<F: Elem> Tensor<F> {
    /// Group normalization of `(B, C, H, W)` with `groups` groups and
    /// per-channel affine parameters.
    pub fn group_norm(&self, gamma: &Tensor<F>, beta: &Tensor<F>, groups: usize, eps: F) -> Tensor<F> {
        let shape = self.shape();
        assert_eq!(shape.len(), 4);
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        assert_eq!(c % groups, 0, "channels must divide groups");
        assert_eq!(gamma.shape(), &[c]);
        assert_eq!(beta.shape(), &[c]);
        let cg = c / groups;
        let hw = h * w;
        let row = cg * hw; // elements per (batch, group) row
        let rows = b * groups;
        // Per-row gamma/beta: channel of element j within a (b, g) row is
        // g * cg + j / hw; handled by expanding affine params per row element.
        let (value, xhat) = {
            let x = self.value();
            let xs = x.as_slice().unwrap();
            let gv = gamma.value();
            let gvs = gv.as_slice().unwrap();
            let bv = beta.value();
            let bvs = bv.as_slice().unwrap();
            // expand gamma/beta to one full row pattern per group
            let mut out = vec![F::zero(); rows * row];
            let mut xh = vec![F::zero(); rows * row];
            let inv_m = F::one() / F::from_usize_(row);
            for r in 0..rows {
                let grp = r % groups;
                let base = r * row;
                let mut mean = F::zero();
                for j in 0..row {
                    mean = mean + xs[base + j];
                }
                mean = mean * inv_m;
                let mut var = F::zero();
                for j in 0..row {
                    let d = xs[base + j] - mean;
                    var = var + d * d;
                }
                var = var * inv_m;
                let istd = F::one() / (var + eps).sqrt();
                for j in 0..row {
                    let ch = grp * cg + j / hw;
                    let v = (xs[base + j] - mean) * istd;
                    xh[base + j] = v;
                    out[base + j] = gvs[ch] * v + bvs[ch];
                }
            }
            (out, xh)
        };
        Tensor::from_op(
            ArrayD::from_shape_vec(IxDyn(&shape), value).unwrap(),
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, parents, _| {
                let gsl = g.as_standard_layout();
                let gs = gsl.as_slice().unwrap();
                let xv = parents[0].value();
                let xv = xv.as_standard_layout();
                let xs = xv.as_slice().unwrap();
                let gv = parents[1].value();
                let gvs = gv.as_slice().unwrap();
                let inv_m = F::one() / F::from_usize_(row);
                let mut dx = vec![F::zero(); rows * row];
                let mut dgamma = vec![F::zero(); c];
                let mut dbeta = vec![F::zero(); c];
                for r in 0..rows {
                    let grp = r % groups;
                    let base = r * row;
                    let mut mean = F::zero();
                    for j in 0..row {
                        mean = mean + xs[base + j];
                    }
                    mean = mean * inv_m;
                    let mut var = F::zero();
                    for j in 0..row {
                        let d = xs[base + j] - mean;
                        var = var + d * d;
                    }
                    var = var * inv_m;
                    let istd = F::one() / (var + eps).sqrt();
                    let mut sum_dxhat = F::zero();
                    let mut sum_dxhat_xhat = F::zero();
                    for j in 0..row {
                        let idx = base + j;
                        let ch = grp * cg + j / hw;
                        let gval = gs[idx];
                        let xhv = xhat[idx];
                        let dxh = gval * gvs[ch];
                        dgamma[ch] = dgamma[ch] + gval * xhv;
                        dbeta[ch] = dbeta[ch] + gval;
                        sum_dxhat = sum_dxhat + dxh;
                        sum_dxhat_xhat = sum_dxhat_xhat + dxh * xhv;
                    }
                    let m1 = sum_dxhat * inv_m;
                    let m2 = sum_dxhat_xhat * inv_m;
                    for j in 0..row {
                        let idx = base + j;
                        let ch = grp * cg + j / hw;
                        let dxh = gs[idx] * gvs[ch];
                        dx[idx] = (dxh - m1 - xhat[idx] * m2) * istd;
                    }
                }
                vec![
                    Some(ArrayD::from_shape_vec(IxDyn(&[b, c, h, w]), dx).unwrap()),
                    Some(ArrayD::from_shape_vec(IxDyn(&[c]), dgamma).unwrap()),
                    Some(ArrayD::from_shape_vec(IxDyn(&[c]), dbeta).unwrap()),
                ]
            }),
        )
    }

    /// 2D convolution of `(B, Cin, H, W)` with weights `(Cout, Cin, kh, kw)`
    /// and bias `(Cout,)`, using zero padding.
    pub fn conv2d(&self, weight: &Tensor<F>, bias: &Tensor<F>, stride: usize, pad: usize) -> Tensor<F> {
        let xs_shape = self.shape();
        let ws_shape = weight.shape();
        assert_eq!(xs_shape.len(), 4, "conv2d input must be rank 4");
        assert_eq!(ws_shape.len(), 4, "conv2d weight must be rank 4");
        assert_eq!(
            xs_shape[1], ws_shape[1],
            "conv2d: input channels {} != weight channels {}",
            xs_shape[1], ws_shape[1]
        );
        let (b, cin, h, w) = (xs_shape[0], xs_shape[1], xs_shape[2], xs_shape[3]);
        let (cout, kh, kw) = (ws_shape[0], ws_shape[2], ws_shape[3]);
        assert_eq!(bias.shape(), &[cout]);
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let k = cin * kh * kw;
        let geo = ConvGeom { b, cin, h, w, cout, kh, kw, stride, pad, ho, wo };

        let value = {
            let x = self.value();
            let x = x.as_standard_layout();
            let xs = x.as_slice().unwrap();
            let wv = weight.value();
            let w2 = wv.view().into_shape_with_order((cout, k)).unwrap();
            let bv = bias.value();
            let bs = bv.as_slice().unwrap();
            let mut out = ArrayD::<F>::zeros(IxDyn(&[b, cout, ho, wo]));
            let os = out.as_slice_mut().unwrap();
            let mut cols = Array2::<F>::zeros((k, ho * wo));
            for bi in 0..b {
                im2col(&geo, &xs[bi * cin * h * w..(bi + 1) * cin * h * w], &mut cols);
                let res = w2.dot(&cols);
                let obase = bi * cout * ho * wo;
                let rs = res.as_slice().unwrap();
                for co in 0..cout {
                    let bval = bs[co];
                    for p in 0..ho * wo {
                        os[obase + co * ho * wo + p] = rs[co * ho * wo + p] + bval;
                    }
                }
            }
            out
        };

        Tensor::from_op(
            value,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g, parents, _| {
                let gsl = g.as_standard_layout();
                let gs = gsl.as_slice().unwrap();
                let xv = parents[0].value();
                let xv = xv.as_standard_layout();
                let xs = xv.as_slice().unwrap();
                let wv = parents[1].value();
                let w2 = wv.view().into_shape_with_order((geo.cout, k)).unwrap();
                let n = geo.ho * geo.wo;
                let mut dw = Array2::<F>::zeros((geo.cout, k));
                let mut db = vec![F::zero(); geo.cout];
                let mut dx = vec![F::zero(); geo.b * geo.cin * geo.h * geo.w];
                let mut cols = Array2::<F>::zeros((k, n));
                for bi in 0..geo.b {
                    let gview =
                        ArrayView2::from_shape((geo.cout, n), &gs[bi * geo.cout * n..(bi + 1) * geo.cout * n])
                            .unwrap();
                    // weight and bias gradients
                    im2col(&geo, &xs[bi * geo.cin * geo.h * geo.w..], &mut cols);
                    dw = dw + gview.dot(&cols.t());
                    for co in 0..geo.cout {
                        let mut acc = F::zero();
                        for p in 0..n {
                            acc = acc + gview[[co, p]];
                        }
                        db[co] = db[co] + acc;
                    }
                    // input gradient
                    let dcols = w2.t().dot(&gview);
                    col2im(&geo, &dcols, &mut dx[bi * geo.cin * geo.h * geo.w..]);
                }
                vec![
                    Some(
                        ArrayD::from_shape_vec(IxDyn(&[geo.b, geo.cin, geo.h, geo.w]), dx).unwrap(),
                    ),
                    Some(
                        dw.into_dyn()
                            .into_shape_with_order(IxDyn(&[geo.cout, geo.cin, geo.kh, geo.kw]))
                            .unwrap(),
                    ),
                    Some(ArrayD::from_shape_vec(IxDyn(&[geo.cout]), db).unwrap()),
                ]
            }),
        )
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

/// Expand one sample `(Cin, H, W)` into columns `(Cin*kh*kw, Ho*Wo)`.
fn im2col<F: Elem>(geo: &ConvGeom, xs: &[F], cols: &mut Array2<F>) {
    let n = geo.ho * geo.wo;
    let cs = cols.as_slice_mut().unwrap();
    for ci in 0..geo.cin {
        let xbase = ci * geo.h * geo.w;
        for ki in 0..geo.kh {
            for kj in 0..geo.kw {
                let krow = ((ci * geo.kh + ki) * geo.kw + kj) * n;
                for oi in 0..geo.ho {
                    let ii = (oi * geo.stride + ki) as isize - geo.pad as isize;
                    let orow = krow + oi * geo.wo;
                    if ii < 0 || ii >= geo.h as isize {
                        for oj in 0..geo.wo {
                            cs[orow + oj] = F::zero();
                        }
                        continue;
                    }
                    let xrow = xbase + ii as usize * geo.w;
                    for oj in 0..geo.wo {
                        let jj = (oj * geo.stride + kj) as isize - geo.pad as isize;
                        cs[orow + oj] = if jj < 0 || jj >= geo.w as isize {
                            F::zero()
                        } else {
                            xs[xrow + jj as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add columns `(Cin*kh*kw, Ho*Wo)` back into one sample gradient.
fn col2im<F: Elem>(geo: &ConvGeom, cols: &Array2<F>, dx: &mut [F]) {
    let n = geo.ho * geo.wo;
    let cs = cols.as_slice().unwrap();
    for ci in 0..geo.cin {
        let xbase = ci * geo.h * geo.w;
        for ki in 0..geo.kh {
            for kj in 0..geo.kw {
                let krow = ((ci * geo.kh + ki) * geo.kw + kj) * n;
                for oi in 0..geo.ho {
                    let ii = (oi * geo.stride + ki) as isize - geo.pad as isize;
                    if ii < 0 || ii >= geo.h as isize {
                        continue;
                    }
                    let xrow = xbase + ii as usize * geo.w;
                    let orow = krow + oi * geo.wo;
                    for oj in 0..geo.wo {
                        let jj = (oj * geo.stride + kj) as isize - geo.pad as isize;
                        if jj >= 0 && jj < geo.w as isize {
                            dx[xrow + jj as usize] = dx[xrow + jj as usize] + cs[orow + oj];
                        }
                    }
                }
            }
        }
    }
}

/// Linear map over the last axis: `(..., Cin) x (Cin, Cout) + (Cout,)`.
pub fn linear_2d<F: Elem>(x: &Tensor<F>, weight: &Tensor<F>, bias: &Tensor<F>) -> Tensor<F> {
    let shape = x.shape();
    let cin = *shape.last().unwrap();
    let ws = weight.shape();
    assert_eq!(ws[0], cin, "linear: input width mismatch");
    let rows = x.len() / cin;
    let y = x
        .reshape(&[rows, cin])
        .matmul(weight)
        .add_bias_last(bias);
    let mut out_shape = shape;
    *out_shape.last_mut().unwrap() = ws[1];
    y.reshape(&out_shape)
}
