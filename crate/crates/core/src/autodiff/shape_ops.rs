//! Shape-manipulation ops: permute, reshape, channel concat, nearest-neighbor
//! upsampling, and (shifted) window partitioning.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use ndarray::{ArrayD, Axis, IxDyn, Slice};

use crate::elem::Elem;

use super::Tensor;

impl<F: Elem> Tensor<F> {
    /// Permute axes, producing a standard-layout copy.
    pub fn permute(&self, axes: &[usize]) -> Tensor<F> {
        let axes_owned: Vec<usize> = axes.to_vec();
        let value = self
            .value()
            .view()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .to_owned();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut inverse = vec![0usize; axes_owned.len()];
                for (i, &a) in axes_owned.iter().enumerate() {
                    inverse[a] = i;
                }
                vec![Some(
                    g.view()
                        .permuted_axes(IxDyn(&inverse))
                        .as_standard_layout()
                        .to_owned(),
                )]
            }),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor<F> {
        let in_shape: Vec<usize> = self.shape();
        let value = self
            .value()
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape must preserve element count");
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                vec![Some(
                    g.as_standard_layout()
                        .to_owned()
                        .into_shape_with_order(IxDyn(&in_shape))
                        .unwrap(),
                )]
            }),
        )
    }

    /// Concatenate along the channel axis (axis 1).
    pub fn concat_channels(inputs: &[Tensor<F>]) -> Tensor<F> {
        assert!(!inputs.is_empty());
        let views: Vec<_> = inputs.iter().map(|t| t.value_clone()).collect();
        let value = ndarray::concatenate(
            Axis(1),
            &views.iter().map(|v| v.view()).collect::<Vec<_>>(),
        )
        .expect("concat: non-channel dims must agree")
        .as_standard_layout()
        .to_owned();
        let widths: Vec<usize> = inputs.iter().map(|t| t.shape()[1]).collect();
        Tensor::from_op(
            value,
            inputs.to_vec(),
            Box::new(move |g, _, _| {
                let mut out = Vec::with_capacity(widths.len());
                let mut start = 0isize;
                for &w in &widths {
                    out.push(Some(
                        g.slice_axis(Axis(1), Slice::from(start..start + w as isize))
                            .to_owned(),
                    ));
                    start += w as isize;
                }
                out
            }),
        )
    }

    /// Slice columns `[start, end)` of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor<F> {
        let shape = self.shape();
        assert_eq!(shape.len(), 2);
        assert!(start < end && end <= shape[1]);
        let value = self
            .value()
            .slice_axis(Axis(1), Slice::from(start..end))
            .to_owned();
        let full = shape.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut dx = ArrayD::<F>::zeros(IxDyn(&full));
                dx.slice_axis_mut(Axis(1), Slice::from(start..end)).assign(g);
                vec![Some(dx)]
            }),
        )
    }

    /// Slice channels `[start, end)` along axis 1 of a rank-4 tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Tensor<F> {
        let shape = self.shape();
        assert_eq!(shape.len(), 4);
        assert!(start < end && end <= shape[1]);
        let value = self
            .value()
            .slice_axis(Axis(1), Slice::from(start..end))
            .as_standard_layout()
            .to_owned();
        let full = shape.clone();
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut dx = ArrayD::<F>::zeros(IxDyn(&full));
                dx.slice_axis_mut(Axis(1), Slice::from(start..end)).assign(g);
                vec![Some(dx)]
            }),
        )
    }

    /// Reflect-pad the spatial dims of a (B, C, H, W) tensor by `p` pixels on
    /// every side, mirroring without repeating the border pixel. A spatially
    /// constant input stays constant across the padded border, so convolutions
    /// see no artificial edge at the image boundary.
    pub fn reflect_pad(&self, p: usize) -> Tensor<F> {
        let shape = self.shape();
        assert_eq!(shape.len(), 4);
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        assert!(p < h && p < w, "padding must be smaller than the spatial size");
        let (hp, wp) = (h + 2 * p, w + 2 * p);
        let mirror = |i: isize, n: usize| -> usize {
            let n = n as isize;
            let i = if i < 0 { -i } else { i };
            (if i >= n { 2 * n - 2 - i } else { i }) as usize
        };
        let value = {
            let x = self.value();
            let x = x.as_standard_layout();
            let xs = x.as_slice().unwrap();
            let mut out = ArrayD::<F>::zeros(IxDyn(&[b, c, hp, wp]));
            let os = out.as_slice_mut().unwrap();
            for bc in 0..b * c {
                let ibase = bc * h * w;
                let obase = bc * hp * wp;
                for i in 0..hp {
                    let si = mirror(i as isize - p as isize, h);
                    for j in 0..wp {
                        let sj = mirror(j as isize - p as isize, w);
                        os[obase + i * wp + j] = xs[ibase + si * w + sj];
                    }
                }
            }
            out
        };
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let g = g.as_standard_layout();
                let gs = g.as_slice().unwrap();
                let mut gi = ArrayD::<F>::zeros(IxDyn(&[b, c, h, w]));
                {
                    let gim = gi.as_slice_mut().unwrap();
                    for bc in 0..b * c {
                        let ibase = bc * h * w;
                        let obase = bc * hp * wp;
                        for i in 0..hp {
                            let si = mirror(i as isize - p as isize, h);
                            for j in 0..wp {
                                let sj = mirror(j as isize - p as isize, w);
                                gim[ibase + si * w + sj] =
                                    gim[ibase + si * w + sj] + gs[obase + i * wp + j];
                            }
                        }
                    }
                }
                vec![Some(gi)]
            }),
        )
    }

    /// Nearest-neighbor 2x upsampling of a (B, C, H, W) tensor.
    pub fn upsample_nearest_2x(&self) -> Tensor<F> {
        let shape = self.shape();
        assert_eq!(shape.len(), 4);
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let x = self.value();
        let xs = x.as_slice().expect("standard layout");
        let mut out = ArrayD::<F>::zeros(IxDyn(&[b, c, 2 * h, 2 * w]));
        {
            let os = out.as_slice_mut().unwrap();
            for bc in 0..b * c {
                let ibase = bc * h * w;
                let obase = bc * 4 * h * w;
                for i in 0..h {
                    for j in 0..w {
                        let v = xs[ibase + i * w + j];
                        let o0 = obase + (2 * i) * 2 * w + 2 * j;
                        os[o0] = v;
                        os[o0 + 1] = v;
                        os[o0 + 2 * w] = v;
                        os[o0 + 2 * w + 1] = v;
                    }
                }
            }
        }
        drop(x);
        Tensor::from_op(
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let gs = g.as_standard_layout();
                let gs = gs.as_slice().unwrap();
                let mut gi = ArrayD::<F>::zeros(IxDyn(&[b, c, h, w]));
                {
                    let gim = gi.as_slice_mut().unwrap();
                    for bc in 0..b * c {
                        let ibase = bc * h * w;
                        let obase = bc * 4 * h * w;
                        for i in 0..h {
                            for j in 0..w {
                                let o0 = obase + (2 * i) * 2 * w + 2 * j;
                                gim[ibase + i * w + j] = gs[o0]
                                    + gs[o0 + 1]
                                    + gs[o0 + 2 * w]
                                    + gs[o0 + 2 * w + 1];
                            }
                        }
                    }
                }
                vec![Some(gi)]
            }),
        )
    }

    /// Cyclic-shift a (B, C, H, W) map by `(-shift, -shift)` and partition it
    /// into non-overlapping `ws x ws` windows of tokens: output shape
    /// `(B * nW, ws * ws, C)`. Inverted exactly by [`Tensor::window_reverse`].
    pub fn window_partition(&self, ws: usize, shift: usize) -> Tensor<F> {
        let shape = self.shape();
        assert_eq!(shape.len(), 4);
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        assert!(h % ws == 0 && w % ws == 0, "spatial size must divide window size");
        assert!(shift <= ws, "shift must not exceed the window size");
        let value = {
            let x = self.value();
            window_scatter(&x, b, c, h, w, ws, shift, false)
        };
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                vec![Some(window_scatter(g, b, c, h, w, ws, shift, true))]
            }),
        )
    }

    /// Inverse of [`Tensor::window_partition`] for a feature map of the given
    /// original spatial shape.
    pub fn window_reverse(&self, ws: usize, shift: usize, c: usize, h: usize, w: usize) -> Tensor<F> {
        let shape = self.shape();
        assert_eq!(shape.len(), 3);
        let nw = (h / ws) * (w / ws);
        assert_eq!(shape[0] % nw, 0, "window count must divide batch-window axis");
        let b = shape[0] / nw;
        assert_eq!(shape[1], ws * ws);
        assert_eq!(shape[2], c);
        let value = {
            let x = self.value();
            window_scatter(&x, b, c, h, w, ws, shift, true)
        };
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                vec![Some(window_scatter(g, b, c, h, w, ws, shift, false))]
            }),
        )
    }
}

/// Move data between a (B, C, H, W) map and (B*nW, ws*ws, C) windowed tokens.
/// `reverse = false` partitions the map (applying a cyclic shift of
/// `(-shift, -shift)` first); `reverse = true` scatters tokens back.
fn window_scatter<F: Elem>(
    x: &ArrayD<F>,
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    ws: usize,
    shift: usize,
    reverse: bool,
) -> ArrayD<F> {
    let nwh = h / ws;
    let nww = w / ws;
    let x = x.as_standard_layout();
    let xs = x.as_slice().unwrap();
    let out_shape: &[usize] = if reverse {
        &[b, c, h, w]
    } else {
        &[b * nwh * nww, ws * ws, c]
    };
    let mut out = ArrayD::<F>::zeros(IxDyn(out_shape));
    let os = out.as_slice_mut().unwrap();
    for bi in 0..b {
        for bh in 0..nwh {
            for bw in 0..nww {
                let win = (bi * nwh + bh) * nww + bw;
                for wi in 0..ws {
                    let src_i = (bh * ws + wi + shift) % h;
                    for wj in 0..ws {
                        let src_j = (bw * ws + wj + shift) % w;
                        let tok = wi * ws + wj;
                        for ch in 0..c {
                            let map_idx = ((bi * c + ch) * h + src_i) * w + src_j;
                            let win_idx = (win * ws * ws + tok) * c + ch;
                            if reverse {
                                os[map_idx] = xs[win_idx];
                            } else {
                                os[win_idx] = xs[map_idx];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
