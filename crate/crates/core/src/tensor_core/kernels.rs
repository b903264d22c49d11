//! Forward/backward kernels for the spatial ops. Convolutions lower to
//! im2col + GEMM, one sample at a time, with reductions over the batch done
//! in sample order so results do not depend on scheduling.

use super::{Real, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
}

pub(crate) fn conv_geometry<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeometry, TensorError> {
    let [n, c_in, h, w] = x.dims4("conv2d")?;
    let [c_out, w_in, kh, kw] = weight.dims4("conv2d")?;
    if w_in != c_in {
        return Err(TensorError::Shape {
            op: "conv2d",
            detail: format!("input has {c_in} channels but weight {:?} expects {w_in}", weight.shape()),
        });
    }
    if bias.shape() != [c_out] {
        return Err(TensorError::Shape {
            op: "conv2d",
            detail: format!("bias {:?} does not match {c_out} output channels", bias.shape()),
        });
    }
    if stride == 0 {
        return Err(TensorError::Param { op: "conv2d", detail: "stride must be >= 1".into() });
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(TensorError::Shape {
            op: "conv2d",
            detail: format!("{kh}x{kw} kernel does not fit {h}x{w} input with pad {pad}"),
        });
    }
    Ok(ConvGeometry {
        n,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        stride,
        pad,
        oh: (h + 2 * pad - kh) / stride + 1,
        ow: (w + 2 * pad - kw) / stride + 1,
    })
}

fn im2col<T: Real>(g: &ConvGeometry, x: &[T], col: &mut [T]) {
    let p = g.oh * g.ow;
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, slot) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *slot = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeometry, col: &[T], dx: &mut [T]) {
    let p = g.oh * g.ow;
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    g: &ConvGeometry,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Tensor<T> {
    let p = g.oh * g.ow;
    let k = g.patch();
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * p;
    let mut out = vec![T::zero(); g.n * out_len];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    for s in 0..g.n {
        let xs = &x.data()[s * in_len..(s + 1) * in_len];
        let ys = &mut out[s * out_len..(s + 1) * out_len];
        for (co, row) in ys.chunks_mut(p).enumerate() {
            row.fill(bias.data()[co]);
        }
        let patches: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(g, xs, &mut col);
            &col
        };
        T::gemm(false, false, g.c_out, p, k, T::one(), weight.data(), patches, T::one(), ys);
    }
    Tensor::new(&[g.n, g.c_out, g.oh, g.ow], out).expect("conv output shape")
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeometry,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    need_input: bool,
) -> ConvGrads<T> {
    let p = g.oh * g.ow;
    let k = g.patch();
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * p;
    let mut dw = vec![T::zero(); g.c_out * k];
    let mut db = vec![T::zero(); g.c_out];
    let mut dx = need_input.then(|| vec![T::zero(); g.n * in_len]);
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
    let mut dcol = if need_input && !g.is_pointwise() { vec![T::zero(); k * p] } else { Vec::new() };
    for s in 0..g.n {
        let xs = &x.data()[s * in_len..(s + 1) * in_len];
        let dys = &dy.data()[s * out_len..(s + 1) * out_len];
        for (co, row) in dys.chunks(p).enumerate() {
            db[co] += row.iter().fold(T::zero(), |a, &v| a + v);
        }
        let patches: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(g, xs, &mut col);
            &col
        };
        T::gemm(false, true, g.c_out, k, p, T::one(), dys, patches, T::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[s * in_len..(s + 1) * in_len];
            if g.is_pointwise() {
                T::gemm(true, false, k, p, g.c_out, T::one(), weight.data(), dys, T::one(), dxs);
            } else {
                T::gemm(true, false, k, p, g.c_out, T::one(), weight.data(), dys, T::zero(), &mut dcol);
                col2im(g, &dcol, dxs);
            }
        }
    }
    ConvGrads {
        input: dx.map(|d| Tensor::new(&[g.n, g.c_in, g.h, g.w], d).expect("dx shape")),
        weight: Tensor::new(weight.shape(), dw).expect("dw shape"),
        bias: Tensor::new(&[g.c_out], db).expect("db shape"),
    }
}

/// Geometry of a 2x2 / stride-2 transpose convolution with weight laid out
/// as `[c_out, c_in, 2, 2]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct UpGeometry {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
}

pub(crate) fn up_geometry<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<UpGeometry, TensorError> {
    let [n, c_in, h, w] = x.dims4("conv_transpose2d")?;
    let [c_out, w_in, kh, kw] = weight.dims4("conv_transpose2d")?;
    if (kh, kw) != (2, 2) {
        return Err(TensorError::Param {
            op: "conv_transpose2d",
            detail: format!("only 2x2 kernels with stride 2 are supported, got {kh}x{kw}"),
        });
    }
    if w_in != c_in {
        return Err(TensorError::Shape {
            op: "conv_transpose2d",
            detail: format!("input has {c_in} channels but weight {:?} expects {w_in}", weight.shape()),
        });
    }
    if bias.shape() != [c_out] {
        return Err(TensorError::Shape {
            op: "conv_transpose2d",
            detail: format!("bias {:?} does not match {c_out} output channels", bias.shape()),
        });
    }
    Ok(UpGeometry { n, c_in, h, w, c_out })
}

/// `[c_out, c_in, 2, 2]` -> row-major `[(c_out, 2, 2), c_in]`.
fn regroup_up_weight<T: Real>(g: &UpGeometry, weight: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.c_out * 4 * g.c_in];
    for co in 0..g.c_out {
        for ci in 0..g.c_in {
            for ab in 0..4 {
                out[(co * 4 + ab) * g.c_in + ci] = weight[(co * g.c_in + ci) * 4 + ab];
            }
        }
    }
    out
}

pub(crate) fn conv_transpose2d_forward<T: Real>(
    g: &UpGeometry,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Tensor<T> {
    let p = g.h * g.w;
    let (oh, ow) = (2 * g.h, 2 * g.w);
    let wr = regroup_up_weight(g, weight.data());
    let mut z = vec![T::zero(); g.c_out * 4 * p];
    let mut out = vec![T::zero(); g.n * g.c_out * oh * ow];
    for s in 0..g.n {
        let xs = &x.data()[s * g.c_in * p..(s + 1) * g.c_in * p];
        T::gemm(false, false, g.c_out * 4, p, g.c_in, T::one(), &wr, xs, T::zero(), &mut z);
        let ys = &mut out[s * g.c_out * oh * ow..(s + 1) * g.c_out * oh * ow];
        for co in 0..g.c_out {
            let b = bias.data()[co];
            for ab in 0..4 {
                let (a, bb) = (ab / 2, ab % 2);
                let zr = &z[(co * 4 + ab) * p..(co * 4 + ab + 1) * p];
                for i in 0..g.h {
                    for j in 0..g.w {
                        ys[(co * oh + 2 * i + a) * ow + 2 * j + bb] = zr[i * g.w + j] + b;
                    }
                }
            }
        }
    }
    Tensor::new(&[g.n, g.c_out, oh, ow], out).expect("up output shape")
}

pub(crate) fn conv_transpose2d_backward<T: Real>(
    g: &UpGeometry,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    need_input: bool,
) -> ConvGrads<T> {
    let p = g.h * g.w;
    let (oh, ow) = (2 * g.h, 2 * g.w);
    let wr = regroup_up_weight(g, weight.data());
    let mut dz = vec![T::zero(); g.c_out * 4 * p];
    let mut dwr = vec![T::zero(); g.c_out * 4 * g.c_in];
    let mut db = vec![T::zero(); g.c_out];
    let mut dx = need_input.then(|| vec![T::zero(); g.n * g.c_in * p]);
    for s in 0..g.n {
        let dys = &dy.data()[s * g.c_out * oh * ow..(s + 1) * g.c_out * oh * ow];
        for co in 0..g.c_out {
            db[co] += dys[co * oh * ow..(co + 1) * oh * ow].iter().fold(T::zero(), |a, &v| a + v);
            for ab in 0..4 {
                let (a, bb) = (ab / 2, ab % 2);
                let zr = &mut dz[(co * 4 + ab) * p..(co * 4 + ab + 1) * p];
                for i in 0..g.h {
                    for j in 0..g.w {
                        zr[i * g.w + j] = dys[(co * oh + 2 * i + a) * ow + 2 * j + bb];
                    }
                }
            }
        }
        let xs = &x.data()[s * g.c_in * p..(s + 1) * g.c_in * p];
        T::gemm(false, true, g.c_out * 4, g.c_in, p, T::one(), &dz, xs, T::one(), &mut dwr);
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[s * g.c_in * p..(s + 1) * g.c_in * p];
            T::gemm(true, false, g.c_in, p, g.c_out * 4, T::one(), &wr, &dz, T::zero(), dxs);
        }
    }
    let mut dw = vec![T::zero(); g.c_out * g.c_in * 4];
    for co in 0..g.c_out {
        for ci in 0..g.c_in {
            for ab in 0..4 {
                dw[(co * g.c_in + ci) * 4 + ab] = dwr[(co * 4 + ab) * g.c_in + ci];
            }
        }
    }
    ConvGrads {
        input: dx.map(|d| Tensor::new(&[g.n, g.c_in, g.h, g.w], d).expect("dx shape")),
        weight: Tensor::new(weight.shape(), dw).expect("dw shape"),
        bias: Tensor::new(&[g.c_out], db).expect("db shape"),
    }
}

/// 2x2 max pooling. Returns the pooled tensor and, for every output element,
/// the flat index of the input element it came from (first maximum in
/// row-major window order wins ties).
pub(crate) fn maxpool2x2_forward<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>), TensorError> {
    let [n, c, h, w] = x.dims4("maxpool2x2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::Shape { op: "maxpool2x2", detail: format!("spatial dims {h}x{w} must both be even") });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for cand in
                    [base + 2 * i * w + 2 * j + 1, base + (2 * i + 1) * w + 2 * j, base + (2 * i + 1) * w + 2 * j + 1]
                {
                    if data[cand] > data[best] {
                        best = cand;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, oh, ow], out)?, argmax))
}

pub(crate) fn maxpool2x2_backward<T: Real>(input_shape: &[usize], argmax: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&src, &g) in argmax.iter().zip(dy.data()) {
        d[src] += g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    /// Direct nested-loop cross-correlation, independent of the im2col path.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let [n, ci, h, wd] = x.dims4("t").unwrap();
        let [co, _, kh, kw] = w.dims4("t").unwrap();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        Tensor::from_fn(&[n, co, oh, ow], |flat| {
            let ox = flat % ow;
            let oy = (flat / ow) % oh;
            let o = (flat / (ow * oh)) % co;
            let s = flat / (ow * oh * co);
            let mut acc = b.data()[o];
            for c in 0..ci {
                for ki in 0..kh {
                    for kj in 0..kw {
                        let iy = (oy * stride + ki) as isize - pad as isize;
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            acc += x.at(&[s, c, iy as usize, ix as usize]) * w.at(&[o, c, ki, kj]);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn im2col_matches_naive_conv() {
        let x = Tensor::from_fn(&[2, 3, 5, 6], |i| ((i * 7919) % 13) as f64 - 6.0);
        for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (2, 1, 0), (1, 1, 0), (3, 1, 0)] {
            let w = Tensor::from_fn(&[4, 3, k, k], |i| ((i * 31) % 7) as f64 * 0.5 - 1.5);
            let b = Tensor::from_fn(&[4], |i| i as f64);
            let g = conv_geometry(&x, &w, &b, stride, pad).unwrap();
            let fast = conv2d_forward(&g, &x, &w, &b);
            let slow = naive_conv(&x, &w, &b, stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            assert!(fast.max_abs_diff(&slow) < 1e-12, "k={k} s={stride} p={pad}");
        }
    }

    #[test]
    fn all_ones_kernel_sums_padded_window() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let w = Tensor::ones(&[1, 1, 3, 3]);
        let b = Tensor::zeros(&[1]);
        let g = conv_geometry(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(conv2d_forward(&g, &x, &w, &b).data(), &[10., 10., 10., 10.]);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        let b = Tensor::zeros(&[1]);
        let err = conv_geometry(&x, &w, &b, 1, 1).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
    }

    #[test]
    fn transpose_conv_places_values_on_even_grid() {
        let x = t(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let w = t(&[1, 1, 2, 2], &[1., 0., 0., 0.]);
        let b = Tensor::zeros(&[1]);
        let g = up_geometry(&x, &w, &b).unwrap();
        let y = conv_transpose2d_forward(&g, &x, &w, &b);
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(y.data(), &[1., 0., 2., 0., 0., 0., 0., 0., 3., 0., 4., 0., 0., 0., 0., 0.]);
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        assert!(maxpool2x2_forward(&Tensor::<f32>::zeros(&[1, 1, 3, 4])).is_err());
    }

    #[test]
    fn maxpool_tie_goes_to_first_element() {
        let x = t(&[1, 1, 2, 2], &[4., 4., 4., 4.]);
        let (y, idx) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.]);
        assert_eq!(idx, vec![0]);
        let dx = maxpool2x2_backward(x.shape(), &idx, &t(&[1, 1, 1, 1], &[1.]));
        assert_eq!(dx.data(), &[1., 0., 0., 0.]);
    }
}
