//! Convolution, transposed convolution, instance normalization and leaky ReLU
//! with their backward passes. Weights are flat slices in PyTorch layout.

use super::tensor::{gemm, MatRef, Real, Tensor};

/// Upper bound on im2col buffer elements; larger convolutions are processed in pixel tiles.
const TILE_ELEMS: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        ConvGeom {
            cin,
            cout,
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    pub fn out_extent(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Shared walk of im2col and its adjoint over output pixels `p0..p0+np`.
fn for_each_tap<F: FnMut(usize, usize, Option<usize>)>(h: usize, w: usize, g: ConvGeom, wo: usize, p0: usize, np: usize, mut f: F) {
    let k = g.kernel;
    for ci in 0..g.cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * np;
                let (mut oy, mut ox) = (p0 / wo, p0 % wo);
                for j in 0..np {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    let src = (iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w)
                        .then(|| ci * h * w + iy as usize * w + ix as usize);
                    f(row, j, src);
                    ox += 1;
                    if ox == wo {
                        ox = 0;
                        oy += 1;
                    }
                }
            }
        }
    }
}

fn im2col<T: Real>(x: &[T], h: usize, w: usize, g: ConvGeom, wo: usize, p0: usize, np: usize, col: &mut [T]) {
    for_each_tap(h, w, g, wo, p0, np, |row, j, src| {
        col[row + j] = src.map_or(T::zero(), |i| x[i]);
    });
}

fn col2im<T: Real>(col: &[T], h: usize, w: usize, g: ConvGeom, wo: usize, p0: usize, np: usize, dx: &mut [T]) {
    for_each_tap(h, w, g, wo, p0, np, |row, j, src| {
        if let Some(i) = src {
            dx[i] += col[row + j];
        }
    });
}

fn tile_pixels(g: ConvGeom, hwo: usize) -> usize {
    (TILE_ELEMS / g.patch_len().max(1)).clamp(1, hwo.max(1))
}

pub fn conv2d_forward<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], g: ConvGeom) -> Tensor<T> {
    assert_eq!(x.c, g.cin, "conv input channels");
    assert_eq!(weight.len(), g.weight_len());
    assert_eq!(bias.len(), g.cout);
    let (ho, wo) = (g.out_extent(x.h), g.out_extent(x.w));
    let hwo = ho * wo;
    let mut out = Tensor::zeros(x.n, g.cout, ho, wo);
    let kk = g.patch_len();
    let wmat = MatRef::rows(weight, g.cout, kk, kk);
    let tile = tile_pixels(g, hwo);
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * tile] };
    for n in 0..x.n {
        let xs = x.sample(n);
        let ys = out.sample_mut(n);
        if g.is_pointwise() {
            gemm(T::one(), wmat, MatRef::rows(xs, g.cin, hwo, hwo), T::zero(), ys, hwo);
        } else {
            for p0 in (0..hwo).step_by(tile) {
                let np = tile.min(hwo - p0);
                im2col(xs, x.h, x.w, g, wo, p0, np, &mut col);
                gemm(T::one(), wmat, MatRef::rows(&col, kk, np, np), T::zero(), &mut ys[p0..], hwo);
            }
        }
        for (co, &b) in bias.iter().enumerate() {
            ys[co * hwo..(co + 1) * hwo].iter_mut().for_each(|v| *v += b);
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when `need_dx`.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    g: ConvGeom,
    dy: &Tensor<T>,
    dweight: &mut [T],
    dbias: &mut [T],
    need_dx: bool,
) -> Option<Tensor<T>> {
    let (ho, wo) = (dy.h, dy.w);
    let hwo = ho * wo;
    let kk = g.patch_len();
    let hw = x.plane();
    let mut dx = need_dx.then(|| Tensor::zeros(x.n, x.c, x.h, x.w));
    let tile = tile_pixels(g, hwo);
    let mut col = vec![T::zero(); if g.is_pointwise() { 0 } else { kk * tile }];
    let mut dcol = col.clone();
    for n in 0..x.n {
        let xs = x.sample(n);
        let dys = dy.sample(n);
        for (co, db) in dbias.iter_mut().enumerate() {
            *db += dys[co * hwo..(co + 1) * hwo].iter().copied().sum::<T>();
        }
        if g.is_pointwise() {
            gemm(
                T::one(),
                MatRef::rows(dys, g.cout, hwo, hwo),
                MatRef::transposed(xs, hw, g.cin, hw),
                T::one(),
                dweight,
                kk,
            );
            if let Some(dx) = dx.as_mut() {
                gemm(
                    T::one(),
                    MatRef::transposed(weight, g.cin, g.cout, kk),
                    MatRef::rows(dys, g.cout, hwo, hwo),
                    T::zero(),
                    dx.sample_mut(n),
                    hw,
                );
            }
            continue;
        }
        for p0 in (0..hwo).step_by(tile) {
            let np = tile.min(hwo - p0);
            let dy_tile = MatRef::rows(&dys[p0..], g.cout, np, hwo);
            im2col(xs, x.h, x.w, g, wo, p0, np, &mut col);
            gemm(T::one(), dy_tile, MatRef::transposed(&col, np, kk, np), T::one(), dweight, kk);
            if let Some(dx) = dx.as_mut() {
                gemm(T::one(), MatRef::transposed(weight, kk, g.cout, kk), dy_tile, T::zero(), &mut dcol, np);
                col2im(&dcol, x.h, x.w, g, wo, p0, np, dx.sample_mut(n));
            }
        }
    }
    dx
}

/// Kernel-2 stride-2 transposed convolution; `weight` is `(cin, cout, 2, 2)`.
pub fn upconv_forward<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], cout: usize) -> Tensor<T> {
    let (cin, hw) = (x.c, x.plane());
    let c4 = cout * 4;
    assert_eq!(weight.len(), cin * c4);
    let mut out = Tensor::zeros(x.n, cout, x.h * 2, x.w * 2);
    let mut cols = vec![T::zero(); c4 * hw];
    let wo = x.w * 2;
    for n in 0..x.n {
        gemm(
            T::one(),
            MatRef::transposed(weight, c4, cin, c4),
            MatRef::rows(x.sample(n), cin, hw, hw),
            T::zero(),
            &mut cols,
            hw,
        );
        let ys = out.sample_mut(n);
        for co in 0..cout {
            for dy in 0..2 {
                for dx in 0..2 {
                    let src = &cols[(co * 4 + dy * 2 + dx) * hw..][..hw];
                    for y in 0..x.h {
                        for xx in 0..x.w {
                            ys[co * 4 * hw + (2 * y + dy) * wo + 2 * xx + dx] = src[y * x.w + xx] + bias[co];
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn upconv_backward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    dy: &Tensor<T>,
    dweight: &mut [T],
    dbias: &mut [T],
) -> Tensor<T> {
    let (cin, hw, cout) = (x.c, x.plane(), dy.c);
    let c4 = cout * 4;
    let wo = x.w * 2;
    let mut dx = Tensor::zeros(x.n, cin, x.h, x.w);
    let mut dcols = vec![T::zero(); c4 * hw];
    for n in 0..x.n {
        let dys = dy.sample(n);
        for co in 0..cout {
            dbias[co] += dys[co * 4 * hw..(co + 1) * 4 * hw].iter().copied().sum::<T>();
            for ddy in 0..2 {
                for ddx in 0..2 {
                    let dst = &mut dcols[(co * 4 + ddy * 2 + ddx) * hw..][..hw];
                    for y in 0..x.h {
                        for xx in 0..x.w {
                            dst[y * x.w + xx] = dys[co * 4 * hw + (2 * y + ddy) * wo + 2 * xx + ddx];
                        }
                    }
                }
            }
        }
        let xs = x.sample(n);
        gemm(
            T::one(),
            MatRef::rows(xs, cin, hw, hw),
            MatRef::transposed(&dcols, hw, c4, hw),
            T::one(),
            dweight,
            c4,
        );
        gemm(
            T::one(),
            MatRef::rows(weight, cin, c4, c4),
            MatRef::rows(&dcols, c4, hw, hw),
            T::zero(),
            dx.sample_mut(n),
            hw,
        );
    }
    dx
}

/// Normalized pre-affine activations and inverse standard deviations, per (sample, channel).
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

pub fn instance_norm_forward<T: Real>(x: &Tensor<T>, gamma: &[T], beta: &[T], eps: f64) -> (Tensor<T>, NormCache<T>) {
    let p = x.plane();
    let mut xhat = x.clone();
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(x.n * x.c);
    for (i, (xh, y)) in xhat.data.chunks_mut(p).zip(out.data.chunks_mut(p)).enumerate() {
        let c = i % x.c;
        let mean = xh.iter().map(|v| v.as_f64()).sum::<f64>() / p as f64;
        let var = xh.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / p as f64;
        let inv = 1.0 / (var + eps).sqrt();
        let (m, s) = (T::from_f64_lossy(mean), T::from_f64_lossy(inv));
        for (h, o) in xh.iter_mut().zip(y.iter_mut()) {
            *h = (*h - m) * s;
            *o = gamma[c] * *h + beta[c];
        }
        inv_std.push(s);
    }
    (out, NormCache { xhat, inv_std })
}

pub fn instance_norm_backward<T: Real>(
    cache: &NormCache<T>,
    gamma: &[T],
    dy: &Tensor<T>,
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Tensor<T> {
    let x = &cache.xhat;
    let p = x.plane();
    let np = T::from_usize(p).expect("plane size");
    let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
    for (i, ((xh, g), d)) in x.data.chunks(p).zip(dy.data.chunks(p)).zip(dx.data.chunks_mut(p)).enumerate() {
        let c = i % x.c;
        let (mut sum_dy, mut sum_dy_xh) = (T::zero(), T::zero());
        for (&h, &gv) in xh.iter().zip(g) {
            sum_dy += gv;
            sum_dy_xh += gv * h;
        }
        dgamma[c] += sum_dy_xh;
        dbeta[c] += sum_dy;
        let scale = gamma[c] * cache.inv_std[i] / np;
        for ((o, &h), &gv) in d.iter_mut().zip(xh).zip(g) {
            *o = scale * (np * gv - sum_dy - h * sum_dy_xh);
        }
    }
    dx
}

pub fn leaky_relu<T: Real>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    let mut y = x.clone();
    y.data.iter_mut().filter(|v| **v < T::zero()).for_each(|v| *v = *v * slope);
    y
}

/// Backward of [`leaky_relu`] given its input.
pub fn leaky_relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>, slope: T) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data.iter_mut().zip(&x.data) {
        if v < T::zero() {
            *d = *d * slope;
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn naive_conv(x: &Tensor<f64>, w: &[f64], b: &[f64], g: ConvGeom) -> Tensor<f64> {
        let (ho, wo) = (g.out_extent(x.h), g.out_extent(x.w));
        let mut out = Tensor::zeros(x.n, g.cout, ho, wo);
        for n in 0..x.n {
            for co in 0..g.cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[co];
                        for ci in 0..g.cin {
                            for ky in 0..g.kernel {
                                for kx in 0..g.kernel {
                                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    acc += w[((co * g.cin + ci) * g.kernel + ky) * g.kernel + kx]
                                        * x.at(n, ci, iy as usize, ix as usize);
                                }
                            }
                        }
                        out.data[((n * g.cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (g, h, w) in [
            (ConvGeom::new(3, 4, 3, 1), 7, 5),
            (ConvGeom::new(2, 5, 3, 2), 8, 6),
            (ConvGeom::new(3, 2, 1, 2), 6, 6),
            (ConvGeom::new(4, 3, 1, 1), 5, 3),
        ] {
            let x = Tensor::from_vec(2, g.cin, h, w, random(&mut rng, 2 * g.cin * h * w));
            let wt = random(&mut rng, g.weight_len());
            let b = random(&mut rng, g.cout);
            let fast = conv2d_forward(&x, &wt, &b, g);
            let slow = naive_conv(&x, &wt, &b, g);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stride_two_halves_extents() {
        let g = ConvGeom::new(1, 1, 3, 2);
        assert_eq!((g.out_extent(64), g.out_extent(7)), (32, 4));
    }

    // <dy, conv(x)> is bilinear, so the backward pass must be its exact adjoint.
    #[test]
    fn conv_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for g in [ConvGeom::new(2, 3, 3, 1), ConvGeom::new(3, 2, 3, 2), ConvGeom::new(2, 4, 1, 2), ConvGeom::new(2, 2, 1, 1)] {
            let x = Tensor::from_vec(2, g.cin, 6, 6, random(&mut rng, 2 * g.cin * 36));
            let wt = random(&mut rng, g.weight_len());
            let b = vec![0.0; g.cout];
            let y = conv2d_forward(&x, &wt, &b, g);
            let dy = Tensor::from_vec(y.n, y.c, y.h, y.w, random(&mut rng, y.data.len()));
            let mut dw = vec![0.0; wt.len()];
            let mut db = vec![0.0; g.cout];
            let dx = conv2d_backward(&x, &wt, g, &dy, &mut dw, &mut db, true).unwrap();
            let lhs: f64 = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
            let via_x: f64 = dx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
            let via_w: f64 = dw.iter().zip(&wt).map(|(a, b)| a * b).sum();
            assert!((lhs - via_x).abs() < 1e-10, "{lhs} vs {via_x}");
            assert!((lhs - via_w).abs() < 1e-10, "{lhs} vs {via_w}");
            assert!((db.iter().sum::<f64>() - dy.data.iter().sum::<f64>()).abs() < 1e-10);
        }
    }

    #[test]
    fn upconv_places_each_input_in_a_two_by_two_block() {
        // cin 1, cout 1, weight [1,2,3,4]
        let x = Tensor::from_vec(1, 1, 1, 2, vec![1.0, 10.0]);
        let y = upconv_forward(&x, &[1.0, 2.0, 3.0, 4.0], &[0.5], 1);
        assert_eq!(y.shape(), [1, 1, 2, 4]);
        assert_eq!(y.data, vec![1.5, 2.5, 10.5, 20.5, 3.5, 4.5, 30.5, 40.5]);
    }

    #[test]
    fn upconv_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_vec(2, 3, 3, 4, random(&mut rng, 72));
        let wt = random(&mut rng, 3 * 2 * 4);
        let y = upconv_forward(&x, &wt, &[0.0, 0.0], 2);
        let dy = Tensor::from_vec(y.n, y.c, y.h, y.w, random(&mut rng, y.data.len()));
        let mut dw = vec![0.0; wt.len()];
        let mut db = vec![0.0; 2];
        let dx = upconv_backward(&x, &wt, &dy, &mut dw, &mut db);
        let lhs: f64 = y.data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
        let via_x: f64 = dx.data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        let via_w: f64 = dw.iter().zip(&wt).map(|(a, b)| a * b).sum();
        assert!((lhs - via_x).abs() < 1e-10);
        assert!((lhs - via_w).abs() < 1e-10);
    }

    #[test]
    fn instance_norm_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::from_vec(3, 4, 8, 8, (0..768).map(|_| rng.random_range(-50.0..200.0)).collect());
        let (_, cache) = instance_norm_forward(&x, &[1.0; 4], &[0.0; 4], 1e-5);
        for ch in cache.xhat.data.chunks(64) {
            let mean = ch.iter().sum::<f64>() / 64.0;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn instance_norm_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_vec(1, 2, 3, 3, random(&mut rng, 18));
        let gamma = [1.3, -0.7];
        let beta = [0.2, 0.1];
        let coef = random(&mut rng, 18);
        let loss = |x: &Tensor<f64>| {
            let (y, _) = instance_norm_forward(x, &gamma, &beta, 1e-5);
            y.data.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = instance_norm_forward(&x, &gamma, &beta, 1e-5);
        let dy = Tensor::from_vec(1, 2, 3, 3, coef.clone());
        let (mut dg, mut db) = ([0.0; 2], [0.0; 2]);
        let dx = instance_norm_backward(&cache, &gamma, &dy, &mut dg, &mut db);
        for i in 0..18 {
            let mut xp = x.clone();
            xp.data[i] += 1e-6;
            let mut xm = x.clone();
            xm.data[i] -= 1e-6;
            let fd = (loss(&xp) - loss(&xm)) / 2e-6;
            assert!((fd - dx.data[i]).abs() < 1e-6, "{fd} vs {}", dx.data[i]);
        }
    }

    #[test]
    fn leaky_relu_slope() {
        let x = Tensor::from_vec(1, 1, 1, 3, vec![-2.0, 0.0, 3.0]);
        assert_eq!(leaky_relu(&x, 0.01).data, vec![-0.02, 0.0, 3.0]);
        let d = leaky_relu_backward(&x, &Tensor::from_vec(1, 1, 1, 3, vec![1.0; 3]), 0.01);
        assert_eq!(d.data, vec![0.01, 1.0, 1.0]);
    }
}
