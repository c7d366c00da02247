//! Slice-level forward and backward kernels for the dense operators.
//!
//! Shapes are passed explicitly; the graph layer validates them first.

use super::tensor::Real;

/// `y[r, :] = x[r, :] · w (+ b)` for `rows × cin` times `cin × cout`.
pub fn linear_fwd<T: Real>(
    x: &[T],
    rows: usize,
    cin: usize,
    w: &[T],
    cout: usize,
    b: Option<&[T]>,
) -> Vec<T> {
    let mut y = vec![T::zero(); rows * cout];
    if let Some(b) = b {
        for row in y.chunks_exact_mut(cout) {
            row.copy_from_slice(b);
        }
    }
    T::gemm(
        rows,
        cin,
        cout,
        x,
        cin as isize,
        1,
        w,
        cout as isize,
        1,
        T::one(),
        &mut y,
    );
    y
}

pub struct LinearGrads<T> {
    pub x: Vec<T>,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

pub fn linear_bwd<T: Real>(
    x: &[T],
    rows: usize,
    cin: usize,
    w: &[T],
    cout: usize,
    gy: &[T],
) -> LinearGrads<T> {
    // gx = gy · wᵀ
    let mut gx = vec![T::zero(); rows * cin];
    T::gemm(
        rows,
        cout,
        cin,
        gy,
        cout as isize,
        1,
        w,
        1,
        cout as isize,
        T::zero(),
        &mut gx,
    );
    // gw = xᵀ · gy
    let mut gw = vec![T::zero(); cin * cout];
    T::gemm(
        cin,
        rows,
        cout,
        x,
        1,
        cin as isize,
        gy,
        cout as isize,
        1,
        T::zero(),
        &mut gw,
    );
    let mut gb = vec![T::zero(); cout];
    for row in gy.chunks_exact(cout) {
        gb.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
    }
    LinearGrads {
        x: gx,
        w: gw,
        b: gb,
    }
}

/// Valid output-column range `[lo, hi)` for a horizontal tap offset `dj`
/// under same-padding, and the matching input start column.
#[inline]
fn tap_span(width: usize, dj: isize) -> Option<(usize, usize)> {
    let lo = (-dj).max(0) as usize;
    let hi = (width as isize - dj).min(width as isize);
    if hi <= lo as isize {
        None
    } else {
        Some((lo, hi as usize))
    }
}

/// Depth-wise same-padded convolution, `x: H×W×C`, `k: K×K×C`.
pub fn dwconv_fwd<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    c: usize,
    k: &[T],
    ks: usize,
    b: Option<&[T]>,
) -> Vec<T> {
    let mut y = vec![T::zero(); h * w * c];
    if let Some(b) = b {
        for px in y.chunks_exact_mut(c) {
            px.copy_from_slice(b);
        }
    }
    let half = (ks / 2) as isize;
    for ki in 0..ks {
        let di = ki as isize - half;
        for kj in 0..ks {
            let dj = kj as isize - half;
            let Some((j0, j1)) = tap_span(w, dj) else { continue };
            let tap = &k[(ki * ks + kj) * c..][..c];
            for i in 0..h {
                let si = i as isize + di;
                if si < 0 || si >= h as isize {
                    continue;
                }
                let si = si as usize;
                for j in j0..j1 {
                    let sj = (j as isize + dj) as usize;
                    let src = &x[(si * w + sj) * c..][..c];
                    let dst = &mut y[(i * w + j) * c..][..c];
                    for ((d, &s), &t) in dst.iter_mut().zip(src).zip(tap) {
                        *d += s * t;
                    }
                }
            }
        }
    }
    y
}

pub struct ConvGrads<T> {
    pub x: Vec<T>,
    pub k: Vec<T>,
    pub b: Vec<T>,
}

pub fn dwconv_bwd<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    c: usize,
    k: &[T],
    ks: usize,
    gy: &[T],
) -> ConvGrads<T> {
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); c];
    for px in gy.chunks_exact(c) {
        gb.iter_mut().zip(px).for_each(|(a, &b)| *a += b);
    }
    let half = (ks / 2) as isize;
    for ki in 0..ks {
        let di = ki as isize - half;
        for kj in 0..ks {
            let dj = kj as isize - half;
            let Some((j0, j1)) = tap_span(w, dj) else { continue };
            let tap_off = (ki * ks + kj) * c;
            for i in 0..h {
                let si = i as isize + di;
                if si < 0 || si >= h as isize {
                    continue;
                }
                let si = si as usize;
                for j in j0..j1 {
                    let sj = (j as isize + dj) as usize;
                    let src = (si * w + sj) * c;
                    let dst = (i * w + j) * c;
                    for ch in 0..c {
                        let g = gy[dst + ch];
                        gx[src + ch] += g * k[tap_off + ch];
                        gk[tap_off + ch] += g * x[src + ch];
                    }
                }
            }
        }
    }
    ConvGrads {
        x: gx,
        k: gk,
        b: gb,
    }
}

/// Dense same-padded convolution, `x: H×W×Cin`, `k: K×K×Cin×Cout`.
///
/// Each tap is applied as one strided matrix product per output row.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_fwd<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    cin: usize,
    k: &[T],
    ks: usize,
    cout: usize,
    b: Option<&[T]>,
) -> Vec<T> {
    let mut y = vec![T::zero(); h * w * cout];
    if let Some(b) = b {
        for px in y.chunks_exact_mut(cout) {
            px.copy_from_slice(b);
        }
    }
    let half = (ks / 2) as isize;
    for ki in 0..ks {
        let di = ki as isize - half;
        for kj in 0..ks {
            let dj = kj as isize - half;
            let Some((j0, j1)) = tap_span(w, dj) else { continue };
            let tap = &k[(ki * ks + kj) * cin * cout..][..cin * cout];
            for i in 0..h {
                let si = i as isize + di;
                if si < 0 || si >= h as isize {
                    continue;
                }
                let sj0 = (j0 as isize + dj) as usize;
                let src = &x[(si as usize * w + sj0) * cin..][..(j1 - j0) * cin];
                let dst = &mut y[(i * w + j0) * cout..][..(j1 - j0) * cout];
                T::gemm(
                    j1 - j0,
                    cin,
                    cout,
                    src,
                    cin as isize,
                    1,
                    tap,
                    cout as isize,
                    1,
                    T::one(),
                    dst,
                );
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd<T: Real>(
    x: &[T],
    h: usize,
    w: usize,
    cin: usize,
    k: &[T],
    ks: usize,
    cout: usize,
    gy: &[T],
) -> ConvGrads<T> {
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); cout];
    for px in gy.chunks_exact(cout) {
        gb.iter_mut().zip(px).for_each(|(a, &b)| *a += b);
    }
    let half = (ks / 2) as isize;
    for ki in 0..ks {
        let di = ki as isize - half;
        for kj in 0..ks {
            let dj = kj as isize - half;
            let Some((j0, j1)) = tap_span(w, dj) else { continue };
            let tap_off = (ki * ks + kj) * cin * cout;
            for i in 0..h {
                let si = i as isize + di;
                if si < 0 || si >= h as isize {
                    continue;
                }
                let n = j1 - j0;
                let sj0 = (j0 as isize + dj) as usize;
                let src_off = (si as usize * w + sj0) * cin;
                let g = &gy[(i * w + j0) * cout..][..n * cout];
                // gx[src] += g · tapᵀ
                T::gemm(
                    n,
                    cout,
                    cin,
                    g,
                    cout as isize,
                    1,
                    &k[tap_off..tap_off + cin * cout],
                    1,
                    cout as isize,
                    T::one(),
                    &mut gx[src_off..src_off + n * cin],
                );
                // gtap += srcᵀ · g
                T::gemm(
                    cin,
                    n,
                    cout,
                    &x[src_off..src_off + n * cin],
                    1,
                    cin as isize,
                    g,
                    cout as isize,
                    1,
                    T::one(),
                    &mut gk[tap_off..tap_off + cin * cout],
                );
            }
        }
    }
    ConvGrads {
        x: gx,
        k: gk,
        b: gb,
    }
}

/// Per-row layer normalization. Returns the output and `(mean, rstd)` per row.
pub fn layer_norm_fwd<T: Real>(
    x: &[T],
    c: usize,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, Vec<(T, T)>) {
    let n = T::from_usize(c).unwrap();
    let mut y = vec![T::zero(); x.len()];
    let mut stats = Vec::with_capacity(x.len() / c);
    for (row, out) in x.chunks_exact(c).zip(y.chunks_exact_mut(c)) {
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rstd = (var + eps).sqrt().recip();
        for (((o, &v), &g), &b) in out.iter_mut().zip(row).zip(gamma).zip(beta) {
            *o = (v - mean) * rstd * g + b;
        }
        stats.push((mean, rstd));
    }
    (y, stats)
}

pub struct NormGrads<T> {
    pub x: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub fn layer_norm_bwd<T: Real>(
    x: &[T],
    c: usize,
    gamma: &[T],
    stats: &[(T, T)],
    gy: &[T],
) -> NormGrads<T> {
    let n = T::from_usize(c).unwrap();
    let mut gx = vec![T::zero(); x.len()];
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    let mut xhat = vec![T::zero(); c];
    let mut gxhat = vec![T::zero(); c];
    for (((row, g_row), out), &(mean, rstd)) in x
        .chunks_exact(c)
        .zip(gy.chunks_exact(c))
        .zip(gx.chunks_exact_mut(c))
        .zip(stats)
    {
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for ch in 0..c {
            xhat[ch] = (row[ch] - mean) * rstd;
            gxhat[ch] = g_row[ch] * gamma[ch];
            gg[ch] += g_row[ch] * xhat[ch];
            gb[ch] += g_row[ch];
            m1 += gxhat[ch];
            m2 += gxhat[ch] * xhat[ch];
        }
        m1 /= n;
        m2 /= n;
        for ch in 0..c {
            out[ch] = rstd * (gxhat[ch] - m1 - xhat[ch] * m2);
        }
    }
    NormGrads {
        x: gx,
        gamma: gg,
        beta: gb,
    }
}

#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        (T::one() + (-v).exp()).recip()
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^v)` without overflow.
#[inline]
pub fn softplus<T: Real>(v: T) -> T {
    if v > T::from_f64_lossy(20.0) {
        v
    } else {
        v.exp().ln_1p()
    }
}
