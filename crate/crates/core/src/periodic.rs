//! Differentiation, interpolation and quadrature of periodic sample series
//! on a uniform grid `t_i = i·h`, `i = 0..N`, with `f_N = f_0`.

use nalgebra::DMatrix;

#[inline]
fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Sixth-order central difference weights for offsets 1, 2, 3.
const D6: [f64; 3] = [45.0 / 60.0, -9.0 / 60.0, 1.0 / 60.0];

/// Sixth-order central difference with wraparound.
pub fn derivative(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    (0..n as isize)
        .map(|i| {
            D6.iter()
                .enumerate()
                .map(|(k, w)| {
                    let o = k as isize + 1;
                    w * (f[wrap(i + o, n)] - f[wrap(i - o, n)])
                })
                .sum::<f64>()
                / h
        })
        .collect()
}

/// Sixth-order central difference of a matrix series with wraparound.
pub fn derivative_matrix(f: &[DMatrix<f64>], h: f64) -> Vec<DMatrix<f64>> {
    let n = f.len();
    (0..n as isize)
        .map(|i| {
            let mut d = DMatrix::zeros(f[0].nrows(), f[0].ncols());
            for (k, w) in D6.iter().enumerate() {
                let o = k as isize + 1;
                d += (&f[wrap(i + o, n)] - &f[wrap(i - o, n)]) * (*w / h);
            }
            d
        })
        .collect()
}

/// Cubic Lagrange weights for nodes `-1, 0, 1, 2` at offset `s ∈ [0,1)`.
#[inline]
fn cubic_weights(s: f64) -> [f64; 4] {
    [
        -s * (s - 1.0) * (s - 2.0) / 6.0,
        (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
        -(s + 1.0) * s * (s - 2.0) / 2.0,
        (s + 1.0) * s * (s - 1.0) / 6.0,
    ]
}

fn split(pos: f64, n: usize) -> (isize, f64) {
    let p = pos.rem_euclid(n as f64);
    let i = p.floor();
    let s = p - i;
    let i = i as isize;
    if i as usize >= n {
        (0, 0.0)
    } else {
        (i, s)
    }
}

/// Periodic cubic interpolation at fractional sample position `pos`.
pub fn interpolate(f: &[f64], pos: f64) -> f64 {
    let n = f.len();
    let (i, s) = split(pos, n);
    let w = cubic_weights(s);
    (0..4)
        .map(|k| w[k] * f[wrap(i - 1 + k as isize, n)])
        .sum()
}

/// Periodic cubic interpolation of a matrix series.
pub fn interpolate_matrix(f: &[DMatrix<f64>], pos: f64) -> DMatrix<f64> {
    let n = f.len();
    let (i, s) = split(pos, n);
    let w = cubic_weights(s);
    let mut out = DMatrix::zeros(f[0].nrows(), f[0].ncols());
    for (k, wk) in w.iter().enumerate() {
        out += &f[wrap(i - 1 + k as isize, n)] * *wk;
    }
    out
}

/// Sixth-order midpoint weights for samples `i-2 ..= i+3`.
const MID6: [f64; 6] = [
    3.0 / 256.0,
    -25.0 / 256.0,
    150.0 / 256.0,
    150.0 / 256.0,
    -25.0 / 256.0,
    3.0 / 256.0,
];

/// Value halfway between samples `i` and `i+1`.
pub fn midpoint(f: &[f64], i: usize) -> f64 {
    let n = f.len();
    MID6.iter()
        .enumerate()
        .map(|(k, w)| w * f[wrap(i as isize + k as isize - 2, n)])
        .sum()
}

pub fn midpoint_matrix(f: &[DMatrix<f64>], i: usize) -> DMatrix<f64> {
    let n = f.len();
    let mut out = DMatrix::zeros(f[0].nrows(), f[0].ncols());
    for (k, w) in MID6.iter().enumerate() {
        out += &f[wrap(i as isize + k as isize - 2, n)] * *w;
    }
    out
}

/// Cumulative integral `F_i = ∫_0^{t_i} f` for `i = 0..N` (so `F_N` is the
/// integral over a full period), using Simpson's rule on every interval
/// with interpolated midpoints.
pub fn cumulative_integral(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for i in 0..n {
        let fm = midpoint(f, i);
        acc += h / 6.0 * (f[i] + 4.0 * fm + f[(i + 1) % n]);
        out.push(acc);
    }
    out
}

/// Period average of a uniformly sampled periodic series.
pub fn mean(f: &[f64]) -> f64 {
    f.iter().sum::<f64>() / f.len() as f64
}
