//! Orthonormal DCT-II.
//!
//! `y_k = c_k * sum_t x_t * cos(pi * k * (2t + 1) / (2n))` with
//! `c_0 = sqrt(1/n)` and `c_k = sqrt(2/n)` otherwise. The transform is
//! orthogonal, so it preserves the Euclidean norm.
//!
//! [`dct`] is the O(n log n) path (one complex FFT of length `n` on the
//! even/odd reordered input). [`dct_direct`] evaluates the defining sum and
//! serves as the reference the fast path is checked against.

use std::cell::RefCell;
use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn scale(k: usize, n: usize) -> f64 {
    if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

/// Fast orthonormal DCT-II.
pub fn dct(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n == 0 {
        return Err(Error::Shape("dct of empty input".into()));
    }
    if n == 1 {
        return Ok(vec![x[0]]);
    }

    // v = [x0, x2, x4, ..., x5, x3, x1]
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); n];
    let half = n.div_ceil(2);
    for t in 0..half {
        buf[t].re = x[2 * t];
    }
    for t in 0..n / 2 {
        buf[n - 1 - t].re = x[2 * t + 1];
    }

    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n));
    fft.process(&mut buf);

    let step = -PI / (2.0 * n as f64);
    let out = buf
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let (s, c) = (step * k as f64).sin_cos();
            // Re(v * e^{-i pi k / 2n})
            (v.re * c - v.im * s) * scale(k, n)
        })
        .collect();
    Ok(out)
}

/// Direct O(n^2) evaluation of the orthonormal DCT-II.
///
/// Angles are taken from a `4n`-entry cosine table indexed by
/// `k * (2t + 1) mod 4n`, which keeps the large-`n` reference both exact in
/// its argument reduction and affordable.
pub fn dct_direct(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n == 0 {
        return Err(Error::Shape("dct of empty input".into()));
    }
    let period = 4 * n;
    let table: Vec<f64> = (0..period)
        .map(|m| (PI * m as f64 / (2.0 * n as f64)).cos())
        .collect();
    let out = crate::par::map_range(n, |k| {
        let stride = (2 * k) % period;
        let mut m = k % period;
        let mut acc = 0.0;
        for &xt in x {
            acc += xt * table[m];
            m += stride;
            if m >= period {
                m -= period;
            }
        }
        acc * scale(k, n)
    });
    Ok(out)
}

/// Euclidean norm.
pub fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
