//! Chebyshev value/coefficient transforms.
//!
//! Values live on second-kind Chebyshev points in *descending* order,
//! `x_i = cos(iπ/N)`, `i = 0..N`; coefficients multiply `T_k`. Both
//! directions are DCT-I transforms, computed here through a complex FFT of
//! the even extension of length `2N` — O(N log N) and exact for polynomial
//! data up to rounding.

use rustfft::{num_complex::Complex, FftPlanner};
use std::cell::RefCell;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_in_place(buf: &mut [Complex<f64>]) {
    PLANNER.with(|p| {
        let fft = p.borrow_mut().plan_fft_forward(buf.len());
        fft.process(buf);
    });
}

/// Map values at descending Chebyshev points to Chebyshev coefficients.
pub fn vals2coeffs(vals: &[f64]) -> Vec<f64> {
    let n = vals.len();
    assert!(n >= 1, "empty value vector");
    if n == 1 {
        return vec![vals[0]];
    }
    let deg = n - 1;
    let m = 2 * deg;
    // Even extension [v_0 … v_N v_{N-1} … v_1]; its DFT is real.
    let mut buf: Vec<Complex<f64>> = Vec::with_capacity(m);
    buf.extend(vals.iter().map(|&v| Complex::new(v, 0.0)));
    buf.extend(vals[1..deg].iter().rev().map(|&v| Complex::new(v, 0.0)));
    fft_in_place(&mut buf);
    let scale = 1.0 / deg as f64;
    let mut c = Vec::with_capacity(n);
    c.push(buf[0].re * 0.5 * scale);
    for item in buf.iter().take(deg).skip(1) {
        c.push(item.re * scale);
    }
    c.push(buf[deg].re * 0.5 * scale);
    c
}

/// Map Chebyshev coefficients to values at descending Chebyshev points.
pub fn coeffs2vals(coeffs: &[f64]) -> Vec<f64> {
    let n = coeffs.len();
    assert!(n >= 1, "empty coefficient vector");
    if n == 1 {
        return vec![coeffs[0]];
    }
    let deg = n - 1;
    let m = 2 * deg;
    let mut buf = vec![Complex::new(0.0, 0.0); m];
    buf[0] = Complex::new(2.0 * coeffs[0], 0.0);
    for k in 1..deg {
        buf[k] = Complex::new(coeffs[k], 0.0);
        buf[m - k] = Complex::new(coeffs[k], 0.0);
    }
    buf[deg] = Complex::new(2.0 * coeffs[deg], 0.0);
    fft_in_place(&mut buf);
    buf.iter().take(n).map(|z| 0.5 * z.re).collect()
}
