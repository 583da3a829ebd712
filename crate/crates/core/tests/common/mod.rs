//! Independent reference implementations shared by the integration tests and
//! the acceptance runner.

#![allow(dead_code)]

use rand::Rng;

/// Weighted normal-equations solve of `y_i = b + s c_i` with a Gaussian prior
/// row on `b` (mean `b0`, sd `sd_b`) and on `s` (mean 0, sd `sd_s`).
/// Returns `(b, s, var_s)` from an explicit 2x2 inverse.
pub fn pid_normal_equations(
    c: &[f64],
    noise_var: &[f64],
    b0: f64,
    sd_b: f64,
    sd_s: f64,
    y: &[f64],
) -> (f64, f64, f64) {
    let (mut m00, mut m01, mut m11) = (0.0, 0.0, 0.0);
    let (mut r0, mut r1) = (0.0, 0.0);
    for ((&ci, &v), &yi) in c.iter().zip(noise_var).zip(y) {
        m00 += 1.0 / v;
        m01 += ci / v;
        m11 += ci * ci / v;
        r0 += yi / v;
        r1 += ci * yi / v;
    }
    m00 += 1.0 / (sd_b * sd_b);
    r0 += b0 / (sd_b * sd_b);
    m11 += 1.0 / (sd_s * sd_s);
    let det = m00 * m11 - m01 * m01;
    let b = (m11 * r0 - m01 * r1) / det;
    let s = (m00 * r1 - m01 * r0) / det;
    (b, s, m00 / det)
}

/// Ordinary least squares of `y_i = b + s c_i` with weights `1 / noise_var`
/// and no prior rows.
pub fn weighted_least_squares(c: &[f64], noise_var: &[f64], y: &[f64]) -> (f64, f64) {
    let (mut sw, mut swc, mut swcc, mut swy, mut swcy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&ci, &v), &yi) in c.iter().zip(noise_var).zip(y) {
        let w = 1.0 / v;
        sw += w;
        swc += w * ci;
        swcc += w * ci * ci;
        swy += w * yi;
        swcy += w * ci * yi;
    }
    let det = sw * swcc - swc * swc;
    ((swcc * swy - swc * swcy) / det, (sw * swcy - swc * swy) / det)
}

pub struct PidInstance {
    pub c: Vec<f64>,
    pub noise_var: Vec<f64>,
    pub b0: f64,
    pub sd_b: f64,
    pub sd_s: f64,
    pub y: Vec<f64>,
}

pub fn random_pid_instance<R: Rng>(rng: &mut R) -> PidInstance {
    let n = 100;
    let c: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let noise_var: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..50.0)).collect();
    let b0 = rng.random_range(1.0..30.0);
    let s = rng.random_range(-5.0..40.0);
    let y = c
        .iter()
        .zip(&noise_var)
        .map(|(ci, v)| b0 + s * ci + v.sqrt() * rng.random_range(-1.0..1.0))
        .collect();
    PidInstance {
        c,
        noise_var,
        b0,
        sd_b: rng.random_range(0.5..10.0),
        sd_s: rng.random_range(10.0..1e6),
        y,
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}
