#![allow(dead_code)]

use std::f64::consts::PI;

use sfrbsde::bsde::SolutionField;

/// `||s -> s^k||_t^2 = 2H(2H-1) B(k+1, 2H-1) t^{2H+2k} / (2H+2k)` for integer `k`,
/// with the Beta function written as a finite product.
pub fn monomial_norm_sq(k: u32, t: f64, h: f64) -> f64 {
    let a = 2.0 * h - 1.0;
    // B(k+1, a) = k! / (a (a+1) ... (a+k))
    let mut beta = 1.0;
    for j in 0..=k {
        beta /= a + j as f64;
    }
    for j in 1..=k {
        beta *= j as f64;
    }
    2.0 * h * a * beta * t.powf(2.0 * h + 2.0 * k as f64) / (2.0 * h + 2.0 * k as f64)
}

fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let n = n.max(2) + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

fn rho(u: f64, v: f64, h: f64) -> f64 {
    h * (2.0 * h - 1.0) * (u - v).abs().powf(2.0 * h - 2.0)
}

/// `int_0^t rho(u, v) f(v) dv` by singularity subtraction around `v = u`: the
/// constant and linear Taylor terms are integrated in closed form and the remainder,
/// which vanishes like `|v - u|^{2H}`, by composite Simpson with `n` panels on [0, t].
pub fn kernel_integral_oracle(
    f: &dyn Fn(f64) -> f64,
    df: &dyn Fn(f64) -> f64,
    u: f64,
    t: f64,
    h: f64,
    n: usize,
) -> f64 {
    let fu = f(u);
    let dfu = df(u);
    let a = h * (u.powf(2.0 * h - 1.0) + (t - u).powf(2.0 * h - 1.0));
    let b = 0.5 * (2.0 * h - 1.0) * ((t - u).powf(2.0 * h) - u.powf(2.0 * h));
    let rem = |v: f64| {
        if v == u {
            0.0
        } else {
            rho(u, v, h) * (f(v) - fu - dfu * (v - u))
        }
    };
    let nl = ((n as f64 * u / t).ceil() as usize).max(2);
    let nr = ((n as f64 * (t - u) / t).ceil() as usize).max(2);
    let mut r = 0.0;
    if u > 0.0 {
        r += simpson(0.0, u, nl, rem);
    }
    if u < t {
        r += simpson(u, t, nr, rem);
    }
    fu * a + dfu * b + r
}

/// `||xi||_t^2` by the subtraction oracle for the inner integral and Simpson in the
/// variable `theta` with `u = t (1 - cos(pi theta)) / 2` for the outer one.
pub fn norm_sq_oracle(
    f: &dyn Fn(f64) -> f64,
    df: &dyn Fn(f64) -> f64,
    t: f64,
    h: f64,
    n: usize,
) -> f64 {
    simpson(0.0, 1.0, n, |theta| {
        let u = 0.5 * t * (1.0 - (PI * theta).cos());
        let jac = 0.5 * PI * t * (PI * theta).sin();
        if jac == 0.0 {
            return 0.0;
        }
        f(u) * kernel_integral_oracle(f, df, u, t, h, n) * jac
    })
}

/// Largest `|psi - exact|` over the nodes with `|x| <= half_width`.
pub fn core_error(
    field: &SolutionField,
    half_width: f64,
    exact: &dyn Fn(usize, f64) -> f64,
) -> f64 {
    let mut err: f64 = 0.0;
    for k in 0..field.times().len() {
        for j in 0..field.n_space() {
            let x = field.x(j);
            if x.abs() <= half_width {
                err = err.max((field.psi()[[k, j]] - exact(k, x)).abs());
            }
        }
    }
    err
}
