//! Markovian solution of the scaled backward equation.
//!
//! With `Y_t = psi(t, eta^eps_t)` the field solves
//!
//! ```text
//! psi_t + eps^{2H} b psi_x + (1/2) eps^{2H} lambda psi_xx
//!       + eps^{2H} f(t, x, psi, sigma1 psi_x, sigma2 psi_x) = 0,   psi(T, .) = g
//! ```
//!
//! and `Z1 = sigma1 psi_x`, `Z2 = sigma2 psi_x`. The PDE is integrated backward with a
//! theta scheme on a truncated interval; the generator is treated by Picard
//! iteration inside each step.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::CoefficientSet;
use crate::paths::EtaPaths;
use crate::stats::Estimate;

type GeneratorFn = Arc<dyn Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync>;

/// The driver `f(t, x, y, z1, z2)`.
#[derive(Clone)]
pub struct Generator {
    label: String,
    eval: GeneratorFn,
    lipschitz: Option<f64>,
    time_independent: bool,
    zero: bool,
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Generator")
            .field("label", &self.label)
            .field("lipschitz", &self.lipschitz)
            .field("time_independent", &self.time_independent)
            .finish()
    }
}

impl Generator {
    pub fn new(
        label: impl Into<String>,
        f: impl Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            eval: Arc::new(f),
            lipschitz: None,
            time_independent: false,
            zero: false,
        }
    }

    /// Declares the squared Lipschitz constant: `|f(.,y,z) - f(.,y',z')|^2 <= L (|dy|^2 + |dz1|^2 + |dz2|^2)`.
    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    /// Marks `f` as not depending on `t`.
    pub fn time_independent(mut self) -> Self {
        self.time_independent = true;
        self
    }

    pub fn zero() -> Self {
        Self {
            label: "zero".into(),
            eval: Arc::new(|_, _, _, _, _| 0.0),
            lipschitz: Some(0.0),
            time_independent: true,
            zero: true,
        }
    }

    /// `f = r y`.
    pub fn linear_y(r: f64) -> Self {
        Self::new(format!("linear:{r}"), move |_, _, y, _, _| r * y)
            .with_lipschitz(r * r)
            .time_independent()
    }

    /// `f = a y + b z1 + c z2 + d`.
    pub fn affine(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self::new(format!("affine:{a},{b},{c},{d}"), move |_, _, y, z1, z2| {
            a * y + b * z1 + c * z2 + d
        })
        .with_lipschitz(a * a + b * b + c * c)
        .time_independent()
    }

    /// `f = (1 + sin(2 pi s / T)) (a y + b z1 + c z2 + d)`.
    pub fn benchmark(a: f64, b: f64, c: f64, d: f64, horizon: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI / horizon;
        Self::new(
            format!("benchmark:{a},{b},{c},{d}"),
            move |s, _, y, z1, z2| (1.0 + (w * s).sin()) * (a * y + b * z1 + c * z2 + d),
        )
        .with_lipschitz(4.0 * (a * a + b * b + c * c))
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64, y: f64, z1: f64, z2: f64) -> f64 {
        (self.eval)(t, x, y, z1, z2)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn declared_lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn is_time_independent(&self) -> bool {
        self.time_independent
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }
}

type TerminalFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Terminal value `xi = g(eta_T)`.
#[derive(Clone)]
pub struct TerminalCondition {
    label: String,
    eval: TerminalFn,
    growth_degree: u32,
}

impl fmt::Debug for TerminalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalCondition")
            .field("label", &self.label)
            .field("growth_degree", &self.growth_degree)
            .finish()
    }
}

impl TerminalCondition {
    pub fn new(
        label: impl Into<String>,
        growth_degree: u32,
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if growth_degree > 2 {
            return Err(Error::InvalidParameter(format!(
                "terminal growth degree must be at most 2, got {growth_degree}"
            )));
        }
        Ok(Self {
            label: label.into(),
            eval: Arc::new(g),
            growth_degree,
        })
    }

    pub fn linear() -> Self {
        Self::new("linear", 1, |x| x).expect("degree 1")
    }

    pub fn quadratic() -> Self {
        Self::new("quadratic", 2, |x| x * x).expect("degree 2")
    }

    pub fn cosine() -> Self {
        Self::new("cos", 0, f64::cos).expect("degree 0")
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn growth_degree(&self) -> u32 {
        self.growth_degree
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeConfig {
    pub kappa: f64,
    pub n_space: usize,
    pub theta: f64,
    pub picard_iters: usize,
    pub picard_tol: f64,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            kappa: 8.0,
            n_space: 256,
            theta: 0.5,
            picard_iters: 8,
            picard_tol: 1e-10,
        }
    }
}

impl PdeConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.kappa >= 4.0) {
            bad.push(format!("kappa must be at least 4, got {}", self.kappa));
        }
        if self.n_space < 64 {
            bad.push(format!("n_space must be at least 64, got {}", self.n_space));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            bad.push(format!("theta must lie in [0, 1], got {}", self.theta));
        }
        if self.picard_iters == 0 {
            bad.push("picard_iters must be positive".into());
        }
        if !(self.picard_tol > 0.0) {
            bad.push(format!(
                "picard_tol must be positive, got {}",
                self.picard_tol
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(bad.join("; ")))
        }
    }
}

/// Step-averaged PDE coefficients: on `[t_k, t_k+1]`, `mu[k]` is the mean of
/// `eps^{2H} b` and `diff[k]` the mean of `(1/2) eps^{2H} lambda`.
#[derive(Debug, Clone)]
pub struct PdeCoefficients {
    pub epsilon: f64,
    pub mu: Vec<f64>,
    pub diff: Vec<f64>,
    /// Pointwise `(1/2) eps^{2H} lambda(t_k)` on the nodes.
    pub diff_nodes: Vec<f64>,
    /// `eps^{2H}`.
    pub scale: f64,
}

pub fn build_pde_coefficients(coeffs: &CoefficientSet, epsilon: f64) -> Result<PdeCoefficients> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    let lambda = coeffs.lambda_table();
    let times = coeffs.times();
    for (k, &l) in lambda.iter().enumerate().skip(1) {
        if !(l > 0.0) {
            return Err(Error::Coefficient(format!(
                "lambda(t) = {l} is not positive at t = {}",
                times[k]
            )));
        }
    }
    coeffs
        .validate()
        .map_err(|e| Error::Coefficient(e.to_string()))?;
    let scale = epsilon.powf(2.0 * coeffs.hurst().value());
    let s = coeffs.sigma_abs_sq_table();
    let n = coeffs.n_steps();
    let mut mu = Vec::with_capacity(n);
    let mut diff = Vec::with_capacity(n);
    for k in 0..n {
        let dt = times[k + 1] - times[k];
        mu.push(scale * coeffs.drift().integral(times[k], times[k + 1]) / dt);
        diff.push(0.5 * scale * (s[k + 1] - s[k]) / dt);
    }
    let diff_nodes = lambda.iter().map(|l| 0.5 * scale * l).collect();
    Ok(PdeCoefficients {
        epsilon,
        mu,
        diff,
        diff_nodes,
        scale,
    })
}

/// `psi` and `psi_x` on a (time x space) grid.
#[derive(Debug, Clone)]
pub struct SolutionField {
    times: Vec<f64>,
    x_lo: f64,
    dx: f64,
    psi: Array2<f64>,
    psi_x: Array2<f64>,
    picard_sweeps: usize,
    max_picard_residual: f64,
}

impl SolutionField {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_space(&self) -> usize {
        self.psi.ncols()
    }

    pub fn x_lo(&self) -> f64 {
        self.x_lo
    }

    pub fn x_hi(&self) -> f64 {
        self.x_lo + self.dx * (self.n_space() - 1) as f64
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_lo + self.dx * j as f64
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_space()).map(|j| self.x(j)).collect()
    }

    pub fn psi(&self) -> &Array2<f64> {
        &self.psi
    }

    pub fn psi_x(&self) -> &Array2<f64> {
        &self.psi_x
    }

    /// Total Picard sweeps over all steps.
    pub fn picard_sweeps(&self) -> usize {
        self.picard_sweeps
    }

    pub fn max_picard_residual(&self) -> f64 {
        self.max_picard_residual
    }

    /// Linear interpolation of `(psi, psi_x)` at time node `k`; `x` outside the domain
    /// is clamped and reported through the flag.
    #[inline]
    pub fn interpolate(&self, k: usize, x: f64) -> (f64, f64, bool) {
        let n = self.n_space();
        let pos = (x - self.x_lo) / self.dx;
        let clamped = !(pos >= 0.0 && pos <= (n - 1) as f64);
        let pos = pos.clamp(0.0, (n - 1) as f64);
        let j = (pos.floor() as usize).min(n - 2);
        let w = pos - j as f64;
        let p = self.psi.row(k);
        let q = self.psi_x.row(k);
        (
            p[j] + w * (p[j + 1] - p[j]),
            q[j] + w * (q[j + 1] - q[j]),
            clamped,
        )
    }

    /// CSV rows (t, x, psi, psi_x), keeping every `stride`-th node in each direction.
    pub fn write_csv<W: Write>(&self, mut w: W, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        writeln!(w, "t,x,psi,psi_x")?;
        for k in (0..self.times.len()).step_by(stride) {
            for j in (0..self.n_space()).step_by(stride) {
                writeln!(
                    w,
                    "{},{},{},{}",
                    self.times[k],
                    self.x(j),
                    self.psi[[k, j]],
                    self.psi_x[[k, j]]
                )?;
            }
        }
        Ok(())
    }
}

fn derivative(psi: &[f64], dx: f64, out: &mut [f64]) {
    let n = psi.len();
    out[0] = (psi[1] - psi[0]) / dx;
    out[n - 1] = (psi[n - 1] - psi[n - 2]) / dx;
    for j in 1..n - 1 {
        out[j] = (psi[j + 1] - psi[j - 1]) / (2.0 * dx);
    }
}

/// Thomas algorithm for `lower[i] u[i-1] + diag[i] u[i] + upper[i] u[i+1] = rhs[i]`.
fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &mut [f64],
    scratch: &mut [f64],
) -> Result<()> {
    let n = diag.len();
    let mut beta = diag[0];
    if beta == 0.0 || !beta.is_finite() {
        return Err(Error::TridiagonalBreakdown(0));
    }
    rhs[0] /= beta;
    for i in 1..n {
        scratch[i] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * scratch[i];
        if beta == 0.0 || !beta.is_finite() {
            return Err(Error::TridiagonalBreakdown(i));
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i + 1] * rhs[i + 1];
    }
    Ok(())
}

/// Spatial domain `[min m - kappa s, max m + kappa s]` where `m_t` is the mean of
/// `eta^eps_t` and `s` the standard deviation of `eta^eps_T`.
pub fn spatial_domain(
    coeffs: &CoefficientSet,
    pde: &PdeCoefficients,
    eta0: f64,
    kappa: f64,
) -> (f64, f64) {
    let times = coeffs.times();
    let mut m = eta0;
    let (mut lo, mut hi) = (eta0, eta0);
    for k in 0..pde.mu.len() {
        m += pde.mu[k] * (times[k + 1] - times[k]);
        lo = lo.min(m);
        hi = hi.max(m);
    }
    let var = pde.scale * coeffs.sigma_abs_sq_table().last().copied().unwrap_or(0.0);
    let s = if var > 0.0 { var.sqrt() } else { 1.0 };
    (lo - kappa * s, hi + kappa * s)
}

/// Backward theta scheme for the field; see the module documentation for the PDE.
pub fn solve_psi(
    gen: &Generator,
    term: &TerminalCondition,
    coeffs: &CoefficientSet,
    epsilon: f64,
    eta0: f64,
    cfg: &PdeConfig,
) -> Result<SolutionField> {
    cfg.validate()?;
    let pde = build_pde_coefficients(coeffs, epsilon)?;
    let (x_lo, x_hi) = spatial_domain(coeffs, &pde, eta0, cfg.kappa);
    let nx = cfg.n_space;
    let dx = (x_hi - x_lo) / (nx - 1) as f64;
    let xs: Vec<f64> = (0..nx).map(|j| x_lo + dx * j as f64).collect();
    let times = coeffs.times().to_vec();
    let nt = times.len() - 1;
    let s1: Vec<f64> = times.iter().map(|&t| coeffs.sigma1().eval(t)).collect();
    let s2: Vec<f64> = times.iter().map(|&t| coeffs.sigma2().eval(t)).collect();

    let mut psi = Array2::zeros((nt + 1, nx));
    let mut psi_x = Array2::zeros((nt + 1, nx));
    let mut cur: Vec<f64> = xs.iter().map(|&x| term.eval(x)).collect();
    let mut cur_x = vec![0.0; nx];
    derivative(&cur, dx, &mut cur_x);
    psi.row_mut(nt).assign(&ndarray::ArrayView1::from(&cur));
    psi_x.row_mut(nt).assign(&ndarray::ArrayView1::from(&cur_x));

    let generator_term = |k: usize, v: &[f64], v_x: &[f64], out: &mut [f64]| {
        let t = times[k];
        for j in 0..nx {
            out[j] = gen.eval(t, xs[j], v[j], s1[k] * v_x[j], s2[k] * v_x[j]);
        }
    };

    let m = nx - 2;
    let theta = cfg.theta;
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut explicit = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    let mut scratch = vec![0.0; m];
    let mut f_next = vec![0.0; nx];
    let mut f_iter = vec![0.0; nx];
    let mut iter = vec![0.0; nx];
    let mut iter_x = vec![0.0; nx];
    let mut total_sweeps = 0;
    let mut max_residual: f64 = 0.0;

    for k in (0..nt).rev() {
        let dt = times[k + 1] - times[k];
        let mu = pde.mu[k];
        let d = pde.diff[k];
        // L v_j = a v_{j-1} + b v_j + c v_{j+1}
        let a = d / (dx * dx) - mu / (2.0 * dx);
        let b = -2.0 * d / (dx * dx);
        let c = d / (dx * dx) + mu / (2.0 * dx);

        for i in 0..m {
            let j = i + 1;
            let l_next = a * cur[j - 1] + b * cur[j] + c * cur[j + 1];
            explicit[i] = cur[j] + (1.0 - theta) * dt * l_next;
            lower[i] = -theta * dt * a;
            diag[i] = 1.0 - theta * dt * b;
            upper[i] = -theta * dt * c;
        }
        // zero curvature: v_0 = 2 v_1 - v_2 and v_{n-1} = 2 v_{n-2} - v_{n-3}
        diag[0] += 2.0 * lower[0];
        upper[0] -= lower[0];
        diag[m - 1] += 2.0 * upper[m - 1];
        lower[m - 1] -= upper[m - 1];

        if !gen.is_zero() {
            generator_term(k + 1, &cur, &cur_x, &mut f_next);
        }
        iter.copy_from_slice(&cur);
        iter_x.copy_from_slice(&cur_x);
        let sweeps = if gen.is_zero() { 1 } else { cfg.picard_iters };
        let mut residual = f64::INFINITY;
        let mut done = 0;
        for _ in 0..sweeps {
            if !gen.is_zero() {
                generator_term(k, &iter, &iter_x, &mut f_iter);
            }
            for i in 0..m {
                let j = i + 1;
                let forcing = if gen.is_zero() {
                    0.0
                } else {
                    pde.scale * dt * (theta * f_iter[j] + (1.0 - theta) * f_next[j])
                };
                rhs[i] = explicit[i] + forcing;
            }
            solve_tridiagonal(&lower, &diag, &upper, &mut rhs, &mut scratch)?;
            let mut change: f64 = 0.0;
            let mut size: f64 = 1.0;
            for i in 0..m {
                change = change.max((rhs[i] - iter[i + 1]).abs());
                size = size.max(rhs[i].abs());
                iter[i + 1] = rhs[i];
            }
            iter[0] = 2.0 * iter[1] - iter[2];
            iter[nx - 1] = 2.0 * iter[nx - 2] - iter[nx - 3];
            derivative(&iter, dx, &mut iter_x);
            done += 1;
            residual = change / size;
            if gen.is_zero() || residual <= cfg.picard_tol {
                break;
            }
        }
        if !gen.is_zero() && residual > cfg.picard_tol {
            return Err(Error::PicardNonConvergence {
                step: k,
                time: times[k],
                residual,
                iterations: done,
            });
        }
        total_sweeps += done;
        if !gen.is_zero() {
            max_residual = max_residual.max(residual);
        }
        cur.copy_from_slice(&iter);
        cur_x.copy_from_slice(&iter_x);
        psi.row_mut(k).assign(&ndarray::ArrayView1::from(&cur));
        psi_x.row_mut(k).assign(&ndarray::ArrayView1::from(&cur_x));
    }

    Ok(SolutionField {
        times,
        x_lo,
        dx,
        psi,
        psi_x,
        picard_sweeps: total_sweeps,
        max_picard_residual: max_residual,
    })
}

/// Largest admissible share of path-nodes outside the spatial domain.
pub const MAX_CLAMP_FRACTION: f64 = 0.01;

/// `(Y, Z1, Z2)` read off the field along the forward paths, plus `psi_x` itself.
#[derive(Debug, Clone)]
pub struct TriplePath {
    pub y: Array2<f64>,
    pub z1: Array2<f64>,
    pub z2: Array2<f64>,
    pub grad: Array2<f64>,
    pub clamped: usize,
}

impl TriplePath {
    pub fn n_paths(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.y.ncols()
    }

    /// CSV rows (t, mean_Y, var_Y, mean_Z1, mean_Z2).
    pub fn write_summary_csv<W: Write>(&self, mut w: W, times: &[f64]) -> Result<()> {
        writeln!(w, "t,mean_Y,var_Y,mean_Z1,mean_Z2")?;
        for (k, t) in times.iter().enumerate() {
            let y: Vec<f64> = self.y.column(k).to_vec();
            let ey = Estimate::from_samples(&y);
            let var = if y.len() > 1 {
                ey.stderr * ey.stderr * y.len() as f64
            } else {
                0.0
            };
            let z1 = Estimate::from_samples(&self.z1.column(k).to_vec());
            let z2 = Estimate::from_samples(&self.z2.column(k).to_vec());
            writeln!(w, "{t},{},{var},{},{}", ey.mean, z1.mean, z2.mean)?;
        }
        Ok(())
    }
}

pub fn extract_triple(
    field: &SolutionField,
    eta: &EtaPaths,
    coeffs: &CoefficientSet,
) -> Result<TriplePath> {
    let values = eta.values();
    let (n_paths, n_nodes) = values.dim();
    if n_nodes != field.times.len() {
        return Err(Error::InvalidParameter(format!(
            "paths have {n_nodes} nodes but the field has {} time levels",
            field.times.len()
        )));
    }
    let s1: Vec<f64> = field
        .times
        .iter()
        .map(|&t| coeffs.sigma1().eval(t))
        .collect();
    let s2: Vec<f64> = field
        .times
        .iter()
        .map(|&t| coeffs.sigma2().eval(t))
        .collect();
    let mut y = vec![0.0; n_paths * n_nodes];
    let mut z1 = vec![0.0; n_paths * n_nodes];
    let mut z2 = vec![0.0; n_paths * n_nodes];
    let mut grad = vec![0.0; n_paths * n_nodes];
    let clamped: usize = y
        .par_chunks_mut(n_nodes)
        .zip(z1.par_chunks_mut(n_nodes))
        .zip(z2.par_chunks_mut(n_nodes))
        .zip(grad.par_chunks_mut(n_nodes))
        .enumerate()
        .map(|(p, (((yr, z1r), z2r), gr))| {
            let row = values.row(p);
            let mut count = 0;
            for k in 0..n_nodes {
                let (v, vx, c) = field.interpolate(k, row[k]);
                count += c as usize;
                yr[k] = v;
                gr[k] = vx;
                z1r[k] = s1[k] * vx;
                z2r[k] = s2[k] * vx;
            }
            count
        })
        .sum();
    let total = n_paths * n_nodes;
    if clamped as f64 > MAX_CLAMP_FRACTION * total as f64 {
        return Err(Error::DomainTooSmall { clamped, total });
    }
    let shape = (n_paths, n_nodes);
    Ok(TriplePath {
        y: Array2::from_shape_vec(shape, y).expect("shape"),
        z1: Array2::from_shape_vec(shape, z1).expect("shape"),
        z2: Array2::from_shape_vec(shape, z2).expect("shape"),
        grad: Array2::from_shape_vec(shape, grad).expect("shape"),
        clamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RepresentationCheck {
    /// `sigma2` vanishes somewhere on the checked range.
    NotApplicable,
    /// Largest `|sigma2_hat psi_x - (sigma2_hat / sigma2) Z2|` over paths and nodes in [t0, T].
    MaxDeviation(f64),
}

/// Compares the closed form `sigma2_hat(t) psi_x(t, eta_t)` of the fractional
/// derivative of `Y` with `(sigma2_hat / sigma2) Z2` on nodes in `[t0, T]`.
pub fn malliavin_representation_check(
    triple: &TriplePath,
    coeffs: &CoefficientSet,
    t0: f64,
) -> RepresentationCheck {
    let times = coeffs.times();
    let hat = coeffs.sigma2_hat_table();
    let nodes: Vec<usize> = (0..times.len()).filter(|&k| times[k] >= t0).collect();
    let s2: Vec<f64> = times.iter().map(|&t| coeffs.sigma2().eval(t)).collect();
    if nodes.iter().any(|&k| s2[k] == 0.0) {
        return RepresentationCheck::NotApplicable;
    }
    let worst = (0..triple.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut w: f64 = 0.0;
            for &k in &nodes {
                let direct = hat[k] * triple.grad[[p, k]];
                let via_z2 = hat[k] / s2[k] * triple.z2[[p, k]];
                w = w.max((direct - via_z2).abs());
            }
            w
        })
        .reduce(|| 0.0, f64::max);
    RepresentationCheck::MaxDeviation(worst)
}

#[derive(Debug, Clone, Copy)]
pub struct ResidualReport {
    pub t_probe: f64,
    /// Mean over paths of `Y_t - xi - eps^{2H} int_t^T f ds`.
    pub residual: Estimate,
    /// `(dt + dx^2)(1 + mean |Y_t|)`.
    pub allowance: f64,
}

impl ResidualReport {
    pub fn passes(&self) -> bool {
        self.residual.mean.abs() <= 3.0 * self.residual.stderr + self.allowance
    }
}

/// Mean-level check of the backward equation between node `k_probe` and `T`:
/// the stochastic integrals have zero mean, so `E[Y_t] = E[xi] + eps^{2H} E[int_t^T f]`.
#[allow(clippy::too_many_arguments)]
pub fn residual_mean_check(
    triple: &TriplePath,
    eta: &EtaPaths,
    gen: &Generator,
    term: &TerminalCondition,
    coeffs: &CoefficientSet,
    field: &SolutionField,
    k_probe: usize,
) -> Result<ResidualReport> {
    let times = coeffs.times();
    let n = times.len() - 1;
    if k_probe > n {
        return Err(Error::InvalidParameter(format!(
            "probe node {k_probe} beyond last node {n}"
        )));
    }
    let scale = eta.epsilon().powf(2.0 * coeffs.hurst().value());
    let values = eta.values();
    let samples: Vec<f64> = (0..triple.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut integral = 0.0;
            if !gen.is_zero() {
                let f_at = |k: usize| {
                    gen.eval(
                        times[k],
                        values[[p, k]],
                        triple.y[[p, k]],
                        triple.z1[[p, k]],
                        triple.z2[[p, k]],
                    )
                };
                let mut prev = f_at(k_probe);
                for k in k_probe..n {
                    let next = f_at(k + 1);
                    integral += 0.5 * (times[k + 1] - times[k]) * (prev + next);
                    prev = next;
                }
            }
            triple.y[[p, k_probe]] - term.eval(values[[p, n]]) - scale * integral
        })
        .collect();
    let residual = Estimate::from_samples(&samples);
    let mean_abs_y = Estimate::from_samples(
        &triple
            .y
            .column(k_probe)
            .iter()
            .map(|v| v.abs())
            .collect::<Vec<_>>(),
    )
    .mean;
    let dt = times[1] - times[0];
    Ok(ResidualReport {
        t_probe: times[k_probe],
        residual,
        allowance: (dt + field.dx() * field.dx()) * (1.0 + mean_abs_y),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{DeterministicFn, HurstModel, QuadratureSpec};
    use approx::assert_relative_eq;

    fn coeffs(s1: f64, s2: f64, n: usize) -> CoefficientSet {
        CoefficientSet::new(
            DeterministicFn::zero(),
            DeterministicFn::constant(s1),
            DeterministicFn::constant(s2),
            HurstModel::new(0.75).unwrap(),
            1.0,
            n,
            QuadratureSpec::default(),
        )
        .unwrap()
    }

    fn cfg(n_space: usize) -> PdeConfig {
        PdeConfig {
            n_space,
            ..PdeConfig::default()
        }
    }

    #[test]
    fn tridiagonal_solves_small_system() {
        let lower = [0.0, 1.0, 1.0];
        let diag = [4.0, 4.0, 4.0];
        let upper = [1.0, 1.0, 0.0];
        let mut rhs = [5.0, 6.0, 5.0];
        let mut scratch = [0.0; 3];
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs, &mut scratch).unwrap();
        for v in rhs {
            assert_relative_eq!(v, 1.0, epsilon = 1e-14);
        }
        let mut rhs = [1.0, 1.0, 1.0];
        assert!(matches!(
            solve_tridiagonal(&lower, &[0.0, 1.0, 1.0], &upper, &mut rhs, &mut scratch),
            Err(Error::TridiagonalBreakdown(0))
        ));
    }

    #[test]
    fn heat_equation_coefficients() {
        let c = coeffs(1.0, 0.0, 16);
        let p = build_pde_coefficients(&c, 1.0).unwrap();
        assert!(p.mu.iter().all(|&m| m == 0.0));
        assert!(p.diff.iter().all(|&d| (d - 0.5).abs() < 1e-12));
        let q = build_pde_coefficients(&c, 0.5).unwrap();
        for (a, b) in p.diff.iter().zip(&q.diff) {
            assert_relative_eq!(b / a, 0.5f64.powf(1.5), epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_coefficients_are_rejected() {
        let c = coeffs(0.0, 0.0, 8);
        assert!(matches!(
            build_pde_coefficients(&c, 1.0),
            Err(Error::Coefficient(_))
        ));
    }

    #[test]
    fn linear_terminal_is_preserved() {
        let c = coeffs(1.0, 1.0, 32);
        let f = solve_psi(
            &Generator::zero(),
            &TerminalCondition::linear(),
            &c,
            1.0,
            0.0,
            &cfg(64),
        )
        .unwrap();
        let xs = f.xs();
        for k in 0..=32 {
            for (j, &x) in xs.iter().enumerate() {
                assert!((f.psi()[[k, j]] - x).abs() < 1e-11);
                assert!((f.psi_x()[[k, j]] - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pde_config_validation_lists_all_problems() {
        let bad = PdeConfig {
            kappa: 1.0,
            n_space: 10,
            theta: 2.0,
            picard_iters: 0,
            picard_tol: 0.0,
        };
        let msg = bad.validate().unwrap_err().to_string();
        for key in ["kappa", "n_space", "theta", "picard_iters", "picard_tol"] {
            assert!(msg.contains(key), "{msg}");
        }
    }

    #[test]
    fn benchmark_lipschitz_constant() {
        let g = Generator::benchmark(0.5, 0.25, 0.25, 0.1, 1.0);
        assert_relative_eq!(g.declared_lipschitz().unwrap(), 1.5, epsilon = 1e-15);
        assert!(!g.is_time_independent());
        assert!(TerminalCondition::new("cubic", 3, |x| x * x * x).is_err());
    }
}
