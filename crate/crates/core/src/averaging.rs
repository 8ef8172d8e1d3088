//! Averaged generator, error-bound constants and epsilon sweeps.
//!
//! A sweep solves the original field (generator `f`) and the averaged field
//! (generator `fbar`) for every epsilon, reads both along the same forward paths
//! and measures the mean-square gap on the window `[T eps^{1-beta}, T]`.

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bsde::{
    solve_psi, Generator, PdeConfig, SolutionField, TerminalCondition, MAX_CLAMP_FRACTION,
};
use crate::error::{Error, Result};
use crate::kernel::{c0_const, c1_lower_bound, CoefficientSet, HurstModel, QuadratureSpec};
use crate::paths::{simulate_eta, EtaPaths, FbmMethod, PathEnsemble, RngSpec, TimeGrid};
use crate::quadrature::{compensated_sum, integrate};
use crate::stats::{fit_log_log, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FbarProvenance {
    /// `f` does not depend on time, so `fbar` is `f` itself.
    Identity,
    /// Closed form supplied by the caller.
    Analytic,
    /// Time average of `f` by composite quadrature at every evaluation.
    Quadrature,
}

impl fmt::Display for FbarProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FbarProvenance::Identity => "identity",
            FbarProvenance::Analytic => "analytic",
            FbarProvenance::Quadrature => "quadrature",
        })
    }
}

#[derive(Debug, Clone)]
pub struct AveragedGenerator {
    generator: Generator,
    provenance: FbarProvenance,
}

impl AveragedGenerator {
    /// Wraps a caller-supplied closed form of the time average.
    pub fn analytic(generator: Generator) -> Result<Self> {
        if !generator.is_time_independent() {
            return Err(Error::InvalidParameter(format!(
                "averaged generator '{}' must be time independent",
                generator.label()
            )));
        }
        Ok(Self {
            generator,
            provenance: FbarProvenance::Analytic,
        })
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn provenance(&self) -> FbarProvenance {
        self.provenance
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64, z1: f64, z2: f64) -> f64 {
        self.generator.eval(0.0, x, y, z1, z2)
    }
}

/// `fbar(x, y, z1, z2) = (1/T) int_0^T f(s, x, y, z1, z2) ds`.
pub fn build_fbar(gen: &Generator, horizon: f64, q: &QuadratureSpec) -> Result<AveragedGenerator> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    if gen.is_time_independent() {
        return Ok(AveragedGenerator {
            generator: gen.clone(),
            provenance: FbarProvenance::Identity,
        });
    }
    let f = gen.clone();
    let panels = q.panels();
    let averaged = Generator::new(format!("mean({})", gen.label()), move |_, x, y, z1, z2| {
        integrate(0.0, horizon, panels, |s| f.eval(s, x, y, z1, z2)) / horizon
    })
    .time_independent();
    let averaged = match gen.declared_lipschitz() {
        Some(l) => averaged.with_lipschitz(l),
        None => averaged,
    };
    Ok(AveragedGenerator {
        generator: averaged,
        provenance: FbarProvenance::Quadrature,
    })
}

/// Box in `(x, y, z1, z2)` from which assumption probes are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingBox {
    pub x: (f64, f64),
    pub y: f64,
    pub z1: f64,
    pub z2: f64,
}

impl SamplingBox {
    pub fn symmetric(center: f64, radius: f64) -> Self {
        Self {
            x: (center - radius, center + radius),
            y: radius,
            z1: radius,
            z2: radius,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> [f64; 4] {
        [
            rng.random_range(self.x.0..=self.x.1),
            rng.random_range(-self.y..=self.y),
            rng.random_range(-self.z1..=self.z1),
            rng.random_range(-self.z2..=self.z2),
        ]
    }
}

/// Where the sampled supremum of the averaging ratio was attained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiArgmax {
    pub t: f64,
    pub t1: f64,
    pub point: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiEstimate {
    pub phi_bound: f64,
    pub argmax: Option<PhiArgmax>,
}

const WINDOW_PANELS: usize = 32;

/// Sampled supremum of
/// `(1/(T1-t)) int_t^T1 |f - fbar|^2 ds / (1 + y^2 + z1^2 + z2^2)`
/// over `n_samples` points of the box and all `windows` `(t, T1)`. The draws for a
/// given seed are prefix-stable, so more samples never lower the estimate.
pub fn estimate_phi(
    gen: &Generator,
    fbar: &AveragedGenerator,
    sampler: &SamplingBox,
    windows: &[(f64, f64)],
    n_samples: usize,
    seed: u64,
) -> Result<PhiEstimate> {
    for &(t, t1) in windows {
        if !(t1 > t) {
            return Err(Error::InvalidParameter(format!(
                "window ({t}, {t1}) must satisfy t < T1"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<[f64; 4]> = (0..n_samples).map(|_| sampler.draw(&mut rng)).collect();
    let mut best = PhiEstimate {
        phi_bound: 0.0,
        argmax: None,
    };
    for p in &points {
        let [x, y, z1, z2] = *p;
        let fb = fbar.eval(x, y, z1, z2);
        let weight = 1.0 + y * y + z1 * z1 + z2 * z2;
        for &(t, t1) in windows {
            let mean_sq = integrate(t, t1, WINDOW_PANELS, |s| {
                let d = gen.eval(s, x, y, z1, z2) - fb;
                d * d
            }) / (t1 - t);
            let ratio = mean_sq / weight;
            if ratio > best.phi_bound {
                best = PhiEstimate {
                    phi_bound: ratio,
                    argmax: Some(PhiArgmax { t, t1, point: *p }),
                };
            }
        }
    }
    Ok(best)
}

/// All windows `(t_i, t_j)`, `i < j`, on `m + 1` equally spaced points of [0, T].
pub fn default_windows(horizon: f64, m: usize) -> Vec<(f64, f64)> {
    let pts: Vec<f64> = (0..=m).map(|i| horizon * i as f64 / m as f64).collect();
    let mut out = Vec::new();
    for i in 0..m {
        for j in (i + 1)..=m {
            out.push((pts[i], pts[j]));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    /// The constant used downstream: the declared one when present, else the sampled sup.
    pub value: f64,
    pub sampled_max: f64,
    pub declared: bool,
}

/// Sampled supremum of `|f(t,x,y,z) - f(t,x,y',z')|^2 / |(y,z) - (y',z')|^2`.
pub fn estimate_lipschitz(
    gen: &Generator,
    sampler: &SamplingBox,
    horizon: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<LipschitzEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampled: f64 = 0.0;
    for _ in 0..n_pairs {
        let t = rng.random_range(0.0..=horizon);
        let a = sampler.draw(&mut rng);
        let b = sampler.draw(&mut rng);
        let dist = (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2) + (a[3] - b[3]).powi(2);
        if dist == 0.0 {
            continue;
        }
        let x = a[0];
        let df = gen.eval(t, x, a[1], a[2], a[3]) - gen.eval(t, x, b[1], b[2], b[3]);
        sampled = sampled.max(df * df / dist);
    }
    match gen.declared_lipschitz() {
        Some(l) => {
            if sampled > l * (1.0 + 1e-9) + 1e-15 {
                return Err(Error::Contract(format!(
                    "generator '{}' declares L = {l} but a sampled pair reaches {sampled}",
                    gen.label()
                )));
            }
            Ok(LipschitzEstimate {
                value: l,
                sampled_max: sampled,
                declared: true,
            })
        }
        None => Ok(LipschitzEstimate {
            value: sampled,
            sampled_max: sampled,
            declared: false,
        }),
    }
}

/// Residual of `(eps^H / a) min(a - L eps^H, a C1 - L eps^H) - eps^{2H}`.
fn alpha_equation(alpha: f64, l: f64, c1: f64, e_h: f64) -> f64 {
    e_h / alpha * (alpha - l * e_h).min(alpha * c1 - l * e_h) - e_h * e_h
}

/// `L eps^H / (m - eps^H)` with `m = min(1, C1)`, when `eps^H < m`.
pub fn alpha0_closed_form(l: f64, c1: f64, epsilon: f64, hurst: HurstModel) -> Option<f64> {
    let m = c1.min(1.0);
    let e_h = epsilon.powf(hurst.value());
    (e_h < m).then(|| l * e_h / (m - e_h))
}

/// Root of the alpha0 equation by bisection. Requires `eps^H < min(1, C1)`.
pub fn solve_alpha0(l: f64, c1: f64, epsilon: f64, hurst: HurstModel) -> Result<f64> {
    if !(l > 0.0 && c1 > 0.0 && epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha0 needs L > 0, C1 > 0 and epsilon > 0 (got {l}, {c1}, {epsilon})"
        )));
    }
    let m = c1.min(1.0);
    let e_h = epsilon.powf(hurst.value());
    if e_h >= m {
        return Err(Error::Infeasible {
            epsilon,
            min_c1: m,
            max_epsilon: m.powf(1.0 / hurst.value()),
        });
    }
    let mut lo = l * e_h / m * (1.0 + 1e-12);
    let mut hi = 2.0 * lo;
    while alpha_equation(hi, l, c1, e_h) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Infeasible {
                epsilon,
                min_c1: m,
                max_epsilon: m.powf(1.0 / hurst.value()),
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = alpha_equation(mid, l, c1, e_h);
        if r.abs() <= 1e-15 || hi - lo <= 1e-15 * hi {
            lo = mid;
            hi = mid;
            break;
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    let residual = alpha_equation(root, l, c1, e_h).abs();
    if residual > 1e-12 {
        return Err(Error::Consistency(format!(
            "alpha0 bisection residual {residual:e} exceeds 1e-12"
        )));
    }
    Ok(root)
}

/// Second moments of the averaged solution, each a supremum over the window.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AveragedMoments {
    pub y_sq: f64,
    pub z1_sq: f64,
    pub z2_sq: f64,
}

impl AveragedMoments {
    fn bracket(&self) -> f64 {
        1.0 + self.y_sq + self.z1_sq + self.z2_sq
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaMode {
    /// `alpha0` solves its defining equation.
    Exact,
    /// No root exists at this epsilon; `alpha` minimises the resulting
    /// coefficient of the Z-error inequality instead and both constants carry the factor
    /// `eps^{2H} / c(alpha)`.
    Relaxed,
}

impl fmt::Display for AlphaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlphaMode::Exact => "exact",
            AlphaMode::Relaxed => "relaxed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantInputs {
    pub l: f64,
    pub c1: f64,
    pub phi_bound: f64,
    pub u: f64,
    pub horizon: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub t0: f64,
    pub hurst: HurstModel,
    pub moments: AveragedMoments,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragingConstants {
    pub l: f64,
    pub c0: f64,
    pub c1: f64,
    pub phi_bound: f64,
    pub alpha0: f64,
    pub alpha_mode: AlphaMode,
    /// `eps^{2H} / c(alpha)`; 1 in exact mode.
    pub lemma_scale: f64,
    pub l1: f64,
    /// `C2` as defined from `phi` and the moments.
    pub c2: f64,
    /// `C2` as it enters the Z-error inequality (`lemma_scale * c2`).
    pub c2_lemma: f64,
    pub c3: f64,
    pub c4: f64,
    pub beta: f64,
    pub t0: f64,
    pub u: f64,
    pub epsilon: f64,
    /// `C4 eps^{1 - 2H beta}`.
    pub bound: f64,
}

fn sqrt_checked(name: &str, v: f64) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(Error::FormulaInput(format!(
            "{name} takes the square root of {v}"
        )));
    }
    Ok(v.sqrt())
}

/// Z-error coefficient `c(alpha) = eps^H m - L eps^{2H} / alpha` and the resulting
/// `L1(alpha)` for a given `C2`.
fn relaxed_l1(alpha: f64, l: f64, m: f64, e_h: f64, c2: f64) -> f64 {
    let c = e_h * m - l * e_h * e_h / alpha;
    e_h * e_h / c * (alpha + l / alpha + c2)
}

fn relaxed_alpha(l: f64, m: f64, e_h: f64, c2: f64) -> f64 {
    // L1(alpha) blows up at the lower end and grows linearly at the upper end;
    // golden-section search on a log scale.
    let lower = l * e_h / m;
    let mut a = (lower * (1.0 + 1e-9)).ln();
    let mut b = (lower * 1e6 + 1e3).ln();
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let f = |s: f64| relaxed_l1(s.exp(), l, m, e_h, c2);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..300 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    (0.5 * (a + b)).exp()
}

/// Evaluates `C0, C2, C3, alpha0, L1, C4` for one epsilon.
pub fn compute_constants(inp: &ConstantInputs) -> Result<AveragingConstants> {
    let ConstantInputs {
        l,
        c1,
        phi_bound,
        u,
        horizon,
        epsilon,
        beta,
        t0,
        hurst,
        moments,
    } = *inp;
    if !(u >= 0.0 && u <= horizon) {
        return Err(Error::FormulaInput(format!(
            "window start u = {u} must lie in [0, {horizon}]"
        )));
    }
    if !(phi_bound >= 0.0) {
        return Err(Error::FormulaInput(format!(
            "phi bound {phi_bound} is negative"
        )));
    }
    let h = hurst.value();
    let span = horizon - u;
    let c0 = c0_const(hurst, horizon);
    let c2 = sqrt_checked("C2", span * phi_bound * moments.bracket())?;
    let c3 = 4.0 * phi_bound * moments.bracket();
    let e_h = epsilon.powf(h);
    let e_2h = e_h * e_h;
    let e_4h = e_2h * e_2h;

    let (alpha0, alpha_mode, lemma_scale) = match solve_alpha0(l, c1, epsilon, hurst) {
        Ok(a) => (a, AlphaMode::Exact, 1.0),
        Err(Error::Infeasible { .. }) => {
            let m = c1.min(1.0);
            let a = relaxed_alpha(l, m, e_h, c2);
            let c = e_h * m - l * e_2h / a;
            (a, AlphaMode::Relaxed, e_2h / c)
        }
        Err(e) => return Err(e),
    };
    let l1 = lemma_scale * (alpha0 + l / alpha0 + c2);
    let c2_lemma = lemma_scale * c2;

    let ht = h * horizon.powf(2.0 * h - 1.0);
    let prefactor = (4.0 * span * l * e_2h + 2.0 * ht) * c2_lemma * span
        + c3 * span * span * e_2h
        + 4.0 * c0 * horizon * horizon;
    let exponent = span * (4.0 * span * l * e_4h * (l1 + 1.0) + 2.0 * l1 * e_2h * ht);
    let c4 = prefactor * epsilon.powf(2.0 * h * (1.0 + beta) - 1.0) * exponent.exp();
    let bound = c4 * epsilon.powf(1.0 - 2.0 * h * beta);
    Ok(AveragingConstants {
        l,
        c0,
        c1,
        phi_bound,
        alpha0,
        alpha_mode,
        lemma_scale,
        l1,
        c2,
        c2_lemma,
        c3,
        c4,
        beta,
        t0,
        u,
        epsilon,
        bound,
    })
}

/// `T eps^{1 - beta}`.
pub fn window_start(horizon: f64, epsilon: f64, beta: f64) -> f64 {
    horizon * epsilon.powf(1.0 - beta)
}

/// Settings of one sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub eta0: f64,
    pub beta: f64,
    pub t0: f64,
    pub delta1: f64,
    /// `None` selects `2 sqrt(max sup-MSE)`.
    pub delta2: Option<f64>,
    pub pde: PdeConfig,
    pub quadrature: QuadratureSpec,
    pub fbm_method: FbmMethod,
    pub sampling: SamplingBox,
    pub phi_samples: usize,
    pub lipschitz_pairs: usize,
}

impl SweepConfig {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self {
            n_paths,
            seed,
            eta0: 0.0,
            beta: 0.25,
            t0: 0.01,
            delta1: 0.01,
            delta2: None,
            pde: PdeConfig::default(),
            quadrature: QuadratureSpec::default(),
            fbm_method: FbmMethod::Auto,
            sampling: SamplingBox::symmetric(0.0, 3.0),
            phi_samples: 2000,
            lipschitz_pairs: 20000,
        }
    }
}

/// Per-epsilon outcome of a sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub epsilon: f64,
    pub t_lo: f64,
    /// First grid node inside the window.
    pub k_lo: usize,
    /// Largest node-wise MSE over the window, with the standard error at that node.
    pub sup_mse: Estimate,
    pub sup_mse_time: f64,
    /// `E int_{window} (|dZ1|^2 + |dZ2|^2) ds`.
    pub z_err: Estimate,
    /// `E int_{window} |dY|^2 ds`.
    pub y_err_integral: Estimate,
    /// `E sup_{window} |dY|^2`.
    pub sup_sq: Estimate,
    pub exceed: Estimate,
    pub lemma1_lhs: Estimate,
    pub lemma1_rhs: Estimate,
    /// Paired difference `lhs - L1 int |dY|^2` per path.
    pub lemma1_gap: Estimate,
    pub constants: AveragingConstants,
    pub moments: AveragedMoments,
    pub clamped: usize,
    pub pass_lemma1: bool,
    pub pass_theorem: bool,
    pub pass_chebyshev: bool,
    pub pass_chebyshev_self: bool,
    sup_abs: Vec<f64>,
}

impl SweepRow {
    pub fn sup_abs_per_path(&self) -> &[f64] {
        &self.sup_abs
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub lipschitz: LipschitzEstimate,
    pub phi: PhiEstimate,
    pub fbar_provenance: FbarProvenance,
    pub delta1: f64,
    pub delta2: f64,
    pub rate: Option<RateCheck>,
    pub rate_error: Option<String>,
    pub n_paths: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateCheck {
    pub slope: f64,
    pub intercept: f64,
    /// Largest swept epsilon such that every swept epsilon at or below it has
    /// sup-MSE within `delta1`.
    pub epsilon1: Option<f64>,
}

/// Least-squares slope of `log sup_mse` against `log eps`, and the threshold `eps1`.
pub fn check_theorem_rate(epsilons: &[f64], sup_mse: &[f64], delta1: f64) -> Result<RateCheck> {
    if epsilons.len() < 3 {
        return Err(Error::FitTooFewPoints(epsilons.len()));
    }
    let epsilon1 = epsilon1(epsilons, sup_mse, delta1);
    if sup_mse.iter().all(|&v| v == 0.0) {
        return Ok(RateCheck {
            slope: f64::NAN,
            intercept: f64::NAN,
            epsilon1,
        });
    }
    let fit = fit_log_log(epsilons, sup_mse)?;
    Ok(RateCheck {
        slope: fit.slope,
        intercept: fit.intercept,
        epsilon1,
    })
}

fn epsilon1(epsilons: &[f64], sup_mse: &[f64], delta1: f64) -> Option<f64> {
    let mut order: Vec<usize> = (0..epsilons.len()).collect();
    order.sort_by(|&a, &b| epsilons[a].total_cmp(&epsilons[b]));
    let mut best = None;
    for &i in &order {
        if sup_mse[i] <= delta1 {
            best = Some(epsilons[i]);
        } else {
            break;
        }
    }
    best
}

fn two_sided_pass(a: &Estimate, b: &Estimate) -> bool {
    // a <= b within 3 combined standard errors
    a.mean <= b.mean + 3.0 * (a.stderr * a.stderr + b.stderr * b.stderr).sqrt()
}

impl SweepReport {
    pub fn epsilons(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.epsilon).collect()
    }

    pub fn sup_mse(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.sup_mse.mean).collect()
    }

    /// Adjacent pairs along the sweep where sup-MSE increases beyond 3 combined stderr.
    pub fn monotonicity_violations(&self) -> Vec<(f64, f64)> {
        self.rows
            .windows(2)
            .filter(|w| !two_sided_pass(&w[1].sup_mse, &w[0].sup_mse))
            .map(|w| (w[0].epsilon, w[1].epsilon))
            .collect()
    }

    pub fn lemma1_holds(&self) -> bool {
        self.rows.iter().all(|r| r.pass_lemma1)
    }

    pub fn theorem_bound_holds(&self) -> bool {
        self.rows.iter().all(|r| r.pass_theorem)
    }

    pub fn chebyshev_holds(&self) -> bool {
        self.rows.iter().all(|r| r.pass_chebyshev)
    }

    /// Exceedance frequency at the smallest epsilon does not exceed that at the largest.
    pub fn chebyshev_trend_holds(&self) -> bool {
        match (self.rows.first(), self.rows.last()) {
            (Some(a), Some(b)) => b.exceed.mean <= a.exceed.mean,
            _ => true,
        }
    }

    /// Re-evaluates the Z-error inequality with `L1` and `C2` forced to zero (negative control).
    pub fn lemma1_null_control(&self) -> Vec<bool> {
        self.rows
            .iter()
            .map(|r| r.lemma1_lhs.mean <= 3.0 * r.lemma1_lhs.stderr)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "epsilon,t_lo,sup_mse,sup_mse_stderr,z_err_integral,z_err_stderr,exceed_prob,exceed_stderr,\
             c4_bound,lemma1_lhs,lemma1_rhs,pass_lemma1,pass_theorem,pass_chebyshev"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.epsilon,
                r.t_lo,
                r.sup_mse.mean,
                r.sup_mse.stderr,
                r.z_err.mean,
                r.z_err.stderr,
                r.exceed.mean,
                r.exceed.stderr,
                r.constants.bound,
                r.lemma1_lhs.mean,
                r.lemma1_rhs.mean,
                r.pass_lemma1,
                r.pass_theorem,
                r.pass_chebyshev
            )?;
        }
        Ok(())
    }

    /// `name,value` rows; epsilon-dependent constants carry the epsilon in the name.
    pub fn write_constants_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "name,value")?;
        let first = match self.rows.first() {
            Some(r) => r.constants,
            None => return Ok(()),
        };
        writeln!(w, "L,{}", first.l)?;
        writeln!(w, "C0,{}", first.c0)?;
        writeln!(w, "beta,{}", first.beta)?;
        writeln!(w, "phi_bound,{}", first.phi_bound)?;
        writeln!(w, "t0,{}", first.t0)?;
        writeln!(w, "delta1,{}", self.delta1)?;
        writeln!(w, "delta2,{}", self.delta2)?;
        for r in &self.rows {
            let c = &r.constants;
            let e = r.epsilon;
            writeln!(w, "C1[eps={e}],{}", c.c1)?;
            writeln!(w, "C2[eps={e}],{}", c.c2)?;
            writeln!(w, "C3[eps={e}],{}", c.c3)?;
            writeln!(w, "C4[eps={e}],{}", c.c4)?;
            writeln!(w, "L1[eps={e}],{}", c.l1)?;
            writeln!(w, "alpha0[eps={e}],{}", c.alpha0)?;
            writeln!(w, "alpha_mode[eps={e}],{}", c.alpha_mode)?;
            writeln!(w, "u[eps={e}],{}", c.u)?;
        }
        Ok(())
    }
}

struct PathStats {
    dy_sq: Vec<f64>,
    ybar_sq: Vec<f64>,
    z1bar_sq: Vec<f64>,
    z2bar_sq: Vec<f64>,
    z_int: f64,
    dy_int: f64,
    sup_abs: f64,
    clamped: usize,
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..values.len() {
        acc += 0.5 * (times[i] - times[i - 1]) * (values[i] + values[i - 1]);
    }
    acc
}

fn path_stats(
    original: &SolutionField,
    averaged: &SolutionField,
    eta: &EtaPaths,
    s1: &[f64],
    s2: &[f64],
    k_lo: usize,
) -> Vec<PathStats> {
    let values = eta.values();
    let n_nodes = values.ncols();
    let times = &original.times()[k_lo..];
    (0..eta.n_paths())
        .into_par_iter()
        .map(|p| {
            let row = values.row(p);
            let m = n_nodes - k_lo;
            let mut st = PathStats {
                dy_sq: Vec::with_capacity(m),
                ybar_sq: Vec::with_capacity(m),
                z1bar_sq: Vec::with_capacity(m),
                z2bar_sq: Vec::with_capacity(m),
                z_int: 0.0,
                dy_int: 0.0,
                sup_abs: 0.0,
                clamped: 0,
            };
            let mut dz = Vec::with_capacity(m);
            for k in k_lo..n_nodes {
                let (y, gy, c1) = original.interpolate(k, row[k]);
                let (yb, gb, c2) = averaged.interpolate(k, row[k]);
                st.clamped += c1 as usize + c2 as usize;
                let dy = y - yb;
                let dz1 = s1[k] * gy - s1[k] * gb;
                let dz2 = s2[k] * gy - s2[k] * gb;
                st.dy_sq.push(dy * dy);
                st.sup_abs = st.sup_abs.max(dy.abs());
                st.ybar_sq.push(yb * yb);
                st.z1bar_sq.push((s1[k] * gb).powi(2));
                st.z2bar_sq.push((s2[k] * gb).powi(2));
                dz.push(dz1 * dz1 + dz2 * dz2);
            }
            st.z_int = trapezoid(times, &dz);
            st.dy_int = trapezoid(times, &st.dy_sq);
            st
        })
        .collect()
}

fn column_estimate(stats: &[PathStats], pick: impl Fn(&PathStats) -> f64) -> Estimate {
    let v: Vec<f64> = stats.iter().map(pick).collect();
    Estimate::from_samples(&v)
}

/// Runs the full comparison for every epsilon of `eps_list` (strictly decreasing in (0, 1]).
pub fn run_sweep(
    original: &Generator,
    fbar: &AveragedGenerator,
    coeffs: &CoefficientSet,
    term: &TerminalCondition,
    eps_list: &[f64],
    cfg: &SweepConfig,
) -> Result<SweepReport> {
    validate_eps_list(eps_list)?;
    let hurst = coeffs.hurst();
    let horizon = coeffs.horizon();
    if !(cfg.beta >= 0.0 && cfg.beta < 1.0 && cfg.beta < 1.0 / (2.0 * hurst.value())) {
        return Err(Error::InvalidParameter(format!(
            "beta must lie in [0, 1) and below 1/(2H) = {}, got {}",
            1.0 / (2.0 * hurst.value()),
            cfg.beta
        )));
    }
    let grid = TimeGrid::new(horizon, coeffs.n_steps())?;
    let ensemble = PathEnsemble::generate(
        grid,
        hurst,
        cfg.n_paths,
        RngSpec::new(cfg.seed),
        cfg.fbm_method,
    )
    .map_err(|e| e.in_stage("path generation"))?;

    let lipschitz = estimate_lipschitz(
        original,
        &cfg.sampling,
        horizon,
        cfg.lipschitz_pairs,
        cfg.seed,
    )
    .map_err(|e| e.in_stage("Lipschitz estimate"))?;
    let phi = estimate_phi(
        original,
        fbar,
        &cfg.sampling,
        &default_windows(horizon, 8),
        cfg.phi_samples,
        cfg.seed,
    )
    .map_err(|e| e.in_stage("phi estimate"))?;

    let times = coeffs.times().to_vec();
    let s1: Vec<f64> = times.iter().map(|&t| coeffs.sigma1().eval(t)).collect();
    let s2: Vec<f64> = times.iter().map(|&t| coeffs.sigma2().eval(t)).collect();

    let mut rows = Vec::with_capacity(eps_list.len());
    let mut notes = Vec::new();
    for &eps in eps_list {
        let row = sweep_one(
            original, fbar, coeffs, term, &ensemble, eps, cfg, &lipschitz, &phi, &times, &s1, &s2,
        )
        .map_err(|e| e.at_epsilon(eps))?;
        if row.constants.alpha_mode == AlphaMode::Relaxed {
            notes.push(format!(
                "eps = {eps}: eps^H >= min(1, C1) = {}, no alpha0 root; relaxed alpha used",
                row.constants.c1.min(1.0)
            ));
        }
        rows.push(row);
    }

    let max_mse = rows.iter().map(|r| r.sup_mse.mean).fold(0.0, f64::max);
    let delta2 = match cfg.delta2 {
        Some(d) => d,
        None if max_mse > 0.0 => 2.0 * max_mse.sqrt(),
        None => 1.0,
    };
    for r in &mut rows {
        let hits = r.sup_abs.iter().filter(|&&v| v > delta2).count();
        r.exceed = Estimate::from_indicator(hits, r.sup_abs.len());
        let bound = r.constants.bound / (delta2 * delta2);
        r.pass_chebyshev = r.exceed.mean <= bound + 3.0 * r.exceed.stderr;
        r.pass_chebyshev_self = r.exceed.mean
            <= r.sup_sq.mean / (delta2 * delta2)
                + 3.0 * (r.exceed.stderr + r.sup_sq.stderr / (delta2 * delta2));
    }

    let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let mse: Vec<f64> = rows.iter().map(|r| r.sup_mse.mean).collect();
    let (rate, rate_error) = match check_theorem_rate(&eps, &mse, cfg.delta1) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    notes.push(
        "window: [T eps^(1-beta), T]; the alternative K eps^(-2H beta) window is not used".into(),
    );
    notes.push("C2, C3, C4 use u = T eps^(1-beta) and are recomputed per epsilon".into());
    Ok(SweepReport {
        rows,
        lipschitz,
        phi,
        fbar_provenance: fbar.provenance(),
        delta1: cfg.delta1,
        delta2,
        rate,
        rate_error,
        n_paths: cfg.n_paths,
        notes,
    })
}

pub fn validate_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.is_empty() {
        return Err(Error::InvalidParameter("eps_list is empty".into()));
    }
    if eps_list.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
        return Err(Error::InvalidParameter(format!(
            "every epsilon must lie in (0, 1], got {eps_list:?}"
        )));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter(format!(
            "eps_list must be strictly decreasing, got {eps_list:?}"
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep_one(
    original: &Generator,
    fbar: &AveragedGenerator,
    coeffs: &CoefficientSet,
    term: &TerminalCondition,
    ensemble: &PathEnsemble,
    eps: f64,
    cfg: &SweepConfig,
    lipschitz: &LipschitzEstimate,
    phi: &PhiEstimate,
    times: &[f64],
    s1: &[f64],
    s2: &[f64],
) -> Result<SweepRow> {
    let horizon = coeffs.horizon();
    let hurst = coeffs.hurst();
    let eta = simulate_eta(coeffs, ensemble, eps, cfg.eta0)?;
    let (orig_field, avg_field) = rayon::join(
        || solve_psi(original, term, coeffs, eps, cfg.eta0, &cfg.pde),
        || solve_psi(fbar.generator(), term, coeffs, eps, cfg.eta0, &cfg.pde),
    );
    let orig_field = orig_field.map_err(|e| e.in_stage("original field"))?;
    let avg_field = avg_field.map_err(|e| e.in_stage("averaged field"))?;

    let t_lo = window_start(horizon, eps, cfg.beta);
    let grid = ensemble.grid();
    let k_lo = grid.first_node_at_or_after(t_lo);
    let stats = path_stats(&orig_field, &avg_field, &eta, s1, s2, k_lo);

    let clamped: usize = stats.iter().map(|s| s.clamped).sum();
    let total = 2 * stats.len() * (times.len() - k_lo);
    if clamped as f64 > MAX_CLAMP_FRACTION * total as f64 {
        return Err(Error::DomainTooSmall { clamped, total });
    }

    let m = times.len() - k_lo;
    let mut sup_mse = Estimate::ZERO;
    let mut sup_mse_time = times[k_lo];
    let mut moments = AveragedMoments::default();
    for i in 0..m {
        let e = column_estimate(&stats, |s| s.dy_sq[i]);
        if e.mean > sup_mse.mean || i == 0 {
            sup_mse = e;
            sup_mse_time = times[k_lo + i];
        }
        moments.y_sq = moments
            .y_sq
            .max(column_estimate(&stats, |s| s.ybar_sq[i]).mean);
        moments.z1_sq = moments
            .z1_sq
            .max(column_estimate(&stats, |s| s.z1bar_sq[i]).mean);
        moments.z2_sq = moments
            .z2_sq
            .max(column_estimate(&stats, |s| s.z2bar_sq[i]).mean);
    }
    let z_err = column_estimate(&stats, |s| s.z_int);
    let y_err_integral = column_estimate(&stats, |s| s.dy_int);
    let sup_sq = column_estimate(&stats, |s| s.sup_abs * s.sup_abs);

    let c1_from = cfg.t0.max(t_lo).min(horizon);
    let c1 = c1_lower_bound(coeffs, c1_from, &cfg.quadrature)?;
    let constants = compute_constants(&ConstantInputs {
        l: lipschitz.value,
        c1,
        phi_bound: phi.phi_bound,
        u: t_lo,
        horizon,
        epsilon: eps,
        beta: cfg.beta,
        t0: cfg.t0,
        hurst,
        moments,
    })?;

    let span = horizon - t_lo;
    let rhs_samples: Vec<f64> = stats
        .iter()
        .map(|s| constants.l1 * s.dy_int + constants.c2_lemma * span)
        .collect();
    let gap_samples: Vec<f64> = stats
        .iter()
        .map(|s| s.z_int - constants.l1 * s.dy_int)
        .collect();
    let lemma1_rhs = Estimate::from_samples(&rhs_samples);
    let lemma1_gap = Estimate::from_samples(&gap_samples);
    let pass_lemma1 = lemma1_gap.mean <= constants.c2_lemma * span + 3.0 * lemma1_gap.stderr;
    let pass_theorem = sup_mse.mean <= constants.bound;
    let sup_abs: Vec<f64> = stats.iter().map(|s| s.sup_abs).collect();
    debug_assert_eq!(compensated_sum(std::iter::empty()), 0.0);

    Ok(SweepRow {
        epsilon: eps,
        t_lo,
        k_lo,
        sup_mse,
        sup_mse_time,
        z_err,
        y_err_integral,
        sup_sq,
        exceed: Estimate::ZERO,
        lemma1_lhs: z_err,
        lemma1_rhs,
        lemma1_gap,
        constants,
        moments,
        clamped,
        pass_lemma1,
        pass_theorem,
        pass_chebyshev: false,
        pass_chebyshev_self: false,
        sup_abs,
    })
}
