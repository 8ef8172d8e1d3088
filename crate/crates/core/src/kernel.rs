//! Fractional covariance kernel and the quantities built from it.
//!
//! For `1/2 < H < 1` the kernel `rho(t, s) = H(2H-1)|t-s|^{2H-2}` has an integrable
//! singularity on the diagonal. Every integral against it goes through one of two
//! schemes selected by [`SingularityTreatment`]:
//!
//! * power substitution: `w = (t - v)^{2H-1}` on each axis, which turns the singular
//!   factor into a bounded integrand (exact for constant integrands);
//! * graded mesh: geometric panels toward the singular point in the original
//!   variable, with product integration on the innermost panel.
//!
//! [`CoefficientSet`] caches `||sigma2||_t^2`, `sigma2_hat(t)`, `|sigma|_t^2` and
//! `lambda(t) = d/dt |sigma|_t^2` on a uniform time grid.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::{
    graded_rule, integrate, integrate_graded, integrate_weighted_singular, Grading,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HurstModel {
    h: f64,
}

impl HurstModel {
    pub fn new(h: f64) -> Result<Self> {
        if !(h > 0.5 && h < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "H must lie in (0.5, 1), got {h}"
            )));
        }
        Ok(Self { h })
    }

    pub fn value(&self) -> f64 {
        self.h
    }

    /// `2H - 2`, in (-1, 0).
    pub fn kernel_exponent(&self) -> f64 {
        2.0 * self.h - 2.0
    }

    /// `H(2H - 1)`.
    pub fn kernel_prefactor(&self) -> f64 {
        self.h * (2.0 * self.h - 1.0)
    }

    /// `2H - 1`, the exponent of the substitution variable.
    pub fn substitution_exponent(&self) -> f64 {
        2.0 * self.h - 1.0
    }
}

/// `rho(t, s) = H(2H-1)|t-s|^{2H-2}` for `t != s`.
pub fn rho(t: f64, s: f64, hurst: HurstModel) -> Result<f64> {
    if t < 0.0 || s < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "kernel arguments must be nonnegative, got ({t}, {s})"
        )));
    }
    if t == s {
        return Err(Error::Singularity(t));
    }
    Ok(hurst.kernel_prefactor() * (t - s).abs().powf(hurst.kernel_exponent()))
}

/// `C0(H, T) = H T^{2H-1}`.
pub fn c0_const(hurst: HurstModel, horizon: f64) -> f64 {
    hurst.value() * horizon.powf(2.0 * hurst.value() - 1.0)
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A deterministic real function of time on [0, T].
#[derive(Clone)]
pub struct DeterministicFn {
    label: String,
    eval: ScalarFn,
    constant: Option<f64>,
    antiderivative: Option<ScalarFn>,
}

impl fmt::Debug for DeterministicFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeterministicFn")
            .field("label", &self.label)
            .field("constant", &self.constant)
            .finish()
    }
}

impl DeterministicFn {
    pub fn constant(c: f64) -> Self {
        Self {
            label: format!("const:{c}"),
            eval: Arc::new(move |_| c),
            constant: Some(c),
            antiderivative: Some(Arc::new(move |t| c * t)),
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// `c * t`.
    pub fn linear(c: f64) -> Self {
        Self {
            label: format!("linear:{c}"),
            eval: Arc::new(move |t| c * t),
            constant: None,
            antiderivative: Some(Arc::new(move |t| 0.5 * c * t * t)),
        }
    }

    /// `c * (1 + amplitude * sin(2 pi frequency t))`.
    pub fn sinusoidal(c: f64, amplitude: f64, frequency: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * frequency;
        Self {
            label: format!("sin:{c},{amplitude},{frequency}"),
            eval: Arc::new(move |t| c * (1.0 + amplitude * (w * t).sin())),
            constant: None,
            antiderivative: Some(Arc::new(move |t| {
                if w == 0.0 {
                    c * t
                } else {
                    c * (t + amplitude * (1.0 - (w * t).cos()) / w)
                }
            })),
        }
    }

    pub fn from_fn(
        label: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            eval: Arc::new(f),
            constant: None,
            antiderivative: None,
        }
    }

    pub fn with_antiderivative(
        mut self,
        anti: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.antiderivative = Some(Arc::new(anti));
        self
    }

    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        (self.eval)(t)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn constant_value(&self) -> Option<f64> {
        self.constant
    }

    pub fn is_identically_zero(&self) -> bool {
        self.constant == Some(0.0)
    }

    /// Pointwise absolute value.
    pub fn abs(&self) -> Self {
        match self.constant {
            Some(c) => Self::constant(c.abs()),
            None => {
                let f = self.eval.clone();
                Self::from_fn(format!("abs({})", self.label), move |t| f(t).abs())
            }
        }
    }

    /// `integral_a^b f(s) ds`, exact when an antiderivative is known.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match &self.antiderivative {
            Some(anti) => anti(b) - anti(a),
            None => integrate(a, b, 64, |s| self.eval(s)),
        }
    }

    /// `integral_a^b f(s)^2 ds`.
    pub fn integral_sq(&self, a: f64, b: f64) -> f64 {
        match self.constant {
            Some(c) => c * c * (b - a),
            None => integrate(a, b, 64, |s| {
                let v = self.eval(s);
                v * v
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingularityTreatment {
    PowerSubstitution,
    GradedMesh,
}

impl fmt::Display for SingularityTreatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SingularityTreatment::PowerSubstitution => "power-substitution",
            SingularityTreatment::GradedMesh => "graded-mesh",
        })
    }
}

impl FromStr for SingularityTreatment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power-substitution" => Ok(Self::PowerSubstitution),
            "graded-mesh" => Ok(Self::GradedMesh),
            other => Err(Error::InvalidParameter(format!(
                "unknown singularity treatment '{other}' (expected power-substitution or graded-mesh)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    panels: usize,
    treatment: SingularityTreatment,
    tolerance: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            panels: 256,
            treatment: SingularityTreatment::PowerSubstitution,
            tolerance: 1e-8,
        }
    }
}

impl QuadratureSpec {
    pub fn new(panels: usize, treatment: SingularityTreatment, tolerance: f64) -> Result<Self> {
        if panels < 8 {
            return Err(Error::InvalidParameter(format!(
                "quadrature panel count must be at least 8, got {panels}"
            )));
        }
        if !(tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "quadrature tolerance must be positive, got {tolerance}"
            )));
        }
        Ok(Self {
            panels,
            treatment,
            tolerance,
        })
    }

    pub fn panels(&self) -> usize {
        self.panels
    }

    pub fn treatment(&self) -> SingularityTreatment {
        self.treatment
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn with_panels(self, panels: usize) -> Result<Self> {
        Self::new(panels, self.treatment, self.tolerance)
    }

    pub fn with_treatment(self, treatment: SingularityTreatment) -> Self {
        Self { treatment, ..self }
    }
}

// Grading of the substituted variable near zero: the integrands there behave like
// w^p with non-integer p >= 1.
const SUBSTITUTION_GRADING: Grading = Grading {
    ratio: 0.15,
    levels: 10,
};

// Grading in the original variable toward a weak singularity.
const MESH_GRADING: Grading = Grading {
    ratio: 0.5,
    levels: 48,
};

fn check_convergence(coarse: f64, fine: f64, tolerance: f64) -> Result<f64> {
    if !fine.is_finite() || (fine - coarse).abs() > tolerance * fine.abs().max(1.0) {
        return Err(Error::QuadratureNonConvergence {
            coarse,
            fine,
            tolerance,
        });
    }
    Ok(fine)
}

/// `integral_0^t rho(t, v) f(v) dv` (the one-sided kernel transform), which equals
/// `H * integral_0^{t^{2H-1}} f(t - w^{1/(2H-1)}) dw` after substitution.
fn left_transform(
    f: &DeterministicFn,
    t: f64,
    hurst: HurstModel,
    panels: usize,
    treatment: SingularityTreatment,
) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    match treatment {
        SingularityTreatment::PowerSubstitution => {
            let e = hurst.substitution_exponent();
            let p = 1.0 / e;
            let upper = t.powf(e);
            hurst.value()
                * integrate_graded(0.0, upper, panels, SUBSTITUTION_GRADING, |w| {
                    f.eval((t - w.powf(p)).max(0.0))
                })
        }
        SingularityTreatment::GradedMesh => {
            hurst.kernel_prefactor()
                * integrate_weighted_singular(
                    t,
                    hurst.kernel_exponent(),
                    panels,
                    MESH_GRADING,
                    |r| f.eval((t - r).max(0.0)),
                )
        }
    }
}

/// `integral_u^t rho(u, v) f(v) dv`.
fn right_transform(
    f: &DeterministicFn,
    u: f64,
    t: f64,
    hurst: HurstModel,
    panels: usize,
    treatment: SingularityTreatment,
) -> f64 {
    let len = t - u;
    if len <= 0.0 {
        return 0.0;
    }
    match treatment {
        SingularityTreatment::PowerSubstitution => {
            let e = hurst.substitution_exponent();
            let p = 1.0 / e;
            hurst.value()
                * integrate_graded(0.0, len.powf(e), panels, SUBSTITUTION_GRADING, |w| {
                    f.eval((u + w.powf(p)).min(t))
                })
        }
        SingularityTreatment::GradedMesh => {
            hurst.kernel_prefactor()
                * integrate_weighted_singular(
                    len,
                    hurst.kernel_exponent(),
                    panels,
                    MESH_GRADING,
                    |r| f.eval((u + r).min(t)),
                )
        }
    }
}

fn inner_product_estimate(
    xi: &DeterministicFn,
    eta: &DeterministicFn,
    t: f64,
    hurst: HurstModel,
    panels: usize,
    treatment: SingularityTreatment,
) -> f64 {
    let inner_panels = (panels / 2).max(1);
    let kernel_eta = |u: f64| {
        left_transform(eta, u, hurst, inner_panels, treatment)
            + right_transform(eta, u, t, hurst, inner_panels, treatment)
    };
    let half = 0.5 * t;
    let outer_panels = (panels / 2).max(1);
    match treatment {
        SingularityTreatment::PowerSubstitution => {
            // u = s^p on [0, t/2] and t - u = s^p on [t/2, t]
            let e = hurst.substitution_exponent();
            let p = 1.0 / e;
            let upper = half.powf(e);
            let left = integrate_graded(0.0, upper, outer_panels, SUBSTITUTION_GRADING, |s| {
                let u = s.powf(p);
                xi.eval(u) * kernel_eta(u) * p * s.powf(p - 1.0)
            });
            let right = integrate_graded(0.0, upper, outer_panels, SUBSTITUTION_GRADING, |s| {
                let u = t - s.powf(p);
                xi.eval(u) * kernel_eta(u) * p * s.powf(p - 1.0)
            });
            left + right
        }
        SingularityTreatment::GradedMesh => {
            let left = integrate_graded(0.0, half, outer_panels, MESH_GRADING, |u| {
                xi.eval(u) * kernel_eta(u)
            });
            let right = integrate_graded(0.0, half, outer_panels, MESH_GRADING, |r| {
                let u = t - r;
                xi.eval(u) * kernel_eta(u)
            });
            left + right
        }
    }
}

/// `<xi, eta>_t = integral_0^t integral_0^t rho(u, v) xi(u) eta(v) du dv`.
///
/// The estimate at the configured panel count is compared against one at half the
/// panel count; a gap above the tolerance is reported as non-convergence.
pub fn inner_product(
    xi: &DeterministicFn,
    eta: &DeterministicFn,
    t: f64,
    hurst: HurstModel,
    q: &QuadratureSpec,
) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "inner product needs t > 0, got {t}"
        )));
    }
    if xi.is_identically_zero() || eta.is_identically_zero() {
        return Ok(0.0);
    }
    let fine = inner_product_estimate(xi, eta, t, hurst, q.panels, q.treatment);
    let coarse = inner_product_estimate(xi, eta, t, hurst, q.panels / 2, q.treatment);
    check_convergence(coarse, fine, q.tolerance)
}

/// `||xi||_t^2 = <xi, xi>_t`.
pub fn norm_sq(xi: &DeterministicFn, t: f64, hurst: HurstModel, q: &QuadratureSpec) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    inner_product(xi, xi, t, hurst, q).map(|v| v.max(0.0))
}

/// `sigma2_hat(t) = integral_0^t rho(t, v) sigma2(v) dv`.
pub fn kernel_transform(
    sigma2: &DeterministicFn,
    t: f64,
    hurst: HurstModel,
    q: &QuadratureSpec,
) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "kernel transform needs t >= 0, got {t}"
        )));
    }
    if t == 0.0 || sigma2.is_identically_zero() {
        return Ok(0.0);
    }
    let fine = left_transform(sigma2, t, hurst, q.panels, q.treatment);
    let coarse = left_transform(sigma2, t, hurst, q.panels / 2, q.treatment);
    check_convergence(coarse, fine, q.tolerance)
}

const LAMBDA_PROBES: usize = 4;

/// `||sigma2||^2` at every node of `times` (increasing, starting at 0), accumulated
/// over the L-shaped strips `[0, t_k+1]^2 minus [0, t_k]^2`. By symmetry of the kernel
/// a strip equals `2 * integral_{t_k}^{t_k+1} sigma2(u) integral_0^u rho(u, v) sigma2(v) dv du`.
fn norm_sq_table(
    sigma2: &DeterministicFn,
    times: &[f64],
    hurst: HurstModel,
    q: &QuadratureSpec,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; times.len()];
    if sigma2.is_identically_zero() {
        return Ok(out);
    }
    let strip = |a: f64, b: f64, panels: usize| -> f64 {
        let inner = |u: f64| sigma2.eval(u) * left_transform(sigma2, u, hurst, panels, q.treatment);
        if a == 0.0 {
            // u = s^p removes the u^{2H-1} behaviour of the inner transform at 0
            let e = hurst.substitution_exponent();
            let p = 1.0 / e;
            2.0 * integrate_graded(0.0, b.powf(e), STRIP_PANELS, SUBSTITUTION_GRADING, |s| {
                inner(s.powf(p)) * p * s.powf(p - 1.0)
            })
        } else {
            let rule = graded_rule();
            let mid = 0.5 * (a + b);
            let mut f = inner;
            2.0 * (rule.panel(a, mid, &mut f) + rule.panel(mid, b, &mut f))
        }
    };
    let mut fine_sum = 0.0;
    let mut coarse_sum = 0.0;
    for k in 1..times.len() {
        fine_sum += strip(times[k - 1], times[k], q.panels);
        coarse_sum += strip(times[k - 1], times[k], q.panels / 2);
        out[k] = check_convergence(coarse_sum, fine_sum, q.tolerance)?;
    }
    Ok(out)
}

const STRIP_PANELS: usize = 4;

/// Outcome of comparing the two candidate closed forms for `d/dt ||sigma2||_t^2`
/// against a finite difference of the quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaCheck {
    pub t: f64,
    /// `sigma1^2 + FD(||sigma2||^2)`.
    pub finite_difference: f64,
    /// `sigma1^2 + sigma2 * sigma2_hat`.
    pub single_factor: f64,
    /// `sigma1^2 + 2 sigma2 * sigma2_hat`.
    pub double_factor: f64,
}

impl LambdaCheck {
    fn relative_error(&self, candidate: f64) -> f64 {
        (candidate - self.finite_difference).abs() / self.finite_difference.abs().max(1e-12)
    }

    pub fn single_factor_error(&self) -> f64 {
        self.relative_error(self.single_factor)
    }

    pub fn double_factor_error(&self) -> f64 {
        self.relative_error(self.double_factor)
    }
}

/// Relative tolerance for accepting a closed form of lambda against the finite difference.
pub const LAMBDA_TOLERANCE: f64 = 1e-3;

/// Coefficients `b`, `sigma1`, `sigma2` with their kernel tables on a uniform grid.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    drift: DeterministicFn,
    sigma1: DeterministicFn,
    sigma2: DeterministicFn,
    hurst: HurstModel,
    horizon: f64,
    quadrature: QuadratureSpec,
    times: Vec<f64>,
    norm_sq: Vec<f64>,
    sigma2_hat: Vec<f64>,
    sigma_abs_sq: Vec<f64>,
    lambda: Vec<f64>,
    lambda_factor: f64,
    lambda_probes: Vec<LambdaCheck>,
}

impl CoefficientSet {
    /// Builds the tables on the grid `t_k = k T / n_steps` and selects the closed form
    /// of `lambda` by finite-difference probes. See [`CoefficientSet::validate`].
    pub fn new(
        drift: DeterministicFn,
        sigma1: DeterministicFn,
        sigma2: DeterministicFn,
        hurst: HurstModel,
        horizon: f64,
        n_steps: usize,
        quadrature: QuadratureSpec,
    ) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidParameter("n_steps must be positive".into()));
        }
        let dt = horizon / n_steps as f64;
        let times: Vec<f64> = (0..=n_steps)
            .map(|k| if k == n_steps { horizon } else { k as f64 * dt })
            .collect();

        let norm_sq_table = norm_sq_table(&sigma2, &times, hurst, &quadrature)?;
        let hat_table = times
            .iter()
            .map(|&t| kernel_transform(&sigma2, t, hurst, &quadrature))
            .collect::<Result<Vec<_>>>()?;
        let mut sigma1_cum = 0.0;
        let mut abs_sq = Vec::with_capacity(times.len());
        abs_sq.push(norm_sq_table[0]);
        for k in 1..times.len() {
            sigma1_cum += sigma1.integral_sq(times[k - 1], times[k]);
            abs_sq.push(sigma1_cum + norm_sq_table[k]);
        }

        let mut set = Self {
            drift,
            sigma1,
            sigma2,
            hurst,
            horizon,
            quadrature,
            times,
            norm_sq: norm_sq_table,
            sigma2_hat: hat_table,
            sigma_abs_sq: abs_sq,
            lambda: Vec::new(),
            lambda_factor: 2.0,
            lambda_probes: Vec::new(),
        };
        set.validate_lambda_factor()?;
        set.lambda = (0..set.times.len())
            .map(|k| {
                let t = set.times[k];
                let s1 = set.sigma1.eval(t);
                s1 * s1 + set.lambda_factor * set.sigma2.eval(t) * set.sigma2_hat[k]
            })
            .collect();
        Ok(set)
    }

    fn validate_lambda_factor(&mut self) -> Result<()> {
        let probes: Vec<LambdaCheck> = (1..=LAMBDA_PROBES)
            .map(|j| self.lambda_check(self.horizon * j as f64 / LAMBDA_PROBES as f64))
            .collect::<Result<_>>()?;
        let single_ok = probes
            .iter()
            .all(|p| p.single_factor_error() <= LAMBDA_TOLERANCE);
        let double_ok = probes
            .iter()
            .all(|p| p.double_factor_error() <= LAMBDA_TOLERANCE);
        self.lambda_factor = match (double_ok, single_ok) {
            (true, _) => 2.0,
            (false, true) => 1.0,
            (false, false) => {
                let worst = probes
                    .iter()
                    .map(|p| p.double_factor_error().min(p.single_factor_error()))
                    .fold(0.0, f64::max);
                return Err(Error::Consistency(format!(
                    "neither sigma2*sigma2_hat nor 2*sigma2*sigma2_hat matches the finite \
                     difference of ||sigma2||^2 (best relative error {worst:e})"
                )));
            }
        };
        self.lambda_probes = probes;
        Ok(())
    }

    /// Checks that `|sigma|^2` is strictly increasing and `lambda > 0` on the grid
    /// nodes in (0, T]. Degenerate sets (e.g. no noise at all) construct fine but fail here.
    pub fn validate(&self) -> Result<()> {
        for k in 1..self.times.len() {
            if self.sigma_abs_sq[k] <= self.sigma_abs_sq[k - 1] {
                return Err(Error::Consistency(format!(
                    "|sigma|^2 is not strictly increasing at t = {}",
                    self.times[k]
                )));
            }
            if !(self.lambda[k] > 0.0) {
                return Err(Error::Consistency(format!(
                    "lambda(t) = {} is not positive at t = {}",
                    self.lambda[k], self.times[k]
                )));
            }
        }
        Ok(())
    }

    pub fn drift(&self) -> &DeterministicFn {
        &self.drift
    }

    pub fn sigma1(&self) -> &DeterministicFn {
        &self.sigma1
    }

    pub fn sigma2(&self) -> &DeterministicFn {
        &self.sigma2
    }

    pub fn hurst(&self) -> HurstModel {
        self.hurst
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn quadrature(&self) -> &QuadratureSpec {
        &self.quadrature
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn norm_sq_table(&self) -> &[f64] {
        &self.norm_sq
    }

    pub fn sigma2_hat_table(&self) -> &[f64] {
        &self.sigma2_hat
    }

    pub fn sigma_abs_sq_table(&self) -> &[f64] {
        &self.sigma_abs_sq
    }

    pub fn lambda_table(&self) -> &[f64] {
        &self.lambda
    }

    /// The factor `k` adopted in `lambda = sigma1^2 + k sigma2 sigma2_hat`.
    pub fn lambda_factor(&self) -> f64 {
        self.lambda_factor
    }

    pub fn lambda_probes(&self) -> &[LambdaCheck] {
        &self.lambda_probes
    }

    /// Evaluates both closed-form candidates and a second-order finite difference
    /// of the quadrature of `||sigma2||^2` at `t`.
    pub fn lambda_check(&self, t: f64) -> Result<LambdaCheck> {
        if !(t > 0.0 && t <= self.horizon) {
            return Err(Error::InvalidParameter(format!(
                "lambda check needs t in (0, T], got {t}"
            )));
        }
        let s1 = self.sigma1.eval(t);
        let s2 = self.sigma2.eval(t);
        let hat = kernel_transform(&self.sigma2, t, self.hurst, &self.quadrature)?;
        let h = 1e-3 * t;
        let ns = |x: f64| norm_sq(&self.sigma2, x, self.hurst, &self.quadrature);
        let derivative = if t + h <= self.horizon {
            (ns(t + h)? - ns(t - h)?) / (2.0 * h)
        } else {
            (3.0 * ns(t)? - 4.0 * ns(t - h)? + ns(t - 2.0 * h)?) / (2.0 * h)
        };
        Ok(LambdaCheck {
            t,
            finite_difference: s1 * s1 + derivative,
            single_factor: s1 * s1 + s2 * hat,
            double_factor: s1 * s1 + 2.0 * s2 * hat,
        })
    }

    /// Writes the kernel tables as CSV (t, norm_sq, sigma2_hat, sigma_abs_sq, lambda).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,norm_sq,sigma2_hat,sigma_abs_sq,lambda")?;
        for k in 0..self.times.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.times[k],
                self.norm_sq[k],
                self.sigma2_hat[k],
                self.sigma_abs_sq[k],
                self.lambda[k]
            )?;
        }
        Ok(())
    }
}

/// `sigma2_hat(t)` for the coefficient set's `sigma2`.
pub fn sigma2_hat(t: f64, coeffs: &CoefficientSet, q: &QuadratureSpec) -> Result<f64> {
    if t > coeffs.horizon {
        return Err(Error::InvalidParameter(format!(
            "t = {t} lies beyond the horizon {}",
            coeffs.horizon
        )));
    }
    kernel_transform(&coeffs.sigma2, t, coeffs.hurst, q)
}

/// `|sigma|_t^2 = integral_0^t sigma1^2 ds + ||sigma2||_t^2`.
pub fn sigma_abs_sq(t: f64, coeffs: &CoefficientSet, q: &QuadratureSpec) -> Result<f64> {
    if !(0.0..=coeffs.horizon).contains(&t) {
        return Err(Error::InvalidParameter(format!(
            "t = {t} lies outside [0, {}]",
            coeffs.horizon
        )));
    }
    Ok(coeffs.sigma1.integral_sq(0.0, t) + norm_sq(&coeffs.sigma2, t, coeffs.hurst, q)?)
}

/// `lambda(t) = d/dt |sigma|_t^2` in the adopted closed form, re-validated
/// against the finite difference at `t`.
pub fn lambda(t: f64, coeffs: &CoefficientSet, q: &QuadratureSpec) -> Result<f64> {
    if t == 0.0 {
        let s1 = coeffs.sigma1.eval(0.0);
        return Ok(s1 * s1);
    }
    let probe_set = CoefficientSet {
        quadrature: *q,
        ..coeffs.clone()
    };
    let check = probe_set.lambda_check(t)?;
    let (value, err) = if coeffs.lambda_factor == 2.0 {
        (check.double_factor, check.double_factor_error())
    } else {
        (check.single_factor, check.single_factor_error())
    };
    if err > LAMBDA_TOLERANCE {
        return Err(Error::Consistency(format!(
            "adopted lambda form disagrees with the finite difference at t = {t}: \
             {value} vs {} (relative error {err:e})",
            check.finite_difference
        )));
    }
    Ok(value)
}

/// `min sigma2_hat(t) / sigma2(t)` over `t0` and the grid nodes in (t0, T].
pub fn c1_lower_bound(coeffs: &CoefficientSet, t0: f64, q: &QuadratureSpec) -> Result<f64> {
    if !(t0 > 0.0 && t0 <= coeffs.horizon) {
        return Err(Error::InvalidParameter(format!(
            "t0 must lie in (0, T], got {t0}"
        )));
    }
    let ratio = |t: f64, hat: f64| -> Result<f64> {
        let s2 = coeffs.sigma2.eval(t);
        if s2 == 0.0 {
            return Err(Error::Domain(format!("sigma2 vanishes at t = {t}")));
        }
        Ok(hat / s2)
    };
    let mut best = ratio(t0, kernel_transform(&coeffs.sigma2, t0, coeffs.hurst, q)?)?;
    for (k, &t) in coeffs.times.iter().enumerate() {
        if t > t0 {
            best = best.min(ratio(t, coeffs.sigma2_hat[k])?);
        }
    }
    if !(best > 0.0) {
        return Err(Error::Domain(format!(
            "sigma2_hat / sigma2 reaches {best} on [{t0}, {}]",
            coeffs.horizon
        )));
    }
    Ok(best)
}
