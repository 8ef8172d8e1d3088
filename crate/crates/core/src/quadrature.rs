//! Composite Gauss–Legendre rules on uniform and geometrically graded panels.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Points per panel used by every composite rule in the crate.
pub const GL_ORDER: usize = 4;

#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes and weights on [-1, 1], by Newton iteration on the Legendre polynomial.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        let n = order as f64;
        for i in 0..order.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(order, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(order, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[order - 1 - i] = x;
            weights[i] = w;
            weights[order - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integral of `f` over one panel [a, b].
    #[inline]
    pub fn panel<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, f: &mut F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// The shared default rule of order [`GL_ORDER`].
pub fn default_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(GL_ORDER))
}

/// Order of the rule applied on each geometrically graded piece. Graded pieces
/// sit next to a singularity where the integrand has large high derivatives
/// relative to the piece width, so they get more points than regular panels.
pub const GRADED_ORDER: usize = 12;

/// The shared rule of order [`GRADED_ORDER`].
pub fn graded_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(GRADED_ORDER))
}

// Regular panels this close to a graded endpoint still see its singularity.
const NEAR_PANELS: usize = 4;

fn near_rule(panel: usize, graded: bool) -> &'static GaussLegendre {
    if graded && panel < NEAR_PANELS {
        graded_rule()
    } else {
        default_rule()
    }
}

/// Geometric refinement applied to a panel touching an endpoint singularity.
#[derive(Debug, Clone, Copy)]
pub struct Grading {
    pub ratio: f64,
    pub levels: usize,
}

impl Grading {
    pub const NONE: Grading = Grading {
        ratio: 1.0,
        levels: 0,
    };
}

/// Integrates `f` over [a, b] with `panels` uniform panels; when `grading.levels > 0`
/// the first panel (the one touching `a`) is split geometrically toward `a`.
pub fn integrate_graded<F: FnMut(f64) -> f64>(
    a: f64,
    b: f64,
    panels: usize,
    grading: Grading,
    mut f: F,
) -> f64 {
    if b <= a || panels == 0 {
        return 0.0;
    }
    let rule = default_rule();
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    // Panels are summed from the far end toward `a` so small graded pieces are
    // added last onto an already-formed sum of comparable terms.
    for p in (1..panels).rev() {
        let lo = a + p as f64 * h;
        let hi = if p + 1 == panels { b } else { lo + h };
        total += near_rule(p, grading.levels > 0).panel(lo, hi, &mut f);
    }
    let first_hi = if panels == 1 { b } else { a + h };
    if grading.levels == 0 {
        total += rule.panel(a, first_hi, &mut f);
    } else {
        let fine = graded_rule();
        let width = first_hi - a;
        let mut hi = first_hi;
        for level in 1..=grading.levels {
            let lo = a + width * grading.ratio.powi(level as i32);
            total += fine.panel(lo, hi, &mut f);
            hi = lo;
        }
        total += fine.panel(a, hi, &mut f);
    }
    total
}

/// Plain composite rule without grading.
pub fn integrate<F: FnMut(f64) -> f64>(a: f64, b: f64, panels: usize, f: F) -> f64 {
    integrate_graded(a, b, panels, Grading::NONE, f)
}

/// Integrates `r^exponent * f(r)` over [0, b] for `exponent > -1`. Panels are graded
/// geometrically toward r = 0 and the innermost panel is integrated exactly against
/// the weight with `f` replaced by its linear interpolant.
pub fn integrate_weighted_singular<F: FnMut(f64) -> f64>(
    b: f64,
    exponent: f64,
    panels: usize,
    grading: Grading,
    mut f: F,
) -> f64 {
    if b <= 0.0 || panels == 0 {
        return 0.0;
    }
    let h = b / panels as f64;
    let mut weighted = |r: f64| r.powf(exponent) * f(r);
    let mut total = 0.0;
    for p in (1..panels).rev() {
        let lo = p as f64 * h;
        let hi = if p + 1 == panels { b } else { lo + h };
        total += near_rule(p, true).panel(lo, hi, &mut weighted);
    }
    let fine = graded_rule();
    let mut hi = if panels == 1 { b } else { h };
    let width = hi;
    for level in 1..=grading.levels {
        let lo = width * grading.ratio.powi(level as i32);
        total += fine.panel(lo, hi, &mut weighted);
        hi = lo;
    }
    let delta = hi;
    let f0 = f(0.0);
    let f1 = f(delta);
    let m0 = delta.powf(exponent + 1.0) / (exponent + 1.0);
    let m1 = delta.powf(exponent + 2.0) / (exponent + 2.0);
    total + f0 * m0 + (f1 - f0) / delta * m1
}

/// Kahan–Babuška compensated sum in slice order.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for order in 1..=8 {
            let rule = GaussLegendre::new(order);
            let wsum: f64 = rule.weights().iter().sum();
            assert_relative_eq!(wsum, 2.0, epsilon = 1e-14);
            for deg in 0..(2 * order) {
                let mut f = |x: f64| x.powi(deg as i32);
                let got = rule.panel(0.0, 1.0, &mut f);
                assert_relative_eq!(got, 1.0 / (deg as f64 + 1.0), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn graded_rule_handles_weak_endpoint_singularity() {
        let g = Grading {
            ratio: 0.5,
            levels: 60,
        };
        let got = integrate_graded(0.0, 1.0, 16, g, |x| x.powf(-0.5));
        assert!((got - 2.0).abs() < 1e-8, "got {got}");
    }

    #[test]
    fn weighted_singular_rule_is_exact_for_linear_factor() {
        let g = Grading {
            ratio: 0.5,
            levels: 30,
        };
        // integral of r^{-0.8} (2 + 3r) over [0, 1] = 2/0.2 + 3/1.2
        let got = integrate_weighted_singular(1.0, -0.8, 8, g, |r| 2.0 + 3.0 * r);
        assert!((got - (10.0 + 2.5)).abs() < 1e-9, "got {got}");
        // smooth non-polynomial factor: integral of r^{-0.5} e^{-r} over [0, 1]
        let exact = 1.493648265624854; // sqrt(pi) * erf(1)
        let got = integrate_weighted_singular(1.0, -0.5, 8, g, |r| (-r).exp());
        assert!((got - exact).abs() < 1e-10, "got {got}");
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }
}
