//! Matched Brownian / fractional Brownian path ensembles and the forward process.
//!
//! Every path owns a ChaCha sub-stream derived from `(seed, path, channel)`, so the
//! ensemble is identical however the work is split across threads.

use std::io::Write;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::kernel::{c0_const, CoefficientSet, DeterministicFn, HurstModel};
use crate::stats::Estimate;

/// Uniform grid `t_k = k T / n` on [0, T].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidParameter(
                "time grid needs at least one step".into(),
            ));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.node(k)).collect()
    }

    /// Index of the first node at or after `t` (nodes within 1e-12 relative count as equal).
    pub fn first_node_at_or_after(&self, t: f64) -> usize {
        let x = t / self.dt();
        let k = (x - 1e-9).ceil().max(0.0) as usize;
        k.min(self.n_steps)
    }
}

/// Master seed for all randomness of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSpec {
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Brownian = 0,
    Fractional = 1,
}

const CHANNELS: u64 = 4;

impl RngSpec {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Independent generator for one (path, channel) pair.
    pub fn stream(&self, path: usize, channel: Channel) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path as u64 * CHANNELS + channel as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FbmMethod {
    Cholesky,
    Circulant,
    /// Circulant embedding above [`CIRCULANT_THRESHOLD`] steps, Cholesky otherwise.
    Auto,
}

pub const CIRCULANT_THRESHOLD: usize = 512;

impl std::str::FromStr for FbmMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cholesky" => Ok(Self::Cholesky),
            "circulant" => Ok(Self::Circulant),
            "auto" => Ok(Self::Auto),
            other => Err(Error::InvalidParameter(format!(
                "unknown fbm method '{other}' (expected cholesky, circulant or auto)"
            ))),
        }
    }
}

impl std::fmt::Display for FbmMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FbmMethod::Cholesky => "cholesky",
            FbmMethod::Circulant => "circulant",
            FbmMethod::Auto => "auto",
        })
    }
}

/// `Cov(B^H_t, B^H_s) = (t^{2H} + s^{2H} - |t-s|^{2H}) / 2`.
pub fn fbm_covariance(t: f64, s: f64, hurst: HurstModel) -> f64 {
    let e = 2.0 * hurst.value();
    0.5 * (t.powf(e) + s.powf(e) - (t - s).abs().powf(e))
}

/// Lower Cholesky factor (row-major, n x n) of the fBm covariance over t_1..t_n.
pub fn fbm_covariance_factor(grid: &TimeGrid, hurst: HurstModel) -> Result<Vec<f64>> {
    let n = grid.n_steps();
    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = fbm_covariance(grid.node(i + 1), grid.node(j + 1), hurst);
            cov[i * n + j] = v;
            cov[j * n + i] = v;
        }
    }
    match cholesky(&cov, n) {
        Ok(l) => Ok(l),
        Err(_) => {
            for i in 0..n {
                cov[i * n + i] += 1e-12;
            }
            cholesky(&cov, n)
        }
    }
}

fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let row_j = j * n;
        let mut d = a[row_j + j];
        for k in 0..j {
            d -= l[row_j + k] * l[row_j + k];
        }
        if !(d > 0.0) {
            return Err(Error::Factorization { pivot: j, value: d });
        }
        let d = d.sqrt();
        l[row_j + j] = d;
        for i in (j + 1)..n {
            let row_i = i * n;
            let mut s = a[row_i + j];
            for k in 0..j {
                s -= l[row_i + k] * l[row_j + k];
            }
            l[row_i + j] = s / d;
        }
    }
    Ok(l)
}

fn fill_rows<F>(n_paths: usize, n_nodes: usize, f: F) -> Array2<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let mut data = vec![0.0; n_paths * n_nodes];
    data.par_chunks_mut(n_nodes)
        .enumerate()
        .for_each(|(p, row)| f(p, row));
    Array2::from_shape_vec((n_paths, n_nodes), data).expect("row-major shape")
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths == 0 {
        return Err(Error::InvalidParameter("n_paths must be positive".into()));
    }
    Ok(())
}

/// Exact Gaussian fBm samples via the Cholesky factor of the covariance matrix.
/// Returns an `n_paths x (n_steps + 1)` array with a zero first column.
pub fn fbm_cholesky(
    grid: &TimeGrid,
    hurst: HurstModel,
    n_paths: usize,
    rng: RngSpec,
) -> Result<Array2<f64>> {
    check_paths(n_paths)?;
    let n = grid.n_steps();
    let l = fbm_covariance_factor(grid, hurst)?;
    Ok(fill_rows(n_paths, n + 1, |p, row| {
        let mut stream = rng.stream(p, Channel::Fractional);
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut stream)).collect();
        row[0] = 0.0;
        for i in 0..n {
            let li = &l[i * n..i * n + i + 1];
            row[i + 1] = li.iter().zip(&z).map(|(a, b)| a * b).sum();
        }
    }))
}

/// Increment autocovariance `gamma(k) = (|k+1|^{2H} - 2|k|^{2H} + |k-1|^{2H}) / 2` in step units.
pub fn increment_autocovariance(k: usize, hurst: HurstModel) -> f64 {
    let e = 2.0 * hurst.value();
    let k = k as f64;
    0.5 * ((k + 1.0).powf(e) - 2.0 * k.powf(e) + (k - 1.0).abs().powf(e))
}

/// Square roots of the circulant eigenvalues (scaled by 1/sqrt(2n)) for `n` increments.
fn circulant_sqrt_eigenvalues(
    n: usize,
    hurst: HurstModel,
    fft: &Arc<dyn Fft<f64>>,
) -> Result<Vec<f64>> {
    let m = 2 * n;
    let mut c: Vec<Complex<f64>> = (0..m)
        .map(|j| {
            let lag = if j <= n { j } else { m - j };
            Complex::new(increment_autocovariance(lag, hurst), 0.0)
        })
        .collect();
    fft.process(&mut c);
    let scale = m as f64;
    c.iter()
        .map(|ev| {
            let v = ev.re;
            if v < -1e-10 {
                Err(Error::NegativeEigenvalue(v))
            } else {
                Ok((v.max(0.0) / scale).sqrt())
            }
        })
        .collect()
}

/// fBm samples via circulant embedding of the stationary increment covariance.
pub fn fbm_circulant(
    grid: &TimeGrid,
    hurst: HurstModel,
    n_paths: usize,
    rng: RngSpec,
) -> Result<Array2<f64>> {
    check_paths(n_paths)?;
    let n = grid.n_steps();
    let m = 2 * n;
    let fft = FftPlanner::new().plan_fft_forward(m);
    let sqrt_ev = circulant_sqrt_eigenvalues(n, hurst, &fft)?;
    let step_scale = grid.dt().powf(hurst.value());
    Ok(fill_rows(n_paths, n + 1, |p, row| {
        let mut stream = rng.stream(p, Channel::Fractional);
        let mut w: Vec<Complex<f64>> = sqrt_ev
            .iter()
            .map(|s| {
                let re: f64 = StandardNormal.sample(&mut stream);
                let im: f64 = StandardNormal.sample(&mut stream);
                Complex::new(s * re, s * im)
            })
            .collect();
        fft.process(&mut w);
        row[0] = 0.0;
        let mut acc = 0.0;
        for k in 0..n {
            acc += step_scale * w[k].re;
            row[k + 1] = acc;
        }
    }))
}

/// Standard Brownian paths from independent N(0, dt) increments.
pub fn bm_paths(grid: &TimeGrid, n_paths: usize, rng: RngSpec) -> Result<Array2<f64>> {
    check_paths(n_paths)?;
    let n = grid.n_steps();
    let sd = grid.dt().sqrt();
    Ok(fill_rows(n_paths, n + 1, |p, row| {
        let mut stream = rng.stream(p, Channel::Brownian);
        row[0] = 0.0;
        let mut acc = 0.0;
        for k in 0..n {
            let z: f64 = StandardNormal.sample(&mut stream);
            acc += sd * z;
            row[k + 1] = acc;
        }
    }))
}

/// Matched `B` and `B^H` paths on one grid; each row is one path.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: TimeGrid,
    hurst: HurstModel,
    b: Array2<f64>,
    bh: Array2<f64>,
}

impl PathEnsemble {
    pub fn generate(
        grid: TimeGrid,
        hurst: HurstModel,
        n_paths: usize,
        rng: RngSpec,
        method: FbmMethod,
    ) -> Result<Self> {
        let b = bm_paths(&grid, n_paths, rng)?;
        let bh = match method {
            FbmMethod::Cholesky => fbm_cholesky(&grid, hurst, n_paths, rng)?,
            FbmMethod::Circulant => fbm_circulant(&grid, hurst, n_paths, rng)?,
            FbmMethod::Auto if grid.n_steps() > CIRCULANT_THRESHOLD => {
                fbm_circulant(&grid, hurst, n_paths, rng)?
            }
            FbmMethod::Auto => fbm_cholesky(&grid, hurst, n_paths, rng)?,
        };
        Ok(Self { grid, hurst, b, bh })
    }

    pub fn from_arrays(
        grid: TimeGrid,
        hurst: HurstModel,
        b: Array2<f64>,
        bh: Array2<f64>,
    ) -> Result<Self> {
        if b.dim() != bh.dim() || b.ncols() != grid.n_nodes() || b.nrows() == 0 {
            return Err(Error::InvalidParameter(format!(
                "path arrays {:?} and {:?} do not match a grid with {} nodes",
                b.dim(),
                bh.dim(),
                grid.n_nodes()
            )));
        }
        Ok(Self { grid, hurst, b, bh })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn hurst(&self) -> HurstModel {
        self.hurst
    }

    pub fn n_paths(&self) -> usize {
        self.b.nrows()
    }

    pub fn brownian(&self) -> &Array2<f64> {
        &self.b
    }

    pub fn fractional(&self) -> &Array2<f64> {
        &self.bh
    }

    fn channel(&self, which: Channel) -> &Array2<f64> {
        match which {
            Channel::Brownian => &self.b,
            Channel::Fractional => &self.bh,
        }
    }

    /// Writes at most `max_paths` paths as CSV rows (path_id, t, B, BH, eta).
    pub fn write_csv<W: Write>(
        &self,
        mut w: W,
        eta: Option<&EtaPaths>,
        max_paths: usize,
    ) -> Result<()> {
        writeln!(w, "path_id,t,B,BH,eta")?;
        let nodes = self.grid.nodes();
        for p in 0..self.n_paths().min(max_paths) {
            for (k, t) in nodes.iter().enumerate() {
                let e = eta.map(|e| e.values[[p, k]]).unwrap_or(f64::NAN);
                writeln!(w, "{p},{t},{},{},{e}", self.b[[p, k]], self.bh[[p, k]])?;
            }
        }
        Ok(())
    }
}

fn forward_sum(xi_nodes: &[f64], path: ArrayView1<'_, f64>) -> f64 {
    let mut acc = 0.0;
    for k in 0..xi_nodes.len() {
        acc += xi_nodes[k] * (path[k + 1] - path[k]);
    }
    acc
}

/// Per-path forward Riemann-Stieltjes sum `sum_k xi(t_k) (W_{k+1} - W_k)`.
pub fn wiener_integral_det(
    xi: &DeterministicFn,
    ensemble: &PathEnsemble,
    which: Channel,
) -> Vec<f64> {
    let grid = ensemble.grid();
    let xi_nodes: Vec<f64> = (0..grid.n_steps()).map(|k| xi.eval(grid.node(k))).collect();
    let paths = ensemble.channel(which);
    (0..ensemble.n_paths())
        .into_par_iter()
        .map(|p| forward_sum(&xi_nodes, paths.row(p)))
        .collect()
}

/// Both sides of the second-moment bound for `int |xi| dB^H`.
#[derive(Debug, Clone, Copy)]
pub struct VarBoundReport {
    /// Empirical `E[(int |xi| dB^H)^2]`.
    pub lhs: Estimate,
    /// `C0 int xi^2 ds + C0 T^2`.
    pub rhs: f64,
    pub holds: bool,
}

pub fn check_lemma_var_bound(xi: &DeterministicFn, ensemble: &PathEnsemble) -> VarBoundReport {
    let abs_xi = xi.abs();
    let squares: Vec<f64> = wiener_integral_det(&abs_xi, ensemble, Channel::Fractional)
        .into_iter()
        .map(|v| v * v)
        .collect();
    let lhs = Estimate::from_samples(&squares);
    let horizon = ensemble.grid().horizon();
    let c0 = c0_const(ensemble.hurst(), horizon);
    let rhs = c0 * xi.integral_sq(0.0, horizon) + c0 * horizon * horizon;
    VarBoundReport {
        lhs,
        rhs,
        holds: lhs.mean <= rhs + 3.0 * lhs.stderr,
    }
}

/// Forward process `eta^eps` on the ensemble grid, one row per path.
#[derive(Debug, Clone)]
pub struct EtaPaths {
    epsilon: f64,
    values: Array2<f64>,
}

impl EtaPaths {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_paths(&self) -> usize {
        self.values.nrows()
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    Ok(())
}

/// `eta^eps_t = eta0 + eps^{2H} int_0^t b + eps^H int_0^t sigma1 dB + eps^H int_0^t sigma2 dB^H`.
///
/// The drift integral is the cumulative trapezoid rule on the grid; the noise
/// integrals are forward sums, so every epsilon sees the same noise.
pub fn simulate_eta(
    coeffs: &CoefficientSet,
    ensemble: &PathEnsemble,
    epsilon: f64,
    eta0: f64,
) -> Result<EtaPaths> {
    check_epsilon(epsilon)?;
    let grid = ensemble.grid();
    if coeffs.n_steps() != grid.n_steps() || coeffs.horizon() != grid.horizon() {
        return Err(Error::InvalidParameter(format!(
            "coefficient tables ({} steps on [0, {}]) do not match the path grid ({} steps on [0, {}])",
            coeffs.n_steps(),
            coeffs.horizon(),
            grid.n_steps(),
            grid.horizon()
        )));
    }
    if coeffs.hurst() != ensemble.hurst() {
        return Err(Error::InvalidParameter(
            "coefficient set and ensemble use different Hurst parameters".into(),
        ));
    }
    let n = grid.n_steps();
    let nodes = grid.nodes();
    let dt = grid.dt();
    let drift = coeffs.drift();
    let mut drift_cum = vec![0.0; n + 1];
    for k in 0..n {
        drift_cum[k + 1] =
            drift_cum[k] + 0.5 * dt * (drift.eval(nodes[k]) + drift.eval(nodes[k + 1]));
    }
    let s1: Vec<f64> = nodes[..n]
        .iter()
        .map(|&t| coeffs.sigma1().eval(t))
        .collect();
    let s2: Vec<f64> = nodes[..n]
        .iter()
        .map(|&t| coeffs.sigma2().eval(t))
        .collect();
    let e_h = epsilon.powf(ensemble.hurst().value());
    let e_2h = e_h * e_h;
    let b = ensemble.brownian();
    let bh = ensemble.fractional();
    let values = fill_rows(ensemble.n_paths(), n + 1, |p, row| {
        let bp = b.row(p);
        let hp = bh.row(p);
        let mut noise = 0.0;
        row[0] = eta0;
        for k in 0..n {
            noise += s1[k] * (bp[k + 1] - bp[k]) + s2[k] * (hp[k + 1] - hp[k]);
            row[k + 1] = eta0 + e_2h * drift_cum[k + 1] + e_h * noise;
        }
    });
    Ok(EtaPaths { epsilon, values })
}

/// One entry of an empirical-versus-analytic fBm covariance comparison.
#[derive(Debug, Clone, Copy)]
pub struct CovarianceEntry {
    pub i: usize,
    pub j: usize,
    pub empirical: Estimate,
    pub analytic: f64,
}

impl CovarianceEntry {
    pub fn z_score(&self) -> f64 {
        if self.empirical.stderr == 0.0 {
            if self.empirical.mean == self.analytic {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.empirical.mean - self.analytic) / self.empirical.stderr
        }
    }
}

/// Empirical `E[B^H_{t_i} B^H_{t_j}]` (the mean is known to be zero) for all node
/// pairs `1 <= j <= i <= n`, with standard errors.
pub fn fbm_covariance_check(ensemble: &PathEnsemble) -> Vec<CovarianceEntry> {
    let grid = ensemble.grid();
    let bh = ensemble.fractional();
    let mut out = Vec::new();
    let mut products = vec![0.0; ensemble.n_paths()];
    for i in 1..grid.n_nodes() {
        for j in 1..=i {
            for (p, v) in products.iter_mut().enumerate() {
                *v = bh[[p, i]] * bh[[p, j]];
            }
            out.push(CovarianceEntry {
                i,
                j,
                empirical: Estimate::from_samples(&products),
                analytic: fbm_covariance(grid.node(i), grid.node(j), ensemble.hurst()),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn h(v: f64) -> HurstModel {
        HurstModel::new(v).unwrap()
    }

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.first_node_at_or_after(0.5), 2);
        assert_eq!(g.first_node_at_or_after(0.51), 3);
        assert_eq!(g.first_node_at_or_after(0.0), 0);
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(0.0, 4).is_err());
    }

    #[test]
    fn covariance_formula() {
        assert_relative_eq!(
            fbm_covariance(1.0, 2.0, h(0.75)),
            2f64.sqrt(),
            epsilon = 1e-15
        );
        assert_relative_eq!(fbm_covariance(1.0, 1.0, h(0.6)), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn increment_autocovariance_values() {
        assert_eq!(increment_autocovariance(0, h(0.75)), 1.0);
        assert_relative_eq!(
            increment_autocovariance(1, h(0.75)),
            (2f64.powf(1.5) - 2.0) / 2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn cholesky_reproduces_matrix() {
        let g = TimeGrid::new(2.0, 6).unwrap();
        let l = fbm_covariance_factor(&g, h(0.7)).unwrap();
        let n = 6;
        for i in 0..n {
            for j in 0..n {
                let v: f64 = (0..n).map(|k| l[i * n + k] * l[j * n + k]).sum();
                let exact = fbm_covariance(g.node(i + 1), g.node(j + 1), h(0.7));
                assert_relative_eq!(v, exact, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn paths_start_at_zero_and_are_reproducible() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        for m in [FbmMethod::Cholesky, FbmMethod::Circulant] {
            let a = PathEnsemble::generate(g, h(0.75), 7, RngSpec::new(3), m).unwrap();
            let b = PathEnsemble::generate(g, h(0.75), 7, RngSpec::new(3), m).unwrap();
            assert_eq!(a.fractional(), b.fractional());
            assert_eq!(a.brownian(), b.brownian());
            assert!(a.fractional().column(0).iter().all(|&v| v == 0.0));
            assert!(a.brownian().column(0).iter().all(|&v| v == 0.0));
            let c = PathEnsemble::generate(g, h(0.75), 7, RngSpec::new(4), m).unwrap();
            assert_ne!(a.fractional(), c.fractional());
        }
    }

    #[test]
    fn path_prefix_is_independent_of_ensemble_size() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let small = fbm_cholesky(&g, h(0.6), 3, RngSpec::new(9)).unwrap();
        let large = fbm_cholesky(&g, h(0.6), 10, RngSpec::new(9)).unwrap();
        assert_eq!(small.row(2), large.row(2));
    }

    #[test]
    fn constant_integrand_telescopes() {
        let g = TimeGrid::new(1.0, 32).unwrap();
        let e =
            PathEnsemble::generate(g, h(0.75), 5, RngSpec::new(1), FbmMethod::Cholesky).unwrap();
        let i = wiener_integral_det(&DeterministicFn::constant(1.0), &e, Channel::Fractional);
        for (p, v) in i.iter().enumerate() {
            assert_relative_eq!(*v, e.fractional()[[p, 32]], epsilon = 1e-12);
        }
        let z = wiener_integral_det(&DeterministicFn::zero(), &e, Channel::Brownian);
        assert!(z.iter().all(|&v| v == 0.0));
    }

    fn coeffs(b: DeterministicFn, s1: f64, s2: f64, n: usize) -> CoefficientSet {
        CoefficientSet::new(
            b,
            DeterministicFn::constant(s1),
            DeterministicFn::constant(s2),
            h(0.75),
            1.0,
            n,
            crate::kernel::QuadratureSpec::default(),
        )
        .unwrap()
    }

    #[test]
    fn deterministic_eta() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let c = coeffs(DeterministicFn::constant(1.0), 0.0, 0.0, 8);
        assert!(c.validate().is_err());
        let e =
            PathEnsemble::generate(g, h(0.75), 3, RngSpec::new(5), FbmMethod::Cholesky).unwrap();
        let eps: f64 = 0.3;
        let eta = simulate_eta(&c, &e, eps, 0.0).unwrap();
        for p in 0..3 {
            for k in 0..=8 {
                assert_relative_eq!(
                    eta.values()[[p, k]],
                    eps.powf(1.5) * g.node(k),
                    epsilon = 1e-15
                );
            }
        }
    }

    #[test]
    fn eta_at_unit_epsilon_is_unscaled_sum() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        let c = coeffs(DeterministicFn::zero(), 1.0, 1.0, 16);
        let e =
            PathEnsemble::generate(g, h(0.75), 4, RngSpec::new(5), FbmMethod::Cholesky).unwrap();
        let eta = simulate_eta(&c, &e, 1.0, 0.5).unwrap();
        for p in 0..4 {
            for k in 0..=16 {
                let direct = 0.5 + e.brownian()[[p, k]] + e.fractional()[[p, k]];
                assert_relative_eq!(eta.values()[[p, k]], direct, epsilon = 1e-12);
            }
        }
        assert!(simulate_eta(&c, &e, 1.5, 0.0).is_err());
        assert!(simulate_eta(&c, &e, 0.0, 0.0).is_err());
    }

    #[test]
    fn mismatched_grid_is_rejected() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let c = coeffs(DeterministicFn::zero(), 1.0, 1.0, 16);
        let e =
            PathEnsemble::generate(g, h(0.75), 2, RngSpec::new(5), FbmMethod::Cholesky).unwrap();
        assert!(simulate_eta(&c, &e, 0.5, 0.0).is_err());
    }
}
