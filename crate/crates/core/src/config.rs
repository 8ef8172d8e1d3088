//! Flat `key = value` experiment configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::averaging::{build_fbar, AveragedGenerator, SamplingBox, SweepConfig};
use crate::bsde::{Generator, PdeConfig, TerminalCondition};
use crate::error::{Error, Result};
use crate::kernel::{
    CoefficientSet, DeterministicFn, HurstModel, QuadratureSpec, SingularityTreatment,
};
use crate::paths::FbmMethod;

/// Named deterministic coefficient: `constant:c`, `linear:c` (c t) or
/// `sinusoidal:c,amp,freq` (c (1 + amp sin(2 pi freq t))).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoefficientPreset {
    Constant(f64),
    Linear(f64),
    Sinusoidal {
        c: f64,
        amplitude: f64,
        frequency: f64,
    },
}

impl CoefficientPreset {
    pub fn build(&self) -> DeterministicFn {
        match *self {
            CoefficientPreset::Constant(c) => DeterministicFn::constant(c),
            CoefficientPreset::Linear(c) => DeterministicFn::linear(c),
            CoefficientPreset::Sinusoidal {
                c,
                amplitude,
                frequency,
            } => DeterministicFn::sinusoidal(c, amplitude, frequency),
        }
    }
}

fn parse_numbers(s: &str, n: usize) -> std::result::Result<Vec<f64>, String> {
    let v: std::result::Result<Vec<f64>, _> =
        s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match v {
        Ok(v) if v.len() == n && v.iter().all(|x| x.is_finite()) => Ok(v),
        _ => Err(format!(
            "expected {n} comma-separated finite numbers, got '{s}'"
        )),
    }
}

impl FromStr for CoefficientPreset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        match name.trim() {
            "constant" => Ok(Self::Constant(parse_numbers(args, 1)?[0])),
            "linear" => Ok(Self::Linear(parse_numbers(args, 1)?[0])),
            "sinusoidal" => {
                let v = parse_numbers(args, 3)?;
                Ok(Self::Sinusoidal {
                    c: v[0],
                    amplitude: v[1],
                    frequency: v[2],
                })
            }
            other => Err(format!(
                "unknown coefficient preset '{other}' (expected constant:c, linear:c or sinusoidal:c,amp,freq)"
            )),
        }
    }
}

impl fmt::Display for CoefficientPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "constant:{c}"),
            Self::Linear(c) => write!(f, "linear:{c}"),
            Self::Sinusoidal {
                c,
                amplitude,
                frequency,
            } => write!(f, "sinusoidal:{c},{amplitude},{frequency}"),
        }
    }
}

/// Named generator: `benchmark:a,b,c,d`, `affine:a,b,c,d`, `linear:r` or `zero`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeneratorPreset {
    Benchmark { a: f64, b: f64, c: f64, d: f64 },
    Affine { a: f64, b: f64, c: f64, d: f64 },
    Linear(f64),
    Zero,
}

impl GeneratorPreset {
    pub const BENCHMARK: GeneratorPreset = GeneratorPreset::Benchmark {
        a: 0.5,
        b: 0.25,
        c: 0.25,
        d: 0.1,
    };

    pub fn build(&self, horizon: f64) -> Generator {
        match *self {
            Self::Benchmark { a, b, c, d } => Generator::benchmark(a, b, c, d, horizon),
            Self::Affine { a, b, c, d } => Generator::affine(a, b, c, d),
            Self::Linear(r) => Generator::linear_y(r),
            Self::Zero => Generator::zero(),
        }
    }

    /// The averaged generator; closed form for the benchmark, identity otherwise.
    pub fn build_fbar(&self, horizon: f64, q: &QuadratureSpec) -> Result<AveragedGenerator> {
        match *self {
            Self::Benchmark { a, b, c, d } => {
                AveragedGenerator::analytic(Generator::affine(a, b, c, d))
            }
            _ => build_fbar(&self.build(horizon), horizon, q),
        }
    }
}

impl FromStr for GeneratorPreset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        match name.trim() {
            "benchmark" if args.trim().is_empty() => Ok(Self::BENCHMARK),
            "benchmark" | "affine" => {
                let v = parse_numbers(args, 4)?;
                let (a, b, c, d) = (v[0], v[1], v[2], v[3]);
                Ok(if name.trim() == "benchmark" {
                    Self::Benchmark { a, b, c, d }
                } else {
                    Self::Affine { a, b, c, d }
                })
            }
            "linear" => Ok(Self::Linear(parse_numbers(args, 1)?[0])),
            "zero" => Ok(Self::Zero),
            other => Err(format!(
                "unknown generator '{other}' (expected benchmark[:a,b,c,d], affine:a,b,c,d, linear:r or zero)"
            )),
        }
    }
}

impl fmt::Display for GeneratorPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Benchmark { a, b, c, d } => write!(f, "benchmark:{a},{b},{c},{d}"),
            Self::Affine { a, b, c, d } => write!(f, "affine:{a},{b},{c},{d}"),
            Self::Linear(r) => write!(f, "linear:{r}"),
            Self::Zero => f.write_str("zero"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalPreset {
    Linear,
    Quadratic,
    Cosine,
}

impl TerminalPreset {
    pub fn build(&self) -> TerminalCondition {
        match self {
            Self::Linear => TerminalCondition::linear(),
            Self::Quadratic => TerminalCondition::quadratic(),
            Self::Cosine => TerminalCondition::cosine(),
        }
    }
}

impl FromStr for TerminalPreset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(Self::Linear),
            "quadratic" => Ok(Self::Quadratic),
            "cosine" => Ok(Self::Cosine),
            other => Err(format!(
                "unknown terminal '{other}' (expected linear, quadratic or cosine)"
            )),
        }
    }
}

impl fmt::Display for TerminalPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Quadratic => "quadratic",
            Self::Cosine => "cosine",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delta2 {
    /// `2 sqrt(max sup-MSE)` over the sweep.
    Auto,
    Fixed(f64),
}

impl fmt::Display for Delta2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Delta2::Auto => f.write_str("auto"),
            Delta2::Fixed(v) => write!(f, "{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub hurst: f64,
    pub horizon: f64,
    pub n_time: usize,
    pub n_space: usize,
    pub n_paths: usize,
    pub eps_list: Vec<f64>,
    pub beta: f64,
    pub delta1: f64,
    pub delta2: Delta2,
    pub t0: f64,
    pub seed: u64,
    pub generator: GeneratorPreset,
    pub terminal: TerminalPreset,
    pub drift: CoefficientPreset,
    pub sigma1: CoefficientPreset,
    pub sigma2: CoefficientPreset,
    pub eta0: f64,
    pub kappa: f64,
    pub theta: f64,
    pub picard_iters: usize,
    pub picard_tol: f64,
    pub quad_panels: usize,
    pub quad_scheme: SingularityTreatment,
    pub quad_tol: f64,
    pub fbm_method: FbmMethod,
    pub phi_samples: usize,
    pub lipschitz_pairs: usize,
    pub box_radius: f64,
    /// 0 means all available cores.
    pub workers: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            hurst: 0.75,
            horizon: 1.0,
            n_time: 256,
            n_space: 256,
            n_paths: 20000,
            eps_list: vec![0.5, 0.35, 0.25, 0.18, 0.125],
            beta: 0.25,
            delta1: 0.01,
            delta2: Delta2::Auto,
            t0: 0.01,
            seed: 42,
            generator: GeneratorPreset::BENCHMARK,
            terminal: TerminalPreset::Quadratic,
            drift: CoefficientPreset::Constant(0.0),
            sigma1: CoefficientPreset::Constant(1.0),
            sigma2: CoefficientPreset::Constant(1.0),
            eta0: 0.0,
            kappa: 8.0,
            theta: 0.5,
            picard_iters: 8,
            picard_tol: 1e-10,
            quad_panels: 256,
            quad_scheme: SingularityTreatment::PowerSubstitution,
            quad_tol: 1e-8,
            fbm_method: FbmMethod::Auto,
            phi_samples: 2000,
            lipschitz_pairs: 20000,
            box_radius: 3.0,
            workers: 0,
            out: PathBuf::from("out"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "hurst",
    "horizon",
    "n_time",
    "n_space",
    "n_paths",
    "eps_list",
    "beta",
    "delta1",
    "delta2",
    "t0",
    "seed",
    "generator",
    "terminal",
    "drift",
    "sigma1",
    "sigma2",
    "eta0",
    "kappa",
    "theta",
    "picard_iters",
    "picard_tol",
    "quad_panels",
    "quad_scheme",
    "quad_tol",
    "fbm_method",
    "phi_samples",
    "lipschitz_pairs",
    "box_radius",
    "workers",
    "out",
];

fn set<T: FromStr>(slot: &mut T, key: &str, value: &str, errors: &mut Vec<String>)
where
    T::Err: fmt::Display,
{
    match value.parse::<T>() {
        Ok(v) => *slot = v,
        Err(e) => errors.push(format!("{key}: cannot parse '{value}': {e}")),
    }
}

fn parse_eps_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| format!("'{}' is not a number", p.trim()))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        Self::parse_str(&text)
    }

    /// Parses and validates; every problem found is reported at once.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut errors = Vec::new();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!(
                    "line {}: expected key = value, got '{line}'",
                    lineno + 1
                ));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                errors.push(format!("line {}: duplicate key '{key}'", lineno + 1));
                continue;
            }
            cfg.apply(key, value, &mut errors);
        }
        errors.extend(cfg.violations());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    /// Sets one key from its textual value; used for files and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut errors = Vec::new();
        self.apply(key, value, &mut errors);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    fn apply(&mut self, key: &str, value: &str, errors: &mut Vec<String>) {
        match key {
            "hurst" => set(&mut self.hurst, key, value, errors),
            "horizon" => set(&mut self.horizon, key, value, errors),
            "n_time" => set(&mut self.n_time, key, value, errors),
            "n_space" => set(&mut self.n_space, key, value, errors),
            "n_paths" => set(&mut self.n_paths, key, value, errors),
            "eps_list" => match parse_eps_list(value) {
                Ok(v) => self.eps_list = v,
                Err(e) => errors.push(format!("eps_list: {e}")),
            },
            "beta" => set(&mut self.beta, key, value, errors),
            "delta1" => set(&mut self.delta1, key, value, errors),
            "delta2" => {
                if value == "auto" {
                    self.delta2 = Delta2::Auto;
                } else {
                    match value.parse::<f64>() {
                        Ok(v) => self.delta2 = Delta2::Fixed(v),
                        Err(_) => errors.push(format!(
                            "delta2: expected 'auto' or a number, got '{value}'"
                        )),
                    }
                }
            }
            "t0" => set(&mut self.t0, key, value, errors),
            "seed" => set(&mut self.seed, key, value, errors),
            "generator" => set(&mut self.generator, key, value, errors),
            "terminal" => set(&mut self.terminal, key, value, errors),
            "drift" => set(&mut self.drift, key, value, errors),
            "sigma1" => set(&mut self.sigma1, key, value, errors),
            "sigma2" => set(&mut self.sigma2, key, value, errors),
            "eta0" => set(&mut self.eta0, key, value, errors),
            "kappa" => set(&mut self.kappa, key, value, errors),
            "theta" => set(&mut self.theta, key, value, errors),
            "picard_iters" => set(&mut self.picard_iters, key, value, errors),
            "picard_tol" => set(&mut self.picard_tol, key, value, errors),
            "quad_panels" => set(&mut self.quad_panels, key, value, errors),
            "quad_scheme" => set(&mut self.quad_scheme, key, value, errors),
            "quad_tol" => set(&mut self.quad_tol, key, value, errors),
            "fbm_method" => set(&mut self.fbm_method, key, value, errors),
            "phi_samples" => set(&mut self.phi_samples, key, value, errors),
            "lipschitz_pairs" => set(&mut self.lipschitz_pairs, key, value, errors),
            "box_radius" => set(&mut self.box_radius, key, value, errors),
            "workers" => set(&mut self.workers, key, value, errors),
            "out" => self.out = PathBuf::from(value),
            other => errors.push(format!(
                "unknown key '{other}' (known keys: {})",
                KEYS.join(", ")
            )),
        }
    }

    /// Every range violation, with the legal range.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let finite = |x: f64| x.is_finite();
        if !(self.hurst > 0.5 && self.hurst < 1.0) {
            v.push(format!("hurst: H must lie in (0.5, 1), got {}", self.hurst));
        }
        if !(self.horizon > 0.0 && finite(self.horizon)) {
            v.push(format!(
                "horizon: T must be positive and finite, got {}",
                self.horizon
            ));
        }
        if self.n_time < 8 {
            v.push(format!("n_time: must be at least 8, got {}", self.n_time));
        }
        if self.n_paths < 1000 {
            v.push(format!(
                "n_paths: must be at least 1000, got {}",
                self.n_paths
            ));
        }
        if self.eps_list.is_empty() {
            v.push("eps_list: must contain at least one value".into());
        }
        if self.eps_list.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            v.push(format!(
                "eps_list: every epsilon must lie in (0, 1], got {:?}",
                self.eps_list
            ));
        }
        if self.eps_list.windows(2).any(|w| !(w[1] < w[0])) {
            v.push(format!(
                "eps_list: values must be strictly decreasing, got {:?}",
                self.eps_list
            ));
        }
        let beta_max = 1.0 / (2.0 * self.hurst);
        if !(self.beta >= 0.0 && self.beta < 1.0) {
            v.push(format!("beta: must lie in [0, 1), got {}", self.beta));
        } else if self.hurst > 0.5 && self.hurst < 1.0 && self.beta >= beta_max {
            v.push(format!(
                "beta: must be below 1/(2H) = {beta_max} for H = {}, got {}",
                self.hurst, self.beta
            ));
        }
        if !(self.delta1 > 0.0 && finite(self.delta1)) {
            v.push(format!("delta1: must be positive, got {}", self.delta1));
        }
        if let Delta2::Fixed(d) = self.delta2 {
            if !(d > 0.0 && finite(d)) {
                v.push(format!("delta2: must be positive or 'auto', got {d}"));
            }
        }
        if !(self.t0 > 0.0 && self.t0 <= self.horizon) {
            v.push(format!(
                "t0: must lie in (0, T] = (0, {}], got {}",
                self.horizon, self.t0
            ));
        }
        if !finite(self.eta0) {
            v.push(format!("eta0: must be finite, got {}", self.eta0));
        }
        let pde = self.pde_config();
        if let Err(Error::InvalidParameter(msg)) = pde.validate() {
            v.extend(msg.split("; ").map(str::to_string));
        }
        if self.quad_panels < 8 {
            v.push(format!(
                "quad_panels: must be at least 8, got {}",
                self.quad_panels
            ));
        }
        if !(self.quad_tol > 0.0) {
            v.push(format!("quad_tol: must be positive, got {}", self.quad_tol));
        }
        if self.phi_samples == 0 {
            v.push("phi_samples: must be positive".into());
        }
        if self.lipschitz_pairs == 0 {
            v.push("lipschitz_pairs: must be positive".into());
        }
        if !(self.box_radius > 0.0 && finite(self.box_radius)) {
            v.push(format!(
                "box_radius: must be positive, got {}",
                self.box_radius
            ));
        }
        v
    }

    /// Serialises every key; `parse_str` of the result gives back an equal config.
    pub fn to_text(&self) -> String {
        let eps: Vec<String> = self.eps_list.iter().map(|e| e.to_string()).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("hurst", self.hurst.to_string());
        kv("horizon", self.horizon.to_string());
        kv("n_time", self.n_time.to_string());
        kv("n_space", self.n_space.to_string());
        kv("n_paths", self.n_paths.to_string());
        kv("eps_list", eps.join(","));
        kv("beta", self.beta.to_string());
        kv("delta1", self.delta1.to_string());
        kv("delta2", self.delta2.to_string());
        kv("t0", self.t0.to_string());
        kv("seed", self.seed.to_string());
        kv("generator", self.generator.to_string());
        kv("terminal", self.terminal.to_string());
        kv("drift", self.drift.to_string());
        kv("sigma1", self.sigma1.to_string());
        kv("sigma2", self.sigma2.to_string());
        kv("eta0", self.eta0.to_string());
        kv("kappa", self.kappa.to_string());
        kv("theta", self.theta.to_string());
        kv("picard_iters", self.picard_iters.to_string());
        kv("picard_tol", self.picard_tol.to_string());
        kv("quad_panels", self.quad_panels.to_string());
        kv("quad_scheme", self.quad_scheme.to_string());
        kv("quad_tol", self.quad_tol.to_string());
        kv("fbm_method", self.fbm_method.to_string());
        kv("phi_samples", self.phi_samples.to_string());
        kv("lipschitz_pairs", self.lipschitz_pairs.to_string());
        kv("box_radius", self.box_radius.to_string());
        kv("workers", self.workers.to_string());
        kv("out", self.out.display().to_string());
        s
    }

    pub fn hurst_model(&self) -> Result<HurstModel> {
        HurstModel::new(self.hurst)
    }

    pub fn quadrature(&self) -> Result<QuadratureSpec> {
        QuadratureSpec::new(self.quad_panels, self.quad_scheme, self.quad_tol)
    }

    pub fn pde_config(&self) -> PdeConfig {
        PdeConfig {
            kappa: self.kappa,
            n_space: self.n_space,
            theta: self.theta,
            picard_iters: self.picard_iters,
            picard_tol: self.picard_tol,
        }
    }

    pub fn coefficients(&self) -> Result<CoefficientSet> {
        CoefficientSet::new(
            self.drift.build(),
            self.sigma1.build(),
            self.sigma2.build(),
            self.hurst_model()?,
            self.horizon,
            self.n_time,
            self.quadrature()?,
        )
    }

    pub fn sweep_config(&self) -> Result<SweepConfig> {
        let mut s = SweepConfig::new(self.n_paths, self.seed);
        s.eta0 = self.eta0;
        s.beta = self.beta;
        s.t0 = self.t0;
        s.delta1 = self.delta1;
        s.delta2 = match self.delta2 {
            Delta2::Auto => None,
            Delta2::Fixed(d) => Some(d),
        };
        s.pde = self.pde_config();
        s.quadrature = self.quadrature()?;
        s.fbm_method = self.fbm_method;
        s.sampling = SamplingBox::symmetric(self.eta0, self.box_radius);
        s.phi_samples = self.phi_samples;
        s.lipschitz_pairs = self.lipschitz_pairs;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn messages(e: Error) -> Vec<String> {
        match e {
            Error::Config(v) => v,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn minimal_file_fills_defaults() {
        let c = ExperimentConfig::parse_str("hurst = 0.75\nhorizon = 1 # unit\n").unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn all_violations_reported() {
        let e = ExperimentConfig::parse_str("hurst = 0.5\nn_paths = 10\nbogus = 1\n").unwrap_err();
        let m = messages(e);
        assert!(m.iter().any(|s| s.contains("H must lie in (0.5, 1)")));
        assert!(m.iter().any(|s| s.contains("n_paths")));
        assert!(m.iter().any(|s| s.contains("unknown key 'bogus'")));
    }

    #[test]
    fn beta_side_condition() {
        let m = messages(ExperimentConfig::parse_str("beta = 0.7\n").unwrap_err());
        assert_eq!(m.len(), 1);
        assert!(m[0].contains("1/(2H)"), "{m:?}");
    }

    #[test]
    fn eps_list_must_decrease() {
        let m = messages(ExperimentConfig::parse_str("eps_list = 0.1, 0.2\n").unwrap_err());
        assert!(m[0].contains("strictly decreasing"));
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::default();
        c.generator = GeneratorPreset::Affine {
            a: 0.1,
            b: 1.0 / 3.0,
            c: 0.0,
            d: -2.5,
        };
        c.sigma2 = CoefficientPreset::Sinusoidal {
            c: 1.0,
            amplitude: 0.3,
            frequency: 2.0,
        };
        c.delta2 = Delta2::Fixed(0.123456789);
        c.eps_list = vec![0.9, 0.1 + 0.2, 1e-3];
        c.fbm_method = FbmMethod::Cholesky;
        let back = ExperimentConfig::parse_str(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }
}
