//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Run with `cargo test -p sfrbsde --test acceptance`.

mod common;

use std::time::{Duration, Instant};

use common::{core_error, kernel_integral_oracle, norm_sq_oracle};
use sfrbsde::bsde::{
    extract_triple, malliavin_representation_check, residual_mean_check, solve_psi, Generator,
    PdeConfig, RepresentationCheck, TerminalCondition,
};
use sfrbsde::config::ExperimentConfig;
use sfrbsde::harness::{cmd_sweep, sweep_checks, sweep_report, CheckRow};
use sfrbsde::kernel::{
    kernel_transform, norm_sq, CoefficientSet, DeterministicFn, HurstModel, QuadratureSpec,
};
use sfrbsde::paths::{
    check_lemma_var_bound, fbm_covariance_check, simulate_eta, wiener_integral_det, Channel,
    FbmMethod, PathEnsemble, RngSpec, TimeGrid,
};
use sfrbsde::stats::Estimate;

type Outcome = Result<(bool, String), String>;

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn failed(rows: &[CheckRow]) -> Vec<String> {
    rows.iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} ({})", r.name, r.detail))
        .collect()
}

fn summarize(rows: &[CheckRow]) -> (bool, String) {
    let bad = failed(rows);
    if bad.is_empty() {
        (true, format!("{} checks passed", rows.len()))
    } else {
        (
            false,
            format!(
                "{} of {} checks failed: {}",
                bad.len(),
                rows.len(),
                bad.join("; ")
            ),
        )
    }
}

fn fbm_covariance_grid() -> Outcome {
    let mut rows = Vec::new();
    let mut special = String::new();
    for hv in [0.6, 0.75, 0.9] {
        let h = HurstModel::new(hv).map_err(|e| e.to_string())?;
        let grid = TimeGrid::new(8.0, 8).map_err(|e| e.to_string())?;
        let ens = PathEnsemble::generate(grid, h, 100_000, RngSpec::new(42), FbmMethod::Cholesky)
            .map_err(|e| e.to_string())?;
        let entries = fbm_covariance_check(&ens);
        let worst = entries
            .iter()
            .map(|e| e.z_score().abs())
            .fold(0.0, f64::max);
        rows.push(CheckRow::at_most(format!("H={hv}:max_z"), worst, 3.0));
        if hv == 0.75 {
            let e = entries
                .iter()
                .find(|e| e.i == 2 && e.j == 1)
                .ok_or("missing (1, 2) entry")?;
            let target = 2f64.sqrt();
            let ok = e.empirical.within(target, 3.0) && (e.analytic - target).abs() < 1e-5;
            special = format!(
                "Cov(1,2) = {:.5} +- {:.5}",
                e.empirical.mean, e.empirical.stderr
            );
            rows.push(CheckRow::new("cov_1_2", ok, 0.0, special.clone()));
        }
    }
    let (ok, d) = summarize(&rows);
    Ok((ok, format!("{d}; {special}")))
}

fn kernel_closed_forms() -> Outcome {
    let q = QuadratureSpec::default();
    let mut worst: f64 = 0.0;
    for hv in [0.55, 0.6, 0.75, 0.9, 0.95] {
        let h = HurstModel::new(hv).map_err(|e| e.to_string())?;
        for t in [0.1, 0.5, 1.0, 2.0] {
            let c = 1.3;
            let ns = norm_sq(&DeterministicFn::constant(c), t, h, &q).map_err(|e| e.to_string())?;
            worst = worst.max((ns / (c * c * t.powf(2.0 * hv)) - 1.0).abs());
            let hat = kernel_transform(&DeterministicFn::constant(c), t, h, &q)
                .map_err(|e| e.to_string())?;
            worst = worst.max((hat / (c * hv * t.powf(2.0 * hv - 1.0)) - 1.0).abs());
        }
    }
    let fine = 10 * q.panels();
    let w = 2.0 * std::f64::consts::PI;
    let f = move |s: f64| 1.0 + 0.5 * (w * s).sin();
    let df = move |s: f64| 0.5 * w * (w * s).cos();
    let xi = DeterministicFn::sinusoidal(1.0, 0.5, 1.0);
    let mut oracle_gap: f64 = 0.0;
    for hv in [0.6, 0.75, 0.9] {
        let h = HurstModel::new(hv).map_err(|e| e.to_string())?;
        let a = norm_sq_oracle(&f, &df, 1.0, hv, fine);
        let b = norm_sq(&xi, 1.0, h, &q).map_err(|e| e.to_string())?;
        oracle_gap = oracle_gap.max((a - b).abs());
        let a = kernel_integral_oracle(&f, &df, 1.0, 1.0, hv, fine);
        let b = kernel_transform(&xi, 1.0, h, &q).map_err(|e| e.to_string())?;
        oracle_gap = oracle_gap.max((a - b).abs());
    }
    let ok = worst <= 1e-6 && oracle_gap <= 1e-6;
    Ok((
        ok,
        format!("max rel error {worst:.2e} (<= 1e-6); oracle gap {oracle_gap:.2e} (<= 1e-6)"),
    ))
}

fn isometry() -> Outcome {
    let h = HurstModel::new(0.75).map_err(|e| e.to_string())?;
    let q = QuadratureSpec::default();
    let xi = DeterministicFn::linear(1.0);
    let norm = norm_sq(&xi, 1.0, h, &q).map_err(|e| e.to_string())?;
    let grid = TimeGrid::new(1.0, 512).map_err(|e| e.to_string())?;
    let mut samples = Vec::with_capacity(100_000);
    for batch in 0..4u64 {
        let ens = PathEnsemble::generate(
            grid,
            h,
            25_000,
            RngSpec::new(42 + batch),
            FbmMethod::Circulant,
        )
        .map_err(|e| e.to_string())?;
        samples.extend(wiener_integral_det(&xi, &ens, Channel::Fractional));
    }
    let mean = Estimate::from_samples(&samples);
    let squares: Vec<f64> = samples.iter().map(|v| v * v).collect();
    let var = Estimate::from_samples(&squares);
    let ok = var.within(norm, 3.0) && mean.within(0.0, 3.0);
    Ok((
        ok,
        format!(
            "E[I^2] = {:.5} +- {:.5} vs norm {:.5}; mean {:.2e} +- {:.2e}",
            var.mean, var.stderr, norm, mean.mean, mean.stderr
        ),
    ))
}

fn var_bound() -> Outcome {
    let h = HurstModel::new(0.75).map_err(|e| e.to_string())?;
    let grid = TimeGrid::new(1.0, 256).map_err(|e| e.to_string())?;
    let ens = PathEnsemble::generate(grid, h, 20_000, RngSpec::new(42), FbmMethod::Auto)
        .map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    let mut parts = Vec::new();
    for xi in [
        DeterministicFn::constant(1.0),
        DeterministicFn::zero(),
        DeterministicFn::linear(1.0),
    ] {
        let r = check_lemma_var_bound(&xi, &ens);
        parts.push(format!("{}: {:.4} <= {:.4}", xi.label(), r.lhs.mean, r.rhs));
        rows.push(CheckRow::new(xi.label(), r.holds, 0.0, ""));
    }
    let (ok, _) = summarize(&rows);
    Ok((ok, parts.join("; ")))
}

type PdeCase<'a> = (
    &'static str,
    Generator,
    TerminalCondition,
    &'a dyn Fn(usize, f64) -> f64,
);

fn pde_case_errors(n: usize) -> Result<Vec<(&'static str, f64)>, String> {
    let h = HurstModel::new(0.75).map_err(|e| e.to_string())?;
    let coeffs = CoefficientSet::new(
        DeterministicFn::zero(),
        DeterministicFn::constant(1.0),
        DeterministicFn::constant(1.0),
        h,
        1.0,
        n,
        QuadratureSpec::default(),
    )
    .map_err(|e| e.to_string())?;
    let pde = PdeConfig {
        n_space: n,
        ..PdeConfig::default()
    };
    let s = coeffs.sigma_abs_sq_table().to_vec();
    let st = *s.last().ok_or("empty table")?;
    let times = coeffs.times().to_vec();
    let core = 3.0 * st.sqrt();
    let quad = move |k: usize, x: f64| x * x + st - s[k];
    let lin_gen = move |k: usize, x: f64| x * (0.1 * (1.0 - times[k])).exp();
    let cases: [PdeCase; 3] = [
        (
            "linear_terminal",
            Generator::zero(),
            TerminalCondition::linear(),
            &|_, x| x,
        ),
        (
            "quadratic_terminal",
            Generator::zero(),
            TerminalCondition::quadratic(),
            &quad,
        ),
        (
            "linear_generator",
            Generator::linear_y(0.1),
            TerminalCondition::linear(),
            &lin_gen,
        ),
    ];
    let mut out = Vec::new();
    for (name, gen, term, exact) in cases {
        let t0 = Instant::now();
        let field = solve_psi(&gen, &term, &coeffs, 1.0, 0.0, &pde).map_err(|e| e.to_string())?;
        if t0.elapsed() > Duration::from_secs(60) {
            return Err(format!("{name} at n={n} took {:?}", t0.elapsed()));
        }
        out.push((name, core_error(&field, core, exact)));
    }
    Ok(out)
}

fn pde_closed_forms() -> Outcome {
    let coarse = pde_case_errors(512)?;
    let fine = pde_case_errors(1024)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for ((name, e1), (_, e2)) in coarse.iter().zip(&fine) {
        let refined = *e2 <= e1 / 3.0 || *e2 <= 1e-6;
        ok &= *e1 <= 1e-3 && refined;
        parts.push(format!("{name}: {e1:.2e} -> {e2:.2e}"));
    }
    Ok((ok, parts.join("; ")))
}

fn representation() -> Outcome {
    let h = HurstModel::new(0.75).map_err(|e| e.to_string())?;
    let n = 128;
    let coeffs = CoefficientSet::new(
        DeterministicFn::constant(0.2),
        DeterministicFn::sinusoidal(1.0, 0.3, 1.0),
        DeterministicFn::sinusoidal(0.8, 0.4, 2.0),
        h,
        1.0,
        n,
        QuadratureSpec::default(),
    )
    .map_err(|e| e.to_string())?;
    let grid = TimeGrid::new(1.0, n).map_err(|e| e.to_string())?;
    let ens = PathEnsemble::generate(grid, h, 4000, RngSpec::new(42), FbmMethod::Auto)
        .map_err(|e| e.to_string())?;
    let pde = PdeConfig {
        n_space: 256,
        ..PdeConfig::default()
    };
    let eps = 0.5;
    let eta = simulate_eta(&coeffs, &ens, eps, 0.0).map_err(|e| e.to_string())?;
    let times = coeffs.times();
    let mut rows = Vec::new();
    for (label, gen, term) in [
        (
            "quadratic",
            Generator::zero(),
            TerminalCondition::quadratic(),
        ),
        (
            "linear_terminal",
            Generator::zero(),
            TerminalCondition::linear(),
        ),
        (
            "linear_generator",
            Generator::linear_y(0.1),
            TerminalCondition::linear(),
        ),
        ("cosine", Generator::zero(), TerminalCondition::cosine()),
    ] {
        let field = solve_psi(&gen, &term, &coeffs, eps, 0.0, &pde).map_err(|e| e.to_string())?;
        let triple = extract_triple(&field, &eta, &coeffs).map_err(|e| e.to_string())?;
        let mut worst: f64 = 0.0;
        for p in 0..triple.n_paths() {
            for (k, &t) in times.iter().enumerate() {
                let a = triple.z2[[p, k]] * coeffs.sigma1().eval(t);
                let b = triple.z1[[p, k]] * coeffs.sigma2().eval(t);
                let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
                worst = worst.max((a - b).abs() / scale);
            }
        }
        rows.push(CheckRow::at_most(
            format!("{label}:z_ratio"),
            worst,
            4.0 * f64::EPSILON,
        ));
        match malliavin_representation_check(&triple, &coeffs, 0.01) {
            RepresentationCheck::MaxDeviation(d) => {
                rows.push(CheckRow::at_most(format!("{label}:malliavin"), d, 1e-12))
            }
            RepresentationCheck::NotApplicable => rows.push(CheckRow::new(
                format!("{label}:malliavin"),
                false,
                0.0,
                "n/a",
            )),
        }
        for k in [n / 4, n / 2, 3 * n / 4] {
            let r = residual_mean_check(&triple, &eta, &gen, &term, &coeffs, &field, k)
                .map_err(|e| e.to_string())?;
            rows.push(CheckRow::new(
                format!("{label}:residual@{}", r.t_probe),
                r.passes(),
                0.0,
                format!(
                    "{:e} vs 3*{:e} + {:e}",
                    r.residual.mean, r.residual.stderr, r.allowance
                ),
            ));
        }
    }
    Ok(summarize(&rows))
}

fn sweep_rows(
    filter: fn(&str) -> bool,
) -> Result<(Vec<CheckRow>, sfrbsde::averaging::SweepReport), String> {
    let cfg = ExperimentConfig::default();
    let report = sweep_report(&cfg).map_err(|e| e.to_string())?;
    let rows = sweep_checks(&report)
        .into_iter()
        .filter(|r| filter(&r.name))
        .collect();
    Ok((rows, report))
}

fn averaging_rate() -> Outcome {
    let (rows, report) = sweep_rows(|n| {
        n.starts_with("sup_mse")
            || n.starts_with("final_")
            || n.starts_with("rate_")
            || n.starts_with("theorem_")
    })?;
    let (ok, d) = summarize(&rows);
    let mse: Vec<String> = report
        .sup_mse()
        .iter()
        .map(|v| format!("{v:.2e}"))
        .collect();
    let slope = report.rate.map(|r| r.slope).unwrap_or(f64::NAN);
    Ok((
        ok,
        format!("{d}; sup-MSE [{}], slope {slope:.3}", mse.join(", ")),
    ))
}

fn lemma_inequality() -> Outcome {
    let (rows, report) = sweep_rows(|n| n.starts_with("lemma1@"))?;
    let (ok, d) = summarize(&rows);
    let null = report.lemma1_null_control();
    let null_fails = null.iter().any(|&held| !held);
    Ok((
        ok && null_fails,
        format!(
            "{d}; zeroed-constant control fails at {} of {} eps",
            null.iter().filter(|&&h| !h).count(),
            null.len()
        ),
    ))
}

fn chebyshev() -> Outcome {
    let (rows, report) = sweep_rows(|n| n.starts_with("chebyshev@") || n == "chebyshev_trend")?;
    let (ok, d) = summarize(&rows);
    let p: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{:.3}", r.exceed.mean))
        .collect();
    Ok((
        ok,
        format!("{d}; delta2 {:.4}, P [{}]", report.delta2, p.join(", ")),
    ))
}

fn determinism() -> Outcome {
    let mut contents = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = ExperimentConfig {
            out: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        let (outcome, _) = cmd_sweep(&cfg).map_err(|e| e.to_string())?;
        let mut files = Vec::new();
        for f in &outcome.files {
            let name = f.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if name.ends_with(".csv") && name != "manifest.csv" {
                files.push((
                    name.to_string(),
                    std::fs::read(f).map_err(|e| e.to_string())?,
                ));
            }
        }
        files.sort();
        contents.push(files);
    }
    let names: Vec<&str> = contents[0].iter().map(|(n, _)| n.as_str()).collect();
    let ok = !contents[0].is_empty() && contents[0] == contents[1];
    Ok((ok, format!("compared {}", names.join(", "))))
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "fbm covariance",
            limit: Some(Duration::from_secs(30)),
            run: fbm_covariance_grid,
        },
        Criterion {
            id: 2,
            name: "kernel closed forms",
            limit: Some(Duration::from_secs(10)),
            run: kernel_closed_forms,
        },
        Criterion {
            id: 3,
            name: "isometry",
            limit: Some(Duration::from_secs(10)),
            run: isometry,
        },
        Criterion {
            id: 4,
            name: "second-moment bound",
            limit: None,
            run: var_bound,
        },
        Criterion {
            id: 5,
            name: "pde closed forms",
            limit: None,
            run: pde_closed_forms,
        },
        Criterion {
            id: 6,
            name: "representation identities",
            limit: None,
            run: representation,
        },
        Criterion {
            id: 7,
            name: "averaging rate",
            limit: Some(Duration::from_secs(900)),
            run: averaging_rate,
        },
        Criterion {
            id: 8,
            name: "lemma1 inequality",
            limit: None,
            run: lemma_inequality,
        },
        Criterion {
            id: 9,
            name: "chebyshev bound",
            limit: None,
            run: chebyshev,
        },
        Criterion {
            id: 10,
            name: "determinism",
            limit: None,
            run: determinism,
        },
    ];
    let mut n_failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let (mut ok, mut detail) = match (c.run)() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed();
        if let Some(limit) = c.limit {
            if secs > limit {
                ok = false;
                detail = format!("{detail}; over runtime limit {limit:?}");
            }
        }
        n_failed += !ok as usize;
        println!(
            "[{}] {}. {}: {} ({:.1}s)",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            secs.as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - n_failed,
        criteria.len()
    );
    if n_failed > 0 {
        std::process::exit(1);
    }
}
