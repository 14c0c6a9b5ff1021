//! Self-contained verification campaign: every check re-derives a fact the
//! library relies on (closed forms vs quadrature, optimality of the
//! assignment solver, concentration inequalities, scaling laws) and reports
//! pass/fail with the margin to its threshold. Positive margin = headroom.

use crate::activation::ActivationSpec;
use crate::assignment;
use crate::bound::{self, VectorSampler};
use crate::error::Result;
use crate::kernel::{self, Backend, BivariateMoment, KernelMatrix};
use crate::net::{self, InputSet, NetworkConfig};
use crate::psd;
use crate::rng::SeedStream;
use crate::transport;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub id: String,
    pub description: String,
    pub pass: bool,
    /// Distance to the failure threshold in the check's own units;
    /// negative when the check fails.
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "all_pass": self.all_pass(),
            "checks": self.checks.iter().map(|c| serde_json::json!({
                "id": c.id,
                "description": c.description,
                "pass": c.pass,
                "margin": c.margin,
                "detail": c.detail,
            })).collect::<Vec<_>>(),
        })
    }
}

struct Outcome {
    pass: bool,
    margin: f64,
    detail: String,
}

fn ok(margin: f64, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome {
        pass: margin >= 0.0,
        margin,
        detail: detail.into(),
    })
}

fn random_psd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() / n as f64
}

/// Closed forms vs quadrature on random moments; `perturb` shifts the
/// closed-form value and exists so tests can prove this check would catch
/// a real defect of that size.
pub fn backend_equivalence_margin(stream: &SeedStream, perturb: f64) -> Result<f64> {
    let mut rng = stream.rng("backend-eq", 0);
    let quad = Backend::quadrature();
    let mut max_diff = 0.0f64;
    for act in [ActivationSpec::relu(), ActivationSpec::identity()] {
        for _ in 0..100 {
            let qxx = 10.0 * rng.gen::<f64>();
            let qyy = 10.0 * rng.gen::<f64>();
            let rho: f64 = 2.0 * rng.gen::<f64>() - 1.0;
            let m = BivariateMoment::new(qxx, rho * (qxx * qyy).sqrt(), qyy)?;
            let closed = kernel::gaussian_pair_expectation(&m, &act, Backend::ClosedForm)? + perturb;
            let numeric = kernel::gaussian_pair_expectation(&m, &act, quad)?;
            max_diff = max_diff.max((closed - numeric).abs());
        }
    }
    Ok(1e-8 - max_diff)
}

fn check_backend_equivalence(stream: &SeedStream) -> Result<Outcome> {
    let margin = backend_equivalence_margin(stream, 0.0)?;
    ok(margin, format!("worst closed-vs-quadrature gap {:.3e}", 1e-8 - margin))
}

fn check_chain_psd(stream: &SeedStream) -> Result<Outcome> {
    let mut rng = stream.rng("chain-psd", 0);
    let mut min_diag = f64::INFINITY;
    for trial in 0..5 {
        let act = if trial % 2 == 0 {
            ActivationSpec::relu()
        } else {
            ActivationSpec::tanh()
        };
        let config = NetworkConfig::new(
            vec![3, 8, 8, 2],
            vec![(0.5 + rng.gen::<f64>(), rng.gen::<f64>()); 3],
            act,
        )?;
        let inputs = InputSet::unit_sphere(3, 3, &mut rng)?;
        let chain = kernel::kernel_chain(&config, &inputs, Backend::preferred(&config.activation))?;
        for k in &chain {
            for i in 0..k.k {
                min_diag = min_diag.min(k.values[(i, i)]);
            }
        }
    }
    ok(min_diag, format!("smallest kernel diagonal {min_diag:.3e}"))
}

fn check_kernel_mc(stream: &SeedStream) -> Result<Outcome> {
    // K^(2) entries vs a direct wide-network Monte Carlo estimate
    let config = NetworkConfig::new(
        vec![2, 64, 1],
        vec![(1.0, 0.5), (1.0, 0.5)],
        ActivationSpec::relu(),
    )?;
    let inputs = InputSet::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]))?;
    let chain = kernel::kernel_chain(&config, &inputs, Backend::ClosedForm)?;
    let k2 = &chain[1];

    let n = 200_000usize;
    let mut rng = stream.rng("kernel-mc", 0);
    let sqrt_k1 = psd::sqrt_psd(&chain[0].values)?;
    let kdim = 2;
    let mut mean: DMatrix<f64> = DMatrix::zeros(kdim, kdim);
    let mut var: DMatrix<f64> = DMatrix::zeros(kdim, kdim);
    let (c_w, c_b) = config.variances[1];
    for _ in 0..n {
        let z = nalgebra::DVector::from_fn(kdim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g = &sqrt_k1 * z;
        for i in 0..kdim {
            for j in 0..kdim {
                let v = c_w * config.activation.eval(g[i]) * config.activation.eval(g[j]) + c_b;
                mean[(i, j)] += v;
                var[(i, j)] += v * v;
            }
        }
    }
    let mut worst = 0.0f64;
    for i in 0..kdim {
        for j in 0..kdim {
            let m = mean[(i, j)] / n as f64;
            let v = (var[(i, j)] / n as f64 - m * m).max(0.0);
            let se = (v / n as f64).sqrt().max(1e-300);
            worst = worst.max((m - k2.values[(i, j)]).abs() / se);
        }
    }
    ok(5.0 - worst, format!("worst kernel entry deviation {worst:.2} standard errors"))
}

fn check_sqrt_roundtrip(stream: &SeedStream) -> Result<Outcome> {
    let mut rng = stream.rng("sqrt-roundtrip", 0);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let m = random_psd(&mut rng, 5);
        let s = psd::sqrt_psd(&m)?;
        let err = psd::frobenius(&(&s * &s - &m)) / (1.0 + psd::frobenius(&m));
        worst = worst.max(err);
    }
    ok(1e-8 - worst, format!("worst relative reconstruction error {worst:.3e}"))
}

fn check_sqrt_perturbation(stream: &SeedStream) -> Result<Outcome> {
    let mut rng = stream.rng("sqrt-pert", 0);
    let mut min_slack = f64::INFINITY;
    for _ in 0..100 {
        let a = random_psd(&mut rng, 4) + DMatrix::identity(4, 4) * 0.05;
        let b = random_psd(&mut rng, 4);
        let (lhs, rhs) = psd::sqrt_perturbation_bound(&a, &b)?;
        if rhs.is_finite() {
            min_slack = min_slack.min(rhs - lhs);
        }
    }
    ok(min_slack, format!("smallest inequality slack {min_slack:.3e}"))
}

fn check_bures_metric(stream: &SeedStream) -> Result<Outcome> {
    let mut rng = stream.rng("bures", 0);
    let mut min_slack = f64::INFINITY;
    for _ in 0..60 {
        let a = random_psd(&mut rng, 3);
        let b = random_psd(&mut rng, 3);
        let c = random_psd(&mut rng, 3);
        let dab = psd::bures_w2(&a, &b)?;
        let dba = psd::bures_w2(&b, &a)?;
        min_slack = min_slack.min(1e-9 - (dab - dba).abs());
        let slack = psd::bures_w2(&a, &c)? + psd::bures_w2(&c, &b)? - dab + 1e-9;
        min_slack = min_slack.min(slack);
    }
    ok(min_slack, format!("smallest symmetry/triangle slack {min_slack:.3e}"))
}

fn check_sorted_vs_assignment(stream: &SeedStream) -> Result<Outcome> {
    let mut rng = stream.rng("sorted-vs-assign", 0);
    let mut worst = 0.0f64;
    for _ in 0..30 {
        let a = crate::samples::OutputSampleSet::new(
            DMatrix::from_fn(10, 1, |_, _| rng.sample::<f64, _>(StandardNormal)),
            crate::samples::Provenance::External,
        )?;
        let b = crate::samples::OutputSampleSet::new(
            DMatrix::from_fn(10, 1, |_, _| rng.sample::<f64, _>(StandardNormal)),
            crate::samples::Provenance::External,
        )?;
        let s = transport::w2_sorted_1d(&a, &b)?.value;
        let m = transport::w2_assignment(&a, &b)?.value;
        worst = worst.max((s - m).abs());
    }
    ok(1e-10 - worst, format!("worst sorted-vs-assignment gap {worst:.3e}"))
}

fn check_assignment_optimal(stream: &SeedStream) -> Result<Outcome> {
    let mut rng = stream.rng("assign-opt", 0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let cost: Vec<f64> = (0..36).map(|_| rng.gen::<f64>()).collect();
        let perm = assignment::solve_square(6, &cost)?;
        let got = assignment::permutation_cost(6, &cost, &perm);
        let want = assignment::brute_force_min(6, &cost);
        worst = worst.max((got - want).abs());
    }
    ok(1e-10 - worst, format!("worst optimality gap {worst:.3e}"))
}

fn check_bound_oracles(stream: &SeedStream) -> Result<Outcome> {
    let k1 = KernelMatrix::new(1, DMatrix::from_row_slice(1, 1, &[1.0]), true)?;
    let mut min_margin = f64::INFINITY;
    let mut detail = String::new();
    for (act, want) in [
        (ActivationSpec::identity(), 2.0f64.sqrt()),
        (ActivationSpec::relu(), 2.5f64.sqrt()),
    ] {
        let mut rng = stream.rng("bound-oracle", 0);
        let (c, se) = bound::estimate_c(&k1, &act, 1.0, 100_000, &mut rng)?;
        let sigmas = (c - want).abs() / se.max(1e-300);
        min_margin = min_margin.min(3.0 - sigmas);
        detail.push_str(&format!("{}: {:.2}se ", act.name(), sigmas));
    }
    ok(min_margin, detail.trim().to_string())
}

fn check_bound_scaling(stream: &SeedStream) -> Result<Outcome> {
    let inputs = InputSet::new(DMatrix::from_row_slice(1, 1, &[0.0]))?;
    let base_cfg = NetworkConfig::new(
        vec![1, 100, 1],
        vec![(1.0, 1.0), (1.0, 1.0)],
        ActivationSpec::relu(),
    )?;
    let base = bound::rhs_bound(&base_cfg, &inputs, 10_000, stream)?;
    let mut wide = base_cfg.clone();
    wide.widths[1] = 400;
    let halved = bound::rhs_bound(&wide, &inputs, 10_000, stream)?;
    let gap = (halved.total - base.total / 2.0).abs();
    ok(1e-12 - gap, format!("hidden-width scaling gap {gap:.3e}"))
}

fn check_lemma(stream: &SeedStream) -> Result<Outcome> {
    let mut min_slack = f64::INFINITY;
    let samplers = [
        VectorSampler::Gaussian(KernelMatrix::new(1, DMatrix::identity(2, 2), true)?),
        VectorSampler::ActGaussian(
            ActivationSpec::relu(),
            KernelMatrix::new(1, DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.8]), true)?,
        ),
        VectorSampler::Deterministic(nalgebra::DVector::from_row_slice(&[0.5, -1.0])),
    ];
    for (i, s) in samplers.iter().enumerate() {
        let check = bound::lemma_sqrt_check(s, 25, 800, &stream.substream("lemma", i as u64))?;
        min_slack = min_slack.min(check.rhs + 3.0 * check.lhs_stderr - check.lhs);
    }
    ok(min_slack, format!("smallest concentration slack {min_slack:.3e}"))
}

fn check_wa_covariance(stream: &SeedStream) -> Result<Outcome> {
    let mut rng = stream.rng("wa", 0);
    let a = DMatrix::from_fn(4, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let dev = bound::wa_covariance_check(&a, 1.3, 3, 50_000, stream)?;
    ok(5.0 - dev, format!("worst covariance deviation {dev:.2} standard errors"))
}

fn check_net_determinism(stream: &SeedStream) -> Result<Outcome> {
    let config = NetworkConfig::new(
        vec![2, 16, 3],
        vec![(1.0, 0.3), (1.0, 0.3)],
        ActivationSpec::tanh(),
    )?;
    let mut rng = stream.rng("net-det-inputs", 0);
    let inputs = InputSet::unit_sphere(2, 2, &mut rng)?;
    let sub = stream.substream("net-det", 0);
    let a = net::sample_outputs(&config, &inputs, 4, &sub)?;
    let b = net::sample_outputs(&config, &inputs, 4, &sub)?;
    let mismatches = a
        .rows
        .iter()
        .zip(b.rows.iter())
        .filter(|(x, y)| x.to_bits() != y.to_bits())
        .count();
    let margin = if mismatches == 0 { 0.0 } else { -(mismatches as f64) };
    ok(margin, format!("{mismatches} mismatching output entries"))
}

fn check_output_covariance(stream: &SeedStream) -> Result<Outcome> {
    // depth 1: outputs are exactly Gaussian with covariance Id ⊗ K^(1)
    let config = NetworkConfig::new(vec![2, 2], vec![(1.0, 0.5)], ActivationSpec::identity())?;
    let inputs = InputSet::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]))?;
    let chain = kernel::kernel_chain(&config, &inputs, Backend::ClosedForm)?;
    let k1 = chain.last().expect("depth 1");
    let n = 40_000usize;
    let s = net::sample_outputs(&config, &inputs, n, &stream.substream("cov", 0))?;
    let cov = s.rows.transpose() * &s.rows / n as f64;
    let want = psd::kron(&DMatrix::identity(2, 2), &k1.values);
    let gap = psd::frobenius(&(cov - want));
    // Frobenius gap of a 4x4 fourth-moment average; generous 5/sqrt(n) scale
    let tol = 5.0 * 16.0 / (n as f64).sqrt();
    ok(tol - gap, format!("covariance gap {gap:.4} (tol {tol:.4})"))
}

type CheckFn = fn(&SeedStream) -> Result<Outcome>;

const CHECKS: &[(&str, &str, CheckFn)] = &[
    (
        "kernel.backend_equivalence",
        "closed-form pair expectations match quadrature to 1e-8",
        check_backend_equivalence,
    ),
    (
        "kernel.chain_psd",
        "kernel recursion keeps matrices PSD with positive diagonals",
        check_chain_psd,
    ),
    (
        "kernel.mc_consistency",
        "kernel step matches direct Monte Carlo within 5 standard errors",
        check_kernel_mc,
    ),
    (
        "psd.sqrt_roundtrip",
        "matrix square roots square back to their inputs",
        check_sqrt_roundtrip,
    ),
    (
        "psd.sqrt_perturbation",
        "square-root perturbation inequality holds on random PSD pairs",
        check_sqrt_perturbation,
    ),
    (
        "psd.bures_metric",
        "Bures distance is symmetric and satisfies the triangle inequality",
        check_bures_metric,
    ),
    (
        "transport.sorted_vs_assignment",
        "sorted 1-D estimator equals the assignment estimator",
        check_sorted_vs_assignment,
    ),
    (
        "transport.assignment_optimal",
        "assignment solver matches brute force on small instances",
        check_assignment_optimal,
    ),
    (
        "bound.constant_oracles",
        "Monte Carlo layer constants match closed-form values",
        check_bound_oracles,
    ),
    (
        "bound.width_scaling",
        "bound total scales exactly with widths",
        check_bound_scaling,
    ),
    (
        "bound.lemma",
        "square-root concentration inequality holds on concrete samplers",
        check_lemma,
    ),
    (
        "bound.wa_covariance",
        "random layer map has covariance Id ⊗ Ā",
        check_wa_covariance,
    ),
    (
        "net.determinism",
        "network sampling is bitwise deterministic per seed",
        check_net_determinism,
    ),
    (
        "net.output_covariance",
        "depth-1 output covariance equals Id ⊗ K",
        check_output_covariance,
    ),
];

/// Module names available to the `--modules` filter.
pub fn module_names() -> Vec<&'static str> {
    let mut names: Vec<&'static str> = CHECKS
        .iter()
        .map(|(id, _, _)| id.split('.').next().expect("dotted id"))
        .collect();
    names.dedup();
    names
}

/// Runs the campaign. `modules = None` runs everything; an explicit empty
/// list runs nothing and yields an empty (vacuously passing) report.
pub fn verify_all(seed: u64, modules: Option<&[String]>) -> Report {
    let stream = SeedStream::new(seed);
    let mut report = Report::default();
    for (id, description, f) in CHECKS {
        if let Some(filter) = modules {
            let module = id.split('.').next().expect("dotted id");
            if !filter.iter().any(|m| m == module || m == id) {
                continue;
            }
        }
        let result = f(&stream.substream("check", report.checks.len() as u64));
        let check = match result {
            Ok(outcome) => CheckResult {
                id: (*id).into(),
                description: (*description).into(),
                pass: outcome.pass,
                margin: outcome.margin,
                detail: outcome.detail,
            },
            Err(e) => CheckResult {
                id: (*id).into(),
                description: (*description).into(),
                pass: false,
                margin: f64::NEG_INFINITY,
                detail: format!("error: {e}"),
            },
        };
        report.checks.push(check);
    }
    report
}
