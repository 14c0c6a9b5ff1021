//! The layerwise W2 bound and its Monte Carlo constants.
//!
//! For a depth-L network the bound is
//!
//!   total = √n_L · Σ_{i=1..L-1} C^{(i+1)} · Lip(σ)^{L-1-i}
//!           · √(∏_{j=i+1..L-1} c_w^{(j)}) / √n_i
//!
//! where C^{(ℓ+1)}² = E‖c_w^{(ℓ)} σ(G)σ(G)ᵀ − K₀^{(ℓ+1)}‖²_F / λ⁺(K₀^{(ℓ+1)})
//! with G ~ 𝒩(0, K^{(ℓ)}) and K₀ the bias-free kernel step. Depth 1 has no
//! hidden layer and the bound is exactly zero.
//!
//! All constants for one run are drawn from a single fixed stream, so they
//! are common random numbers across layers and widths: profiles over depth
//! or width are smooth in the way the exact constants would be.

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};
use crate::kernel::{self, Backend, BivariateMoment, KernelMatrix};
use crate::net::{InputSet, NetworkConfig};
use crate::psd;
use crate::rng::SeedStream;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

/// One estimated layer constant C^{(layer)}.
#[derive(Debug, Clone, Copy)]
pub struct CEstimate {
    /// Kernel layer the constant belongs to (the ℓ+1 in C^{(ℓ+1)}).
    pub layer: usize,
    pub value: f64,
    /// Delta-method standard error propagated from the Frobenius moment.
    pub stderr: f64,
}

#[derive(Debug, Clone)]
pub struct BoundBreakdown {
    pub constants: Vec<CEstimate>,
    /// Per-layer summands, same order as `constants`.
    pub terms: Vec<f64>,
    pub total: f64,
    /// Standard error of `total` from the constants' stderrs.
    pub total_stderr: f64,
    pub config_hash: String,
    pub mc_samples: usize,
    pub seed: u64,
}

impl BoundBreakdown {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config_hash": self.config_hash,
            "constants": self.constants.iter().map(|c| serde_json::json!({
                "layer": c.layer,
                "value": c.value,
                "stderr": c.stderr,
            })).collect::<Vec<_>>(),
            "terms": self.terms,
            "total": self.total,
            "total_stderr": self.total_stderr,
            "mc_samples": self.mc_samples,
            "seed": self.seed,
        })
    }
}

/// Stable fingerprint of a resolved (architecture, inputs) pair. Floats are
/// hashed by their exact bit patterns.
pub fn config_hash(config: &NetworkConfig, inputs: &InputSet) -> String {
    let mut h = Sha256::new();
    h.update(b"widths");
    for w in &config.widths {
        h.update((*w as u64).to_le_bytes());
    }
    h.update(b"variances");
    for (cw, cb) in &config.variances {
        h.update(cw.to_bits().to_le_bytes());
        h.update(cb.to_bits().to_le_bytes());
    }
    h.update(b"activation");
    h.update(config.activation.name().as_bytes());
    h.update(config.activation.lipschitz.to_bits().to_le_bytes());
    h.update(b"points");
    for v in inputs.points.iter() {
        h.update(v.to_bits().to_le_bytes());
    }
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Monte Carlo estimate of C^{(ℓ+1)} from K^{(ℓ)}. Returns (value, stderr).
///
/// The estimator averages ‖c_w σ(g)σ(g)ᵀ − K₀‖²_F over draws g = √K z and
/// divides by λ⁺(K₀); the stderr is the delta-method image of the moment's
/// standard error through x ↦ √(x/λ⁺).
pub fn estimate_c(
    k_prev: &KernelMatrix,
    act: &ActivationSpec,
    c_w: f64,
    mc_samples: usize,
    rng: &mut ChaCha12Rng,
) -> Result<(f64, f64)> {
    if mc_samples < 2 {
        return Err(Error::Config("estimate_c needs mc_samples >= 2".into()));
    }
    if !(c_w.is_finite() && c_w > 0.0) {
        return Err(Error::Config(format!("c_w must be positive, got {c_w}")));
    }
    let k = k_prev.k;
    let k0 = kernel::kernel_step_no_bias(k_prev, act, c_w, Backend::preferred(act))?;
    let lambda = psd::lambda_plus(&k0.values, psd::LAMBDA_PLUS_REL_TOL)?;
    let sqrt_k = psd::sqrt_psd(&k_prev.values)?;

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut z = DVector::zeros(k);
    let mut s = DVector::zeros(k);
    for _ in 0..mc_samples {
        for zi in z.iter_mut() {
            *zi = rng.sample::<f64, _>(StandardNormal);
        }
        let g = &sqrt_k * &z;
        for (si, gi) in s.iter_mut().zip(g.iter()) {
            *si = act.eval(*gi);
        }
        let mut x = 0.0;
        for i in 0..k {
            for j in 0..k {
                let d = c_w * s[i] * s[j] - k0.values[(i, j)];
                x += d * d;
            }
        }
        sum += x;
        sum_sq += x * x;
    }
    let m = mc_samples as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0);
    let se_mean = (var / m).sqrt();
    let value = (mean / lambda).sqrt();
    let stderr = if mean > 0.0 {
        se_mean / (2.0 * (mean * lambda).sqrt())
    } else {
        0.0
    };
    Ok((value, stderr))
}

fn check_mc_budget(config: &NetworkConfig, mc_samples: usize) -> Result<()> {
    let _ = config;
    if mc_samples < 2 {
        return Err(Error::Config("need mc_samples >= 2".into()));
    }
    Ok(())
}

/// Sum the bound for `config` out of already-estimated constants
/// C^{(2)}..C^{(L)} (in that order).
fn assemble(config: &NetworkConfig, constants: &[CEstimate]) -> (Vec<f64>, f64, f64) {
    let l = config.depth();
    debug_assert_eq!(constants.len(), l.saturating_sub(1));
    let lip = config.activation.lipschitz;
    let n_l = *config.widths.last().expect("validated") as f64;
    let mut terms = Vec::with_capacity(constants.len());
    let mut total = 0.0;
    let mut var_total = 0.0;
    for (idx, c) in constants.iter().enumerate() {
        let i = idx + 1; // summation index: term i uses C^{(i+1)} and width n_i
        let mut prod = 1.0;
        for j in (i + 1)..l {
            prod *= config.variances[j].0;
        }
        let coef = n_l.sqrt() * lip.powi((l - 1 - i) as i32) * prod.sqrt()
            / (config.widths[i] as f64).sqrt();
        let term = coef * c.value;
        terms.push(term);
        total += term;
        var_total += (coef * c.stderr) * (coef * c.stderr);
    }
    (terms, total, var_total.sqrt())
}

/// Full bound evaluation: kernel chain, per-layer constants, weighted sum.
pub fn rhs_bound(
    config: &NetworkConfig,
    inputs: &InputSet,
    mc_samples: usize,
    stream: &SeedStream,
) -> Result<BoundBreakdown> {
    check_mc_budget(config, mc_samples)?;
    let chain = kernel::kernel_chain(config, inputs, Backend::preferred(&config.activation))?;
    let constants = estimate_chain_constants(config, &chain, mc_samples, stream)?;
    let (terms, total, total_stderr) = assemble(config, &constants);
    Ok(BoundBreakdown {
        constants,
        terms,
        total,
        total_stderr,
        config_hash: config_hash(config, inputs),
        mc_samples,
        seed: stream.master(),
    })
}

/// C^{(i+1)} for i = 1..L-1. Every constant re-reads the same stream, so the
/// underlying Gaussian draws are shared across layers (and across configs
/// that share the stream).
fn estimate_chain_constants(
    config: &NetworkConfig,
    chain: &[KernelMatrix],
    mc_samples: usize,
    stream: &SeedStream,
) -> Result<Vec<CEstimate>> {
    let l = config.depth();
    let mut constants = Vec::with_capacity(l.saturating_sub(1));
    for i in 1..l {
        let mut rng = stream.rng("bound-constants", 0);
        let (value, stderr) = estimate_c(
            &chain[i - 1],
            &config.activation,
            config.variances[i].0,
            mc_samples,
            &mut rng,
        )?;
        constants.push(CEstimate {
            layer: i + 1,
            value,
            stderr,
        });
    }
    Ok(constants)
}

#[derive(Debug, Clone)]
pub struct DepthProfile {
    /// (depth, bound total) pairs in the order requested.
    pub totals: Vec<(usize, f64)>,
    /// Constants for the deepest architecture (shared by all rows).
    pub constants: Vec<CEstimate>,
    /// True when the final increment is below 1e-3 of the final total.
    pub bounded: bool,
}

/// Bound totals across depths for a constant-width template.
///
/// `template.widths` must be [n₀, w, n_L] with uniform variances; depth L
/// uses widths [n₀, w, ..., w, n_L] with L-1 hidden layers. The kernel chain
/// and the constants are computed once at the maximum depth and reused, so
/// the rows differ only through the closed-form weights.
pub fn deep_limit_profile(
    template: &NetworkConfig,
    inputs: &InputSet,
    depths: &[usize],
    mc_samples: usize,
    stream: &SeedStream,
) -> Result<DepthProfile> {
    template.validate()?;
    if template.depth() != 2 {
        return Err(Error::Config(
            "depth profile template must be a depth-2 config [n0, w, n_L]".into(),
        ));
    }
    let (c_w, c_b) = template.variances[0];
    if template.variances.iter().any(|&(w, b)| w != c_w || b != c_b) {
        return Err(Error::Config(
            "depth profile template needs uniform (c_w, c_b)".into(),
        ));
    }
    if depths.is_empty() {
        return Err(Error::Config("depth profile needs at least one depth".into()));
    }
    if depths.iter().any(|&d| d < 1) {
        return Err(Error::Config("depths must be >= 1".into()));
    }
    let n0 = template.widths[0];
    let w = template.widths[1];
    let n_l = template.widths[2];
    let max_l = *depths.iter().max().expect("non-empty");

    let config_at = |depth: usize| -> Result<NetworkConfig> {
        let mut widths = vec![n0];
        widths.extend(std::iter::repeat(w).take(depth.saturating_sub(1)));
        widths.push(n_l);
        NetworkConfig::new(widths, vec![(c_w, c_b); depth], template.activation.clone())
    };

    let deep = config_at(max_l)?;
    let chain = kernel::kernel_chain(&deep, inputs, Backend::preferred(&deep.activation))?;
    let constants = estimate_chain_constants(&deep, &chain, mc_samples, stream)?;

    let mut totals = Vec::with_capacity(depths.len());
    for &depth in depths {
        let cfg = config_at(depth)?;
        let (_, total, _) = assemble(&cfg, &constants[..depth - 1]);
        totals.push((depth, total));
    }
    // settled when the last increment is negligible against the largest
    // total seen; a growing profile keeps increments on the scale of its max
    let bounded = match totals.len() {
        0 | 1 => false,
        n => {
            let (_, last) = totals[n - 1];
            let (_, prev) = totals[n - 2];
            let peak = totals
                .iter()
                .map(|&(_, t)| t.abs())
                .fold(f64::MIN_POSITIVE, f64::max);
            (last - prev).abs() < 1e-3 * peak
        }
    };
    Ok(DepthProfile {
        totals,
        constants,
        bounded,
    })
}

/// Vector distribution fed to the square-root concentration check.
#[derive(Debug, Clone)]
pub enum VectorSampler {
    /// X ~ 𝒩(0, K).
    Gaussian(KernelMatrix),
    /// X = σ(G) with G ~ 𝒩(0, K).
    ActGaussian(ActivationSpec, KernelMatrix),
    /// X ≡ v.
    Deterministic(DVector<f64>),
}

impl VectorSampler {
    fn dim(&self) -> usize {
        match self {
            VectorSampler::Gaussian(k) | VectorSampler::ActGaussian(_, k) => k.k,
            VectorSampler::Deterministic(v) => v.len(),
        }
    }

    /// Exact second moment M = E[XXᵀ].
    fn second_moment(&self) -> Result<DMatrix<f64>> {
        match self {
            VectorSampler::Gaussian(k) => Ok(k.values.clone()),
            VectorSampler::ActGaussian(act, k) => {
                let d = k.k;
                let backend = Backend::preferred(act);
                let mut m = DMatrix::zeros(d, d);
                for i in 0..d {
                    for j in i..d {
                        let mom = BivariateMoment::new(
                            k.values[(i, i)],
                            k.values[(i, j)],
                            k.values[(j, j)],
                        )?;
                        let e = kernel::gaussian_pair_expectation(&mom, act, backend)?;
                        m[(i, j)] = e;
                        m[(j, i)] = e;
                    }
                }
                Ok(m)
            }
            VectorSampler::Deterministic(v) => Ok(v * v.transpose()),
        }
    }

    /// E‖XXᵀ − M‖²_F: closed form for Gaussian and deterministic samplers,
    /// Monte Carlo otherwise.
    fn fourth_moment_gap(&self, m: &DMatrix<f64>, stream: &SeedStream) -> Result<f64> {
        match self {
            VectorSampler::Gaussian(k) => {
                // Wick: E[G_iG_jG_pG_q] gives Σ_ij (K_ii K_jj + K_ij²)
                let d = k.k;
                let mut s = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        s += k.values[(i, i)] * k.values[(j, j)]
                            + k.values[(i, j)] * k.values[(i, j)];
                    }
                }
                Ok(s)
            }
            VectorSampler::Deterministic(_) => Ok(0.0),
            VectorSampler::ActGaussian(..) => {
                const MC: usize = 200_000;
                let mut rng = stream.rng("fourth-moment", 0);
                let mut sum = 0.0;
                let d = self.dim();
                let mut x = DVector::zeros(d);
                let factor = self.factor()?;
                for _ in 0..MC {
                    self.draw_into(&mut x, factor.as_ref(), &mut rng);
                    let mut g = 0.0;
                    for i in 0..d {
                        for j in 0..d {
                            let dd = x[i] * x[j] - m[(i, j)];
                            g += dd * dd;
                        }
                    }
                    sum += g;
                }
                Ok(sum / MC as f64)
            }
        }
    }

    fn factor(&self) -> Result<Option<DMatrix<f64>>> {
        match self {
            VectorSampler::Gaussian(k) | VectorSampler::ActGaussian(_, k) => {
                Ok(Some(psd::sqrt_psd(&k.values)?))
            }
            VectorSampler::Deterministic(_) => Ok(None),
        }
    }

    fn draw_into(&self, x: &mut DVector<f64>, factor: Option<&DMatrix<f64>>, rng: &mut ChaCha12Rng) {
        match self {
            VectorSampler::Gaussian(_) => {
                let f = factor.expect("gaussian sampler has a factor");
                let z = DVector::from_fn(x.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                x.copy_from(&(f * z));
            }
            VectorSampler::ActGaussian(act, _) => {
                let f = factor.expect("gaussian sampler has a factor");
                let z = DVector::from_fn(x.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                let g = f * z;
                for (xi, gi) in x.iter_mut().zip(g.iter()) {
                    *xi = act.eval(*gi);
                }
            }
            VectorSampler::Deterministic(v) => x.copy_from(v),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LemmaCheck {
    /// Monte Carlo estimate of E‖√M_n − √M‖²_F.
    pub lhs: f64,
    pub lhs_stderr: f64,
    /// E‖XXᵀ − M‖²_F / (n · λ⁺(M)).
    pub rhs: f64,
    /// lhs ≤ rhs + 3·stderr(lhs).
    pub margin_ok: bool,
}

/// Checks the matrix square-root concentration inequality
/// E‖√M_n − √M‖²_F ≤ E‖XXᵀ − M‖²_F / (n λ⁺(M)) on a concrete sampler,
/// with M_n the empirical second moment of n draws.
pub fn lemma_sqrt_check(
    sampler: &VectorSampler,
    n: usize,
    mc_outer: usize,
    stream: &SeedStream,
) -> Result<LemmaCheck> {
    if n == 0 || mc_outer == 0 {
        return Err(Error::Config("lemma_sqrt_check needs n, mc_outer >= 1".into()));
    }
    let d = sampler.dim();
    let m = sampler.second_moment()?;
    let lambda = psd::lambda_plus(&m, psd::LAMBDA_PLUS_REL_TOL)?;
    let sqrt_m = psd::sqrt_psd(&m)?;
    let numerator = sampler.fourth_moment_gap(&m, stream)?;
    let rhs = numerator / (n as f64 * lambda);

    let factor = sampler.factor()?;
    let mut rng = stream.rng("lemma-outer", 0);
    let mut x = DVector::zeros(d);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..mc_outer {
        let mut mn = DMatrix::zeros(d, d);
        for _ in 0..n {
            sampler.draw_into(&mut x, factor.as_ref(), &mut rng);
            for i in 0..d {
                for j in 0..d {
                    mn[(i, j)] += x[i] * x[j];
                }
            }
        }
        mn /= n as f64;
        // empirical moments can carry rounding dust below the PSD cone
        let sqrt_mn = psd::sqrt_psd(&psd::symmetrize(&mn))?;
        let gap = psd::frobenius(&(sqrt_mn - &sqrt_m));
        let v = gap * gap;
        sum += v;
        sum_sq += v * v;
    }
    let mo = mc_outer as f64;
    let lhs = sum / mo;
    let var = (sum_sq / mo - lhs * lhs).max(0.0);
    let lhs_stderr = (var / mo).sqrt();
    // rounding guard for degenerate samplers where both sides are ~0:
    // eigensolver dust in the square roots is far below this scale
    let frob_m = psd::frobenius(&m);
    let dust = 1e-18 * (1.0 + frob_m * frob_m);
    Ok(LemmaCheck {
        lhs,
        lhs_stderr,
        rhs,
        margin_ok: lhs <= rhs + 3.0 * lhs_stderr + dust,
    })
}

/// Monte Carlo check that vec(W·A) with W_ij ~ 𝒩(0, c_w/n_ℓ) has covariance
/// Id_{n_next} ⊗ Ā, Ā = (c_w/n_ℓ)·AᵀA. Returns the largest entrywise
/// deviation in standard-error units (0 for the zero matrix).
pub fn wa_covariance_check(
    a: &DMatrix<f64>,
    c_w: f64,
    n_next: usize,
    mc_samples: usize,
    stream: &SeedStream,
) -> Result<f64> {
    if n_next == 0 || mc_samples < 2 {
        return Err(Error::Config(
            "wa_covariance_check needs n_next >= 1, mc_samples >= 2".into(),
        ));
    }
    if !(c_w.is_finite() && c_w > 0.0) {
        return Err(Error::Config(format!("c_w must be positive, got {c_w}")));
    }
    let n_l = a.nrows();
    let k = a.ncols();
    let dim = n_next * k;
    let a_bar = a.transpose() * a * (c_w / n_l as f64);
    let theory = psd::kron(&DMatrix::identity(n_next, n_next), &a_bar);

    let mut rng = stream.rng("wa-cov", 0);
    let sd = (c_w / n_l as f64).sqrt();
    let mut sum: DMatrix<f64> = DMatrix::zeros(dim, dim);
    let mut sum_sq: DMatrix<f64> = DMatrix::zeros(dim, dim);
    for _ in 0..mc_samples {
        let w = DMatrix::from_fn(n_next, n_l, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        let y = w * a; // vec(W·A) = (W ⊗ Id_k)·vec(A), both neuron-major
        let v = DVector::<f64>::from_fn(dim, |i, _| y[(i / k, i % k)]);
        for i in 0..dim {
            for j in 0..dim {
                let p = v[i] * v[j];
                sum[(i, j)] += p;
                sum_sq[(i, j)] += p * p;
            }
        }
    }
    let m = mc_samples as f64;
    let mut worst: f64 = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let mean = sum[(i, j)] / m;
            let var = (sum_sq[(i, j)] / m - mean * mean).max(0.0);
            let se = (var / m).sqrt();
            let diff = mean - theory[(i, j)];
            let dev = if se > 0.0 {
                (diff / se).abs()
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(dev);
        }
    }
    Ok(worst)
}
