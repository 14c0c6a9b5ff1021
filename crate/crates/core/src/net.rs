//! Fully connected architecture: Gaussian parameter sampling under the
//! per-layer variance convention and the layerwise forward pass on a finite
//! input set.
//!
//! Weight W^(ℓ) maps R^{n_ℓ} → R^{n_{ℓ+1}}, i.e. has shape n_{ℓ+1} × n_ℓ,
//! with i.i.d. 𝒩(0, c_w^(ℓ)/n_ℓ) entries; biases are i.i.d. 𝒩(0, c_b^(ℓ)).

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::samples::{OutputSampleSet, Provenance};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Cap on n_samples·n_L·k for sample_outputs (~268 MB of f64 rows).
pub const OUTPUT_ELEMENT_CAP: usize = 1 << 25;

#[derive(Debug, Clone)]
pub struct NetworkConfig {
    /// Layer sizes (n₀, …, n_L); depth L = widths.len() - 1 ≥ 1.
    pub widths: Vec<usize>,
    /// Per-layer (c_w^(ℓ), c_b^(ℓ)) for ℓ = 0, …, L-1.
    pub variances: Vec<(f64, f64)>,
    pub activation: ActivationSpec,
}

impl NetworkConfig {
    pub fn new(
        widths: Vec<usize>,
        variances: Vec<(f64, f64)>,
        activation: ActivationSpec,
    ) -> Result<Self> {
        let cfg = NetworkConfig {
            widths,
            variances,
            activation,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Config("need at least one layer (L >= 1)".into()));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("all widths must be >= 1".into()));
        }
        if self.variances.len() != self.depth() {
            return Err(Error::Config(format!(
                "expected {} variance pairs, got {}",
                self.depth(),
                self.variances.len()
            )));
        }
        for (ell, &(c_w, c_b)) in self.variances.iter().enumerate() {
            if !(c_w > 0.0 && c_w.is_finite()) {
                return Err(Error::Config(format!("c_w at layer {ell} must be > 0")));
            }
            if !(c_b >= 0.0 && c_b.is_finite()) {
                return Err(Error::Config(format!("c_b at layer {ell} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// k input points as the columns of an n₀ × k matrix.
#[derive(Debug, Clone)]
pub struct InputSet {
    pub points: DMatrix<f64>,
}

impl InputSet {
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        if points.ncols() == 0 || points.nrows() == 0 {
            return Err(Error::Config("input set must be non-empty".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite input entry".into()));
        }
        Ok(InputSet { points })
    }

    /// k points drawn uniformly on the unit sphere in R^{n₀}.
    pub fn unit_sphere(n0: usize, k: usize, rng: &mut impl Rng) -> Result<Self> {
        if n0 == 0 || k == 0 {
            return Err(Error::Config("need n0 >= 1 and k >= 1".into()));
        }
        let mut points = DMatrix::zeros(n0, k);
        for j in 0..k {
            loop {
                let v = DVector::from_fn(n0, |_, _| rng.sample::<f64, _>(StandardNormal));
                let norm = v.norm();
                if norm > 1e-8 {
                    points.set_column(j, &(v / norm));
                    break;
                }
            }
        }
        Ok(InputSet { points })
    }

    pub fn n0(&self) -> usize {
        self.points.nrows()
    }

    pub fn k(&self) -> usize {
        self.points.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct ParamDraw {
    /// W^(ℓ): n_{ℓ+1} × n_ℓ.
    pub weights: Vec<DMatrix<f64>>,
    /// b^(ℓ): n_{ℓ+1}.
    pub biases: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct LayerOutputs {
    /// f^(ℓ)[𝒳]: n_ℓ × k for ℓ = 1, …, L (index 0 holds f^(1)).
    pub layers: Vec<DMatrix<f64>>,
}

/// Draw all weights and biases. Streams are named per layer, so the draw
/// is independent of evaluation order. Matrices fill column-major.
pub fn sample_params(config: &NetworkConfig, stream: &SeedStream) -> Result<ParamDraw> {
    config.validate()?;
    let depth = config.depth();
    let mut weights = Vec::with_capacity(depth);
    let mut biases = Vec::with_capacity(depth);
    for ell in 0..depth {
        let (n_in, n_out) = (config.widths[ell], config.widths[ell + 1]);
        let (c_w, c_b) = config.variances[ell];
        let w_sd = (c_w / n_in as f64).sqrt();
        let b_sd = c_b.sqrt();
        let mut w_rng = stream.rng("weights", ell as u64);
        let w = DMatrix::from_iterator(
            n_out,
            n_in,
            (0..n_out * n_in).map(|_| w_sd * w_rng.sample::<f64, _>(StandardNormal)),
        );
        let mut b_rng = stream.rng("biases", ell as u64);
        let b = DVector::from_iterator(
            n_out,
            (0..n_out).map(|_| b_sd * b_rng.sample::<f64, _>(StandardNormal)),
        );
        weights.push(w);
        biases.push(b);
    }
    Ok(ParamDraw { weights, biases })
}

/// Layerwise forward pass; the activation applies componentwise between
/// affine layers, never after the last one.
pub fn forward(
    params: &ParamDraw,
    inputs: &InputSet,
    activation: &ActivationSpec,
) -> Result<LayerOutputs> {
    if params.weights.is_empty() {
        return Err(Error::Shape("parameter draw has no layers".into()));
    }
    if params.weights[0].ncols() != inputs.n0() {
        return Err(Error::Shape(format!(
            "first weight expects {} input rows, inputs have {}",
            params.weights[0].ncols(),
            inputs.n0()
        )));
    }
    let k = inputs.k();
    let mut layers = Vec::with_capacity(params.weights.len());
    let mut current = inputs.points.clone();
    for (ell, (w, b)) in params.weights.iter().zip(params.biases.iter()).enumerate() {
        if ell > 0 {
            current.apply(|z| *z = activation.eval(*z));
        }
        if w.ncols() != current.nrows() || w.nrows() != b.len() {
            return Err(Error::Shape(format!("layer {ell} shape mismatch")));
        }
        let mut next = w * &current;
        for j in 0..k {
            next.column_mut(j).iter_mut().zip(b.iter()).for_each(|(x, &bi)| *x += bi);
        }
        layers.push(next.clone());
        current = next;
    }
    Ok(LayerOutputs { layers })
}

/// Flatten f^(L)[𝒳] (n_L × k) into a length n_L·k row: output-neuron-major,
/// input-minor, i.e. entry i·k + j is neuron i at input j.
pub fn flatten_output(last: &DMatrix<f64>) -> Vec<f64> {
    let (n_l, k) = last.shape();
    let mut row = Vec::with_capacity(n_l * k);
    for i in 0..n_l {
        for j in 0..k {
            row.push(last[(i, j)]);
        }
    }
    row
}

/// N independent draws of the flattened final-layer output.
pub fn sample_outputs(
    config: &NetworkConfig,
    inputs: &InputSet,
    n_samples: usize,
    stream: &SeedStream,
) -> Result<OutputSampleSet> {
    config.validate()?;
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be >= 1".into()));
    }
    let n_l = *config.widths.last().unwrap();
    let k = inputs.k();
    let dim = n_l * k;
    if n_samples.saturating_mul(dim) > OUTPUT_ELEMENT_CAP {
        return Err(Error::ResourceLimit(format!(
            "n_samples*n_L*k = {} exceeds cap {OUTPUT_ELEMENT_CAP}",
            n_samples * dim
        )));
    }
    let mut rows = DMatrix::zeros(n_samples, dim);
    for r in 0..n_samples {
        let sub = stream.substream("replicate", r as u64);
        let params = sample_params(config, &sub)?;
        let outputs = forward(&params, inputs, &config.activation)?;
        let flat = flatten_output(outputs.layers.last().unwrap());
        for (j, v) in flat.into_iter().enumerate() {
            rows[(r, j)] = v;
        }
    }
    OutputSampleSet::new(rows, Provenance::Network)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_layer_params(w: DMatrix<f64>, b: DVector<f64>) -> ParamDraw {
        ParamDraw {
            weights: vec![w],
            biases: vec![b],
        }
    }

    #[test]
    fn forward_single_affine_layer() {
        let params = single_layer_params(
            DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            DVector::from_vec(vec![3.0]),
        );
        let inputs = InputSet::new(DMatrix::from_column_slice(2, 1, &[1.0, 1.0])).unwrap();
        let out = forward(&params, &inputs, &ActivationSpec::relu()).unwrap();
        assert_abs_diff_eq!(out.layers[0][(0, 0)], 6.0, epsilon = 1e-15);
    }

    #[test]
    fn identity_network_composes_linearly() {
        let w0 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let w1 = DMatrix::from_row_slice(1, 2, &[0.5, -1.0]);
        let params = ParamDraw {
            weights: vec![w0.clone(), w1.clone()],
            biases: vec![DVector::zeros(2), DVector::zeros(1)],
        };
        let x = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.3, 0.7]);
        let inputs = InputSet::new(x.clone()).unwrap();
        let out = forward(&params, &inputs, &ActivationSpec::identity()).unwrap();
        let expect = &w1 * &w0 * &x;
        assert!(crate::psd::frobenius(&(out.layers[1].clone() - expect)) < 1e-12);
    }

    #[test]
    fn relu_kills_negative_preactivation() {
        let params = ParamDraw {
            weights: vec![
                DMatrix::from_row_slice(1, 1, &[-1.0]),
                DMatrix::from_row_slice(1, 1, &[5.0]),
            ],
            biases: vec![DVector::zeros(1), DVector::from_vec(vec![7.0])],
        };
        let inputs = InputSet::new(DMatrix::from_column_slice(1, 1, &[2.0])).unwrap();
        let out = forward(&params, &inputs, &ActivationSpec::relu()).unwrap();
        assert_abs_diff_eq!(out.layers[1][(0, 0)], 7.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_bias_variance_gives_exactly_zero_biases() {
        let config = NetworkConfig::new(
            vec![2, 4, 1],
            vec![(1.0, 0.0), (1.0, 0.0)],
            ActivationSpec::relu(),
        )
        .unwrap();
        let draw = sample_params(&config, &SeedStream::new(5)).unwrap();
        for b in &draw.biases {
            assert!(b.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identical_seeds_are_bitwise_identical() {
        let config = NetworkConfig::new(
            vec![2, 8, 3],
            vec![(1.0, 0.5), (2.0, 0.1)],
            ActivationSpec::tanh(),
        )
        .unwrap();
        let a = sample_params(&config, &SeedStream::new(9)).unwrap();
        let b = sample_params(&config, &SeedStream::new(9)).unwrap();
        for (wa, wb) in a.weights.iter().zip(b.weights.iter()) {
            assert_eq!(wa.as_slice(), wb.as_slice());
        }
        for (ba, bb) in a.biases.iter().zip(b.biases.iter()) {
            assert_eq!(ba.as_slice(), bb.as_slice());
        }
    }

    #[test]
    fn weight_sample_variance_matches_convention() {
        // n = (2, 1000), c_w = 1: entry variance 1/2... checked loosely via
        // the 2000-entry sample; and n = (1000, 2) for the 1/n scaling
        let config = NetworkConfig::new(
            vec![1000, 2000],
            vec![(1.0, 0.0)],
            ActivationSpec::identity(),
        )
        .unwrap();
        let draw = sample_params(&config, &SeedStream::new(31)).unwrap();
        let w = &draw.weights[0];
        let n = (w.nrows() * w.ncols()) as f64;
        let var = w.iter().map(|&x| x * x).sum::<f64>() / n;
        let expect = 1.0 / 1000.0;
        assert!(
            (var - expect).abs() <= 0.15 * expect,
            "sample variance {var} vs {expect}"
        );
    }

    #[test]
    fn sample_outputs_consistent_with_forward() {
        let config = NetworkConfig::new(
            vec![2, 4, 3],
            vec![(1.0, 0.5), (1.5, 0.2)],
            ActivationSpec::relu(),
        )
        .unwrap();
        let inputs = InputSet::new(DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let stream = SeedStream::new(77);
        let set = sample_outputs(&config, &inputs, 3, &stream).unwrap();
        assert_eq!(set.n_samples(), 3);
        assert_eq!(set.dim(), 6);
        // row 0 must equal a direct forward pass under the replicate-0 stream
        let params = sample_params(&config, &stream.substream("replicate", 0)).unwrap();
        let direct = flatten_output(forward(&params, &inputs, &config.activation).unwrap().layers.last().unwrap());
        for j in 0..6 {
            assert_abs_diff_eq!(set.rows[(0, j)], direct[j], epsilon = 1e-15);
        }
    }

    #[test]
    fn output_variance_of_pure_bias_network() {
        // L=1, x=0, c_b=1: the output is the bias, a standard Gaussian
        let config = NetworkConfig::new(vec![1, 1], vec![(1.0, 1.0)], ActivationSpec::relu()).unwrap();
        let inputs = InputSet::new(DMatrix::from_column_slice(1, 1, &[0.0])).unwrap();
        let n = 10_000usize;
        let set = sample_outputs(&config, &inputs, n, &SeedStream::new(13)).unwrap();
        let var = set.rows.column(0).iter().map(|&x| x * x).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() <= 5.0 / (n as f64).sqrt() * 2.0, "var {var}");
    }

    #[test]
    fn disjoint_streams_are_uncorrelated() {
        let config = NetworkConfig::new(vec![1, 1], vec![(1.0, 1.0)], ActivationSpec::relu()).unwrap();
        let inputs = InputSet::new(DMatrix::from_column_slice(1, 1, &[0.0])).unwrap();
        let n = 10_000usize;
        let a = sample_outputs(&config, &inputs, n, &SeedStream::new(1)).unwrap();
        let b = sample_outputs(&config, &inputs, n, &SeedStream::new(2)).unwrap();
        let corr: f64 = a
            .rows
            .column(0)
            .iter()
            .zip(b.rows.column(0).iter())
            .map(|(&x, &y)| x * y)
            .sum::<f64>()
            / n as f64;
        assert!(corr.abs() <= 4.0 / (n as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn lipschitz_propagation_bound() {
        let config = NetworkConfig::new(
            vec![3, 6, 6, 2],
            vec![(1.2, 0.4); 3],
            ActivationSpec::relu(),
        )
        .unwrap();
        let stream = SeedStream::new(41);
        let params = sample_params(&config, &stream).unwrap();
        let mut rng = stream.rng("inputs", 0);
        for _ in 0..20 {
            let x = DMatrix::from_fn(3, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = DMatrix::from_fn(3, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let fx = forward(&params, &InputSet::new(x.clone()).unwrap(), &config.activation).unwrap();
            let fy = forward(&params, &InputSet::new(y.clone()).unwrap(), &config.activation).unwrap();
            let op_product: f64 = params
                .weights
                .iter()
                .map(|w| w.clone().svd(false, false).singular_values[0])
                .product();
            for ell in 0..3 {
                let diff = crate::psd::frobenius(&(fx.layers[ell].clone() - fy.layers[ell].clone()));
                let lip_pow = config.activation.lipschitz.powi(ell as i32);
                let bound = op_product * lip_pow * crate::psd::frobenius(&(x.clone() - y.clone()));
                assert!(diff <= bound * (1.0 + 1e-10), "layer {ell}: {diff} > {bound}");
            }
        }
    }

    #[test]
    fn resource_cap_enforced() {
        let config = NetworkConfig::new(vec![1, 1], vec![(1.0, 1.0)], ActivationSpec::relu()).unwrap();
        let inputs = InputSet::new(DMatrix::from_column_slice(1, 1, &[0.0])).unwrap();
        let err = sample_outputs(&config, &inputs, OUTPUT_ELEMENT_CAP + 1, &SeedStream::new(0));
        assert!(matches!(err, Err(Error::ResourceLimit(_))));
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::new(vec![2], vec![], ActivationSpec::relu()).is_err());
        assert!(NetworkConfig::new(vec![2, 2], vec![(0.0, 0.0)], ActivationSpec::relu()).is_err());
        assert!(NetworkConfig::new(vec![2, 2], vec![(1.0, -0.1)], ActivationSpec::relu()).is_err());
        assert!(
            NetworkConfig::new(vec![2, 2], vec![(1.0, 0.0), (1.0, 0.0)], ActivationSpec::relu())
                .is_err()
        );
    }
}
