//! Python bindings: thin wrappers over the core library.
//!
//! Matrices cross the boundary as nested lists of floats (row-major); every
//! randomized operation takes an explicit seed so results are reproducible
//! from Python exactly as from the CLI.

use nalgebra::DMatrix;
use nngp_verify::activation::ActivationSpec;
use nngp_verify::bound;
use nngp_verify::kernel::{self, Backend, KernelMatrix};
use nngp_verify::net::{self, InputSet, NetworkConfig};
use nngp_verify::psd;
use nngp_verify::rng::SeedStream;
use nngp_verify::samples::{OutputSampleSet, Provenance};
use nngp_verify::transport::{self, Method};
use nngp_verify::verify;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: nngp_verify::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(PyValueError::new_err(format!("{what} must be non-empty")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err(format!("{what} rows have unequal lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn to_lists(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn to_sample_set(rows: &[Vec<f64>], what: &str) -> PyResult<OutputSampleSet> {
    OutputSampleSet::new(to_matrix(rows, what)?, Provenance::External).map_err(err)
}

fn parse_method(name: &str) -> PyResult<Method> {
    Method::parse(name).map_err(err)
}

/// Fully connected network with i.i.d. Gaussian parameters, fixed inputs,
/// and uniform layer variances, plus its Gaussian-limit kernels.
#[pyclass]
struct Network {
    cfg: NetworkConfig,
    inputs: InputSet,
}

impl Network {
    fn chain(&self) -> PyResult<Vec<KernelMatrix>> {
        kernel::kernel_chain(
            &self.cfg,
            &self.inputs,
            Backend::preferred(&self.cfg.activation),
        )
        .map_err(err)
    }
}

#[pymethods]
impl Network {
    /// `points`: one input point per row (k rows of length n0).
    /// `widths`: [n0, hidden..., n_out]; `activation`: relu | identity | tanh.
    #[new]
    fn new(
        points: Vec<Vec<f64>>,
        widths: Vec<usize>,
        c_w: f64,
        c_b: f64,
        activation: &str,
    ) -> PyResult<Self> {
        let act = ActivationSpec::from_name(activation).map_err(err)?;
        let pts = to_matrix(&points, "points")?;
        if widths.first() != Some(&pts.ncols()) {
            return Err(PyValueError::new_err(format!(
                "widths[0] = {:?} must equal the input dimension {}",
                widths.first(),
                pts.ncols()
            )));
        }
        let depth = widths.len().saturating_sub(1);
        let cfg = NetworkConfig::new(widths, vec![(c_w, c_b); depth], act).map_err(err)?;
        let inputs = InputSet::new(pts.transpose()).map_err(err)?;
        Ok(Network { cfg, inputs })
    }

    /// Limit kernels K^(1..L) as k x k nested lists.
    fn kernel_chain(&self) -> PyResult<Vec<Vec<Vec<f64>>>> {
        Ok(self.chain()?.iter().map(|k| to_lists(&k.values)).collect())
    }

    /// Distance bound between the width-n network outputs and the limit:
    /// dict with total, stderr, terms, constants, config_hash.
    fn bound(&self, py: Python<'_>, mc_samples: usize, seed: u64) -> PyResult<Py<PyDict>> {
        let stream = SeedStream::new(seed);
        let breakdown = bound::rhs_bound(&self.cfg, &self.inputs, mc_samples, &stream)
            .map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("total", breakdown.total)?;
        d.set_item("stderr", breakdown.total_stderr)?;
        d.set_item("terms", breakdown.terms.clone())?;
        d.set_item(
            "constants",
            breakdown
                .constants
                .iter()
                .map(|c| (c.layer, c.value, c.stderr))
                .collect::<Vec<_>>(),
        )?;
        d.set_item("config_hash", breakdown.config_hash.clone())?;
        Ok(d.unbind())
    }

    /// n independent draws of the flattened final-layer output.
    fn sample_outputs(&self, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let stream = SeedStream::new(seed);
        let set = net::sample_outputs(&self.cfg, &self.inputs, n, &stream).map_err(err)?;
        Ok(to_lists(&set.rows))
    }

    /// n draws from the limit Gaussian with covariance Id ⊗ K^(L).
    fn limit_samples(&self, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let chain = self.chain()?;
        let k_last = chain.last().expect("chain is non-empty");
        let n_l = *self.cfg.widths.last().expect("widths are non-empty");
        let stream = SeedStream::new(seed);
        let set = transport::sample_limit_gaussian(k_last, n_l, n, &stream).map_err(err)?;
        Ok(to_lists(&set.rows))
    }

    /// Finite-sample bias of an estimator on two same-law limit samples:
    /// (mean, std) over `repeats` repetitions.
    fn null_calibration(
        &self,
        method: &str,
        n: usize,
        repeats: usize,
        seed: u64,
    ) -> PyResult<(f64, f64)> {
        let chain = self.chain()?;
        let k_last = chain.last().expect("chain is non-empty");
        let n_l = *self.cfg.widths.last().expect("widths are non-empty");
        let stream = SeedStream::new(seed);
        transport::null_calibration(k_last, n_l, n, parse_method(method)?, &stream, repeats)
            .map_err(err)
    }
}

/// Exact empirical W2 between two equally sized 1-D samples (value, stderr).
#[pyfunction]
fn w2_sorted_1d(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    let est = transport::w2_sorted_1d(&to_sample_set(&a, "a")?, &to_sample_set(&b, "b")?)
        .map_err(err)?;
    Ok((est.value, est.stderr))
}

/// Exact empirical W2 via the optimal assignment (value, stderr).
#[pyfunction]
fn w2_assignment(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    let est = transport::w2_assignment(&to_sample_set(&a, "a")?, &to_sample_set(&b, "b")?)
        .map_err(err)?;
    Ok((est.value, est.stderr))
}

/// W2 between centred Gaussians with the given covariance matrices.
#[pyfunction]
fn bures_w2(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    psd::bures_w2(&to_matrix(&a, "a")?, &to_matrix(&b, "b")?).map_err(err)
}

/// Square-root concentration constant for one kernel step (value, stderr).
#[pyfunction]
fn estimate_c(
    kernel_values: Vec<Vec<f64>>,
    activation: &str,
    c_w: f64,
    mc_samples: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let act = ActivationSpec::from_name(activation).map_err(err)?;
    let km = KernelMatrix::new(1, to_matrix(&kernel_values, "kernel")?, true).map_err(err)?;
    let mut rng = SeedStream::new(seed).rng("estimate-c", 0);
    bound::estimate_c(&km, &act, c_w, mc_samples, &mut rng).map_err(err)
}

/// Run the invariant campaign; returns (id, pass, margin) per check.
#[pyfunction]
fn run_verify(seed: u64) -> PyResult<Vec<(String, bool, f64)>> {
    let report = verify::verify_all(seed, None);
    Ok(report
        .checks
        .iter()
        .map(|c| (c.id.clone(), c.pass, c.margin))
        .collect())
}

#[pymodule]
fn nngp_verify_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_function(wrap_pyfunction!(w2_sorted_1d, m)?)?;
    m.add_function(wrap_pyfunction!(w2_assignment, m)?)?;
    m.add_function(wrap_pyfunction!(bures_w2, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_c, m)?)?;
    m.add_function(wrap_pyfunction!(run_verify, m)?)?;
    Ok(())
}
