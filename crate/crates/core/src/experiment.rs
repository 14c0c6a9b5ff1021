//! Experiment configs, sweep drivers and CSV output.
//!
//! A config is a flat TOML file with an explicit `schema_version`. The same
//! config feeds the width sweep (`widths` axis) and the depth profile
//! (`depths` axis). Rows are appended and flushed one at a time so an
//! interrupted run keeps everything computed so far; a run that dies on a
//! cell writes a final marker row whose status records the error.
//!
//! Reproducibility contract: every random quantity derives from
//! `master_seed` through labeled substreams. Kernel matrices and bound
//! constants never depend on the replicate index; changing only the
//! replicate changes only the sampled networks and their Gaussian
//! comparators. Reruns of the same config produce byte-identical CSV bodies
//! except for the wall-clock duration column.

use crate::bound::{self, BoundBreakdown};
use crate::error::{Error, Result};
use crate::kernel::{self, Backend, KernelMatrix};
use crate::net::{self, InputSet, NetworkConfig};
use crate::rng::SeedStream;
use crate::transport::{self, Method, W2Estimate};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Environment variable that overrides `output_dir` from the config.
pub const OUTPUT_DIR_ENV: &str = "NNGP_VERIFY_OUTPUT_DIR";

pub const SCHEMA_VERSION: u32 = 1;

/// Smallest admissible sample count for any estimator or Monte Carlo loop.
pub const MIN_SAMPLES: usize = 100;

fn default_input_mode() -> String {
    "sphere".into()
}

fn default_null_repeats() -> usize {
    20
}

fn default_seeds() -> usize {
    5
}

fn default_output_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,

    // architecture: widths are [n0, w, ..., w, n_out] at each sweep width w
    pub depth: usize,
    pub n0: usize,
    pub n_out: usize,
    pub activation: String,
    pub c_w: f64,
    pub c_b: f64,

    // inputs: k points, either sampled on the unit sphere or given inline
    pub k: usize,
    #[serde(default = "default_input_mode")]
    pub input_mode: String,
    #[serde(default)]
    pub input_seed: u64,
    /// Inline mode: one array of length n0 per input point.
    #[serde(default)]
    pub inline_points: Vec<Vec<f64>>,

    // sweep axes
    #[serde(default)]
    pub widths: Vec<usize>,
    #[serde(default)]
    pub depths: Vec<usize>,

    /// Estimator selection; may be empty for bound-only runs.
    #[serde(default)]
    pub estimators: Vec<String>,

    // sample sizes
    pub n_network: usize,
    /// 0 means "same as n_network".
    #[serde(default)]
    pub n_gaussian: usize,
    pub mc_samples: usize,
    #[serde(default = "default_null_repeats")]
    pub null_repeats: usize,
    #[serde(default = "default_seeds")]
    pub seeds: usize,

    pub master_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.depth < 1 {
            return Err(Error::Config("depth must be >= 1".into()));
        }
        if self.n0 < 1 || self.n_out < 1 || self.k < 1 {
            return Err(Error::Config("n0, n_out and k must be >= 1".into()));
        }
        crate::activation::ActivationSpec::from_name(&self.activation)?;
        if !(self.c_w.is_finite() && self.c_w > 0.0) {
            return Err(Error::Config(format!("c_w must be positive, got {}", self.c_w)));
        }
        if !(self.c_b.is_finite() && self.c_b >= 0.0) {
            return Err(Error::Config(format!("c_b must be >= 0, got {}", self.c_b)));
        }
        match self.input_mode.as_str() {
            "sphere" => {}
            "inline" => {
                if self.inline_points.len() != self.k {
                    return Err(Error::Config(format!(
                        "inline_points has {} points, config says k = {}",
                        self.inline_points.len(),
                        self.k
                    )));
                }
                if self.inline_points.iter().any(|p| p.len() != self.n0) {
                    return Err(Error::Config(format!(
                        "every inline point must have n0 = {} coordinates",
                        self.n0
                    )));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "input_mode must be \"sphere\" or \"inline\", got {other:?}"
                )));
            }
        }
        for (name, v) in [
            ("n_network", self.n_network),
            ("mc_samples", self.mc_samples),
        ] {
            if v < MIN_SAMPLES {
                return Err(Error::Config(format!(
                    "{name} = {v} is below the minimum of {MIN_SAMPLES}"
                )));
            }
        }
        if self.n_gaussian != 0 && self.n_gaussian < MIN_SAMPLES {
            return Err(Error::Config(format!(
                "n_gaussian = {} is below the minimum of {MIN_SAMPLES}",
                self.n_gaussian
            )));
        }
        if self.null_repeats < 1 {
            return Err(Error::Config("null_repeats must be >= 1".into()));
        }
        if self.seeds < 1 {
            return Err(Error::Config("seeds must be >= 1".into()));
        }
        for m in &self.estimators {
            Method::parse(m)?;
        }
        if self.widths.iter().chain(self.depths.iter()).any(|&v| v < 1) {
            return Err(Error::Config("widths and depths entries must be >= 1".into()));
        }
        Ok(())
    }

    pub fn n_gaussian(&self) -> usize {
        if self.n_gaussian == 0 {
            self.n_network
        } else {
            self.n_gaussian
        }
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        self.estimators.iter().map(|m| Method::parse(m)).collect()
    }

    /// Output dimension of the flattened network output.
    pub fn output_dim(&self) -> usize {
        self.n_out * self.k
    }

    /// Architecture at a given hidden width and depth.
    pub fn network_at_depth(&self, width: usize, depth: usize) -> Result<NetworkConfig> {
        let mut widths = Vec::with_capacity(depth + 1);
        widths.push(self.n0);
        widths.extend(std::iter::repeat(width).take(depth.saturating_sub(1)));
        widths.push(self.n_out);
        NetworkConfig::new(
            widths,
            vec![(self.c_w, self.c_b); depth],
            crate::activation::ActivationSpec::from_name(&self.activation)?,
        )
    }

    pub fn network_at(&self, width: usize) -> Result<NetworkConfig> {
        self.network_at_depth(width, self.depth)
    }

    /// Input points, frozen by `input_seed` in sphere mode.
    pub fn inputs(&self) -> Result<InputSet> {
        match self.input_mode.as_str() {
            "sphere" => {
                let mut rng = SeedStream::new(self.input_seed).rng("inputs", 0);
                InputSet::unit_sphere(self.n0, self.k, &mut rng)
            }
            "inline" => {
                let mut m = nalgebra::DMatrix::zeros(self.n0, self.k);
                for (j, p) in self.inline_points.iter().enumerate() {
                    for (i, &v) in p.iter().enumerate() {
                        m[(i, j)] = v;
                    }
                }
                InputSet::new(m)
            }
            _ => unreachable!("validated"),
        }
    }

    /// Output directory, after the environment override.
    pub fn resolve_output_dir(&self) -> PathBuf {
        match std::env::var(OUTPUT_DIR_ENV) {
            Ok(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => PathBuf::from(&self.output_dir),
        }
    }
}

/// Per-estimator cells of one result row.
#[derive(Debug, Clone)]
pub struct MethodCells {
    pub method: Method,
    pub raw: f64,
    pub stderr: f64,
    pub null_mean: f64,
    pub null_std: f64,
    /// max(raw − null_mean, 0): the bias-corrected distance.
    pub corrected: f64,
    pub n_used: usize,
}

#[derive(Debug, Clone)]
pub struct ResultRow {
    pub config_hash: String,
    pub depth: usize,
    pub width: usize,
    pub replicate: usize,
    pub estimates: Vec<MethodCells>,
    pub bound_total: f64,
    pub bound_stderr: f64,
    pub bound_terms: Vec<f64>,
    pub duration_s: f64,
    pub status: String,
}

#[derive(Debug)]
pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    pub csv_path: PathBuf,
}

/// 17 significant digits: round-trips every f64 exactly.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_header(methods: &[Method]) -> Vec<String> {
    let mut h = vec![
        "config_hash".to_string(),
        "depth".to_string(),
        "width".to_string(),
        "replicate".to_string(),
    ];
    for m in methods {
        let n = m.name();
        for suffix in ["raw", "stderr", "null_mean", "null_std", "corrected", "n_used"] {
            h.push(format!("{n}_{suffix}"));
        }
    }
    h.extend(
        ["bound_total", "bound_stderr", "bound_terms", "duration_s", "status"]
            .map(String::from),
    );
    h
}

fn row_record(row: &ResultRow) -> Vec<String> {
    let mut r = vec![
        row.config_hash.clone(),
        row.depth.to_string(),
        row.width.to_string(),
        row.replicate.to_string(),
    ];
    for c in &row.estimates {
        r.push(fmt_float(c.raw));
        r.push(fmt_float(c.stderr));
        r.push(fmt_float(c.null_mean));
        r.push(fmt_float(c.null_std));
        r.push(fmt_float(c.corrected));
        r.push(c.n_used.to_string());
    }
    r.push(fmt_float(row.bound_total));
    r.push(fmt_float(row.bound_stderr));
    r.push(
        row.bound_terms
            .iter()
            .map(|&t| fmt_float(t))
            .collect::<Vec<_>>()
            .join(";"),
    );
    r.push(format!("{:.3}", row.duration_s));
    r.push(row.status.clone());
    r
}

struct CsvSink {
    writer: csv::Writer<fs::File>,
    n_cols: usize,
}

impl CsvSink {
    fn create(path: &Path, methods: &[Method]) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = fs::File::create(path)?;
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(file);
        let header = csv_header(methods);
        let n_cols = header.len();
        writer.write_record(&header)?;
        writer.flush()?;
        Ok(CsvSink { writer, n_cols })
    }

    fn write_row(&mut self, row: &ResultRow) -> Result<()> {
        self.writer.write_record(row_record(row))?;
        self.writer.flush()?;
        Ok(())
    }

    /// Final marker row after a failed cell: empty data cells, the error in
    /// the status column.
    fn write_truncation(&mut self, err: &Error) -> Result<()> {
        let mut record = vec![String::new(); self.n_cols];
        record[self.n_cols - 1] = format!("truncated: {err}");
        self.writer.write_record(&record)?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Null-estimator baselines per method, shared by all replicates.
fn null_baselines(
    cfg: &ExperimentConfig,
    methods: &[Method],
    k_out: &KernelMatrix,
    label_index: u64,
    master: &SeedStream,
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(methods.len());
    for (mi, &m) in methods.iter().enumerate() {
        let stream = master
            .substream("null-cal", label_index)
            .substream("method", mi as u64);
        out.push(transport::null_calibration(
            k_out,
            cfg.n_out,
            cfg.n_gaussian(),
            m,
            &stream,
            cfg.null_repeats,
        )?);
    }
    Ok(out)
}

fn estimate_for_method(
    method: Method,
    network_sample: &crate::samples::OutputSampleSet,
    gaussian_sample: &crate::samples::OutputSampleSet,
    k_out: &KernelMatrix,
    n_out: usize,
) -> Result<W2Estimate> {
    match method {
        Method::Assignment => transport::w2_assignment(network_sample, gaussian_sample),
        Method::Sorted1d => transport::w2_sorted_1d(network_sample, gaussian_sample),
        Method::GaussianPlugin => transport::w2_gaussian_plugin(network_sample, k_out, n_out),
    }
}

/// One sampled cell: network draw, Gaussian comparator, every estimator.
#[allow(clippy::too_many_arguments)]
fn run_cell(
    cfg: &ExperimentConfig,
    network: &NetworkConfig,
    inputs: &InputSet,
    methods: &[Method],
    nulls: &[(f64, f64)],
    k_out: &KernelMatrix,
    bound: &BoundBreakdown,
    width: usize,
    replicate: usize,
    master: &SeedStream,
) -> Result<ResultRow> {
    let start = Instant::now();
    let cell = master
        .substream("width", width as u64)
        .substream("depth", network.depth() as u64);
    let network_sample = net::sample_outputs(
        network,
        inputs,
        cfg.n_network,
        &cell.substream("net", replicate as u64),
    )?;
    let gaussian_sample = transport::sample_limit_gaussian(
        k_out,
        cfg.n_out,
        cfg.n_gaussian(),
        &cell.substream("gauss", replicate as u64),
    )?;
    let mut estimates = Vec::with_capacity(methods.len());
    for (mi, &m) in methods.iter().enumerate() {
        let est = estimate_for_method(m, &network_sample, &gaussian_sample, k_out, cfg.n_out)?;
        let (null_mean, null_std) = nulls[mi];
        estimates.push(MethodCells {
            method: m,
            raw: est.value,
            stderr: est.stderr,
            null_mean,
            null_std,
            corrected: (est.value - null_mean).max(0.0),
            n_used: est.n_used,
        });
    }
    Ok(ResultRow {
        config_hash: bound.config_hash.clone(),
        depth: network.depth(),
        width,
        replicate,
        estimates,
        bound_total: bound.total,
        bound_stderr: bound.total_stderr,
        bound_terms: bound.terms.clone(),
        duration_s: start.elapsed().as_secs_f64(),
        status: "ok".into(),
    })
}

fn validate_methods_for_dim(methods: &[Method], dim: usize) -> Result<()> {
    if methods.contains(&Method::Sorted1d) && dim != 1 {
        return Err(Error::Config(format!(
            "sorted_1d needs n_out·k = 1, config has {dim}"
        )));
    }
    Ok(())
}

/// Width sweep: for each width and replicate, sampled W2 estimates against
/// the limit Gaussian plus the bound. Kernels, null baselines and bound
/// constants are width- and replicate-independent and computed once.
pub fn run_width_sweep(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    if cfg.widths.is_empty() {
        return Err(Error::Config("width sweep needs a non-empty widths list".into()));
    }
    let methods = cfg.methods()?;
    validate_methods_for_dim(&methods, cfg.output_dim())?;
    if methods.contains(&Method::Assignment) && cfg.n_gaussian() != cfg.n_network {
        return Err(Error::Config(
            "assignment estimator needs n_gaussian = n_network".into(),
        ));
    }
    let inputs = cfg.inputs()?;
    let master = SeedStream::new(cfg.master_seed);

    // kernel values do not depend on widths; any width gives the chain
    let probe_net = cfg.network_at(cfg.widths[0])?;
    let backend = Backend::preferred(&probe_net.activation);
    let chain = kernel::kernel_chain(&probe_net, &inputs, backend)?;
    let k_out = chain.last().expect("depth >= 1").clone();

    let nulls = null_baselines(cfg, &methods, &k_out, 0, &master)?;

    let out_dir = cfg.resolve_output_dir();
    let csv_path = out_dir.join("sweep.csv");
    let mut sink = CsvSink::create(&csv_path, &methods)?;

    let mut rows = Vec::new();
    for &w in &cfg.widths {
        let network = cfg.network_at(w)?;
        let bound = bound::rhs_bound(&network, &inputs, cfg.mc_samples, &master)?;
        for r in 0..cfg.seeds {
            match run_cell(
                cfg, &network, &inputs, &methods, &nulls, &k_out, &bound, w, r, &master,
            ) {
                Ok(row) => {
                    sink.write_row(&row)?;
                    rows.push(row);
                }
                Err(e) => {
                    sink.write_truncation(&e)?;
                    return Err(e);
                }
            }
        }
    }
    Ok(SweepOutput { rows, csv_path })
}

/// Depth profile: bound totals across `depths` at the first sweep width,
/// with estimator cells only when estimators are selected.
pub fn run_depth_profile(cfg: &ExperimentConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    if cfg.depths.is_empty() {
        return Err(Error::Config("depth profile needs a non-empty depths list".into()));
    }
    if cfg.widths.is_empty() {
        return Err(Error::Config(
            "depth profile needs one width (first entry of widths)".into(),
        ));
    }
    let methods = cfg.methods()?;
    validate_methods_for_dim(&methods, cfg.output_dim())?;
    let width = cfg.widths[0];
    let inputs = cfg.inputs()?;
    let master = SeedStream::new(cfg.master_seed);

    let template = cfg.network_at_depth(width, 2)?;
    let profile = bound::deep_limit_profile(&template, &inputs, &cfg.depths, cfg.mc_samples, &master)?;

    // one kernel chain to the deepest architecture serves every depth
    let max_depth = *cfg.depths.iter().max().expect("non-empty");
    let deep_net = cfg.network_at_depth(width, max_depth)?;
    let backend = Backend::preferred(&deep_net.activation);
    let chain = kernel::kernel_chain(&deep_net, &inputs, backend)?;

    let out_dir = cfg.resolve_output_dir();
    let csv_path = out_dir.join("depth.csv");
    let mut sink = CsvSink::create(&csv_path, &methods)?;

    let mut rows = Vec::new();
    for (di, &depth) in cfg.depths.iter().enumerate() {
        let network = cfg.network_at_depth(width, depth)?;
        let bound = bound::rhs_bound(&network, &inputs, cfg.mc_samples, &master)?;
        debug_assert!((bound.total - profile.totals[di].1).abs() <= 1e-12 * bound.total.abs().max(1.0));
        if methods.is_empty() {
            let row = ResultRow {
                config_hash: bound.config_hash.clone(),
                depth,
                width,
                replicate: 0,
                estimates: Vec::new(),
                bound_total: bound.total,
                bound_stderr: bound.total_stderr,
                bound_terms: bound.terms.clone(),
                duration_s: 0.0,
                status: "ok".into(),
            };
            sink.write_row(&row)?;
            rows.push(row);
            continue;
        }
        let k_out = chain[depth - 1].clone();
        let nulls = null_baselines(cfg, &methods, &k_out, depth as u64, &master)?;
        for r in 0..cfg.seeds {
            match run_cell(
                cfg, &network, &inputs, &methods, &nulls, &k_out, &bound, width, r, &master,
            ) {
                Ok(mut row) => {
                    row.depth = depth;
                    sink.write_row(&row)?;
                    rows.push(row);
                }
                Err(e) => {
                    sink.write_truncation(&e)?;
                    return Err(e);
                }
            }
        }
    }
    Ok(SweepOutput { rows, csv_path })
}

/// Reads a results CSV back as (header, records). Used by the plot command
/// and by tests; tolerant of extra columns.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let header = reader
        .headers()?
        .iter()
        .map(String::from)
        .collect::<Vec<_>>();
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        records.push(rec.iter().map(String::from).collect());
    }
    Ok((header, records))
}

/// Strips the wall-clock column so reruns can be compared byte-for-byte.
pub fn strip_duration_column(header: &[String], records: &[Vec<String>]) -> String {
    let keep: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.as_str() != "duration_s")
        .map(|(i, _)| i)
        .collect();
    let mut out = String::new();
    let select = |row: &[String]| {
        keep.iter()
            .map(|&i| row.get(i).cloned().unwrap_or_default())
            .collect::<Vec<_>>()
            .join(",")
    };
    out.push_str(&select(header));
    out.push('\n');
    for rec in records {
        out.push_str(&select(rec));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn small_config(out_dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            schema_version: 1,
            depth: 2,
            n0: 2,
            n_out: 1,
            activation: "relu".into(),
            c_w: 1.0,
            c_b: 1.0,
            k: 1,
            input_mode: "sphere".into(),
            input_seed: 7,
            inline_points: Vec::new(),
            widths: vec![4, 8],
            depths: Vec::new(),
            estimators: vec!["sorted_1d".into()],
            n_network: 128,
            n_gaussian: 0,
            mc_samples: 400,
            null_repeats: 2,
            seeds: 2,
            master_seed: 1,
            output_dir: out_dir.to_string_lossy().into_owned(),
        }
    }

    #[test]
    fn toml_roundtrip_and_validation() {
        let text = r#"
schema_version = 1
depth = 2
n0 = 2
n_out = 1
activation = "relu"
c_w = 1.0
c_b = 1.0
k = 1
widths = [16, 64]
estimators = ["sorted_1d"]
n_network = 256
mc_samples = 1000
master_seed = 42
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.seeds, 5);
        assert_eq!(cfg.null_repeats, 20);
        assert_eq!(cfg.n_gaussian(), 256);
        assert_eq!(cfg.output_dir, "out");

        // unknown keys are config errors, not silent ignores
        let bad = format!("{text}\ntypo_key = 3\n");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());

        // wrong schema version is rejected
        let wrong = text.replace("schema_version = 1", "schema_version = 2");
        assert!(ExperimentConfig::from_toml_str(&wrong).is_err());

        // sample sizes below the floor are rejected
        let tiny = text.replace("n_network = 256", "n_network = 50");
        assert!(ExperimentConfig::from_toml_str(&tiny).is_err());
    }

    #[test]
    fn inline_points_shape_checked() {
        let dir = TempDir::new().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.input_mode = "inline".into();
        cfg.inline_points = vec![vec![1.0, 0.0]];
        cfg.validate().unwrap();
        let inputs = cfg.inputs().unwrap();
        assert_eq!(inputs.points[(0, 0)], 1.0);
        assert_eq!(inputs.points[(1, 0)], 0.0);

        cfg.inline_points = vec![vec![1.0]];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sweep_writes_rows_and_is_deterministic() {
        let dir = TempDir::new().unwrap();
        let cfg = small_config(dir.path());
        let out1 = run_width_sweep(&cfg).unwrap();
        assert_eq!(out1.rows.len(), 4);
        assert!(out1.csv_path.exists());
        for row in &out1.rows {
            assert_eq!(row.status, "ok");
            let c = &row.estimates[0];
            let want = (c.raw - c.null_mean).max(0.0);
            assert_eq!(c.corrected, want);
            assert!(row.bound_total > 0.0);
        }
        // widths differ only in sampled networks and bound weights
        assert_ne!(out1.rows[0].config_hash, out1.rows[2].config_hash);
        assert_eq!(out1.rows[0].config_hash, out1.rows[1].config_hash);

        let (h1, r1) = read_csv(&out1.csv_path).unwrap();
        let body1 = strip_duration_column(&h1, &r1);
        let out2 = run_width_sweep(&cfg).unwrap();
        let (h2, r2) = read_csv(&out2.csv_path).unwrap();
        let body2 = strip_duration_column(&h2, &r2);
        assert_eq!(body1, body2);
    }

    #[test]
    fn replicate_changes_samples_not_infrastructure() {
        let dir = TempDir::new().unwrap();
        let cfg = small_config(dir.path());
        let out = run_width_sweep(&cfg).unwrap();
        let a = &out.rows[0];
        let b = &out.rows[1];
        assert_eq!(a.width, b.width);
        assert_ne!(a.estimates[0].raw, b.estimates[0].raw);
        assert_eq!(a.estimates[0].null_mean, b.estimates[0].null_mean);
        assert_eq!(a.bound_total, b.bound_total);
    }

    #[test]
    fn depth_profile_bound_only() {
        let dir = TempDir::new().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.estimators = Vec::new();
        cfg.widths = vec![8];
        cfg.depths = vec![2, 3, 4];
        let out = run_depth_profile(&cfg).unwrap();
        assert_eq!(out.rows.len(), 3);
        assert!(out.rows.iter().all(|r| r.estimates.is_empty()));
        let (header, _) = read_csv(&out.csv_path).unwrap();
        assert!(!header.iter().any(|h| h.contains("raw")));
        // relu with c_b > 0 keeps accumulating mass: totals increase
        assert!(out.rows[1].bound_total > out.rows[0].bound_total);
    }

    #[test]
    fn env_var_overrides_output_dir() {
        let dir = TempDir::new().unwrap();
        let override_dir = dir.path().join("elsewhere");
        let cfg = small_config(&dir.path().join("ignored"));
        std::env::set_var(OUTPUT_DIR_ENV, &override_dir);
        let out = run_width_sweep(&cfg);
        std::env::remove_var(OUTPUT_DIR_ENV);
        let out = out.unwrap();
        assert!(out.csv_path.starts_with(&override_dir));
        assert!(out.csv_path.exists());
    }

    #[test]
    fn truncation_marker_row() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("t.csv");
        let mut sink = CsvSink::create(&path, &[Method::Sorted1d]).unwrap();
        sink.write_truncation(&Error::Numeric("boom".into())).unwrap();
        let (header, records) = read_csv(&path).unwrap();
        assert_eq!(records.len(), 1);
        let status = records[0].last().unwrap();
        assert!(status.contains("truncated"), "{status}");
        assert_eq!(records[0].len(), header.len());
    }

    #[test]
    fn float_format_has_17_significant_digits() {
        let v = std::f64::consts::PI;
        let s = fmt_float(v);
        assert_eq!(s.parse::<f64>().unwrap(), v);
        assert!(s.contains('e'));
        let mantissa: String = s.chars().take_while(|&c| c != 'e').filter(|c| c.is_ascii_digit()).collect();
        assert_eq!(mantissa.len(), 17);
    }
}
