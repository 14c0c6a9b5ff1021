//! Command-line front end. Exit codes: 0 success, 1 runtime or verification
//! failure, 2 config errors.

use clap::{Parser, Subcommand};
use nngp_verify::experiment::ExperimentConfig;
use nngp_verify::kernel::Backend;
use nngp_verify::rng::SeedStream;
use nngp_verify::{bound, experiment, kernel, net, plot, transport, verify, Error};
use std::path::PathBuf;
use std::process::ExitCode;

/// println! that exits quietly when the consumer closed the pipe
/// (e.g. `nngp-verify kernel | head`) instead of panicking.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write;
        if let Err(e) = writeln!(std::io::stdout(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            eprintln!("error: cannot write to stdout: {e}");
            std::process::exit(1);
        }
    }};
}

#[derive(Parser)]
#[command(
    name = "nngp-verify",
    version,
    about = "Gaussian-limit kernels, Wasserstein estimators and width/depth error bounds for wide random networks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute the layerwise kernel matrices for a config and print them as JSON.
    Kernel {
        #[arg(long)]
        config: PathBuf,
        /// Override the expectation backend: closed_form, quadrature or quadrature:N.
        #[arg(long)]
        backend: Option<String>,
        /// Write JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample network outputs (or the limit Gaussian) to a binary sample file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Sample the limit Gaussian instead of the network.
        #[arg(long)]
        gaussian: bool,
        /// Sample count override (default: n_network from the config).
        #[arg(long)]
        n: Option<usize>,
        /// Output file (default: samples.bin in the output directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the W2 bound for a config and print the breakdown as JSON.
    Bound {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the self-verification campaign.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated module filter (kernel, psd, transport, bound, net).
        /// An empty string runs nothing.
        #[arg(long)]
        modules: Option<String>,
        /// Write the report as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the width sweep from a config and write sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the depth profile from a config and write depth.csv.
    Depth {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render SVG figures from a results CSV.
    Plot {
        #[arg(long)]
        results: PathBuf,
        /// Output directory (default: next to the results file).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> nngp_verify::Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, text)?;
            outln!("wrote {}", path.display());
            Ok(())
        }
        None => {
            outln!("{text}");
            Ok(())
        }
    }
}

fn first_width(cfg: &ExperimentConfig) -> nngp_verify::Result<usize> {
    cfg.widths.first().copied().ok_or_else(|| {
        Error::Config("this command needs at least one entry in widths".into())
    })
}

fn run(cli: Cli) -> nngp_verify::Result<ExitCode> {
    match cli.cmd {
        Cmd::Kernel { config, backend, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let network = cfg.network_at(first_width(&cfg)?)?;
            let be = match backend {
                Some(s) => Backend::parse(&s)?,
                None => Backend::preferred(&network.activation),
            };
            let inputs = cfg.inputs()?;
            let chain = kernel::kernel_chain(&network, &inputs, be)?;
            let json = serde_json::json!({
                "schema_version": experiment::SCHEMA_VERSION,
                "config_hash": bound::config_hash(&network, &inputs),
                "kernels": chain.iter().map(|k| k.to_json_value()).collect::<Vec<_>>(),
            });
            write_or_print(out.as_ref(), &serde_json::to_string_pretty(&json)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Simulate { config, gaussian, n, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let network = cfg.network_at(first_width(&cfg)?)?;
            let inputs = cfg.inputs()?;
            let n_samples = n.unwrap_or(cfg.n_network);
            let master = SeedStream::new(cfg.master_seed);
            let set = if gaussian {
                let chain = kernel::kernel_chain(
                    &network,
                    &inputs,
                    Backend::preferred(&network.activation),
                )?;
                transport::sample_limit_gaussian(
                    chain.last().expect("depth >= 1"),
                    cfg.n_out,
                    n_samples,
                    &master.substream("simulate-gauss", 0),
                )?
            } else {
                net::sample_outputs(&network, &inputs, n_samples, &master.substream("simulate", 0))?
            };
            let path = out.unwrap_or_else(|| cfg.resolve_output_dir().join("samples.bin"));
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let mut file = std::fs::File::create(&path)?;
            set.write_to(&mut file)?;
            outln!(
                "wrote {} samples of dim {} ({}) to {}",
                set.n_samples(),
                set.dim(),
                set.provenance.label(),
                path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Bound { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let network = cfg.network_at(first_width(&cfg)?)?;
            let inputs = cfg.inputs()?;
            let master = SeedStream::new(cfg.master_seed);
            let breakdown = bound::rhs_bound(&network, &inputs, cfg.mc_samples, &master)?;
            write_or_print(out.as_ref(), &serde_json::to_string_pretty(&breakdown.to_json())?)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Verify { seed, modules, json } => {
            let filter: Option<Vec<String>> = modules.map(|s| {
                s.split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(String::from)
                    .collect()
            });
            let report = verify::verify_all(seed, filter.as_deref());
            for c in &report.checks {
                outln!(
                    "[{}] {} - {} (margin {:+.3e}; {})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.id,
                    c.description,
                    c.margin,
                    c.detail
                );
            }
            outln!(
                "{}/{} checks passed",
                report.checks.iter().filter(|c| c.pass).count(),
                report.checks.len()
            );
            if let Some(path) = json {
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                std::fs::write(&path, serde_json::to_string_pretty(&report.to_json())?)?;
                outln!("wrote {}", path.display());
            }
            Ok(if report.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Cmd::Sweep { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = experiment::run_width_sweep(&cfg)?;
            outln!("wrote {} rows to {}", out.rows.len(), out.csv_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Depth { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = experiment::run_depth_profile(&cfg)?;
            outln!("wrote {} rows to {}", out.rows.len(), out.csv_path.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Plot { results, out_dir } => {
            let dir = out_dir.unwrap_or_else(|| {
                results
                    .parent()
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            let out = plot::emit_plots(&results, &dir)?;
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            for p in &out.paths {
                outln!("wrote {}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
