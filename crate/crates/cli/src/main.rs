use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use grouploss_core::io::{read_dataset, write_binary, write_diagram, write_json, write_simulated, write_sweep};
use grouploss_core::pipeline::{self, SweepAxis, SweepParams};
use grouploss_core::simulate::{true_gl_monte_carlo, OracleSummary};
use grouploss_core::{Error, PartitionStrategy, Recalibration, Reduction, RunConfig, ScoringRule, SimulatorSpec};

const EXIT_INPUT: u8 = 2;
const EXIT_UNESTIMABLE: u8 = 3;

#[derive(Parser)]
#[command(name = "grouploss", version, about = "Grouping-loss estimation for probabilistic classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate calibration and grouping losses of scores in a CSV file.
    Estimate {
        input: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Report JSON (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Grouping-diagram CSV.
        #[arg(long)]
        diagram_out: Option<PathBuf>,
    },
    /// Sample a simulator and report its true grouping and calibration losses.
    Simulate {
        /// Simulator spec JSON (the default realistic simulator when omitted).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "brier")]
        rule: ScoringRule,
        /// Rows drawn for the oracle.
        #[arg(long, default_value_t = 1_000_000)]
        oracle_n: usize,
        /// Dataset CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        oracle_out: Option<PathBuf>,
    },
    /// Repeat estimation on simulated data across bin counts or region ratios.
    Sweep {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 1_000_000)]
        oracle_n: usize,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write isotonic-recalibrated scores (fitted on the train half).
    Recalibrate {
        input: PathBuf,
        #[arg(long, default_value = "auto")]
        reduction: Reduction,
        #[arg(long, default_value_t = pipeline::DEFAULT_BINS)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Bins,
    #[value(alias = "region_ratio")]
    RegionRatio,
}

#[derive(Clone, Copy, ValueEnum)]
enum PartitionArg {
    Tree,
    Stump,
    Kmeans,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "brier")]
    rule: ScoringRule,
    #[arg(long, default_value_t = pipeline::DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = pipeline::DEFAULT_REGION_RATIO)]
    region_ratio: usize,
    #[arg(long, value_enum, default_value = "tree")]
    partition: PartitionArg,
    /// Number of k-means clusters.
    #[arg(long, default_value_t = 2)]
    clusters: usize,
    #[arg(long, default_value = "none")]
    recalibrate: Recalibration,
    #[arg(long, default_value = "auto")]
    reduction: Reduction,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Neighbourhood fraction of the calibration-curve smoother.
    #[arg(long, default_value_t = grouploss_core::calibration::DEFAULT_BANDWIDTH_FRACTION)]
    bandwidth: f64,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            rule: self.rule,
            n_bins: self.bins,
            region_ratio: self.region_ratio,
            partition: match self.partition {
                PartitionArg::Tree => PartitionStrategy::Tree,
                PartitionArg::Stump => PartitionStrategy::BalancedStump,
                PartitionArg::Kmeans => PartitionStrategy::KMeans { k: self.clusters },
            },
            recalibrate: self.recalibrate,
            seed: self.seed,
            reduction: self.reduction,
            bandwidth_fraction: self.bandwidth,
            ..RunConfig::default()
        }
    }
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    spec: &'a SimulatorSpec,
    n: usize,
    seed: u64,
    rule: ScoringRule,
    oracle: OracleSummary,
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

/// Writes to `path`, or stdout when absent.
fn with_output<F>(path: Option<&Path>, f: F) -> anyhow::Result<()>
where
    F: FnOnce(&mut dyn Write) -> grouploss_core::Result<()>,
{
    match path {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn load_spec(path: Option<&Path>) -> anyhow::Result<SimulatorSpec> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            Ok(SimulatorSpec::from_json(&text)?)
        }
        None => Ok(SimulatorSpec::default()),
    }
}

fn load_input(path: &Path) -> anyhow::Result<grouploss_core::io::InputTable> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_dataset(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Estimate {
            input,
            run,
            out,
            diagram_out,
        } => {
            let config = run.config();
            config.validate()?;
            let table = load_input(&input)?;
            let report = pipeline::estimate(&table.dataset, &config)?;
            with_output(out.as_deref(), |w| write_json(w, &report))?;
            if let Some(p) = diagram_out {
                write_diagram(create(&p)?, &report)?;
            }
            if report.flags.all_unestimable {
                eprintln!("error: every bin is unestimable (too few test rows per region)");
                return Ok(EXIT_UNESTIMABLE);
            }
        }
        Command::Simulate {
            spec,
            n,
            seed,
            rule,
            oracle_n,
            out,
            oracle_out,
        } => {
            let spec = load_spec(spec.as_deref())?;
            let sim = spec.sample(n, seed)?;
            with_output(out.as_deref(), |w| write_simulated(w, &sim))?;
            if let Some(p) = oracle_out {
                let oracle = true_gl_monte_carlo(&spec, rule, oracle_n, seed)?;
                let summary = SimulationSummary {
                    spec: &spec,
                    n,
                    seed,
                    rule,
                    oracle,
                };
                write_json(create(&p)?, &summary)?;
            }
        }
        Command::Sweep {
            spec,
            axis,
            values,
            n,
            repeats,
            oracle_n,
            run,
            out,
        } => {
            let spec = load_spec(spec.as_deref())?;
            let base = run.config();
            let result = pipeline::sweep(SweepParams {
                spec: &spec,
                base: &base,
                axis: match axis {
                    AxisArg::Bins => SweepAxis::Bins,
                    AxisArg::RegionRatio => SweepAxis::RegionRatio,
                },
                values: &values,
                n,
                repeats,
                n_oracle: oracle_n,
            })?;
            with_output(out.as_deref(), |w| write_sweep(w, &result))?;
        }
        Command::Recalibrate {
            input,
            reduction,
            bins,
            seed,
            out,
        } => {
            let table = load_input(&input)?;
            let config = RunConfig {
                reduction,
                n_bins: bins,
                seed,
                recalibrate: Recalibration::Isotonic,
                ..RunConfig::default()
            };
            let (view, _) = pipeline::recalibrate(&table.dataset, &config)?;
            with_output(out.as_deref(), |w| write_binary(w, view.features(), view.scores(), view.labels()))?;
        }
    }
    Ok(0)
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(value) = std::env::var("GROUPLOSS_THREADS") {
        let n: usize = value
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidParameter(format!("GROUPLOSS_THREADS must be a positive integer, got '{value}'")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|()| run(cli)) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
