use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use irs_wmmse::harness::{
    self, ConfigFile, OutputFormat, Overrides, QuantBitsSetting, Scheme, SweepVariable,
};

#[derive(Parser)]
#[command(
    name = "irs-wmmse",
    version,
    about = "Joint beamformer and IRS phase design for MU-MISO-OFDM"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize one channel realization and write its iteration trace.
    Run(RunArgs),
    /// Monte Carlo sweep over transmit power, IRS size or phase resolution.
    Sweep(SweepArgs),
    /// Check the optimizer against brute-force references.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides rng_seed from the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated schemes: proposed_cont, proposed_quant, proposed_q<b>, random_irs, no_irs.
    #[arg(long)]
    schemes: Option<String>,
    /// Output directory [default: $IRS_WMMSE_OUTPUT_DIR or ./out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or jsonl.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Transmit power, watts.
    #[arg(long)]
    tx_power: Option<f64>,
    #[arg(long)]
    n_irs: Option<usize>,
    /// Phase-shifter bits, or "inf" for continuous.
    #[arg(long)]
    quant_bits: Option<String>,
    #[arg(long)]
    max_outer: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Trial index whose channel realization is used.
    #[arg(long, default_value_t = 0)]
    trial: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// tx_power, n_irs, quant_bits or none.
    #[arg(long)]
    variable: Option<String>,
    /// Comma-separated, strictly increasing sweep values.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write mean sum rate per outer iteration.
    #[arg(long)]
    traces: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn load(common: &Common) -> anyhow::Result<(ConfigFile, Overrides)> {
    let file = match &common.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let quant_bits = common
        .quant_bits
        .as_deref()
        .map(|s| match s.parse::<u32>() {
            Ok(b) => QuantBitsSetting::Bits(b),
            Err(_) => QuantBitsSetting::Named(s.to_string()),
        });
    let overrides = Overrides {
        seed: common.seed,
        tx_power: common.tx_power,
        n_irs: common.n_irs,
        quant_bits,
        schemes: common
            .schemes
            .as_deref()
            .map(Scheme::parse_list)
            .transpose()?,
        max_outer: common.max_outer,
        ..Default::default()
    };
    Ok((file, overrides))
}

fn out_dir(common: &Common) -> PathBuf {
    harness::output_dir(common.out.as_deref())
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let (file, overrides) = load(&args.common)?;
    let format: OutputFormat = args.common.format.parse()?;
    let spec = harness::resolve_spec(&file, &overrides)?;
    let dir = out_dir(&args.common);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let results = harness::run_trial(
        &spec.base,
        0.0,
        args.trial,
        &spec.schemes,
        spec.stopping,
        true,
    )?;
    for r in &results {
        println!(
            "{:<16} sum_rate={:.6} outer_iters={} inner_sweeps={} converged={}",
            r.scheme, r.sum_rate, r.outer_iters, r.inner_sweeps_total, r.converged
        );
    }
    let sweep = harness::SweepResults {
        variable: SweepVariable::None,
        trials: results,
        failures: Vec::new(),
    };
    for path in harness::emit(&sweep, &dir, format)? {
        println!("wrote {}", path.display());
    }

    let streams = harness::trial_streams(spec.base.system.rng_seed, args.trial);
    let (_, fc) = harness::realize(&spec.base, &streams)?;
    let state = harness::run_proposed(
        &spec.base.system,
        &fc,
        &streams,
        spec.base.system.quant_bits,
        spec.stopping,
    )?;
    let path = dir.join("trace.csv");
    std::fs::write(&path, state.trace_csv())
        .with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn sweep(args: SweepArgs) -> anyhow::Result<()> {
    let (file, mut overrides) = load(&args.common)?;
    let format: OutputFormat = args.common.format.parse()?;
    overrides.variable = args.variable.as_deref().map(str::parse).transpose()?;
    overrides.values = args.values;
    overrides.n_trials = args.trials;
    overrides.record_traces = args.traces;
    let spec = harness::resolve_spec(&file, &overrides)?;
    if args.jobs == Some(0) {
        bail!("--jobs must be at least 1");
    }
    let results = harness::run_sweep(&spec, args.jobs)?;
    if !results.failures.is_empty() {
        eprintln!(
            "warning: {} trial(s) failed; see the failures file",
            results.failures.len()
        );
    }
    let dir = out_dir(&args.common);
    for row in results.summary() {
        println!(
            "{:>10} {:<16} mean_rate={:.6} stderr={:.6} mean_iters={:.2} n={}",
            row.sweep_value, row.scheme, row.mean_rate, row.stderr, row.mean_iters, row.n_trials
        );
    }
    for path in harness::emit(&results, &dir, format)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn validate(args: ValidateArgs) -> anyhow::Result<bool> {
    let checks = harness::validation_suite(args.seed, args.instances);
    for c in &checks {
        println!(
            "{} {:<16} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a).map(|_| true),
        Command::Sweep(a) => sweep(a).map(|_| true),
        Command::Validate(a) => validate(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
