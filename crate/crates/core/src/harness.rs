//! Seeded Monte Carlo trials, parameter sweeps and plot-ready output.
//!
//! Each trial draws one channel realization from a per-trial stream derived
//! from the master seed and the trial index, then runs every requested
//! scheme on that same realization. Sweep points reuse the trial streams,
//! so results at different sweep values are paired as well.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_taps, to_frequency, ChannelTaps, FrequencyChannels};
use crate::metrics::PhaseResolution;
use crate::optimizer::{self, OptimizerState, RunOptions, Stopping};
use crate::oracle::{self, BaselineMode};
use crate::scenario::{
    dbm_to_watts, sample_user_distances, LinkGains, LinkGeometry, Scenario, SystemConfig,
    TapPlacement,
};
use crate::{Error, Result};

/// Environment variable that overrides the output directory.
pub const OUTPUT_DIR_ENV: &str = "IRS_WMMSE_OUTPUT_DIR";
pub const DEFAULT_TRIALS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    ProposedContinuous,
    /// Quantized phases at the configured (or swept) resolution.
    ProposedQuantized,
    /// Quantized phases at a fixed resolution.
    ProposedBits(u32),
    RandomIrs,
    NoIrs,
}

impl Scheme {
    pub fn label(&self, bits: Option<u32>) -> String {
        match (*self, bits) {
            (Scheme::ProposedContinuous, _) => "proposed_cont".into(),
            (Scheme::ProposedQuantized, Some(b)) | (Scheme::ProposedBits(b), _) => {
                format!("proposed_q{b}")
            }
            (Scheme::ProposedQuantized, None) => "proposed_quant".into(),
            (Scheme::RandomIrs, _) => "random_irs".into(),
            (Scheme::NoIrs, _) => "no_irs".into(),
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Scheme>> {
        let schemes = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(Scheme::from_str)
            .collect::<Result<Vec<_>>>()?;
        if schemes.is_empty() {
            return Err(Error::InvalidConfig("empty scheme list".into()));
        }
        Ok(schemes)
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "proposed_cont" | "proposed" => Scheme::ProposedContinuous,
            "proposed_quant" => Scheme::ProposedQuantized,
            "random_irs" => Scheme::RandomIrs,
            "no_irs" => Scheme::NoIrs,
            other => match other.strip_prefix("proposed_q").map(str::parse::<u32>) {
                Some(Ok(b)) if b >= 1 => Scheme::ProposedBits(b),
                _ => return Err(Error::InvalidConfig(format!("unknown scheme '{other}'"))),
            },
        })
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label(None))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    TxPower,
    NIrs,
    QuantBits,
    #[default]
    None,
}

impl FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tx_power" => Ok(SweepVariable::TxPower),
            "n_irs" => Ok(SweepVariable::NIrs),
            "quant_bits" => Ok(SweepVariable::QuantBits),
            "none" => Ok(SweepVariable::None),
            other => Err(Error::InvalidConfig(format!(
                "unknown sweep variable '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub n_trials: usize,
    pub base: Scenario,
    pub schemes: Vec<Scheme>,
    pub stopping: Stopping,
    /// Keep per-iteration sum-rate traces for convergence output.
    pub record_traces: bool,
}

impl SweepSpec {
    /// Single-point spec at the base configuration.
    pub fn single(base: Scenario, schemes: Vec<Scheme>, n_trials: usize) -> Self {
        Self {
            variable: SweepVariable::None,
            values: vec![0.0],
            n_trials,
            base,
            schemes,
            stopping: Stopping::default(),
            record_traces: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidConfig("sweep values must be nonempty".into()));
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1]))
            || self.values.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidConfig(
                "sweep values must be finite and strictly increasing".into(),
            ));
        }
        if self.n_trials == 0 {
            return Err(Error::InvalidConfig("n_trials must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidConfig("no schemes selected".into()));
        }
        if self.variable == SweepVariable::None && self.values.len() != 1 {
            return Err(Error::InvalidConfig(
                "variable 'none' takes exactly one value".into(),
            ));
        }
        for &v in &self.values {
            self.scenario_at(v)?;
        }
        Ok(())
    }

    /// Base scenario with the sweep variable set to `value`.
    pub fn scenario_at(&self, value: f64) -> Result<Scenario> {
        let mut system = self.base.system.clone();
        let integral = |what: &str| -> Result<u32> {
            if value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64 {
                Ok(value as u32)
            } else {
                Err(Error::InvalidConfig(format!(
                    "{what} sweep value {value} is not a positive integer"
                )))
            }
        };
        match self.variable {
            SweepVariable::TxPower => system.tx_power = value,
            SweepVariable::NIrs => system.n_irs = integral("n_irs")? as usize,
            SweepVariable::QuantBits => system.quant_bits = Some(integral("quant_bits")?),
            SweepVariable::None => {}
        }
        Scenario::new(system, self.base.geometry.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub sweep_value: f64,
    pub trial: usize,
    /// Seed of the trial's stream.
    pub seed: u64,
    pub scheme: String,
    pub sum_rate: f64,
    pub initial_sum_rate: f64,
    pub outer_iters: usize,
    pub inner_sweeps_total: usize,
    pub converged: bool,
    pub channel_fingerprint: String,
    pub wall_time: f64,
    /// Sum rate after each outer iteration, empty unless traces were requested.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialFailure {
    pub sweep_value: f64,
    pub trial: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResults {
    pub variable: SweepVariable,
    /// Sorted by (sweep value, trial, scheme order of the spec).
    pub trials: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub sweep_value: f64,
    pub scheme: String,
    pub mean_rate: f64,
    pub stderr: f64,
    pub mean_iters: f64,
    pub n_trials: usize,
}

/// Per-trial ChaCha stream: stream id is the trial index.
pub fn trial_rng(master_seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial as u64);
    rng
}

/// Independent seeds derived for one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialStreams {
    pub seed: u64,
    pub distances: u64,
    pub channel: u64,
    pub init: u64,
    pub random_irs: u64,
}

pub fn trial_streams(master_seed: u64, trial: usize) -> TrialStreams {
    let seed = trial_rng(master_seed, trial).random();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TrialStreams {
        seed,
        distances: rng.random(),
        channel: rng.random(),
        init: rng.random(),
        random_irs: rng.random(),
    }
}

/// Draws the trial's user distances and channel taps.
pub fn realize(
    scenario: &Scenario,
    streams: &TrialStreams,
) -> Result<(ChannelTaps, FrequencyChannels)> {
    let system = &scenario.system;
    let distances = match &scenario.geometry.d_bs_user {
        Some(d) => d.clone(),
        None => sample_user_distances(
            &scenario.geometry,
            system.n_users,
            &mut ChaCha8Rng::seed_from_u64(streams.distances),
        )?,
    };
    let gains = LinkGains::from_distances(&scenario.geometry, &distances)?;
    let taps = sample_taps(
        system,
        &gains,
        &mut ChaCha8Rng::seed_from_u64(streams.channel),
    )?;
    let fc = to_frequency(&taps, system.n_subcarriers)?;
    Ok((taps, fc))
}

/// Proposed-scheme run at the given resolution from the trial's initial point.
pub fn run_proposed(
    system: &SystemConfig,
    fc: &FrequencyChannels,
    streams: &TrialStreams,
    bits: Option<u32>,
    stopping: Stopping,
) -> Result<OptimizerState> {
    let cfg = SystemConfig {
        quant_bits: bits,
        ..system.clone()
    };
    let resolution = PhaseResolution::from_bits(bits);
    let init = optimizer::initialize(
        fc,
        resolution,
        system.tx_power,
        &mut ChaCha8Rng::seed_from_u64(streams.init),
    );
    let options = RunOptions {
        stopping,
        ..Default::default()
    };
    optimizer::run(&cfg, fc, init, &options)
}

/// Runs every scheme on one channel realization.
pub fn run_trial(
    scenario: &Scenario,
    sweep_value: f64,
    trial: usize,
    schemes: &[Scheme],
    stopping: Stopping,
    record_traces: bool,
) -> Result<Vec<TrialResult>> {
    let system = &scenario.system;
    let streams = trial_streams(system.rng_seed, trial);
    let (taps, fc) = realize(scenario, &streams)?;
    let fingerprint = taps.fingerprint();
    let mut out = Vec::with_capacity(schemes.len());
    for &scheme in schemes {
        let started = Instant::now();
        let bits = match scheme {
            Scheme::ProposedQuantized => Some(system.quant_bits.ok_or_else(|| {
                Error::InvalidConfig("proposed_quant requires quant_bits".into())
            })?),
            Scheme::ProposedBits(b) => Some(b),
            _ => None,
        };
        let state = match scheme {
            Scheme::ProposedContinuous | Scheme::ProposedQuantized | Scheme::ProposedBits(_) => {
                run_proposed(system, &fc, &streams, bits, stopping)?
            }
            Scheme::RandomIrs => {
                let mut rng = ChaCha8Rng::seed_from_u64(streams.random_irs);
                oracle::baseline(&fc, BaselineMode::RandomIrs, system, stopping, &mut rng)?.state
            }
            Scheme::NoIrs => {
                let mut rng = ChaCha8Rng::seed_from_u64(streams.random_irs);
                oracle::baseline(&fc, BaselineMode::NoIrs, system, stopping, &mut rng)?.state
            }
        };
        out.push(TrialResult {
            sweep_value,
            trial,
            seed: streams.seed,
            scheme: scheme.label(bits),
            sum_rate: state.sum_rate(),
            initial_sum_rate: state.initial_sum_rate,
            outer_iters: state.outer_iters(),
            inner_sweeps_total: state.inner_sweeps_total(),
            converged: state.converged,
            channel_fingerprint: fingerprint.clone(),
            wall_time: started.elapsed().as_secs_f64(),
            trace: if record_traces {
                state.trace.iter().map(|r| r.sum_rate).collect()
            } else {
                Vec::new()
            },
        });
    }
    Ok(out)
}

/// Runs every (value, trial) job, in parallel when `jobs` is not 1.
pub fn run_sweep(spec: &SweepSpec, jobs: Option<usize>) -> Result<SweepResults> {
    spec.validate()?;
    let scenarios = spec
        .values
        .iter()
        .map(|&v| spec.scenario_at(v))
        .collect::<Result<Vec<_>>>()?;
    let work: Vec<(usize, usize)> = (0..spec.values.len())
        .flat_map(|v| (0..spec.n_trials).map(move |t| (v, t)))
        .collect();
    let job = |&(v, t): &(usize, usize)| {
        let value = spec.values[v];
        run_trial(
            &scenarios[v],
            value,
            t,
            &spec.schemes,
            spec.stopping,
            spec.record_traces,
        )
        .map_err(|e| TrialFailure {
            sweep_value: value,
            trial: t,
            message: e.to_string(),
        })
    };
    let outcomes: Vec<_> = match jobs {
        Some(1) => work.iter().map(job).collect(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(|| work.par_iter().map(job).collect()),
        None => work.par_iter().map(job).collect(),
    };

    let mut results = SweepResults {
        variable: spec.variable,
        ..Default::default()
    };
    for outcome in outcomes {
        match outcome {
            Ok(rows) => results.trials.extend(rows),
            Err(failure) => {
                eprintln!(
                    "warning: trial {} at sweep value {} failed and is excluded: {}",
                    failure.trial, failure.sweep_value, failure.message
                );
                results.failures.push(failure);
            }
        }
    }
    Ok(results)
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean and standard error of the paired differences `a - b`.
pub fn paired_difference(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    mean_and_stderr(&d)
}

impl SweepResults {
    /// Scheme labels in first-appearance order.
    pub fn scheme_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = Vec::new();
        for t in &self.trials {
            if !labels.contains(&t.scheme) {
                labels.push(t.scheme.clone());
            }
        }
        labels
    }

    fn values(&self) -> Vec<f64> {
        let mut values: Vec<f64> = self.trials.iter().map(|t| t.sweep_value).collect();
        values.dedup();
        values
    }

    /// Per-trial sum rates for one (value, scheme), ordered by trial index.
    pub fn rates(&self, sweep_value: f64, scheme: &str) -> Vec<f64> {
        self.select(sweep_value, scheme)
            .map(|t| t.sum_rate)
            .collect()
    }

    fn select<'a>(
        &'a self,
        sweep_value: f64,
        scheme: &'a str,
    ) -> impl Iterator<Item = &'a TrialResult> + 'a {
        self.trials
            .iter()
            .filter(move |t| t.sweep_value == sweep_value && t.scheme == scheme)
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for value in self.values() {
            let mut labels: Vec<&str> = Vec::new();
            for t in self.trials.iter().filter(|t| t.sweep_value == value) {
                if !labels.contains(&t.scheme.as_str()) {
                    labels.push(&t.scheme);
                }
            }
            for scheme in labels {
                let rates = self.rates(value, scheme);
                let iters: Vec<f64> = self
                    .select(value, scheme)
                    .map(|t| t.outer_iters as f64)
                    .collect();
                let (mean_rate, stderr) = mean_and_stderr(&rates);
                rows.push(SummaryRow {
                    sweep_value: value,
                    scheme: scheme.to_string(),
                    mean_rate,
                    stderr,
                    mean_iters: iters.iter().sum::<f64>() / iters.len() as f64,
                    n_trials: rates.len(),
                });
            }
        }
        rows
    }

    /// Mean sum rate after each outer iteration; index 0 is the initial
    /// point and finished runs hold their final value.
    pub fn convergence(&self) -> Vec<(f64, String, Vec<f64>)> {
        let mut out = Vec::new();
        for value in self.values() {
            for scheme in self.scheme_labels() {
                let runs: Vec<Vec<f64>> = self
                    .select(value, &scheme)
                    .map(|t| {
                        std::iter::once(t.initial_sum_rate)
                            .chain(t.trace.iter().copied())
                            .collect()
                    })
                    .collect();
                let Some(len) = runs.iter().map(Vec::len).max() else {
                    continue;
                };
                let mean = (0..len)
                    .map(|j| {
                        runs.iter().map(|r| r[j.min(r.len() - 1)]).sum::<f64>() / runs.len() as f64
                    })
                    .collect();
                out.push((value, scheme, mean));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Jsonl,
}

impl OutputFormat {
    fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Jsonl => "jsonl",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "jsonl" => Ok(OutputFormat::Jsonl),
            other => Err(Error::InvalidConfig(format!(
                "unknown output format '{other}'"
            ))),
        }
    }
}

#[derive(Serialize)]
struct RawRow<'a> {
    sweep_value: f64,
    trial: usize,
    seed: u64,
    scheme: &'a str,
    sum_rate: f64,
    outer_iters: usize,
    inner_sweeps_total: usize,
    converged: bool,
    channel_fingerprint: &'a str,
}

#[derive(Serialize)]
struct ConvergenceRow<'a> {
    sweep_value: f64,
    scheme: &'a str,
    iter: usize,
    sum_rate: f64,
}

fn render<T: Serialize>(rows: &[T], format: OutputFormat) -> Result<String> {
    let serialize = |e: &dyn fmt::Display| Error::InvalidConfig(format!("serialize: {e}"));
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r).map_err(|e| serialize(&e))?;
            }
            let bytes = w.into_inner().map_err(|e| serialize(&e))?;
            String::from_utf8(bytes).map_err(|e| serialize(&e))
        }
        OutputFormat::Jsonl => {
            let mut out = String::new();
            for r in rows {
                out.push_str(&serde_json::to_string(r).map_err(|e| serialize(&e))?);
                out.push('\n');
            }
            Ok(out)
        }
    }
}

fn write_file(path: PathBuf, contents: &str) -> Result<PathBuf> {
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `summary.*`, `trials.*` and, when present, `convergence.*` and
/// `failures.*`.
/// Wall-clock times are left out so reruns are byte-identical.
pub fn emit(results: &SweepResults, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    if results.trials.is_empty() {
        return Err(Error::InvalidConfig("no trial results to emit".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = format.extension();
    let mut written = Vec::new();

    let summary = render(&results.summary(), format)?;
    written.push(write_file(dir.join(format!("summary.{ext}")), &summary)?);

    let raw: Vec<RawRow> = results
        .trials
        .iter()
        .map(|t| RawRow {
            sweep_value: t.sweep_value,
            trial: t.trial,
            seed: t.seed,
            scheme: &t.scheme,
            sum_rate: t.sum_rate,
            outer_iters: t.outer_iters,
            inner_sweeps_total: t.inner_sweeps_total,
            converged: t.converged,
            channel_fingerprint: &t.channel_fingerprint,
        })
        .collect();
    let trials = render(&raw, format)?;
    written.push(write_file(dir.join(format!("trials.{ext}")), &trials)?);

    if results.trials.iter().any(|t| !t.trace.is_empty()) {
        let curves = results.convergence();
        let rows: Vec<ConvergenceRow> = curves
            .iter()
            .flat_map(|(value, scheme, mean)| {
                mean.iter()
                    .enumerate()
                    .map(move |(iter, &sum_rate)| ConvergenceRow {
                        sweep_value: *value,
                        scheme,
                        iter,
                        sum_rate,
                    })
            })
            .collect();
        let text = render(&rows, format)?;
        written.push(write_file(dir.join(format!("convergence.{ext}")), &text)?);
    }
    if !results.failures.is_empty() {
        let text = render(&results.failures, format)?;
        written.push(write_file(dir.join(format!("failures.{ext}")), &text)?);
    }
    Ok(written)
}

/// `quant_bits` in a config file: an integer, or `"inf"` for continuous.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum QuantBitsSetting {
    Bits(u32),
    Named(String),
}

impl QuantBitsSetting {
    pub fn resolve(&self) -> Result<Option<u32>> {
        match self {
            QuantBitsSetting::Bits(b) => Ok(Some(*b)),
            QuantBitsSetting::Named(s) if matches!(s.as_str(), "inf" | "continuous") => Ok(None),
            QuantBitsSetting::Named(s) => Err(Error::InvalidConfig(format!(
                "quant_bits '{s}' is neither an integer nor \"inf\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub n_subcarriers: Option<usize>,
    pub n_tx: Option<usize>,
    pub n_users: Option<usize>,
    pub n_irs: Option<usize>,
    pub n_taps: Option<usize>,
    pub cp_len: Option<usize>,
    pub noise_power_dbm: Option<f64>,
    pub tx_power_w: Option<f64>,
    pub quant_bits: Option<QuantBitsSetting>,
    pub rng_seed: Option<u64>,
    pub tap_placement: Option<TapPlacement>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub tol: Option<f64>,
    pub max_outer: Option<usize>,
    pub phi_tol: Option<f64>,
    pub max_sweeps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub variable: Option<SweepVariable>,
    pub values: Option<Vec<f64>>,
    pub n_trials: Option<usize>,
    pub schemes: Option<Vec<String>>,
}

/// Parsed TOML configuration file. Every key is optional.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub system: SystemSection,
    pub geometry: Option<LinkGeometry>,
    pub optimizer: OptimizerSection,
    pub sweep: SweepSection,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Values set on the command line; they take precedence over the file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tx_power: Option<f64>,
    pub n_irs: Option<usize>,
    pub quant_bits: Option<QuantBitsSetting>,
    pub variable: Option<SweepVariable>,
    pub values: Option<Vec<f64>>,
    pub n_trials: Option<usize>,
    pub schemes: Option<Vec<Scheme>>,
    pub max_outer: Option<usize>,
    pub record_traces: bool,
}

/// Merges defaults, file and overrides into a validated spec. The master
/// seed must come from the file or the overrides.
pub fn resolve_spec(file: &ConfigFile, overrides: &Overrides) -> Result<SweepSpec> {
    let s = &file.system;
    let d = SystemConfig::default();
    let quant = overrides.quant_bits.as_ref().or(s.quant_bits.as_ref());
    let system = SystemConfig {
        n_subcarriers: s.n_subcarriers.unwrap_or(d.n_subcarriers),
        n_tx: s.n_tx.unwrap_or(d.n_tx),
        n_users: s.n_users.unwrap_or(d.n_users),
        n_irs: overrides.n_irs.or(s.n_irs).unwrap_or(d.n_irs),
        n_taps: s.n_taps.unwrap_or(d.n_taps),
        cp_len: s.cp_len.unwrap_or(d.cp_len),
        noise_power: s.noise_power_dbm.map(dbm_to_watts).unwrap_or(d.noise_power),
        tx_power: overrides.tx_power.or(s.tx_power_w).unwrap_or(d.tx_power),
        quant_bits: match quant {
            Some(q) => q.resolve()?,
            None => d.quant_bits,
        },
        rng_seed: overrides.seed.or(s.rng_seed).ok_or_else(|| {
            Error::InvalidConfig("rng_seed is required (config file or --seed)".into())
        })?,
        tap_placement: s.tap_placement.unwrap_or(d.tap_placement),
    };
    let base = Scenario::new(system, file.geometry.clone().unwrap_or_default())?;

    let o = &file.optimizer;
    let ds = Stopping::default();
    let stopping = Stopping {
        tol: o.tol.unwrap_or(ds.tol),
        max_outer: overrides.max_outer.or(o.max_outer).unwrap_or(ds.max_outer),
        phi_tol: o.phi_tol.unwrap_or(ds.phi_tol),
        max_sweeps: o.max_sweeps.unwrap_or(ds.max_sweeps),
    };
    if !(stopping.tol > 0.0
        && stopping.phi_tol > 0.0
        && stopping.max_outer >= 1
        && stopping.max_sweeps >= 1)
    {
        return Err(Error::InvalidConfig(
            "optimizer tolerances must be positive and limits at least 1".into(),
        ));
    }

    let schemes = match (&overrides.schemes, &file.sweep.schemes) {
        (Some(list), _) => list.clone(),
        (None, Some(names)) => names
            .iter()
            .map(|n| n.parse())
            .collect::<Result<Vec<_>>>()?,
        (None, None) => vec![Scheme::ProposedContinuous, Scheme::RandomIrs, Scheme::NoIrs],
    };
    let variable = overrides
        .variable
        .or(file.sweep.variable)
        .unwrap_or_default();
    let values = match overrides
        .values
        .clone()
        .or_else(|| file.sweep.values.clone())
    {
        Some(v) => v,
        None if variable == SweepVariable::None => vec![0.0],
        None => {
            return Err(Error::InvalidConfig(
                "sweep values are required for a sweep variable".into(),
            ))
        }
    };
    let spec = SweepSpec {
        variable,
        values,
        n_trials: overrides
            .n_trials
            .or(file.sweep.n_trials)
            .unwrap_or(DEFAULT_TRIALS),
        base,
        schemes,
        stopping,
        record_traces: overrides.record_traces,
    };
    spec.validate()?;
    Ok(spec)
}

/// Output directory: an explicit request, else the environment override,
/// else `./out`.
pub fn output_dir(requested: Option<&Path>) -> PathBuf {
    if let Some(dir) = requested {
        return dir.to_path_buf();
    }
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from("out"),
    }
}

/// Outcome of one check in the validation suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Oracle checks on small random instances: subcarrier channels against
/// the block-cyclic construction, and the phase sweep against exhaustive
/// grid search.
pub fn validation_suite(seed: u64, instances: usize) -> Vec<CheckOutcome> {
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let small = SystemConfig {
        n_subcarriers: 8,
        n_tx: 2,
        n_users: 2,
        n_irs: 3,
        n_taps: 3,
        cp_len: 3,
        noise_power: 1.0,
        ..Default::default()
    };
    let gains = LinkGains {
        bs_user: vec![1.0; 2],
        bs_irs: 1.0,
        irs_user: 1.0,
    };

    let diag = (|| -> Result<(f64, f64)> {
        let (mut worst_err, mut worst_off) = (0.0f64, 0.0f64);
        for _ in 0..instances {
            let taps = sample_taps(&small, &gains, &mut rng)?;
            let fc = to_frequency(&taps, small.n_subcarriers)?;
            let angles: Vec<f64> = (0..small.n_irs)
                .map(|_| rng.random::<f64>() * std::f64::consts::TAU)
                .collect();
            let phi =
                crate::metrics::PhaseVector::from_angles(&angles, PhaseResolution::Continuous);
            let bc = oracle::build_block_cyclic(&taps, small.n_subcarriers)?;
            let reference = oracle::frequency_oracle(&bc, phi.as_slice())?;
            worst_off = worst_off.max(reference.off_diagonal_ratio);
            for k in 0..small.n_users {
                for i in 0..small.n_subcarriers {
                    let h = crate::channel::effective_channel(&fc, phi.as_slice(), k, i);
                    worst_err = worst_err.max((&h - &reference.effective[k][i]).norm() / h.norm());
                }
            }
        }
        Ok((worst_err, worst_off))
    })();
    checks.push(match diag {
        Ok((err, off)) => CheckOutcome {
            name: "diagonalization",
            passed: err <= 1e-10 && off <= oracle::OFF_DIAGONAL_TOLERANCE,
            detail: format!("max relative error {err:.3e}, max off-diagonal fraction {off:.3e}"),
        },
        Err(e) => CheckOutcome {
            name: "diagonalization",
            passed: false,
            detail: e.to_string(),
        },
    });

    let tiny = SystemConfig {
        n_subcarriers: 4,
        n_tx: 2,
        n_users: 2,
        n_irs: 2,
        n_taps: 2,
        cp_len: 2,
        noise_power: 0.1,
        quant_bits: Some(2),
        ..Default::default()
    };
    let grid = (|| -> Result<(f64, bool)> {
        let (mut worst_gap, mut never_below) = (0.0f64, true);
        for _ in 0..instances {
            let (gap, below) = sweep_vs_exhaustive(&tiny, &gains, Stopping::default(), &mut rng)?;
            worst_gap = worst_gap.max(gap);
            never_below &= !below;
        }
        Ok((worst_gap, never_below))
    })();
    checks.push(match grid {
        Ok((gap, never_below)) => CheckOutcome {
            name: "exhaustive_phi",
            passed: gap <= 0.05 && never_below,
            detail: format!("max relative gap {gap:.3e}, never below optimum: {never_below}"),
        },
        Err(e) => CheckOutcome {
            name: "exhaustive_phi",
            passed: false,
            detail: e.to_string(),
        },
    });
    checks
}

/// Builds the phase quadratic at an initialized point of a random tiny
/// instance, runs the quantized sweep and compares with exhaustive search.
/// Returns the gap relative to the optimum's magnitude and whether the
/// sweep landed below the optimum.
pub fn sweep_vs_exhaustive<R: Rng + ?Sized>(
    system: &SystemConfig,
    gains: &LinkGains,
    stopping: Stopping,
    rng: &mut R,
) -> Result<(f64, bool)> {
    let bits = system
        .quant_bits
        .ok_or_else(|| Error::InvalidConfig("exhaustive comparison needs quant_bits".into()))?;
    let taps = sample_taps(system, gains, rng)?;
    let fc = to_frequency(&taps, system.n_subcarriers)?;
    let init = optimizer::initialize(&fc, PhaseResolution::Bits(bits), system.tx_power, rng);
    let eff = crate::channel::EffectiveChannels::compute(&fc, init.phi.as_slice());
    let varpi = optimizer::update_varpi(&eff, &init.w, system.noise_power);
    let rho = optimizer::update_rho(&eff, &init.w, &varpi, system.noise_power)?;
    let quad = optimizer::build_phi_quadratic(&fc, &init.w, &rho, &varpi);
    let (_, best) = oracle::exhaustive_phi(&quad, bits)?;
    let mut phi = init.phi.clone();
    optimizer::sweep_phi(
        &quad,
        &mut phi,
        stopping.phi_tol,
        stopping.max_sweeps,
        false,
    );
    let found = quad.objective(phi.as_slice());
    let slack = 1e-12 * best.abs().max(quad.magnitude_bound());
    let gap = (found - best) / best.abs().max(f64::MIN_POSITIVE);
    Ok((gap.max(0.0), found < best - slack))
}

/// Groups trial rows by sweep value for paired analyses.
pub fn by_value(results: &SweepResults, scheme: &str) -> BTreeMap<u64, Vec<f64>> {
    let mut out: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for t in results.trials.iter().filter(|t| t.scheme == scheme) {
        out.entry(t.sweep_value.to_bits())
            .or_default()
            .push(t.sum_rate);
    }
    out
}
