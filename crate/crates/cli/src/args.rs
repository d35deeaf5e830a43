use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ppre_core::estimators::{EstimatorKind, EstimatorSpec, MetricDescriptor};
use ppre_core::privatizer::{DEFAULT_CLIP_QUANTILE, DEFAULT_CLIP_THRESHOLD, DEFAULT_EPSILON};
use ppre_core::protocol::{KeyMode, OutputMode};
use ppre_core::RaceCategory;

/// Privacy-preserving race estimation and two-party fairness measurement.
///
/// Exit codes: 0 success, 2 usage, 3 i/o, 4 invalid table or input file,
/// 5 governance rejection, 6 timeout, 7 protocol error, 8 crypto error,
/// 9 empty join, 10 oracle mismatch.
#[derive(Debug, Parser)]
#[command(name = "ppre", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic census tables, a population, a Self-ID sample and a
    /// P2 table with ground truth.
    Gen(GenArgs),
    /// Build P1's privatized table in memory and print a summary. The table
    /// itself is never written out.
    Privatize(PrivatizeArgs),
    /// Run the tester's side of a session.
    RunP1(RunP1Args),
    /// Run the test client's side of a session.
    RunP2(RunP2Args),
    /// Run both parties as separate processes over one channel directory.
    RunE2e(RunE2eArgs),
    /// Compute the result in the clear, with no encryption.
    Oracle(OracleArgs),
    /// Time a synthetic session phase by phase.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub members: usize,
    #[arg(long, default_value_t = 500)]
    pub surnames: usize,
    #[arg(long, default_value_t = 200)]
    pub zctas: usize,
    /// Dirichlet concentration of the synthetic tables; smaller values make
    /// names and places more informative.
    #[arg(long, default_value_t = 0.5)]
    pub concentration: f64,
    /// Share of members with a Self-ID record.
    #[arg(long, default_value_t = ppre_core::synth::DEFAULT_SELFID_COVERAGE)]
    pub selfid_coverage: f64,
    /// Share of the population present in P2's table.
    #[arg(long, default_value_t = 1.0)]
    pub p2_overlap: f64,
    /// P2 rows for members P1 has never seen.
    #[arg(long, default_value_t = 0)]
    pub p2_outsiders: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PrivacyArgs {
    /// Directory holding the census tables, population.csv and selfid.csv.
    #[arg(long)]
    pub data: PathBuf,
    /// Seed for randomized response and clipping.
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Clipping threshold.
    #[arg(long, default_value_t = DEFAULT_CLIP_THRESHOLD, conflicts_with = "derive_threshold")]
    pub threshold: f64,
    /// Derive the threshold from the BISG rows at `--quantile` instead.
    #[arg(long)]
    pub derive_threshold: bool,
    #[arg(long, default_value_t = DEFAULT_CLIP_QUANTILE)]
    pub quantile: f64,
    /// Also use first names (BIFSG).
    #[arg(long)]
    pub first_names: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EstimatorArgs {
    /// output-metric, model-perf or prob-count.
    #[arg(long, default_value = "output-metric")]
    pub estimator: EstimatorKind,
    /// Per-row metric for model-perf.
    #[arg(long, default_value = "false-positive")]
    pub metric: MetricDescriptor,
    /// Group whose inclusion prob-count measures.
    #[arg(long, default_value = "black")]
    pub target_group: RaceCategory,
    #[arg(long, default_value_t = 1)]
    pub count_threshold: u32,
    #[arg(long, default_value_t = 0.9)]
    pub certainty: f64,
}

impl EstimatorArgs {
    pub fn spec(&self) -> Result<EstimatorSpec, ppre_core::estimators::EstimatorError> {
        let spec = match self.estimator {
            EstimatorKind::ModelPerf => EstimatorSpec::model_perf(self.metric),
            EstimatorKind::OutputMetric => EstimatorSpec::output_metric(),
            EstimatorKind::ProbCount => EstimatorSpec::prob_count(self.target_group, self.count_threshold, self.certainty)?,
            EstimatorKind::HardFpr => EstimatorSpec::hard_fpr(),
        };
        let spec = EstimatorSpec { certainty: self.certainty, ..spec };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Args)]
pub struct ChannelArgs {
    /// Shared exchange directory.
    #[arg(long, env = "PPRE_CHANNEL_ROOT")]
    pub channel_root: PathBuf,
    #[arg(long)]
    pub session: String,
    /// Seconds to wait for each message.
    #[arg(long, default_value_t = 1800)]
    pub timeout: u64,
    /// Milliseconds between polls of the channel.
    #[arg(long, default_value_t = 20)]
    pub poll_ms: u64,
    /// Keep a copy of every message this party sends in this directory.
    #[arg(long)]
    pub tap: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct KeyArgs {
    /// production-2048, or test-1024 (a fixed public key, insecure).
    #[arg(long, default_value = "production-2048")]
    pub key_mode: KeyMode,
}

#[derive(Debug, Args)]
pub struct PrivatizeArgs {
    #[command(flatten)]
    pub privacy: PrivacyArgs,
}

#[derive(Debug, Clone, Args)]
pub struct RunP1Args {
    #[command(flatten)]
    pub privacy: PrivacyArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub channel: ChannelArgs,
    #[command(flatten)]
    pub keys: KeyArgs,
    /// p2-learns or masked.
    #[arg(long, default_value = "p2-learns")]
    pub output_mode: OutputMode,
    /// Smallest P2 dataset accepted, and the smallest difference from an
    /// earlier dataset.
    #[arg(long, default_value_t = ppre_core::protocol::governance::DEFAULT_MIN_ROWS)]
    pub min_rows: usize,
    /// Ledger of accepted P2 datasets, kept across sessions.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    /// Where to write the report when P1 learns the output.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    /// Where to write per-phase timings as CSV.
    #[arg(long)]
    pub timings_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunP2Args {
    /// P2's table (`member_id,y,y_hat`).
    #[arg(long)]
    pub values: PathBuf,
    #[command(flatten)]
    pub channel: ChannelArgs,
    #[command(flatten)]
    pub keys: KeyArgs,
    /// 32-byte key for governance row digests, created on first use. Keep it
    /// across sessions so P1 can recognise repeated measurements.
    #[arg(long)]
    pub governance_key: Option<PathBuf>,
    /// Where to write the report when P2 learns the output.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    #[arg(long)]
    pub timings_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunE2eArgs {
    #[command(flatten)]
    pub privacy: PrivacyArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    pub keys: KeyArgs,
    #[arg(long, default_value = "p2-learns")]
    pub output_mode: OutputMode,
    /// Exchange directory; a temporary one when absent.
    #[arg(long, env = "PPRE_CHANNEL_ROOT")]
    pub channel_root: Option<PathBuf>,
    #[arg(long, default_value = "e2e")]
    pub session: String,
    /// P2's table; defaults to `p2_values.csv` in the data directory.
    #[arg(long)]
    pub values: Option<PathBuf>,
    #[arg(long, default_value_t = ppre_core::protocol::governance::DEFAULT_MIN_ROWS)]
    pub min_rows: usize,
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    #[arg(long)]
    pub governance_key: Option<PathBuf>,
    #[arg(long, default_value_t = 1800)]
    pub timeout: u64,
    /// Where to write the report, whichever party learns it.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    /// Directory receiving copies of every message sent.
    #[arg(long)]
    pub tap: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub privacy: PrivacyArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    /// P2's table; defaults to `p2_values.csv` in the data directory.
    #[arg(long)]
    pub values: Option<PathBuf>,
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    /// A protocol report to compare against.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Largest accepted per-group difference for `--compare`.
    #[arg(long, default_value_t = 2e-6)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Members on each side; every one is in both tables.
    #[arg(long, default_value_t = 10_000)]
    pub members: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub keys: KeyArgs,
    #[command(flatten)]
    pub estimator: EstimatorArgs,
    #[arg(long, default_value = "p2-learns")]
    pub output_mode: OutputMode,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Where to write the timing table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}
