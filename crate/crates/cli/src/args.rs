use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

const ENSEMBLE_CSV: &str = "\
Outputs (in --out):
  rho.csv              t,rho,stderr
  correlations.csv     d,c,stderr        stationary spatial correlation
  autocorrelation.csv  lag,a,stderr      stationary temporal autocorrelation
  initial_correlations.csv d,c,stderr    spatial correlation of the t = 0 row
  series.json          the full observable series with decay fits
  manifest.json";

const SCAN_CSV: &str = "\
Outputs (in --out):
  phase.csv  eps,rho_neg_start,stderr_neg,rho_pos_start,stderr_pos,gap
  manifest.json";

const PCA_CSV: &str = "\
Outputs (in --out):
  pca_curves.csv    eps,cml_rho,cml_stderr,pca_rho,pca_stderr
  pca_compare.json  flip statistics, curves and the eps = 0 path check
  manifest.json";

const CLUSTER_CSV: &str = "\
Outputs (in --out):
  --enumerate:  clusters.json (one object per cluster), multiplicities.csv
                seeds,n_d,n_v,n_h,count,bound
  otherwise:    cluster.json, geometry.json, overlay.txt, signs.rle
  manifest.json";

const CONSTANTS_CSV: &str = "\
Outputs (in --out):
  ledger.json, convergence.json, peierls.json (when alpha' < 1/9)
  with --grid:  ledger.csv, one row per (s, eps)
  manifest.json";

const TRANSFER_CSV: &str = "\
Outputs (in --out):
  transfer.json  map constants, invariant densities, Lasota-Yorke checks, decay fit
  ulam.csv       row,col,p (only with --ulam-bins)
  manifest.json";

#[derive(Parser, Debug)]
#[command(name = "cmllab", version, about = "Coupled map lattice laboratory", propagate_version = true)]
pub struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Directory for data files and the run manifest.
    #[arg(long, global = true, value_name = "DIR", default_value = "cmllab-out")]
    pub out: PathBuf,

    /// Seed. Falls back to the config file, then CMLLAB_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Print the resolved config, defaults included, and exit.
    #[arg(long, global = true)]
    pub dry_run: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run an ensemble and write the order parameter and correlations.
    #[command(after_help = ENSEMBLE_CSV)]
    Simulate(SimulateArgs),
    /// Stationary order parameter from both pure starts over an eps grid.
    #[command(after_help = SCAN_CSV)]
    Scan(ScanArgs),
    /// Compare the lattice sign process with Stavskaya's automaton.
    #[command(after_help = PCA_CSV)]
    PcaCompare(PcaArgs),
    /// Build a cluster from a sampled orbit, or enumerate all small clusters.
    #[command(after_help = CLUSTER_CSV)]
    Clusters(ClusterArgs),
    /// Constants ledger for a map and coupling strength.
    #[command(after_help = CONSTANTS_CSV)]
    Constants(ConstantsArgs),
    /// Transfer operator diagnostics for the local map.
    #[command(after_help = TRANSFER_CSV)]
    Transfer(TransferArgs),
    /// Run an ensemble and fit correlation decay.
    #[command(after_help = ENSEMBLE_CSV)]
    Correlations(EnsembleArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Scan(_) => "scan",
            Command::PcaCompare(_) => "pca-compare",
            Command::Clusters(_) => "clusters",
            Command::Constants(_) => "constants",
            Command::Transfer(_) => "transfer",
            Command::Correlations(_) => "correlations",
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum InitialArg {
    AllNegativeLebesgue,
    AllPositiveInvariant,
    Mixture,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScalarArg {
    Exact,
    F64,
    F32,
}

impl ScalarArg {
    fn json(self) -> Value {
        json!(match self {
            ScalarArg::Exact => "exact",
            ScalarArg::F64 => "f64",
            ScalarArg::F32 => "f32",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Process {
    /// The coupled map lattice.
    #[default]
    Cml,
    /// Stavskaya's probabilistic cellular automaton.
    Pca,
}

fn put<T: serde::Serialize>(obj: &mut Map<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        obj.insert(key.to_string(), serde_json::to_value(v).expect("plain value"));
    }
}

fn put_map(obj: &mut Map<String, Value>, s: Option<u64>) {
    if let Some(s) = s {
        obj.insert("map".into(), json!({"family": "bernoulli", "s": s}));
    }
}

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    /// Ring size L.
    #[arg(long)]
    pub size: Option<usize>,
    /// Number of steps T.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub replicas: Option<usize>,
    /// Coupling strength.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Slope of the Bernoulli local map.
    #[arg(long)]
    pub s: Option<u64>,
    #[arg(long, value_enum)]
    pub initial: Option<InitialArg>,
    /// Positive weight of the mixture start (implies --initial mixture).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Largest distance for spatial correlations.
    #[arg(long)]
    pub d_max: Option<usize>,
    /// Largest lag for temporal correlations.
    #[arg(long)]
    pub max_lag: Option<usize>,
    #[arg(long, value_enum)]
    pub scalar: Option<ScalarArg>,
    /// Cap on L·T·R.
    #[arg(long)]
    pub max_site_updates: Option<u64>,
}

impl EnsembleArgs {
    pub fn apply(&self, obj: &mut Map<String, Value>) {
        put(obj, "size", self.size);
        put(obj, "horizon", self.horizon);
        put(obj, "replicas", self.replicas);
        put(obj, "eps", self.eps);
        put_map(obj, self.s);
        put(obj, "burn_in", self.burn_in);
        put(obj, "d_max", self.d_max);
        put(obj, "max_lag", self.max_lag);
        put(obj, "max_site_updates", self.max_site_updates);
        if let Some(k) = self.scalar {
            obj.insert("scalar".into(), k.json());
        }
        match (self.initial, self.alpha) {
            (Some(InitialArg::AllNegativeLebesgue), _) => {
                obj.insert("initial".into(), json!("all_negative_lebesgue"));
            }
            (Some(InitialArg::AllPositiveInvariant), _) => {
                obj.insert("initial".into(), json!("all_positive_invariant"));
            }
            (Some(InitialArg::Mixture), a) | (None, a @ Some(_)) => {
                obj.insert("initial".into(), json!({"mixture": {"alpha": a.unwrap_or(0.5)}}));
            }
            (None, None) => {}
        }
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    /// Which process to run.
    #[arg(long, value_enum)]
    pub process: Option<Process>,
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    /// Comma-separated eps values.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct PcaArgs {
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub replicas: Option<usize>,
    /// eps at which conditional flip frequencies are measured.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub s: Option<u64>,
    #[arg(long, value_enum)]
    pub scalar: Option<ScalarArg>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Positive weight of the uniform-within-half start.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fewest conditional events for the flip test to count.
    #[arg(long)]
    pub min_events: Option<u64>,
    /// Comma-separated eps values for the stationary curves.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

impl PcaArgs {
    pub fn apply(&self, obj: &mut Map<String, Value>) {
        put(obj, "size", self.size);
        put(obj, "horizon", self.horizon);
        put(obj, "replicas", self.replicas);
        put(obj, "flip_eps", self.eps);
        put_map(obj, self.s);
        put(obj, "burn_in", self.burn_in);
        put(obj, "flip_alpha", self.alpha);
        put(obj, "min_events", self.min_events);
        put(obj, "eps_grid", self.grid.clone());
        if let Some(k) = self.scalar {
            obj.insert("scalar".into(), k.json());
        }
    }
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    /// List every cluster for the given seed count and horizon.
    #[arg(long)]
    pub enumerate: bool,
    /// Number of seed sites when enumerating.
    #[arg(long)]
    pub lambda_size: Option<usize>,
    /// Time of the seed row.
    #[arg(long)]
    pub n: Option<usize>,
    /// Largest cluster the enumeration may produce.
    #[arg(long)]
    pub max_points: Option<usize>,
    /// Ring size of the sampled orbit.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub s: Option<u64>,
    #[arg(long, value_enum)]
    pub scalar: Option<ScalarArg>,
    /// Positive weight of the initial mixture of the sampled orbit.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Comma-separated seed sites (default: first positive site at time n).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub lambda: Option<Vec<i64>>,
}

impl ClusterArgs {
    pub fn apply(&self, obj: &mut Map<String, Value>) {
        if self.enumerate {
            obj.insert("enumerate".into(), json!(true));
        }
        put(obj, "lambda_size", self.lambda_size);
        put(obj, "n", self.n);
        put(obj, "max_points", self.max_points);
        put(obj, "size", self.size);
        put(obj, "eps", self.eps);
        put_map(obj, self.s);
        put(obj, "alpha", self.alpha);
        put(obj, "lambda", self.lambda.clone());
        if let Some(k) = self.scalar {
            obj.insert("scalar".into(), k.json());
        }
    }
}

#[derive(Args, Debug)]
pub struct ConstantsArgs {
    /// Slope of the Bernoulli local map.
    #[arg(long)]
    pub s: Option<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Decay prefactor; needs --varsigma as well.
    #[arg(long)]
    pub c: Option<f64>,
    /// Decay rate; needs --c as well.
    #[arg(long)]
    pub varsigma: Option<f64>,
    #[arg(long)]
    pub gamma: Option<u32>,
    #[arg(long)]
    pub n_window: Option<u32>,
    /// alpha of the initial measure class.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// sigma for the convergence conditions.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Seed-set size for the contour-sum bound.
    #[arg(long)]
    pub lambda_size: Option<u32>,
    /// Comma-separated eps values; emits a CSV ledger grid.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Comma-separated slopes for the grid (default: --s).
    #[arg(long, value_delimiter = ',')]
    pub grid_s: Option<Vec<u64>>,
}

impl ConstantsArgs {
    pub fn apply(&self, obj: &mut Map<String, Value>) {
        put_map(obj, self.s);
        put(obj, "eps", self.eps);
        put(obj, "c", self.c);
        put(obj, "varsigma", self.varsigma);
        put(obj, "gamma", self.gamma);
        put(obj, "n_window", self.n_window);
        put(obj, "alpha", self.alpha);
        put(obj, "sigma", self.sigma);
        put(obj, "lambda_size", self.lambda_size);
        put(obj, "grid_eps", self.grid.clone());
        put(obj, "grid_s", self.grid_s.clone());
    }
}

#[derive(Args, Debug)]
pub struct TransferArgs {
    #[arg(long)]
    pub s: Option<u64>,
    /// Largest power of the operator in the decay fit.
    #[arg(long)]
    pub m_max: Option<usize>,
    /// Largest power in the Lasota-Yorke checks.
    #[arg(long)]
    pub lasota_m: Option<usize>,
    /// Bins of the Ulam matrix (0 skips it).
    #[arg(long)]
    pub ulam_bins: Option<usize>,
}

impl TransferArgs {
    pub fn apply(&self, obj: &mut Map<String, Value>) {
        put_map(obj, self.s);
        put(obj, "m_max", self.m_max);
        put(obj, "lasota_m", self.lasota_m);
        put(obj, "ulam_bins", self.ulam_bins);
    }
}
