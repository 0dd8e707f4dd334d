use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::CommandFactory;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use cmllab::clusters::{analyze_geometry, build_cluster, enumerate_clusters, path_multiplicities};
use cmllab::constants::{
    check_convergence_conditions, compute_ledger, decay_panel, fitted_decay_pair, peierls_series_bound, DecaySource,
    LedgerParams, LEDGER_CSV_HEADER,
};
use cmllab::lattice::record_signs;
use cmllab::montecarlo::pca::{compare_cml_pca, pca_run, PcaCompareConfig};
use cmllab::montecarlo::{run_ensemble, scan_epsilon, Estimate, InitialSampler};
use cmllab::transfer::{
    apply_transfer, estimate_decay, invariant_density, lasota_yorke_check, ulam_matrix, FixedPointOptions,
};
use cmllab::{
    CouplingParams, EnsembleConfig, Error, Exact, ExactBernoulli, Half, InitialCondition, LatticeState, MapSpec,
    ObservableSeries, ScalarKind, SignField, SiteValue,
};

use crate::args::{Cli, Command, Process};
use crate::fields;
use crate::output::{Csv, Output, RunManifest};

const SEED_ENV: &str = "CMLLAB_SEED";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub ensemble: EnsembleConfig,
    pub grid: Vec<f64>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            ensemble: EnsembleConfig::default(),
            grid: vec![0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub enumerate: bool,
    pub lambda_size: usize,
    pub n: usize,
    pub max_points: usize,
    pub size: usize,
    pub eps: f64,
    pub map: MapSpec,
    pub scalar: ScalarKind,
    pub seed: u64,
    /// Positive weight of the uniform-within-half start.
    pub alpha: f64,
    pub lambda: Option<Vec<i64>>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            enumerate: false,
            lambda_size: 1,
            n: 8,
            max_points: 24,
            size: 64,
            eps: 0.3,
            map: MapSpec::bernoulli(4),
            scalar: ScalarKind::Exact,
            seed: 0,
            alpha: 0.5,
            lambda: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsConfig {
    pub map: MapSpec,
    pub eps: f64,
    /// `(c, ς)` override; both or neither. Fitted from the transfer operator otherwise.
    pub c: Option<f64>,
    pub varsigma: Option<f64>,
    pub gamma: u32,
    pub n_window: u32,
    pub alpha: f64,
    pub sigma: f64,
    pub lambda_size: u32,
    pub grid_eps: Option<Vec<f64>>,
    pub grid_s: Option<Vec<u64>>,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        Self {
            map: MapSpec::bernoulli(250),
            eps: 1e-4,
            c: None,
            varsigma: None,
            gamma: 8,
            n_window: 4,
            alpha: 0.0,
            sigma: 0.9,
            lambda_size: 1,
            grid_eps: None,
            grid_s: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub map: MapSpec,
    pub m_max: usize,
    pub lasota_m: usize,
    pub ulam_bins: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            map: MapSpec::bernoulli(4),
            m_max: 8,
            lasota_m: 6,
            ulam_bins: 0,
        }
    }
}

enum Job {
    Simulate(EnsembleConfig, Process),
    Correlations(EnsembleConfig),
    Scan(ScanConfig),
    Pca(PcaCompareConfig),
    Clusters(ClusterConfig),
    Constants(ConstantsConfig),
    Transfer(TransferConfig),
}

impl Job {
    fn config_json(&self) -> Value {
        let v = match self {
            Job::Simulate(c, p) => {
                let mut v = serde_json::to_value(c);
                if let Ok(Value::Object(m)) = &mut v {
                    m.insert("process".into(), json!(p));
                }
                v
            }
            Job::Correlations(c) => serde_json::to_value(c),
            Job::Scan(c) => serde_json::to_value(c),
            Job::Pca(c) => serde_json::to_value(c),
            Job::Clusters(c) => serde_json::to_value(c),
            Job::Constants(c) => serde_json::to_value(c),
            Job::Transfer(c) => serde_json::to_value(c),
        };
        v.expect("configs serialize")
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Job::Simulate(c, _) | Job::Correlations(c) => Some(c.seed),
            Job::Scan(c) => Some(c.ensemble.seed),
            Job::Pca(c) => Some(c.seed),
            Job::Clusters(c) => Some(c.seed),
            Job::Constants(_) | Job::Transfer(_) => None,
        }
    }
}

/// Usage-level failure: bad flags, unreadable or invalid config.
struct Usage(String);

fn load_object(cli: &Cli) -> Result<Map<String, Value>, Usage> {
    let Some(path) = &cli.config else {
        return Ok(Map::new());
    };
    let text = fs::read_to_string(path).map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Usage(format!("config {} must hold a JSON object", path.display()))),
        Err(e) => Err(Usage(format!("config {}: {e}", path.display()))),
    }
}

/// Flag first, then the config file, then the environment.
fn resolve_seed(obj: &mut Map<String, Value>, flag: Option<u64>) -> Result<(), Usage> {
    if let Some(s) = flag {
        obj.insert("seed".into(), json!(s));
    } else if !obj.contains_key("seed") {
        if let Ok(text) = std::env::var(SEED_ENV) {
            let s: u64 = text
                .trim()
                .parse()
                .map_err(|_| Usage(format!("{SEED_ENV} must be an unsigned integer, got `{text}`")))?;
            obj.insert("seed".into(), json!(s));
        }
    }
    Ok(())
}

fn parse<T: DeserializeOwned>(obj: Map<String, Value>) -> Result<T, Usage> {
    serde_json::from_value(Value::Object(obj)).map_err(|e| Usage(format!("invalid config: {e}")))
}

fn checked(cfg: &EnsembleConfig) -> Result<(), Usage> {
    usage_unless_budget(cfg.validate())
}

fn usage_unless_budget(r: cmllab::Result<()>) -> Result<(), Usage> {
    match r {
        // a budget overrun is a run failure, reported with a manifest
        Ok(()) | Err(Error::BudgetExceeded(_)) => Ok(()),
        Err(e) => Err(Usage(format!("invalid config: {e}"))),
    }
}

fn prepare(cli: &Cli) -> Result<Job, Usage> {
    let mut obj = load_object(cli)?;
    Ok(match &cli.command {
        Command::Simulate(a) => {
            a.ensemble.apply(&mut obj);
            resolve_seed(&mut obj, cli.seed)?;
            let process = match obj.remove("process") {
                Some(v) => serde_json::from_value(v).map_err(|e| Usage(format!("invalid config: process: {e}")))?,
                None => Process::default(),
            };
            let process = a.process.unwrap_or(process);
            let cfg: EnsembleConfig = parse(obj)?;
            checked(&cfg)?;
            Job::Simulate(cfg, process)
        }
        Command::Correlations(a) => {
            a.apply(&mut obj);
            resolve_seed(&mut obj, cli.seed)?;
            let cfg: EnsembleConfig = parse(obj)?;
            checked(&cfg)?;
            Job::Correlations(cfg)
        }
        Command::Scan(a) => {
            let mut ens = match obj.remove("ensemble") {
                Some(Value::Object(m)) => m,
                Some(_) => return Err(Usage("config key `ensemble` must be an object".into())),
                None => Map::new(),
            };
            a.ensemble.apply(&mut ens);
            resolve_seed(&mut ens, cli.seed)?;
            obj.insert("ensemble".into(), Value::Object(ens));
            if let Some(g) = &a.grid {
                obj.insert("grid".into(), json!(g));
            }
            let cfg: ScanConfig = parse(obj)?;
            checked(&cfg.ensemble)?;
            Job::Scan(cfg)
        }
        Command::PcaCompare(a) => {
            a.apply(&mut obj);
            resolve_seed(&mut obj, cli.seed)?;
            let cfg: PcaCompareConfig = parse(obj)?;
            usage_unless_budget(cfg.validate())?;
            Job::Pca(cfg)
        }
        Command::Clusters(a) => {
            a.apply(&mut obj);
            resolve_seed(&mut obj, cli.seed)?;
            Job::Clusters(parse(obj)?)
        }
        Command::Constants(a) => {
            a.apply(&mut obj);
            let cfg: ConstantsConfig = parse(obj)?;
            if cfg.c.is_some() != cfg.varsigma.is_some() {
                return Err(Usage("--c and --varsigma must be given together".into()));
            }
            Job::Constants(cfg)
        }
        Command::Transfer(a) => {
            a.apply(&mut obj);
            Job::Transfer(parse(obj)?)
        }
    })
}

/// Runs the subcommand and returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    let name = cli.command.name();
    let usage = |msg: &str| {
        let mut cmd = Cli::command();
        cmd.build();
        let text = cmd
            .find_subcommand_mut(name)
            .map(|c| c.render_usage().to_string())
            .unwrap_or_default();
        eprintln!("error: {msg}\n\n{text}\n\nFor more information, try 'cmllab {name} --help'.");
        1
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return usage("--threads must be at least 1");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return usage(&format!("cannot start {n} worker threads: {e}"));
        }
    }
    let job = match prepare(&cli) {
        Ok(j) => j,
        Err(Usage(msg)) => return usage(&msg),
    };
    if cli.dry_run {
        emit(&(serde_json::to_string_pretty(&job.config_json()).expect("configs serialize") + "\n"));
        return 0;
    }

    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let mut out = Output::new(&cli.out);
    let result = execute(&job, &mut out);
    let manifest = RunManifest {
        subcommand: name.to_string(),
        config: job.config_json(),
        seed: job.seed(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: out.files().to_vec(),
        status: if result.is_ok() { "ok" } else { "error" }.to_string(),
        error: result.as_ref().err().map(|e| e.to_string()),
        started_unix_seconds: started,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
    };
    let written = serde_json::to_string_pretty(&manifest)
        .map_err(|e| e.to_string())
        .and_then(|text| {
            fs::create_dir_all(out.dir()).map_err(|e| e.to_string())?;
            fs::write(out.dir().join("manifest.json"), text + "\n").map_err(|e| e.to_string())
        });
    match (result, written) {
        (Ok(stdout), Ok(())) => {
            emit(&stdout);
            0
        }
        (Ok(_), Err(e)) => {
            eprintln!("error: cannot write manifest: {e}");
            2
        }
        (Err(e), _) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// Writes to stdout, tolerating a closed pipe.
fn emit(text: &str) {
    let mut lock = std::io::stdout().lock();
    let _ = lock.write_all(text.as_bytes()).and_then(|()| lock.flush());
}

type Run = cmllab::Result<String>;

fn execute(job: &Job, out: &mut Output) -> Run {
    match job {
        Job::Simulate(cfg, Process::Cml) => ensemble_outputs(&run_ensemble(cfg)?, out, false),
        Job::Simulate(cfg, Process::Pca) => ensemble_outputs(&pca_run(cfg)?, out, false),
        Job::Correlations(cfg) => ensemble_outputs(&run_ensemble(cfg)?, out, true),
        Job::Scan(cfg) => scan(cfg, out),
        Job::Pca(cfg) => pca(cfg, out),
        Job::Clusters(cfg) if cfg.enumerate => enumerate(cfg, out),
        Job::Clusters(cfg) => sample_cluster(cfg, out),
        Job::Constants(cfg) => constants(cfg, out),
        Job::Transfer(cfg) => transfer(cfg, out),
    }
}

fn estimates_csv(header: &str, values: &[Estimate]) -> String {
    let mut csv = Csv::new(header);
    for (i, e) in values.iter().enumerate() {
        csv.row(fields![i, e.value, e.stderr]);
    }
    csv.finish()
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes") + "\n"
}

fn ensemble_outputs(series: &ObservableSeries, out: &mut Output, fits_only: bool) -> Run {
    out.write("rho.csv", &estimates_csv("t,rho,stderr", &series.rho))?;
    out.write("correlations.csv", &estimates_csv("d,c,stderr", &series.spatial))?;
    out.write("autocorrelation.csv", &estimates_csv("lag,a,stderr", &series.temporal))?;
    out.write(
        "initial_correlations.csv",
        &estimates_csv("d,c,stderr", &series.initial_spatial),
    )?;
    out.write_json("series.json", series)?;
    let fits = json!({
        "stationary_rho": series.stationary_rho,
        "spatial_fit": series.spatial_fit,
        "temporal_fit": series.temporal_fit,
    });
    if fits_only {
        out.write_json("fits.json", &fits)?;
        return Ok(pretty(&fits));
    }
    Ok(pretty(&json!({
        "stationary_rho": series.stationary_rho,
        "final_rho": series.rho.last(),
    })))
}

fn scan(cfg: &ScanConfig, out: &mut Output) -> Run {
    let points = scan_epsilon(&cfg.ensemble, &cfg.grid)?;
    let mut csv = Csv::new("eps,rho_neg_start,stderr_neg,rho_pos_start,stderr_pos,gap");
    for p in &points {
        csv.row(fields![
            p.eps,
            p.negative_start.value,
            p.negative_start.stderr,
            p.positive_start.value,
            p.positive_start.stderr,
            p.gap
        ]);
    }
    let text = csv.finish();
    out.write("phase.csv", &text)?;
    Ok(text)
}

fn pca(cfg: &PcaCompareConfig, out: &mut Output) -> Run {
    let rep = compare_cml_pca(cfg)?;
    let mut csv = Csv::new("eps,cml_rho,cml_stderr,pca_rho,pca_stderr");
    for c in &rep.curves {
        csv.row(fields![c.eps, c.cml.value, c.cml.stderr, c.pca.value, c.pca.stderr]);
    }
    out.write("pca_curves.csv", &csv.finish())?;
    out.write_json("pca_compare.json", &rep)?;
    Ok(pretty(&json!({"flip": rep.flip, "zero_eps": rep.zero_eps})))
}

fn enumerate(cfg: &ClusterConfig, out: &mut Output) -> Run {
    let clusters = enumerate_clusters(cfg.lambda_size, cfg.n, cfg.max_points)?;
    let listed: Vec<Value> = clusters
        .iter()
        .map(|c| serde_json::from_str(&c.to_json()).expect("cluster json"))
        .collect();
    out.write_json("clusters.json", &listed)?;
    let mut csv = Csv::new("seeds,n_d,n_v,n_h,count,bound");
    for ((seeds, nd, nv, nh), count, bound) in path_multiplicities(&clusters)? {
        let seeds: Vec<String> = seeds.iter().map(i64::to_string).collect();
        csv.row(fields![seeds.join(" "), nd, nv, nh, count, bound]);
    }
    out.write("multiplicities.csv", &csv.finish())?;
    Ok(pretty(&json!({"count": clusters.len(), "clusters": listed})))
}

fn sample_signs(cfg: &ClusterConfig) -> cmllab::Result<SignField> {
    let sampler = InitialSampler::new(InitialCondition::Mixture { alpha: cfg.alpha }, &cfg.map)?;
    fn go<S: SiteValue, D: cmllab::LocalDynamics<S>>(
        sampler: &InitialSampler,
        cfg: &ClusterConfig,
        map: &D,
    ) -> cmllab::Result<SignField> {
        let init: LatticeState<S> = sampler.replica_state(cfg.size, cfg.seed, 0);
        Ok(record_signs(&init, map, &CouplingParams::new(cfg.eps)?, cfg.n))
    }
    match cfg.scalar {
        ScalarKind::Exact => {
            let m = ExactBernoulli::for_map(&cfg.map.build::<f64>()?)?;
            go::<Exact, _>(&sampler, cfg, &m)
        }
        ScalarKind::F64 => go::<f64, _>(&sampler, cfg, &cfg.map.build::<f64>()?),
        ScalarKind::F32 => go::<f32, _>(&sampler, cfg, &cfg.map.build::<f32>()?),
    }
}

fn sample_cluster(cfg: &ClusterConfig, out: &mut Output) -> Run {
    let signs = sample_signs(cfg)?;
    let lambda = match &cfg.lambda {
        Some(l) => l.clone(),
        None => match signs.row(cfg.n).iter().position(|&b| b) {
            Some(p) => vec![p as i64],
            None => {
                return Err(Error::Domain {
                    name: "lambda",
                    reason: format!("no positive site at time {}", cfg.n),
                })
            }
        },
    };
    let cluster = build_cluster(&signs, &lambda, cfg.n)?;
    let geometry = analyze_geometry(&cluster)?;
    let check = geometry.check();
    out.write("signs.rle", &signs.to_rle())?;
    out.write("cluster.json", &(cluster.to_json() + "\n"))?;
    out.write("overlay.txt", &cluster.overlay(&signs))?;
    let report = json!({
        "seeds": cluster.seeds(),
        "points": cluster.len(),
        "boundary": geometry.boundary,
        "c": geometry.c,
        "n_d": geometry.n_d,
        "n_v": geometry.n_v,
        "n_h": geometry.n_h,
        "checks": check,
        "all_hold": check.all(),
    });
    out.write_json("geometry.json", &json!({"summary": report, "path": geometry}))?;
    Ok(pretty(&report))
}

fn ledger_params(cfg: &ConstantsConfig, map: &cmllab::Map64, eps: f64) -> cmllab::Result<LedgerParams<f64>> {
    let (c, varsigma, decay_source) = match (cfg.c, cfg.varsigma) {
        (Some(c), Some(v)) => (c, v, DecaySource::UserOverride),
        _ => {
            let (c, v) = fitted_decay_pair(map)?;
            (c, v, DecaySource::TransferFit)
        }
    };
    Ok(LedgerParams {
        eps,
        c,
        varsigma,
        gamma: cfg.gamma,
        n_window: cfg.n_window,
        alpha: cfg.alpha,
        decay_source,
    })
}

fn constants(cfg: &ConstantsConfig, out: &mut Output) -> Run {
    if cfg.grid_eps.is_some() || cfg.grid_s.is_some() {
        let maps: Vec<MapSpec> = match &cfg.grid_s {
            Some(ss) => ss.iter().map(|&s| MapSpec::bernoulli(s)).collect(),
            None => vec![cfg.map.clone()],
        };
        let eps_list = cfg.grid_eps.clone().unwrap_or_else(|| vec![cfg.eps]);
        let mut text = format!("{LEDGER_CSV_HEADER}\n");
        for spec in &maps {
            let map = spec.build::<f64>()?;
            let base = ledger_params(cfg, &map, cfg.eps)?;
            for &eps in &eps_list {
                let ledger = compute_ledger(&map, &LedgerParams { eps, ..base })?;
                text.push_str(&ledger.csv_row());
                text.push('\n');
            }
        }
        out.write("ledger.csv", &text)?;
        return Ok(text);
    }
    let map = cfg.map.build::<f64>()?;
    let ledger = compute_ledger(&map, &ledger_params(cfg, &map, cfg.eps)?)?;
    out.write_json("ledger.json", &ledger)?;
    out.write_json("convergence.json", &check_convergence_conditions(&ledger, cfg.sigma)?)?;
    if let (Some(k), true) = (ledger.k0, ledger.alpha_prime < 1.0 / 9.0) {
        let bound = peierls_series_bound(ledger.alpha_prime, cfg.lambda_size, k)?;
        out.write_json(
            "peierls.json",
            &json!({"alpha_prime": ledger.alpha_prime, "lambda_size": cfg.lambda_size, "k": k, "bound": bound}),
        )?;
    }
    Ok(pretty(&ledger))
}

fn transfer(cfg: &TransferConfig, out: &mut Output) -> Run {
    let map = cfg.map.build::<f64>()?;
    let mut invariant = BTreeMap::new();
    for (name, half) in [("negative", Half::Negative), ("positive", Half::Positive)] {
        let h = invariant_density(&map, half, FixedPointOptions::default())?;
        let residual = apply_transfer(&map, &h)?.combine(1.0, &h, -1.0).l1();
        invariant.insert(name, json!({"density": h, "fixed_point_residual": residual}));
    }
    let panel = decay_panel::<f64>()?;
    let mut lasota = Vec::new();
    for h in &panel {
        for m in 1..=cfg.lasota_m {
            lasota.push(lasota_yorke_check(&map, h, m)?);
        }
    }
    let decay = estimate_decay(&map, &panel, cfg.m_max)?;
    let report = json!({
        "constants": map.constants(),
        "invariant": invariant,
        "lasota_yorke": lasota,
        "lasota_yorke_all_hold": lasota.iter().all(|r| r.holds),
        "decay": {"c": decay.c, "varsigma": decay.varsigma, "raw_rate": decay.raw_rate, "points": decay.points, "residuals": decay.residuals},
    });
    out.write_json("transfer.json", &report)?;
    if cfg.ulam_bins > 0 {
        let mat = ulam_matrix(&map, cfg.ulam_bins)?;
        let mut csv = Csv::new("row,col,p");
        for (k, p) in mat.iter().enumerate() {
            if *p != 0.0 {
                csv.row(fields![k / cfg.ulam_bins, k % cfg.ulam_bins, p]);
            }
        }
        out.write("ulam.csv", &csv.finish())?;
    }
    Ok(pretty(&json!({
        "constants": report["constants"],
        "lasota_yorke_all_hold": report["lasota_yorke_all_hold"],
        "varsigma": decay.varsigma,
        "c": decay.c,
    })))
}
