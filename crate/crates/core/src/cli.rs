//! Command-line front end.
//!
//! Every command writes its artifacts, a snapshot of the effective config
//! (`config.toml`) and a `manifest.json` into the `--out` directory. Running the
//! same command again with `--config <out>/config.toml` reproduces the
//! artifacts byte for byte.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 runtime error.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::channel::{synthesize, AntennaSelection, TimeGrid};
use crate::config::{ScenarioConfig, SigmaUnits};
use crate::doa::{sliding_aps, MusicConfig};
use crate::error::{Error, Result};
use crate::io::{complex_cells, fmt_f64, write_tensor, CsvTable, RunManifest};
use crate::rng::{substream, ENSEMBLE_STREAM_BASE, TRACK_STREAM};
use crate::scenario::{build_scenario, Scenario, TrackSet};
use crate::stats::{
    acf_analytic, acf_sample, ccf_analytic, ccf_partner, ccf_sample, ensemble, k_factor_track, modulus_with_se,
    power_track, Ensemble, KFactor,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const TENSOR_FILE: &str = "channel.cir";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_SNAPSHOT: &str = "config.toml";

/// Largest CCF spacing written by `stats ccf`, in elements.
const CCF_MAX_SPACING: usize = 20;
/// Largest ACF lag written by `stats acf`, in time samples.
const ACF_MAX_LAG: usize = 32;

#[derive(Debug, Parser)]
#[command(name = "gbsm", version, about = "Non-stationary massive-MIMO channel simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize one CIR tensor.
    Generate(Common),
    /// Channel statistics as CSV.
    Stats {
        #[command(subcommand)]
        kind: StatsKind,
    },
    /// Sliding-window MUSIC AoD spectrum.
    Aps(ApsArgs),
    /// Cluster visibility and power along the BS array.
    Evolve(EvolveArgs),
}

#[derive(Debug, Subcommand)]
pub enum StatsKind {
    Acf(StatsArgs),
    Ccf(StatsArgs),
    Power(StatsArgs),
    Kfactor(StatsArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario TOML; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Monte-Carlo runs (ACF/CCF) or track draws (power/K-factor).
    #[arg(long)]
    pub runs: Option<usize>,
    /// Tap index, 0 = LOS.
    #[arg(long, default_value_t = 1)]
    pub tap: usize,
    /// BS reference antennas (1-based).
    #[arg(long, value_delimiter = ',')]
    pub ref_antennas: Option<Vec<usize>>,
    /// Cluster shadow sigmas in dB, one output block each.
    #[arg(long, value_delimiter = ',')]
    pub sigma_db: Option<Vec<f64>>,
    #[arg(long)]
    pub empirical: bool,
    #[arg(long)]
    pub analytic: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ApsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Single tap instead of the composite over all taps.
    #[arg(long)]
    pub tap: Option<usize>,
    #[arg(long, default_value_t = crate::doa::DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long, default_value_t = 1)]
    pub step: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EvolveArgs {
    #[command(flatten)]
    pub common: Common,
    /// Force every cluster visible on every antenna.
    #[arg(long)]
    pub all_visible: bool,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli, &argv) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Generate(c) => c,
        Command::Stats { kind } => match kind {
            StatsKind::Acf(a) | StatsKind::Ccf(a) | StatsKind::Power(a) | StatsKind::Kfactor(a) => &a.common,
        },
        Command::Aps(a) => &a.common,
        Command::Evolve(a) => &a.common,
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Generate(_) => "generate",
        Command::Stats { kind } => match kind {
            StatsKind::Acf(_) => "stats acf",
            StatsKind::Ccf(_) => "stats ccf",
            StatsKind::Power(_) => "stats power",
            StatsKind::Kfactor(_) => "stats kfactor",
        },
        Command::Aps(_) => "aps",
        Command::Evolve(_) => "evolve",
    }
}

/// Loads the config; every failure here counts as a configuration error.
fn load_config(c: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &c.config {
        Some(p) => ScenarioConfig::load(p).map_err(|e| match e {
            Error::Io { path, source } => Error::config("--config", format!("{}: {source}", path.display())),
            other => other,
        })?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Files written so far; removed again if the command fails.
struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    fn csv(&mut self, name: &str, table: &CsvTable) -> Result<()> {
        let p = self.path(name);
        table.write(&p)
    }

    fn cleanup(&self) {
        for p in &self.written {
            let _ = std::fs::remove_file(p);
        }
    }

    fn names(&self) -> Vec<PathBuf> {
        self.written
            .iter()
            .map(|p| p.strip_prefix(&self.dir).unwrap_or(p).to_path_buf())
            .collect()
    }
}

pub fn execute(cli: &Cli, argv: &[String]) -> Result<RunManifest> {
    let started = Instant::now();
    let c = common(&cli.command);
    let cfg = load_config(c)?;
    std::fs::create_dir_all(&c.out).map_err(|e| Error::io(&c.out, e))?;
    let mut out = Outputs {
        dir: c.out.clone(),
        written: Vec::new(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(c.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::domain(format!("thread pool: {e}")))?;

    let res = pool.install(|| {
        let snapshot = out.path(CONFIG_SNAPSHOT);
        crate::io::atomic_write(&snapshot, cfg.to_toml_string().as_bytes())?;
        match &cli.command {
            Command::Generate(_) => cmd_generate(&cfg, &mut out),
            Command::Stats { kind } => match kind {
                StatsKind::Acf(a) => cmd_acf(&cfg, a, &mut out),
                StatsKind::Ccf(a) => cmd_ccf(&cfg, a, &mut out),
                StatsKind::Power(a) => cmd_tracks(&cfg, a, false, &mut out),
                StatsKind::Kfactor(a) => cmd_tracks(&cfg, a, true, &mut out),
            },
            Command::Aps(a) => cmd_aps(&cfg, a, &mut out),
            Command::Evolve(a) => cmd_evolve(&cfg, a, &mut out),
        }
    });
    let manifest = res.and_then(|_| {
        let m = RunManifest {
            version: env!("CARGO_PKG_VERSION").into(),
            command: command_name(&cli.command).into(),
            argv: argv.to_vec(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            config: cfg.to_toml_string(),
            artifacts: out.names(),
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        };
        let p = out.path(MANIFEST_FILE);
        m.write(&p)?;
        Ok(m)
    });
    if manifest.is_err() {
        out.cleanup();
    }
    manifest
}

fn time_grid(cfg: &ScenarioConfig, scn: &Scenario) -> Result<TimeGrid> {
    let base = TimeGrid::default_for(scn, cfg.time.samples);
    match cfg.time.step {
        Some(step) => TimeGrid::new(cfg.time.start, step, cfg.time.samples),
        None => TimeGrid::new(cfg.time.start, base.step, base.count),
    }
}

/// Random stream of the `draw`-th large-scale track set; draw 0 is the one
/// used by `generate`, `aps` and `evolve`.
pub fn track_stream(draw: usize) -> u64 {
    if draw == 0 {
        TRACK_STREAM
    } else {
        ENSEMBLE_STREAM_BASE + draw as u64
    }
}

fn base_tracks(cfg: &ScenarioConfig, scn: &Scenario) -> Result<TrackSet> {
    scn.draw_tracks(&mut substream(cfg.seed, TRACK_STREAM))
}

fn table(kind: &str, cfg: &ScenarioConfig, columns: &[&str]) -> CsvTable {
    let mut t = CsvTable::new(kind, columns);
    t.set_meta("seed", cfg.seed).set_meta("config_hash", cfg.hash());
    t
}

fn cmd_generate(cfg: &ScenarioConfig, out: &mut Outputs) -> Result<()> {
    let scn = build_scenario(cfg)?;
    let tracks = base_tracks(cfg, &scn)?;
    let grid = time_grid(cfg, &scn)?;
    let mut r = synthesize(&scn, &tracks, &grid)?;
    r.provenance = Some((cfg.seed, TRACK_STREAM));
    let p = out.path(TENSOR_FILE);
    write_tensor(&p, &r, Some(cfg.hash()))
}

/// Which estimators to run: analytic only unless `--empirical` is given.
fn estimators(a: &StatsArgs) -> (bool, bool) {
    (a.analytic || !a.empirical, a.empirical)
}

const DEFAULT_RUNS: usize = 1000;

fn check_runs(runs: usize) -> Result<usize> {
    if runs < 2 {
        return Err(Error::config("--runs", "Monte-Carlo estimates need at least 2 runs"));
    }
    Ok(runs)
}

fn check_tap(scn: &Scenario, tap: usize) -> Result<()> {
    if tap >= scn.num_taps() {
        return Err(Error::config("--tap", format!("tap {tap} outside 0..{}", scn.num_taps())));
    }
    Ok(())
}

fn check_antennas(scn: &Scenario, refs: &[usize]) -> Result<()> {
    if refs.is_empty() || refs.iter().any(|&p| p == 0 || p > scn.tx.num_elements) {
        return Err(Error::config(
            "--ref-antennas",
            format!("indices must lie in 1..={}", scn.tx.num_elements),
        ));
    }
    Ok(())
}

fn cmd_acf(cfg: &ScenarioConfig, a: &StatsArgs, out: &mut Outputs) -> Result<()> {
    let scn = build_scenario(cfg)?;
    check_tap(&scn, a.tap)?;
    let refs = a.ref_antennas.clone().unwrap_or_else(|| vec![1]);
    check_antennas(&scn, &refs)?;
    let grid = time_grid(cfg, &scn)?;
    let lags: Vec<usize> = (0..=ACF_MAX_LAG.min(grid.count - 1)).collect();
    let lag_s: Vec<f64> = lags.iter().map(|&l| l as f64 * grid.step).collect();
    let q = 1;
    let (analytic, empirical) = estimators(a);
    let mut t = table(
        "acf",
        cfg,
        &["estimator", "tap", "tx_antenna", "rx_antenna", "lag_s", "re", "im", "abs", "se"],
    );
    t.set_meta("tap", a.tap);
    for &p in &refs {
        let prefix = |est: &str| vec![est.to_string(), a.tap.to_string(), p.to_string(), q.to_string()];
        if analytic {
            let s = acf_analytic(&scn, a.tap, p, q, &lag_s)?;
            for (x, v) in lag_s.iter().zip(&s.values) {
                let mut row = prefix("analytic");
                row.push(fmt_f64(*x));
                row.extend(complex_cells(*v));
                row.push(String::new());
                t.push(row);
            }
        }
        if empirical {
            let runs = check_runs(a.runs.unwrap_or(DEFAULT_RUNS))?;
            t.set_meta("samples", runs);
            let sel = AntennaSelection { rx: vec![q], tx: vec![p] };
            let ens = Ensemble::new(&scn, grid, sel, cfg.seed)?;
            let per = ens.map(runs, |r| acf_sample(r, q, p, a.tap, &lags, None))?;
            for (i, x) in lag_s.iter().enumerate() {
                let col: Vec<_> = per.iter().map(|v| v[i]).collect();
                let st = ensemble(&col)?;
                let mut row = prefix("monte-carlo");
                row.push(fmt_f64(*x));
                row.extend(complex_cells(st.mean));
                row.push(fmt_f64(st.se()));
                t.push(row);
            }
        }
    }
    out.csv("acf.csv", &t)
}

fn cmd_ccf(cfg: &ScenarioConfig, a: &StatsArgs, out: &mut Outputs) -> Result<()> {
    let scn = build_scenario(cfg)?;
    check_tap(&scn, a.tap)?;
    let m = scn.tx.num_elements;
    let refs = a.ref_antennas.clone().unwrap_or_else(|| vec![1, 64.min(m), m]);
    check_antennas(&scn, &refs)?;
    let spacings: Vec<usize> = (0..=CCF_MAX_SPACING.min(m - 1)).collect();
    let grid = time_grid(cfg, &scn)?;
    let t0 = TimeGrid::new(grid.start, grid.step, 1)?;
    let (analytic, empirical) = estimators(a);
    let mut t = table(
        "ccf",
        cfg,
        &[
            "estimator",
            "tap",
            "ref_antenna",
            "partner",
            "spacing",
            "spacing_wavelengths",
            "re",
            "im",
            "abs",
            "se",
            "abs_se",
        ],
    );
    t.set_meta("tap", a.tap).set_meta("time_s", fmt_f64(t0.start));
    let pairs: Vec<(usize, usize, usize)> = refs
        .iter()
        .flat_map(|&p| spacings.iter().map(move |&k| (p, k, ccf_partner(p, k, m))))
        .collect();
    let norm = scn.tx.spacing / scn.wavelength;
    let prefix = |est: &str, (p, k, pp): (usize, usize, usize)| {
        vec![
            est.to_string(),
            a.tap.to_string(),
            p.to_string(),
            pp.to_string(),
            k.to_string(),
            fmt_f64(k as f64 * norm),
        ]
    };
    if analytic {
        for &pair in &pairs {
            let v = ccf_analytic(&scn, a.tap, (pair.0, pair.2), (1, 1), t0.start)?;
            let mut row = prefix("analytic", pair);
            row.extend(complex_cells(v));
            row.extend([String::new(), String::new()]);
            t.push(row);
        }
    }
    if empirical {
        let runs = check_runs(a.runs.unwrap_or(DEFAULT_RUNS))?;
        t.set_meta("samples", runs);
        let mut tx: Vec<usize> = pairs.iter().flat_map(|&(p, _, pp)| [p, pp]).collect();
        tx.sort_unstable();
        tx.dedup();
        let ens = Ensemble::new(&scn, t0, AntennaSelection { rx: vec![1], tx }, cfg.seed)?;
        let per = ens.map(runs, |r| {
            pairs
                .iter()
                .map(|&(p, _, pp)| ccf_sample(r, a.tap, (p, pp), (1, 1), 0))
                .collect::<Result<Vec<_>>>()
        })?;
        for (i, &pair) in pairs.iter().enumerate() {
            let col: Vec<_> = per.iter().map(|v| v[i]).collect();
            let st = ensemble(&col)?;
            let (_, abs_se) = modulus_with_se(&col)?;
            let mut row = prefix("monte-carlo", pair);
            row.extend(complex_cells(st.mean));
            row.extend([fmt_f64(st.se()), fmt_f64(abs_se)]);
            t.push(row);
        }
    }
    out.csv("ccf.csv", &t)
}

/// Config with the cluster and LOS shadow sigma set to `sigma_db`.
pub fn with_sigma_db(cfg: &ScenarioConfig, sigma_db: f64) -> ScenarioConfig {
    let mut c = cfg.clone();
    c.large_scale.shadow_sigma = sigma_db;
    c.large_scale.shadow_sigma_units = SigmaUnits::Db;
    c.large_scale.los_shadow_sigma = None;
    c
}

fn cmd_tracks(cfg: &ScenarioConfig, a: &StatsArgs, kfactor: bool, out: &mut Outputs) -> Result<()> {
    let sigmas = a
        .sigma_db
        .clone()
        .unwrap_or_else(|| vec![cfg.large_scale.sigma_db()]);
    if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::config("--sigma-db", "sigmas must be finite and non-negative"));
    }
    let draws = a.runs.unwrap_or(1);
    if draws == 0 {
        return Err(Error::config("--runs", "need at least one track draw"));
    }
    let (kind, columns): (&str, &[&str]) = if kfactor {
        ("kfactor", &["sigma_db", "draw", "antenna", "k_factor", "k_factor_db", "infinite"])
    } else {
        ("power", &["sigma_db", "draw", "antenna", "power", "power_db"])
    };
    let mut t = table(kind, cfg, columns);
    t.set_meta("draws", draws);
    for &sigma in &sigmas {
        // same seed and streams for every sigma: common random numbers
        let scn = build_scenario(&with_sigma_db(cfg, sigma))?;
        let sampler = scn.track_sampler()?;
        for d in 0..draws {
            let tracks = sampler.sample(&mut substream(cfg.seed, track_stream(d)));
            let head = |p: usize| vec![fmt_f64(sigma), d.to_string(), p.to_string()];
            if kfactor {
                for (i, k) in k_factor_track(&scn, &tracks).iter().enumerate() {
                    let mut row = head(i + 1);
                    match k {
                        KFactor::Finite(v) => row.extend([fmt_f64(*v), fmt_f64(10.0 * v.log10()), "0".into()]),
                        KFactor::Infinite => row.extend(["inf".into(), "inf".into(), "1".into()]),
                    }
                    t.push(row);
                }
            } else {
                for (i, p) in power_track(&scn, &tracks).iter().enumerate() {
                    let mut row = head(i + 1);
                    row.extend([fmt_f64(*p), fmt_f64(10.0 * p.log10())]);
                    t.push(row);
                }
            }
        }
    }
    out.csv(&format!("{kind}.csv"), &t)
}

fn cmd_aps(cfg: &ScenarioConfig, a: &ApsArgs, out: &mut Outputs) -> Result<()> {
    let scn = build_scenario(cfg)?;
    if let Some(tap) = a.tap {
        check_tap(&scn, tap)?;
    }
    let mcfg = MusicConfig {
        window_size: a.window,
        window_step: a.step,
        tap: a.tap,
        ..MusicConfig::for_array(&scn.tx, scn.wavelength)
    };
    mcfg.validate(scn.tx.num_elements)
        .map_err(|e| Error::config("--window", e.to_string()))?;
    let tracks = base_tracks(cfg, &scn)?;
    let grid = time_grid(cfg, &scn)?;
    let sel = AntennaSelection {
        rx: vec![1],
        tx: (1..=scn.tx.num_elements).collect(),
    };
    let r = crate::channel::synthesize_links(&scn, &tracks, &grid, &sel, crate::channel::DEFAULT_MEMORY_BUDGET)?;
    let aps = sliding_aps(&r, 1, &mcfg)?;
    let mut t = table("aps", cfg, &["window_start", "angle_deg", "power_db"]);
    t.set_meta("window", a.window)
        .set_meta("step", a.step)
        .set_meta("tap", a.tap.map_or("all".to_string(), |x| x.to_string()))
        .set_meta("windows", aps.window_positions.len())
        .set_meta("angles", aps.angles.len())
        .set_meta("snapshots", aps.snapshots)
        .set_meta("rank_warning", aps.rank_warning)
        .set_meta("angle_reference", "array axis");
    for (row, w) in aps.spectrum.iter().zip(&aps.window_positions) {
        for (theta, v) in aps.angles.iter().zip(row) {
            t.push(vec![w.to_string(), fmt_f64(theta.to_degrees()), fmt_f64(*v)]);
        }
    }
    out.csv("aps.csv", &t)
}

/// `10 log10(P_c xi^2 Pi^2)`, `-inf` where the cluster is invisible.
pub fn evolution_power_db(mean_power: f64, xi: f64, visible: bool) -> f64 {
    let v = if visible { 1.0 } else { 0.0 };
    10.0 * (mean_power * xi * xi * v).log10()
}

fn cmd_evolve(cfg: &ScenarioConfig, a: &EvolveArgs, out: &mut Outputs) -> Result<()> {
    let scn = build_scenario(cfg)?;
    let mut tracks = base_tracks(cfg, &scn)?;
    if a.all_visible {
        for tr in &mut tracks.clusters {
            tr.visible.fill(true);
        }
    }
    let mut t = table("evolve", cfg, &["cluster", "antenna", "visible", "xi", "mean_power", "power_db"]);
    t.set_meta("all_visible", a.all_visible);
    for (c, tr) in scn.clusters.iter().zip(&tracks.clusters) {
        for p in 0..tr.len() {
            t.push(vec![
                c.index.to_string(),
                (p + 1).to_string(),
                u8::from(tr.visible[p]).to_string(),
                fmt_f64(tr.xi[p]),
                fmt_f64(c.mean_power),
                fmt_f64(evolution_power_db(c.mean_power, tr.xi[p], tr.visible[p])),
            ]);
        }
    }
    out.csv("evolve.csv", &t)
}

/// Reads an output directory's manifest.
pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    RunManifest::read(&dir.join(MANIFEST_FILE))
}
