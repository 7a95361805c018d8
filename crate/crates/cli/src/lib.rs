//! Command-line driver: odometry, SLAM, simulation and evaluation.
//!
//! Every subcommand takes `--config FILE` (TOML), repeated `--set key=value`
//! overrides, `--profile` and `--seed`. Configuration is resolved as profile
//! defaults, then the file, then the overrides.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use ct_icp::evaluation::{evaluate, MetricReport};
use ct_icp::geometry::{Pose, TrajectoryFrame};
use ct_icp::io::{read_trajectory, write_kitti_poses, write_pose_list, write_ply, write_points_ply, write_trajectory, scan_file_name, ScanDirectory, ScanReadOptions};
use ct_icp::loop_closure::{LoopClosureConfig, LoopConstraint};
use ct_icp::pipeline::{run_odometry, PipelineConfig, Profile, ScanReport};
use ct_icp::pose_graph::GraphConfig;
use ct_icp::sim::{make_scenario, SCENARIO_NAMES};
use ct_icp::slam::{run_slam, DriftConfig, SlamConfig};
use serde::{Deserialize, Serialize};

/// Environment variable holding the log filter (`error` .. `trace`).
pub const LOG_ENV: &str = "CT_ICP_LOG";

/// Exit code for unreadable input or bad usage.
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputConfig {
    /// Apply the 0.205 degree vertical correction of KITTI-family data.
    pub kitti_correction: bool,
    /// Derive per-point timing from azimuth when a scan has none.
    pub estimate_timestamps: bool,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self { kitti_correction: false, estimate_timestamps: true }
    }
}

/// Everything configurable from files and `--set`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub pipeline: PipelineConfig,
    pub loop_closure: LoopClosureConfig,
    pub graph: GraphConfig,
    pub drift: DriftConfig,
    /// Thinning cell for scans kept for grid building, meters.
    pub grid_sample_cell: f64,
    pub input: InputConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self::for_profile(Profile::Driving)
    }
}

impl Config {
    pub fn for_profile(profile: Profile) -> Self {
        let slam = SlamConfig::default();
        Self {
            pipeline: PipelineConfig::for_profile(profile),
            loop_closure: slam.loop_closure,
            graph: slam.graph,
            drift: slam.drift,
            grid_sample_cell: slam.grid_sample_cell,
            input: InputConfig::default(),
        }
    }

    pub fn slam(&self) -> SlamConfig {
        SlamConfig {
            pipeline: self.pipeline,
            loop_closure: self.loop_closure,
            graph: self.graph,
            drift: self.drift,
            grid_sample_cell: self.grid_sample_cell,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Keys that are unset by default and therefore absent from the dump.
const OPTIONAL_KEYS: [&str; 1] = ["loop_closure.ground_z"];

/// Keys whose default is the reference setting of the method.
const REFERENCE_KEYS: [(&str, &str); 16] = [
    ("pipeline.map.voxel_size", "1.0 driving, 0.80 high-frequency"),
    ("pipeline.map.max_points_per_voxel", "20"),
    ("pipeline.map.min_point_distance", "0.1"),
    ("pipeline.solver.beta_loc", "0.001"),
    ("pipeline.solver.beta_vel", "0.001"),
    ("pipeline.solver.max_iterations", "5"),
    ("pipeline.solver.trans_tol", "0.001"),
    ("pipeline.solver.rot_tol", "0.01"),
    ("pipeline.solver.knn", "20"),
    ("pipeline.solver.search_ring", "1 (27 voxels)"),
    ("pipeline.robust.max_insert_rotation_deg", "5"),
    ("loop_closure.n_map", "100"),
    ("loop_closure.n_overlap", "30"),
    ("loop_closure.z_band", "10"),
    ("loop_closure.ground_margin", "slightly below the ground"),
    ("input.kitti_correction", "0.205 deg when enabled"),
];

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, toml::Value)>) {
    for (key, value) in table {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match value {
            toml::Value::Table(t) => flatten(&path, t, out),
            v => out.push((path, v.clone())),
        }
    }
}

/// `key = default` lines for every configuration key.
pub fn config_keys_help() -> String {
    let mut text = String::from("Configuration keys (--set key=value, or the same keys in a TOML file).\nDefaults are for the driving profile; * marks reference settings.\n\n");
    let mut keys = Vec::new();
    let table = toml::Table::try_from(Config::default()).expect("config serializes");
    flatten("", &table, &mut keys);
    for (key, value) in keys {
        let note = REFERENCE_KEYS.iter().find(|(k, _)| *k == key).map(|(_, n)| format!("  * {n}")).unwrap_or_default();
        let _ = writeln!(text, "  {key} = {value}{note}");
    }
    for key in OPTIONAL_KEYS {
        let _ = writeln!(text, "  {key} = <unset: estimated>");
    }
    let _ = write!(text, "\nLog verbosity: {LOG_ENV}=error|warn|info|debug|trace.");
    text
}

fn lookup<'a>(table: &'a toml::Table, path: &[&str]) -> Option<&'a toml::Value> {
    let (first, rest) = path.split_first()?;
    let value = table.get(*first)?;
    if rest.is_empty() {
        Some(value)
    } else {
        lookup(value.as_table()?, rest)
    }
}

fn set_path(table: &mut toml::Table, path: &[&str], value: toml::Value) {
    let (first, rest) = path.split_first().expect("non-empty key");
    if rest.is_empty() {
        table.insert(first.to_string(), value);
    } else {
        let child = table
            .entry(first.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if let toml::Value::Table(t) = child {
            set_path(t, rest, value);
        }
    }
}

fn check_key(defaults: &toml::Table, key: &str) -> anyhow::Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let known = match lookup(defaults, &parts) {
        Some(v) => !v.is_table(),
        None => OPTIONAL_KEYS.contains(&key),
    };
    if !known {
        bail!("unknown configuration key `{key}` (see --help for the list)");
    }
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Resolves the configuration: profile defaults, then `file`, then
/// `overrides` (`key=value`).
pub fn resolve_config(profile: Option<Profile>, file: Option<&Path>, overrides: &[String]) -> anyhow::Result<Config> {
    let file_table = match file {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => toml::Table::new(),
    };
    let mut assignments = Vec::new();
    flatten("", &file_table, &mut assignments);
    for item in overrides {
        let (key, raw) = item.split_once('=').with_context(|| format!("override `{item}` is not key=value"))?;
        assignments.push((key.trim().to_string(), parse_value(raw.trim())));
    }
    let profile = match profile {
        Some(p) => p,
        None => match assignments.iter().rev().find(|(k, _)| k == "pipeline.profile") {
            Some((_, v)) => v.as_str().unwrap_or_default().parse()?,
            None => Profile::Driving,
        },
    };
    let mut table = toml::Table::try_from(Config::for_profile(profile)).expect("config serializes");
    let defaults = table.clone();
    for (key, value) in assignments {
        check_key(&defaults, &key)?;
        let parts: Vec<&str> = key.split('.').collect();
        set_path(&mut table, &parts, value);
    }
    let mut config: Config = toml::Value::Table(table).try_into().context("invalid configuration value")?;
    config.pipeline.profile = profile;
    Ok(config)
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// Seed for every random choice (simulation noise, injected drift).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Configuration override, repeatable: `--set pipeline.solver.knn=30`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Parameter profile.
    #[arg(long, value_parser = parse_profile)]
    pub profile: Option<Profile>,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse().map_err(|e: ct_icp::Error| e.to_string())
}

impl CommonArgs {
    fn config(&self) -> anyhow::Result<Config> {
        resolve_config(self.profile, self.config.as_deref(), &self.overrides)
    }
}

#[derive(Debug, Args, Clone)]
pub struct RunArgs {
    /// Scan directory: `.ply` / `.bin` files, directly or under `scans/`.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Only process the first N scans.
    #[arg(long)]
    pub max_scans: Option<usize>,
    /// Also write the final local map as `map.ply`.
    #[arg(long)]
    pub export_map: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Subcommand, Clone)]
pub enum Command {
    /// Runs odometry over a scan directory.
    Odometry(RunArgs),
    /// Runs odometry with loop closure and pose-graph optimization.
    Slam {
        #[command(flatten)]
        run: RunArgs,
        /// Also write every elevation grid as a PGM image.
        #[arg(long)]
        export_grids: bool,
    },
    /// Writes the scans and ground truth of a synthetic scenario.
    Simulate {
        /// One of: straight_corridor, curved_town_loop, shaky_handheld, yaw_jump.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario's scan count.
        #[arg(long)]
        num_scans: Option<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compares an estimated trajectory with ground truth.
    Eval {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// Directory for the x,y path files; defaults to the estimate's.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Parser, Clone)]
#[command(name = "ct-icp", version, about = "Continuous-time LiDAR odometry, loop closure and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Error carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

fn input_error(error: anyhow::Error) -> Failure {
    Failure { code: EXIT_INPUT, error }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

impl From<ct_icp::Error> for Failure {
    fn from(error: ct_icp::Error) -> Self {
        Failure { code: 1, error: error.into() }
    }
}

fn command() -> clap::Command {
    let help = config_keys_help();
    let mut cmd = Cli::command();
    for name in ["odometry", "slam", "simulate", "eval"] {
        cmd = cmd.mut_subcommand(name, |sub| sub.after_help(help.clone()));
    }
    cmd
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return EXIT_INPUT;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            code
        }
    }
}

fn execute(command: &Command) -> Result<(), Failure> {
    match command {
        Command::Odometry(args) => cmd_odometry(args),
        Command::Slam { run, export_grids } => cmd_slam(run, *export_grids),
        Command::Simulate { scenario, out, num_scans, common } => cmd_simulate(scenario, out, *num_scans, common),
        Command::Eval { estimate, ground_truth, out, common } => cmd_eval(estimate, ground_truth, out.as_deref(), common),
    }
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn open_scans(args: &RunArgs, config: &Config) -> Result<ScanDirectory, Failure> {
    if !args.input.is_dir() {
        return Err(input_error(anyhow::anyhow!("input directory {} does not exist", args.input.display())));
    }
    let options = ScanReadOptions {
        kitti_correction: config.input.kitti_correction,
        estimate_timestamps: config.input.estimate_timestamps,
    };
    ScanDirectory::open(&args.input, options).map_err(|e| input_error(e.into()))
}

fn scan_iter<'a>(dir: &'a ScanDirectory, max: Option<usize>) -> impl Iterator<Item = ct_icp::Result<ct_icp::Scan>> + 'a {
    dir.iter::<f64>().take(max.unwrap_or(usize::MAX))
}

fn write_timing(path: &Path, reports: &[ScanReport]) -> anyhow::Result<()> {
    let mut text = String::from("scan_index,elapsed_ms,num_points,num_keypoints,iterations,retried,inserted,orientation_change_deg,location_gap,map_size,failure\n");
    for r in reports {
        let _ = writeln!(
            text,
            "{},{:.3},{},{},{},{},{},{:.4},{:.4},{},{}",
            r.scan_index,
            r.elapsed_ms,
            r.num_points,
            r.num_keypoints,
            r.solve.as_ref().map_or(0, |s| s.iterations),
            r.retried,
            r.inserted,
            r.orientation_change_deg,
            r.location_gap,
            r.map_size_after,
            r.failure.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    write_text(path, &text)
}

#[derive(Debug, Serialize)]
struct RunSummary {
    scans: usize,
    failures: usize,
    retries: usize,
    not_inserted: usize,
    mean_ms_per_scan: f64,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_map: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_overlap: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grids: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_loop: Option<usize>,
}

impl RunSummary {
    fn new(reports: &[ScanReport], seed: u64) -> Self {
        let n = reports.len().max(1) as f64;
        Self {
            scans: reports.len(),
            failures: reports.iter().filter(|r| r.failure.is_some()).count(),
            retries: reports.iter().filter(|r| r.retried).count(),
            not_inserted: reports.iter().filter(|r| !r.inserted).count(),
            mean_ms_per_scan: reports.iter().map(|r| r.elapsed_ms).sum::<f64>() / n,
            seed,
            n_map: None,
            n_overlap: None,
            grids: None,
            n_loop: None,
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    write_text(path, &(text + "\n"))
}

fn write_frames(out: &Path, stem: &str, frames: &[TrajectoryFrame<f64>], alpha: f64) -> anyhow::Result<()> {
    write_trajectory(&out.join(format!("{stem}.txt")), frames)?;
    write_kitti_poses(&out.join(format!("{stem}_kitti.txt")), frames, alpha)?;
    Ok(())
}

/// Runs odometry over `args.input` and writes its outputs.
pub fn cmd_odometry(args: &RunArgs) -> Result<(), Failure> {
    let config = args.common.config().map_err(input_error)?;
    let scans = open_scans(args, &config)?;
    create_dir(&args.out)?;
    write_text(&args.out.join("config.toml"), &config.to_toml())?;
    let odometry = run_odometry(scan_iter(&scans, args.max_scans), config.pipeline)?;
    write_frames(&args.out, "trajectory", odometry.frames(), config.pipeline.metric_alpha)?;
    write_timing(&args.out.join("timing.csv"), odometry.reports())?;
    if args.export_map {
        let points: Vec<_> = odometry.map().points().copied().collect();
        write_points_ply(&args.out.join("map.ply"), points.iter())?;
    }
    let summary = RunSummary::new(odometry.reports(), args.common.seed);
    write_json(&args.out.join("summary.json"), &summary)?;
    println!(
        "{} scans, {} failures, {:.1} ms/scan -> {}",
        summary.scans,
        summary.failures,
        summary.mean_ms_per_scan,
        args.out.display()
    );
    Ok(())
}

fn write_loops(path: &Path, loops: &[LoopConstraint]) -> anyhow::Result<()> {
    let mut text = String::from("grid_a,grid_b,anchor_scan_a,anchor_scan_b,x,y,z,yaw_deg,score,overlap\n");
    for l in loops {
        let t = l.relative.translation;
        let _ = writeln!(
            text,
            "{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
            l.grid_a,
            l.grid_b,
            l.anchor_scan_a,
            l.anchor_scan_b,
            t.x,
            t.y,
            t.z,
            l.relative.yaw().to_degrees(),
            l.score,
            l.overlap
        );
    }
    write_text(path, &text)
}

/// Runs odometry with loop closure and writes pre- and post-optimization
/// trajectories, the loop list and the pose graph.
pub fn cmd_slam(args: &RunArgs, export_grids: bool) -> Result<(), Failure> {
    let mut config = args.common.config().map_err(input_error)?;
    config.drift.seed = args.common.seed;
    let scans = open_scans(args, &config)?;
    create_dir(&args.out)?;
    write_text(&args.out.join("config.toml"), &config.to_toml())?;
    let result = run_slam(scan_iter(&scans, args.max_scans), &config.slam())?;
    let alpha = config.pipeline.metric_alpha;
    write_frames(&args.out, "trajectory_pre_lc", &result.odometry, alpha)?;
    write_frames(&args.out, "trajectory", &result.optimized, alpha)?;
    write_loops(&args.out.join("loops.csv"), &result.loops)?;
    write_timing(&args.out.join("timing.csv"), &result.reports)?;
    if let Some(graph) = &result.graph {
        let path = args.out.join("pose_graph.g2o");
        let file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        let mut file = std::io::BufWriter::new(file);
        graph.write_g2o(&mut file).and_then(|_| file.flush()).with_context(|| format!("writing {}", path.display()))?;
    }
    if export_grids {
        let dir = args.out.join("grids");
        create_dir(&dir)?;
        for (k, grid) in result.elevation_grids.iter().enumerate() {
            grid.write_pgm(&dir.join(format!("grid_{k:03}.pgm")))?;
        }
    }
    let mut summary = RunSummary::new(&result.reports, args.common.seed);
    summary.n_map = Some(config.loop_closure.n_map);
    summary.n_overlap = Some(config.loop_closure.n_overlap);
    summary.grids = Some(result.grids.len());
    summary.n_loop = Some(result.loops.len());
    write_json(&args.out.join("summary.json"), &summary)?;
    println!(
        "N_map={} N_overlap={}: {} scans, {} grids, N_loop={} -> {}",
        config.loop_closure.n_map,
        config.loop_closure.n_overlap,
        summary.scans,
        result.grids.len(),
        result.loops.len(),
        args.out.display()
    );
    Ok(())
}

/// Writes `scans/NNNNNN.ply` and the ground truth of a scenario.
pub fn cmd_simulate(name: &str, out: &Path, num_scans: Option<usize>, common: &CommonArgs) -> Result<(), Failure> {
    let mut scenario = make_scenario(name).map_err(|e| {
        input_error(anyhow::anyhow!("{e}; expected one of {}", SCENARIO_NAMES.join(", ")))
    })?;
    if let Some(n) = num_scans {
        scenario = scenario.with_num_scans(n);
    }
    let scans_dir = out.join("scans");
    create_dir(&scans_dir)?;
    let mut truth = Vec::with_capacity(scenario.num_scans);
    for index in 0..scenario.num_scans {
        let (scan, frame) = scenario.simulate(index, common.seed);
        write_ply(&scans_dir.join(scan_file_name(index)), &scan)?;
        truth.push(frame);
    }
    write_frames(out, "ground_truth", &truth, 0.5)?;
    write_json(
        &out.join("scenario.json"),
        &serde_json::json!({
            "scenario": scenario.name,
            "num_scans": scenario.num_scans,
            "seed": common.seed,
            "sensor": scenario.sensor,
        }),
    )?;
    println!("{} scans of {} -> {}", scenario.num_scans, scenario.name, out.display());
    Ok(())
}

fn write_xy(path: &Path, poses: &[Pose<f64>]) -> anyhow::Result<()> {
    let mut text = String::from("x,y\n");
    for p in poses {
        let _ = writeln!(text, "{:?},{:?}", p.translation.x, p.translation.y);
    }
    write_text(path, &text)
}

/// Metrics of `estimate` against `ground_truth`, both read as trajectory files.
pub fn evaluate_files(estimate: &Path, ground_truth: &Path, alpha: f64) -> anyhow::Result<(MetricReport, Vec<Pose<f64>>, Vec<Pose<f64>>)> {
    let est = read_trajectory(estimate)?.poses(alpha);
    let gt = read_trajectory(ground_truth)?.poses(alpha);
    if est.len() != gt.len() {
        bail!("estimate has {} poses, ground truth {}", est.len(), gt.len());
    }
    Ok((evaluate(&est, &gt)?, est, gt))
}

/// Prints RTE and ATE and writes x,y path files.
pub fn cmd_eval(estimate: &Path, ground_truth: &Path, out: Option<&Path>, common: &CommonArgs) -> Result<(), Failure> {
    let config = common.config().map_err(input_error)?;
    for path in [estimate, ground_truth] {
        if !path.is_file() {
            return Err(input_error(anyhow::anyhow!("{} does not exist", path.display())));
        }
    }
    let (report, est, gt) = evaluate_files(estimate, ground_truth, config.pipeline.metric_alpha).map_err(input_error)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| estimate.parent().unwrap_or(Path::new(".")).to_path_buf());
    create_dir(&out)?;
    write_xy(&out.join("estimate_xy.csv"), &est)?;
    write_xy(&out.join("ground_truth_xy.csv"), &gt)?;
    write_json(&out.join("metrics.json"), &report)?;
    let fmt = |v: Option<f64>, unit: &str| v.map_or("n/a".to_string(), |v| format!("{v:.4} {unit}"));
    println!("poses        {}", report.num_poses);
    println!("path length  {:.1} m", report.path_length_m);
    println!("RTE          {} ({} segments)", fmt(report.rte_percent, "%"), report.rte_segments);
    println!("ATE          {}", fmt(report.ate_m, "m"));
    println!("{}", serde_json::to_string(&report).context("serializing metrics")?);
    Ok(())
}

/// Writes a value as pose lines, for tests and tooling.
pub fn write_poses(path: &Path, poses: &[Pose<f64>]) -> anyhow::Result<()> {
    Ok(write_pose_list(path, poses)?)
}
