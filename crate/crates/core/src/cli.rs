//! Command-line front end: configuration, subcommands and file output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::continuation::{self, Branch, StartAnchor, TraceOptions, Verdict};
use crate::dde::{self, Attractor, History, IntegrateOptions};
use crate::diagram::{self, CurveKind, CurveOptions, DiagramCurve};
use crate::error::{Error, Result};
use crate::model::{self, ModelParams};
use crate::spectral::{self, HopfCatalog, ScanOptions};

#[derive(Debug, Parser)]
#[command(name = "hopfdde", version, about = "Hopf bifurcation analysis of a delayed predator-prey model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form thresholds in K and tau.
    Thresholds(CommonArgs),
    /// Catalog of Hopf critical delays.
    Hopf(CommonArgs),
    /// Integrate one trajectory and classify its attractor.
    Simulate(CommonArgs),
    /// Continue periodic orbits from every Hopf point.
    Branch(CommonArgs),
    /// Curves and regions in the (tau, K) plane.
    Diagram(CommonArgs),
    /// Run the property checks on one parameter set.
    Verify(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON file with dotted keys such as "model.r" or "sim.dt".
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for randomized histories.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Integration step (overrides sim.dt).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Hopf scan grid (hopf, verify), collocation nodes (branch) or region grid (diagram).
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Delay used by `thresholds` (for K_1) and `simulate`.
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub scaled: bool,
    pub x0: Option<f64>,
    pub y0: Option<f64>,
    pub tail_fraction: f64,
    /// Upper bound on trajectory rows written.
    pub max_rows: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: None,
            t_end: None,
            scaled: false,
            x0: None,
            y0: None,
            tail_fraction: 0.25,
            max_rows: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralConfig {
    pub grid: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            grid: ScanOptions::default().grid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BranchConfig {
    /// Restrict to anchors of one branch index.
    pub n: Option<u32>,
    pub nodes: usize,
    pub max_nodes: usize,
    pub max_points: usize,
    pub simulation_fallback: bool,
}

impl Default for BranchConfig {
    fn default() -> Self {
        let t = TraceOptions::default();
        Self {
            n: None,
            nodes: t.nodes,
            max_nodes: t.max_nodes,
            max_points: t.max_points,
            simulation_fallback: t.simulation_fallback,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagramConfig {
    /// Region grid points per axis.
    pub grid: usize,
    pub k_max: Option<f64>,
    pub tau_max: Option<f64>,
    pub n_max: u32,
    /// Delay of the K-direction threshold slice.
    pub slice_tau: Option<f64>,
}

impl Default for DiagramConfig {
    fn default() -> Self {
        Self {
            grid: 40,
            k_max: None,
            tau_max: None,
            n_max: 12,
            slice_tau: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub histories: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { histories: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 42,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub branch: BranchConfig,
    #[serde(default)]
    pub diagram: DiagramConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub run: RunSection,
}

const MODEL_KEYS: [&str; 6] = ["r", "K", "m", "a", "c", "d"];

impl RunConfig {
    pub fn new(model: ModelParams) -> Self {
        Self {
            model,
            analysis: AnalysisConfig::default(),
            sim: SimConfig::default(),
            spectral: SpectralConfig::default(),
            branch: BranchConfig::default(),
            diagram: DiagramConfig::default(),
            verify: VerifyConfig::default(),
            run: RunSection::default(),
        }
    }

    /// Parses a flat JSON object with dotted keys.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let Value::Object(flat) = v else {
            return Err(Error::Config("configuration must be a JSON object".into()));
        };
        let mut nested = Map::new();
        for (key, value) in flat {
            let Some((section, field)) = key.split_once('.') else {
                return Err(Error::Config(format!("key {key:?} has no section prefix")));
            };
            if value.is_null() {
                continue;
            }
            let entry = nested
                .entry(section.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            entry
                .as_object_mut()
                .expect("sections are objects")
                .insert(field.to_string(), value);
        }
        let model = nested.get("model").and_then(Value::as_object);
        for k in MODEL_KEYS {
            if !model.is_some_and(|m| m.contains_key(k)) {
                return Err(Error::Config(format!("missing field model.{k}")));
            }
        }
        let cfg: RunConfig =
            serde_json::from_value(Value::Object(nested)).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model.validated()?;
        Ok(cfg)
    }

    /// Flat dotted-key form; `None` fields are omitted.
    pub fn to_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        let mut flat = Map::new();
        if let Value::Object(sections) = v {
            for (s, body) in sections {
                if let Value::Object(fields) = body {
                    for (f, val) in fields {
                        if !val.is_null() {
                            flat.insert(format!("{s}.{f}"), val);
                        }
                    }
                }
            }
        }
        serde_json::to_string_pretty(&Value::Object(flat)).expect("json")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn apply(&mut self, args: &CommonArgs, grid_target: GridTarget) {
        if let Some(o) = &args.out {
            self.run.out = o.clone();
        }
        if let Some(s) = args.seed {
            self.run.seed = s;
        }
        if let Some(dt) = args.dt {
            self.sim.dt = Some(dt);
        }
        if let Some(g) = args.grid {
            match grid_target {
                GridTarget::Spectral => self.spectral.grid = g,
                GridTarget::Nodes => self.branch.nodes = g,
                GridTarget::Regions => self.diagram.grid = g,
            }
        }
    }

    fn trace_options(&self) -> TraceOptions {
        TraceOptions {
            nodes: self.branch.nodes | 1,
            max_nodes: self.branch.max_nodes,
            max_points: self.branch.max_points,
            simulation_fallback: self.branch.simulation_fallback,
            ..TraceOptions::default()
        }
    }

    fn scan_options(&self) -> ScanOptions {
        ScanOptions {
            grid: self.spectral.grid,
            ..ScanOptions::default()
        }
    }
}

#[derive(Clone, Copy)]
enum GridTarget {
    Spectral,
    Nodes,
    Regions,
}

/// Shortest round-trip form of `x` rounded to 12 significant digits.
pub fn fmt12(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("float");
    let s = format!("{rounded}");
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt12).unwrap_or_else(|| "-".into())
}

/// Parses the arguments and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    configure_threads();
    match run(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("HOPFDDE_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

pub fn run(cmd: &Command) -> Result<i32> {
    let (args, target) = match cmd {
        Command::Thresholds(a) | Command::Simulate(a) => (a, GridTarget::Spectral),
        Command::Hopf(a) | Command::Verify(a) => (a, GridTarget::Spectral),
        Command::Branch(a) => (a, GridTarget::Nodes),
        Command::Diagram(a) => (a, GridTarget::Regions),
    };
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply(args, target);
    let out = Output::create(&cfg.run.out)?;
    out.write("config.json", &cfg.to_json())?;
    match cmd {
        Command::Thresholds(_) => cmd_thresholds(&cfg, &out),
        Command::Hopf(_) => cmd_hopf(&cfg, &out),
        Command::Simulate(_) => cmd_simulate(&cfg, &out),
        Command::Branch(_) => cmd_branch(&cfg, &out),
        Command::Diagram(_) => cmd_diagram(&cfg, &out),
        Command::Verify(_) => cmd_verify(&cfg, &out),
    }
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    fn write(&self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        s.push('\n');
        self.write(name, &s)
    }
}

fn csv<const N: usize>(header: [&str; N], rows: impl IntoIterator<Item = [String; N]>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

#[derive(Debug, Serialize)]
struct ThresholdReport {
    tau: f64,
    #[serde(flatten)]
    thresholds: model::Thresholds,
    tau_star: Option<f64>,
}

fn cmd_thresholds(cfg: &RunConfig, out: &Output) -> Result<i32> {
    let p = &cfg.model;
    let tau = cfg.analysis.tau.unwrap_or(0.0);
    let th = model::thresholds(p, tau)?;
    let report = ThresholdReport {
        tau,
        thresholds: th,
        tau_star: diagram::tau_star(p).ok(),
    };
    let rows = [
        ("K_c", Some(th.k_c)),
        ("K_0", Some(th.k_0)),
        ("K_1", th.k_1),
        ("K_2", Some(th.k_2)),
        ("tau_max", th.tau_max),
        ("tau_bar", th.tau_bar),
        ("tau_breve", th.tau_breve),
        ("tau_star", report.tau_star),
    ];
    let mut text = String::new();
    for (name, v) in rows {
        let _ = writeln!(text, "{name:<10} {:>16}", fmt_opt(v));
    }
    print!("{text}");
    out.write("thresholds.txt", &text)?;
    out.json("thresholds.json", &report)?;
    Ok(0)
}

fn catalog_csv(cat: &HopfCatalog) -> String {
    csv(
        ["n", "i", "tau", "w", "period", "delta", "gamma1"],
        cat.points.iter().map(|h| {
            [
                h.n.to_string(),
                h.i.to_string(),
                fmt12(h.tau),
                fmt12(h.w),
                fmt12(h.period),
                h.delta().to_string(),
                h.gamma1().to_string(),
            ]
        }),
    )
}

fn cmd_hopf(cfg: &RunConfig, out: &Output) -> Result<i32> {
    let cat = spectral::hopf_points(&cfg.model, &cfg.scan_options())?;
    let body = catalog_csv(&cat);
    print!("{body}");
    out.write("hopf_points.csv", &body)?;
    out.json("hopf_catalog.json", &cat)?;
    Ok(0)
}

fn trajectory_csv(traj: &dde::Trajectory, max_rows: usize) -> String {
    let stride = traj.len().div_ceil(max_rows.max(1)).max(1);
    csv(
        ["t", "x", "y"],
        traj.nodes()
            .step_by(stride)
            .map(|(t, x, y)| [fmt12(t), fmt12(x), fmt12(y)]),
    )
}

fn orbit_csv(orbit: &dde::Orbit) -> String {
    csv(
        ["t", "x", "y"],
        orbit.samples.iter().map(|&(t, x, y)| [fmt12(t), fmt12(x), fmt12(y)]),
    )
}

fn cmd_simulate(cfg: &RunConfig, out: &Output) -> Result<i32> {
    let p = &cfg.model;
    let tau = cfg
        .analysis
        .tau
        .ok_or_else(|| Error::Config("missing field analysis.tau".into()))?;
    let history = match (cfg.sim.x0, cfg.sim.y0) {
        (Some(x), Some(y)) => History::constant(x, y)?,
        (None, None) => History::default_for(p, tau),
        _ => return Err(Error::Config("sim.x0 and sim.y0 must be given together".into())),
    };
    let scaled = cfg.sim.scaled && tau > 0.0;
    let mut t_end = cfg.sim.t_end.unwrap_or_else(|| dde::default_t_end(p, tau));
    if scaled && cfg.sim.t_end.is_none() {
        t_end /= tau;
    }
    let traj = dde::integrate_with(
        p,
        tau,
        &history,
        t_end,
        scaled,
        &IntegrateOptions {
            dt: cfg.sim.dt,
            keep_from: None,
        },
    )?;
    out.write("trajectory.csv", &trajectory_csv(&traj, cfg.sim.max_rows))?;
    let region = diagram::classify_region(p, tau, p.k)?;
    let attractor = dde::detect_attractor(&traj, cfg.sim.tail_fraction);
    let mut orbit_json = Value::Null;
    let classification = match &attractor {
        Attractor::Equilibrium { x, y } => {
            if (x - p.k).abs() < 1e-4 && y.abs() < 1e-4 {
                format!("{}, converged to (K,0)", region.as_str())
            } else {
                format!("{}, converged to ({}, {})", region.as_str(), fmt12(*x), fmt12(*y))
            }
        }
        Attractor::Orbit(_) => match dde::extract_orbit(&traj, None) {
            Ok(o) => {
                out.write("orbit.csv", &orbit_csv(&o))?;
                let c = format!("{}, periodic orbit with period {}", region.as_str(), fmt12(o.period));
                orbit_json = json!({
                    "period": o.period, "xmin": o.xmin, "xmax": o.xmax,
                    "ymin": o.ymin, "ymax": o.ymax, "closure": o.closure,
                });
                c
            }
            Err(e) => format!("{}, oscillating ({e})", region.as_str()),
        },
        Attractor::Unresolved => format!("{}, unresolved", region.as_str()),
    };
    println!("{classification}");
    let (xe, ye) = traj.last();
    out.json(
        "trajectory.json",
        &json!({
            "tau": tau,
            "scaled": scaled,
            "dt": traj.dt,
            "t_end": traj.end_time(),
            "history": history,
            "region": region,
            "classification": classification,
            "final_state": [xe, ye],
            "orbit": orbit_json,
        }),
    )?;
    Ok(0)
}

fn branch_label(b: &Branch) -> String {
    match b.start {
        StartAnchor::Hopf(h) => format!("n{}_i{}", h.n, h.i),
        StartAnchor::OdeLimitCycle => "ode".into(),
    }
}

fn branch_csv(b: &Branch) -> String {
    csv(
        ["tau", "period", "amp_x", "amp_y", "xmin", "xmax", "ymin", "ymax"],
        b.points.iter().map(|pt| {
            let o = &pt.orbit;
            [
                fmt12(pt.tau),
                fmt12(o.period),
                fmt12(o.amp_x()),
                fmt12(o.amp_y()),
                fmt12(o.xmin),
                fmt12(o.xmax),
                fmt12(o.ymin),
                fmt12(o.ymax),
            ]
        }),
    )
}

fn cmd_branch(cfg: &RunConfig, out: &Output) -> Result<i32> {
    let p = &cfg.model;
    let cat = spectral::hopf_points(p, &cfg.scan_options())?;
    let opts = cfg.trace_options();
    let results = match cfg.branch.n {
        None => continuation::trace_all(p, &cat, &opts),
        Some(n) => cat
            .branch(n)
            .map(|h| continuation::trace_branch(p, &cat, h, &opts))
            .collect(),
    };
    let mut ok = Vec::new();
    let mut summary = Vec::new();
    for r in results {
        match r {
            Ok(b) => {
                let name = format!("branch_{}.csv", branch_label(&b));
                out.write(&name, &branch_csv(&b))?;
                println!(
                    "{}: {} points, start {} end {:?}",
                    branch_label(&b),
                    b.points.len(),
                    fmt12(b.start_tau()),
                    b.end
                );
                summary.push(json!({
                    "label": branch_label(&b), "file": name, "start": b.start,
                    "end": b.end, "points": b.points.len(), "fold_back": b.fold_back,
                }));
                ok.push(b);
            }
            Err(e) => {
                println!("branch failed: {e}");
                summary.push(json!({ "error": e.to_string() }));
            }
        }
    }
    let report = continuation::assemble_components(p, &cat, &ok);
    out.json("components.json", &json!({ "branches": summary, "components": report }))?;
    Ok(0)
}

fn curve_csv(c: &DiagramCurve) -> String {
    let kind = match c.kind {
        CurveKind::Transcritical => "transcritical".to_string(),
        CurveKind::Hopf(n) => format!("hopf{n}"),
    };
    csv(
        ["tau", "K", "kind"],
        c.points.iter().map(|&(t, k)| [fmt12(t), fmt12(k), kind.clone()]),
    )
}

fn cmd_diagram(cfg: &RunConfig, out: &Output) -> Result<i32> {
    let p = &cfg.model;
    let k0 = p.k_0()?;
    let tau_hi = cfg.diagram.tau_max.unwrap_or(1.05 * diagram::delay_scale(p));
    let k_hi = cfg.diagram.k_max.unwrap_or(4.0 * k0);
    let g = cfg.diagram.grid.max(2);
    let taus: Vec<f64> = (0..g).map(|i| tau_hi * (i as f64 + 0.5) / g as f64).collect();
    let ks: Vec<f64> = (0..g).map(|j| k_hi * (j as f64 + 0.5) / g as f64).collect();

    let fine: Vec<f64> = (0..=400).map(|i| tau_hi * i as f64 / 400.0).collect();
    let lc = diagram::transcritical_curve(p, &fine)?;
    out.write("curve_transcritical.csv", &curve_csv(&lc))?;
    let mut curves = vec![json!({ "kind": lc.kind, "topology": lc.topology, "file": "curve_transcritical.csv" })];

    let copts = CurveOptions::default();
    for n in 0..=cfg.diagram.n_max {
        let comps = diagram::hopf_curves(p, n, &copts)?;
        if comps.is_empty() && n > 0 {
            break;
        }
        for (i, c) in comps.iter().enumerate() {
            let name = format!("curve_hopf_n{n}_{i}.csv");
            out.write(&name, &curve_csv(c))?;
            curves.push(json!({ "kind": c.kind, "topology": c.topology, "file": name, "points": c.points.len() }));
        }
    }

    let grid = diagram::region_grid(p, &taus, &ks)?;
    out.write(
        "regions.csv",
        &csv(
            ["tau", "K", "label"],
            grid.iter().map(|&(t, k, l)| [fmt12(t), fmt12(k), l.as_str().to_string()]),
        ),
    )?;

    let tau_star = diagram::tau_star(p);
    let slice_tau = cfg.diagram.slice_tau.or(cfg.analysis.tau);
    let slice = match slice_tau {
        Some(t) => Some(diagram::hopf_in_k(p, t)?),
        None => None,
    };
    let summary = json!({
        "tau_star": tau_star.as_ref().ok(),
        "tau_star_note": tau_star.as_ref().err().map(|e| e.to_string()),
        "thresholds": model::thresholds(p, slice_tau.unwrap_or(0.0))?,
        "slice_tau": slice_tau,
        "k_hopf": slice,
        "curves": curves,
        "region_grid": { "tau_max": tau_hi, "k_max": k_hi, "points": g },
    });
    out.json("diagram.json", &summary)?;
    if let Ok(ts) = tau_star {
        println!("tau_star {}", fmt12(ts));
    }
    if let Some(s) = &slice {
        for (i, k) in s.iter().enumerate() {
            println!("K_h({}) {} (n = {})", i + 1, fmt12(k.k), k.n);
        }
    }
    Ok(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub status: CheckStatus,
    pub detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Check {
    Check {
        name,
        status: if pass { CheckStatus::Pass } else { CheckStatus::Fail },
        detail,
    }
}

fn skip(name: &'static str, detail: &str) -> Check {
    Check {
        name,
        status: CheckStatus::Skip,
        detail: detail.into(),
    }
}

fn random_history(p: &ModelParams, rng: &mut ChaCha8Rng) -> Result<History> {
    let x = p.k * rng.random_range(0.05..2.0);
    let y = p.k * p.c * rng.random_range(0.05..1.0);
    History::constant(x, y)
}

/// Runs the invariant suite for one parameter set.
pub fn verify_suite(cfg: &RunConfig) -> Vec<Check> {
    let p = &cfg.model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
    let mut checks = Vec::new();

    match (p.k_c(), p.k_2(), p.k_0()) {
        (Ok(kc), Ok(k2), Ok(k0)) => checks.push(check(
            "threshold_order",
            kc < k2 && k2 < k0,
            format!("K_c = {}, K_2 = {}, K_0 = {}", fmt12(kc), fmt12(k2), fmt12(k0)),
        )),
        _ => checks.push(check("threshold_order", false, "c m <= d".into())),
    }

    let cat = spectral::hopf_points(p, &cfg.scan_options());
    match &cat {
        Ok(cat) => {
            let mut worst = 0.0_f64;
            let mut all = true;
            for h in &cat.points {
                match spectral::char_root_refine(p, h.tau, Complex64::new(0.0, h.w)) {
                    Ok(l) => {
                        worst = worst.max(l.re.abs());
                        all &= l.re.abs() < 1e-8 && (l.im - h.w).abs() < 1e-6 * h.w;
                    }
                    Err(_) => all = false,
                }
            }
            checks.push(check(
                "hopf_roots_on_axis",
                all,
                format!("{} points, max |Re| = {worst:.2e}", cat.points.len()),
            ));

            let mut agree = 0;
            for h in &cat.points {
                let eps = 1e-4 * h.tau.max(1.0);
                let drift = spectral::char_root_refine(p, h.tau + eps, Complex64::new(0.0, h.w))
                    .and_then(|a| spectral::char_root_refine(p, h.tau - eps, Complex64::new(0.0, h.w)).map(|b| a.re - b.re));
                if matches!(drift, Ok(d) if (d > 0.0) == (h.delta() > 0)) {
                    agree += 1;
                }
            }
            checks.push(check(
                "transversality_sign",
                agree == cat.points.len(),
                format!("{agree}/{} crossings agree with the root drift", cat.points.len()),
            ));

            let mut bad = Vec::new();
            for i in 1..8 {
                let tau = cat.tau_bar * (i as f64 + 0.37) / 8.5;
                let ell_count = (0..cat.chi.len().max(1) as u32 + 2)
                    .filter(|&n| spectral::ell_n(p, tau, n).is_ok_and(|v| v > 0.0))
                    .count()
                    * 2;
                match spectral::unstable_root_count(p, tau) {
                    Ok(c) if c == ell_count => {}
                    other => bad.push(format!("tau = {}: {:?} vs {ell_count}", fmt12(tau), other.map_err(|e| e.to_string()))),
                }
            }
            checks.push(check("root_count_matches_ell", bad.is_empty(), bad.join("; ")));

            let nest = continuation::nesting_verdict(cat);
            checks.push(Check {
                name: "nesting",
                status: match nest {
                    Verdict::Pass => CheckStatus::Pass,
                    Verdict::Fail => CheckStatus::Fail,
                    Verdict::Inconclusive => CheckStatus::Skip,
                },
                detail: format!("{nest:?}"),
            });
        }
        Err(e) => checks.push(skip("hopf_catalog", &e.to_string())),
    }

    let mut region_bad = 0;
    if let Some(tmax) = p.tau_max() {
        for i in 0..5 {
            for j in 0..5 {
                let tau = tmax * (i as f64 + 0.5) / 5.0;
                let k = p.k * (0.5 + 0.4 * j as f64);
                let Ok(q) = p.with_k(k) else { continue };
                let label = diagram::classify_region(p, tau, k);
                let count = spectral::unstable_root_count(&q, tau);
                let ok = match (label, count) {
                    (Ok(diagram::RegionLabel::Va), Ok(c)) => c >= 2,
                    (Ok(diagram::RegionLabel::Vb), Ok(c)) => c == 0,
                    (Ok(diagram::RegionLabel::Vc), _) => q.tau_max().map_or(true, |t| tau >= t),
                    _ => false,
                };
                region_bad += usize::from(!ok);
            }
        }
        checks.push(check("regions_match_root_count", region_bad == 0, format!("{region_bad} of 25 disagree")));
    }

    let mut pos_fail = Vec::new();
    let tmax = p.tau_max().unwrap_or(10.0);
    for _ in 0..cfg.verify.histories {
        let tau = rng.random_range(0.0..1.5 * tmax);
        let r = random_history(p, &mut rng)
            .and_then(|h| dde::integrate(p, tau, &h, 20.0 * tau.max(1.0), cfg.sim.dt));
        if let Err(e) = r {
            pos_fail.push(format!("tau = {}: {e}", fmt12(tau)));
        }
    }
    checks.push(check("positivity", pos_fail.is_empty(), pos_fail.join("; ")));

    if let Some(tmax) = p.tau_max() {
        let tau = 1.2 * tmax;
        let mut worst = 0.0_f64;
        let mut lyap_ok = true;
        for _ in 0..cfg.verify.histories.min(4) {
            let Ok(h) = random_history(p, &mut rng) else { continue };
            match dde::integrate_scaled(p, tau, &h, 4000.0 / tau, cfg.sim.dt) {
                Ok(tr) => {
                    let (x, y) = tr.last();
                    worst = worst.max((x - p.k).hypot(y));
                    let mut prev = f64::INFINITY;
                    let mut s = 1.0;
                    while s <= tr.end_time() {
                        if let Ok(v) = tr.lyapunov_value(s) {
                            lyap_ok &= v <= prev + 1e-8 * prev.abs().max(1.0);
                            prev = v;
                        }
                        s += 1.0;
                    }
                }
                Err(_) => worst = f64::INFINITY,
            }
        }
        checks.push(check(
            "global_stability_past_tau_max",
            worst < 1e-4 && lyap_ok,
            format!("max distance to (K,0) = {worst:.2e}, Lyapunov nonincreasing: {lyap_ok}"),
        ));
    }
    checks
}

fn cmd_verify(cfg: &RunConfig, out: &Output) -> Result<i32> {
    let checks = verify_suite(cfg);
    let mut text = String::new();
    for c in &checks {
        let tag = match c.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skip => "SKIP",
        };
        let _ = writeln!(text, "{tag} {:<30} {}", c.name, c.detail);
    }
    print!("{text}");
    out.write("verify.txt", &text)?;
    out.json("verify.json", &checks)?;
    let failed = checks.iter().any(|c| c.status == CheckStatus::Fail);
    Ok(if failed { 2 } else { 0 })
}
