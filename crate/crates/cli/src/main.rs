//! `turnpike`: solves the Kepler experiments and writes CSV/JSON results.
//!
//! Every command takes the problem from `--preset` or `--config` and writes
//! below `--out` (default `out`). Failures print one JSON record
//! `{"error": ..., "kind": ...}` on stderr; usage errors such as an unknown
//! preset exit with 2, solver and I/O failures with 1.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use turnpike_core::model::{momentum, write_trajectory_csv};
use turnpike_core::nco::{correspondence_full_from_reduced, full_nco_report, tocp_nco_report};
use turnpike_core::nlp::write_iteration_log;
use turnpike_core::presets::kepler_model_orthogonal;
use turnpike_core::trim::{combined_residual, solve_trim, TrimOptions, TrimUnknown};
use turnpike_core::turnpike::{dissipativity_margin, fit_max_c, turnpike_scan, DissipativitySample};
use turnpike_core::{
    solve_ocp, solve_sop, solve_tocp, ExperimentConfig, KeplerModel, OcpOptions, OcpSolution, OcpSpec, Preset,
    StageCost, State, TrimPoint,
};

#[derive(Parser)]
#[command(name = "turnpike", version, about = "Optimal control experiments on the Kepler problem")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// kepler-fig1, kepler-fig2 or custom; overrides the configuration.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// KKT tolerance of the optimizer.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    max_iter: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the optimal control problem.
    Solve,
    /// Solve T(s, v_θ, u) = 0 for one unknown.
    Trim(TrimArgs),
    /// Steady-state optimization over trims (cyclic forcing removed).
    Sop,
    /// Solve and evaluate the optimality conditions.
    NcoCheck(NcoArgs),
    /// Dwell time outside the turnpike tube over several horizons.
    TurnpikeScan(ScanArgs),
    /// Fit a dissipativity rate to optimal trajectories.
    Dissipativity(DissArgs),
    /// Solve a preset and run the analyses enabled by flags or configuration.
    Run(RunArgs),
}

#[derive(Args)]
struct TrimArgs {
    #[arg(long)]
    s: f64,
    /// Defaults to the circular-orbit speed at `s`.
    #[arg(long)]
    v_theta: Option<f64>,
    /// Control, comma separated; defaults to zero.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    u: Vec<f64>,
    /// shape, v-theta, or u<k> for control component k.
    #[arg(long, default_value = "v-theta")]
    solve_for: String,
}

#[derive(Args, Clone)]
struct NcoArgs {
    /// Also solve the reduced problem and map it to full adjoints.
    #[arg(long)]
    tocp: bool,
    /// Time window `a,b` over which residuals are reported.
    #[arg(long, value_parser = parse_window)]
    window: Option<(f64, f64)>,
    #[arg(long, default_value_t = 1e-3)]
    nco_tol: f64,
}

#[derive(Args, Clone)]
struct ScanArgs {
    /// Horizons, comma separated; defaults to the configuration or T, 2T, 3T.
    #[arg(long, value_delimiter = ',')]
    horizons: Vec<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args, Clone)]
struct DissArgs {
    /// Horizons, comma separated; defaults to the problem's horizon.
    #[arg(long, value_delimiter = ',')]
    horizons: Vec<f64>,
    /// Storage constant.
    #[arg(long, default_value_t = 0.0)]
    storage: f64,
    #[arg(long, default_value_t = 1e-6)]
    margin_tol: f64,
}

#[derive(Args)]
struct RunArgs {
    preset: String,
    #[arg(long)]
    nco_check: bool,
    #[arg(long)]
    tocp: bool,
    #[arg(long)]
    sop: bool,
    #[arg(long)]
    dissipativity: bool,
    #[arg(long)]
    turnpike_scan: bool,
    #[arg(long, value_parser = parse_window)]
    window: Option<(f64, f64)>,
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected a,b")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if a > b {
        return Err(format!("empty window {a},{b}"));
    }
    Ok((a, b))
}

enum CliError {
    Usage(String),
    Failure(String),
}

impl From<turnpike_core::Error> for CliError {
    fn from(e: turnpike_core::Error) -> Self {
        let msg = e.to_string();
        if msg.contains("unknown preset") {
            CliError::Usage(msg)
        } else {
            CliError::Failure(msg)
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failure(format!("io: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Failure(format!("json: {e}"))
    }
}

type CliResult<T> = Result<T, CliError>;

struct Ctx {
    cfg: ExperimentConfig,
    spec: OcpSpec<KeplerModel>,
    out: PathBuf,
    opts: OcpOptions,
}

impl Ctx {
    fn load(common: &Common, preset: Option<&str>) -> CliResult<Self> {
        let mut cfg = match &common.config {
            Some(path) => Some(ExperimentConfig::load(path)?),
            None => None,
        };
        if let Some(name) = preset.or(common.preset.as_deref()) {
            let p = Preset::parse(name)?;
            match cfg.as_mut() {
                Some(c) => c.preset = p,
                None => cfg = Some(ExperimentConfig::from_preset(p)),
            }
        }
        let cfg = cfg.ok_or_else(|| CliError::Usage("no problem given: pass --preset or --config".into()))?;
        let spec = cfg.resolve_spec()?;
        let out = common.out.clone().or_else(|| cfg.out.as_ref().map(PathBuf::from)).unwrap_or_else(|| "out".into());
        fs::create_dir_all(&out)?;
        let mut opts = OcpOptions::default();
        if let Some(t) = common.tol.or(cfg.tol) {
            opts.sqp.tol = t;
        }
        if let Some(m) = common.max_iter.or(cfg.max_iter) {
            opts.sqp.max_iter = m;
        }
        Ok(Self { cfg, spec, out, opts })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let f = BufWriter::new(File::create(self.path(name))?);
        serde_json::to_writer_pretty(f, value)?;
        Ok(())
    }

    fn spec_at(&self, horizon: f64) -> OcpSpec<KeplerModel> {
        let mut spec = self.spec.clone();
        spec.intervals = ((horizon / self.spec.step()).round() as usize).max(1);
        spec.horizon = horizon;
        spec
    }
}

/// Distance used for turnpike and dissipativity: the state deviation from
/// the reference orbit for a quadratic cost, otherwise `√(v_s² + T²)`.
fn turnpike_distance(spec: &OcpSpec<KeplerModel>) -> impl Fn(&State, &[f64]) -> f64 + Sync + Clone {
    let model = spec.model;
    let reference = match &spec.cost {
        StageCost::Quadratic { x_ref, .. } => Some(*x_ref),
        _ => None,
    };
    move |x: &State, u: &[f64]| match reference {
        Some(r) => (x.s - r.s).abs().max((x.v_s - r.v_s).abs()).max((x.v_th - r.v_th).abs()),
        None => combined_residual(&model, x, u, 1.0).unwrap_or(f64::INFINITY),
    }
}

fn write_csv(path: &Path, traj: &turnpike_core::Trajectory) -> CliResult<()> {
    write_trajectory_csv(traj, BufWriter::new(File::create(path)?))?;
    Ok(())
}

fn solve(ctx: &Ctx) -> CliResult<(OcpSolution, Value)> {
    let sol = solve_ocp(&ctx.spec, &ctx.opts)?;
    write_csv(&ctx.path("trajectory.csv"), &sol.trajectory)?;
    write_iteration_log(&sol.history, BufWriter::new(File::create(ctx.path("iterations.csv"))?))?;
    let summary = json!({
        "preset": ctx.cfg.preset.name(),
        "horizon": ctx.spec.horizon,
        "intervals": ctx.spec.intervals,
        "status": sol.status.as_str(),
        "objective": sol.objective,
        "iterations": sol.iterations,
        "kkt": sol.kkt,
        "max_defect": sol.max_defect,
        "solve_seconds": sol.solve_seconds,
    });
    Ok((sol, summary))
}

fn nco(ctx: &Ctx, sol: &OcpSolution, args: &NcoArgs) -> CliResult<Value> {
    let spec = &ctx.spec;
    let full = full_nco_report(&spec.model, &spec.cost, &sol.trajectory, args.window, args.nco_tol)?;
    let mut report = json!({ "window": args.window, "full": full });
    if args.tocp {
        let tocp = solve_tocp(
            &spec.model,
            &spec.cost,
            spec.x0.th,
            spec.x0.v_th,
            spec.horizon,
            spec.intervals,
            spec.x0.s,
            &ctx.opts.sqp,
        )?;
        let traj = tocp.to_trajectory()?.with_costates(tocp.costates_as_full())?;
        write_csv(&ctx.path("tocp_trajectory.csv"), &traj)?;
        let reduced = tocp_nco_report(&spec.model, &spec.cost, &tocp, args.window, args.nco_tol);
        let (_, corr) = correspondence_full_from_reduced(&spec.model, &spec.cost, &tocp, args.window, args.nco_tol)?;
        report["tocp"] = json!({
            "status": tocp.status.as_str(),
            "objective": tocp.objective,
            "s_bar": tocp.s_bar,
            "iterations": tocp.iterations,
            "max_trim_residual": tocp.max_trim_residual,
        });
        report["reduced"] = serde_json::to_value(reduced)?;
        report["correspondence"] = serde_json::to_value(corr)?;
    }
    ctx.write_json("nco_report.json", &report)?;
    Ok(json!({
        "full_max": report["full"]["max_abs"],
        "full_pass": report["full"]["pass"],
        "correspondence_max": report.get("correspondence").map(|c| c["max_abs"].clone()),
    }))
}

fn sop(ctx: &Ctx) -> CliResult<Value> {
    let params = ctx.spec.model.params;
    let model = kepler_model_orthogonal(&params);
    let x0 = ctx.spec.x0;
    let guess = TrimPoint::new(&model, x0.s, x0.v_th, vec![0.0; 2])?;
    let sol = solve_sop(&model, &ctx.spec.cost, &guess, &ctx.opts.sqp)?;
    let value = json!({ "model": "kepler without cyclic forcing", "solution": sol });
    ctx.write_json("sop.json", &value)?;
    Ok(json!({ "status": sol.status.as_str(), "s_bar": sol.s_bar, "v_theta_bar": sol.v_theta_bar, "u_bar": sol.u_bar }))
}

fn scan(ctx: &Ctx, args: &ScanArgs) -> CliResult<Value> {
    let cfg_scan = ctx.cfg.turnpike_scan.as_ref();
    let horizons = if !args.horizons.is_empty() {
        args.horizons.clone()
    } else if let Some(s) = cfg_scan {
        s.horizons.clone()
    } else {
        let t = ctx.spec.horizon;
        vec![t, 2.0 * t, 3.0 * t]
    };
    let eps = args.epsilon.or(cfg_scan.map(|s| s.epsilon)).unwrap_or(0.1);
    let result = turnpike_scan(&ctx.spec, &horizons, eps, turnpike_distance(&ctx.spec), &ctx.opts)?;
    result.write_csv(BufWriter::new(File::create(ctx.path("turnpike.csv"))?))?;
    ctx.write_json("turnpike.json", &result)?;
    if let Some(e) = &result.error {
        return Err(CliError::Failure(format!("turnpike scan: {e}")));
    }
    Ok(json!({ "epsilon": eps, "verdict": result.verdict }))
}

fn dissipativity(ctx: &Ctx, args: &DissArgs) -> CliResult<Value> {
    let horizons = if args.horizons.is_empty() { vec![ctx.spec.horizon] } else { args.horizons.clone() };
    let dist = turnpike_distance(&ctx.spec);
    let mut samples = Vec::new();
    for &t in &horizons {
        let spec = ctx.spec_at(t);
        let sol = solve_ocp(&spec, &ctx.opts)?;
        if !sol.converged() {
            return Err(CliError::Failure(format!("horizon {t}: solver status {}", sol.status)));
        }
        let costs = spec.stage_costs(&sol.trajectory);
        samples.push(DissipativitySample::from_trajectory(&format!("T={t}"), &sol.trajectory, costs, &dist)?);
    }
    let c = fit_max_c(&samples, args.storage, args.margin_tol);
    let cert = c.map(|c| dissipativity_margin(&samples, c.min(1e12), args.storage, args.margin_tol));
    let value = json!({ "fit_max_c": c, "certificate": cert });
    ctx.write_json("dissipativity.json", &value)?;
    Ok(json!({ "fit_max_c": c, "valid": cert.map(|c| c.valid) }))
}

fn trim(common: &Common, args: &TrimArgs) -> CliResult<Value> {
    let params = if common.config.is_some() || common.preset.is_some() {
        Ctx::load(common, None)?.spec.model.params
    } else {
        Default::default()
    };
    let model = turnpike_core::kepler_model(&params);
    let unknown = match args.solve_for.as_str() {
        "shape" => TrimUnknown::Shape,
        "v-theta" => TrimUnknown::CyclicVelocity,
        s => match s.strip_prefix('u').and_then(|k| k.parse().ok()) {
            Some(k) => TrimUnknown::Control(k),
            None => return Err(CliError::Usage(format!("unknown trim unknown {s:?}; use shape, v-theta or u<k>"))),
        },
    };
    let u = if args.u.is_empty() { vec![0.0; 2] } else { args.u.clone() };
    let v = args.v_theta.unwrap_or_else(|| params.circular_speed(args.s));
    let guess = TrimPoint::new(&model, args.s, v, u)?;
    let sol = solve_trim(&model, &guess, unknown, &TrimOptions::default())?;
    let p = &sol.point;
    let value = json!({
        "s": p.s,
        "v_theta": p.v_th,
        "u": p.u,
        "residual": p.residual,
        "p_theta": momentum(&model, &p.state(0.0)),
        "iterations": sol.iterations,
    });
    let out = common.out.clone().unwrap_or_else(|| "out".into());
    fs::create_dir_all(&out)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(out.join("trim.json"))?), &value)?;
    Ok(value)
}

/// Writes the summary and turns a non-converged solve into a failure.
fn finish(ctx: &Ctx, sol: &OcpSolution, summary: &Value) -> CliResult<()> {
    ctx.write_json("summary.json", summary)?;
    println!("{}", serde_json::to_string_pretty(summary)?);
    if sol.converged() {
        Ok(())
    } else {
        Err(CliError::Failure(format!("solver did not converge: status {}", sol.status)))
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let common = &cli.common;
    match cli.command {
        Command::Solve => {
            let ctx = Ctx::load(common, None)?;
            let (sol, summary) = solve(&ctx)?;
            finish(&ctx, &sol, &summary)
        }
        Command::Trim(args) => {
            println!("{}", serde_json::to_string_pretty(&trim(common, &args)?)?);
            Ok(())
        }
        Command::Sop => {
            let ctx = Ctx::load(common, None)?;
            println!("{}", serde_json::to_string_pretty(&sop(&ctx)?)?);
            Ok(())
        }
        Command::NcoCheck(args) => {
            let ctx = Ctx::load(common, None)?;
            let (sol, mut summary) = solve(&ctx)?;
            summary["nco"] = nco(&ctx, &sol, &args)?;
            finish(&ctx, &sol, &summary)
        }
        Command::TurnpikeScan(args) => {
            let ctx = Ctx::load(common, None)?;
            println!("{}", serde_json::to_string_pretty(&scan(&ctx, &args)?)?);
            Ok(())
        }
        Command::Dissipativity(args) => {
            let ctx = Ctx::load(common, None)?;
            println!("{}", serde_json::to_string_pretty(&dissipativity(&ctx, &args)?)?);
            Ok(())
        }
        Command::Run(args) => {
            let ctx = Ctx::load(common, Some(&args.preset))?;
            let cfg = &ctx.cfg;
            let (sol, mut summary) = solve(&ctx)?;
            let tocp = args.tocp || cfg.tocp;
            if args.nco_check || cfg.nco_check || tocp {
                let nco_args = NcoArgs { tocp, window: args.window, nco_tol: 1e-3 };
                summary["nco"] = nco(&ctx, &sol, &nco_args)?;
            }
            if args.sop || cfg.sop {
                summary["sop"] = sop(&ctx)?;
            }
            if args.dissipativity || cfg.dissipativity {
                let d = DissArgs { horizons: Vec::new(), storage: 0.0, margin_tol: 1e-6 };
                summary["dissipativity"] = dissipativity(&ctx, &d)?;
            }
            if args.turnpike_scan || cfg.turnpike_scan.is_some() {
                summary["turnpike_scan"] = scan(&ctx, &ScanArgs { horizons: Vec::new(), epsilon: None })?;
            }
            finish(&ctx, &sol, &summary)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, msg, code) = match e {
                CliError::Usage(m) => ("usage", m, 2),
                CliError::Failure(m) => ("failure", m, 1),
            };
            eprintln!("{}", json!({ "error": msg, "kind": kind }));
            ExitCode::from(code)
        }
    }
}
