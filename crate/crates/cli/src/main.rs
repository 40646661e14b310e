mod output;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gridswitch_core::config::{load_plant, plant_to_toml};
use gridswitch_core::csi::{csi_map, CsiMap, CsiWeights, DEFAULT_RESOLUTION};
use gridswitch_core::equilibrium::solve_equilibrium;
use gridswitch_core::gmm::{r_squared, select_model, GmmModel, DEFAULT_K_MAX};
use gridswitch_core::linearization::{analyze, write_matrix_csv, DEFAULT_EPSILON};
use gridswitch_core::model::{power_outputs, state_names};
use gridswitch_core::presets::{plane_by_name, PlanePreset, PLANE_NAMES};
use gridswitch_core::sssr::{
    fit_sssr, read_ismd_csv, sample_ismd, write_boundary_csv, write_facets, write_ismd_csv, Axis, Ismd, ParamSpace,
    Region, MAX_DIM,
};
use gridswitch_core::switching::{
    build_csi_policy, linear_comparison, overall_verdict, segment_verdicts, simulate, CsiPolicySetup, Scenario,
    SwitchPolicy, DEFAULT_HYSTERESIS, DEFAULT_SCR_THRESHOLD,
};
use gridswitch_core::{Error, Mode, Plant};

use output::{num, OutDir, Report};

#[derive(Parser)]
#[command(name = "gridswitch", version, about = "Stability regions, margin regression and GFL/GFM switching")]
struct Cli {
    /// Plant parameter file (`key = value` per line); defaults apply otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for exported files.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Gfl,
    Gfm,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Gfl => Mode::Gfl,
            ModeArg::Gfm => Mode::Gfm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    None,
    Threshold,
    Csi,
}

#[derive(Args, Clone)]
struct PlaneArgs {
    /// Named plane, e.g. gfl-icl or fig10.
    #[arg(long)]
    plane: Option<String>,
    /// SCR (or current-loop gain for the grid planes) of the named plane.
    #[arg(long)]
    value: Option<f64>,
    /// Subsystem for a custom space.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Custom axis `name:lower:upper`, repeatable.
    #[arg(long = "axis")]
    axes: Vec<String>,
    /// Comma-separated origin for a custom space.
    #[arg(long, value_delimiter = ',')]
    origin: Vec<f64>,
    /// Extra fixed parameter `name=value`, repeatable.
    #[arg(long = "set")]
    fixed: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-3)]
    epsilon_r: f64,
}

#[derive(Args, Clone)]
struct WeightArgs {
    /// CSI weights `w_m,w_s,w_d`.
    #[arg(long, value_delimiter = ',', default_values_t = [0.4, 0.3, 0.3])]
    weights: Vec<f64>,
}

impl WeightArgs {
    fn weights(&self) -> Result<CsiWeights> {
        match self.weights[..] {
            [m, s, d] => Ok(CsiWeights::new(m, s, d)?),
            _ => Err(Error::Config(format!("--weights needs three values, got {}", self.weights.len())).into()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Operating point of one subsystem.
    Equilibrium {
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Linearization, spectrum and stability margin.
    Eigen {
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Fit the stability region over a parameter plane.
    Sssr {
        #[command(flatten)]
        plane: PlaneArgs,
        /// Fit the analytic unit disk instead and check its area.
        #[arg(long)]
        self_test: bool,
    },
    /// Sample stable interior points with their margins.
    Ismd {
        #[command(flatten)]
        plane: PlaneArgs,
        #[arg(long, default_value_t = 5000)]
        samples: usize,
    },
    /// Fit the margin regression to an ISMD file.
    Gmm {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K_MAX)]
        k_max: usize,
    },
    /// Index map over a fitted region with a stored regression.
    Csi {
        #[command(flatten)]
        plane: PlaneArgs,
        #[arg(long)]
        gmm: PathBuf,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
    },
    /// Time-domain run of a scenario file or preset.
    Simulate {
        /// Preset name (fig7, fig8-gfl, fig8-gfm, fig11) or a TOML path.
        #[arg(long)]
        scenario: String,
        #[arg(long, value_enum, default_value = "none")]
        policy: PolicyArg,
        /// SCR threshold of the baseline policy.
        #[arg(long)]
        threshold: Option<f64>,
        /// Index hysteresis of the CSI policy.
        #[arg(long)]
        epsilon_h: Option<f64>,
        #[command(flatten)]
        weights: WeightArgs,
        /// ISMD size behind each subsystem's index model.
        #[arg(long, default_value_t = 2000)]
        policy_samples: usize,
        /// Compare active power against the linearized response.
        #[arg(long)]
        rmse: bool,
    },
    /// Region, ISMD, regression and index map in one run.
    Pipeline {
        #[command(flatten)]
        plane: PlaneArgs,
        #[arg(long, default_value_t = 5000)]
        samples: usize,
        #[arg(long, default_value_t = DEFAULT_K_MAX)]
        k_max: usize,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
    },
}

struct Ctx {
    plant: Plant,
    out: PathBuf,
    seed: u64,
}

impl Ctx {
    fn out(&self) -> Result<OutDir> {
        OutDir::create(&self.out)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for configuration problems, 1 for numerical failures.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(err) if err.is_config() => 2,
        Some(_) => 1,
        None => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global().context("thread pool")?;
    }
    let plant = match &cli.config {
        Some(p) => load_plant(p)?.plant,
        None => Plant::default(),
    };
    let ctx = Ctx { plant, out: cli.out, seed: cli.seed };
    match cli.command {
        Command::Equilibrium { mode } => cmd_equilibrium(&ctx, mode.into()),
        Command::Eigen { mode } => cmd_eigen(&ctx, mode.into()),
        Command::Sssr { plane, self_test } => {
            if self_test {
                cmd_self_test(&ctx)
            } else {
                cmd_sssr(&ctx, &plane)
            }
        }
        Command::Ismd { plane, samples } => cmd_ismd(&ctx, &plane, samples),
        Command::Gmm { input, k_max } => cmd_gmm(&ctx, &input, k_max),
        Command::Csi { plane, gmm, weights, resolution } => cmd_csi(&ctx, &plane, &gmm, weights.weights()?, resolution),
        Command::Simulate { scenario, policy, threshold, epsilon_h, weights, policy_samples, rmse } => {
            let setup = CsiPolicySetup {
                weights: weights.weights()?,
                ismd_samples: policy_samples,
                seed: ctx.seed,
                ..Default::default()
            };
            cmd_simulate(&ctx, &scenario, policy, threshold, epsilon_h, setup, rmse)
        }
        Command::Pipeline { plane, samples, k_max, weights, resolution } => {
            cmd_pipeline(&ctx, &plane, samples, k_max, weights.weights()?, resolution)
        }
    }
}

fn cmd_equilibrium(ctx: &Ctx, mode: Mode) -> Result<()> {
    let eq = solve_equilibrium(mode, &ctx.plant, None)?;
    let x = eq.state.to_vec();
    let ph = eq.state.physical();
    let (p, q) = power_outputs(ph.v_d, ph.v_q, ph.i_d, ph.i_q);
    let mut r = Report::new();
    r.section("equilibrium").text("mode", mode.name()).num("residual_norm", eq.residual_norm).int("iterations", eq.iterations);
    r.num("p", p).num("q", q);
    r.section("state");
    for (name, v) in state_names(mode).iter().zip(&x) {
        r.num(name, *v);
    }
    print!("{}", r.as_str());
    r.section("parameters");
    let out = ctx.out()?;
    let text = format!("{}{}", r.as_str(), plant_to_toml(&ctx.plant));
    out.write_text(&format!("equilibrium-{}.toml", mode.name()), &text)?;
    Ok(())
}

fn cmd_eigen(ctx: &Ctx, mode: Mode) -> Result<()> {
    let (eq, lin, rep) = analyze(&ctx.plant, mode)?;
    let out = ctx.out()?;
    let m = mode.name();
    out.write_with(&format!("a-{m}.csv"), |w| write_matrix_csv(&lin.a, w))?;
    out.write_with(&format!("b-{m}.csv"), |w| write_matrix_csv(&lin.b, w))?;
    out.write_with(&format!("eigenvalues-{m}.csv"), |w| {
        writeln!(w, "re,im")?;
        for e in &rep.eigenvalues {
            writeln!(w, "{},{}", num(e.re), num(e.im))?;
        }
        Ok(())
    })?;
    let mut r = Report::new();
    r.section("eigen")
        .text("mode", m)
        .text("classification", &rep.classification.to_string())
        .num("margin", rep.signed_margin())
        .num("rightmost_re", rep.rightmost.re)
        .num("rightmost_im", rep.rightmost.im)
        .num("equilibrium_residual", eq.residual_norm);
    out.write_text(&format!("eigen-{m}.toml"), r.as_str())?;
    print!("{}", r.as_str());
    Ok(())
}


struct Plane {
    name: String,
    space: ParamSpace,
    origin: Vec<f64>,
}

fn parse_axis(s: &str) -> Result<Axis> {
    let parts: Vec<&str> = s.split(':').collect();
    let [name, lo, hi] = parts[..] else {
        return Err(Error::Config(format!("axis `{s}` must be name:lower:upper")).into());
    };
    let f = |t: &str| t.parse::<f64>().map_err(|e| Error::Config(format!("axis `{s}`: {e}")));
    Ok(Axis::new(name, f(lo)?, f(hi)?))
}

fn parse_fixed(s: &str) -> Result<(String, f64)> {
    let Some((k, v)) = s.split_once('=') else {
        return Err(Error::Config(format!("--set `{s}` must be name=value")).into());
    };
    let v = v.trim().parse::<f64>().map_err(|e| Error::Config(format!("--set `{s}`: {e}")))?;
    Ok((k.trim().to_string(), v))
}

fn resolve_plane(ctx: &Ctx, args: &PlaneArgs) -> Result<Plane> {
    let mut preset = match (&args.plane, args.mode) {
        (Some(name), _) => {
            let mut p = plane_by_name(name, args.value)?;
            if !args.axes.is_empty() {
                p.axes = args.axes.iter().map(|a| parse_axis(a)).collect::<Result<_>>()?;
            }
            if !args.origin.is_empty() {
                p.origin = args.origin.clone();
            }
            p
        }
        (None, Some(mode)) => {
            let axes: Vec<Axis> = args.axes.iter().map(|a| parse_axis(a)).collect::<Result<_>>()?;
            if axes.is_empty() || args.origin.is_empty() {
                bail!(Error::Config("a custom space needs --axis and --origin".into()));
            }
            PlanePreset { name: "custom".into(), mode: mode.into(), axes, origin: args.origin.clone(), fixed: vec![] }
        }
        (None, None) => {
            bail!(Error::Config(format!("give --plane (one of {}) or --mode with --axis", PLANE_NAMES.join(", "))))
        }
    };
    if preset.axes.len() > MAX_DIM {
        bail!(Error::DimensionGuard(preset.axes.len()));
    }
    for f in &args.fixed {
        preset.fixed.push(parse_fixed(f)?);
    }
    if preset.origin.len() != preset.axes.len() {
        bail!(Error::Config(format!("origin has {} values for {} axes", preset.origin.len(), preset.axes.len())));
    }
    let space = preset.space(&ctx.plant)?;
    Ok(Plane { name: preset.name, space, origin: preset.origin })
}

fn fit_plane(plane: &Plane, args: &PlaneArgs) -> Result<Region> {
    let region = fit_sssr(&plane.space, &plane.origin, args.epsilon, args.epsilon_r)?;
    log::info!("{}: {} boundary points, {} facets", plane.name, region.points.len(), region.facets.len());
    Ok(region)
}

fn region_report(r: &mut Report, name: &str, region: &Region) {
    r.section("region")
        .text("plane", name)
        .text("axes", &region.axes.iter().map(|a| a.name.as_str()).collect::<Vec<_>>().join(","))
        .list("origin", &region.origin)
        .num("volume", region.volume())
        .num("volume_unit", region.volume_unit)
        .int("boundary_points", region.points.len())
        .int("facets", region.facets.len())
        .int("evaluations", region.evaluations);
}

fn write_region(out: &OutDir, region: &Region) -> Result<()> {
    out.write_with("boundary.csv", |w| write_boundary_csv(region, w))?;
    out.write_with("facets.txt", |w| write_facets(region, w))?;
    Ok(())
}

fn cmd_sssr(ctx: &Ctx, args: &PlaneArgs) -> Result<()> {
    let plane = resolve_plane(ctx, args)?;
    let region = fit_plane(&plane, args)?;
    let out = ctx.out()?;
    write_region(&out, &region)?;
    let mut r = Report::new();
    region_report(&mut r, &plane.name, &region);
    out.write_text("region.toml", r.as_str())?;
    print!("{}", r.as_str());
    Ok(())
}

/// Unit disk in a 4 x 4 box; the fitted area must be within 2% of pi.
fn cmd_self_test(ctx: &Ctx) -> Result<()> {
    let axes = vec![Axis::new("x", -2.0, 2.0), Axis::new("y", -2.0, 2.0)];
    let space = ParamSpace::synthetic_ellipse(&[0.0, 0.0], &[1.0, 1.0], axes)?;
    let region = fit_sssr(&space, &[0.0, 0.0], DEFAULT_EPSILON, 1e-3)?;
    let area = region.volume();
    let rel = (area - std::f64::consts::PI).abs() / std::f64::consts::PI;
    let out = ctx.out()?;
    write_region(&out, &region)?;
    let mut r = Report::new();
    region_report(&mut r, "unit-disk", &region);
    r.num("relative_area_error", rel).text("result", if rel <= 0.02 { "pass" } else { "fail" });
    out.write_text("region.toml", r.as_str())?;
    print!("{}", r.as_str());
    if rel > 0.02 {
        bail!(Error::Domain(format!("disk area {area} is {:.2}% off", rel * 100.0)));
    }
    Ok(())
}

fn sample(ctx: &Ctx, plane: &Plane, region: &Region, n: usize) -> Result<Ismd> {
    let ismd = sample_ismd(&plane.space, region, n, ctx.seed)?;
    log::info!("{} samples from {} draws", ismd.samples.len(), ismd.draws);
    Ok(ismd)
}

fn ismd_report(r: &mut Report, ismd: &Ismd) {
    r.section("ismd")
        .int("samples", ismd.samples.len())
        .int("draws", ismd.draws)
        .int("inside", ismd.inside)
        .int("rejected", ismd.rejected)
        .num("acceptance", ismd.acceptance());
}

fn cmd_ismd(ctx: &Ctx, args: &PlaneArgs, n: usize) -> Result<()> {
    let plane = resolve_plane(ctx, args)?;
    let region = fit_plane(&plane, args)?;
    let ismd = sample(ctx, &plane, &region, n)?;
    let out = ctx.out()?;
    out.write_with("ismd.csv", |w| write_ismd_csv(&region.axes, &ismd.samples, w))?;
    let mut r = Report::new();
    region_report(&mut r, &plane.name, &region);
    ismd_report(&mut r, &ismd);
    out.write_text("ismd.toml", r.as_str())?;
    print!("{}", r.as_str());
    Ok(())
}

struct Fitted {
    model: GmmModel,
    k: usize,
    bic: Vec<(usize, f64)>,
    r2: f64,
}

fn fit_gmm(ctx: &Ctx, x: &[Vec<f64>], y: &[f64], k_max: usize) -> Result<Fitted> {
    let sel = select_model(x, y, k_max, ctx.seed)?;
    let r2 = r_squared(&sel.model, x, y)?;
    Ok(Fitted { k: sel.k, bic: sel.bic, r2, model: sel.model })
}

fn write_gmm(out: &OutDir, f: &Fitted) -> Result<()> {
    out.write_text("gmm.txt", &f.model.to_text())?;
    out.write_with("bic.csv", |w| {
        writeln!(w, "k,bic")?;
        for (k, b) in &f.bic {
            writeln!(w, "{k},{}", num(*b))?;
        }
        Ok(())
    })?;
    Ok(())
}

fn gmm_report(r: &mut Report, f: &Fitted, n: usize) {
    r.section("gmm").int("samples", n).int("k", f.k).num("r_squared", f.r2);
}

fn cmd_gmm(ctx: &Ctx, input: &Path, k_max: usize) -> Result<()> {
    let text = std::fs::read_to_string(input).map_err(|e| Error::Config(format!("cannot read {}: {e}", input.display())))?;
    let (_, samples) = read_ismd_csv(&text).map_err(|e| Error::Config(format!("{}: {e}", input.display())))?;
    let x: Vec<Vec<f64>> = samples.iter().map(|s| s.coords.clone()).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.margin).collect();
    let f = fit_gmm(ctx, &x, &y, k_max)?;
    let out = ctx.out()?;
    write_gmm(&out, &f)?;
    let mut r = Report::new();
    gmm_report(&mut r, &f, y.len());
    out.write_text("gmm.toml", r.as_str())?;
    print!("{}", r.as_str());
    Ok(())
}

fn csi_report(r: &mut Report, map: &CsiMap) {
    let s = map.summary();
    r.section("csi")
        .int("grid_points", s.points)
        .list("argmax_j", &s.argmax_j)
        .num("max_j", s.max_j)
        .list("argmax_margin", &s.argmax_margin)
        .num("max_margin", s.max_margin)
        .num("j_at_argmax_margin", s.j_at_argmax_margin)
        .text("distinct", if s.argmax_j != s.argmax_margin { "yes" } else { "no" });
}

fn write_csi(out: &OutDir, map: &CsiMap) -> Result<()> {
    out.write_with("csi.csv", |w| map.write_csv(w))?;
    out.write_text("csi-context.toml", &map.context.to_toml())?;
    Ok(())
}

fn cmd_csi(ctx: &Ctx, args: &PlaneArgs, gmm: &Path, weights: CsiWeights, resolution: usize) -> Result<()> {
    let text = std::fs::read_to_string(gmm).map_err(|e| Error::Config(format!("cannot read {}: {e}", gmm.display())))?;
    let model = GmmModel::from_text(&text).map_err(|e| Error::Config(format!("{}: {e}", gmm.display())))?;
    let plane = resolve_plane(ctx, args)?;
    if model.dim() != plane.space.dim() {
        bail!(Error::Config(format!("regression has dimension {} but the plane has {} axes", model.dim(), plane.space.dim())));
    }
    let region = fit_plane(&plane, args)?;
    let map = csi_map(&region, &model, resolution, weights)?;
    let out = ctx.out()?;
    write_csi(&out, &map)?;
    let mut r = Report::new();
    csi_report(&mut r, &map);
    out.write_text("csi.toml", r.as_str())?;
    print!("{}", r.as_str());
    Ok(())
}

fn cmd_pipeline(ctx: &Ctx, args: &PlaneArgs, n: usize, k_max: usize, weights: CsiWeights, resolution: usize) -> Result<()> {
    weights.validate()?;
    let plane = resolve_plane(ctx, args)?;
    let region = fit_plane(&plane, args)?;
    let out = ctx.out()?;
    write_region(&out, &region)?;
    let ismd = sample(ctx, &plane, &region, n)?;
    out.write_with("ismd.csv", |w| write_ismd_csv(&region.axes, &ismd.samples, w))?;
    let x: Vec<Vec<f64>> = ismd.samples.iter().map(|s| s.coords.clone()).collect();
    let y: Vec<f64> = ismd.samples.iter().map(|s| s.margin).collect();
    let fitted = fit_gmm(ctx, &x, &y, k_max)?;
    write_gmm(&out, &fitted)?;
    let map = csi_map(&region, &fitted.model, resolution, weights)?;
    write_csi(&out, &map)?;
    let mut r = Report::new();
    region_report(&mut r, &plane.name, &region);
    ismd_report(&mut r, &ismd);
    gmm_report(&mut r, &fitted, y.len());
    csi_report(&mut r, &map);
    out.write_text("summary.toml", r.as_str())?;
    print!("{}", r.as_str());
    Ok(())
}

fn load_scenario(name: &str) -> Result<Scenario> {
    if Scenario::preset_names().contains(&name) {
        return Ok(Scenario::preset(name)?);
    }
    let path = Path::new(name);
    if !path.exists() {
        bail!(Error::Config(format!(
            "scenario `{name}` is neither a preset ({}) nor a file",
            Scenario::preset_names().join(", ")
        )));
    }
    Ok(Scenario::load(path)?)
}

fn cmd_simulate(
    ctx: &Ctx,
    name: &str,
    policy: PolicyArg,
    threshold: Option<f64>,
    epsilon_h: Option<f64>,
    mut setup: CsiPolicySetup,
    rmse: bool,
) -> Result<()> {
    let scenario = load_scenario(name)?;
    let policy = match policy {
        PolicyArg::None => SwitchPolicy::None,
        PolicyArg::Threshold => {
            SwitchPolicy::ScrThreshold(threshold.or(scenario.threshold).unwrap_or(DEFAULT_SCR_THRESHOLD))
        }
        PolicyArg::Csi => {
            setup.epsilon_h = epsilon_h.or(scenario.epsilon_h).unwrap_or(DEFAULT_HYSTERESIS);
            SwitchPolicy::CsiBased(Box::new(build_csi_policy(&ctx.plant, &setup)?))
        }
    };
    policy.validate()?;
    let result = simulate(&scenario, &policy, &ctx.plant)?;
    let segments = segment_verdicts(&result, &scenario);
    let verdict = overall_verdict(&segments);
    let out = ctx.out()?;
    out.write_with("trace.csv", |w| result.write_csv(w))?;
    out.write_with("switches.csv", |w| {
        writeln!(w, "t,from,to,power_jump,reference_jump")?;
        for s in &result.switches {
            writeln!(w, "{},{},{},{},{}", num(s.t), s.from.name(), s.to.name(), num(s.power_jump()), num(s.reference_jump()))?;
        }
        Ok(())
    })?;
    let mut r = Report::new();
    r.section("simulation")
        .text("scenario", &scenario.name)
        .text(
            "policy",
            match &policy {
                SwitchPolicy::None => "none",
                SwitchPolicy::ScrThreshold(_) => "threshold",
                SwitchPolicy::CsiBased(_) => "csi",
            },
        )
        .text("verdict", verdict.as_str())
        .int("switches", result.switches.len())
        .list("switch_times", &result.switches.iter().map(|s| s.t).collect::<Vec<_>>())
        .text("final_mode", result.final_mode.name());
    match &policy {
        SwitchPolicy::ScrThreshold(t) => {
            r.num("threshold", *t);
        }
        SwitchPolicy::CsiBased(c) => {
            r.num("epsilon_h", c.epsilon_h);
        }
        SwitchPolicy::None => {}
    }
    if let Some(t) = result.diverged_at {
        r.num("diverged_at", t);
    }
    if rmse {
        let plant = scenario.initial_plant(&ctx.plant)?;
        let f = linear_comparison(&scenario, &plant, &result)?;
        r.num("rmse", f.rmse);
        out.write_with("linear.csv", |w| {
            writeln!(w, "t,p_nonlinear,p_linear")?;
            for i in 0..f.t.len() {
                writeln!(w, "{},{},{}", num(f.t[i]), num(f.nonlinear[i]), num(f.linear[i]))?;
            }
            Ok(())
        })?;
    }
    for s in &segments {
        r.table("segment").num("from", s.from).num("to", s.to).text("verdict", s.verdict.as_str());
    }
    out.write_text("simulation.toml", r.as_str())?;
    print!("{}", r.as_str());
    Ok(())
}
