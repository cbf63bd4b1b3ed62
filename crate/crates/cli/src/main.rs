// `!(x > 0.0)` rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use fvkr::discretize::{discretize_initial_datum, discretize_velocity, CellField, VelocityField};
use fvkr::harness::{self, Coupling, DeltaPolicy, LadderConfig, TestCase, QUAD_ORDER};
use fvkr::io::{read_cell_field, write_cell_field, TabulatedVelocity};
use fvkr::lagrangian;
use fvkr::mesh::{build_cartesian_mesh, read_mesh, validate_admissibility, Domain, Mesh, Tolerances};
use fvkr::scheme::{self, MonitorReport, SchemeConfig};
use fvkr::transport::{dual_certify, kr_signed};

#[derive(Parser)]
#[command(name = "fvkr", version, about = "Upwind finite volumes and log-KR error measurement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check mesh admissibility; exit status 1 if any clause fails.
    ValidateMesh {
        file: PathBuf,
        #[arg(long = "tol-orth")]
        tol_orth: Option<f64>,
    },
    /// Run the implicit scheme and write every time level.
    Solve(SolveArgs),
    /// Distance between two cell fields on one mesh.
    Kr(KrArgs),
    /// Stochastic particle simulation, written as a cell histogram.
    Particles(ParticleArgs),
    /// Refinement ladder against the case reference.
    Converge(ConvergeArgs),
}

/// Velocity and datum selection shared by `solve` and `particles`.
#[derive(clap::Args)]
struct FieldArgs {
    /// `file` or `cartesian:nx,ny` (the case domain, else the unit square).
    #[arg(long)]
    mesh: String,
    /// Catalog case (a-d or its name) or a `t,x,y,ux,uy` velocity table.
    #[arg(long)]
    field: String,
    /// Initial datum as `cell_id,value`; required with a velocity table.
    #[arg(long)]
    datum: Option<PathBuf>,
    /// Defaults to the case diffusion.
    #[arg(long)]
    kappa: Option<f64>,
    /// Final time; defaults to the case horizon.
    #[arg(long = "T")]
    t_final: Option<f64>,
}

#[derive(clap::Args)]
struct SolveArgs {
    #[command(flatten)]
    field: FieldArgs,
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value_t = 2.0)]
    q: f64,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Run even when k exceeds k_max.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct KrArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    mesh: String,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 1, value_parser = parse_ppc)]
    ppc: usize,
    /// Certify the dual potential on all support pairs.
    #[arg(long)]
    dual: bool,
}

#[derive(clap::Args)]
struct ParticleArgs {
    #[command(flatten)]
    field: FieldArgs,
    #[arg(long)]
    dt: f64,
    #[arg(long = "n")]
    n_particles: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum CouplingKind {
    H2,
    FixedK,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum DeltaKind {
    Fixed,
    Matched,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum LadderKind {
    /// Halve h per level.
    Space,
    /// Halve k per level at fixed h.
    Time,
}

/// Every flag of `converge`; also the schema of its TOML config. Flags given on
/// the command line override the file.
#[derive(clap::Args, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct ConvergeArgs {
    /// TOML file with any of the flags below as keys.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    case: Option<String>,
    /// Default 4.
    #[arg(long)]
    levels: Option<usize>,
    /// Default h2.
    #[arg(long, value_enum)]
    coupling: Option<CouplingKind>,
    /// Default fixed.
    #[arg(long, value_enum)]
    delta: Option<DeltaKind>,
    /// Default space.
    #[arg(long, value_enum)]
    ladder: Option<LadderKind>,
    /// Cells per side on the coarsest space level (default 16), or the fixed
    /// grid of a time ladder (default 128).
    #[arg(long)]
    n0: Option<usize>,
    /// k = c h² under h2 coupling (default 2).
    #[arg(long)]
    c: Option<f64>,
    /// Step under fixed-k coupling; defaults to c h² of the finest level.
    #[arg(long)]
    k: Option<f64>,
    /// Steps on the coarsest time level (default 4).
    #[arg(long)]
    steps0: Option<usize>,
    /// Default 1.
    #[arg(long)]
    ppc: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Override the case diffusion.
    #[arg(long)]
    kappa: Option<f64>,
    /// Override the case horizon.
    #[arg(long = "T")]
    #[serde(rename = "T")]
    t_final: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("fvkr: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    let pool = harness::thread_pool_from_env()?;
    let go = move || match command {
        Command::ValidateMesh { file, tol_orth } => validate(&file, tol_orth),
        Command::Solve(a) => solve(a).map(|_| ExitCode::SUCCESS),
        Command::Kr(a) => kr(a).map(|_| ExitCode::SUCCESS),
        Command::Particles(a) => particles(a).map(|_| ExitCode::SUCCESS),
        Command::Converge(a) => converge(a).map(|_| ExitCode::SUCCESS),
    };
    match pool {
        Some(p) => p.install(go),
        None => go(),
    }
}

fn print_json(v: &impl Serialize) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // A closed pipe (`| head`) is not an error worth reporting.
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn validate(file: &Path, tol_orth: Option<f64>) -> Result<ExitCode> {
    let mesh = read_mesh(file)?;
    let mut tol = Tolerances::default();
    if let Some(t) = tol_orth {
        if !(t >= 0.0) {
            bail!("--tol-orth must be nonnegative, got {t}");
        }
        tol.orth = t;
    }
    let report = validate_admissibility(&mesh, &tol);
    print_json(&report)?;
    Ok(if report.admissible { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

/// `cartesian:nx,ny` or a mesh file.
fn load_mesh(spec: &str, domain: &Domain) -> Result<Mesh> {
    if let Some(dims) = spec.strip_prefix("cartesian:") {
        let (nx, ny) = dims
            .split_once(',')
            .with_context(|| format!("expected cartesian:nx,ny, got {spec}"))?;
        let parse = |s: &str| s.trim().parse::<usize>().with_context(|| format!("bad cell count {s:?} in {spec}"));
        return Ok(build_cartesian_mesh(domain, parse(nx)?, parse(ny)?)?);
    }
    Ok(read_mesh(Path::new(spec))?)
}

enum Velocity {
    Case(Box<TestCase>),
    Table(TabulatedVelocity),
}

struct Problem {
    mesh: Mesh,
    velocity: Box<dyn VelocityField>,
    theta0: CellField,
    kappa: f64,
    t_final: f64,
}

fn problem(a: &FieldArgs) -> Result<Problem> {
    let source = match harness::find_case(&a.field) {
        Ok(c) => Velocity::Case(Box::new(c)),
        Err(e) if !Path::new(&a.field).is_file() => return Err(e.into()),
        Err(_) => Velocity::Table(TabulatedVelocity::from_csv(Path::new(&a.field))?),
    };
    let domain = match &source {
        Velocity::Case(c) => c.domain.clone(),
        Velocity::Table(_) => Domain::unit_square(),
    };
    let mesh = load_mesh(&a.mesh, &domain)?;
    let theta0 = match (&a.datum, &source) {
        (Some(p), _) => read_cell_field(p, Some(mesh.n_cells()))?,
        (None, Velocity::Case(c)) => discretize_initial_datum(&c.datum, &mesh, QUAD_ORDER)?,
        (None, Velocity::Table(_)) => bail!("--datum is required with a tabulated velocity"),
    };
    let (kappa, t_final) = match &source {
        Velocity::Case(c) => (a.kappa.unwrap_or(c.kappa), a.t_final.unwrap_or(c.t_final)),
        Velocity::Table(_) => (
            a.kappa.context("--kappa is required with a tabulated velocity")?,
            a.t_final.context("--T is required with a tabulated velocity")?,
        ),
    };
    let velocity: Box<dyn VelocityField> = match source {
        Velocity::Case(c) => Box::new(c.velocity_field()),
        Velocity::Table(t) => Box::new(t),
    };
    Ok(Problem {
        mesh,
        velocity,
        theta0,
        kappa,
        t_final,
    })
}

fn solve(a: SolveArgs) -> Result<()> {
    let p = problem(&a.field)?;
    if a.steps == 0 {
        bail!("--steps must be positive");
    }
    let k = p.t_final / a.steps as f64;
    let flux = discretize_velocity(p.velocity.as_ref(), &p.mesh, k, p.t_final, 2, 1)?;
    let mut cfg = SchemeConfig::new(p.kappa, k, p.t_final);
    cfg.q = a.q;
    cfg.alpha = a.alpha;
    cfg.force = a.force;
    let traj = scheme::solve(&p.mesh, &p.theta0, &flux, &cfg)?;
    traj.write_csv(&a.out)?;
    print_json(&MonitorReport::new(&traj)?)
}

fn kr(a: KrArgs) -> Result<()> {
    let mesh = load_mesh(&a.mesh, &Domain::unit_square())?;
    let fa = read_cell_field(&a.a, Some(mesh.n_cells()))?;
    let fb = read_cell_field(&a.b, Some(mesh.n_cells()))?;
    let r = kr_signed(&mesh, &fa, &fb, a.delta, a.ppc)?;
    let mut out = json!({
        "distance": r.distance,
        "delta": r.delta,
        "gap": r.gap,
        "atoms_a": r.atoms_a,
        "atoms_b": r.atoms_b,
    });
    if a.dual {
        out["dual"] = serde_json::to_value(dual_certify(&r, a.delta)?)?;
    }
    print_json(&out)
}

fn particles(a: ParticleArgs) -> Result<()> {
    let p = problem(&a.field)?;
    let ens = lagrangian::simulate(
        &p.mesh,
        &p.theta0,
        p.velocity.as_ref(),
        p.kappa,
        p.t_final,
        a.dt,
        a.n_particles,
        a.seed,
    )?;
    let mass = p.theta0.mass(&p.mesh);
    let hist = lagrangian::histogram(&ens, &p.mesh, mass)?;
    write_cell_field(&a.out, &hist)?;
    let mean_local_time = ens.local_time.iter().sum::<f64>() / ens.len() as f64;
    print_json(&json!({
        "particles": ens.len(),
        "steps": ens.steps,
        "t": ens.time,
        "seed": ens.seed,
        "mass": mass,
        "mean_local_time": mean_local_time,
    }))
}

impl ConvergeArgs {
    /// Fills unset flags from `other`.
    fn or(self, other: ConvergeArgs) -> Self {
        Self {
            config: self.config,
            case: self.case.or(other.case),
            levels: self.levels.or(other.levels),
            coupling: self.coupling.or(other.coupling),
            delta: self.delta.or(other.delta),
            ladder: self.ladder.or(other.ladder),
            n0: self.n0.or(other.n0),
            c: self.c.or(other.c),
            k: self.k.or(other.k),
            steps0: self.steps0.or(other.steps0),
            ppc: self.ppc.or(other.ppc),
            q: self.q.or(other.q),
            alpha: self.alpha.or(other.alpha),
            kappa: self.kappa.or(other.kappa),
            t_final: self.t_final.or(other.t_final),
            out: self.out.or(other.out),
        }
    }
}

fn converge(a: ConvergeArgs) -> Result<()> {
    let a = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let file: ConvergeArgs = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            a.or(file)
        }
        None => a,
    };
    let mut case = harness::find_case(a.case.as_deref().context("--case is required")?)?;
    if let Some(kappa) = a.kappa {
        case = case.with_kappa(kappa);
    }
    if let Some(t) = a.t_final {
        case = case.with_t_final(t);
    }
    let out = a.out.context("--out is required")?;
    let ladder = a.ladder.unwrap_or(LadderKind::Space);
    let levels = a.levels.unwrap_or(4);
    let n0 = a.n0.unwrap_or(match ladder {
        LadderKind::Space => 16,
        LadderKind::Time => 128,
    });
    let c = a.c.unwrap_or(2.0);
    let coupling = match a.coupling.unwrap_or(CouplingKind::H2) {
        CouplingKind::H2 => Coupling::H2 { c },
        CouplingKind::FixedK => {
            let (lo, hi) = case.domain.bbox();
            let h = (hi.x - lo.x).max(hi.y - lo.y) / (n0 << levels.saturating_sub(1)) as f64;
            Coupling::FixedK { k: a.k.unwrap_or(c * h * h) }
        }
    };
    let cfg = LadderConfig {
        levels,
        n0,
        coupling,
        delta: match a.delta.unwrap_or(DeltaKind::Fixed) {
            DeltaKind::Fixed => DeltaPolicy::Fixed,
            DeltaKind::Matched => DeltaPolicy::Matched,
        },
        points_per_cell: a.ppc.unwrap_or(1),
        q: a.q.unwrap_or(2.0),
        alpha: a.alpha.unwrap_or(2.0),
    };
    let result = match ladder {
        LadderKind::Space => harness::run_ladder(&case, &cfg)?,
        LadderKind::Time => harness::run_time_ladder(&case, n0, a.steps0.unwrap_or(4), &cfg)?,
    };
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let (csv, json_path) = harness::emit_report(&result, &out)?;
    print_json(&json!({
        "case": result.case,
        "rate_h": result.rate_h,
        "rate_k": result.rate_k,
        "csv": csv,
        "json": json_path,
    }))
}

fn parse_ppc(s: &str) -> std::result::Result<usize, String> {
    match s {
        "1" | "4" | "9" => Ok(s.parse().unwrap()),
        _ => Err(format!("points per cell must be 1, 4 or 9, got {s}")),
    }
}
