use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use kahler_flow::config::{ExperimentSpec, ScenarioId, SuiteSpec};
use kahler_flow::io::{output_root, Snapshot};
use kahler_flow::scenario::{final_snapshot, flow_config, run_flow, run_scenario, ReportBundle};
use kahler_flow_core::flow::{Background, FlowMode, FlowProblem};
use kahler_flow_core::functionals::{futaki, gauge_objective, perelman_diagnostics, DecayReport};
use kahler_flow_core::gauge::{eta_basis, minimize_gauge_objective, orthogonalize_ke, HolomorphicField};
use kahler_flow_core::geometry::{make_sphere_model, make_toric_model, ModelGeometry, PotentialField};
use kahler_flow_core::soliton::{soliton_field, solve_soliton};
use kahler_flow_core::spectral::laplace_spectrum;
use kahler_flow_core::toric::Polygon;

#[derive(Parser)]
#[command(name = "kflow", version, about = "Kähler-Ricci flow experiments on sphere and toric surface models")]
struct Cli {
    /// Output directory (defaults to $KFLOW_OUTPUT_ROOT or ./kflow-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Flow a configured seed and write the decay tables and final snapshot.
    Flow {
        #[command(subcommand)]
        action: FlowAction,
    },
    /// Soliton field and solution for a polygon.
    Soliton {
        #[command(subcommand)]
        action: SolitonAction,
    },
    /// Gauge-fix a snapshot.
    Gauge {
        #[command(subcommand)]
        action: GaugeAction,
    },
    /// Futaki invariant of a model metric.
    Futaki(FutakiArgs),
    /// Lowest Laplace eigenvalues on the sphere model.
    Spectrum {
        #[arg(long, default_value_t = 16)]
        degree: usize,
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Randomized identity checks.
    Suite {
        #[command(subcommand)]
        action: SuiteAction,
    },
    /// Run a named scenario, or `all`.
    Scenario {
        id: String,
        /// TOML overriding the built-in specification.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run scenarios of `all` on separate threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Decay functionals of a snapshot.
    Functionals {
        #[command(subcommand)]
        action: FunctionalsAction,
    },
}

#[derive(Subcommand)]
enum FlowAction {
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum SolitonAction {
    Solve {
        /// JSON array of `[x, y]` vertices, counter-clockwise.
        #[arg(long)]
        polytope: PathBuf,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
    },
}

#[derive(Subcommand)]
enum GaugeAction {
    Fix {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        trust_radius: f64,
    },
}

#[derive(Subcommand)]
enum SuiteAction {
    Identities {
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum FunctionalsAction {
    Report {
        #[arg(long)]
        snapshot: PathBuf,
    },
}

#[derive(Args)]
struct FutakiArgs {
    /// `sphere`, `square`, `blowup`, or a polygon JSON file.
    #[arg(long, default_value = "blowup")]
    model: String,
    #[arg(long, default_value_t = 48)]
    resolution: usize,
    /// Field direction, comma separated (3 entries on the sphere, 2 on toric models).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    direction: Vec<f64>,
    /// Use the soliton field of the polygon as `X₀`.
    #[arg(long)]
    soliton: bool,
}

fn read_polygon(path: &Path) -> anyhow::Result<Polygon> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Vec<[f64; 2]> = serde_json::from_str(&text).context("polytope must be a JSON array of [x, y] pairs")?;
    Ok(Polygon::new(&v)?)
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(value)?)?;
    Ok(p)
}

fn print_bundle(b: &ReportBundle) {
    println!("scenario {} ({:.1} s)", b.scenario.name(), b.seconds);
    for c in &b.checks {
        println!("  {}", c.line());
    }
    for r in &b.rates {
        match r.fit {
            Some(f) => println!("  rate {}: {:.6} [{:.6}, {:.6}]", r.name, f.rate, f.rate_low, f.rate_high),
            None => println!("  rate {}: undefined", r.name),
        }
    }
    for n in &b.notes {
        println!("  note: {n}");
    }
}

fn scenario(id: &str, config: Option<&Path>, parallel: bool, out: &Path) -> anyhow::Result<bool> {
    let specs: Vec<ExperimentSpec> = if id == "all" {
        if config.is_some() {
            bail!("--config applies to a single scenario");
        }
        ScenarioId::ALL.iter().map(|s| ExperimentSpec::preset(*s)).collect()
    } else {
        let parsed = ScenarioId::parse(id)?;
        let spec = match config {
            Some(p) => ExperimentSpec::load(p)?,
            None => ExperimentSpec::preset(parsed),
        };
        if spec.scenario != parsed {
            bail!("config is for scenario `{}`", spec.scenario.name());
        }
        vec![spec]
    };
    let run = |s: &ExperimentSpec| run_scenario(s, Some(&out.join(s.scenario.name())));
    let bundles: Vec<_> = if parallel && specs.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> = specs.iter().map(|s| scope.spawn(move || run(s))).collect();
            handles.into_iter().map(|h| h.join().expect("scenario thread panicked")).collect()
        })
    } else {
        specs.iter().map(run).collect()
    };
    let mut ok = true;
    for b in bundles {
        let b = b?;
        print_bundle(&b);
        ok &= b.passed();
    }
    Ok(ok)
}

fn flow_run(config: &Path, out: &Path) -> anyhow::Result<bool> {
    let spec = ExperimentSpec::load(config)?;
    let geom = spec.geometry.build()?;
    let bg = match &geom.toric() {
        Some(t) if matches!(spec.scenario, ScenarioId::SolitonStability | ScenarioId::SolitonInvariantSeed) => {
            Background::soliton(&geom, &solve_soliton(&geom, soliton_field(&t.polygon)?)?)?
        }
        _ => Background::ke(&geom),
    };
    let problem = FlowProblem::new(&geom, bg.clone())?;
    let cfg = flow_config(&spec, &bg, spec.seed.potential(&geom)?);
    let run = run_flow(spec.scenario.name(), &problem, &cfg, spec.flow.k, spec.flow.gauge_every)?;
    kahler_flow::io::emit_plots_data(out, &[&run.series])?;
    if let Some(s) = final_snapshot(&geom, &bg, &run) {
        s.write(&out.join("final.json"))?;
    }
    println!(
        "{} states, {} accepted / {} rejected steps, H0 rate {:?}",
        run.trajectory.states.len(),
        run.trajectory.accepted,
        run.trajectory.rejected,
        run.decay.h0_rate.map(|f| f.rate)
    );
    for n in &run.trajectory.notes {
        println!("note: {n}");
    }
    Ok(true)
}

fn futaki_cmd(a: &FutakiArgs) -> anyhow::Result<bool> {
    let (geom, polygon): (ModelGeometry, Option<Polygon>) = match a.model.as_str() {
        "sphere" => (make_sphere_model(16)?, None),
        name => {
            let p = match name {
                "square" => Polygon::square(),
                "blowup" => Polygon::blowup_cp2(),
                path => read_polygon(Path::new(path))?,
            };
            (make_toric_model(&p.vertices, a.resolution)?, Some(p))
        }
    };
    let (phi, x0) = match (&polygon, a.soliton) {
        (Some(p), true) => {
            let c = soliton_field(p)?;
            (solve_soliton(&geom, c)?.potential, c)
        }
        (None, true) => bail!("--soliton needs a toric model"),
        _ => (PotentialField::zero(&geom), [0.0; 2]),
    };
    let fields: Vec<HolomorphicField> = if a.direction.is_empty() {
        eta_basis(&geom, &Background::ke(&geom))?
    } else {
        vec![HolomorphicField::new(&geom, &a.direction)?]
    };
    for y in &fields {
        let f = futaki(&geom, &phi, y, x0)?;
        println!("direction {:?}: re {:.12e} im {:.12e}", y.direction, f.re, f.im);
    }
    Ok(true)
}

fn gauge_fix(snapshot: &Path, trust_radius: f64, out: &Path) -> anyhow::Result<bool> {
    let snap = Snapshot::read(snapshot)?;
    let (geom, bg) = snap.restore()?;
    let phi = &snap.state.phi;
    let (sigma, fixed) = match bg.mode {
        FlowMode::Ke => {
            let g = orthogonalize_ke(&geom, &bg, phi, None)?;
            println!("residuals {:?}", g.residuals);
            (g.sigma, g.phi_sigma)
        }
        FlowMode::Soliton => {
            let m = minimize_gauge_objective(&geom, &bg, phi, trust_radius, None, 1e-12)?;
            println!("{}", serde_json::to_string_pretty(&m.certificate)?);
            (m.sigma.inverse(), m.phi_gauge)
        }
    };
    println!("gauge parameters {:?}", sigma.parameters());
    let mut state = snap.state.clone();
    state.phi = fixed;
    Snapshot::new(&geom, &bg, state).write(&out.join("gauge_fixed.json"))?;
    write_json(out, "gauge_element.json", &sigma)?;
    Ok(true)
}

fn functionals_report(snapshot: &Path, out: &Path) -> anyhow::Result<bool> {
    let snap = Snapshot::read(snapshot)?;
    let (geom, bg) = snap.restore()?;
    let problem = FlowProblem::new(&geom, bg.clone())?;
    let traj = kahler_flow_core::flow::Trajectory {
        mode: bg.mode,
        states: vec![snap.state.clone()],
        accepted: 0,
        rejected: 0,
        within_eps0: true,
        initial_norm: 0.0,
        notes: Vec::new(),
    };
    let decay = DecayReport::from_trajectory(&problem, &traj, kahler_flow_core::functionals::K_MAX, 0.0)?;
    let basis = eta_basis(&geom, &bg)?;
    let objective = gauge_objective(&geom, &bg, &snap.state.phi, &kahler_flow_core::gauge::GaugeElement::identity(&geom), &basis)?;
    let perelman = if geom.is_sphere() { Some(perelman_diagnostics(&problem, &snap.state)?) } else { None };
    let report = serde_json::json!({
        "t": snap.state.t,
        "decay": decay,
        "objective": objective,
        "perelman": perelman,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    write_json(out, "functionals.json", &report)?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = cli.out.clone().unwrap_or_else(output_root);
    let result = match &cli.command {
        Command::Flow { action: FlowAction::Run { config } } => flow_run(config, &out),
        Command::Soliton { action: SolitonAction::Solve { polytope, resolution } } => (|| {
            let p = read_polygon(polytope)?;
            let geom = make_toric_model(&p.vertices, *resolution)?;
            let data = solve_soliton(&geom, soliton_field(&p)?)?;
            println!("c = {:?}, residual {:.3e}, convex {}", data.c, data.residual, data.convex);
            write_json(&out, "soliton.json", &data)?;
            Ok(data.residual < 1e-8 && data.convex)
        })(),
        Command::Gauge { action: GaugeAction::Fix { snapshot, trust_radius } } => gauge_fix(snapshot, *trust_radius, &out),
        Command::Futaki(a) => futaki_cmd(a),
        Command::Spectrum { degree, count } => (|| {
            let g = make_sphere_model(*degree)?;
            let s = laplace_spectrum(&g, &PotentialField::zero(&g), *count)?;
            for (l, r) in s.eigenvalues.iter().zip(&s.residuals) {
                println!("{l:.15} (residual {r:.2e})");
            }
            Ok(true)
        })(),
        Command::Suite { action: SuiteAction::Identities { samples, seed } } => (|| {
            let mut spec = ExperimentSpec::preset(ScenarioId::IdentitySuite);
            spec.suite = Some(SuiteSpec { samples: *samples, seed: *seed });
            let b = run_scenario(&spec, Some(&out.join("identity-suite")))?;
            print_bundle(&b);
            Ok(b.passed())
        })(),
        Command::Scenario { id, config, parallel } => scenario(id, config.as_deref(), *parallel, &out),
        Command::Functionals { action: FunctionalsAction::Report { snapshot } } => functionals_report(snapshot, &out),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
