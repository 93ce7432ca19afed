use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use hybrid_traffic::diagram::{analytic_y_diagram, diagram_sweep};
use hybrid_traffic::fp::{evolve_fp, steady_state};
use hybrid_traffic::hybrid::evolve_hybrid;
use hybrid_traffic::io::config::RunConfig;
use hybrid_traffic::io::svg::{write_diagram_svg, ScatterPoint};
use hybrid_traffic::io::trajectory::{ingest_trajectories, write_samples_csv, Aggregation};
use hybrid_traffic::io::{
    write_density_bin, write_density_csv, write_diagram_csv, write_ensemble_csv, write_field_csv,
    write_moments_csv, write_step_log_csv, write_summary_csv,
};
use hybrid_traffic::mc::stratified_sample;
use hybrid_traffic::uq::{
    expected_distribution, expected_moment, gauss_legendre, run_ensemble,
    theta_variance_distribution, theta_variance_moment, MomentKind,
};
use hybrid_traffic::validation::{self, refinement_orders, CRITERIA};
use hybrid_traffic::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_VALIDATION: u8 = 3;

#[derive(Parser)]
#[command(
    name = "hybrid-traffic",
    version,
    about = "Hybrid kinetic traffic model runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override one configuration field, e.g. `--set rho=0.7`.
    #[arg(long = "set", value_name = "FIELD=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Along-lane Fokker-Planck run.
    FpSolve {
        #[command(flatten)]
        common: Common,
        /// Stop at the steady state instead of after `t_max`.
        #[arg(long)]
        steady: bool,
        /// Grid refinement study on `n_x`, `2 n_x`, `4 n_x` cells.
        #[arg(long)]
        orders: bool,
        /// Times at which the refinement study is evaluated.
        #[arg(long, value_delimiter = ',', default_value = "1,20,60,100")]
        times: Vec<f64>,
    },
    /// Hybrid run at a single `theta`.
    Hybrid {
        #[command(flatten)]
        common: Common,
    },
    /// Collocation ensemble with expected and variance fields.
    Uq {
        #[command(flatten)]
        common: Common,
    },
    /// Density sweep with the closed-form lateral band.
    Diagram {
        #[command(flatten)]
        common: Common,
        /// Aggregated samples to draw over the diagram.
        #[arg(long)]
        empirical: Option<PathBuf>,
    },
    /// Aggregate a trajectory CSV into normalised samples.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the acceptance checks and print a pass/fail table.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of checks.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
    },
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn load_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut doc = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<Value>(&text).map_err(Error::from)?
        }
        None => Value::Object(Default::default()),
    };
    let map = doc
        .as_object_mut()
        .ok_or_else(|| Error::Input("configuration must be a JSON object".into()))?;
    for item in &common.overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Input(format!("override `{item}` is not FIELD=VALUE")))?;
        map.insert(key.trim().to_string(), parse_value(raw.trim()));
    }
    if let Some(seed) = common.seed {
        map.insert("seed".into(), Value::from(seed));
    }
    if let Some(out) = &common.out {
        map.insert(
            "out_dir".into(),
            Value::from(out.to_string_lossy().into_owned()),
        );
    }
    Ok(RunConfig::from_json(&doc.to_string())?)
}

fn out_path(cfg: &RunConfig, name: &str) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    Ok(cfg.out_dir.join(name))
}

fn fp_solve(common: &Common, steady: bool, orders: bool, times: &[f64]) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let params = cfg.model();
    let solver = cfg.solver();
    if orders {
        let rows: Vec<(usize, String, f64)> =
            refinement_orders(&params, &solver, cfg.n_x, times, cfg.initial)?
                .into_iter()
                .zip(times)
                .map(|(o, t)| (cfg.n_x, format!("order_tau_{t}"), o))
                .collect();
        for (_, q, v) in &rows {
            println!("{q}: {v:.4}");
        }
        write_summary_csv(&out_path(&cfg, "orders.csv")?, &rows)?;
        return Ok(());
    }
    let initial = cfg.initial_density()?;
    let run = if steady {
        steady_state(&initial, &params, &solver)?
    } else {
        evolve_fp(&initial, &params, &solver, solver.t_max)?
    };
    write_density_csv(&out_path(&cfg, "density.csv")?, &run.dist)?;
    write_density_bin(&out_path(&cfg, "density.bin")?, &run.dist)?;
    write_step_log_csv(&out_path(&cfg, "fp_log.csv")?, &run.log)?;
    let m = run.dist.moments();
    println!(
        "t = {:.4} after {} steps (steady: {}), u_x = {:.6}, mass = {:.15}",
        run.time,
        run.steps,
        run.converged,
        m.u_x,
        run.dist.mass()
    );
    Ok(())
}

fn hybrid(common: &Common) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let state = evolve_hybrid(
        &cfg.initial_density()?,
        cfg.theta,
        &cfg.model(),
        &cfg.solver(),
        &cfg.hybrid(),
        cfg.horizon,
        cfg.seed,
    )?;
    write_density_csv(&out_path(&cfg, "density.csv")?, &state.dist)?;
    write_density_bin(&out_path(&cfg, "density.bin")?, &state.dist)?;
    write_moments_csv(&out_path(&cfg, "moments.csv")?, &state.moment_log)?;
    let ens = stratified_sample(&state.dist, cfg.n_particles, cfg.seed)?;
    write_ensemble_csv(&out_path(&cfg, "ensemble.csv")?, &ens)?;
    let m = state.dist.moments();
    println!(
        "tau = {:.4} after {} steps: u_x = {:.6}, u_y = {:.6}, E_y = {:.6}",
        state.tau, state.steps, m.u_x, m.u_y, m.e_y
    );
    Ok(())
}

fn uq(common: &Common) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let quad = gauss_legendre(cfg.nodes)?;
    let sol = run_ensemble(
        &cfg.initial_density()?,
        &cfg.model(),
        &cfg.solver(),
        &cfg.hybrid(),
        &quad,
        cfg.horizon,
        cfg.seed,
    )?;
    let expected = expected_distribution(&quad, &sol.densities())?;
    let variance = theta_variance_distribution(&quad, &sol.densities())?;
    write_density_csv(&out_path(&cfg, "expected.csv")?, &expected)?;
    write_field_csv(
        &out_path(&cfg, "variance.csv")?,
        &variance.grid,
        &variance.values,
    )?;
    let mut rows = Vec::new();
    for (name, kind) in [
        ("u_x", MomentKind::UX),
        ("u_y", MomentKind::UY),
        ("E_x", MomentKind::EX),
        ("E_y", MomentKind::EY),
    ] {
        rows.push((
            cfg.nodes,
            format!("expected_{name}"),
            expected_moment(&sol, kind),
        ));
        rows.push((
            cfg.nodes,
            format!("variance_{name}"),
            theta_variance_moment(&sol, kind),
        ));
    }
    write_summary_csv(&out_path(&cfg, "summary.csv")?, &rows)?;
    for (_, q, v) in &rows {
        println!("{q}: {v:.6e}");
    }
    Ok(())
}

fn read_empirical(path: &Path) -> anyhow::Result<Vec<ScatterPoint>> {
    let mut rdr = csv::Reader::from_path(path).map_err(Error::from)?;
    let headers = rdr.headers().map_err(Error::from)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("{} lacks column {name}", path.display())))
    };
    let (r, x, y) = (col("rho_norm")?, col("ux_norm")?, col("uy_norm")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(Error::from)?;
        let num = |k: usize| -> anyhow::Result<f64> {
            rec[k]
                .parse()
                .map_err(|_| Error::Input(format!("bad number `{}`", &rec[k])).into())
        };
        out.push(ScatterPoint {
            rho: num(r)?,
            u_x: num(x)?,
            u_y: num(y)?,
        });
    }
    Ok(out)
}

fn diagram(common: &Common, empirical: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let params = cfg.model();
    let quad = gauss_legendre(cfg.nodes)?;
    let points = diagram_sweep(
        &cfg.rho_grid,
        &cfg.initial_density()?,
        &params,
        &cfg.solver(),
        &cfg.hybrid(),
        &quad,
        &cfg.sweep(),
        cfg.seed,
    )?;
    write_diagram_csv(&out_path(&cfg, "diagram.csv")?, &points)?;
    let mut analytic = Vec::new();
    for p in &points {
        let a = analytic_y_diagram(p.rho, &params)?;
        let m = (p.rho * 1e6).round() as usize;
        analytic.push((m, "uy_bar".to_string(), a.uy_bar));
        analytic.push((m, "halfwidth".to_string(), a.halfwidth));
        println!(
            "rho {:.3}: u_x {:.4}, u_y {:+.5}, sqrt(I_y) {:.5} (closed form {:.5}){}",
            p.rho,
            p.ux_inf,
            p.uy_bar_inf,
            p.iy.sqrt(),
            a.halfwidth,
            if p.equilibrated {
                ""
            } else {
                ", still drifting"
            }
        );
    }
    write_summary_csv(&out_path(&cfg, "analytic.csv")?, &analytic)?;
    let scatter = match empirical {
        Some(path) => read_empirical(path)?,
        None => Vec::new(),
    };
    write_diagram_svg(&out_path(&cfg, "diagram.svg")?, &points, &scatter)?;
    Ok(())
}

fn ingest(common: &Common, input: &Path) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let agg = Aggregation {
        dt_window: cfg.dt_window,
        dx_window: cfg.dx_window,
        lane_count: cfg.lane_count,
        road_length: cfg.road_length,
    };
    let samples = ingest_trajectories(input, &agg)?;
    write_samples_csv(&out_path(&cfg, "samples.csv")?, &samples)?;
    println!("{} bins aggregated", samples.len());
    Ok(())
}

fn validate(common: &Common, only: &[String]) -> anyhow::Result<bool> {
    let cfg = load_config(common)?;
    let ids: Vec<&str> = if only.is_empty() {
        CRITERIA.to_vec()
    } else {
        only.iter().map(String::as_str).collect()
    };
    let mut all = true;
    let mut reports = Vec::new();
    for id in ids {
        match validation::run_criterion(id) {
            Ok(r) => {
                println!("{}", r.line());
                all &= r.passed;
                reports.push(r);
            }
            Err(e) => {
                println!("[FAIL] {id:<5} error: {e}");
                all = false;
            }
        }
    }
    let json = serde_json::to_string_pretty(&reports).map_err(Error::from)?;
    std::fs::write(out_path(&cfg, "validation.json")?, json)?;
    println!(
        "{}",
        if all {
            "all checks passed"
        } else {
            "some checks failed"
        }
    );
    Ok(all)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::CflViolation { .. }
            | Error::SingularSystem { .. }
            | Error::NonFinite { .. }
            | Error::Degenerate(_)
            | Error::RejectedDraw { .. }
            | Error::Domain(_)
            | Error::Internal(_),
        ) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match &cli.command {
        Command::FpSolve {
            common,
            steady,
            orders,
            times,
        } => fp_solve(common, *steady, *orders, times),
        Command::Hybrid { common } => hybrid(common),
        Command::Uq { common } => uq(common),
        Command::Diagram { common, empirical } => diagram(common, empirical.as_deref()),
        Command::Ingest { common, input } => ingest(common, input),
        Command::Validate { common, only } => match validate(common, only) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(EXIT_VALIDATION),
            Err(e) => Err(e),
        },
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
