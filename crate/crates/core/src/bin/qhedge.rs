use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use qhedge::config::RunConfig;
use qhedge::engine::AxisPoint;
use qhedge::output::{write_atomic, write_surfaces};
use qhedge::propagate::Method;
use qhedge::verify::{check_tree_duality, verify, Check};
use qhedge::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "qhedge", version, about = "Quantile hedging prices of Bermudan claims")]
struct Cli {
    /// JSON run configuration; the strike-30 put example when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed of every random stream; overrides the configured seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Period propagator; overrides `propagator.method`.
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Fd,
    Quad,
    Mc,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Price `v(t, x, p)` with provenance as JSON.
    Price {
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        #[arg(long)]
        x: f64,
        #[arg(long)]
        p: f64,
    },
    /// Write the `v`, `w` and `covl` surfaces at time `t`.
    Surface {
        #[arg(long, default_value_t = 0.0)]
        t: f64,
    },
    /// Run the verification suite; nonzero exit on any failure.
    Verify,
    /// Primal and dual binomial-tree recursions against each other.
    TreeCheck,
    /// Surfaces at `t_0` and `t_1` for the put and put-spread examples, or
    /// for the given configuration.
    Figures,
}

struct Run {
    config: RunConfig,
    out: PathBuf,
}

fn load(cli: &Cli) -> Result<Run> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::put_example(),
    };
    apply_overrides(cli, &mut config);
    let out = cli
        .out
        .clone()
        .or_else(|| config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Run { config, out })
}

fn apply_overrides(cli: &Cli, config: &mut RunConfig) {
    if let Some(s) = cli.seed {
        config.verification.seed = s;
        config.propagator.seed = s;
    }
    if let Some(m) = cli.method {
        config.propagator.method = match m {
            MethodArg::Fd => Method::FiniteDifference,
            MethodArg::Quad => Method::Quadrature,
            MethodArg::Mc => Method::MonteCarlo,
        };
    }
}

fn report(checks: &[Check], path: &Path) -> Result<bool> {
    let body = serde_json::to_string_pretty(checks)? + "\n";
    write_atomic(path, body.as_bytes())?;
    print!("{body}");
    Ok(checks.iter().all(Check::passed))
}

fn run(cli: &Cli) -> Result<bool> {
    let run = load(cli)?;
    match &cli.command {
        Command::Price { t, x, p } => {
            let problem = run.config.problem()?;
            let sol = problem.solve()?;
            let price = sol.query(*t, *x, AxisPoint::P(*p))?;
            let g = &problem.engine.grid;
            let body = json!({
                "t": t,
                "x": x,
                "p": p,
                "price": price,
                "method": problem.engine.propagator.method,
                "grid": {
                    "nx": g.nx,
                    "nq": g.nq,
                    "np": g.np,
                    "x_min": sol.x_grid.first(),
                    "x_max": sol.x_grid.last(),
                    "q_max": sol.q_grid.last(),
                },
                "eps_dual": sol.eps_dual,
                "audit": sol.audit,
            });
            println!("{}", serde_json::to_string_pretty(&body)?);
            Ok(true)
        }
        Command::Surface { t } => {
            let sol = run.config.problem()?.solve()?;
            let i = sol.date_index(*t)?;
            for p in write_surfaces(&sol, i, &run.out)? {
                println!("{}", p.display());
            }
            Ok(true)
        }
        Command::Verify => {
            let problem = run.config.problem()?;
            let checks = verify(&problem, &run.config.verification)?;
            report(&checks, &run.out.join("verify.json"))
        }
        Command::TreeCheck => {
            let problem = run.config.problem()?;
            let v = &run.config.verification;
            let x0 = v.x_ref.unwrap_or(problem.engine.grid.x_ref);
            let c = check_tree_duality(&problem, x0, v.tree_steps, v.tree_grid, v.tolerances.tree_duality)?;
            report(&[c], &run.out.join("tree_check.json"))
        }
        Command::Figures => {
            let sets = match cli.config {
                Some(_) => vec![("config", run.config.clone())],
                None => {
                    let mut put = RunConfig::put_example();
                    let mut spread = RunConfig::put_spread_example();
                    apply_overrides(cli, &mut put);
                    apply_overrides(cli, &mut spread);
                    vec![("put", put), ("put-spread", spread)]
                }
            };
            for (label, config) in sets {
                let sol = config.problem()?.solve()?;
                let dir = run.out.join(label);
                for i in 0..sol.schedule.dates().len().min(2) {
                    for p in write_surfaces(&sol, i, &dir)? {
                        println!("{}", p.display());
                    }
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
