use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use surfsd::cli::{run_condition, run_convergence, run_layer, run_solve, RunConfig};
use surfsd::Error;

/// Stabilized cut finite element solver for convection-diffusion on
/// implicit surfaces.
#[derive(Parser)]
#[command(name = "surfsd", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a single configuration and write the solution surface.
    Solve(RunArgs),
    /// Refinement study reporting error norms and convergence rates.
    Convergence(RunArgs),
    /// Condition-number scaling study over mesh sizes and exponents.
    Condition(RunArgs),
    /// Layer experiment comparing stabilization settings.
    Layer(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the configured one).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cmd: &Command) -> Result<(), Error> {
    let args = match cmd {
        Command::Solve(a) | Command::Convergence(a) | Command::Condition(a) | Command::Layer(a) => {
            a
        }
    };
    let cfg = RunConfig::load(&args.config)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    match cmd {
        Command::Solve(_) => {
            let s = run_solve(&cfg, &out)?;
            println!(
                "solved: n={} h={:.4e} dofs={} method={} iters={} residual={:.3e}",
                s.n, s.h, s.n_dofs, s.report.method, s.report.iterations, s.report.final_residual
            );
            if let Some(e) = &s.errors {
                println!(
                    "errors: l2={:.6e} h1t={:.6e} sd={:.6e} ns={:.6e} triple={:.6e}",
                    e.l2_err, e.h1t_err, e.sd_err, e.ns_err, e.triple_err
                );
            }
            println!("wrote {} and {}", s.vtk_path.display(), s.manifest_path.display());
        }
        Command::Convergence(_) => {
            let t = run_convergence(&cfg, &out)?;
            for r in &t.rows {
                println!(
                    "level {}: n={} h={:.4e} dofs={} l2={:.6e} triple={:.6e} eoc_l2={}",
                    r.level,
                    r.n,
                    r.h,
                    r.n_dofs,
                    r.errors.l2_err,
                    r.errors.triple_err,
                    r.eoc_l2.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into()),
                );
            }
            println!("wrote {}", t.csv_path.display());
        }
        Command::Condition(_) => {
            let t = run_condition(&cfg, &out)?;
            for r in &t.rows {
                println!(
                    "gamma={:.3} n={} offset={} kappa={:.4e} (sigma {:.3e} .. {:.3e})",
                    r.gamma,
                    r.n,
                    r.offset_id,
                    r.estimate.kappa,
                    r.estimate.sigma_min,
                    r.estimate.sigma_max
                );
            }
            println!("wrote {}", t.csv_path.display());
        }
        Command::Layer(_) => {
            let t = run_layer(&cfg, &out)?;
            for r in &t.rows {
                println!(
                    "{}: range [{:.4}, {:.4}] undershoot={:.4} overshoot={:.4} converged={}",
                    r.label,
                    r.overshoot.min_u,
                    r.overshoot.max_u,
                    r.overshoot.undershoot,
                    r.overshoot.overshoot,
                    r.converged
                );
            }
            println!("wrote {}", t.csv_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
