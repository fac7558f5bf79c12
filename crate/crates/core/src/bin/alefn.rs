use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ale_entropy::cli::{run, FunctionalKind, Verb};
use ale_entropy::config::{parse_list, parse_tol, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "alefn", version, about = "Entropy and mass functionals on radial ALE metrics")]
struct Args {
    #[command(subcommand)]
    verb: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    metric: Option<PathBuf>,
    /// τ values: `a,b,c` or geometric range `start:end:count`.
    #[arg(long, global = true, value_parser = list)]
    tau: Option<List>,
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    rmax: Option<f64>,
    /// Mass ladder radii, comma separated.
    #[arg(long, global = true, value_parser = list)]
    ladder: Option<List>,
    #[arg(long, global = true)]
    horizon: Option<f64>,
    #[arg(long, global = true)]
    snapshots: Option<usize>,
    #[arg(long = "t0-list", global = true, value_parser = list)]
    t0_list: Option<List>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Tolerance override `name=value`; repeatable.
    #[arg(long, global = true, value_parser = parse_tol)]
    tol: Vec<(String, f64)>,
}

#[derive(Clone, Debug)]
struct List(Vec<f64>);

fn list(s: &str) -> Result<List, String> {
    parse_list(s).map(List)
}

#[derive(Subcommand)]
enum Command {
    /// Model summary and `(ρ, g_rr, v, Scal)` table.
    Describe,
    /// One static functional.
    Functional { which: Which },
    /// τ sweep of the test-function value against the large-τ prediction.
    Sweep,
    /// Region-by-region exponents of the test-function value.
    Regions,
    /// Noncompact-region and potential residual fits.
    Residual,
    /// Ricci flow with conjugate heat flows and `λ_dym`.
    Flow,
    /// Pass/fail matrix over the built-in metric catalog.
    VerifyAll,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Mass,
    Lambda,
    Mu,
    Nu,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let verb = match args.verb {
        Command::Describe => Verb::Describe,
        Command::Functional { which } => Verb::Functional(match which {
            Which::Mass => FunctionalKind::Mass,
            Which::Lambda => FunctionalKind::Lambda,
            Which::Mu => FunctionalKind::Mu,
            Which::Nu => FunctionalKind::Nu,
        }),
        Command::Sweep => Verb::Sweep,
        Command::Regions => Verb::Regions,
        Command::Residual => Verb::Residual,
        Command::Flow => Verb::Flow,
        Command::VerifyAll => Verb::VerifyAll,
    };
    let mut config = match (&args.metric, verb) {
        (Some(p), _) => match RunConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("config error: {e}");
                return ExitCode::from(3);
            }
        },
        (None, Verb::VerifyAll) => RunConfig::new(ale_entropy::cli::catalog()[0].1.clone()),
        (None, _) => {
            eprintln!("config error: --metric <file> is required for this verb");
            return ExitCode::from(3);
        }
    };
    let overrides = Overrides {
        taus: args.tau.map(|l| l.0),
        epsilon: args.epsilon,
        rmax: args.rmax,
        ladder: args.ladder.map(|l| l.0),
        horizon: args.horizon,
        snapshots: args.snapshots,
        t0s: args.t0_list.map(|l| l.0),
        out: args.out,
        tols: args.tol.into_iter().collect::<BTreeMap<_, _>>(),
    };
    if let Err(e) = config.apply(&overrides) {
        eprintln!("config error: {e}");
        return ExitCode::from(3);
    }
    match run(&config, verb) {
        Ok(outcome) => {
            print!("{}", outcome.text);
            for f in &outcome.flags {
                eprintln!("flag: {f}");
            }
            for a in &outcome.artifacts {
                eprintln!("wrote {}", a.display());
            }
            ExitCode::from(outcome.status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
