use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bilinasa::harness::{self, verify, ExperimentConfig, HarnessError, Parallelism};
use bilinasa::oracle::NoiseKind;

#[derive(Parser)]
#[command(name = "bilinasa", version, about = "Nested compositional bi-level stochastic approximation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config over its seeds.
    Run(RunArgs),
    /// Run the config once per K of its sweep grid and fit the rate.
    Sweep(RunArgs),
    /// Compare the algorithm arms on a regression instance under covariate shift.
    DroCompare(RunArgs),
    /// Run the built-in diagnostics suite.
    Verify,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Seed list, `1,2,3` or `1..20` (inclusive).
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to every core.
    #[arg(long)]
    jobs: Option<usize>,
    /// Replace every noise scale by zero.
    #[arg(long)]
    zero_noise: bool,
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let bad = |s: &str| format!("invalid seed '{s}' in '{text}'");
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad(a))?;
        let b: u64 = b.trim().parse().map_err(|_| bad(b))?;
        if b < a {
            return Err(format!("empty seed range '{text}'"));
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|_| bad(s)))
        .collect()
}

impl RunArgs {
    fn load(&self) -> Result<(ExperimentConfig, Parallelism), HarnessError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = &self.seeds {
            cfg.run.seeds = parse_seeds(s).map_err(HarnessError::Config)?;
        }
        if let Some(out) = &self.out {
            cfg.run.out = out.clone();
        }
        if self.zero_noise {
            cfg.noise.kind = NoiseKind::Zero;
        }
        Ok((cfg, Parallelism { jobs: self.jobs }))
    }
}

fn execute(cmd: Command) -> Result<bool, HarnessError> {
    match cmd {
        Command::Run(args) => {
            let (cfg, par) = args.load()?;
            let out = harness::run_experiment(&cfg, par)?;
            let s = &out.summary;
            println!("instance {}  arm {}  seeds {}", s.instance, s.arm.name(), s.seeds.len());
            if let Some(v) = s.v_output {
                println!("V at output index: mean {:.6e}  std {:.6e}", v.mean, v.std);
            }
            if let Some(v) = s.v_expected {
                println!("V averaged over the output distribution: mean {:.6e}  std {:.6e}", v.mean, v.std);
            }
            if let Some(p) = s.psi_final {
                println!("final upper objective: mean {:.6e}  std {:.6e}", p.mean, p.std);
            }
            println!(
                "diverged {}  prox violations {}  call counts {}",
                s.diverged_seeds.len(),
                s.prox_violations,
                if s.calls_match { "ok" } else { "MISMATCH" }
            );
            println!("artifacts in {}", out.dir.display());
            Ok(out.checks_pass())
        }
        Command::Sweep(args) => {
            let (cfg, par) = args.load()?;
            let report = harness::sweep(&cfg, par)?;
            println!("estimator {:?}", report.estimator);
            for p in &report.points {
                println!(
                    "K {:>6}  M {:>3}  tau {:.4e}  mean V {}  diverged {}",
                    p.k,
                    p.m,
                    p.tau,
                    p.mean_v.map_or("n/a".into(), |v| format!("{v:.6e}")),
                    p.diverged
                );
            }
            match (report.slope, &report.error) {
                (Some(s), _) => println!(
                    "log-log slope {s:.4} (accepted [{}, {}]), decreasing {}",
                    report.slope_range[0], report.slope_range[1], report.strictly_decreasing
                ),
                (None, Some(e)) => println!("no fit: {e}"),
                _ => {}
            }
            println!("{}", if report.passed { "PASS" } else { "FAIL" });
            Ok(report.passed)
        }
        Command::DroCompare(args) => {
            let (cfg, par) = args.load()?;
            let cmp = harness::run_dro_comparison(&cfg, par)?;
            print!("{}", cmp.table());
            let shifts = cfg.dro.clone().unwrap_or_default().shifts;
            let mut ok = true;
            for [a, b] in shifts {
                match cmp.robustness(a, b) {
                    Some(c) => {
                        println!(
                            "shift ({a},{b}): robust {:.6} [{:.6}, {:.6}] vs non-robust {:.6} [{:.6}, {:.6}]: {}",
                            c.robust.mean,
                            c.robust.ci90_low,
                            c.robust.ci90_high,
                            c.nonrobust.mean,
                            c.nonrobust.ci90_low,
                            c.nonrobust.ci90_high,
                            if c.passed() { "PASS" } else { "FAIL" }
                        );
                        ok &= c.passed();
                    }
                    None => {
                        println!("shift ({a},{b}): comparison unavailable");
                        ok = false;
                    }
                }
            }
            Ok(ok)
        }
        Command::Verify => {
            let results = verify::run_all();
            for r in &results {
                println!("{}", r.line());
            }
            Ok(results.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::parse_seeds;

    #[test]
    fn seed_lists_and_ranges() {
        assert_eq!(parse_seeds("1,2, 5").unwrap(), vec![1, 2, 5]);
        assert_eq!(parse_seeds("3..6").unwrap(), vec![3, 4, 5, 6]);
        assert!(parse_seeds("6..3").is_err());
        assert!(parse_seeds("a").is_err());
    }
}
