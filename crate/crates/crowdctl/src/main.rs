use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crowdctl::control_synthesis::{simulate, verify_caratheodory};
use crowdctl::error::{CrowdError, Result};
use crowdctl::minimal_time::MinimalTimeReport;
use crowdctl::pipeline::{plan_approx, plan_exact};
use crowdctl::scenario::{load_plan, load_scenario, save_plan, save_trajectory, PlanFile, Scenario};

#[derive(Parser)]
#[command(name = "crowdctl", version, about = "Minimal-time crowd steering through a convex control region")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Exact,
    Approx,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the infimum time and actuation threshold for a scenario
    MinTime {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "exact")]
        mode: Mode,
    },
    /// Synthesize a control plan (waypoints, assignment, tubes)
    Plan {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "exact")]
        mode: Mode,
        /// Horizon override; must exceed the computed infimum time
        #[arg(long)]
        time: Option<f64>,
        #[arg(long, default_value = "plan.json")]
        out: PathBuf,
    },
    /// Closed-loop simulate a plan and export the trajectory
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value = "trajectory.csv")]
        out: PathBuf,
    },
    /// Run the randomized oracle suites (sorted formula vs brute force,
    /// Hungarian vs exhaustive, distance axioms)
    Check {
        /// Size range, e.g. 2..8
        #[arg(long, default_value = "2..8")]
        sizes: String,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn init_threads() {
    if let Ok(v) = std::env::var("CROWDCTL_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn print_report(report: &MinimalTimeReport) {
    let mode = match report.mode {
        crowdctl::minimal_time::ControlMode::Exact => "exact",
        crowdctl::minimal_time::ControlMode::Approximate => "approximate",
    };
    println!("mode: {mode}");
    match report.infimum_time {
        Some(m) => println!("infimum time M: {m:.9}"),
        None => println!("infimum time M: unbounded (geometric condition fails)"),
    }
    match report.actuation_threshold {
        Some(m) => println!("actuation threshold M*: {m:.9}"),
        None => println!("actuation threshold M*: n/a"),
    }
    if let Some(p) = &report.pairing {
        println!("pairing: {p:?}");
    }
    println!("forward times (sorted):  {:?}", report.forward_times_sorted);
    println!("backward times (sorted): {:?}", report.backward_times_sorted);
    println!("feasible: {}", report.feasible);
}

fn cmd_min_time(scenario: &Scenario, mode: Mode) -> Result<()> {
    let report = match mode {
        Mode::Exact => crowdctl::minimal_time::exact_minimal_time(
            &scenario.field,
            &scenario.initial,
            &scenario.target,
            &scenario.region,
            &scenario.params,
        )?,
        Mode::Approx => crowdctl::minimal_time::approx_minimal_time(
            &scenario.field,
            &scenario.initial,
            &scenario.target,
            &scenario.region,
            &scenario.params,
        )?,
    };
    print_report(&report);
    println!("{}", serde_json::to_string(&report)?);
    if !report.feasible {
        let g = crowdctl::minimal_time::check_geometric_condition(
            &scenario.field,
            &scenario.initial,
            &scenario.target,
            &scenario.region,
            &scenario.params,
        )?;
        let mut parts = Vec::new();
        for i in &g.forward_blocked {
            parts.push(format!("agent {i} (forward)"));
        }
        for i in &g.backward_blocked {
            parts.push(format!("agent {i} (backward)"));
        }
        return Err(CrowdError::Infeasible(format!(
            "no region entry within t_max for: {}",
            parts.join(", ")
        )));
    }
    Ok(())
}

fn cmd_plan(scenario: &Scenario, mode: Mode, time: Option<f64>, out: &PathBuf) -> Result<()> {
    let (report, plan) = match mode {
        Mode::Exact => {
            let o = plan_exact(
                &scenario.field,
                &scenario.initial,
                &scenario.target,
                &scenario.region,
                &scenario.params,
                time,
            )?;
            (o.report, o.plan)
        }
        Mode::Approx => {
            let o = plan_approx(
                &scenario.field,
                &scenario.initial,
                &scenario.target,
                &scenario.region,
                &scenario.params,
                time,
            )?;
            (o.report, o.plan)
        }
    };
    let cara = verify_caratheodory(&plan, &scenario.field, 10_000, scenario.params.seed);
    println!("horizon T: {:.9}", plan.horizon);
    println!("permutation: {:?}", plan.sigma);
    println!("min separation: {:.6e}", plan.min_separation);
    println!("control bound M: {:.6}", plan.control_bound);
    println!(
        "admissibility: sup |u| = {:.6} (bound {:.6}), Lipschitz ratio {:.3} (budget {:.3}) -> {}",
        cara.sup_norm,
        cara.bound,
        cara.max_lipschitz_ratio,
        cara.lipschitz_budget,
        if cara.passed { "ok" } else { "FAILED" }
    );
    if !cara.passed {
        return Err(CrowdError::VerificationFailed(
            "synthesized control violates its admissibility bounds".into(),
        ));
    }
    let pf = PlanFile {
        scenario_hash: scenario.hash.clone(),
        report,
        plan,
    };
    save_plan(out, &pf)?;
    println!("plan written to {}", out.display());
    Ok(())
}

fn cmd_simulate(scenario: &Scenario, plan_path: &PathBuf, out: &PathBuf) -> Result<()> {
    let pf = load_plan(plan_path)?;
    if pf.scenario_hash != scenario.hash {
        return Err(CrowdError::PlanMismatch);
    }
    let bounds = scenario.params.working_box(scenario.dimension);
    let result = simulate(
        &pf.plan,
        &scenario.field,
        &scenario.region,
        &scenario.initial,
        &scenario.target,
        scenario.params.sim_step(),
        scenario.params.output_stride,
        &bounds,
    )?;
    let summary = save_trajectory(out, &result)?;
    println!("endpoint_error: {:.6e}", summary.endpoint_error);
    println!("control_sup_norm: {:.6}", summary.control_sup_norm);
    println!(
        "trajectory ({} rows) written to {}",
        summary.rows,
        out.display()
    );
    Ok(())
}

fn parse_sizes(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split("..").collect();
    let bad = || CrowdError::Validation(format!("cannot parse size range '{s}' (expected lo..hi)"));
    match parts.as_slice() {
        [lo, hi] => Ok((
            lo.trim().parse().map_err(|_| bad())?,
            hi.trim().parse().map_err(|_| bad())?,
        )),
        [one] => {
            let n = one.trim().parse().map_err(|_| bad())?;
            Ok((n, n))
        }
        _ => Err(bad()),
    }
}

fn cmd_check(sizes: &str, trials: usize, seed: u64) -> Result<()> {
    let (lo, hi) = parse_sizes(sizes)?;
    let report = crowdctl::check::run_checks(lo, hi, trials, seed)?;
    for line in &report.lines {
        println!("{line}");
    }
    println!("{} passed, {} failed", report.passed, report.failed);
    if !report.all_passed() {
        return Err(CrowdError::VerificationFailed(format!(
            "{} oracle suites failed",
            report.failed
        )));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MinTime { scenario, mode } => {
            let s = load_scenario(&scenario)?;
            cmd_min_time(&s, mode)
        }
        Command::Plan { scenario, mode, time, out } => {
            let s = load_scenario(&scenario)?;
            cmd_plan(&s, mode, time, &out)
        }
        Command::Simulate { scenario, plan, out } => {
            let s = load_scenario(&scenario)?;
            cmd_simulate(&s, &plan, &out)
        }
        Command::Check { sizes, trials, seed } => cmd_check(&sizes, trials, seed),
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
