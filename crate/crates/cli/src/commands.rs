use std::path::{Path, PathBuf};

use ehjscc::distortion::lower_bound;
use ehjscc::policy::{close_endpoint, solve_adaptive, ClosureWindow, PolicySolution};
use ehjscc::search::{capacity_sweep, tune_constants, SearchSpec, SweepResult};
use ehjscc::simulator::{
    compare_to_analytic, mean_and_stderr, simulate_replicas, Comparison, SimConfig, SimPolicy,
    SimulationStats,
};
use ehjscc::Execution;
use serde::Serialize;

use crate::config::Loaded;
use crate::error::CliError;
use crate::output::{self, csv, to_json, write, write_policy, Format};

/// Shared flags after config loading.
pub struct Context {
    pub config: Loaded,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub format: Format,
    pub exec: Execution,
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn bound(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let capacity = c.run.capacity.value();
    let d_lb = lower_bound(&c.source(), &c.channel(), &c.arrivals(), capacity)
        .map_err(|e| CliError::Config(e.to_string()))?;
    match ctx.format {
        Format::Csv => println!("{}", fmt6(d_lb)),
        Format::Json => print!(
            "{}",
            to_json(&serde_json::json!({
                "capacity": if capacity.is_finite() { capacity.into() } else { serde_json::Value::from("inf") },
                "d_lb": d_lb,
            }))?
        ),
    }
    Ok(())
}

/// Solves the configured constants, optionally closing the endpoint.
fn solve_configured(ctx: &Context) -> Result<PolicySolution, CliError> {
    let sys = ctx.config.system()?;
    let k = ctx.config.constants()?;
    if k.close {
        let spec = ctx.config.search_spec(&sys, ctx.seed);
        let window = ClosureWindow {
            lo: spec.c2_bounds.0.min(k.c2),
            hi: spec.c2_bounds.1.max(k.c2),
            scan: spec.c2_scan,
        };
        Ok(close_endpoint(&sys, k.beta, k.c1, window)?)
    } else {
        Ok(solve_adaptive(&sys, &k.constants())?)
    }
}

fn report_policy(dir: &Path, sol: &PolicySolution) -> Result<(), CliError> {
    let path = write_policy(dir, "policy", sol)?;
    println!(
        "d_avg {} pi0 {} kappa0 {} residual {:e} feasible {} -> {}",
        fmt6(sol.d_avg),
        fmt6(sol.pi0),
        fmt6(sol.kappa0),
        sol.residual50,
        sol.feasible,
        path.display()
    );
    Ok(())
}

fn infeasible(sol: &PolicySolution) -> CliError {
    CliError::Infeasible(
        sol.diagnostic
            .clone()
            .unwrap_or_else(|| "solution is infeasible".into()),
    )
}

pub fn solve(ctx: &Context) -> Result<(), CliError> {
    let sol = solve_configured(ctx)?;
    report_policy(&ctx.out, &sol)?;
    if sol.feasible {
        Ok(())
    } else {
        Err(infeasible(&sol))
    }
}

#[derive(Serialize)]
struct SearchReport {
    beta: f64,
    c1: f64,
    c2: f64,
    d_avg: f64,
    d_lb: f64,
    evaluations: usize,
    infeasible_evaluations: usize,
    spec: SearchSpec,
}

pub fn search(ctx: &Context) -> Result<(), CliError> {
    let sys = ctx.config.system()?;
    let spec = ctx.config.search_spec(&sys, ctx.seed);
    let tuned = tune_constants(&sys, &spec, ctx.exec)?;
    let k = tuned.constants;
    let report = SearchReport {
        beta: k.beta,
        c1: k.c1,
        c2: k.c2,
        d_avg: tuned.d_avg,
        d_lb: sys.lower_bound()?,
        evaluations: tuned.evaluations,
        infeasible_evaluations: tuned.infeasible_evaluations,
        spec,
    };
    match ctx.format {
        Format::Csv => write(
            &ctx.out,
            "search.csv",
            &csv(
                &["beta", "c1", "c2", "d_avg", "d_lb", "evaluations"],
                [vec![
                    k.beta.to_string(),
                    k.c1.to_string(),
                    k.c2.to_string(),
                    tuned.d_avg.to_string(),
                    report.d_lb.to_string(),
                    tuned.evaluations.to_string(),
                ]],
            ),
        )?,
        Format::Json => write(&ctx.out, "search.json", &to_json(&report)?)?,
    };
    println!(
        "beta {} c1 {} c2 {} evaluations {}",
        k.beta, k.c1, k.c2, tuned.evaluations
    );
    report_policy(&ctx.out, &tuned.solution)
}

pub fn sweep(ctx: &Context) -> Result<(), CliError> {
    let capacities = ctx.config.sweep_capacities()?;
    // The base system only needs a valid capacity; each row overrides it.
    let sys = ctx.config.system().or_else(|e| match e {
        CliError::Config(_) if !ctx.config.run.capacity.value().is_finite() => {
            let mut c = ctx.config.clone();
            c.run.capacity = crate::config::Capacity::Finite(capacities[0]);
            c.system()
        }
        e => Err(e),
    })?;
    let spec = ctx.config.search_spec(&sys, ctx.seed);
    let result = capacity_sweep(&sys, &capacities, &spec, ctx.exec)?;
    let path = match ctx.format {
        Format::Csv => write(&ctx.out, "sweep.csv", &sweep_csv(&result))?,
        Format::Json => write(&ctx.out, "sweep.json", &to_json(&result)?)?,
    };
    for row in &result.rows {
        println!(
            "L {} adaptive {} constant {} bound {}",
            row.capacity,
            row.d_avg_adaptive.map(fmt6).unwrap_or_else(|| "-".into()),
            row.d_avg_constk.map(fmt6).unwrap_or_else(|| "-".into()),
            fmt6(row.d_lb)
        );
        for e in &row.errors {
            eprintln!("L {}: {e}", row.capacity);
        }
    }
    println!("-> {}", path.display());
    if result.rows.iter().all(|r| r.d_avg_adaptive.is_none() && r.d_avg_constk.is_none()) {
        return Err(CliError::Infeasible("no capacity produced a feasible policy".into()));
    }
    Ok(())
}

pub fn sweep_csv(result: &SweepResult) -> String {
    csv(
        &["L", "d_avg_adaptive", "d_avg_constk", "d_lb"],
        result.rows.iter().map(|r| {
            vec![
                r.capacity.to_string(),
                cell(r.d_avg_adaptive),
                cell(r.d_avg_constk),
                r.d_lb.to_string(),
            ]
        }),
    )
}

#[derive(Serialize)]
struct SimulationReport {
    replicas: Vec<SimulationStats>,
    mean_power: f64,
    mean_power_stderr: f64,
    mean_d_dagger: f64,
    mean_d_dagger_stderr: f64,
    /// Against the solved policy, when it was solved in this run.
    comparison: Vec<Comparison>,
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let section = ctx.config.simulate()?.clone();
    let sys = ctx.config.system()?;
    let (policy, solution) = match ctx.config.custom_policy()? {
        Some(path) => {
            let (table, side) = output::read_policy(&path)?;
            if (side.capacity - sys.capacity).abs() > 1e-12 * sys.capacity.max(1.0) {
                return Err(CliError::Config(format!(
                    "policy {} was solved for capacity {}, config has {}",
                    path.display(),
                    side.capacity,
                    sys.capacity
                )));
            }
            (SimPolicy::Table(table), None)
        }
        None => {
            let sol = solve_configured(ctx)?;
            if !sol.feasible {
                return Err(infeasible(&sol));
            }
            ((&sol).into(), Some(sol))
        }
    };
    let seed = ctx.seed.unwrap_or(section.seed);
    let cfg = SimConfig::new(sys, policy, section.horizon, seed).with_z0(section.z0);
    let seeds: Vec<u64> = (0..section.replicas as u64).map(|i| seed.wrapping_add(i)).collect();
    let stats = simulate_replicas(&cfg, &seeds, ctx.exec)?;

    let comparison = match &solution {
        Some(sol) => stats
            .iter()
            .map(|s| compare_to_analytic(s, sol))
            .collect::<Result<Vec<_>, _>>()?,
        None => Vec::new(),
    };
    let powers: Vec<f64> = stats.iter().map(|s| s.mean_power).collect();
    let ds: Vec<f64> = stats.iter().map(|s| s.mean_d_dagger).collect();
    let (mean_power, mean_power_stderr) = mean_and_stderr(&powers);
    let (mean_d_dagger, mean_d_dagger_stderr) = mean_and_stderr(&ds);

    let path = match ctx.format {
        Format::Csv => write(&ctx.out, "simulation.csv", &simulation_csv(&stats))?,
        Format::Json => write(
            &ctx.out,
            "simulation.json",
            &to_json(&SimulationReport {
                replicas: stats.clone(),
                mean_power,
                mean_power_stderr,
                mean_d_dagger,
                mean_d_dagger_stderr,
                comparison: comparison.clone(),
            })?,
        )?,
    };
    println!(
        "mean power {} (se {:.1e}) mean D {} (se {:.1e}) over {} replica(s) -> {}",
        fmt6(mean_power),
        mean_power_stderr,
        fmt6(mean_d_dagger),
        mean_d_dagger_stderr,
        stats.len(),
        path.display()
    );
    if let Some(worst) = comparison.iter().map(|c| c.ks).reduce(f64::max) {
        println!("largest CDF gap to the analytic law {worst:.4}");
    }
    if let Some(bad) = stats.iter().find(|s| !s.is_consistent()) {
        return Err(CliError::Numerical(format!(
            "energy bookkeeping off by {:e} for seed {}",
            bad.energy_residual, bad.seed
        )));
    }
    Ok(())
}

pub fn simulation_csv(stats: &[SimulationStats]) -> String {
    csv(
        &[
            "seed",
            "mean_power",
            "mean_d_dagger",
            "mean_inv_kappa",
            "pi0_hat",
            "overflow_energy",
            "energy_residual",
        ],
        stats.iter().map(|s| {
            vec![
                s.seed.to_string(),
                s.mean_power.to_string(),
                s.mean_d_dagger.to_string(),
                s.mean_inv_kappa.to_string(),
                s.pi0_hat.to_string(),
                s.overflow_energy.to_string(),
                s.energy_residual.to_string(),
            ]
        }),
    )
}
