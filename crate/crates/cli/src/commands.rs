use std::fs;
use std::path::Path;

use drd_opf::dp::{backward_induction_with, BackwardOptions, ValueFunctions};
use drd_opf::grid::{load_case, GridCase};
use drd_opf::report::{CaseSummary, Report, ReportRow, RunSettings, SCHEMA_VERSION};
use drd_opf::sim::{build_reference, gamma_dir_name, gamma_sweep, sample_pool, substream_seed, SweepConfig};
use drd_opf::value::make_grid;

use crate::config::{RunArgs, RunConfig, SWEEP_GAMMAS};
use crate::{plots, CliError};

pub fn validate(args: &RunArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(args, &[0.0])?;
    let case = load(&cfg)?;
    println!(
        "{}: valid ({} stages, {} buses, {} generators, {} lines, {} renewable units)",
        case.name,
        case.horizon,
        case.num_buses(),
        case.num_generators(),
        case.num_lines(),
        case.renewables.len()
    );
    Ok(())
}

pub fn solve(args: &RunArgs) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(args, &[0.0])?;
    init_jobs(&cfg)?;
    let case = load(&cfg)?;
    let grid = make_grid(&case, cfg.pieces, cfg.grid_cap)?;
    let fit_pool = sample_pool(&case, cfg.model, cfg.n_fit, substream_seed(cfg.seed, "fit-pool"))?;
    let reference = build_reference(&fit_pool, cfg.bins)?;

    let mut rows = Vec::with_capacity(cfg.gammas.len());
    for &gamma in &cfg.gammas {
        eprintln!("gamma {gamma}: fitting {} stages", case.horizon);
        let options = BackwardOptions {
            checkpoint_dir: Some(cfg.out.join("checkpoints").join(gamma_dir_name(gamma))),
            progress: Some(stage_done),
        };
        let values = backward_induction_with(&case, &reference, gamma, &grid, &options)?;
        write_values(&cfg.out, &values)?;
        println!("gamma {gamma}: root value {:.6}", values.root.value);
        rows.push(ReportRow {
            gamma,
            root_value: values.root.value,
            max_fit_residual: values.max_fit_residual(),
            min_eigenvalue: values.min_eigenvalue(),
            simulation: None,
        });
    }
    let report = Report {
        schema_version: SCHEMA_VERSION,
        command: "solve".into(),
        case: CaseSummary::of(&case),
        settings: settings(&cfg),
        fit_pool_digest: fit_pool.digest(),
        eval_pool_digest: None,
        rows,
    };
    finish(&report, &cfg.out)
}

pub fn simulate(args: &RunArgs) -> Result<(), CliError> {
    run_sweep(args, &[0.0], "simulate")
}

pub fn sweep(args: &RunArgs) -> Result<(), CliError> {
    run_sweep(args, &SWEEP_GAMMAS, "sweep")
}

fn run_sweep(args: &RunArgs, default_gammas: &[f64], command: &str) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(args, default_gammas)?;
    init_jobs(&cfg)?;
    let case = load(&cfg)?;
    let sweep = SweepConfig {
        gammas: cfg.gammas.clone(),
        pieces: cfg.pieces,
        bins: cfg.bins,
        n_fit: cfg.n_fit,
        n_eval: cfg.n_eval,
        seed: cfg.seed,
        model: cfg.model,
        open_loop: cfg.open_loop,
        grid_cap: cfg.grid_cap,
        checkpoint_dir: Some(cfg.out.join("checkpoints")),
    };
    eprintln!("{command}: {} radii on {} ({} stages)", cfg.gammas.len(), case.name, case.horizon);
    let result = gamma_sweep(&case, &sweep)?;
    for values in &result.values {
        write_values(&cfg.out, values)?;
    }
    let rows = result
        .rows
        .iter()
        .map(|r| {
            println!(
                "gamma {}: root value {:.6}, simulated mean {:.6}, std {:.6}, p90 {:.6}",
                r.gamma, r.root_value, r.stats.mean, r.stats.std_dev, r.stats.p90
            );
            ReportRow {
                gamma: r.gamma,
                root_value: r.root_value,
                max_fit_residual: r.max_fit_residual,
                min_eigenvalue: r.min_eigenvalue,
                simulation: Some(r.stats.clone()),
            }
        })
        .collect();
    let report = Report {
        schema_version: SCHEMA_VERSION,
        command: command.into(),
        case: CaseSummary::of(&case),
        settings: settings(&cfg),
        fit_pool_digest: result.fit_digest,
        eval_pool_digest: Some(result.eval_digest),
        rows,
    };
    finish(&report, &cfg.out)
}

pub fn report(out: &Path) -> Result<(), CliError> {
    let report = Report::read_from(out)?;
    finish(&report, out)
}

fn stage_done(t: usize) {
    eprintln!("  stage {t} done");
}

fn load(cfg: &RunConfig) -> Result<GridCase, CliError> {
    let case = load_case(cfg.case_path()?)?;
    Ok(match cfg.horizon {
        Some(h) => case.truncated(h),
        None => case,
    })
}

fn init_jobs(cfg: &RunConfig) -> Result<(), CliError> {
    if let Some(n) = cfg.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} worker threads: {e}")))?;
    }
    Ok(())
}

fn settings(cfg: &RunConfig) -> RunSettings {
    RunSettings {
        gammas: cfg.gammas.clone(),
        pieces: cfg.pieces,
        bins: cfg.bins,
        n_fit: cfg.n_fit,
        n_eval: cfg.n_eval,
        seed: cfg.seed,
        model: cfg.model,
        open_loop: cfg.open_loop,
    }
}

fn write_values(out: &Path, values: &ValueFunctions) -> Result<(), CliError> {
    let dir = out.join("values");
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(dir.clone(), e))?;
    let path = dir.join(format!("{}.json", gamma_dir_name(values.gamma)));
    let text = serde_json::to_string(values).map_err(drd_opf::Error::from)?;
    fs::write(&path, text).map_err(|e| CliError::Io(path, e))
}

fn finish(report: &Report, out: &Path) -> Result<(), CliError> {
    report.write_to(out)?;
    plots::write_all(report, &out.join("plots"))?;
    eprintln!("wrote {}", out.display());
    Ok(())
}
