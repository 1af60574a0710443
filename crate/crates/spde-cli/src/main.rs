//! Batch front-end for the lattice solver library.
//!
//! Subcommands: `noise`, `solve`, `converge`, `kernel`, `holder`. Each
//! reads one JSON config (defaults filled in), writes its artifacts under
//! `--out`, and echoes the fully resolved config into its JSON report so
//! runs can be reproduced exactly.
//!
//! Exit codes: 0 success, 2 validation failure, 3 numerical failure,
//! 4 IO failure.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::RunConfig;
use spde_lattice::green::{smoothing_error_rate, truncation_error_norm, KernelSpec, Truncation};
use spde_lattice::grid::GridSpec;
use spde_lattice::io::{write_estimates_csv, write_field_binary, write_field_csv, CSV_LIMIT};
use spde_lattice::lab::{holder_structure, run_experiment, Lab};
use spde_lattice::mollifier::{epsilon_of_n, MollifierTable};
use spde_lattice::noise::{check_integrability, CovarianceTable, NoiseSampler};
use spde_lattice::solver::{apriori_norm_check, make_g_n, solve};
use spde_lattice::Error;

#[derive(Parser)]
#[command(name = "spde", about = "Lattice solver for noise-driven elliptic problems")]
struct Cli {
    /// JSON configuration file; defaults are used when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory
    #[arg(long, global = true, default_value = "spde-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a noise realization and validate its covariance
    Noise,
    /// Solve one realization of the lattice problem
    Solve,
    /// Run the coupled multi-resolution convergence experiment
    Converge,
    /// Tabulate kernel norms, truncation errors, and smoothing rates
    Kernel,
    /// Estimate Hölder structure-function slopes
    Holder,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::GridMismatch(_)
        | Error::OutOfDomain { .. }
        | Error::IndexOutOfRange { .. } => 2,
        Error::NonConvergence { .. }
        | Error::NotPositiveSemidefinite(_)
        | Error::EmbeddingFailure(_) => 3,
        Error::Io(_) | Error::Format(_) => 4,
    }
}

fn run(cli: Cli) -> spde_lattice::Result<()> {
    let mut cfg: RunConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("config parse failure: {e}")))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::Noise => cmd_noise(&cfg, &cli.out),
        Command::Solve => cmd_solve(&cfg, &cli.out),
        Command::Converge => cmd_converge(&cfg, &cli.out),
        Command::Kernel => cmd_kernel(&cfg, &cli.out),
        Command::Holder => cmd_holder(&cfg, &cli.out),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> spde_lattice::Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("serialization: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn mollifier(cfg: &RunConfig) -> spde_lattice::Result<Arc<MollifierTable>> {
    Ok(Arc::new(MollifierTable::build_psi(cfg.half_width)?))
}

fn cmd_noise(cfg: &RunConfig, out: &Path) -> spde_lattice::Result<()> {
    cfg.model.validate(cfg.d)?;
    let grid = GridSpec::new(cfg.d, cfg.n)?;
    let integrability = check_integrability(&cfg.model, cfg.alpha, cfg.lambda, cfg.d)?;
    let table = CovarianceTable::build(grid, cfg.model, grid.resolution() - 1)?;
    // dense eigenvalue audits get expensive; skip on large grids
    let psd = if grid.interior_len() <= 4096 {
        table.check_psd()?;
        json!("ok")
    } else {
        json!("skipped (grid too large for dense check)")
    };
    let sampler = NoiseSampler::new(grid, cfg.model, cfg.backend, cfg.seed)?;
    let realization = sampler.sample(0);
    let field = realization.to_field();
    write_field_binary(&out.join("noise.bin"), &field, cfg.seed)?;
    if grid.interior_len() <= CSV_LIMIT {
        write_field_csv(&out.join("noise.csv"), &field)?;
    }
    write_json(
        &out.join("noise_report.json"),
        &json!({
            "command": "noise",
            "config": cfg,
            "backend": sampler.backend(),
            "psd_check": psd,
            "integrability": integrability,
            "zero_offset_covariance": table.entry(&vec![0i64; cfg.d])?,
        }),
    )
}

fn cmd_solve(cfg: &RunConfig, out: &Path) -> spde_lattice::Result<()> {
    cfg.drift.validate_contraction(cfg.d)?;
    let start = Instant::now();
    let table = mollifier(cfg)?;
    let grid = GridSpec::new(cfg.d, cfg.n)?;
    let eps = epsilon_of_n(cfg.n, cfg.theta, cfg.d)?;
    let kernel = KernelSpec::new(grid, eps, table.clone(), Truncation::Lattice)?;
    let g_n = make_g_n(grid, |x| cfg.forcing.eval(x));
    let noise = if cfg.with_noise {
        Some(NoiseSampler::new(grid, cfg.model, cfg.backend, cfg.seed)?.sample(0))
    } else {
        None
    };
    let result = solve(&kernel, &cfg.drift, Some(&g_n), noise.as_ref(), &cfg.solve);
    let sol = match result {
        Ok(sol) => sol,
        Err(e) => {
            // non-convergence still leaves a diagnostic trail
            if let Error::NonConvergence {
                iterations,
                residual,
                ref history,
            } = e
            {
                write_json(
                    &out.join("solve_report.json"),
                    &json!({
                        "command": "solve",
                        "config": cfg,
                        "converged": false,
                        "iterations": iterations,
                        "final_residual": residual,
                        "residuals": history,
                    }),
                )?;
            }
            return Err(e);
        }
    };
    write_field_binary(&out.join("solution.bin"), &sol.field, cfg.seed)?;
    if grid.interior_len() <= CSV_LIMIT {
        write_field_csv(&out.join("solution.csv"), &sol.field)?;
    }
    let apriori = apriori_norm_check(
        cfg.d,
        &[cfg.n],
        cfg.theta,
        &table,
        &cfg.drift,
        |x| cfg.forcing.eval(x),
        &cfg.solve,
    )?;
    write_json(
        &out.join("solve_report.json"),
        &json!({
            "command": "solve",
            "config": cfg,
            "converged": true,
            "iterations": sol.iterations,
            "residuals": sol.residuals,
            "contraction_ratio": sol.max_contraction_ratio(1e-13),
            "sup_norm": sol.field.sup_norm(),
            "apriori": apriori,
            "wall_seconds": start.elapsed().as_secs_f64(),
        }),
    )
}

fn cmd_converge(cfg: &RunConfig, out: &Path) -> spde_lattice::Result<()> {
    let table = mollifier(cfg)?;
    let lab = Lab::new(cfg.plan(), table)?;
    if cfg.ps.is_empty() {
        return Err(Error::Config("no moment orders requested".into()));
    }
    let report = run_experiment(&lab, &cfg.ps)?;
    write_estimates_csv(&out.join("converge.csv"), &report.estimates)?;
    write_json(
        &out.join("converge_report.json"),
        &json!({
            "command": "converge",
            "config": cfg,
            "report": report,
        }),
    )
}

fn cmd_kernel(cfg: &RunConfig, out: &Path) -> spde_lattice::Result<()> {
    let start = Instant::now();
    let table = mollifier(cfg)?;
    let mut rows = Vec::new();
    let mut truncation = Vec::new();
    for &n in &cfg.kernel_resolutions {
        let grid = GridSpec::new(cfg.d, n)?;
        let eps = epsilon_of_n(n, cfg.theta, cfg.d)?;
        let kernel = KernelSpec::new(grid, eps, table.clone(), Truncation::Lattice)?;
        let sup = kernel.sup_l2_norm()?;
        rows.push(json!({ "n": n, "epsilon": eps, "sup_l2_norm": sup }));
        if let Some(n_ref) = cfg.series_n_ref {
            let x = vec![0.5 + 0.5 / n as f64; cfg.d];
            let err = truncation_error_norm(&grid, eps, n_ref, &table, &x)?;
            truncation.push(json!({ "n": n, "series_n_ref": n_ref, "l2_error": err }));
        }
    }
    let growth = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) if rows.len() > 1 => {
            let a = a["sup_l2_norm"].as_f64().unwrap();
            let b = b["sup_l2_norm"].as_f64().unwrap();
            Some(b / a)
        }
        _ => None,
    };
    // the rate proxy needs the pointwise kernel evaluator (d ≥ 3); an
    // empty radius list skips it
    let smoothing = if cfg.epsilons.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::to_value(smoothing_error_rate(
            cfg.d,
            &cfg.epsilons,
            cfg.alpha,
            cfg.lambda,
            &table,
            cfg.smoothing_samples,
            cfg.seed,
        )?)
        .map_err(|e| Error::Format(format!("serialization: {e}")))?
    };
    write_json(
        &out.join("kernel_report.json"),
        &json!({
            "command": "kernel",
            "config": cfg,
            "norm_table": rows,
            "norm_growth_ratio": growth,
            "truncation": truncation,
            "smoothing": smoothing,
            "wall_seconds": start.elapsed().as_secs_f64(),
        }),
    )
}

fn cmd_holder(cfg: &RunConfig, out: &Path) -> spde_lattice::Result<()> {
    let start = Instant::now();
    let table = mollifier(cfg)?;
    let lab = Lab::new(cfg.plan(), table)?;
    let report = holder_structure(&lab, cfg.samples, &cfg.radii)?;
    let mut csv = String::from("separation,gaussian_msq,solution_msq\n");
    for ((s, g), u) in report
        .separations
        .iter()
        .zip(&report.gaussian_increments)
        .zip(&report.solution_increments)
    {
        csv.push_str(&format!("{s},{g:.17e},{u:.17e}\n"));
    }
    std::fs::write(out.join("holder.csv"), csv)?;
    write_json(
        &out.join("holder_report.json"),
        &json!({
            "command": "holder",
            "config": cfg,
            "report": report,
            "wall_seconds": start.elapsed().as_secs_f64(),
        }),
    )
}
