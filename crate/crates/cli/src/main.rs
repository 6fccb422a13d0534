//! Command-line driver: parameter derivation, gluing diagnostics, single
//! stages, multi-stage pipelines and the hard-ledger verification gate.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use torus_mhd::config::RunConfig;
use torus_mhd::gluing::StageInput;
use torus_mhd::grid::Grid3;
use torus_mhd::params::Mode;
use torus_mhd::report;
use torus_mhd::stage::{
    run_stage, seed_generic, seed_wiggle_shear, ChainedState, ModulatedState, StageReport,
};
use torus_mhd::Result;

#[derive(Parser)]
#[command(name = "torus-mhd", about = "Relaxed-MHD construction engine and verification harness")]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Force toy mode.
    #[arg(long, global = true)]
    toy: bool,
    /// Grid resolution N (power of two).
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// Slow time samples per tau.
    #[arg(long, global = true)]
    time_samples: Option<usize>,
    /// Number of construction stages to chain.
    #[arg(long, global = true, default_value_t = 1)]
    stages: usize,
    /// Output directory for CSV reports and dumps.
    #[arg(long, global = true, default_value = "out")]
    output_dir: PathBuf,
    /// Also dump the assembled fields in the binary format.
    #[arg(long, global = true)]
    dump_fields: bool,
    /// Seed for randomized seeds (generic preset).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive and print the parameter cascade.
    Params,
    /// Run the gluing alone and report stress support/symmetry checks.
    Glue,
    /// One full construction stage with reports.
    Stage,
    /// Chain several stages.
    Pipeline,
    /// Run a stage and gate the exit code on the hard ledgers.
    Verify,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::parse("")?,
    };
    if cli.toy {
        cfg.set("mode", "toy");
    }
    if let Some(n) = cli.resolution {
        cfg.set("resolution", n);
    }
    if let Some(ts) = cli.time_samples {
        cfg.set("slow_per_tau", ts);
    }
    if let Some(s) = cli.seed {
        cfg.set("seed", s);
    }
    Ok(cfg)
}

fn build_seed(cfg: &RunConfig, grid: &Grid3) -> Result<ModulatedState> {
    let params = cfg.parameters()?;
    let tau1 = params.tau(1)?;
    let nu = cfg.nu()?;
    match cfg.get("seed_kind").unwrap_or("wiggle") {
        "generic" => seed_generic(
            grid,
            nu,
            params.t_cap,
            tau1,
            cfg.f64("seed_amp", 0.6)?,
            cfg.f64("seed_mix_amp", 0.25)?,
            cfg.f64("seed_omega", 240.0)?,
            cfg.seed()?,
        ),
        _ => seed_wiggle_shear(
            grid,
            nu,
            params.t_cap,
            tau1,
            cfg.f64("seed_amp_left", 1.0)?,
            cfg.f64("seed_amp_right", 2.0)?,
            cfg.f64("seed_zeta", 0.5)?,
            cfg.f64("seed_omega", 240.0)?,
        ),
    }
}

fn write_reports(
    dir: &PathBuf,
    cfg: &RunConfig,
    reports: &[(usize, StageReport)],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let params = cfg.parameters()?;
    let refs: Vec<(usize, &StageReport)> = reports.iter().map(|(q, r)| (*q, r)).collect();
    std::fs::write(dir.join("norms.csv"), report::norms_csv(&refs, &params))?;
    for (q, rep) in reports {
        std::fs::write(dir.join(format!("ledgers_stage{q}.csv")), report::ledgers_csv(rep))?;
        std::fs::write(dir.join(format!("residual_stage{q}.csv")), report::residual_csv(rep))?;
    }
    std::fs::write(dir.join("run.cfg"), cfg.to_text())?;
    Ok(())
}

fn print_summary(q: usize, rep: &StageReport) {
    println!("stage {q}: {} samples", rep.samples);
    println!("  stress L1 (input / glued / new): {:.4e} / {:.4e} / {:.4e}",
        rep.input_stress_l1, rep.glued_stress_l1, rep.new_stress_l1);
    for (name, v) in &rep.ledger_max {
        println!("  ledger {name}: {v:.3e}");
    }
    println!("  reconstruction (skew/sym): {:.3e} / {:.3e}", rep.recon_skew_max, rep.recon_sym_max);
    println!("  corrector div (wp+wc/dp+dc/wt/dt): {:.2e} {:.2e} {:.2e} {:.2e}",
        rep.div_wpwc_max, rep.div_dpdc_max, rep.div_wt_max, rep.div_dt_max);
    println!("  residual rms (mom/ind, relative): {:.3e} {:.3e} ({:.3e})",
        rep.residual_rms_mom, rep.residual_rms_ind, rep.residual_relative);
    println!("  endpoints (left/right): {:.2e} / {:.2e}", rep.endpoint_left, rep.endpoint_right);
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::Params => {
            let params = cfg.parameters()?;
            println!("mode: {:?}", params.mode);
            println!("eps = {}, p = {}, T = {}, a = {}", params.eps, params.p, params.t_cap, params.a);
            println!("gamma = {:.6e}", params.gamma);
            println!("sigma = {:.6e}", params.sigma);
            println!("b     = {:.6e}", params.b);
            println!("beta  = {:.6e}", params.beta);
            println!("alpha = {:.6e}", params.alpha);
            match params.mode {
                Mode::Faithful => {
                    for q in 1..=3 {
                        println!(
                            "q = {q}: log10 lambda_q = {:.4e}, log10 tau_q = {:.4e}, log10 delta_q = {:.4e}",
                            params.lambda_log10(q),
                            params.tau_log10(q),
                            params.delta_log10(q)
                        );
                    }
                    println!("(faithful frequencies are far beyond any grid; values are reported only)");
                }
                Mode::Toy => {
                    let stages = params.toy.as_ref().map(|t| t.lambdas.len()).unwrap_or(0);
                    for q in 1..=stages {
                        println!(
                            "q = {q}: lambda = {}, tau = {:.6}, delta = {:.6e}",
                            params.lambda(q)?,
                            params.tau(q.min(stages.saturating_sub(1).max(1)))?,
                            params.delta(q)?
                        );
                    }
                }
            }
            Ok(true)
        }
        Command::Glue | Command::Stage | Command::Pipeline | Command::Verify => {
            let grid = Grid3::new(cfg.grid_n()?)?;
            let params = cfg.parameters()?;
            let seed = build_seed(&cfg, &grid)?;
            let mut reports = Vec::new();
            let stage_cfg = cfg.stage_config(1)?;
            let rep1 = run_stage(&seed, &params, &stage_cfg)?;
            print_summary(1, &rep1);
            reports.push((1usize, rep1));
            if matches!(cli.command, Command::Pipeline) && cli.stages >= 2 {
                let chain_cfg = cfg.stage_config(1)?;
                let chained = ChainedState::new(&seed, &params, &chain_cfg)?;
                let mut cfg2 = cfg.stage_config(2)?;
                // the chained state is expensive to sample; keep stage 2 lean
                cfg2.slow_per_tau = (stage_cfg.slow_per_tau / 2).max(6);
                let rep2 = run_stage(&chained, &params, &cfg2)?;
                print_summary(2, &rep2);
                reports.push((2usize, rep2));
            }
            if cli.dump_fields {
                std::fs::create_dir_all(&cli.output_dir)?;
                let t_probe = 2.5 * params.t_cap;
                let (v, b) = seed.fields(t_probe)?;
                report::dump_fields(&cli.output_dir, "seed_v", &[(t_probe, v)])?;
                report::dump_fields(&cli.output_dir, "seed_b", &[(t_probe, b)])?;
            }
            write_reports(&cli.output_dir, &cfg, &reports)?;
            let all_pass = reports.iter().all(|(_, r)| report::hard_ledgers_pass(r));
            if matches!(cli.command, Command::Verify) {
                println!("hard ledgers: {}", if all_pass { "PASS" } else { "FAIL" });
                return Ok(all_pass);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
