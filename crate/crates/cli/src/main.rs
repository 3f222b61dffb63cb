use clap::{Parser, Subcommand};
use shelab_core::harness;
use shelab_core::{load_config, Config, Error};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Kinetic transport between diffusive walls, its diffusivity tensor and the
/// SHE diffusion limit.
#[derive(Parser, Debug)]
#[command(name = "shelab", version)]
struct Cli {
    /// TOML configuration; defaults are used when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Random seed, overriding `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(short = 'j', long, global = true)]
    threads: Option<usize>,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Verify the boundary-kernel identities.
    CheckKernel,
    /// Solve the auxiliary cell problem at `aux.b`, `aux.epsilon`.
    Aux,
    /// Tabulate the diffusivity tensor over the position-energy grid.
    Tensor {
        /// Also run the Monte Carlo mean-square-displacement oracle.
        #[arg(long)]
        oracle: bool,
    },
    /// Run the SHE diffusion model.
    She,
    /// Run the kinetic model (mode from `run.mode`).
    Kinetic,
    /// Compare kinetic runs over `physics.alpha` with the SHE limit.
    Converge,
    /// Collect the JSON reports in the output directory.
    Report,
}

fn load(cli: &Cli) -> Result<Config, Error> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<i32, Error> {
    if matches!(cli.command, Command::Report) {
        let dir = cli.out.clone().unwrap_or_else(|| match &cli.config {
            Some(_) => load(cli).map(|c| c.output.dir).unwrap_or_else(|_| "out".into()),
            None => "out".into(),
        });
        let v = harness::cmd_report(&dir)?;
        let n = v.as_object().map_or(0, |m| m.len());
        println!("collected {n} reports into {}", dir.join("report.json").display());
        return Ok(0);
    }
    let cfg = load(cli)?;
    let out: &Path = &cfg.output.dir;
    match &cli.command {
        Command::CheckKernel => {
            let r = harness::cmd_check_kernel(&cfg, out)?.result;
            println!(
                "flux {:.2e} norm {:.2e} reciprocity {:.2e} null dim {} DG margin {:.3e}",
                r.flux_defect, r.norm_defect, r.reciprocity_defect, r.null_dim, r.dg_min_margin
            );
        }
        Command::Aux => {
            let r = harness::cmd_aux(&cfg, out)?.result;
            println!(
                "chi_y: residual {:.2e} boundary {:.2e} mean {:.2e}; chi_z: residual {:.2e} boundary {:.2e} mean {:.2e}",
                r.chi_y.residual_norm,
                r.chi_y.boundary_defect,
                r.chi_y.mean,
                r.chi_z.residual_norm,
                r.chi_z.boundary_defect,
                r.chi_z.mean
            );
        }
        Command::Tensor { oracle } => {
            let r = harness::cmd_tensor(&cfg, out, *oracle)?.result;
            println!("{} entries, min lambda {:.4e}, max |D| {:.4e}", r.n_entries, r.min_lambda, r.max_norm);
            for c in &r.oracle {
                println!(
                    "oracle B {} eps {}: msd yy {:.4} (target {:.4}) agree {}",
                    c.b, c.epsilon, c.estimate.mean[0][0], c.target[0][0], c.agree
                );
            }
        }
        Command::She => {
            let r = harness::cmd_she(&cfg, out)?.result;
            println!(
                "{} steps of {:.3e}, max mass drift {:.2e}, truncation fraction {:.2e}",
                r.run.steps, r.run.dt, r.run.max_mass_drift, r.run.truncation_fraction
            );
        }
        Command::Kinetic => {
            let r = harness::cmd_kinetic(&cfg, out)?.result;
            for m in &r.mc {
                println!(
                    "alpha {}: {} steps, {:.2} bounces per particle, weight drift {:.1e}",
                    m.alpha, m.steps, m.bounces_per_particle, m.weight_drift
                );
            }
            for m in &r.reduced {
                println!(
                    "alpha {}: {} steps, L2 non-increasing {}, anisotropy ratio {:.2e}",
                    m.alpha, m.steps, m.l2_non_increasing, m.final_anisotropy_ratio
                );
            }
        }
        Command::Converge => {
            let r = harness::cmd_converge(&cfg, out)?.result;
            for row in &r.rows {
                println!("alpha {}: distance {:.5} +- {:.5}", row.alpha, row.distance, row.stderr);
            }
            println!("verdict {:?}, wall-anisotropy slope {:.3}", r.verdict, r.weak.slope);
            return Ok(r.verdict.exit_code());
        }
        Command::Report => unreachable!(),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
