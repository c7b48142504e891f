use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hypercardio::TimeStepper;
use hypercardio_experiments::config::ExperimentConfig;
use hypercardio_experiments::io::{save_rows, write_vtk};
use hypercardio_experiments::studies::{
    convergence_orders, matched_tau, orientation_discrepancy, AnisotropyStudy, ConvergenceStudy, CostStudy,
    CvTauStudy, OrientationStudy, Reaction, SpeedStudy, SpiralStudy, VirtualElectrodeStudy,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "hypercardio", version, about = "Hyperbolic and parabolic cardiac monodomain/bidomain experiments")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 1 gives bit-reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run the spiral and orientation studies on the full 12 cm domain.
    #[arg(long, global = true)]
    full_scale: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReactionArg {
    Mckean,
    Cubic,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run { config: PathBuf },
    /// Measured against exact McKean front speeds.
    VerifySpeed {
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        mus: Option<Vec<f64>>,
    },
    /// Space-time convergence against the exact front.
    Converge {
        #[arg(long, value_enum, default_value = "mckean")]
        reaction: ReactionArg,
        #[arg(long, default_value_t = 2.0)]
        tau: f64,
        #[arg(long, default_value_t = 2)]
        order: u8,
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Conduction velocity against relaxation time on a 1D cable.
    CvTau {
        /// `AP`, `FK3` .. `FK6`.
        #[arg(long, default_value = "FK3")]
        model: String,
        /// Aliev-Panfilov excitability.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Velocity ratios across conductivities and relaxation times.
    Anisotropy {
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
    },
    /// Transverse and longitudinal velocities on the two diagonal orientations.
    Orientation {
        #[arg(long, value_delimiter = ',')]
        spacings_um: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        #[arg(long)]
        longitudinal: bool,
    },
    /// S1-S2 spiral initiation.
    Spiral {
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        #[arg(long)]
        t_end: Option<f64>,
        /// Write a snapshot every this many steps.
        #[arg(long)]
        snapshot_stride: Option<usize>,
    },
    /// Cathodal extracellular stimulation of a bidomain sheet.
    VirtualElectrode {
        #[arg(long, default_value_t = 0.0)]
        tau_i: f64,
        #[arg(long, default_value_t = 0.0)]
        tau_e: f64,
        /// Use `sigma_e = lambda sigma_i` instead of the unequal ratios.
        #[arg(long)]
        equal_anisotropy: Option<f64>,
    },
    /// CG iterations and reaction/diffusion timings on a 2D sheet.
    Cost {
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        #[arg(long)]
        steps: Option<usize>,
    },
}

type AnyError = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AnyError> {
    serde_json::to_writer_pretty(File::create(path)?, value)?;
    Ok(())
}

fn wrote(path: &Path) {
    println!("wrote {}", path.display());
}

fn execute(cli: Cli) -> Result<(), AnyError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let out = cli.out.as_path();
    std::fs::create_dir_all(out)?;
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = cfg.execute(out)?;
            println!("{}: {} steps to t = {}", summary.name, summary.steps, summary.t_final);
            summary.files.iter().for_each(|f| wrote(f));
        }
        Command::VerifySpeed { alphas, mus } => {
            let mut study = SpeedStudy::default();
            study.alphas = alphas.unwrap_or(study.alphas);
            study.mus = mus.unwrap_or(study.mus);
            let rows = study.run()?;
            for r in &rows {
                println!(
                    "alpha {:<4} mu {:<5} cv {:.5} exact {:.5} ({:+.2}%)",
                    r.alpha,
                    r.mu,
                    r.cv_measured,
                    r.cv_exact,
                    100.0 * (r.cv_measured / r.cv_exact - 1.0)
                );
            }
            let path = out.join("speed.csv");
            save_rows(&path, &rows)?;
            wrote(&path);
        }
        Command::Converge { reaction, tau, order, levels } => {
            let reaction = match reaction {
                ReactionArg::Mckean => Reaction::McKean,
                ReactionArg::Cubic => Reaction::Cubic,
            };
            let mut study = ConvergenceStudy::new(reaction, tau, order);
            study.levels = levels.unwrap_or(study.levels);
            let rows = study.run()?;
            let (ov, oq) = convergence_orders(&rows)?;
            println!("fitted order: V {ov:.3}, Q {oq:.3}");
            let path = out.join("convergence.csv");
            save_rows(&path, &rows)?;
            wrote(&path);
        }
        Command::CvTau { model, alpha, taus, dt } => {
            let mut study = match alpha {
                Some(a) if model.eq_ignore_ascii_case("AP") => CvTauStudy::aliev_panfilov(a),
                Some(_) => return Err("--alpha applies to the AP model only".into()),
                None => CvTauStudy::new(&model),
            };
            study.taus = taus.unwrap_or(study.taus);
            study.cable.dt = dt.unwrap_or(study.cable.dt);
            let rows = study.run()?;
            for r in &rows {
                println!("tau {:<5} cv {:.6}", r.tau, r.cv);
            }
            let path = out.join("cv_tau.csv");
            save_rows(&path, &rows)?;
            wrote(&path);
        }
        Command::Anisotropy { taus } => {
            let mut study = AnisotropyStudy::default();
            study.taus = taus.unwrap_or(study.taus);
            let rows = study.run()?;
            for &sigma in &study.sigmas {
                match matched_tau(&rows, sigma) {
                    Some(t) => println!("sigma {sigma}: parabolic velocity matched at tau = {t:.3}"),
                    None => println!("sigma {sigma}: no matching tau in range"),
                }
            }
            let path = out.join("anisotropy.csv");
            save_rows(&path, &rows)?;
            wrote(&path);
        }
        Command::Orientation { spacings_um, tau, longitudinal } => {
            let mut study = if cli.full_scale { OrientationStudy::full_scale() } else { OrientationStudy::desk() };
            study.spacings_um = spacings_um.unwrap_or(study.spacings_um);
            study.tau = tau;
            let rows = study.run(longitudinal)?;
            for (h, d) in orientation_discrepancy(&rows, "transverse") {
                println!("h {h} um: transverse discrepancy {:.2}%", 100.0 * d);
            }
            let path = out.join("orientation.csv");
            save_rows(&path, &rows)?;
            wrote(&path);
        }
        Command::Spiral { tau, t_end, snapshot_stride } => {
            let mut study = if cli.full_scale { SpiralStudy::full_scale(tau) } else { SpiralStudy::desk(tau) };
            study.t_end = t_end.unwrap_or(study.t_end);
            study.snapshot_stride = snapshot_stride;
            let report = study.run_with(|mesh, snap| {
                let path = out.join(format!("spiral_{:06}.vtk", snap.step));
                File::create(&path)
                    .map_err(Into::into)
                    .and_then(|f| write_vtk(f, mesh, &format!("spiral t={}", snap.t), &[("V", &snap.v), ("Q", &snap.q)]))
                    .map_err(|e| hypercardio::SolverError::Config(e.to_string()))
            })?;
            println!("unstimulated re-activations of the central probe: {}", report.reentries);
            let path = out.join("spiral.json");
            write_json(&path, &report)?;
            wrote(&path);
        }
        Command::VirtualElectrode { tau_i, tau_e, equal_anisotropy } => {
            let mut study = VirtualElectrodeStudy::new(tau_i, tau_e);
            if let Some(lambda) = equal_anisotropy {
                study = study.equal_anisotropy(lambda);
            }
            let (report, mesh, solver) = study.run()?;
            println!("fiber-axis probes {:?}, cross-fiber probes {:?}", report.fiber_probes, report.cross_probes);
            let path = out.join("virtual_electrode.vtk");
            let mut fields: Vec<(&str, &[f64])> = vec![("V", solver.potential()), ("Q", solver.potential_rate())];
            if let Some(ve) = solver.extracellular() {
                fields.push(("Ve", ve));
            }
            write_vtk(File::create(&path)?, &mesh, "virtual electrode", &fields)?;
            wrote(&path);
            let path = out.join("virtual_electrode.json");
            write_json(&path, &report)?;
            wrote(&path);
        }
        Command::Cost { models, steps } => {
            let mut study = CostStudy::default();
            study.models = models.unwrap_or(study.models);
            study.steps = steps.unwrap_or(study.steps);
            let rows = study.run()?;
            for r in &rows {
                println!(
                    "{} tau {}: CG max {} mean {:.2}, reaction share {:.1}%",
                    r.model,
                    r.tau,
                    r.cg_iterations_max,
                    r.cg_iterations_mean,
                    100.0 * r.reaction_share
                );
            }
            let path = out.join("cost.csv");
            save_rows(&path, &rows)?;
            wrote(&path);
        }
    }
    Ok(())
}
