use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vinlab::dataset::{generate, read_dataset, write_dataset, Split};
use vinlab::eval::{
    auxiliary_position_error, evaluate, render_rollout, EvalReport, GroundTruth, Predictor,
    EVAL_HORIZON,
};
use vinlab::models::{Model, ModelVariant};
use vinlab::numeric::gradcheck::{check_all, REL_TOLERANCE};
use vinlab::numeric::Checkpoint;
use vinlab::physics::{
    audit_billiards, calibrate, integrator_deviation, momentum_drift, ForceLaw, SimSpec,
};
use vinlab::train::{checkpoint_path, smoothed, train, Profile, TrainConfig, TrainOutputs};

#[derive(Parser)]
#[command(
    name = "vinlab",
    version,
    about = "Physics videos, visual interaction networks and rollout evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Simulation spec (gen, calibrate, verify) or training config (train).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "vin")]
    variant: ModelVariant,
    /// Root holding `train/` and `test/` splits.
    #[arg(long, global = true, default_value = "data")]
    dataset_dir: PathBuf,
    /// Checkpoint file to read, or directory to write checkpoints into.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = ProfileName::Desk)]
    profile: ProfileName,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileName {
    Desk,
    Paper,
}

impl ProfileName {
    fn load(self) -> Result<Profile, vinlab::train::TrainError> {
        Profile::builtin(match self {
            ProfileName::Desk => "desk",
            ProfileName::Paper => "paper",
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and render train and test splits.
    Gen {
        /// Built-in system used when no --config is given.
        #[arg(long, default_value = "drift")]
        system: ForceLaw,
        /// Overrides the profile's simulation counts for both splits.
        #[arg(long)]
        simulations: Option<usize>,
    },
    /// Train a model on the train split.
    Train {
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Roll out from every test sequence and write a report.
    Eval {
        /// Evaluate the re-simulating oracle instead of a checkpoint.
        #[arg(long)]
        oracle: bool,
        /// Ground-truth-dynamics checkpoint supplying the loss bound.
        #[arg(long)]
        bound: Option<PathBuf>,
        /// Directory for report.json and the curve CSVs.
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Render one predicted rollout next to the truth.
    Rollout {
        #[arg(long, default_value_t = 0)]
        sim: usize,
        #[arg(long, default_value = "rollout")]
        out: PathBuf,
        /// Also write a max-over-time trail image on a black background.
        #[arg(long)]
        trail: bool,
    },
    /// Finite-difference check of every tape operation.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Tune a spec's time scale toward a mean per-frame displacement.
    Calibrate {
        #[arg(long, default_value = "drift")]
        system: ForceLaw,
        #[arg(long, default_value_t = 0.01)]
        target: f64,
        #[arg(long, default_value_t = 50)]
        sims: usize,
        /// Where to write the tuned spec; printed otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Conservation checks and the Euler against RK4 comparison.
    Verify {
        #[arg(long, default_value_t = 20)]
        sims: usize,
        #[arg(long, default_value_t = 300)]
        frames: usize,
    },
}

fn spec_for(config: &Option<PathBuf>, system: ForceLaw) -> Result<SimSpec, Box<dyn Error>> {
    Ok(match config {
        Some(p) => SimSpec::load(p)?,
        None => SimSpec::builtin(system),
    })
}

fn split_dir(root: &Path, split: Split) -> PathBuf {
    root.join(split.name())
}

fn load_model(path: &Path) -> Result<Model<f32>, Box<dyn Error>> {
    Ok(Model::from_checkpoint(&Checkpoint::load(path)?)?)
}

fn require_checkpoint(cli: &Cli) -> Result<&Path, Box<dyn Error>> {
    cli.checkpoint
        .as_deref()
        .ok_or_else(|| "--checkpoint is required".into())
}

fn run(cli: &Cli) -> Result<(), Box<dyn Error>> {
    match &cli.command {
        Command::Gen {
            system,
            simulations,
        } => {
            let mut spec = spec_for(&cli.config, *system)?;
            spec.seed = cli.seed;
            let profile = cli.profile.load()?;
            for (split, count) in [
                (Split::Train, profile.train_simulations),
                (Split::Test, profile.test_simulations),
            ] {
                let count = simulations.unwrap_or(count);
                let ds = generate(&spec, split, count, cli.seed)?;
                let dir = split_dir(&cli.dataset_dir, split);
                write_dataset(&ds, &dir)?;
                println!(
                    "{}: {count} simulations of {} in {}",
                    split.name(),
                    spec.law.name(),
                    dir.display()
                );
            }
        }
        Command::Train { steps } => {
            let mut config: TrainConfig = match &cli.config {
                Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
                None => cli.profile.load()?.train,
            };
            config.seed = cli.seed;
            if let Some(s) = steps {
                config.steps = *s;
            }
            let dataset = read_dataset(split_dir(&cli.dataset_dir, Split::Train))?;
            let mut model = Model::new(cli.variant, dataset.n_objects(), cli.seed);
            let dir = cli
                .checkpoint
                .clone()
                .unwrap_or_else(|| PathBuf::from("checkpoints").join(cli.variant.name()));
            let outputs = TrainOutputs {
                checkpoint_dir: Some(dir.clone()),
                log_path: Some(dir.join("loss.csv")),
            };
            std::fs::create_dir_all(&dir)?;
            let log = train(&mut model, &dataset, &config, &outputs)?;
            let totals: Vec<f64> = log.iter().map(|r| r.total).collect();
            let s = smoothed(&totals, 100);
            println!(
                "{} steps, smoothed loss {:.3e} -> {:.3e}; final checkpoint {}",
                log.len(),
                s.first().copied().unwrap_or(f64::NAN),
                s.last().copied().unwrap_or(f64::NAN),
                checkpoint_path(&dir, config.steps).display()
            );
        }
        Command::Eval { oracle, bound, out } => {
            let dataset = read_dataset(split_dir(&cli.dataset_dir, Split::Test))?;
            let horizon = cli.horizon.unwrap_or(EVAL_HORIZON);
            let bound_loss = match bound {
                Some(p) => Some(
                    evaluate(&load_model(p)?, &dataset, horizon, None, cli.seed)?.prediction_loss,
                ),
                None => None,
            };
            let (report, aux) = if *oracle {
                (
                    evaluate(&GroundTruth, &dataset, horizon, bound_loss, cli.seed)?,
                    None,
                )
            } else {
                let model = load_model(require_checkpoint(cli)?)?;
                let sims: Vec<usize> = (0..dataset.len()).collect();
                let aux = model
                    .variant()
                    .is_visual()
                    .then(|| auxiliary_position_error(&model, &dataset, &sims))
                    .transpose()?;
                (
                    evaluate(&model, &dataset, horizon, bound_loss, cli.seed)?,
                    aux,
                )
            };
            write_report(&report, out)?;
            print_report(&report);
            if let Some(e) = aux {
                println!("decoded encoder position error {e:.4}");
            }
        }
        Command::Rollout { sim, out, trail } => {
            let dataset = read_dataset(split_dir(&cli.dataset_dir, Split::Test))?;
            let model = load_model(require_checkpoint(cli)?)?;
            let horizon = cli.horizon.unwrap_or(EVAL_HORIZON);
            let predicted = Predictor::predict(&model, &dataset, &[*sim], horizon)?.remove(0);
            let paths = render_rollout(&dataset, *sim, &predicted, out, *trail)?;
            println!("wrote {} images to {}", paths.len(), out.display());
        }
        Command::Gradcheck { instances } => {
            let checks = check_all(*instances, cli.seed)?;
            let mut failed = 0;
            for c in &checks {
                let ok = c.passed(REL_TOLERANCE);
                failed += usize::from(!ok);
                println!(
                    "{:<16} {:>3} instances  max rel error {:.2e}  {}",
                    c.op,
                    c.instances,
                    c.max_rel_error,
                    pass(ok)
                );
            }
            if failed > 0 {
                return Err(format!("{failed} operations failed").into());
            }
        }
        Command::Calibrate {
            system,
            target,
            sims,
            out,
        } => {
            let spec = spec_for(&cli.config, *system)?;
            let c = calibrate(&spec, *target, *sims, 40)?;
            println!(
                "{}: time scale {:.6}, mean displacement {:.6}",
                spec.law.name(),
                c.scale,
                c.mean_displacement
            );
            match out {
                Some(p) => std::fs::write(p, c.spec.to_toml())?,
                None => print!("{}", c.spec.to_toml()),
            }
        }
        Command::Verify { sims, frames } => verify(cli, *sims, *frames)?,
    }
    Ok(())
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn verify(cli: &Cli, sims: usize, frames: usize) -> Result<(), Box<dyn Error>> {
    let specs: Vec<SimSpec> = match &cli.config {
        Some(p) => vec![SimSpec::load(p)?],
        None => ForceLaw::ALL.iter().map(|&l| SimSpec::builtin(l)).collect(),
    };
    let mut ok = true;
    for spec in &specs {
        let name = spec.law.name();
        if spec.law.is_bounded() {
            let a = audit_billiards(spec, 1000, 1_000_000)?;
            // charges trade kinetic for potential energy, so only plain billiards keeps it
            let energy_ok = spec.law != ForceLaw::Billiards || a.energy_drift < 1e-6;
            let good = a.pair_collisions >= 1000 && energy_ok && a.pair_momentum_error < 1e-6;
            println!(
                "{name:<20} {} collisions  energy drift {:.1e}  momentum error {:.1e}  {}",
                a.pair_collisions,
                a.energy_drift,
                a.pair_momentum_error,
                pass(good)
            );
            ok &= good;
        } else {
            let drift = momentum_drift(spec, frames)?;
            let dev = integrator_deviation(spec, sims, frames)?;
            let good = drift < 1e-9 && dev < 1.0 / 32.0;
            println!("{name:<20} momentum drift {drift:.1e}/frame  Euler-RK4 gap {dev:.2e} over {frames} frames  {}", pass(good));
            ok &= good;
        }
    }
    if ok {
        Ok(())
    } else {
        Err("physics verification failed".into())
    }
}

fn write_report(report: &EvalReport, out: &Path) -> Result<(), Box<dyn Error>> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.json"), report.to_json())?;
    std::fs::write(out.join("error_by_step.csv"), report.step_csv())?;
    std::fs::write(out.join("error_by_distance.csv"), report.distance_csv())?;
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!(
        "{} on {} ({} sequences, horizon {})",
        r.model, r.system, r.sequences, r.horizon
    );
    println!("prediction loss {:.4e}", r.prediction_loss);
    if let Some(inl) = r.inverse_normalized_loss {
        println!("inverse normalized loss {inl:.4}");
    }
    for k in [0, 9, 19, 29, 39, 49]
        .into_iter()
        .filter(|&k| k < r.error_by_step.len())
    {
        let i = r.error_by_step[k];
        println!(
            "step {:>2}: error {:.4} [{:.4}, {:.4}]",
            k + 1,
            i.mean,
            i.lower,
            i.upper
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
