use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use qtl::backend::{derive_seed, random_instance, simulated_fidelity, NoisePolicy};
use qtl::circuit::{format_program, CircuitShape, ParameterizedCircuit, Template};
use qtl::config::ExperimentConfig;
use qtl::data::{generate_synthetic, parse_feature_file};
use qtl::gradient::{finite_diff, GradientMethod};
use qtl::model::{Checkpoint, HybridModel, ModelVariant, VariantKind};
use qtl::noise::{damping_params, depolarizing_param_from_error_rate, estimate_fidelity, DeviceCalibration};
use qtl::train::{eval_seed, evaluate, split, train};

#[derive(Parser)]
#[command(name = "qtl", version, about = "Hybrid classical-quantum transfer-learning heads")]
struct Cli {
    /// Worker threads for per-sample parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a head from a JSON experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run report destination.
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint destination (default: next to the report).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides the config's training seed.
        #[arg(long, env = "QTL_SEED")]
        seed: Option<u64>,
    },
    /// Score a checkpoint on a feature file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the metrics as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Shot seed for sampled heads (default: the checkpoint's seed).
        #[arg(long, env = "QTL_SEED")]
        seed: Option<u64>,
    },
    /// Compare analytic model gradients with central finite differences.
    GradCheck {
        #[arg(long, default_value = "ring_exact")]
        variant: VariantKind,
        #[arg(long, env = "QTL_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Print damping and depolarizing parameters derived from device constants.
    Calibrate {
        /// Calibration JSON (default: built-in Heron r2 constants).
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Gate census with estimated and simulated circuit fidelity.
    Fidelity {
        #[arg(long, default_value = "brickwall")]
        template: Template,
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        qubits: usize,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        /// Random angle draws averaged by the simulation.
        #[arg(long, default_value_t = 20)]
        draws: usize,
        #[arg(long, env = "QTL_SEED", default_value_t = 0)]
        seed: u64,
        /// Print the first bound circuit.
        #[arg(long)]
        show: bool,
    },
    /// Write a two-cluster Gaussian feature file.
    Synth {
        #[arg(long)]
        d: usize,
        /// Samples per class.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        sep: f64,
        #[arg(long, env = "QTL_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_calibration(path: Option<&Path>) -> anyhow::Result<DeviceCalibration> {
    match path {
        Some(p) => DeviceCalibration::load(p).with_context(|| format!("loading calibration {}", p.display())),
        None => Ok(DeviceCalibration::heron_r2()),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(config: &Path, out: &Path, checkpoint: Option<PathBuf>, seed: Option<u64>) -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::load(config).with_context(|| format!("loading config {}", config.display()))?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let cal = cfg.calibration(config)?;
    let variant = cfg.model_variant(&cal)?;
    let train_path = ExperimentConfig::resolve(config, &cfg.train_data);
    let full = parse_feature_file(&train_path)?;
    let (train_set, val_set) = match cfg.val_split {
        Some(f) => {
            let (a, b) = split(&full, f, cfg.train.seed)?;
            (a, Some(b))
        }
        None => (full, None),
    };
    let mut model = HybridModel::new(variant, train_set.feature_dim, cfg.train.seed)?;
    let mut report = train(&mut model, &train_set, val_set.as_ref(), &cfg.train)?;
    if let Some(test) = &cfg.test_data {
        let test_set = parse_feature_file(&ExperimentConfig::resolve(config, test))?;
        report.test_metrics = Some(evaluate(&model, &test_set, eval_seed(cfg.train.seed))?);
    }
    report.config = Some(serde_json::to_value(&cfg)?);
    write_json(out, &report)?;
    let ckpt_path = checkpoint.unwrap_or_else(|| out.with_extension("ckpt.json"));
    model.to_checkpoint(cfg.train.seed).save(&ckpt_path)?;

    for h in &report.history {
        match h.val_accuracy {
            Some(a) => println!(
                "epoch {:>3}  lr {:.3e}  loss {:.6}  val_acc {:.4}",
                h.epoch, h.lr, h.train_loss, a
            ),
            None => println!("epoch {:>3}  lr {:.3e}  loss {:.6}", h.epoch, h.lr, h.train_loss),
        }
    }
    println!("train accuracy {:.4}", report.train_metrics.accuracy);
    if let Some(t) = &report.test_metrics {
        println!("test accuracy {:.4}", t.accuracy);
    }
    println!("report {}", out.display());
    println!("checkpoint {}", ckpt_path.display());
    Ok(())
}

fn cmd_evaluate(checkpoint: &Path, data: &Path, json: Option<&Path>, seed: Option<u64>) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let run_seed = ckpt.seed;
    let model = ckpt.into_model()?;
    let set = parse_feature_file(data)?;
    let metrics = evaluate(&model, &set, seed.unwrap_or_else(|| eval_seed(run_seed)))?;
    println!("samples {}", metrics.samples);
    println!("accuracy {:.4}", metrics.accuracy);
    println!("mean_loss {:.6}", metrics.mean_loss);
    println!("confusion (rows: true class)");
    for row in &metrics.confusion {
        println!("  {}", row.iter().map(u64::to_string).collect::<Vec<_>>().join(" "));
    }
    if let Some(p) = json {
        write_json(p, &metrics)?;
    }
    Ok(())
}

/// Returns whether every instance passed.
fn cmd_grad_check(
    kind: VariantKind,
    seed: u64,
    instances: usize,
    dim: usize,
    step: f64,
    tol: f64,
) -> anyhow::Result<bool> {
    let mut variant = ModelVariant::standard(kind, 2, &DeviceCalibration::heron_r2())?;
    if matches!(variant.gradient, GradientMethod::Spsa(_)) {
        bail!("variant {kind} is trained with SPSA on sampled outputs and has no analytic gradient to check");
    }
    variant.gradient = GradientMethod::ParamShift;
    let mut worst = 0.0f64;
    for i in 0..instances {
        let s = derive_seed(seed, i as u64);
        let model = HybridModel::new(variant, dim, s)?;
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let features: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let label = rng.random_range(0..2);
        let (_, analytic) = model.backward(&features, label, 0)?;
        let numeric = finite_diff(
            |x| model.with_flat(x)?.loss(&features, label, 0),
            &model.flat_params(),
            step,
        )?;
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    println!("variant {kind}");
    println!("instances {instances}");
    println!("max_abs_diff {worst:.3e}");
    println!("tolerance {tol:.1e}");
    let ok = worst <= tol;
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(ok)
}

fn cmd_calibrate(path: Option<&Path>) -> anyhow::Result<()> {
    let cal = load_calibration(path)?;
    let p = damping_params(&cal)?;
    println!("gamma_1q {:.4e}", p.gamma_1q);
    println!("lambda_1q {:.4e}", p.lambda_1q);
    println!("gamma_2q {:.4e}", p.gamma_2q);
    println!("lambda_2q {:.4e}", p.lambda_2q);
    println!("p_1q {:.4e}", cal.p_depol_1q);
    println!("p_2q {:.4e}", cal.p_depol_2q);
    println!(
        "depolarizing_1q {:.4e}",
        depolarizing_param_from_error_rate(cal.p_depol_1q, 1)?
    );
    println!(
        "depolarizing_2q {:.4e}",
        depolarizing_param_from_error_rate(cal.p_depol_2q, 2)?
    );
    println!("readout {:.4e}", cal.readout_error);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_fidelity(
    template: Template,
    path: Option<&Path>,
    qubits: usize,
    depth: usize,
    draws: usize,
    seed: u64,
    show: bool,
) -> anyhow::Result<()> {
    if draws == 0 {
        bail!("--draws must be at least 1");
    }
    let cal = load_calibration(path)?;
    let circuit = ParameterizedCircuit::build(template, CircuitShape::new(qubits, depth)?)?;
    let census = circuit.gate_census();
    let estimated = estimate_fidelity(&census, cal.p_depol_1q, cal.p_depol_2q);
    let policy = NoisePolicy::depolarizing_from_calibration(&cal)?;
    let mut values = Vec::with_capacity(draws);
    for i in 0..draws {
        let (angles, params) = random_instance(&circuit, derive_seed(seed, i as u64));
        if show && i == 0 {
            print!("{}", format_program(&circuit.bind(&angles, &params)?));
        }
        values.push(simulated_fidelity(&circuit, &angles, &params, &policy)?);
    }
    let mean = values.iter().sum::<f64>() / draws as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!("template {template}");
    println!("one_qubit_gates {}", census.one_qubit);
    println!("two_qubit_gates {}", census.two_qubit);
    println!("depth {}", census.depth);
    println!("estimated_fidelity {estimated:.4}");
    println!("simulated_fidelity {mean:.4}");
    println!("simulated_range {min:.4} {max:.4}");
    Ok(())
}

fn cmd_synth(d: usize, n: usize, sep: f64, seed: u64, out: &Path) -> anyhow::Result<()> {
    let ds = generate_synthetic(d, n, sep, seed)?;
    ds.write(out).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} samples to {}", ds.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Train {
            config,
            out,
            checkpoint,
            seed,
        } => cmd_train(&config, &out, checkpoint, seed)?,
        Command::Evaluate {
            checkpoint,
            data,
            json,
            seed,
        } => cmd_evaluate(&checkpoint, &data, json.as_deref(), seed)?,
        Command::GradCheck {
            variant,
            seed,
            instances,
            dim,
            step,
            tol,
        } => return cmd_grad_check(variant, seed, instances, dim, step, tol),
        Command::Calibrate { calibration } => cmd_calibrate(calibration.as_deref())?,
        Command::Fidelity {
            template,
            calibration,
            qubits,
            depth,
            draws,
            seed,
            show,
        } => cmd_fidelity(template, calibration.as_deref(), qubits, depth, draws, seed, show)?,
        Command::Synth { d, n, sep, seed, out } => cmd_synth(d, n, sep, seed, &out)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    // die quietly on a closed pipe (`qtl fidelity --show | head`)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
