//! `dptext` command-line interface.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 pipeline error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dptext_core::checkpoint::{load_autoencoder, load_classifier, save_classifier};
use dptext_core::classifier::{train_ic, ClassifierConfig};
use dptext_core::dp::{NoiseFamily, PrivacySpec, SensitivityMode, DEFAULT_DELTA};
use dptext_core::mia::{attack_target, extract_all, train_attack, train_shadow, write_attack_csv, AttackConfig};
use dptext_core::pipeline::{
    derive_seed, point_name, read_metrics_csv, run_sweep, transform_dataset, write_metrics_csv,
    write_plot_data, Experiment, ExperimentConfig, METRICS_FILE,
};
use dptext_core::text::{load_dataset, split_dataset, write_jsonl, DataFormat};
use dptext_core::{autoencoder::DecodeOptions, Error};

#[derive(Parser, Debug)]
#[command(name = "dptext", version, about = "Private text rewriting through a clipped, noised autoencoder latent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a TSV or JSONL dataset to canonical JSONL.
    Import {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "tsv")]
        format: DataFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split a dataset into train.jsonl and eval.jsonl.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: DataFormat,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split the configured dataset and train the autoencoder on the train half.
    TrainAe(ConfigArgs),
    /// Rewrite a dataset through a trained autoencoder.
    Transform {
        #[arg(long)]
        ae: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        max_length: usize,
        #[command(flatten)]
        noise: NoiseArgs,
    },
    /// Train an intent classifier.
    TrainIc {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Report accuracy on this dataset after training.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Shadow-model membership inference against a trained classifier.
    Attack {
        #[arg(long)]
        target: PathBuf,
        /// Attacker data; split in half to train and probe the shadow model.
        #[arg(long)]
        shadow_pool: PathBuf,
        #[arg(long)]
        members: PathBuf,
        #[arg(long)]
        nonmembers: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the full pipeline for one noise setting.
    RunPoint(ConfigArgs),
    /// Run every configured noise setting and write metrics.csv plus plot data.
    Sweep(ConfigArgs),
    /// Regenerate plot series from a metrics CSV.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Load this autoencoder checkpoint instead of training one.
    #[arg(long)]
    ae: Option<PathBuf>,
    #[command(flatten)]
    noise: NoiseArgs,
}

#[derive(Args, Debug, Default)]
struct NoiseArgs {
    #[arg(long)]
    noise_family: Option<NoiseFamily>,
    /// Per-coordinate noise variance; repeat for several sweep points.
    #[arg(long)]
    variance: Vec<f64>,
    /// Privacy budget; repeat for several sweep points.
    #[arg(long)]
    epsilon: Vec<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    clip_radius: Option<f64>,
    #[arg(long)]
    sensitivity_mode: Option<SensitivityMode>,
    #[arg(long)]
    no_repeat_window: Option<usize>,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if matches!(e, Error::Config(_)) {
        1
    } else if e.is_data_error() {
        2
    } else {
        3
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Import { input, format, out } => {
            let data = load_dataset(&input, format)?;
            write_jsonl(&out, &data)?;
            println!("wrote {} records to {}", data.len(), out.display());
        }
        Command::Split { input, format, seed, out } => {
            let data = load_dataset(&input, format)?;
            let split = split_dataset(&data, seed)?;
            create_dir(&out)?;
            write_jsonl(out.join("train.jsonl"), &split.train)?;
            write_jsonl(out.join("eval.jsonl"), &split.eval)?;
            println!("train {} / eval {} in {}", split.train.len(), split.eval.len(), out.display());
        }
        Command::TrainAe(args) => {
            let cfg = configure(&args)?;
            let exp = Experiment::prepare(cfg)?;
            exp.save_shared(&exp.config.out_dir)?;
            let last = exp.autoencoder_log.epoch_losses.last().copied().unwrap_or(f64::NAN);
            println!(
                "autoencoder: {} epochs, final loss {last:.4}; checkpoint {}",
                exp.autoencoder_log.epoch_losses.len(),
                exp.config.out_dir.join("autoencoder.ckpt").display()
            );
        }
        Command::Transform { ae, input, out, seed, max_length, noise } => {
            let model = load_autoencoder(&ae)?;
            let spec = noise.single_spec(
                model.clip_radius(),
                model.latent_dim(),
                DEFAULT_DELTA,
                SensitivityMode::default(),
            )?;
            let opts = DecodeOptions {
                max_length,
                no_repeat_window: noise.no_repeat_window.unwrap_or(0),
            };
            opts.validate()?;
            let data = load_dataset(&input, DataFormat::Jsonl)?;
            let report = transform_dataset(&model, &data, &spec, &opts, seed)?;
            write_jsonl(&out, &report.records)?;
            println!(
                "kept {} of {}; rejection rate {:.4}; label-flip rate {:.4}",
                report.records.len(),
                report.total,
                report.rejection_rate(),
                report.label_flip_rate()
            );
            for (reason, n) in report.rejection_counts() {
                println!("  rejected ({reason}): {n}");
            }
        }
        Command::TrainIc { input, out, eval, config, seed } => {
            let cfg = classifier_config(config.as_deref())?;
            let data = load_dataset(&input, DataFormat::Jsonl)?;
            let (model, log) = train_ic(&data, &cfg, seed)?;
            save_classifier(&model, &out)?;
            println!("train accuracy {:.4}", log.train_accuracy);
            if let Some(eval) = eval {
                let eval = load_dataset(&eval, DataFormat::Jsonl)?;
                println!("eval accuracy {:.4}", model.evaluate_accuracy(&eval)?);
            }
        }
        Command::Attack { target, shadow_pool, members, nonmembers, out, config, seed } => {
            let (ic_cfg, attack_cfg) = match config {
                Some(p) => {
                    let c = ExperimentConfig::load(p)?;
                    (c.classifier, c.attack)
                }
                None => (ClassifierConfig::default(), AttackConfig::default()),
            };
            let target = load_classifier(&target)?;
            let pool = load_dataset(&shadow_pool, DataFormat::Jsonl)?;
            let shadow = train_shadow(&pool, &ic_cfg, derive_seed(seed, "shadow"))?;
            let attack = train_attack(
                &extract_all(&shadow.model, &shadow.members)?,
                &extract_all(&shadow.model, &shadow.nonmembers)?,
                derive_seed(seed, "attack"),
                &attack_cfg,
            )?;
            let members = load_dataset(&members, DataFormat::Jsonl)?;
            let nonmembers = load_dataset(&nonmembers, DataFormat::Jsonl)?;
            let result = attack_target(&target, &attack, &members, &nonmembers)?;
            write_attack_csv(&out, &result)?;
            println!("attack AUC {:.4}", result.auc);
        }
        Command::RunPoint(args) => {
            let cfg = configure(&args)?;
            let arch = cfg.autoencoder.arch;
            let spec = args.noise.single_spec(
                arch.clip_radius,
                arch.hidden_dim,
                cfg.sweep.delta,
                cfg.sweep.sensitivity_mode,
            )?;
            let exp = experiment(cfg, args.ae.as_deref())?;
            exp.save_shared(&exp.config.out_dir)?;
            let dir = exp.config.out_dir.join("points").join(point_name(&spec));
            let m = exp.run_point(&spec, Some(&dir))?;
            println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
        }
        Command::Sweep(args) => {
            let cfg = configure(&args)?;
            let (rows, csv_path) = match &args.ae {
                None => {
                    let out = run_sweep(&cfg)?;
                    (out.rows, out.metrics_csv)
                }
                Some(ae) => {
                    let exp = experiment(cfg, Some(ae))?;
                    let out = exp.config.out_dir.clone();
                    exp.save_shared(&out)?;
                    let rows = exp.run_sweep(Some(&out))?;
                    let csv = out.join(METRICS_FILE);
                    write_metrics_csv(&csv, &rows)?;
                    write_plot_data(&out, &rows)?;
                    (rows, csv)
                }
            };
            for r in &rows {
                match (&r.ic_accuracy, &r.mia_auc, &r.error) {
                    (Some(acc), Some(auc), _) => println!("{:<24} accuracy {acc:.4}  auc {auc:.4}", r.point),
                    (_, _, err) => println!("{:<24} FAILED: {}", r.point, err.as_deref().unwrap_or("unknown")),
                }
            }
            println!("metrics written to {}", csv_path.display());
            if rows.iter().all(|r| !r.is_ok()) {
                return Err(Error::Pipeline("every sweep point failed".into()).into());
            }
        }
        Command::Report { metrics, out } => {
            let rows = read_metrics_csv(&metrics)?;
            write_plot_data(&out, &rows)?;
            println!("plot data for {} rows written to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

impl NoiseArgs {
    /// Exactly one noise setting, as required by `transform` and `run-point`.
    fn single_spec(
        &self,
        clip_radius: f64,
        dimension: usize,
        delta: f64,
        mode: SensitivityMode,
    ) -> Result<PrivacySpec, Failure> {
        let family = self
            .noise_family
            .ok_or_else(|| Failure::Usage("--noise-family is required".into()))?;
        let c = self.clip_radius.unwrap_or(clip_radius);
        if c != clip_radius {
            return Err(Failure::Usage(format!(
                "--clip-radius {c} differs from the autoencoder's radius {clip_radius}"
            )));
        }
        let delta = self.delta.unwrap_or(delta);
        let spec = match (family, self.variance.as_slice(), self.epsilon.as_slice()) {
            (NoiseFamily::Laplace, [v], []) => PrivacySpec::laplace_variance(*v, c, dimension),
            (NoiseFamily::Laplace, [], [e]) => PrivacySpec::laplace_epsilon(*e, c, dimension),
            (NoiseFamily::Gaussian, [v], []) => PrivacySpec::gaussian_variance(*v, delta, c, dimension),
            (NoiseFamily::Gaussian, [], [e]) => PrivacySpec::gaussian_epsilon(*e, delta, c, dimension),
            _ => {
                return Err(Failure::Usage(
                    "give exactly one of --variance or --epsilon".into(),
                ))
            }
        }
        .map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(spec.with_sensitivity(self.sensitivity_mode.unwrap_or(mode)))
    }
}

/// Load the config file and apply command-line overrides.
fn configure(args: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    let n = &args.noise;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    if let Some(c) = n.clip_radius {
        cfg.autoencoder.arch.clip_radius = c;
    }
    if let Some(m) = n.sensitivity_mode {
        cfg.sweep.sensitivity_mode = m;
    }
    if let Some(d) = n.delta {
        cfg.sweep.delta = d;
    }
    if let Some(w) = n.no_repeat_window {
        cfg.decode.no_repeat_window = w;
    }
    if let Some(f) = n.noise_family {
        cfg.sweep.families = vec![f];
    }
    if !n.variance.is_empty() || !n.epsilon.is_empty() {
        cfg.sweep.variances = n.variance.clone();
        cfg.sweep.epsilons = n.epsilon.clone();
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn experiment(cfg: ExperimentConfig, ae: Option<&Path>) -> Result<Experiment, Failure> {
    Ok(match ae {
        None => Experiment::prepare(cfg)?,
        Some(p) => {
            let model = load_autoencoder(p)?;
            let data = cfg.data.load()?;
            let split = split_dataset(&data, cfg.data.split_seed)?;
            Experiment::from_parts(cfg, split, model)?
        }
    })
}

fn classifier_config(path: Option<&Path>) -> Result<ClassifierConfig, Failure> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?.classifier,
        None => ClassifierConfig::default(),
    })
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}
