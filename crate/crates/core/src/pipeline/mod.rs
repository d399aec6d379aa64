//! End-to-end experiment: train the autoencoder once, then for every noise
//! setting rewrite the training split, train a target classifier on the
//! rewrite, measure accuracy on the untouched eval split and attack the
//! target with a shadow-model membership inference.

mod config;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{DataConfig, ExperimentConfig, SweepConfig, ToyData};
pub use report::{
    read_metrics_csv, strip_timestamp, write_metrics_csv, write_plot_data, METRICS_FILE,
};

use crate::autoencoder::{train_autoencoder, AutoencoderModel, DecodeOptions, TrainingLog};
use crate::checkpoint::{save_autoencoder, save_classifier};
use crate::classifier::train_ic;
use crate::dp::{effective_epsilon, NoiseFamily, NoiseLevel, PrivacySpec, SensitivityMode};
use crate::error::{Error, Result};
use crate::mia::{attack_target, extract_all, train_attack, train_shadow, write_attack_csv};
use crate::text::{split_dataset, write_jsonl, DatasetSplit, LabeledUtterance, Parsed, Rejection, Vocabulary};

/// Independent seed for a named stage, derived from the global seed.
pub fn derive_seed(base: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    // splitmix64 finalizer
    let mut z = (base ^ h).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Outcome of rewriting a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformReport {
    /// Accepted rewrites, labelled with the regenerated intent.
    pub records: Vec<LabeledUtterance>,
    /// Source index of each accepted rewrite.
    pub sources: Vec<usize>,
    pub rejected: Vec<(usize, Rejection)>,
    pub total: usize,
    /// Accepted rewrites whose regenerated label differs from the source label.
    pub label_flips: usize,
}

impl TransformReport {
    pub fn rejection_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.rejected.len() as f64 / self.total as f64
        }
    }

    /// Fraction of all source records that came back accepted but relabelled.
    pub fn label_flip_rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.label_flips as f64 / self.total as f64
        }
    }

    pub fn rejection_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for (_, r) in &self.rejected {
            *out.entry(r.as_str()).or_insert(0) += 1;
        }
        out
    }
}

/// Rewrite every record; record `i` draws its noise from `base_seed + i`.
/// Rejected outputs are dropped and counted, never retried.
pub fn transform_dataset(
    model: &AutoencoderModel,
    data: &[LabeledUtterance],
    spec: &PrivacySpec,
    opts: &DecodeOptions,
    base_seed: u64,
) -> Result<TransformReport> {
    let outputs = data
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(i as u64));
            model.transform(u, spec, opts, &mut rng)
        })
        .collect::<Result<Vec<Parsed>>>()?;
    let mut report = TransformReport {
        records: Vec::new(),
        sources: Vec::new(),
        rejected: Vec::new(),
        total: data.len(),
        label_flips: 0,
    };
    for (i, (parsed, src)) in outputs.into_iter().zip(data).enumerate() {
        match parsed {
            Parsed::Utterance(u) => {
                if u.label != src.label {
                    report.label_flips += 1;
                }
                report.records.push(u);
                report.sources.push(i);
            }
            Parsed::Rejected(r) => report.rejected.push((i, r)),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointStatus {
    Ok,
    Failed,
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMetrics {
    pub point: String,
    pub family: NoiseFamily,
    /// `variance` or `epsilon`: which quantity the sweep fixed.
    pub parameterized_by: String,
    /// Per-coordinate noise variance.
    pub variance: Option<f64>,
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub sensitivity_mode: SensitivityMode,
    pub clip_radius: f64,
    pub status: PointStatus,
    pub ic_accuracy: Option<f64>,
    pub mia_auc: Option<f64>,
    pub rejection_rate: Option<f64>,
    pub label_flip_rate: Option<f64>,
    pub transformed_records: Option<usize>,
    pub seed: u64,
    pub split_seed: u64,
    pub error: Option<String>,
    /// Unix seconds; the only column allowed to differ between identical runs.
    pub timestamp: u64,
}

impl ExperimentMetrics {
    fn skeleton(spec: &PrivacySpec, seed: u64, split_seed: u64) -> Self {
        let parameterized_by = match spec.level {
            NoiseLevel::Epsilon { .. } => "epsilon",
            NoiseLevel::Variance { .. } => "variance",
        };
        Self {
            point: point_name(spec),
            family: spec.family,
            parameterized_by: parameterized_by.into(),
            variance: spec.variance().ok(),
            epsilon: effective_epsilon(spec).ok().map(|r| r.epsilon),
            delta: spec.delta,
            sensitivity_mode: spec.sensitivity_mode,
            clip_radius: spec.clip_radius,
            status: PointStatus::Failed,
            ic_accuracy: None,
            mia_auc: None,
            rejection_rate: None,
            label_flip_rate: None,
            transformed_records: None,
            seed,
            split_seed,
            error: None,
            timestamp: now(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == PointStatus::Ok
    }
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Stable directory-safe name such as `gaussian-var-0.25`.
pub fn point_name(spec: &PrivacySpec) -> String {
    match spec.level {
        NoiseLevel::Variance { variance } => format!("{}-var-{variance}", spec.family),
        NoiseLevel::Epsilon { epsilon } => format!("{}-eps-{epsilon}", spec.family),
    }
}

/// Shared state of a sweep: the split and the autoencoder trained on its
/// training half. The eval half is only ever used to score classifiers.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub split: DatasetSplit,
    pub autoencoder: AutoencoderModel,
    pub autoencoder_log: TrainingLog,
}

impl Experiment {
    /// Load the data, split it and train the autoencoder.
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let data = config.data.load()?;
        let split = split_dataset(&data, config.data.split_seed)?;
        let vocab = Vocabulary::build(&split.train, config.autoencoder.min_count)?;
        let (autoencoder, autoencoder_log) = train_autoencoder(
            &split.train,
            vocab,
            &config.autoencoder,
            derive_seed(config.seed, "autoencoder"),
        )?;
        Ok(Self {
            config,
            split,
            autoencoder,
            autoencoder_log,
        })
    }

    /// Reuse an existing split and trained autoencoder.
    pub fn from_parts(config: ExperimentConfig, split: DatasetSplit, autoencoder: AutoencoderModel) -> Result<Self> {
        config.validate()?;
        if autoencoder.clip_radius() != config.autoencoder.arch.clip_radius
            || autoencoder.latent_dim() != config.autoencoder.arch.hidden_dim
        {
            return Err(Error::Config(
                "autoencoder checkpoint does not match the configured architecture".into(),
            ));
        }
        Ok(Self {
            config,
            split,
            autoencoder,
            autoencoder_log: TrainingLog {
                epoch_losses: Vec::new(),
            },
        })
    }

    /// Write the split, the autoencoder checkpoint and the resolved config.
    pub fn save_shared(&self, out: &Path) -> Result<()> {
        create_dir(out)?;
        write_jsonl(out.join("train.jsonl"), &self.split.train)?;
        write_jsonl(out.join("eval.jsonl"), &self.split.eval)?;
        save_autoencoder(&self.autoencoder, out.join("autoencoder.ckpt"))?;
        let cfg = out.join("config.toml");
        fs::write(&cfg, self.config.to_toml()).map_err(|e| Error::io(&cfg, e))
    }

    /// Full pipeline for one noise setting. Artifacts go to `out` when given.
    pub fn run_point(&self, spec: &PrivacySpec, out: Option<&Path>) -> Result<ExperimentMetrics> {
        if spec.clip_radius != self.autoencoder.clip_radius() || spec.dimension != self.autoencoder.latent_dim() {
            return Err(Error::Config(format!(
                "spec (C={}, d={}) does not match the autoencoder (C={}, d={})",
                spec.clip_radius,
                spec.dimension,
                self.autoencoder.clip_radius(),
                self.autoencoder.latent_dim()
            )));
        }
        let cfg = &self.config;
        let name = point_name(spec);
        let seed = |stage: &str| derive_seed(cfg.seed, &format!("{name}/{stage}"));

        let rewrite = transform_dataset(&self.autoencoder, &self.split.train, spec, &cfg.decode, seed("transform"))?;
        if rewrite.records.is_empty() {
            return Err(Error::Pipeline(format!(
                "every one of {} rewrites was rejected",
                rewrite.total
            )));
        }
        let (target, _) = train_ic(&rewrite.records, &cfg.classifier, seed("target"))
            .map_err(|e| Error::Pipeline(format!("target classifier: {e}")))?;
        let ic_accuracy = target.evaluate_accuracy(&self.split.eval)?;

        // The attacker's pool is the released rewrite; the eval split stays unseen.
        let shadow = train_shadow(&rewrite.records, &cfg.classifier, seed("shadow"))
            .map_err(|e| Error::Pipeline(format!("shadow classifier: {e}")))?;
        let attack = train_attack(
            &extract_all(&shadow.model, &shadow.members)?,
            &extract_all(&shadow.model, &shadow.nonmembers)?,
            seed("attack"),
            &cfg.attack,
        )?;
        let result = attack_target(&target, &attack, &self.split.train, &self.split.eval)?;

        let mut m = ExperimentMetrics::skeleton(spec, cfg.seed, cfg.data.split_seed);
        m.status = PointStatus::Ok;
        m.ic_accuracy = Some(ic_accuracy);
        m.mia_auc = Some(result.auc);
        m.rejection_rate = Some(rewrite.rejection_rate());
        m.label_flip_rate = Some(rewrite.label_flip_rate());
        m.transformed_records = Some(rewrite.records.len());

        if let Some(out) = out {
            create_dir(out)?;
            write_jsonl(out.join("transformed.jsonl"), &rewrite.records)?;
            let mut rej = String::from("record_index,reason\n");
            for (i, r) in &rewrite.rejected {
                rej.push_str(&format!("{i},{r}\n"));
            }
            write_file(&out.join("rejections.csv"), rej.as_bytes())?;
            save_classifier(&target, out.join("target_ic.ckpt"))?;
            save_classifier(&shadow.model, out.join("shadow_ic.ckpt"))?;
            write_file(
                &out.join("attack_model.json"),
                &serde_json::to_vec_pretty(&attack).expect("attack model serializes"),
            )?;
            write_attack_csv(out.join("attack.csv"), &result)?;
            write_file(
                &out.join("metrics.json"),
                &serde_json::to_vec_pretty(&m).expect("metrics serialize"),
            )?;
        }
        Ok(m)
    }

    /// Like [`run_point`](Self::run_point) but turns a failure into a flagged row.
    pub fn run_point_row(&self, spec: &PrivacySpec, out: Option<&Path>) -> ExperimentMetrics {
        self.run_point(spec, out).unwrap_or_else(|e| {
            let mut m = ExperimentMetrics::skeleton(spec, self.config.seed, self.config.data.split_seed);
            m.error = Some(e.to_string());
            m
        })
    }

    /// Every configured point, in config order. Points run in parallel; each
    /// has its own seeds and output directory.
    pub fn run_sweep(&self, out: Option<&Path>) -> Result<Vec<ExperimentMetrics>> {
        let specs = self.config.specs()?;
        let dirs: Vec<Option<PathBuf>> = specs
            .iter()
            .map(|s| out.map(|o| o.join("points").join(point_name(s))))
            .collect();
        Ok(specs
            .par_iter()
            .zip(dirs.par_iter())
            .map(|(s, d)| self.run_point_row(s, d.as_deref()))
            .collect())
    }
}

/// Prepare and run a single point, writing artifacts under `config.out_dir`.
pub fn run_point(config: &ExperimentConfig, spec: &PrivacySpec) -> Result<ExperimentMetrics> {
    let exp = Experiment::prepare(config.clone())?;
    exp.save_shared(&config.out_dir)?;
    exp.run_point(spec, Some(&config.out_dir.join("points").join(point_name(spec))))
}

/// Files written by [`run_sweep`].
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<ExperimentMetrics>,
    pub metrics_csv: PathBuf,
}

impl SweepOutput {
    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(|r| !r.is_ok())
    }
}

/// Run every point, then write `metrics.csv` and the plot series under
/// `config.out_dir`. Failed points are flagged rather than aborting the sweep.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepOutput> {
    let exp = Experiment::prepare(config.clone())?;
    let out = &config.out_dir;
    exp.save_shared(out)?;
    let rows = exp.run_sweep(Some(out))?;
    let metrics_csv = out.join(METRICS_FILE);
    write_metrics_csv(&metrics_csv, &rows)?;
    write_plot_data(out, &rows)?;
    Ok(SweepOutput { rows, metrics_csv })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
