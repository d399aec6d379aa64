//! Python bindings: `import dptext`.
//!
//! Records cross the boundary as `(label, text)` tuples.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dptext_core::autoencoder::{train_autoencoder, AutoencoderConfig, AutoencoderModel, DecodeOptions};
use dptext_core::checkpoint;
use dptext_core::classifier::{train_ic, ClassifierConfig, IntentClassifierModel};
use dptext_core::dp::{self, NoiseFamily, PrivacySpec, SensitivityMode, DEFAULT_CLIP_RADIUS, DEFAULT_DELTA};
use dptext_core::mia;
use dptext_core::pipeline::{self, ExperimentConfig};
use dptext_core::text::{self, DataFormat, LabeledUtterance, Parsed, Vocabulary};
use dptext_core::{toy, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Pipeline(_) | Error::Checkpoint(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

type Record = (String, String);

fn to_records(data: &[LabeledUtterance]) -> Vec<Record> {
    data.iter().map(|u| (u.label.clone(), u.text())).collect()
}

fn from_records(records: Vec<Record>) -> PyResult<Vec<LabeledUtterance>> {
    records
        .into_iter()
        .map(|(label, text)| LabeledUtterance::from_text(label, &text).map_err(to_py))
        .collect()
}

fn parse_enum<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// Latent mechanism: clip radius, noise family and level, δ, sensitivity mode.
#[pyclass(name = "PrivacySpec", module = "dptext", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySpec(PrivacySpec);

#[pymethods]
impl PySpec {
    #[staticmethod]
    #[pyo3(signature = (epsilon, dimension, clip_radius = DEFAULT_CLIP_RADIUS))]
    fn laplace_epsilon(epsilon: f64, dimension: usize, clip_radius: f64) -> PyResult<Self> {
        PrivacySpec::laplace_epsilon(epsilon, clip_radius, dimension).map(Self).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (variance, dimension, clip_radius = DEFAULT_CLIP_RADIUS))]
    fn laplace_variance(variance: f64, dimension: usize, clip_radius: f64) -> PyResult<Self> {
        PrivacySpec::laplace_variance(variance, clip_radius, dimension).map(Self).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (epsilon, dimension, delta = DEFAULT_DELTA, clip_radius = DEFAULT_CLIP_RADIUS))]
    fn gaussian_epsilon(epsilon: f64, dimension: usize, delta: f64, clip_radius: f64) -> PyResult<Self> {
        PrivacySpec::gaussian_epsilon(epsilon, delta, clip_radius, dimension).map(Self).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (variance, dimension, delta = DEFAULT_DELTA, clip_radius = DEFAULT_CLIP_RADIUS))]
    fn gaussian_variance(variance: f64, dimension: usize, delta: f64, clip_radius: f64) -> PyResult<Self> {
        PrivacySpec::gaussian_variance(variance, delta, clip_radius, dimension).map(Self).map_err(to_py)
    }

    /// Copy with the sensitivity mode `"paper"` or `"corrected"`.
    fn with_sensitivity(&self, mode: &str) -> PyResult<Self> {
        Ok(Self(self.0.with_sensitivity(parse_enum::<SensitivityMode>(mode)?)))
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.0.family.as_str()
    }

    #[getter]
    fn clip_radius(&self) -> f64 {
        self.0.clip_radius
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.0.delta
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.0.dimension
    }

    #[getter]
    fn sensitivity_mode(&self) -> &'static str {
        self.0.sensitivity_mode.as_str()
    }

    #[getter]
    fn l1_sensitivity(&self) -> f64 {
        self.0.l1_sensitivity()
    }

    #[getter]
    fn l2_sensitivity(&self) -> f64 {
        self.0.l2_sensitivity()
    }

    /// Per-coordinate noise variance.
    #[getter]
    fn variance(&self) -> PyResult<f64> {
        self.0.variance().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("PrivacySpec({})", pipeline::point_name(&self.0))
    }
}

#[pyfunction]
fn clip_to_ball(r: Vec<f64>, radius: f64) -> PyResult<Vec<f64>> {
    dp::clip_to_ball(&r, radius).map_err(to_py)
}

#[pyfunction]
fn l2_norm(r: Vec<f64>) -> f64 {
    dp::l2_norm(&r)
}

/// Clip `r` and add noise drawn from a generator seeded with `seed`.
#[pyfunction]
fn privatize(r: Vec<f64>, spec: PyRef<'_, PySpec>, seed: u64) -> PyResult<Vec<f64>> {
    dp::privatize(&r, &spec.0, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(to_py)
}

#[pyfunction]
fn laplace_scale(spec: PyRef<'_, PySpec>) -> PyResult<f64> {
    dp::laplace_scale(&spec.0).map_err(to_py)
}

#[pyfunction]
fn gaussian_sigma(spec: PyRef<'_, PySpec>) -> PyResult<f64> {
    dp::gaussian_sigma(&spec.0).map_err(to_py)
}

/// `(epsilon, delta)` guaranteed by `spec`.
#[pyfunction]
fn effective_epsilon(spec: PyRef<'_, PySpec>) -> PyResult<(f64, f64)> {
    let r = dp::effective_epsilon(&spec.0).map_err(to_py)?;
    Ok((r.epsilon, r.delta))
}

#[pyfunction]
#[pyo3(signature = (spec, u1, u2, samples = 1_000_000, bins = 200, seed = 0))]
fn empirical_dp_check(
    py: Python<'_>,
    spec: PyRef<'_, PySpec>,
    u1: f64,
    u2: f64,
    samples: usize,
    bins: usize,
    seed: u64,
) -> PyResult<f64> {
    let spec = spec.0;
    py.detach(|| dp::empirical_dp_check(&spec, u1, u2, samples, bins, &mut ChaCha8Rng::seed_from_u64(seed)))
        .map_err(to_py)
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    mia::roc_auc(&scores, &labels).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (path, format = "jsonl"))]
fn load_dataset(path: PathBuf, format: &str) -> PyResult<Vec<Record>> {
    let fmt: DataFormat = parse_enum(format)?;
    Ok(to_records(&text::load_dataset(path, fmt).map_err(to_py)?))
}

#[pyfunction]
fn write_jsonl(path: PathBuf, records: Vec<Record>) -> PyResult<()> {
    text::write_jsonl(path, &from_records(records)?).map_err(to_py)
}

/// `(train, eval)`; train receives the extra record for odd sizes.
#[pyfunction]
fn split_dataset(records: Vec<Record>, seed: u64) -> PyResult<(Vec<Record>, Vec<Record>)> {
    let s = text::split_dataset(&from_records(records)?, seed).map_err(to_py)?;
    Ok((to_records(&s.train), to_records(&s.eval)))
}

/// Synthetic intent corpus (up to 4 intents).
#[pyfunction]
#[pyo3(signature = (per_intent = 50, intents = 4, seed = 0))]
fn toy_corpus(per_intent: usize, intents: usize, seed: u64) -> Vec<Record> {
    to_records(&toy::intent_corpus(per_intent, intents, seed))
}

fn decode_options(max_length: usize, no_repeat_window: usize) -> PyResult<DecodeOptions> {
    let o = DecodeOptions {
        max_length,
        no_repeat_window,
    };
    o.validate().map_err(to_py)?;
    Ok(o)
}

/// `(record, None)` for an accepted rewrite, `(None, reason)` for a rejection.
type Outcome = (Option<Record>, Option<&'static str>);

fn parsed_to_py(p: Parsed) -> Outcome {
    match p {
        Parsed::Utterance(u) => (Some((u.label.clone(), u.text())), None),
        Parsed::Rejected(r) => (None, Some(r.as_str())),
    }
}

/// LSTM autoencoder over label-prefixed utterances.
#[pyclass(name = "Autoencoder", module = "dptext")]
struct PyAutoencoder(AutoencoderModel);

#[pymethods]
impl PyAutoencoder {
    /// Train on `records`; the vocabulary is built from them.
    #[staticmethod]
    #[pyo3(signature = (
        records, seed = 0, embedding_dim = 64, hidden_dim = 128, clip_radius = DEFAULT_CLIP_RADIUS,
        epochs = 30, learning_rate = 1e-3, batch_size = 16
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        records: Vec<Record>,
        seed: u64,
        embedding_dim: usize,
        hidden_dim: usize,
        clip_radius: f64,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
    ) -> PyResult<Self> {
        let data = from_records(records)?;
        let mut cfg = AutoencoderConfig::default();
        cfg.arch.embedding_dim = embedding_dim;
        cfg.arch.hidden_dim = hidden_dim;
        cfg.arch.clip_radius = clip_radius;
        cfg.train.epochs = epochs;
        cfg.train.learning_rate = learning_rate;
        cfg.train.batch_size = batch_size;
        let model = py
            .detach(|| {
                let vocab = Vocabulary::build(&data, cfg.min_count)?;
                train_autoencoder(&data, vocab, &cfg, seed)
            })
            .map_err(to_py)?
            .0;
        Ok(Self(model))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        checkpoint::load_autoencoder(path).map(Self).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save_autoencoder(&self.0, path).map_err(to_py)
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.0.latent_dim()
    }

    #[getter]
    fn clip_radius(&self) -> f64 {
        self.0.clip_radius()
    }

    #[getter]
    fn vocab(&self) -> Vec<String> {
        self.0.vocab().tokens().to_vec()
    }

    /// Unclipped latent of `(label, text)`.
    fn encode(&self, label: &str, text: &str) -> PyResult<Vec<f64>> {
        let u = LabeledUtterance::from_text(label, text).map_err(to_py)?;
        let ids = self.0.vocab().encode_for_autoencoder(&u).map_err(to_py)?;
        self.0.encode(&ids).map_err(to_py)
    }

    /// Greedy decode of a latent to tokens (`BOS`/`EOS` stripped).
    #[pyo3(signature = (latent, max_length = 32, no_repeat_window = 0))]
    fn decode(&self, latent: Vec<f64>, max_length: usize, no_repeat_window: usize) -> PyResult<Vec<String>> {
        let ids = self
            .0
            .decode(&latent, &decode_options(max_length, no_repeat_window)?)
            .map_err(to_py)?;
        let v = self.0.vocab();
        Ok(ids
            .into_iter()
            .filter(|&i| i != text::BOS && i != text::EOS)
            .filter_map(|i| v.token(i).map(str::to_string))
            .collect())
    }

    /// Noise-free rewrite as `(record, rejection)`; exactly one is `None`.
    #[pyo3(signature = (label, text, max_length = 32))]
    fn reconstruct(&self, label: &str, text: &str, max_length: usize) -> PyResult<Outcome> {
        let u = LabeledUtterance::from_text(label, text).map_err(to_py)?;
        let p = self.0.reconstruct(&u, &decode_options(max_length, 0)?).map_err(to_py)?;
        Ok(parsed_to_py(p))
    }

    /// Private rewrite as `(record, rejection)`; exactly one is `None`.
    #[pyo3(signature = (label, text, spec, seed = 0, max_length = 32, no_repeat_window = 0))]
    fn transform(
        &self,
        label: &str,
        text: &str,
        spec: PyRef<'_, PySpec>,
        seed: u64,
        max_length: usize,
        no_repeat_window: usize,
    ) -> PyResult<Outcome> {
        let u = LabeledUtterance::from_text(label, text).map_err(to_py)?;
        let p = self
            .0
            .transform(
                &u,
                &spec.0,
                &decode_options(max_length, no_repeat_window)?,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )
            .map_err(to_py)?;
        Ok(parsed_to_py(p))
    }

    /// Rewrite a dataset; returns `(accepted records, rejection rate, label-flip rate)`.
    #[pyo3(signature = (records, spec, seed = 0, max_length = 32, no_repeat_window = 0))]
    fn transform_dataset(
        &self,
        py: Python<'_>,
        records: Vec<Record>,
        spec: PyRef<'_, PySpec>,
        seed: u64,
        max_length: usize,
        no_repeat_window: usize,
    ) -> PyResult<(Vec<Record>, f64, f64)> {
        let data = from_records(records)?;
        let opts = decode_options(max_length, no_repeat_window)?;
        let spec = spec.0;
        let r = py
            .detach(|| pipeline::transform_dataset(&self.0, &data, &spec, &opts, seed))
            .map_err(to_py)?;
        Ok((to_records(&r.records), r.rejection_rate(), r.label_flip_rate()))
    }
}

/// Word + character bi-LSTM intent classifier.
#[pyclass(name = "IntentClassifier", module = "dptext")]
struct PyClassifier(IntentClassifierModel);

#[pymethods]
impl PyClassifier {
    #[staticmethod]
    #[pyo3(signature = (records, seed = 0, epochs = 30, learning_rate = 1e-3, batch_size = 16, hidden = 64))]
    fn train(
        py: Python<'_>,
        records: Vec<Record>,
        seed: u64,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        hidden: usize,
    ) -> PyResult<Self> {
        let data = from_records(records)?;
        let mut cfg = ClassifierConfig::default();
        cfg.train.epochs = epochs;
        cfg.train.learning_rate = learning_rate;
        cfg.train.batch_size = batch_size;
        cfg.arch.hidden = hidden;
        let (model, _) = py.detach(|| train_ic(&data, &cfg, seed)).map_err(to_py)?;
        Ok(Self(model))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        checkpoint::load_classifier(path).map(Self).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save_classifier(&self.0, path).map_err(to_py)
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.0.labels().to_vec()
    }

    /// Top-`k` `(label, probability)` pairs, most likely first.
    #[pyo3(signature = (text, k = 5))]
    fn predict_topk(&self, text: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        Ok(self.0.predict_topk(&text::tokenize(text), k).map_err(to_py)?.ranked)
    }

    fn accuracy(&self, py: Python<'_>, records: Vec<Record>) -> PyResult<f64> {
        let data = from_records(records)?;
        py.detach(|| self.0.evaluate_accuracy(&data)).map_err(to_py)
    }
}

fn metrics_to_py<'py>(py: Python<'py>, m: &pipeline::ExperimentMetrics) -> PyResult<Bound<'py, PyAny>> {
    let json = serde_json::to_string(m).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (json,))
}

fn load_config(config_toml: &str, out_dir: Option<PathBuf>) -> PyResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_toml(config_toml).map_err(to_py)?;
    if let Some(o) = out_dir {
        cfg.out_dir = o;
    }
    Ok(cfg)
}

/// Run every configured point from a TOML config string; returns one dict per row.
#[pyfunction]
#[pyo3(signature = (config_toml, out_dir = None))]
fn run_sweep<'py>(py: Python<'py>, config_toml: &str, out_dir: Option<PathBuf>) -> PyResult<Vec<Bound<'py, PyAny>>> {
    let cfg = load_config(config_toml, out_dir)?;
    let out = py.detach(|| pipeline::run_sweep(&cfg)).map_err(to_py)?;
    out.rows.iter().map(|m| metrics_to_py(py, m)).collect()
}

/// Full pipeline for one spec; returns the metrics row as a dict.
#[pyfunction]
#[pyo3(signature = (config_toml, spec, out_dir = None))]
fn run_point<'py>(
    py: Python<'py>,
    config_toml: &str,
    spec: PyRef<'_, PySpec>,
    out_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = load_config(config_toml, out_dir)?;
    let spec = spec.0;
    let m = py.detach(|| pipeline::run_point(&cfg, &spec)).map_err(to_py)?;
    metrics_to_py(py, &m)
}

#[pymodule]
fn dptext(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpec>()?;
    m.add_class::<PyAutoencoder>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(clip_to_ball, m)?)?;
    m.add_function(wrap_pyfunction!(l2_norm, m)?)?;
    m.add_function(wrap_pyfunction!(privatize, m)?)?;
    m.add_function(wrap_pyfunction!(laplace_scale, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(effective_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_dp_check, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(write_jsonl, m)?)?;
    m.add_function(wrap_pyfunction!(split_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(toy_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_point, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add("NOISE_FAMILIES", [NoiseFamily::Laplace.as_str(), NoiseFamily::Gaussian.as_str()])?;
    Ok(())
}
