//! Label-aware LSTM sequence autoencoder.
//!
//! The encoder reads `[BOS, @label, words.., EOS]` left to right from a zero
//! state; its final hidden state is the latent. The decoder starts from the
//! (clipped, possibly noised) latent as hidden state and a zero cell, and
//! regenerates the sequence after `BOS`. Training clips the latent to the
//! configured radius but adds no noise.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dp::{self, PrivacySpec};
use crate::error::{Error, Result};
use crate::nn::{Embedding, Graph, Linear, LstmParams, ParamSet, Tensor, Var};
use crate::text::{LabeledUtterance, Parsed, Vocabulary, BOS, EOS, PAD};
use crate::training::{fit, ExampleLoss, TrainOptions};

/// Shape of an autoencoder; stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderArch {
    pub embedding_dim: usize,
    /// Hidden size of both LSTMs, which is also the latent dimension.
    pub hidden_dim: usize,
    pub clip_radius: f64,
}

impl Default for AutoencoderArch {
    fn default() -> Self {
        Self {
            embedding_dim: 64,
            hidden_dim: 128,
            clip_radius: dp::DEFAULT_CLIP_RADIUS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    #[serde(flatten)]
    pub arch: AutoencoderArch,
    #[serde(flatten)]
    pub train: TrainOptions,
    pub min_count: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            arch: AutoencoderArch::default(),
            train: TrainOptions::default(),
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeOptions {
    /// Upper bound on generated tokens, `EOS` included.
    pub max_length: usize,
    /// Mask any token among the last `no_repeat_window` emitted ones; 0 disables.
    pub no_repeat_window: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            max_length: 32,
            no_repeat_window: 0,
        }
    }
}

impl DecodeOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_length < 2 {
            return Err(Error::Config(format!(
                "max_length must be at least 2, got {}",
                self.max_length
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AutoencoderModel {
    arch: AutoencoderArch,
    vocab: Vocabulary,
    params: ParamSet,
    embedding: Embedding,
    encoder: LstmParams,
    decoder: LstmParams,
    projection: Linear,
}

/// Intermediate values of one rewrite, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformTrace {
    pub latent: Vec<f64>,
    /// Norm of the latent after clipping, before noise.
    pub clipped_norm: f64,
    pub noisy_latent: Vec<f64>,
    pub output_ids: Vec<usize>,
    pub parsed: Parsed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean per-token cross-entropy of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl AutoencoderModel {
    /// Freshly initialized model.
    pub fn new(arch: AutoencoderArch, vocab: Vocabulary, seed: u64) -> Result<Self> {
        if arch.embedding_dim == 0 || arch.hidden_dim == 0 {
            return Err(Error::Config("autoencoder dimensions must be positive".into()));
        }
        if !(arch.clip_radius > 0.0) {
            return Err(Error::Config("clip radius must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let v = vocab.len();
        let embedding = Embedding::register(&mut params, "embedding", v, arch.embedding_dim, &mut rng);
        let encoder = LstmParams::register(&mut params, "encoder", arch.embedding_dim, arch.hidden_dim, &mut rng);
        let decoder = LstmParams::register(&mut params, "decoder", arch.embedding_dim, arch.hidden_dim, &mut rng);
        let projection = Linear::register(&mut params, "projection", arch.hidden_dim, v, &mut rng);
        Ok(Self {
            arch,
            vocab,
            params,
            embedding,
            encoder,
            decoder,
            projection,
        })
    }

    pub fn arch(&self) -> &AutoencoderArch {
        &self.arch
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.hidden_dim
    }

    pub fn clip_radius(&self) -> f64 {
        self.arch.clip_radius
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Contract("cannot encode an empty sequence".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab.len()) {
            return Err(Error::Index {
                index: bad,
                size: self.vocab.len(),
                context: "autoencoder input id",
            });
        }
        Ok(())
    }

    fn encoder_graph(&self, g: &mut Graph<'_>, ids: &[usize]) -> Result<Var> {
        self.check_ids(ids)?;
        let emb = self.embedding.lookup(g, ids)?;
        let xs = (0..ids.len()).map(|t| g.row(emb, t)).collect::<Result<Vec<_>>>()?;
        let (h0, c0) = self.encoder.zero_state(g);
        let (hs, _) = self.encoder.run(g, &xs, h0, c0)?;
        Ok(*hs.last().expect("non-empty input"))
    }

    /// Teacher-forced reconstruction loss of one encoded sequence, summed over
    /// target tokens, with the latent clipped before decoding.
    pub fn sequence_loss(&self, g: &mut Graph<'_>, ids: &[usize]) -> Result<(Var, usize)> {
        if ids.len() < 2 {
            return Err(Error::Contract("a training sequence needs at least BOS and EOS".into()));
        }
        let latent = self.encoder_graph(g, ids)?;
        let mut h = g.clip_to_ball(latent, self.arch.clip_radius)?;
        let mut c = g.input(Tensor::zeros(&[self.arch.hidden_dim]));
        let inputs = &ids[..ids.len() - 1];
        let targets = &ids[1..];
        let emb = self.embedding.lookup(g, inputs)?;
        let mut losses = Vec::with_capacity(targets.len());
        for (t, &target) in targets.iter().enumerate() {
            let x = g.row(emb, t)?;
            let (nh, nc) = self.decoder.step(g, x, h, c)?;
            h = nh;
            c = nc;
            let logits = self.projection.forward(g, h)?;
            losses.push(g.softmax_cross_entropy(logits, target)?);
        }
        let total = g.add_n(&losses)?;
        Ok((total, targets.len()))
    }

    /// Final encoder hidden state; no clipping.
    pub fn encode(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let h = self.encoder_graph(&mut g, ids)?;
        Ok(g.value(h).data().to_vec())
    }

    /// Greedy decoding from `latent`. Returns the generated ids after `BOS`,
    /// ending with `EOS` unless `max_length` was reached first.
    pub fn decode(&self, latent: &[f64], opts: &DecodeOptions) -> Result<Vec<usize>> {
        opts.validate()?;
        if latent.len() != self.arch.hidden_dim {
            return Err(Error::Dimension(format!(
                "latent of length {} for hidden size {}",
                latent.len(),
                self.arch.hidden_dim
            )));
        }
        let mut g = Graph::new(&self.params);
        let mut h = g.input(Tensor::vector(latent.to_vec()));
        let mut c = g.input(Tensor::zeros(&[self.arch.hidden_dim]));
        let table = g.param(self.embedding.table);
        let mut prev = BOS;
        let mut out = Vec::with_capacity(opts.max_length);
        while out.len() < opts.max_length {
            let x = g.row(table, prev)?;
            let (nh, nc) = self.decoder.step(&mut g, x, h, c)?;
            h = nh;
            c = nc;
            let logits = self.projection.forward(&mut g, h)?;
            let recent = &out[out.len().saturating_sub(opts.no_repeat_window)..];
            let next = argmax_masked(g.value(logits).data(), |id| {
                id == PAD || id == BOS || recent.contains(&id)
            })
            .unwrap_or(EOS);
            out.push(next);
            if next == EOS {
                break;
            }
            prev = next;
        }
        Ok(out)
    }

    fn check_spec(&self, spec: &PrivacySpec) -> Result<()> {
        if spec.clip_radius != self.arch.clip_radius {
            return Err(Error::Config(format!(
                "model was trained with clip radius {} but the mechanism uses {}",
                self.arch.clip_radius, spec.clip_radius
            )));
        }
        if spec.dimension != self.arch.hidden_dim {
            return Err(Error::Config(format!(
                "mechanism dimension {} does not match latent dimension {}",
                spec.dimension, self.arch.hidden_dim
            )));
        }
        Ok(())
    }

    /// Encode, privatize, decode and parse one utterance.
    pub fn transform<R: RngCore + ?Sized>(
        &self,
        u: &LabeledUtterance,
        spec: &PrivacySpec,
        opts: &DecodeOptions,
        rng: &mut R,
    ) -> Result<Parsed> {
        Ok(self.transform_traced(u, spec, opts, rng)?.parsed)
    }

    pub fn transform_traced<R: RngCore + ?Sized>(
        &self,
        u: &LabeledUtterance,
        spec: &PrivacySpec,
        opts: &DecodeOptions,
        rng: &mut R,
    ) -> Result<TransformTrace> {
        self.check_spec(spec)?;
        let ids = self.vocab.encode_for_autoencoder(u)?;
        let latent = self.encode(&ids)?;
        let clipped_norm = dp::l2_norm(&dp::clip_to_ball(&latent, spec.clip_radius)?);
        if clipped_norm > spec.clip_radius + dp::NORM_SLACK {
            return Err(Error::Pipeline(format!(
                "clipped latent norm {clipped_norm} exceeds radius {}",
                spec.clip_radius
            )));
        }
        let noisy_latent = dp::privatize(&latent, spec, rng)?;
        let output_ids = self.decode(&noisy_latent, opts)?;
        let parsed = self.vocab.parse_transformed(&output_ids);
        Ok(TransformTrace {
            latent,
            clipped_norm,
            noisy_latent,
            output_ids,
            parsed,
        })
    }

    /// Noise-free pass: encode, clip, decode, parse.
    pub fn reconstruct(&self, u: &LabeledUtterance, opts: &DecodeOptions) -> Result<Parsed> {
        let ids = self.vocab.encode_for_autoencoder(u)?;
        let latent = dp::clip_to_ball(&self.encode(&ids)?, self.arch.clip_radius)?;
        let out = self.decode(&latent, opts)?;
        Ok(self.vocab.parse_transformed(&out))
    }

    /// Mean per-token loss over `corpus` without updating parameters.
    pub fn mean_token_loss(&self, corpus: &[LabeledUtterance]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0;
        for u in corpus {
            let ids = self.vocab.encode_for_autoencoder(u)?;
            let mut g = Graph::new(&self.params);
            let (loss, n) = self.sequence_loss(&mut g, &ids)?;
            total += g.value(loss).data()[0];
            count += n;
        }
        Ok(total / count.max(1) as f64)
    }

    pub(crate) fn from_parts(arch: AutoencoderArch, vocab: Vocabulary, params: ParamSet) -> Result<Self> {
        let mut model = Self::new(arch, vocab, 0)?;
        if params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (name, t) in params.iter() {
            model.params.assign(name, t.clone())?;
        }
        Ok(model)
    }
}

fn argmax_masked(values: &[f64], masked: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if masked(i) {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Teacher-forced reconstruction training with latent clipping and no noise.
pub fn train_autoencoder(
    corpus: &[LabeledUtterance],
    vocab: Vocabulary,
    config: &AutoencoderConfig,
    seed: u64,
) -> Result<(AutoencoderModel, TrainingLog)> {
    if corpus.is_empty() {
        return Err(Error::Contract("cannot train an autoencoder on an empty corpus".into()));
    }
    let mut model = AutoencoderModel::new(config.arch, vocab, seed)?;
    let encoded = corpus
        .iter()
        .map(|u| model.vocab.encode_for_autoencoder(u))
        .collect::<Result<Vec<_>>>()?;
    // Graphs read parameters from the set handed to `fit`; the model only
    // contributes parameter ids.
    let mut params = model.params.clone();
    let epoch_losses = fit(&mut params, &encoded, &config.train, seed.wrapping_add(1), |g, ids| {
        let (loss, targets) = model.sequence_loss(g, ids)?;
        Ok(ExampleLoss { loss, targets })
    })?;
    model.params = params;
    Ok((model, TrainingLog { epoch_losses }))
}

/// Positionwise token agreement: `(matching positions, max length)`.
pub fn token_match(a: &[String], b: &[String]) -> (usize, usize) {
    let matched = a.iter().zip(b).filter(|(x, y)| x == y).count();
    (matched, a.len().max(b.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<LabeledUtterance> {
        [
            ("Greet", "hello there"),
            ("Greet", "hi there friend"),
            ("Bye", "goodbye now"),
            ("Bye", "see you later"),
        ]
        .iter()
        .map(|(l, t)| LabeledUtterance::from_text(*l, t).unwrap())
        .collect()
    }

    fn small_arch() -> AutoencoderArch {
        AutoencoderArch {
            embedding_dim: 6,
            hidden_dim: 5,
            clip_radius: 1.0,
        }
    }

    fn model() -> AutoencoderModel {
        let vocab = Vocabulary::build(&corpus(), 1).unwrap();
        AutoencoderModel::new(small_arch(), vocab, 4).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_latent() {
        let mut m = model();
        for id in m.params.ids().collect::<Vec<_>>() {
            m.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let ids = m.vocab.encode_for_autoencoder(&corpus()[0]).unwrap();
        assert_eq!(m.encode(&ids).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn encode_is_deterministic_and_rejects_empty() {
        let m = model();
        let ids = m.vocab.encode_for_autoencoder(&corpus()[1]).unwrap();
        assert_eq!(m.encode(&ids).unwrap(), m.encode(&ids).unwrap());
        assert!(matches!(m.encode(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn eos_biased_projection_decodes_to_nothing() {
        let mut m = model();
        let bias = m.projection.bias;
        let b = m.params.get_mut(bias).data_mut();
        b.iter_mut().for_each(|v| *v = -100.0);
        b[EOS] = 100.0;
        let out = m.decode(&[0.1; 5], &DecodeOptions::default()).unwrap();
        assert_eq!(out, vec![EOS]);
        assert!(matches!(
            m.vocab.parse_transformed(&out),
            Parsed::Rejected(crate::text::Rejection::MissingLabel)
        ));
    }

    #[test]
    fn decode_respects_bounds_and_no_repeat() {
        let mut m = model();
        let bias = m.projection.bias;
        let b = m.params.get_mut(bias).data_mut();
        b[EOS] = -100.0;
        let opts = DecodeOptions {
            max_length: 7,
            no_repeat_window: 1,
        };
        let out = m.decode(&[0.3; 5], &opts).unwrap();
        assert!(out.len() <= 7);
        assert!(out.windows(2).all(|w| w[0] != w[1]), "{out:?}");
        assert!(m.decode(&[0.0; 4], &opts).is_err());
        let bad = DecodeOptions {
            max_length: 1,
            no_repeat_window: 0,
        };
        assert!(m.decode(&[0.0; 5], &bad).is_err());
    }

    #[test]
    fn initial_loss_is_near_log_vocab() {
        let m = model();
        let loss = m.mean_token_loss(&corpus()).unwrap();
        let ln_v = (m.vocab.len() as f64).ln();
        assert!((loss - ln_v).abs() < 0.1 * ln_v, "{loss} vs {ln_v}");
    }

    #[test]
    fn transform_checks_mechanism_shape() {
        let m = model();
        let u = &corpus()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let wrong_c = PrivacySpec::laplace_variance(0.1, 2.0, 5).unwrap();
        assert!(matches!(
            m.transform(u, &wrong_c, &DecodeOptions::default(), &mut rng),
            Err(Error::Config(_))
        ));
        let wrong_d = PrivacySpec::laplace_variance(0.1, 1.0, 6).unwrap();
        assert!(matches!(
            m.transform(u, &wrong_d, &DecodeOptions::default(), &mut rng),
            Err(Error::Config(_))
        ));
        let ok = PrivacySpec::laplace_variance(0.5, 1.0, 5).unwrap();
        let trace = m
            .transform_traced(u, &ok, &DecodeOptions::default(), &mut rng)
            .unwrap();
        assert!(trace.clipped_norm <= 1.0 + dp::NORM_SLACK);
    }

    #[test]
    fn token_match_counts_positions() {
        let a: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let b: Vec<String> = ["a", "x", "c", "d"].iter().map(|s| s.to_string()).collect();
        assert_eq!(token_match(&a, &b), (2, 4));
    }
}
