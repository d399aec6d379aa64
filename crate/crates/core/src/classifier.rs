//! Intent classifier: word + character embeddings, one bi-directional LSTM
//! layer, max-pool over time, and a fully connected output layer.

use std::collections::{BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax, Embedding, Graph, Linear, LstmParams, ParamSet, Var};
use crate::text::{LabeledUtterance, Vocabulary};
use crate::training::{fit, ExampleLoss, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierArch {
    pub word_dim: usize,
    pub char_dim: usize,
    /// Size of the per-word character feature (char-LSTM final state).
    pub char_hidden: usize,
    /// Hidden size of each direction of the bi-LSTM.
    pub hidden: usize,
}

impl Default for ClassifierArch {
    fn default() -> Self {
        Self {
            word_dim: 64,
            char_dim: 16,
            char_hidden: 16,
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    #[serde(flatten)]
    pub arch: ClassifierArch,
    #[serde(flatten)]
    pub train: TrainOptions,
    pub min_count: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            arch: ClassifierArch::default(),
            train: TrainOptions::default(),
            min_count: 1,
        }
    }
}

const CHAR_PAD: usize = 0;
const CHAR_UNK: usize = 1;

/// Character inventory; ids 0 and 1 are padding and unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<char> = words.into_iter().flat_map(str::chars).collect();
        Self::from_chars(set.into_iter().collect())
    }

    /// Non-reserved characters in id order (starting at id 2).
    pub fn from_chars(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        Self { chars, index }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encode(&self, word: &str) -> Vec<usize> {
        let ids: Vec<usize> = word
            .chars()
            .map(|c| self.index.get(&c).copied().unwrap_or(CHAR_UNK))
            .collect();
        if ids.is_empty() {
            vec![CHAR_PAD]
        } else {
            ids
        }
    }
}

/// Labels ranked by probability, highest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub ranked: Vec<(String, f64)>,
}

impl Prediction {
    /// Softmax over `logits`, keep the top `k`. Ties go to the lower label index.
    pub fn from_logits(logits: &[f64], labels: &[String], k: usize) -> Self {
        let probs = softmax(logits);
        let order = rank_indices(&probs);
        Self {
            ranked: order
                .into_iter()
                .take(k)
                .map(|i| (labels[i].clone(), probs[i]))
                .collect(),
        }
    }

    pub fn top(&self) -> Option<&str> {
        self.ranked.first().map(|(l, _)| l.as_str())
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.ranked.iter().map(|(_, p)| *p).collect()
    }
}

/// Indices sorted by descending value, ascending index on ties.
pub fn rank_indices(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone)]
pub struct IntentClassifierModel {
    arch: ClassifierArch,
    words: Vocabulary,
    chars: CharVocab,
    labels: Vec<String>,
    params: ParamSet,
    word_emb: Embedding,
    char_emb: Embedding,
    char_lstm: LstmParams,
    forward_lstm: LstmParams,
    backward_lstm: LstmParams,
    output: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierLog {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

impl IntentClassifierModel {
    pub fn new(
        arch: ClassifierArch,
        words: Vocabulary,
        chars: CharVocab,
        labels: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Contract(format!(
                "intent classification needs at least 2 labels, got {}",
                labels.len()
            )));
        }
        if [arch.word_dim, arch.char_dim, arch.char_hidden, arch.hidden].contains(&0) {
            return Err(Error::Config("classifier dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let word_emb = Embedding::register(&mut params, "word_embedding", words.len(), arch.word_dim, &mut rng);
        let char_emb = Embedding::register(&mut params, "char_embedding", chars.len(), arch.char_dim, &mut rng);
        let char_lstm = LstmParams::register(&mut params, "char_lstm", arch.char_dim, arch.char_hidden, &mut rng);
        let feat = arch.word_dim + arch.char_hidden;
        let forward_lstm = LstmParams::register(&mut params, "bilstm.forward", feat, arch.hidden, &mut rng);
        let backward_lstm = LstmParams::register(&mut params, "bilstm.backward", feat, arch.hidden, &mut rng);
        let output = Linear::register(&mut params, "output", 2 * arch.hidden, labels.len(), &mut rng);
        Ok(Self {
            arch,
            words,
            chars,
            labels,
            params,
            word_emb,
            char_emb,
            char_lstm,
            forward_lstm,
            backward_lstm,
            output,
        })
    }

    pub fn arch(&self) -> &ClassifierArch {
        &self.arch
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn word_vocab(&self) -> &Vocabulary {
        &self.words
    }

    pub fn char_vocab(&self) -> &CharVocab {
        &self.chars
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Intent logits for `tokens`.
    pub fn logits_graph(&self, g: &mut Graph<'_>, tokens: &[String]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::Contract("cannot classify an empty utterance".into()));
        }
        let word_ids: Vec<usize> = tokens.iter().map(|t| self.words.word_id(t)).collect();
        let wemb = self.word_emb.lookup(g, &word_ids)?;
        let mut feats = Vec::with_capacity(tokens.len());
        for (t, tok) in tokens.iter().enumerate() {
            let cids = self.chars.encode(tok);
            let cemb = self.char_emb.lookup(g, &cids)?;
            let xs = (0..cids.len()).map(|i| g.row(cemb, i)).collect::<Result<Vec<_>>>()?;
            let (h0, c0) = self.char_lstm.zero_state(g);
            let (hs, _) = self.char_lstm.run(g, &xs, h0, c0)?;
            let w = g.row(wemb, t)?;
            feats.push(g.concat(&[w, *hs.last().expect("non-empty word")])?);
        }
        let (h0, c0) = self.forward_lstm.zero_state(g);
        let (fwd, _) = self.forward_lstm.run(g, &feats, h0, c0)?;
        let reversed: Vec<Var> = feats.iter().rev().copied().collect();
        let (h0, c0) = self.backward_lstm.zero_state(g);
        let (mut bwd, _) = self.backward_lstm.run(g, &reversed, h0, c0)?;
        bwd.reverse();
        let states = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| g.concat(&[f, b]))
            .collect::<Result<Vec<_>>>()?;
        let pooled = g.max_over(&states)?;
        self.output.forward(g, pooled)
    }

    /// Cross-entropy of one labeled utterance.
    pub fn example_loss(&self, g: &mut Graph<'_>, u: &LabeledUtterance) -> Result<Var> {
        let target = self
            .label_index(&u.label)
            .ok_or_else(|| Error::UnknownLabel(u.label.clone()))?;
        let logits = self.logits_graph(g, &u.tokens)?;
        g.softmax_cross_entropy(logits, target)
    }

    pub fn logits(&self, tokens: &[String]) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let l = self.logits_graph(&mut g, tokens)?;
        Ok(g.value(l).data().to_vec())
    }

    /// Top-`k` intents with their probabilities (`min(k, K)` entries).
    pub fn predict_topk(&self, tokens: &[String], k: usize) -> Result<Prediction> {
        Ok(Prediction::from_logits(&self.logits(tokens)?, &self.labels, k))
    }

    /// Fraction of `data` whose top-1 intent equals the gold label.
    pub fn evaluate_accuracy(&self, data: &[LabeledUtterance]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Contract("accuracy over an empty dataset".into()));
        }
        let hits = data
            .par_iter()
            .map(|u| Ok(self.predict_topk(&u.tokens, 1)?.top() == Some(u.label.as_str())))
            .collect::<Result<Vec<bool>>>()?;
        Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len() as f64)
    }

    pub(crate) fn from_parts(
        arch: ClassifierArch,
        words: Vocabulary,
        chars: CharVocab,
        labels: Vec<String>,
        params: ParamSet,
    ) -> Result<Self> {
        let mut model = Self::new(arch, words, chars, labels, 0)?;
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

/// Distinct labels of `data` in lexicographic order.
pub fn label_set(data: &[LabeledUtterance]) -> Vec<String> {
    data.iter()
        .map(|u| u.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

pub fn train_ic(
    train: &[LabeledUtterance],
    config: &ClassifierConfig,
    seed: u64,
) -> Result<(IntentClassifierModel, ClassifierLog)> {
    let labels = label_set(train);
    if labels.len() < 2 {
        return Err(Error::Contract(format!(
            "training data has {} distinct label(s); need at least 2",
            labels.len()
        )));
    }
    let words = Vocabulary::build(train, config.min_count)?;
    let chars = CharVocab::build(train.iter().flat_map(|u| u.tokens.iter().map(String::as_str)));
    let mut model = IntentClassifierModel::new(config.arch, words, chars, labels, seed)?;
    let mut params = model.params.clone();
    let epoch_losses = fit(&mut params, train, &config.train, seed.wrapping_add(1), |g, u| {
        Ok(ExampleLoss {
            loss: model.example_loss(g, u)?,
            targets: 1,
        })
    })?;
    model.params = params;
    let train_accuracy = model.evaluate_accuracy(train)?;
    Ok((
        model,
        ClassifierLog {
            epoch_losses,
            train_accuracy,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vec<LabeledUtterance> {
        [
            ("Greet", "hello there"),
            ("Greet", "hi friend"),
            ("Bye", "goodbye now"),
            ("Bye", "see you"),
            ("Ask", "what time"),
        ]
        .iter()
        .map(|(l, t)| LabeledUtterance::from_text(*l, t).unwrap())
        .collect()
    }

    fn tiny_config() -> ClassifierConfig {
        ClassifierConfig {
            arch: ClassifierArch {
                word_dim: 4,
                char_dim: 3,
                char_hidden: 3,
                hidden: 4,
            },
            train: TrainOptions {
                epochs: 1,
                ..TrainOptions::default()
            },
            min_count: 1,
        }
    }

    #[test]
    fn single_label_is_rejected() {
        let data = vec![LabeledUtterance::from_text("A", "x").unwrap(); 3];
        assert!(matches!(train_ic(&data, &tiny_config(), 0), Err(Error::Contract(_))));
    }

    #[test]
    fn topk_truncates_and_normalizes() {
        let (m, _) = train_ic(&toy(), &tiny_config(), 1).unwrap();
        let p = m.predict_topk(&toy()[0].tokens, 5).unwrap();
        assert_eq!(p.ranked.len(), 3);
        let total: f64 = p.probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!(p.probabilities().windows(2).all(|w| w[0] >= w[1]));
        assert!(m.predict_topk(&[], 5).is_err());
    }

    #[test]
    fn ties_prefer_lower_label_index() {
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let p = Prediction::from_logits(&[1.0, 2.0, 2.0], &labels, 3);
        let order: Vec<&str> = p.ranked.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(order, ["b", "c", "a"]);
    }

    #[test]
    fn unknown_characters_and_words_still_classify() {
        let (m, _) = train_ic(&toy(), &tiny_config(), 2).unwrap();
        let tokens = vec!["ünïcödé".to_string(), "zzz".to_string()];
        assert_eq!(m.predict_topk(&tokens, 1).unwrap().ranked.len(), 1);
    }

    #[test]
    fn initial_loss_is_log_k() {
        let data = toy();
        let labels = label_set(&data);
        let words = Vocabulary::build(&data, 1).unwrap();
        let chars = CharVocab::build(data.iter().flat_map(|u| u.tokens.iter().map(String::as_str)));
        let m = IntentClassifierModel::new(ClassifierArch::default(), words, chars, labels, 5).unwrap();
        let mut total = 0.0;
        for u in &data {
            let mut g = Graph::new(m.params());
            let l = m.example_loss(&mut g, u).unwrap();
            total += g.value(l).data()[0];
        }
        let mean = total / data.len() as f64;
        assert!((mean - 3f64.ln()).abs() < 0.15 * 3f64.ln(), "{mean}");
    }
}
