//! Dataset ingestion, vocabulary construction, label-prefixed encoding and
//! deterministic 50:50 splitting.
//!
//! Intent labels travel inside the token stream as a single atomic token made
//! of [`LABEL_MARK`] followed by the label name, e.g. `@BuyTicketIntent`.
//! Word tokens are lowercased and whitespace-split and can never start with
//! the mark, so label tokens and word tokens never collide.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LABEL_MARK: char = '@';

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// An intent label plus its word tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledUtterance {
    pub label: String,
    pub tokens: Vec<String>,
}

impl LabeledUtterance {
    pub fn new(label: impl Into<String>, tokens: Vec<String>) -> Result<Self> {
        let label = label.into();
        if label.is_empty() || label.chars().any(char::is_whitespace) || label.starts_with(LABEL_MARK) {
            return Err(Error::Contract(format!("invalid intent label `{label}`")));
        }
        if tokens.is_empty() {
            return Err(Error::Contract("utterance has no tokens".into()));
        }
        for t in &tokens {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Contract(format!("invalid token `{t}`")));
            }
            if t.starts_with(LABEL_MARK) {
                return Err(Error::Contract(format!(
                    "token `{t}` starts with the reserved label mark `{LABEL_MARK}`"
                )));
            }
        }
        Ok(Self { label, tokens })
    }

    /// Lowercase and whitespace-split `text`.
    pub fn from_text(label: impl Into<String>, text: &str) -> Result<Self> {
        Self::new(label, tokenize(text))
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn label_token(&self) -> String {
        label_token(&self.label)
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

pub fn label_token(label: &str) -> String {
    format!("{LABEL_MARK}{label}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Tsv,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(DataFormat::Jsonl),
            "tsv" => Ok(DataFormat::Tsv),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

/// Read a dataset file in JSONL (`{"text": .., "label": ..}` per line) or
/// two-column TSV (`text<TAB>label`, no header). Blank lines are skipped.
pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<Vec<LabeledUtterance>> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let data = parse_dataset(&raw, format)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    Ok(data)
}

pub fn parse_dataset(raw: &str, format: DataFormat) -> Result<Vec<LabeledUtterance>> {
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let (text, label) = match format {
            DataFormat::Jsonl => {
                let v: serde_json::Value =
                    serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
                let field = |name: &str| {
                    v.get(name)
                        .and_then(|f| f.as_str())
                        .map(str::to_string)
                        .ok_or_else(|| parse_err(format!("missing string field `{name}`")))
                };
                (field("text")?, field("label")?)
            }
            DataFormat::Tsv => {
                let mut cols = line.split('\t');
                let text = cols.next().unwrap_or_default().to_string();
                let label = cols
                    .next()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .ok_or_else(|| parse_err("missing label column".into()))?
                    .to_string();
                if cols.next().is_some() {
                    return Err(parse_err("expected exactly two tab-separated columns".into()));
                }
                (text, label)
            }
        };
        let u = LabeledUtterance::from_text(label, &text).map_err(|e| parse_err(e.to_string()))?;
        out.push(u);
    }
    Ok(out)
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    text: String,
    label: &'a str,
}

pub fn write_jsonl(path: impl AsRef<Path>, data: &[LabeledUtterance]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for u in data {
        let rec = JsonRecord {
            text: u.text(),
            label: &u.label,
        };
        serde_json::to_writer(&mut buf, &rec).expect("serializing a string record");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledUtterance>,
    pub eval: Vec<LabeledUtterance>,
    pub seed: u64,
}

/// Seeded shuffle, then the first `ceil(n / 2)` records go to train and the
/// rest to eval (train takes the extra record for odd sizes).
pub fn split_dataset(data: &[LabeledUtterance], seed: u64) -> Result<DatasetSplit> {
    if data.len() < 2 {
        return Err(Error::Contract(format!(
            "need at least 2 records to split, got {}",
            data.len()
        )));
    }
    let order = shuffled_indices(data.len(), seed);
    let n_train = data.len().div_ceil(2);
    Ok(DatasetSplit {
        train: order[..n_train].iter().map(|&i| data[i].clone()).collect(),
        eval: order[n_train..].iter().map(|&i| data[i].clone()).collect(),
        seed,
    })
}

pub(crate) fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Token ↔ id map. Ids `0..4` are the reserved tokens, then label tokens,
/// then word tokens. Within each group tokens are ordered by descending
/// frequency, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    n_labels: usize,
}

impl Vocabulary {
    pub fn build(train: &[LabeledUtterance], min_count: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset("vocabulary corpus".into()));
        }
        let mut words: BTreeMap<&str, usize> = BTreeMap::new();
        let mut labels: BTreeMap<String, usize> = BTreeMap::new();
        for u in train {
            *labels.entry(u.label_token()).or_default() += 1;
            for t in &u.tokens {
                *words.entry(t.as_str()).or_default() += 1;
            }
        }
        let ordered = |counts: Vec<(String, usize)>| -> Vec<String> {
            let mut counts = counts;
            counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            counts.into_iter().map(|(t, _)| t).collect()
        };
        let label_tokens = ordered(labels.into_iter().collect());
        let word_tokens = ordered(
            words
                .into_iter()
                .filter(|&(_, c)| c >= min_count.max(1))
                .map(|(t, c)| (t.to_string(), c))
                .collect(),
        );
        let n_labels = label_tokens.len();
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(label_tokens)
            .chain(word_tokens)
            .collect();
        Self::from_parts(tokens, n_labels)
    }

    /// Rebuild from an id-ordered token list (checkpoint loading).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let n_labels = tokens
            .iter()
            .skip(RESERVED.len())
            .take_while(|t| t.starts_with(LABEL_MARK))
            .count();
        Self::from_parts(tokens, n_labels)
    }

    fn from_parts(tokens: Vec<String>, n_labels: usize) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Checkpoint("vocabulary must start with the reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Checkpoint(format!("duplicate vocabulary token `{t}`")));
            }
            let is_label_slot = i >= RESERVED.len() && i < RESERVED.len() + n_labels;
            if i >= RESERVED.len() && is_label_slot != t.starts_with(LABEL_MARK) {
                return Err(Error::Checkpoint(format!("label token `{t}` out of place")));
            }
        }
        Ok(Self {
            tokens,
            index,
            n_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Id of a word token, `UNK` when out of vocabulary.
    pub fn word_id(&self, word: &str) -> usize {
        if word.starts_with(LABEL_MARK) {
            return UNK;
        }
        self.id(word).unwrap_or(UNK)
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.id(&label_token(label))
    }

    pub fn is_label_id(&self, id: usize) -> bool {
        (RESERVED.len()..RESERVED.len() + self.n_labels).contains(&id)
    }

    /// Label name (without the mark) for a label-token id.
    pub fn label_of(&self, id: usize) -> Option<&str> {
        if self.is_label_id(id) {
            Some(&self.tokens[id][LABEL_MARK.len_utf8()..])
        } else {
            None
        }
    }

    pub fn labels(&self) -> Vec<&str> {
        (RESERVED.len()..RESERVED.len() + self.n_labels)
            .map(|i| &self.tokens[i][LABEL_MARK.len_utf8()..])
            .collect()
    }

    pub fn num_labels(&self) -> usize {
        self.n_labels
    }

    /// `[BOS, @label, words.., EOS]` with `UNK` for out-of-vocabulary words.
    pub fn encode_for_autoencoder(&self, u: &LabeledUtterance) -> Result<Vec<usize>> {
        let label = self
            .label_id(&u.label)
            .ok_or_else(|| Error::UnknownLabel(u.label.clone()))?;
        let mut ids = Vec::with_capacity(u.tokens.len() + 3);
        ids.push(BOS);
        ids.push(label);
        ids.extend(u.tokens.iter().map(|t| self.word_id(t)));
        ids.push(EOS);
        Ok(ids)
    }

    /// Interpret a generated id sequence as a labeled utterance.
    ///
    /// Leading `BOS` is stripped and reading stops at the first `EOS`.
    pub fn parse_transformed(&self, ids: &[usize]) -> Parsed {
        let body = ids.strip_prefix(&[BOS]).unwrap_or(ids);
        let body = match body.iter().position(|&i| i == EOS) {
            Some(end) => &body[..end],
            None => body,
        };
        let Some((&first, rest)) = body.split_first() else {
            return Parsed::Rejected(Rejection::MissingLabel);
        };
        let Some(label) = self.label_of(first) else {
            return Parsed::Rejected(Rejection::MissingLabel);
        };
        let tokens: Vec<String> = rest
            .iter()
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_string())
            .collect();
        if tokens.is_empty() {
            return Parsed::Rejected(Rejection::EmptyUtterance);
        }
        if tokens.iter().any(|t| t.starts_with(LABEL_MARK)) {
            return Parsed::Rejected(Rejection::StrayLabel);
        }
        Parsed::Utterance(LabeledUtterance {
            label: label.to_string(),
            tokens,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rejection {
    MissingLabel,
    EmptyUtterance,
    /// A second label token appeared inside the utterance body.
    StrayLabel,
}

impl Rejection {
    pub fn as_str(self) -> &'static str {
        match self {
            Rejection::MissingLabel => "missing-label",
            Rejection::EmptyUtterance => "empty-utterance",
            Rejection::StrayLabel => "stray-label",
        }
    }
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Utterance(LabeledUtterance),
    Rejected(Rejection),
}

impl Parsed {
    pub fn ok(self) -> Option<LabeledUtterance> {
        match self {
            Parsed::Utterance(u) => Some(u),
            Parsed::Rejected(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utt(label: &str, text: &str) -> LabeledUtterance {
        LabeledUtterance::from_text(label, text).unwrap()
    }

    #[test]
    fn jsonl_record_tokenizes_lowercase() {
        let data = parse_dataset(
            r#"{"text":"buy me a ticket to Seattle","label":"BuyTicketIntent"}"#,
            DataFormat::Jsonl,
        )
        .unwrap();
        assert_eq!(data[0].label, "BuyTicketIntent");
        assert_eq!(data[0].tokens, ["buy", "me", "a", "ticket", "to", "seattle"]);
    }

    #[test]
    fn tsv_record() {
        let data = parse_dataset("show flights\tAtisFlight\n", DataFormat::Tsv).unwrap();
        assert_eq!(data, vec![utt("AtisFlight", "show flights")]);
    }

    #[test]
    fn tsv_missing_label_names_the_line() {
        let err = parse_dataset("show flights\tAtisFlight\nlist fares\n", DataFormat::Tsv).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn jsonl_missing_field_names_the_line() {
        let err = parse_dataset(
            "{\"text\":\"a\",\"label\":\"X\"}\n\n{\"text\":\"b\"}",
            DataFormat::Jsonl,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn empty_file_is_an_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        fs::write(&p, "\n\n").unwrap();
        assert!(matches!(
            load_dataset(&p, DataFormat::Jsonl),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let data: Vec<_> = (0..11).map(|i| utt("A", &format!("w{i}"))).collect();
        let s = split_dataset(&data, 7).unwrap();
        assert_eq!((s.train.len(), s.eval.len()), (6, 5));
        assert_eq!(s, split_dataset(&data, 7).unwrap());
        assert!(split_dataset(&data[..1], 7).is_err());
    }

    #[test]
    fn vocabulary_of_one_utterance() {
        let v = Vocabulary::build(&[utt("BuyTicketIntent", "buy me a ticket to seattle")], 1).unwrap();
        assert_eq!(v.len(), 4 + 1 + 6);
        assert_eq!(v.labels(), ["BuyTicketIntent"]);
    }

    #[test]
    fn rare_words_map_to_unk() {
        let corpus = [utt("A", "hello hello world"), utt("B", "hello there")];
        let v = Vocabulary::build(&corpus, 2).unwrap();
        assert_eq!(v.word_id("world"), UNK);
        assert_ne!(v.word_id("hello"), UNK);
        assert_eq!(v.num_labels(), 2);
        assert_eq!(v.tokens().iter().filter(|t| t.starts_with('@')).count(), 2);
    }

    #[test]
    fn encode_and_parse() {
        let u = utt("BuyTicketIntent", "buy me a ticket to Seattle");
        let v = Vocabulary::build(std::slice::from_ref(&u), 1).unwrap();
        let ids = v.encode_for_autoencoder(&u).unwrap();
        assert_eq!(ids.len(), 9);
        assert_eq!(ids[0], BOS);
        assert_eq!(v.token(ids[1]), Some("@BuyTicketIntent"));
        assert_eq!(*ids.last().unwrap(), EOS);
        assert_eq!(v.parse_transformed(&ids), Parsed::Utterance(u.clone()));

        let oov = utt("BuyTicketIntent", "buy me a zeppelin");
        assert_eq!(v.encode_for_autoencoder(&oov).unwrap()[5], UNK);

        let unknown = utt("Other", "buy");
        assert!(matches!(v.encode_for_autoencoder(&unknown), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn parse_rejections() {
        let v = Vocabulary::build(&[utt("AtisFlight", "show flights")], 1).unwrap();
        let show = v.id("show").unwrap();
        let flights = v.id("flights").unwrap();
        let label = v.label_id("AtisFlight").unwrap();
        assert_eq!(
            v.parse_transformed(&[BOS, label, show, flights, EOS]),
            Parsed::Utterance(utt("AtisFlight", "show flights"))
        );
        assert_eq!(
            v.parse_transformed(&[BOS, show, flights, EOS]),
            Parsed::Rejected(Rejection::MissingLabel)
        );
        assert_eq!(
            v.parse_transformed(&[BOS, label, EOS]),
            Parsed::Rejected(Rejection::EmptyUtterance)
        );
        assert_eq!(
            v.parse_transformed(&[BOS, label, show, label, EOS]),
            Parsed::Rejected(Rejection::StrayLabel)
        );
    }

    #[test]
    fn marked_tokens_are_rejected_at_construction() {
        assert!(LabeledUtterance::from_text("A", "hi @there").is_err());
        assert!(LabeledUtterance::from_text("", "hi").is_err());
        assert!(LabeledUtterance::from_text("A", "   ").is_err());
    }

    #[test]
    fn from_tokens_round_trip() {
        let v = Vocabulary::build(&[utt("A", "x y"), utt("B", "y z")], 1).unwrap();
        assert_eq!(Vocabulary::from_tokens(v.tokens().to_vec()).unwrap(), v);
    }
}
