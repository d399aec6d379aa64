//! Shadow-model membership inference.
//!
//! A shadow classifier is trained on half of the attacker's data pool; its
//! top-5 confidence vectors on its own training half (members) and on the
//! held-out half (non-members) train a logistic-regression attack model. The
//! attack model then scores the target classifier's confidence vectors and the
//! attack success is summarized by ROC AUC.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{train_ic, ClassifierConfig, ClassifierLog, IntentClassifierModel};
use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::text::{shuffled_indices, LabeledUtterance};

pub const FEATURES: usize = 5;

/// Top-5 intent probabilities, descending, zero-padded.
pub type AttackFeatureVector = [f64; FEATURES];

pub fn extract_features(model: &IntentClassifierModel, tokens: &[String]) -> Result<AttackFeatureVector> {
    let p = model.predict_topk(tokens, FEATURES)?;
    let mut out = [0.0; FEATURES];
    for (slot, (_, prob)) in out.iter_mut().zip(&p.ranked) {
        *slot = *prob;
    }
    Ok(out)
}

pub fn extract_all(model: &IntentClassifierModel, data: &[LabeledUtterance]) -> Result<Vec<AttackFeatureVector>> {
    data.par_iter().map(|u| extract_features(model, &u.tokens)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub max_iterations: usize,
    /// Stop once the gradient norm of the mean log-loss drops below this.
    pub tolerance: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            tolerance: 1e-6,
        }
    }
}

/// Binary logistic regression over attack features; members are class 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackModel {
    pub weights: [f64; FEATURES],
    pub bias: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub seed: u64,
}

impl AttackModel {
    fn logit(&self, x: &AttackFeatureVector) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// Membership probability.
    pub fn score(&self, x: &AttackFeatureVector) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn predict(&self, x: &AttackFeatureVector) -> bool {
        self.logit(x) > 0.0
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean log-loss and its gradient `(d/dw, d/db)`.
fn loss_and_gradient(
    w: &[f64; FEATURES],
    b: f64,
    xs: &[(AttackFeatureVector, f64)],
) -> (f64, [f64; FEATURES], f64) {
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut gw = [0.0; FEATURES];
    let mut gb = 0.0;
    for (x, y) in xs {
        let z = b + w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
        // -[y ln σ(z) + (1-y) ln(1-σ(z))] = softplus(z) - y z
        loss += softplus(z) - y * z;
        let r = sigmoid(z) - y;
        for (g, v) in gw.iter_mut().zip(x) {
            *g += r * v;
        }
        gb += r;
    }
    gw.iter_mut().for_each(|g| *g /= n);
    (loss / n, gw, gb / n)
}

/// Fit the attack model by gradient descent with backtracking line search.
pub fn train_attack(
    members: &[AttackFeatureVector],
    nonmembers: &[AttackFeatureVector],
    seed: u64,
    config: &AttackConfig,
) -> Result<AttackModel> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::Contract("attack training needs members and non-members".into()));
    }
    let xs: Vec<(AttackFeatureVector, f64)> = members
        .iter()
        .map(|x| (*x, 1.0))
        .chain(nonmembers.iter().map(|x| (*x, 0.0)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = [0.0; FEATURES];
    for v in &mut w {
        *v = rng.random_range(-0.01..0.01);
    }
    let mut b = 0.0;
    let (mut loss, mut gw, mut gb) = loss_and_gradient(&w, b, &xs);
    let mut step = 1.0;
    let mut iterations = 0;
    let grad_norm = |gw: &[f64; FEATURES], gb: f64| (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
    let mut norm = grad_norm(&gw, gb);
    while iterations < config.max_iterations && norm >= config.tolerance {
        iterations += 1;
        // Armijo backtracking; grow the step again after each accepted move.
        step *= 2.0;
        loop {
            let mut nw = w;
            for (a, g) in nw.iter_mut().zip(&gw) {
                *a -= step * g;
            }
            let nb = b - step * gb;
            let (nl, ngw, ngb) = loss_and_gradient(&nw, nb, &xs);
            if nl <= loss - 0.5 * step * norm * norm || step < 1e-12 {
                w = nw;
                b = nb;
                loss = nl;
                gw = ngw;
                gb = ngb;
                break;
            }
            step *= 0.5;
        }
        norm = grad_norm(&gw, gb);
        if !loss.is_finite() {
            return Err(Error::Pipeline("attack training diverged".into()));
        }
    }
    Ok(AttackModel {
        weights: w,
        bias: b,
        iterations,
        gradient_norm: norm,
        seed,
    })
}

/// Mean log-loss of `model` on labeled attack data.
pub fn attack_loss(model: &AttackModel, members: &[AttackFeatureVector], nonmembers: &[AttackFeatureVector]) -> f64 {
    let xs: Vec<(AttackFeatureVector, f64)> = members
        .iter()
        .map(|x| (*x, 1.0))
        .chain(nonmembers.iter().map(|x| (*x, 0.0)))
        .collect();
    loss_and_gradient(&model.weights, model.bias, &xs).0
}

/// Area under the ROC curve: `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`, by average ranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Contract("ROC AUC needs both classes present".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("ROC AUC scores must not be NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (1-based, tie-averaged) ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg_rank;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone)]
pub struct ShadowRun {
    pub model: IntentClassifierModel,
    pub log: ClassifierLog,
    pub members: Vec<LabeledUtterance>,
    pub nonmembers: Vec<LabeledUtterance>,
}

/// Split `pool` 50:50 by `seed` and train a shadow classifier on the first half.
pub fn train_shadow(pool: &[LabeledUtterance], config: &ClassifierConfig, seed: u64) -> Result<ShadowRun> {
    if pool.len() < 4 {
        return Err(Error::Contract(format!(
            "shadow training needs at least 4 records, got {}",
            pool.len()
        )));
    }
    let order = shuffled_indices(pool.len(), seed);
    let half = pool.len().div_ceil(2);
    let members: Vec<_> = order[..half].iter().map(|&i| pool[i].clone()).collect();
    let nonmembers: Vec<_> = order[half..].iter().map(|&i| pool[i].clone()).collect();
    let (model, log) = train_ic(&members, config, seed.wrapping_add(17))?;
    Ok(ShadowRun {
        model,
        log,
        members,
        nonmembers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackRecord {
    pub record_id: usize,
    pub member: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub auc: f64,
    pub records: Vec<AttackRecord>,
}

/// Score the target's confidence vectors on known members and non-members.
pub fn attack_target(
    target: &IntentClassifierModel,
    attack: &AttackModel,
    members: &[LabeledUtterance],
    nonmembers: &[LabeledUtterance],
) -> Result<AttackResult> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::Contract("attack needs members and non-members".into()));
    }
    let ratio = members.len() as f64 / nonmembers.len() as f64;
    if !(1.0 / 1.1..=1.1).contains(&ratio) {
        return Err(Error::Contract(format!(
            "member/non-member counts must be balanced within 10%, got {} and {}",
            members.len(),
            nonmembers.len()
        )));
    }
    let m = extract_all(target, members)?;
    let n = extract_all(target, nonmembers)?;
    let records: Vec<AttackRecord> = m
        .iter()
        .map(|x| (true, x))
        .chain(n.iter().map(|x| (false, x)))
        .enumerate()
        .map(|(record_id, (member, x))| AttackRecord {
            record_id,
            member,
            score: attack.score(x),
        })
        .collect();
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let labels: Vec<bool> = records.iter().map(|r| r.member).collect();
    Ok(AttackResult {
        auc: roc_auc(&scores, &labels)?,
        records,
    })
}

/// Per-record CSV (`record_id,membership_truth,attack_score`) followed by a
/// summary row whose `record_id` is `auc` and whose score column holds the AUC.
pub fn write_attack_csv(path: impl AsRef<Path>, result: &AttackResult) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("record_id,membership_truth,attack_score\n");
    for r in &result.records {
        out.push_str(&format!("{},{},{}\n", r.record_id, u8::from(r.member), r.score));
    }
    out.push_str(&format!("auc,,{}\n", result.auc));
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
