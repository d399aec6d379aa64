use dptext_core::classifier::{train_ic, ClassifierArch, ClassifierConfig};
use dptext_core::mia::{
    attack_target, extract_all, roc_auc, train_attack, train_shadow, write_attack_csv, AttackConfig,
    AttackFeatureVector,
};
use dptext_core::text::split_dataset;
use dptext_core::toy::intent_corpus;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exact AUC by counting concordant (member, non-member) pairs, ties as ½.
fn auc_by_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if si > sj {
                    wins += 1.0;
                } else if si == sj {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

#[test]
fn auc_matches_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let n = rng.random_range(2..30);
        // Coarse scores so ties are common.
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 / 5.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let got = roc_auc(&scores, &labels).unwrap();
        assert!((got - auc_by_pairs(&scores, &labels)).abs() < 1e-12);
    }
}

#[test]
fn auc_examples() {
    let labels = [true, true, false, false];
    assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 1.0);
    assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 0.0);
    assert_eq!(roc_auc(&[0.5; 4], &labels).unwrap(), 0.5);
    assert!(roc_auc(&[0.5, 0.4], &[true, true]).is_err());
}

/// One-feature logistic regression by Newton's method.
fn newton_1d(xs: &[(f64, f64)]) -> (f64, f64) {
    let (mut w, mut b) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (mut gw, mut gb, mut hww, mut hwb, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(x, y) in xs {
            let p = 1.0 / (1.0 + (-(w * x + b)).exp());
            gw += (p - y) * x;
            gb += p - y;
            let s = p * (1.0 - p);
            hww += s * x * x;
            hwb += s * x;
            hbb += s;
        }
        let det = hww * hbb - hwb * hwb;
        let dw = (hbb * gw - hwb * gb) / det;
        let db = (hww * gb - hwb * gw) / det;
        w -= dw;
        b -= db;
        if dw.abs().max(db.abs()) < 1e-14 {
            break;
        }
    }
    (w, b)
}

#[test]
fn attack_model_matches_newton_boundary() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // Overlapping classes, so the maximum-likelihood solution is finite.
    let members: Vec<AttackFeatureVector> =
        (0..200).map(|_| [rng.random_range(0.3..1.0), 0.0, 0.0, 0.0, 0.0]).collect();
    let nonmembers: Vec<AttackFeatureVector> =
        (0..200).map(|_| [rng.random_range(0.0..0.7), 0.0, 0.0, 0.0, 0.0]).collect();
    let data: Vec<(f64, f64)> = members
        .iter()
        .map(|x| (x[0], 1.0))
        .chain(nonmembers.iter().map(|x| (x[0], 0.0)))
        .collect();
    let (w, b) = newton_1d(&data);
    let m = train_attack(&members, &nonmembers, 3, &AttackConfig::default()).unwrap();
    let boundary = -m.bias / m.weights[0];
    assert!((boundary - (-b / w)).abs() < 1e-3, "boundary {boundary} vs {}", -b / w);
    assert!((m.weights[0] - w).abs() < 1e-2 * w.abs());
}

fn small_ic(epochs: usize) -> ClassifierConfig {
    let mut cfg = ClassifierConfig::default();
    cfg.arch = ClassifierArch {
        word_dim: 32,
        char_dim: 8,
        char_hidden: 8,
        hidden: 32,
    };
    cfg.train.epochs = epochs;
    cfg.train.learning_rate = 0.01;
    cfg.train.batch_size = 8;
    cfg
}

#[test]
fn membership_signal_and_null_case() {
    let cfg = small_ic(60);
    let data = intent_corpus(25, 4, 100);
    let split = split_dataset(&data, 0).unwrap();
    let (target, log) = train_ic(&split.train, &cfg, 0).unwrap();
    assert_eq!(log.train_accuracy, 1.0);

    let shadow = train_shadow(&intent_corpus(25, 4, 900), &cfg, 5).unwrap();
    let attack = train_attack(
        &extract_all(&shadow.model, &shadow.members).unwrap(),
        &extract_all(&shadow.model, &shadow.nonmembers).unwrap(),
        1,
        &AttackConfig::default(),
    )
    .unwrap();

    let overfit = attack_target(&target, &attack, &split.train, &split.eval).unwrap();
    assert!(overfit.auc > 0.6, "overfit target AUC {}", overfit.auc);

    // Neither set was seen by the target: membership carries no signal.
    let a = intent_corpus(100, 4, 5000);
    let b = intent_corpus(100, 4, 7000);
    let null = attack_target(&target, &attack, &a, &b).unwrap();
    assert!((null.auc - 0.5).abs() <= 0.05, "null AUC {}", null.auc);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("attack.csv");
    write_attack_csv(&path, &overfit).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "record_id,membership_truth,attack_score");
    assert_eq!(lines.len(), overfit.records.len() + 2);
    assert_eq!(lines.last().unwrap(), &format!("auc,,{}", overfit.auc));
}

#[test]
fn unbalanced_attack_sets_are_rejected() {
    let cfg = small_ic(1);
    let data = intent_corpus(5, 2, 1);
    let (target, _) = train_ic(&data, &cfg, 0).unwrap();
    let attack = train_attack(&[[0.9, 0.1, 0.0, 0.0, 0.0]], &[[0.6, 0.4, 0.0, 0.0, 0.0]], 0, &AttackConfig::default()).unwrap();
    assert!(attack_target(&target, &attack, &data[..8], &data[8..9]).is_err());
}
