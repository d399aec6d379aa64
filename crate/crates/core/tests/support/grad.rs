//! Finite-difference cases for every differentiable primitive and both full
//! model graphs. Each case returns its worst relative error over
//! [`CONFIGS`] seeded random configurations.

use dptext_core::autoencoder::{AutoencoderArch, AutoencoderModel};
use dptext_core::classifier::{CharVocab, ClassifierArch, IntentClassifierModel};
use dptext_core::nn::gradcheck::check;
use dptext_core::nn::{Graph, LstmParams, ParamId, ParamSet, Tensor, Var};
use dptext_core::text::Vocabulary;
use dptext_core::toy::tiny_corpus;
use dptext_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CONFIGS: u64 = 20;
pub const TOL: f64 = 1e-4;

pub type Case = (&'static str, fn() -> f64);

pub const CASES: &[Case] = &[
    ("matmul", matmul),
    ("matvec", matvec),
    ("add", add),
    ("mul", mul),
    ("mul-self", mul_self),
    ("sigmoid", sigmoid),
    ("tanh", tanh),
    ("scale", scale),
    ("slice+concat", slice_concat),
    ("row", row),
    ("sum", sum),
    ("gather", gather),
    ("softmax-xent", softmax_xent),
    ("add_n", add_n),
    ("max_over", max_over),
    ("clip-to-ball", clip),
    ("lstm-cell", lstm),
    ("autoencoder-graph", autoencoder_graph),
    ("classifier-graph", classifier_graph),
];

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, 1.5, rng)
}

/// Reduce `out` to a scalar with fixed random weights so every output
/// coordinate contributes a distinct upstream gradient.
fn weighted_sum(g: &mut Graph<'_>, out: Var, weights: &Tensor) -> Result<Var> {
    let w = g.input(weights.clone());
    let m = g.mul(out, w)?;
    Ok(g.sum(m))
}

fn grad_error<F>(params: &ParamSet, f: F) -> f64
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let r = check(params, f).unwrap();
    assert!(r.checked > 0, "nothing checked");
    r.max_relative_error
}

fn over_configs(mut body: impl FnMut(u64, &mut ChaCha8Rng) -> f64) -> f64 {
    (0..CONFIGS)
        .map(|cfg| body(cfg, &mut ChaCha8Rng::seed_from_u64(1000 + cfg)))
        .fold(0.0, f64::max)
}

fn matmul() -> f64 {
    over_configs(|_, rng| {
        let (m, k, n) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
        let mut ps = ParamSet::new();
        let a = ps.add("a", rand_tensor(rng, &[m, k]));
        let b = ps.add("b", rand_tensor(rng, &[k, n]));
        let w = rand_tensor(rng, &[m, n]);
        grad_error(&ps, |g| {
            let (a, b) = (g.param(a), g.param(b));
            let y = g.matmul(a, b)?;
            weighted_sum(g, y, &w)
        })
    })
}

fn matvec() -> f64 {
    over_configs(|_, rng| {
        let (m, k) = (rng.random_range(1..5), rng.random_range(1..5));
        let mut ps = ParamSet::new();
        let a = ps.add("w", rand_tensor(rng, &[m, k]));
        let x = ps.add("x", rand_tensor(rng, &[k]));
        let w = rand_tensor(rng, &[m]);
        grad_error(&ps, |g| {
            let (a, x) = (g.param(a), g.param(x));
            let y = g.matvec(a, x)?;
            weighted_sum(g, y, &w)
        })
    })
}

fn binary(op: fn(&mut Graph<'_>, Var, Var) -> Result<Var>) -> f64 {
    over_configs(|_, rng| {
        let n = rng.random_range(1..6);
        let mut ps = ParamSet::new();
        let a = ps.add("a", rand_tensor(rng, &[n]));
        let b = ps.add("b", rand_tensor(rng, &[n]));
        let w = rand_tensor(rng, &[n]);
        grad_error(&ps, |g| {
            let (a, b) = (g.param(a), g.param(b));
            let y = op(g, a, b)?;
            weighted_sum(g, y, &w)
        })
    })
}

fn add() -> f64 {
    binary(|g, a, b| g.add(a, b))
}

fn mul() -> f64 {
    binary(|g, a, b| g.mul(a, b))
}

/// Same node on both sides: gradients must accumulate.
fn mul_self() -> f64 {
    binary(|g, a, _| g.mul(a, a))
}

fn unary(op: fn(&mut Graph<'_>, Var) -> Var) -> f64 {
    over_configs(|_, rng| {
        let n = rng.random_range(1..7);
        let mut ps = ParamSet::new();
        let a = ps.add("a", rand_tensor(rng, &[n]));
        let w = rand_tensor(rng, &[n]);
        grad_error(&ps, |g| {
            let a = g.param(a);
            let y = op(g, a);
            weighted_sum(g, y, &w)
        })
    })
}

fn sigmoid() -> f64 {
    unary(|g, a| g.sigmoid(a))
}

fn tanh() -> f64 {
    unary(|g, a| g.tanh(a))
}

fn scale() -> f64 {
    unary(|g, a| g.scale(a, -2.5))
}

fn slice_concat() -> f64 {
    over_configs(|_, rng| {
        let n = rng.random_range(2..7);
        let start = rng.random_range(0..n - 1);
        let len = rng.random_range(1..=n - start);
        let mut ps = ParamSet::new();
        let a = ps.add("a", rand_tensor(rng, &[n]));
        let b = ps.add("b", rand_tensor(rng, &[3]));
        let w = rand_tensor(rng, &[len + 3]);
        grad_error(&ps, |g| {
            let (a, b) = (g.param(a), g.param(b));
            let s = g.slice(a, start, len)?;
            let c = g.concat(&[s, b])?;
            weighted_sum(g, c, &w)
        })
    })
}

fn row() -> f64 {
    over_configs(|_, rng| {
        let (r, cols) = (rng.random_range(1..4), rng.random_range(1..4));
        let i = rng.random_range(0..r);
        let mut ps = ParamSet::new();
        let m = ps.add("m", rand_tensor(rng, &[r, cols]));
        let w = rand_tensor(rng, &[cols]);
        grad_error(&ps, |g| {
            let m = g.param(m);
            let y = g.row(m, i)?;
            weighted_sum(g, y, &w)
        })
    })
}

fn sum() -> f64 {
    over_configs(|_, rng| {
        let (r, cols) = (rng.random_range(1..4), rng.random_range(1..4));
        let mut ps = ParamSet::new();
        let m = ps.add("m", rand_tensor(rng, &[r, cols]));
        grad_error(&ps, |g| {
            let m = g.param(m);
            let t = g.tanh(m);
            Ok(g.sum(t))
        })
    })
}

fn gather() -> f64 {
    over_configs(|_, rng| {
        let (v, d) = (rng.random_range(2..6), rng.random_range(1..4));
        // Repeated ids must scatter-add into the same row.
        let ids: Vec<usize> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0..v)).collect();
        let mut ps = ParamSet::new();
        let t = ps.add("table", rand_tensor(rng, &[v, d]));
        let w = rand_tensor(rng, &[ids.len(), d]);
        grad_error(&ps, |g| {
            let t = g.param(t);
            let y = g.gather(t, &ids)?;
            weighted_sum(g, y, &w)
        })
    })
}

fn softmax_xent() -> f64 {
    over_configs(|_, rng| {
        let k = rng.random_range(2..7);
        let target = rng.random_range(0..k);
        let mut ps = ParamSet::new();
        let z = ps.add("z", Tensor::uniform(&[k], 4.0, rng));
        grad_error(&ps, |g| {
            let z = g.param(z);
            g.softmax_cross_entropy(z, target)
        })
    })
}

fn reduce_parts(op: fn(&mut Graph<'_>, &[Var]) -> Result<Var>) -> f64 {
    over_configs(|_, rng| {
        let (n, parts) = (rng.random_range(1..5), rng.random_range(1..5));
        let mut ps = ParamSet::new();
        let ids: Vec<ParamId> = (0..parts).map(|i| ps.add(format!("p{i}"), rand_tensor(rng, &[n]))).collect();
        let w = rand_tensor(rng, &[n]);
        grad_error(&ps, |g| {
            let vs: Vec<Var> = ids.iter().map(|&i| g.param(i)).collect();
            let y = op(g, &vs)?;
            weighted_sum(g, y, &w)
        })
    })
}

fn add_n() -> f64 {
    reduce_parts(|g, vs| g.add_n(vs))
}

fn max_over() -> f64 {
    reduce_parts(|g, vs| g.max_over(vs))
}

/// Alternates between the projecting and the identity branch, staying clear
/// of the kink at ||x|| = C.
fn clip() -> f64 {
    over_configs(|cfg, rng| {
        let n = rng.random_range(1..6);
        let x = rand_tensor(rng, &[n]);
        let norm = x.l2_norm();
        let radius = if cfg % 2 == 0 {
            norm * rng.random_range(0.2..0.8)
        } else {
            norm * rng.random_range(1.25..3.0)
        };
        let mut ps = ParamSet::new();
        let a = ps.add("a", x);
        let w = rand_tensor(rng, &[n]);
        grad_error(&ps, |g| {
            let a = g.param(a);
            let y = g.clip_to_ball(a, radius)?;
            weighted_sum(g, y, &w)
        })
    })
}

fn lstm() -> f64 {
    over_configs(|_, rng| {
        let (input, hidden) = (rng.random_range(1..4), rng.random_range(1..4));
        let mut ps = ParamSet::new();
        let cell = LstmParams::register(&mut ps, "cell", input, hidden, rng);
        // Inflate the init so gates leave their linear regime.
        for id in ps.ids().collect::<Vec<_>>() {
            ps.get_mut(id).data_mut().iter_mut().for_each(|v| *v *= 2.0);
        }
        let x = ps.add("x", rand_tensor(rng, &[input]));
        let h = ps.add("h", rand_tensor(rng, &[hidden]));
        let c = ps.add("c", rand_tensor(rng, &[hidden]));
        let wh = rand_tensor(rng, &[hidden]);
        let wc = rand_tensor(rng, &[hidden]);
        let steps = rng.random_range(1..4);
        grad_error(&ps, |g| {
            let (x, mut h, mut c) = (g.param(x), g.param(h), g.param(c));
            for _ in 0..steps {
                (h, c) = cell.step(g, x, h, c)?;
            }
            let a = weighted_sum(g, h, &wh)?;
            let b = weighted_sum(g, c, &wc)?;
            g.add(a, b)
        })
    })
}

fn autoencoder_graph() -> f64 {
    let corpus = tiny_corpus();
    let vocab = Vocabulary::build(&corpus, 1).unwrap();
    over_configs(|cfg, rng| {
        let arch = AutoencoderArch {
            embedding_dim: rng.random_range(2..4),
            hidden_dim: rng.random_range(2..5),
            // Alternate between a clipped and an unclipped latent.
            clip_radius: if cfg % 2 == 0 { 0.05 } else { 50.0 },
        };
        let model = AutoencoderModel::new(arch, vocab.clone(), cfg).unwrap();
        let u = &corpus[rng.random_range(0..corpus.len())];
        let ids = vocab.encode_for_autoencoder(u).unwrap();
        grad_error(model.params(), |g| model.sequence_loss(g, &ids).map(|(l, _)| l))
    })
}

fn classifier_graph() -> f64 {
    let corpus = tiny_corpus();
    let words = Vocabulary::build(&corpus, 1).unwrap();
    let chars = CharVocab::build(corpus.iter().flat_map(|u| u.tokens.iter().map(String::as_str)));
    let labels = vec!["BookTicket".to_string(), "FlightSearch".to_string(), "Other".to_string()];
    over_configs(|cfg, rng| {
        let arch = ClassifierArch {
            word_dim: rng.random_range(1..4),
            char_dim: rng.random_range(1..3),
            char_hidden: rng.random_range(1..3),
            hidden: rng.random_range(1..4),
        };
        let model = IntentClassifierModel::new(arch, words.clone(), chars.clone(), labels.clone(), cfg).unwrap();
        let mut u = corpus[rng.random_range(0..corpus.len())].clone();
        u.tokens.truncate(3);
        grad_error(model.params(), |g| model.example_loss(g, &u))
    })
}
