use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Graph, ParamId, ParamSet, Tensor, Var};

fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// Word or character embedding table `[vocab, dim]`.
#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    /// Each output coordinate depends on a single one-hot input, so fan-in is 1.
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let table = params.add(name, Tensor::uniform(&[vocab, dim], fan_in_bound(1), rng));
        Self { table, vocab, dim }
    }

    /// `[ids.len(), dim]` matrix of looked-up rows.
    pub fn lookup(&self, g: &mut Graph<'_>, ids: &[usize]) -> Result<Var> {
        let t = g.param(self.table);
        g.gather(t, ids)
    }
}

/// Affine map `weight × x + bias`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let bound = fan_in_bound(input);
        let weight = params.add(
            format!("{prefix}.weight"),
            Tensor::uniform(&[output, input], bound, rng),
        );
        let bias = params.add(format!("{prefix}.bias"), Tensor::uniform(&[output], bound, rng));
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let wx = g.matvec(w, x)?;
        g.add(wx, b)
    }
}

/// Parameters of one LSTM cell. Gate blocks are stacked as input, forget,
/// candidate, output along the first axis of the weight matrices.
#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let w_input = params.add(
            format!("{prefix}.w_input"),
            Tensor::uniform(&[4 * hidden, input], fan_in_bound(input), rng),
        );
        let w_hidden = params.add(
            format!("{prefix}.w_hidden"),
            Tensor::uniform(&[4 * hidden, hidden], fan_in_bound(hidden), rng),
        );
        let bias = params.add(
            format!("{prefix}.bias"),
            Tensor::uniform(&[4 * hidden], fan_in_bound(hidden), rng),
        );
        Self {
            w_input,
            w_hidden,
            bias,
            input,
            hidden,
        }
    }

    /// One recurrence step; returns `(h', c')`.
    pub fn step(&self, g: &mut Graph<'_>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        lstm_cell_step(g, self, x, h, c)
    }

    /// Run left to right over `inputs`, returning every hidden state and the final cell.
    pub fn run(&self, g: &mut Graph<'_>, inputs: &[Var], h0: Var, c0: Var) -> Result<(Vec<Var>, Var)> {
        let mut h = h0;
        let mut c = c0;
        let mut hs = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let (nh, nc) = self.step(g, x, h, c)?;
            hs.push(nh);
            h = nh;
            c = nc;
        }
        Ok((hs, c))
    }

    pub fn zero_state(&self, g: &mut Graph<'_>) -> (Var, Var) {
        let h = g.input(Tensor::zeros(&[self.hidden]));
        let c = g.input(Tensor::zeros(&[self.hidden]));
        (h, c)
    }
}

/// Standard LSTM recurrence: sigmoid input/forget/output gates, tanh candidate,
/// `c' = f*c + i*g`, `h' = o*tanh(c')`.
pub fn lstm_cell_step(
    g: &mut Graph<'_>,
    p: &LstmParams,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let d = p.hidden;
    if g.value(x).shape() != [p.input] || g.value(h).shape() != [d] || g.value(c).shape() != [d] {
        return Err(Error::Dimension(format!(
            "lstm cell (input {}, hidden {}) fed x {:?}, h {:?}, c {:?}",
            p.input,
            d,
            g.value(x).shape(),
            g.value(h).shape(),
            g.value(c).shape()
        )));
    }
    let wi = g.param(p.w_input);
    let wh = g.param(p.w_hidden);
    let b = g.param(p.bias);
    let zx = g.matvec(wi, x)?;
    let zh = g.matvec(wh, h)?;
    let z = g.add_n(&[zx, zh, b])?;

    let zi = g.slice(z, 0, d)?;
    let zf = g.slice(z, d, d)?;
    let zg = g.slice(z, 2 * d, d)?;
    let zo = g.slice(z, 3 * d, d)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);

    let fc = g.mul(f, c)?;
    let ig = g.mul(i, cand)?;
    let c_next = g.add(fc, ig)?;
    let tc = g.tanh(c_next);
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}
