//! Latent-space differential privacy: L2 clipping plus calibrated Laplace or
//! Gaussian noise.
//!
//! The encoder output is projected onto the L2 ball of radius `C` and then
//! perturbed coordinate-wise. Everything downstream of the noisy latent (the
//! decoder, the parser, any model trained on the rewritten text) is
//! post-processing and inherits the latent mechanism's `(ε, δ)`.
//!
//! Laplace sensitivity comes in two flavours. [`SensitivityMode::Paper`] uses
//! `Δ₁ = 2C`, which is the L1 diameter of the ball only when `d = 1`.
//! [`SensitivityMode::Corrected`] uses the true L1 diameter `2C√d`. The
//! Gaussian mechanism always uses `Δ₂ = 2C`, which holds in every dimension.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DELTA: f64 = 1e-5;
pub const DEFAULT_CLIP_RADIUS: f64 = 1.0;

/// Slack allowed on the post-clipping norm bound.
pub const NORM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseFamily {
    Laplace,
    Gaussian,
}

impl NoiseFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseFamily::Laplace => "laplace",
            NoiseFamily::Gaussian => "gaussian",
        }
    }
}

impl std::fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "laplace" => Ok(NoiseFamily::Laplace),
            "gaussian" => Ok(NoiseFamily::Gaussian),
            other => Err(Error::Config(format!("unknown noise family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensitivityMode {
    Paper,
    #[default]
    Corrected,
}

impl SensitivityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SensitivityMode::Paper => "paper",
            SensitivityMode::Corrected => "corrected",
        }
    }
}

impl std::str::FromStr for SensitivityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "paper" => Ok(SensitivityMode::Paper),
            "corrected" => Ok(SensitivityMode::Corrected),
            other => Err(Error::Config(format!("unknown sensitivity mode `{other}`"))),
        }
    }
}

/// How the noise magnitude is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "snake_case")]
pub enum NoiseLevel {
    /// A privacy budget; the scale is derived from sensitivity.
    Epsilon { epsilon: f64 },
    /// A raw per-coordinate variance; the budget is derived from it.
    Variance { variance: f64 },
}

/// Full description of the latent mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpec {
    pub clip_radius: f64,
    pub family: NoiseFamily,
    pub level: NoiseLevel,
    /// Zero for Laplace; in `(0, 1)` for Gaussian.
    pub delta: f64,
    pub sensitivity_mode: SensitivityMode,
    pub dimension: usize,
}

impl PrivacySpec {
    pub fn laplace_epsilon(epsilon: f64, clip_radius: f64, dimension: usize) -> Result<Self> {
        Self {
            clip_radius,
            family: NoiseFamily::Laplace,
            level: NoiseLevel::Epsilon { epsilon },
            delta: 0.0,
            sensitivity_mode: SensitivityMode::default(),
            dimension,
        }
        .validated()
    }

    pub fn laplace_variance(variance: f64, clip_radius: f64, dimension: usize) -> Result<Self> {
        Self {
            clip_radius,
            family: NoiseFamily::Laplace,
            level: NoiseLevel::Variance { variance },
            delta: 0.0,
            sensitivity_mode: SensitivityMode::default(),
            dimension,
        }
        .validated()
    }

    pub fn gaussian_epsilon(epsilon: f64, delta: f64, clip_radius: f64, dimension: usize) -> Result<Self> {
        Self {
            clip_radius,
            family: NoiseFamily::Gaussian,
            level: NoiseLevel::Epsilon { epsilon },
            delta,
            sensitivity_mode: SensitivityMode::default(),
            dimension,
        }
        .validated()
    }

    pub fn gaussian_variance(variance: f64, delta: f64, clip_radius: f64, dimension: usize) -> Result<Self> {
        Self {
            clip_radius,
            family: NoiseFamily::Gaussian,
            level: NoiseLevel::Variance { variance },
            delta,
            sensitivity_mode: SensitivityMode::default(),
            dimension,
        }
        .validated()
    }

    pub fn with_sensitivity(mut self, mode: SensitivityMode) -> Self {
        self.sensitivity_mode = mode;
        self
    }

    pub fn with_dimension(mut self, dimension: usize) -> Result<Self> {
        self.dimension = dimension;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Contract(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("clip radius", self.clip_radius)?;
        if self.dimension == 0 {
            return Err(Error::Contract("latent dimension must be positive".into()));
        }
        match self.level {
            NoiseLevel::Epsilon { epsilon } => positive("epsilon", epsilon)?,
            NoiseLevel::Variance { variance } => positive("variance", variance)?,
        }
        match self.family {
            NoiseFamily::Laplace if self.delta != 0.0 => Err(Error::Contract(format!(
                "the Laplace mechanism is (ε, 0)-DP; delta must be 0, got {}",
                self.delta
            ))),
            NoiseFamily::Gaussian if !(self.delta > 0.0 && self.delta < 1.0) => Err(Error::Contract(
                format!("Gaussian delta must lie in (0, 1), got {}", self.delta),
            )),
            _ => Ok(()),
        }
    }

    /// L1 sensitivity used by the Laplace calibration.
    pub fn l1_sensitivity(&self) -> f64 {
        match self.sensitivity_mode {
            SensitivityMode::Paper => 2.0 * self.clip_radius,
            SensitivityMode::Corrected => 2.0 * self.clip_radius * (self.dimension as f64).sqrt(),
        }
    }

    /// L2 sensitivity: the diameter of the clipping ball.
    pub fn l2_sensitivity(&self) -> f64 {
        2.0 * self.clip_radius
    }

    /// Per-coordinate noise variance implied by the spec.
    pub fn variance(&self) -> Result<f64> {
        match self.family {
            NoiseFamily::Laplace => {
                let b = laplace_scale(self)?;
                Ok(2.0 * b * b)
            }
            NoiseFamily::Gaussian => {
                let s = gaussian_sigma(self)?;
                Ok(s * s)
            }
        }
    }
}

/// Projection onto the L2 ball: `r * min(1, C / ||r||)`.
pub fn clip_to_ball(r: &[f64], radius: f64) -> Result<Vec<f64>> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::Contract(format!("clip radius must be positive, got {radius}")));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("cannot clip a vector with non-finite entries".into()));
    }
    let norm = l2_norm(r);
    if norm <= radius {
        return Ok(r.to_vec());
    }
    let factor = radius / norm;
    Ok(r.iter().map(|v| v * factor).collect())
}

pub fn l2_norm(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Per-coordinate Laplace scale `b`.
pub fn laplace_scale(spec: &PrivacySpec) -> Result<f64> {
    if spec.family != NoiseFamily::Laplace {
        return Err(Error::Contract("laplace_scale needs a Laplace spec".into()));
    }
    spec.validate()?;
    Ok(match spec.level {
        NoiseLevel::Epsilon { epsilon } => spec.l1_sensitivity() / epsilon,
        NoiseLevel::Variance { variance } => (variance / 2.0).sqrt(),
    })
}

/// `√(2 ln(1.25/δ))`, the classical Gaussian-mechanism factor.
fn gaussian_factor(delta: f64) -> f64 {
    (2.0 * (1.25 / delta).ln()).sqrt()
}

/// Per-coordinate Gaussian standard deviation.
///
/// Budget-parameterized specs use the classical bound, which is only valid for
/// `ε ≤ 1`.
pub fn gaussian_sigma(spec: &PrivacySpec) -> Result<f64> {
    if spec.family != NoiseFamily::Gaussian {
        return Err(Error::Contract("gaussian_sigma needs a Gaussian spec".into()));
    }
    spec.validate()?;
    match spec.level {
        NoiseLevel::Epsilon { epsilon } => {
            if epsilon > 1.0 {
                return Err(Error::Contract(format!(
                    "the classical Gaussian bound needs epsilon <= 1, got {epsilon}"
                )));
            }
            Ok(spec.l2_sensitivity() / epsilon * gaussian_factor(spec.delta))
        }
        NoiseLevel::Variance { variance } => Ok(variance.sqrt()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub epsilon: f64,
    pub delta: f64,
}

/// The `(ε, δ)` guarantee of the latent mechanism, and hence of the whole
/// rewrite pipeline by post-processing.
pub fn effective_epsilon(spec: &PrivacySpec) -> Result<PrivacyReport> {
    spec.validate()?;
    let epsilon = match (spec.family, spec.level) {
        (_, NoiseLevel::Epsilon { epsilon }) => epsilon,
        (NoiseFamily::Laplace, NoiseLevel::Variance { .. }) => {
            spec.l1_sensitivity() / laplace_scale(spec)?
        }
        (NoiseFamily::Gaussian, NoiseLevel::Variance { .. }) => {
            spec.l2_sensitivity() / gaussian_sigma(spec)? * gaussian_factor(spec.delta)
        }
    };
    Ok(PrivacyReport {
        epsilon,
        delta: spec.delta,
    })
}

/// Laplace(0, b) by inverse CDF from one uniform draw.
pub fn sample_laplace<R: RngCore + ?Sized>(b: f64, rng: &mut R) -> f64 {
    // u in (-0.5, 0.5]; the open lower end keeps ln() finite.
    let u: f64 = 0.5 - rng.random::<f64>();
    -b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

/// `d` i.i.d. noise coordinates for `spec`.
pub fn sample_noise<R: RngCore + ?Sized>(spec: &PrivacySpec, rng: &mut R) -> Result<Vec<f64>> {
    Ok(match spec.family {
        NoiseFamily::Laplace => {
            let b = laplace_scale(spec)?;
            (0..spec.dimension).map(|_| sample_laplace(b, rng)).collect()
        }
        NoiseFamily::Gaussian => {
            let s = gaussian_sigma(spec)?;
            (0..spec.dimension)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    s * z
                })
                .collect()
        }
    })
}

/// `clip_to_ball(r, C) + η`.
pub fn privatize<R: RngCore + ?Sized>(r: &[f64], spec: &PrivacySpec, rng: &mut R) -> Result<Vec<f64>> {
    if r.len() != spec.dimension {
        return Err(Error::Contract(format!(
            "latent of length {} for a mechanism of dimension {}",
            r.len(),
            spec.dimension
        )));
    }
    let clipped = clip_to_ball(r, spec.clip_radius)?;
    debug_assert!(l2_norm(&clipped) <= spec.clip_radius + NORM_SLACK);
    let noise = sample_noise(spec, rng)?;
    Ok(clipped.iter().zip(noise).map(|(a, b)| a + b).collect())
}

/// Histogram-based check of the privacy-loss bound for a one-dimensional
/// Laplace mechanism.
///
/// Both inputs are privatized `samples` times. Outputs are binned on a shared
/// grid spanning the two clipped values ± 5 noise scales; samples beyond the
/// grid fall into the edge bins. Returns the largest `|ln(p̂₁ / p̂₂)|` over
/// bins with at least 1000 hits from each input.
pub fn empirical_dp_check<R: RngCore + ?Sized>(
    spec: &PrivacySpec,
    u1: f64,
    u2: f64,
    samples: usize,
    bins: usize,
    rng: &mut R,
) -> Result<f64> {
    const MIN_HITS: u64 = 1000;
    if spec.dimension != 1 {
        return Err(Error::Contract("the empirical check runs in dimension 1".into()));
    }
    if spec.family != NoiseFamily::Laplace || !matches!(spec.level, NoiseLevel::Epsilon { .. }) {
        return Err(Error::Contract(
            "the empirical check needs a budget-parameterized Laplace spec".into(),
        ));
    }
    if samples < 100_000 {
        return Err(Error::Contract(format!(
            "need at least 1e5 samples per input, got {samples}"
        )));
    }
    if bins < 2 {
        return Err(Error::Contract("need at least 2 bins".into()));
    }
    let b = laplace_scale(spec)?;
    let c1 = clip_to_ball(&[u1], spec.clip_radius)?[0];
    let c2 = clip_to_ball(&[u2], spec.clip_radius)?[0];
    let lo = c1.min(c2) - 5.0 * b;
    let hi = c1.max(c2) + 5.0 * b;
    let width = (hi - lo) / bins as f64;

    let histogram = |centre: f64, rng: &mut R| -> Result<Vec<u64>> {
        let mut h = vec![0u64; bins];
        for _ in 0..samples {
            let v = privatize(&[centre], spec, rng)?[0];
            let k = ((v - lo) / width).floor().clamp(0.0, (bins - 1) as f64) as usize;
            h[k] += 1;
        }
        Ok(h)
    };
    let h1 = histogram(u1, rng)?;
    let h2 = histogram(u2, rng)?;
    let worst = h1
        .iter()
        .zip(&h2)
        .filter(|(&a, &b)| a >= MIN_HITS && b >= MIN_HITS)
        .map(|(&a, &b)| (a as f64 / b as f64).ln().abs())
        .fold(0.0, f64::max);
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clip_examples() {
        let c = clip_to_ball(&[3.0, 4.0], 1.0).unwrap();
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        assert_eq!(clip_to_ball(&[0.3, 0.4], 1.0).unwrap(), vec![0.3, 0.4]);
        assert_eq!(clip_to_ball(&[0.0, 0.0], 1.0).unwrap(), vec![0.0, 0.0]);
        assert!(clip_to_ball(&[f64::NAN], 1.0).is_err());
        assert!(clip_to_ball(&[1.0], 0.0).is_err());
    }

    #[test]
    fn laplace_scales() {
        let narrow = PrivacySpec::laplace_epsilon(2.0, 1.0, 8)
            .unwrap()
            .with_sensitivity(SensitivityMode::Paper);
        assert_eq!(laplace_scale(&narrow).unwrap(), 1.0);
        assert_eq!(laplace_scale(&PrivacySpec::laplace_variance(0.5, 1.0, 8).unwrap()).unwrap(), 0.5);
        let corrected = PrivacySpec::laplace_epsilon(1.0, 1.0, 4).unwrap();
        assert_eq!(laplace_scale(&corrected).unwrap(), 4.0);
        let g = PrivacySpec::gaussian_variance(0.5, 1e-5, 1.0, 4).unwrap();
        assert!(laplace_scale(&g).is_err());
    }

    #[test]
    fn gaussian_sigmas() {
        let spec = PrivacySpec::gaussian_epsilon(1.0, 1e-5, 1.0, 16).unwrap();
        let expected = 2.0 * (2.0 * 125_000f64.ln()).sqrt();
        assert!((gaussian_sigma(&spec).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 9.690).abs() < 1e-3);
        let v = PrivacySpec::gaussian_variance(0.25, 1e-5, 1.0, 16).unwrap();
        assert_eq!(gaussian_sigma(&v).unwrap(), 0.5);
        assert!(PrivacySpec::gaussian_epsilon(1.0, 1.25, 1.0, 16).is_err());
        assert!(PrivacySpec::gaussian_epsilon(0.5, 0.0, 1.0, 16).is_err());
        let loose = PrivacySpec::gaussian_epsilon(2.0, 1e-5, 1.0, 16).unwrap();
        assert!(gaussian_sigma(&loose).is_err());
    }

    #[test]
    fn laplace_with_delta_is_invalid() {
        let mut s = PrivacySpec::laplace_epsilon(1.0, 1.0, 2).unwrap();
        s.delta = 1e-5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn effective_epsilon_examples() {
        let narrow = PrivacySpec::laplace_variance(0.5, 1.0, 4)
            .unwrap()
            .with_sensitivity(SensitivityMode::Paper);
        let r = effective_epsilon(&narrow).unwrap();
        assert_eq!((r.epsilon, r.delta), (4.0, 0.0));
        let corrected = narrow.with_sensitivity(SensitivityMode::Corrected);
        assert_eq!(effective_epsilon(&corrected).unwrap().epsilon, 8.0);
        let by_eps = PrivacySpec::laplace_epsilon(0.7, 1.0, 4).unwrap();
        assert_eq!(effective_epsilon(&by_eps).unwrap().epsilon, 0.7);
    }

    #[test]
    fn noise_is_reproducible() {
        let spec = PrivacySpec::gaussian_variance(0.3, 1e-5, 1.0, 5).unwrap();
        let a = sample_noise(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_noise(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn privatize_composes_clip_and_noise() {
        let spec = PrivacySpec::laplace_variance(0.5, 1.0, 2).unwrap();
        let out = privatize(&[3.0, 4.0], &spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let noise = sample_noise(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!((out[0] - (0.6 + noise[0])).abs() < 1e-15);
        assert!((out[1] - (0.8 + noise[1])).abs() < 1e-15);
        assert!(privatize(&[1.0], &spec, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
    }

    #[test]
    fn tiny_variance_leaves_clipped_input() {
        let spec = PrivacySpec::gaussian_variance(1e-12, 1e-5, 1.0, 2).unwrap();
        let out = privatize(&[3.0, 4.0], &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-3 && (out[1] - 0.8).abs() < 1e-3);
    }

    #[test]
    fn empirical_check_contract() {
        let spec = PrivacySpec::laplace_epsilon(1.0, 1.0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(empirical_dp_check(&spec, 1.0, -1.0, 1000, 20, &mut rng).is_err());
        let wide = PrivacySpec::laplace_epsilon(1.0, 1.0, 2).unwrap();
        assert!(empirical_dp_check(&wide, 1.0, -1.0, 100_000, 20, &mut rng).is_err());
    }
}
