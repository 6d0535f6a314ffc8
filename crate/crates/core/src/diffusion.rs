//! SDEdit refinement: noise the guide to `σ(t0)`, then integrate the reverse
//! process back to `t = 0` with a pluggable score model.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::FeatureStats;
use crate::error::{Error, Result};
use crate::motion::PoseFeatures;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    GeometricVe,
}

/// `σ(t) = σ_min · (σ_max / σ_min)^t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule {
            kind: ScheduleKind::GeometricVe,
            sigma_min: 0.01,
            sigma_max: 10.0,
        }
    }
}

impl NoiseSchedule {
    pub fn new(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        let s = NoiseSchedule {
            kind: ScheduleKind::GeometricVe,
            sigma_min,
            sigma_max,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite()) {
            return Err(Error::invalid(format!(
                "noise schedule needs 0 < sigma_min < sigma_max, got ({}, {})",
                self.sigma_min, self.sigma_max
            )));
        }
        Ok(())
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("diffusion time {t} outside [0, 1]")));
        }
        Ok(self.sigma_unchecked(t))
    }

    fn sigma_unchecked(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::GeometricVe => self.sigma_min * (self.sigma_max / self.sigma_min).powf(t),
        }
    }
}

/// A (possibly text-conditioned) estimate of `∇ log p_t(x)`.
pub trait ScoreModel: Send + Sync {
    fn score(&self, x: &PoseFeatures, t: f64, condition: &str) -> Result<PoseFeatures>;
}

/// Independent per-channel Gaussian data distribution. Under the VE forward
/// process its time-`t` marginal is `N(μ, v + σ²(t))`, so the score is known
/// in closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    /// Length 1 (shared by all channels) or the feature width.
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Deserialize)]
struct ScoreModelFile {
    kind: String,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        let p = GaussianPrior { mean, var };
        p.validate()?;
        Ok(p)
    }

    pub fn standard() -> Self {
        GaussianPrior {
            mean: vec![0.0],
            var: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.is_empty() || self.var.is_empty() {
            return Err(Error::invalid("gaussian prior needs mean and var"));
        }
        if self.var.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("gaussian prior variances must be positive"));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("gaussian prior mean must be finite"));
        }
        Ok(())
    }

    /// Read `{"kind": "gaussian", "mean": [...], "var": [...]}`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: ScoreModelFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, None, e))?;
        if f.kind != "gaussian" {
            return Err(Error::parse(path, None, format!("unsupported score model kind {:?}", f.kind)));
        }
        GaussianPrior::new(f.mean, f.var).map_err(|e| Error::parse(path, None, e))
    }

    fn channel(v: &[f64], c: usize, dim: usize) -> Result<f64> {
        match v.len() {
            1 => Ok(v[0]),
            n if n == dim => Ok(v[c]),
            n => Err(Error::invalid(format!("gaussian prior has {n} channels, features have {dim}"))),
        }
    }

    pub fn with_schedule(self, schedule: NoiseSchedule) -> GaussianScore {
        GaussianScore { prior: self, schedule }
    }
}

/// `−(x − μ) / (v + σ²(t))` per channel.
pub fn gaussian_prior_score(prior: &GaussianPrior, x: &PoseFeatures, t: f64, schedule: &NoiseSchedule) -> Result<PoseFeatures> {
    let s2 = schedule.sigma(t)?.powi(2);
    let dim = x.dim();
    let mut out = x.clone();
    for r in 0..out.frames() {
        for (c, v) in out.row_mut(r).iter_mut().enumerate() {
            let mu = GaussianPrior::channel(&prior.mean, c, dim)?;
            let var = GaussianPrior::channel(&prior.var, c, dim)?;
            *v = -(*v - mu) / (var + s2);
        }
    }
    Ok(out)
}

/// [`GaussianPrior`] bound to a schedule, usable as a [`ScoreModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScore {
    pub prior: GaussianPrior,
    pub schedule: NoiseSchedule,
}

impl ScoreModel for GaussianScore {
    fn score(&self, x: &PoseFeatures, t: f64, _condition: &str) -> Result<PoseFeatures> {
        gaussian_prior_score(&self.prior, x, t, &self.schedule)
    }
}

/// A model that always returns zero; the reverse process then only adds
/// noise (stochastic) or does nothing (deterministic).
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroScore;

impl ScoreModel for ZeroScore {
    fn score(&self, x: &PoseFeatures, _t: f64, _condition: &str) -> Result<PoseFeatures> {
        Ok(PoseFeatures::zeros(x.frames(), x.dim()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    StochasticSde,
    #[default]
    Deterministic,
}

impl std::str::FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic_sde" | "stochastic" | "sde" => Ok(SamplerMode::StochasticSde),
            "deterministic" | "ddim" => Ok(SamplerMode::Deterministic),
            other => Err(Error::invalid(format!("unknown sampler mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdeditConfig {
    pub t0: f64,
    pub steps: usize,
    pub mode: SamplerMode,
    pub seed: u64,
}

impl Default for SdeditConfig {
    fn default() -> Self {
        SdeditConfig {
            t0: 0.96,
            steps: 50,
            mode: SamplerMode::Deterministic,
            seed: 0,
        }
    }
}

impl SdeditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.t0) {
            return Err(Error::invalid(format!("t0 must lie in [0, 1], got {}", self.t0)));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        Ok(())
    }
}

fn add_gaussian(x: &mut PoseFeatures, scale: f64, rng: &mut ChaCha8Rng) {
    for v in x.as_mut_slice() {
        let z: f64 = StandardNormal.sample(rng);
        *v += scale * z;
    }
}

/// `x_g + σ(t0)·z`. `t0 = 0` returns the guide untouched.
pub fn noise_guide(x_g: &PoseFeatures, t0: f64, schedule: &NoiseSchedule, seed: u64) -> Result<PoseFeatures> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    noise_with(x_g, t0, schedule, &mut rng)
}

fn noise_with(x_g: &PoseFeatures, t0: f64, schedule: &NoiseSchedule, rng: &mut ChaCha8Rng) -> Result<PoseFeatures> {
    let sigma = schedule.sigma(t0)?;
    let mut x = x_g.clone();
    if t0 > 0.0 {
        add_gaussian(&mut x, sigma, rng);
    }
    Ok(x)
}

/// `ε² = σ²(t) − σ²(t − Δt)`.
pub fn step_variance(schedule: &NoiseSchedule, t: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("reverse step needs dt > 0, got {dt}")));
    }
    let t_prev = t - dt;
    if t_prev < -1e-12 || t > 1.0 {
        return Err(Error::invalid(format!("reverse step needs 0 <= t - dt < t <= 1, got t={t}, dt={dt}")));
    }
    let hi = schedule.sigma(t)?;
    let lo = schedule.sigma(t_prev.max(0.0))?;
    Ok(hi * hi - lo * lo)
}

/// One reverse update given an already evaluated score.
/// Stochastic: `x + ε²·s + ε·z`; deterministic: `x + ½ε²·s`.
pub fn apply_step(
    x: &mut PoseFeatures,
    score: &PoseFeatures,
    eps2: f64,
    mode: SamplerMode,
    noise: Option<&PoseFeatures>,
) -> Result<()> {
    check_shape(x, score)?;
    match mode {
        SamplerMode::Deterministic => {
            for (v, s) in x.as_mut_slice().iter_mut().zip(score.as_slice()) {
                *v += 0.5 * eps2 * s;
            }
        }
        SamplerMode::StochasticSde => {
            let eps = eps2.sqrt();
            for (i, (v, s)) in x.as_mut_slice().iter_mut().zip(score.as_slice()).enumerate() {
                let z = noise.map_or(0.0, |n| n.as_slice()[i]);
                *v += eps2 * s + eps * z;
            }
        }
    }
    Ok(())
}

fn check_shape(x: &PoseFeatures, s: &PoseFeatures) -> Result<()> {
    if x.dim() != s.dim() || x.frames() != s.frames() {
        return Err(Error::invalid(format!(
            "score shape {}x{} differs from input {}x{}",
            s.frames(),
            s.dim(),
            x.frames(),
            x.dim()
        )));
    }
    Ok(())
}

/// One reverse step from `t` to `t − dt`.
pub fn reverse_step(
    x: &PoseFeatures,
    t: f64,
    dt: f64,
    schedule: &NoiseSchedule,
    model: &dyn ScoreModel,
    condition: &str,
    mode: SamplerMode,
    rng: &mut ChaCha8Rng,
) -> Result<PoseFeatures> {
    let eps2 = step_variance(schedule, t, dt)?;
    let s = model.score(x, t, condition)?;
    let mut out = x.clone();
    let noise = match mode {
        SamplerMode::StochasticSde => {
            let mut z = PoseFeatures::zeros(x.frames(), x.dim());
            add_gaussian(&mut z, 1.0, rng);
            Some(z)
        }
        SamplerMode::Deterministic => None,
    };
    apply_step(&mut out, &s, eps2, mode, noise.as_ref())?;
    Ok(out)
}

/// Noise the guide to `t0` and integrate back to `t = 0` in `steps` equal
/// steps (`t = t0·n/N`, `Δt = t0/N`, `n = N … 1`).
pub fn sdedit(
    x_g: &PoseFeatures,
    cfg: &SdeditConfig,
    schedule: &NoiseSchedule,
    model: &dyn ScoreModel,
    condition: &str,
) -> Result<PoseFeatures> {
    cfg.validate()?;
    schedule.validate()?;
    if cfg.t0 == 0.0 {
        return Ok(x_g.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = noise_with(x_g, cfg.t0, schedule, &mut rng)?;
    let n_steps = cfg.steps;
    let dt = cfg.t0 / n_steps as f64;
    for n in (1..=n_steps).rev() {
        let t = cfg.t0 * n as f64 / n_steps as f64;
        let eps2 = step_variance(schedule, t, dt)?;
        let s = model.score(&x, t, condition).map_err(|e| Error::ScoreModel {
            step: n,
            message: e.to_string(),
        })?;
        if s.dim() != x.dim() || s.frames() != x.frames() {
            return Err(Error::ScoreModel {
                step: n,
                message: format!("score shape {}x{} differs from input {}x{}", s.frames(), s.dim(), x.frames(), x.dim()),
            });
        }
        if s.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::ScoreModel {
                step: n,
                message: "score contains non-finite values".into(),
            });
        }
        let noise = match cfg.mode {
            SamplerMode::StochasticSde => {
                let mut z = PoseFeatures::zeros(x.frames(), x.dim());
                add_gaussian(&mut z, 1.0, &mut rng);
                Some(z)
            }
            SamplerMode::Deterministic => None,
        };
        apply_step(&mut x, &s, eps2, cfg.mode, noise.as_ref())?;
    }
    Ok(x)
}

/// SDEdit in normalized feature space: z-score with `stats`, refine, map
/// back. `t0 = 0` returns the guide untouched.
pub fn refine_features(
    x_g: &PoseFeatures,
    stats: Option<&FeatureStats>,
    cfg: &SdeditConfig,
    schedule: &NoiseSchedule,
    model: &dyn ScoreModel,
    condition: &str,
) -> Result<PoseFeatures> {
    cfg.validate()?;
    if cfg.t0 == 0.0 {
        return Ok(x_g.clone());
    }
    match stats {
        Some(st) => {
            let z = st.normalize(x_g)?;
            let out = sdedit(&z, cfg, schedule, model, condition)?;
            st.denormalize(&out)
        }
        None => sdedit(x_g, cfg, schedule, model, condition),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_endpoints_and_midpoint() {
        let s = NoiseSchedule::default();
        assert!((s.sigma(0.0).unwrap() - 0.01).abs() < 1e-15);
        assert!((s.sigma(1.0).unwrap() - 10.0).abs() < 1e-12);
        assert!((s.sigma(0.5).unwrap() - 0.1f64.sqrt()).abs() < 1e-12);
        assert!(s.sigma(1.5).is_err());
    }

    #[test]
    fn step_variance_hand_value() {
        let s = NoiseSchedule::default();
        let eps2 = step_variance(&s, 1.0, 0.02).unwrap();
        let s98 = 10f64.powf(0.94);
        assert!((s98 - 8.709_635_899_560_805).abs() < 1e-9);
        assert!((eps2 - (100.0 - s98 * s98)).abs() < 1e-9);
        assert!((eps2.sqrt() - 4.91347).abs() < 1e-5);
        assert!(step_variance(&s, 0.5, 0.0).is_err());
    }

    #[test]
    fn stochastic_step_with_zero_noise() {
        let mut x = PoseFeatures::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let s = PoseFeatures::from_rows(&[vec![0.5, -1.0]]).unwrap();
        let z = PoseFeatures::zeros(1, 2);
        apply_step(&mut x, &s, 4.0, SamplerMode::StochasticSde, Some(&z)).unwrap();
        assert_eq!(x.row(0), &[3.0, -2.0]);
    }

    #[test]
    fn gaussian_score_hand_value() {
        // sigma(0.5) = 1 for (0.1, 10)
        let sched = NoiseSchedule::new(0.1, 10.0).unwrap();
        let x = PoseFeatures::from_rows(&[vec![2.0]]).unwrap();
        let s = gaussian_prior_score(&GaussianPrior::standard(), &x, 0.5, &sched).unwrap();
        assert!((s.row(0)[0] + 1.0).abs() < 1e-12);
    }
}
