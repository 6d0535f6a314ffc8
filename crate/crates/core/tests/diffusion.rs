use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmd_core::diffusion::{
    gaussian_prior_score, noise_guide, reverse_step, sdedit, step_variance, GaussianPrior, NoiseSchedule, SamplerMode,
    ScoreModel, SdeditConfig, ZeroScore,
};
use rmd_core::motion::PoseFeatures;
use rmd_core::{Error, Result};

fn constant(frames: usize, dim: usize, v: f64) -> PoseFeatures {
    PoseFeatures::new(dim, vec![v; frames * dim]).unwrap()
}

fn prior_model() -> rmd_core::diffusion::GaussianScore {
    GaussianPrior::standard().with_schedule(NoiseSchedule::default())
}

#[test]
fn t0_zero_is_the_identity() {
    let x = PoseFeatures::from_rows(&[vec![0.3, -1.2, 5.0], vec![1e-300, 7.0, -0.0]]).unwrap();
    for mode in [SamplerMode::Deterministic, SamplerMode::StochasticSde] {
        let cfg = SdeditConfig {
            t0: 0.0,
            steps: 50,
            mode,
            seed: 99,
        };
        let out = sdedit(&x, &cfg, &NoiseSchedule::default(), &prior_model(), "walk").unwrap();
        assert_eq!(out.as_slice(), x.as_slice());
    }
    assert_eq!(noise_guide(&x, 0.0, &NoiseSchedule::default(), 3).unwrap(), x);
}

#[test]
fn sdedit_is_deterministic_per_seed() {
    let x = constant(4, 5, 0.5);
    for mode in [SamplerMode::Deterministic, SamplerMode::StochasticSde] {
        let cfg = SdeditConfig {
            t0: 0.7,
            steps: 20,
            mode,
            seed: 5,
        };
        let a = sdedit(&x, &cfg, &NoiseSchedule::default(), &prior_model(), "").unwrap();
        let b = sdedit(&x, &cfg, &NoiseSchedule::default(), &prior_model(), "").unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let c = sdedit(&x, &SdeditConfig { seed: 6, ..cfg }, &NoiseSchedule::default(), &prior_model(), "").unwrap();
        assert_ne!(a.as_slice(), c.as_slice());
    }
}

#[test]
fn guide_noise_has_schedule_variance() {
    let sched = NoiseSchedule::default();
    let t0 = 0.4;
    let x = constant(1, 3, 2.0);
    let n = 10_000;
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for seed in 0..n {
        let y = noise_guide(&x, t0, &sched, seed).unwrap();
        for c in 0..3 {
            let d = y.row(0)[c] - 2.0;
            sum[c] += d;
            sq[c] += d * d;
        }
    }
    let s2 = sched.sigma(t0).unwrap().powi(2);
    for c in 0..3 {
        let mean = sum[c] / n as f64;
        let var = sq[c] / n as f64 - mean * mean;
        assert!((var / s2 - 1.0).abs() < 0.05, "channel {c}: {var} vs {s2}");
    }
}

#[test]
fn zero_score_deterministic_step_is_identity() {
    let x = PoseFeatures::from_rows(&[vec![1.0, -2.0, 3.5]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let y = reverse_step(&x, 0.8, 0.1, &NoiseSchedule::default(), &ZeroScore, "", SamplerMode::Deterministic, &mut rng)
        .unwrap();
    assert_eq!(x, y);
}

#[test]
fn step_size_oracle() {
    let s = NoiseSchedule::default();
    let sigma = s.sigma(0.98).unwrap();
    assert!((sigma - 8.70964).abs() < 1e-5);
    let eps = step_variance(&s, 1.0, 0.02).unwrap().sqrt();
    assert!((eps - (100.0f64 - 75.8578).sqrt()).abs() < 1e-4);
    assert!((eps - 4.91347).abs() < 1e-5);
}

#[test]
fn invalid_steps_are_rejected() {
    let s = NoiseSchedule::default();
    let x = constant(1, 1, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(reverse_step(&x, 0.5, 0.0, &s, &ZeroScore, "", SamplerMode::Deterministic, &mut rng).is_err());
    assert!(reverse_step(&x, 0.5, -0.1, &s, &ZeroScore, "", SamplerMode::Deterministic, &mut rng).is_err());
    assert!(reverse_step(&x, 0.5, 0.6, &s, &ZeroScore, "", SamplerMode::Deterministic, &mut rng).is_err());
    assert!(s.sigma(-0.01).is_err());
    assert!(NoiseSchedule::new(1.0, 0.5).is_err());
    let bad = SdeditConfig {
        steps: 0,
        ..SdeditConfig::default()
    };
    assert!(sdedit(&x, &bad, &s, &ZeroScore, "").is_err());
}

fn log_density(x: f64, mu: f64, var: f64) -> f64 {
    -0.5 * (x - mu).powi(2) / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln()
}

proptest! {
    #[test]
    fn prior_score_matches_log_density_gradient(x in -5.0f64..5.0, mu in -2.0f64..2.0, var in 0.1f64..4.0, t in 0.0f64..1.0) {
        let sched = NoiseSchedule::default();
        let prior = GaussianPrior::new(vec![mu], vec![var]).unwrap();
        let total = var + sched.sigma(t).unwrap().powi(2);
        let h = 1e-5;
        let fd = (log_density(x + h, mu, total) - log_density(x - h, mu, total)) / (2.0 * h);
        let s = gaussian_prior_score(&prior, &constant(1, 1, x), t, &sched).unwrap();
        prop_assert!((s.row(0)[0] - fd).abs() < 1e-5);
    }

    #[test]
    fn prior_score_vanishes_at_mean(mu in -3.0f64..3.0, t in 0.0f64..1.0) {
        let prior = GaussianPrior::new(vec![mu], vec![1.0]).unwrap();
        let s = gaussian_prior_score(&prior, &constant(2, 3, mu), t, &NoiseSchedule::default()).unwrap();
        prop_assert!(s.as_slice().iter().all(|v| *v == 0.0));
    }
}

#[test]
fn prior_score_hand_value() {
    // sigma(0.5) = 1 under (0.1, 10): score = -2 / (1 + 1)
    let sched = NoiseSchedule::new(0.1, 10.0).unwrap();
    let s = gaussian_prior_score(&GaussianPrior::standard(), &constant(1, 1, 2.0), 0.5, &sched).unwrap();
    assert!((s.row(0)[0] + 1.0).abs() < 1e-12);
}

fn channel_stats(samples: &[PoseFeatures], c: usize) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.row(0)[c]).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.row(0)[c] - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn full_noise_run_recovers_the_prior() {
    let sched = NoiseSchedule::default();
    let guide = constant(1, 4, 0.0);
    let model = prior_model();
    let samples: Vec<PoseFeatures> = (0..2000)
        .map(|seed| {
            let cfg = SdeditConfig {
                t0: 1.0,
                steps: 200,
                mode: SamplerMode::Deterministic,
                seed,
            };
            sdedit(&guide, &cfg, &sched, &model, "").unwrap()
        })
        .collect();
    for c in 0..4 {
        let (mean, var) = channel_stats(&samples, c);
        assert!(mean.abs() < 0.1, "channel {c} mean {mean}");
        assert!((var - 1.0).abs() < 0.15, "channel {c} variance {var}");
    }
}

#[test]
fn smaller_t0_stays_closer_to_the_guide() {
    let sched = NoiseSchedule::default();
    let guide = constant(1, 4, 3.0);
    let model = prior_model();
    let mean_dist = |t0: f64| {
        let total: f64 = (0..300)
            .map(|seed| {
                let cfg = SdeditConfig {
                    t0,
                    steps: 50,
                    mode: SamplerMode::Deterministic,
                    seed,
                };
                let out = sdedit(&guide, &cfg, &sched, &model, "").unwrap();
                out.as_slice().iter().map(|v| (v - 3.0).powi(2)).sum::<f64>().sqrt()
            })
            .sum();
        total / 300.0
    };
    let (d_half, d_full) = (mean_dist(0.5), mean_dist(1.0));
    assert!(d_half < d_full, "{d_half} vs {d_full}");
}

struct Failing;

impl ScoreModel for Failing {
    fn score(&self, _x: &PoseFeatures, t: f64, _c: &str) -> Result<PoseFeatures> {
        if t < 0.5 {
            Err(Error::InvalidArgument("model exploded".into()))
        } else {
            Ok(PoseFeatures::zeros(1, 1))
        }
    }
}

struct WrongShape;

impl ScoreModel for WrongShape {
    fn score(&self, x: &PoseFeatures, _t: f64, _c: &str) -> Result<PoseFeatures> {
        Ok(PoseFeatures::zeros(x.frames(), x.dim() + 1))
    }
}

#[test]
fn score_model_failures_carry_the_step() {
    let cfg = SdeditConfig {
        t0: 1.0,
        steps: 10,
        mode: SamplerMode::Deterministic,
        seed: 0,
    };
    match sdedit(&constant(1, 1, 0.0), &cfg, &NoiseSchedule::default(), &Failing, "") {
        Err(Error::ScoreModel { step, message }) => {
            assert_eq!(step, 4);
            assert!(message.contains("exploded"));
        }
        other => panic!("unexpected {other:?}"),
    }
    match sdedit(&constant(2, 3, 0.0), &cfg, &NoiseSchedule::default(), &WrongShape, "") {
        Err(Error::ScoreModel { step: 10, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn score_model_file_loading() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    std::fs::write(&p, r#"{"kind":"gaussian","mean":[0.0, 1.0],"var":[1.0, 2.0]}"#).unwrap();
    let prior = GaussianPrior::load(&p).unwrap();
    assert_eq!(prior.var, vec![1.0, 2.0]);
    std::fs::write(&p, r#"{"kind":"mlp","mean":[0.0],"var":[1.0]}"#).unwrap();
    assert!(GaussianPrior::load(&p).is_err());
    std::fs::write(&p, r#"{"kind":"gaussian","mean":[0.0],"var":[-1.0]}"#).unwrap();
    assert!(GaussianPrior::load(&p).is_err());
    // channel count must match the features
    let prior = GaussianPrior::new(vec![0.0; 2], vec![1.0; 2]).unwrap();
    assert!(gaussian_prior_score(&prior, &constant(1, 3, 0.0), 0.5, &NoiseSchedule::default()).is_err());
}
