//! Stochastic observation models applied to noise-free TACs.
//!
//! The same models generate synthetic datasets and perturb the ABC
//! simulation pool, so the engine's implicit likelihood matches the
//! observation model. All draws go through [`RngStream`] coordinates
//! `(row, frame)`, making every perturbation a pure function of the seed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::{FrameSchedule, Tac};
use crate::rng::RngStream;
use rand_distr::{Distribution, Poisson, StandardNormal};

/// Which decay-scaling convention the Gaussian sigma uses.
///
/// Both share `sigma0 = sqrt(C e^(-lambda t) / dt)`; the `TwoTcm` style
/// multiplies by a trailing `e^(lambda t)` (decay-corrected counts), the
/// `LpNtPet` style does not. They are deliberately kept as separate
/// selectable variants rather than unified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GaussianStyle {
    #[default]
    #[serde(rename = "2tcm")]
    TwoTcm,
    #[serde(rename = "lpntpet")]
    LpNtPet,
}

/// Observation noise model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum NoiseModel {
    /// No perturbation.
    None,
    /// Additive Gaussian with decay-weighted sigma_t.
    Gaussian {
        level: f64,
        half_life_min: f64,
        #[serde(default)]
        style: GaussianStyle,
    },
    /// Scaled-Poisson counts: value replaced by Pois(level * C) / level.
    Poisson { level: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::None => Ok(()),
            NoiseModel::Gaussian { level, half_life_min, .. } => {
                if !(*level >= 0.0) || !level.is_finite() {
                    return Err(Error::config(format!("gaussian noise level must be >= 0, got {level}")));
                }
                if !(*half_life_min > 0.0) || !half_life_min.is_finite() {
                    return Err(Error::config(format!("half-life must be > 0, got {half_life_min}")));
                }
                Ok(())
            }
            NoiseModel::Poisson { level } => {
                if !(*level > 0.0) || !level.is_finite() {
                    return Err(Error::config(format!("poisson noise level must be > 0, got {level}")));
                }
                Ok(())
            }
        }
    }
}

/// Decay-weighted Gaussian sigma at frame time `t` for clean activity `c`
/// (clamped at 0 inside the square root).
#[inline]
pub fn gaussian_sigma(c: f64, t: f64, dt: f64, half_life_min: f64, style: GaussianStyle) -> f64 {
    let lambda = std::f64::consts::LN_2 / half_life_min;
    let base = (c.max(0.0) * (-lambda * t).exp() / dt).sqrt();
    match style {
        GaussianStyle::TwoTcm => base * (lambda * t).exp(),
        GaussianStyle::LpNtPet => base,
    }
}

/// Perturb one frame value. `t` is the frame mid-time, `dt` its duration.
#[inline]
pub(crate) fn perturb_frame(
    value: f64,
    t: f64,
    dt: f64,
    model: &NoiseModel,
    stream: &RngStream,
    row: u64,
    frame: u64,
) -> f64 {
    match model {
        NoiseModel::None => value,
        NoiseModel::Gaussian { level, half_life_min, style } => {
            if *level == 0.0 {
                return value;
            }
            let z: f64 = StandardNormal.sample(&mut stream.at(&[row, frame]));
            value + level * gaussian_sigma(value, t, dt, *half_life_min, *style) * z
        }
        NoiseModel::Poisson { level } => {
            let rate = level * value.max(0.0);
            if rate == 0.0 {
                return 0.0;
            }
            let draw: f64 = Poisson::new(rate)
                .expect("positive rate")
                .sample(&mut stream.at(&[row, frame]));
            draw / level
        }
    }
}

/// Apply a noise model to a whole TAC. `row` identifies the draw (pool row
/// or voxel index) inside the stream's coordinate space.
pub fn apply_noise(tac: &Tac, model: &NoiseModel, stream: &RngStream, row: u64) -> Result<Tac> {
    model.validate()?;
    let schedule = &tac.schedule;
    let values = tac
        .values
        .iter()
        .enumerate()
        .map(|(f, &v)| {
            perturb_frame(v, schedule.mid_time(f), schedule.durations()[f], model, stream, row, f as u64)
        })
        .collect();
    Tac::new(values, tac.schedule.clone())
}

/// Additive Gaussian perturbation (see [`NoiseModel::Gaussian`]).
pub fn apply_gaussian(
    tac: &Tac,
    level: f64,
    half_life_min: f64,
    style: GaussianStyle,
    stream: &RngStream,
    row: u64,
) -> Result<Tac> {
    apply_noise(tac, &NoiseModel::Gaussian { level, half_life_min, style }, stream, row)
}

/// Scaled-Poisson replacement (see [`NoiseModel::Poisson`]).
pub fn apply_poisson(tac: &Tac, level: f64, stream: &RngStream, row: u64) -> Result<Tac> {
    apply_noise(tac, &NoiseModel::Poisson { level }, stream, row)
}

/// In-place variant used by the pool builder; same draws as [`apply_noise`].
pub(crate) fn perturb_frames_in_place(
    values: &mut [f64],
    schedule: &FrameSchedule,
    model: &NoiseModel,
    stream: &RngStream,
    row: u64,
) {
    if matches!(model, NoiseModel::None) {
        return;
    }
    if let NoiseModel::Gaussian { level, .. } = model {
        if *level == 0.0 {
            return;
        }
    }
    for (f, v) in values.iter_mut().enumerate() {
        *v = perturb_frame(*v, schedule.mid_time(f), schedule.durations()[f], model, stream, row, f as u64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    const F18_HALF_LIFE: f64 = 109.8;

    fn flat_tac(value: f64, frames: usize) -> Tac {
        let schedule = Arc::new(FrameSchedule::uniform(frames, 1.0).unwrap());
        Tac::new(vec![value; frames], schedule).unwrap()
    }

    #[test]
    fn zero_level_is_identity() {
        let tac = flat_tac(42.0, 10);
        let stream = RngStream::from_seed(1).substream("noise");
        let out = apply_gaussian(&tac, 0.0, F18_HALF_LIFE, GaussianStyle::TwoTcm, &stream, 0).unwrap();
        assert_eq!(out.values, tac.values);
    }

    #[test]
    fn gaussian_std_matches_formula() {
        // Monte Carlo moment oracle: empirical std over 1e5 draws at
        // C=100, dt=1, t=10 (mid-time of a 1-min frame starting at 9.5),
        // level 7, within 2%.
        let schedule = Arc::new(FrameSchedule::new(vec![9.5], vec![1.0]).unwrap());
        let tac = Tac::new(vec![100.0], schedule).unwrap();
        let stream = RngStream::from_seed(123).substream("gauss-moment");
        let level = 7.0;
        let n = 100_000u64;
        let (mut sum, mut sq) = (0.0, 0.0);
        for row in 0..n {
            let y = apply_gaussian(&tac, level, F18_HALF_LIFE, GaussianStyle::TwoTcm, &stream, row).unwrap();
            sum += y.values[0];
            sq += y.values[0] * y.values[0];
        }
        let mean = sum / n as f64;
        let std = (sq / n as f64 - mean * mean).sqrt();
        let lambda = std::f64::consts::LN_2 / F18_HALF_LIFE;
        let expect = level * (100.0 * (-lambda * 10.0).exp()).sqrt() * (lambda * 10.0).exp();
        assert!((std - expect).abs() < 0.02 * expect, "std {std} vs {expect}");
        assert!((mean - 100.0).abs() < 3.0 * expect / (n as f64).sqrt() * 3.0);
    }

    #[test]
    fn gaussian_sigma_grows_with_time() {
        let mut prev = 0.0;
        for t in [1.0, 10.0, 50.0, 100.0] {
            let s = gaussian_sigma(100.0, t, 1.0, F18_HALF_LIFE, GaussianStyle::TwoTcm);
            assert!(s > prev, "sigma not increasing at t={t}");
            prev = s;
        }
    }

    #[test]
    fn negative_clean_values_are_clamped_in_sigma() {
        let s = gaussian_sigma(-5.0, 10.0, 1.0, F18_HALF_LIFE, GaussianStyle::TwoTcm);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn poisson_zero_rate_is_exact_zero() {
        let tac = flat_tac(0.0, 4);
        let stream = RngStream::from_seed(7).substream("pois");
        let out = apply_poisson(&tac, 2.0, &stream, 3).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0));
        // Negative clean values clamp to rate 0.
        let neg = flat_tac(-1.0, 4);
        let out = apply_poisson(&neg, 2.0, &stream, 3).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn poisson_moments() {
        // Mean C, variance C / level.
        let tac = flat_tac(50.0, 1);
        let stream = RngStream::from_seed(99).substream("pois-moment");
        let level = 2.0;
        let n = 100_000u64;
        let (mut sum, mut sq) = (0.0, 0.0);
        for row in 0..n {
            let y = apply_poisson(&tac, level, &stream, row).unwrap();
            sum += y.values[0];
            sq += y.values[0] * y.values[0];
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!((mean - 50.0).abs() < 0.5, "mean {mean}");
        assert!((var - 25.0).abs() < 0.05 * 25.0, "var {var}");
    }

    #[test]
    fn poisson_large_level_converges_to_input() {
        let tac = flat_tac(80.0, 8);
        let stream = RngStream::from_seed(5).substream("pois-lln");
        let out = apply_poisson(&tac, 1e6, &stream, 0).unwrap();
        for v in &out.values {
            assert!((v - 80.0).abs() < 0.001 * 80.0, "{v}");
        }
    }

    #[test]
    fn deterministic_per_coordinates() {
        let tac = flat_tac(10.0, 6);
        let stream = RngStream::from_seed(11).substream("pool-noise");
        let a = apply_noise(
            &tac,
            &NoiseModel::Gaussian { level: 3.0, half_life_min: 20.4, style: GaussianStyle::LpNtPet },
            &stream,
            17,
        )
        .unwrap();
        let b = apply_noise(
            &tac,
            &NoiseModel::Gaussian { level: 3.0, half_life_min: 20.4, style: GaussianStyle::LpNtPet },
            &stream,
            17,
        )
        .unwrap();
        assert_eq!(a.values, b.values);
        // In-place path draws the same values.
        let mut vals = tac.values.clone();
        perturb_frames_in_place(
            &mut vals,
            &tac.schedule,
            &NoiseModel::Gaussian { level: 3.0, half_life_min: 20.4, style: GaussianStyle::LpNtPet },
            &stream,
            17,
        );
        assert_eq!(vals, a.values);
    }

    #[test]
    fn gaussian_unbiased() {
        let tac = flat_tac(25.0, 1);
        let stream = RngStream::from_seed(31).substream("bias");
        let n = 200_000u64;
        let mut sum = 0.0;
        for row in 0..n {
            sum += apply_gaussian(&tac, 4.0, F18_HALF_LIFE, GaussianStyle::TwoTcm, &stream, row)
                .unwrap()
                .values[0];
        }
        let mean = sum / n as f64;
        assert!((mean - 25.0).abs() < 0.2, "mean {mean}");
    }

    #[test]
    fn noise_json_round_trip() {
        let g: NoiseModel =
            serde_json::from_str(r#"{"type":"gaussian","level":7.0,"half_life_min":109.8}"#).unwrap();
        assert_eq!(
            g,
            NoiseModel::Gaussian { level: 7.0, half_life_min: 109.8, style: GaussianStyle::TwoTcm }
        );
        let p: NoiseModel = serde_json::from_str(r#"{"type":"poisson","level":2.5}"#).unwrap();
        assert_eq!(p, NoiseModel::Poisson { level: 2.5 });
        let s: NoiseModel = serde_json::from_str(
            r#"{"type":"gaussian","level":1.0,"half_life_min":20.4,"style":"lpntpet"}"#,
        )
        .unwrap();
        assert_eq!(
            s,
            NoiseModel::Gaussian { level: 1.0, half_life_min: 20.4, style: GaussianStyle::LpNtPet }
        );
    }
}
