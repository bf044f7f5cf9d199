//! Per-frame, per-category insertion counts under the real-synthesis
//! mixing-up strategy: a plain per-category count blended with a
//! present-categories-only count by the annealed factor alpha, then scaled
//! by the step-decayed crowdedness factor beta.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::error::{Error, Result};

/// Schedule parameters. `n_plain` carries the per-category reference
/// insertion counts; `alpha_start` is the training fraction where the
/// alpha ramp wakes up, and `beta_steps`/`beta_factor` define the stepwise
/// beta decay.
#[derive(Clone, Debug)]
pub struct ScheduleConfig {
    pub n_plain: BTreeMap<String, u32>,
    pub alpha_start: f64,
    pub beta_steps: Vec<f64>,
    pub beta_factor: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            n_plain: BTreeMap::new(),
            alpha_start: 0.75,
            beta_steps: vec![0.75, 0.85],
            beta_factor: 2.0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_start) {
            return Err(Error::Validation(format!(
                "alpha_start must be in [0, 1], got {}",
                self.alpha_start
            )));
        }
        if self.beta_factor < 1.0 {
            return Err(Error::Validation(format!(
                "beta_factor must be >= 1, got {}",
                self.beta_factor
            )));
        }
        let mut prev = f64::NEG_INFINITY;
        for &step in &self.beta_steps {
            if !(0.0..=1.0).contains(&step) || step <= prev {
                return Err(Error::Validation(format!(
                    "beta_steps must be strictly increasing within [0, 1]: {:?}",
                    self.beta_steps
                )));
            }
            prev = step;
        }
        Ok(())
    }

    /// The per-category reference magnitudes commonly used for the ten
    /// nuScenes detection classes.
    pub fn nuscenes_reference() -> Self {
        let n_plain = [
            ("car", 2),
            ("truck", 3),
            ("construction_vehicle", 7),
            ("bus", 4),
            ("trailer", 6),
            ("barrier", 2),
            ("motorcycle", 6),
            ("bicycle", 6),
            ("pedestrian", 2),
            ("traffic_cone", 2),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        ScheduleConfig {
            n_plain,
            ..ScheduleConfig::default()
        }
    }
}

/// Alpha and beta evaluated at a training-progress fraction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleState {
    pub t: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl ScheduleState {
    pub fn at(t: f64, cfg: &ScheduleConfig) -> Result<Self> {
        Ok(ScheduleState {
            t,
            alpha: alpha_at(t, cfg)?,
            beta: beta_at(t, cfg)?,
        })
    }
}

fn check_progress(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Validation(format!(
            "training progress must be in [0, 1], got {t}"
        )));
    }
    Ok(())
}

/// Linear anneal from 1 to 0: alpha stays at 1 before `alpha_start`, ramps
/// linearly afterwards, and reaches exactly 0 at t = 1.
pub fn alpha_at(t: f64, cfg: &ScheduleConfig) -> Result<f64> {
    check_progress(t)?;
    if t < cfg.alpha_start {
        return Ok(1.0);
    }
    if cfg.alpha_start >= 1.0 {
        // Degenerate ramp: stay at 1 until the very end.
        return Ok(if t >= 1.0 { 0.0 } else { 1.0 });
    }
    Ok((1.0 - t) / (1.0 - cfg.alpha_start))
}

/// Step decay: beta divides by `beta_factor` at every crossed step.
pub fn beta_at(t: f64, cfg: &ScheduleConfig) -> Result<f64> {
    check_progress(t)?;
    let crossed = cfg.beta_steps.iter().filter(|&&s| s <= t).count();
    Ok(cfg.beta_factor.powi(-(crossed as i32)))
}

/// Requested insertion counts for one frame. The fractional part of
/// `(n_plain * alpha + n_exist * (1 - alpha)) * beta` is resolved by
/// stochastic rounding, which preserves the expectation.
pub fn counts_for_frame<R: Rng>(
    scene_categories: &BTreeSet<&str>,
    state: &ScheduleState,
    cfg: &ScheduleConfig,
    rng: &mut R,
) -> BTreeMap<String, u32> {
    let mut out = BTreeMap::new();
    for (category, &n_plain) in &cfg.n_plain {
        let n_plain = n_plain as f64;
        let n_exist = if scene_categories.contains(category.as_str()) {
            n_plain
        } else {
            0.0
        };
        let raw = (n_plain * state.alpha + n_exist * (1.0 - state.alpha)) * state.beta;
        let floor = raw.floor();
        let frac = raw - floor;
        // One draw per category keeps the stream layout fixed.
        let u: f64 = rng.random();
        let n = floor as u32 + u32::from(u < frac);
        out.insert(category.clone(), n);
    }
    out
}
