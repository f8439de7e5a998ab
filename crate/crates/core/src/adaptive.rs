//! Pilot-count controller.
//!
//! After each transmission period the measured SER is compared with a target
//! on a log scale, `loss = log10(SER) − log10(target)`, and the pilot count is
//! moved by `δ·loss` with `δ = δ₁` while the target is missed and `δ = 1`
//! once it is met: multiplicative increase, additive decrease.
//!
//! The pilot count is kept as a real number and rounded up only where an
//! integer count is needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Consecutive in-band iterations required to declare convergence.
pub const SETTLE_ITERATIONS: usize = 3;

// Slack below an integer before rounding up, so that accumulated rounding
// in `np_real` does not push an exact integer to the next count.
const CEIL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    /// Target SER.
    pub target: f64,
    /// Step multiplier while the target is missed.
    pub delta1: f64,
    pub np_min: usize,
    pub np_max: usize,
    pub max_iter: usize,
    /// Convergence band on `|loss|`, in decades.
    pub tol: f64,
}

impl AdaptiveConfig {
    /// Defaults: δ₁ = 2, tolerance 0.1 decade, 200 iterations.
    pub fn new(target: f64, np_min: usize, np_max: usize) -> Self {
        Self {
            target,
            delta1: 2.0,
            np_min,
            np_max,
            max_iter: 200,
            tol: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(Error::Config(format!(
                "target SER must be in (0, 1), got {}",
                self.target
            )));
        }
        if !(self.delta1 >= 1.0) || !self.delta1.is_finite() {
            return Err(Error::Config(format!(
                "delta1 must be finite and >= 1, got {}",
                self.delta1
            )));
        }
        if self.np_min > self.np_max {
            return Err(Error::Config(format!(
                "np_min {} exceeds np_max {}",
                self.np_min, self.np_max
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// One controller step: the pilot count that was used, the SER it produced
/// and the resulting loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveStep {
    pub iter: usize,
    pub np: usize,
    pub ser: f64,
    pub loss: f64,
    /// Continuous pilot count after the update.
    pub np_real: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveState {
    pub np_real: f64,
    pub np_effective: usize,
    pub iter: usize,
    pub history: Vec<AdaptiveStep>,
    /// Current run of consecutive iterations with `|loss| <= tol`.
    pub in_band: usize,
    pub converged: bool,
}

impl AdaptiveState {
    pub fn new(cfg: &AdaptiveConfig) -> Self {
        Self {
            np_real: cfg.np_min as f64,
            np_effective: cfg.np_min,
            iter: 0,
            history: Vec::new(),
            in_band: 0,
            converged: false,
        }
    }
}

pub fn effective_pilots(np_real: f64, cfg: &AdaptiveConfig) -> usize {
    let ceil = (np_real - CEIL_SLACK).ceil();
    if ceil <= cfg.np_min as f64 {
        cfg.np_min
    } else if ceil >= cfg.np_max as f64 {
        cfg.np_max
    } else {
        ceil as usize
    }
}

/// `log10(ser) − log10(target)`.
pub fn ser_loss(ser: f64, target: f64) -> Result<f64> {
    if !(ser > 0.0) || !(target > 0.0) || !ser.is_finite() || !target.is_finite() {
        return Err(Error::Domain(format!(
            "SER and target must be positive, got {ser} and {target}"
        )));
    }
    Ok(ser.log10() - target.log10())
}

/// Applies one update for an observed `ser` with loss `loss`.
pub fn update_pilot_count(state: &AdaptiveState, ser: f64, loss: f64, cfg: &AdaptiveConfig) -> AdaptiveState {
    let delta = if loss < 0.0 { 1.0 } else { cfg.delta1 };
    let np_real = state.np_real + delta * loss;
    let mut history = state.history.clone();
    history.push(AdaptiveStep {
        iter: state.iter,
        np: state.np_effective,
        ser,
        loss,
        np_real,
    });
    let in_band = if loss.abs() <= cfg.tol { state.in_band + 1 } else { 0 };
    AdaptiveState {
        np_real,
        np_effective: effective_pilots(np_real, cfg),
        iter: state.iter + 1,
        history,
        in_band,
        converged: in_band >= SETTLE_ITERATIONS,
    }
}

/// Runs the feedback loop from `np_min` until the loss has stayed within
/// `tol` for three consecutive iterations or `max_iter` is reached.
///
/// `oracle(np)` returns the SER obtained with `np` pilots. It must be
/// positive; see [`crate::detection::SerEstimate::ser_floored`] for Monte-Carlo counts.
pub fn run_adaptive<E>(
    mut oracle: impl FnMut(usize) -> std::result::Result<f64, E>,
    cfg: &AdaptiveConfig,
) -> std::result::Result<AdaptiveState, E>
where
    E: From<Error>,
{
    cfg.validate()?;
    let mut state = AdaptiveState::new(cfg);
    while !state.converged && state.iter < cfg.max_iter {
        let ser = oracle(state.np_effective)?;
        let loss = ser_loss(ser, cfg.target)?;
        state = update_pilot_count(&state, ser, loss, cfg);
    }
    Ok(state)
}
