//! Batch-adaptive random-walk proposal scales.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Target acceptance for scalar updates.
pub const TARGET_SCALAR: f64 = 0.41;
/// Target acceptance for vector updates.
pub const TARGET_BLOCK: f64 = 0.234;

/// After batch `b`, `log σ += γ_b (acceptance − target)` with
/// `γ_b = min(cap, c0 · b^{-c1})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub batch: usize,
    pub c0: f64,
    pub c1: f64,
    pub cap: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self { batch: 50, c0: 1.0, c1: 0.8, cap: 1.0 }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || !(self.c0 > 0.0) || !(self.c1 > 0.0 && self.c1 <= 1.0) || !(self.cap > 0.0) {
            return Err(Error::Config("adaptation needs batch >= 1, c0 > 0, c1 in (0, 1], cap > 0".into()));
        }
        Ok(())
    }

    /// Step size after batch `b` (1-based).
    pub fn gain(&self, b: usize) -> f64 {
        (self.c0 * (b.max(1) as f64).powf(-self.c1)).min(self.cap)
    }
}

/// Proposal scale of one update with its running acceptance counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveScale {
    pub log_scale: f64,
    pub target: f64,
    /// Counts in the current batch.
    pub accepted: u64,
    pub proposed: u64,
    /// Counts over the whole run.
    pub total_accepted: u64,
    pub total_proposed: u64,
    /// Proposals rejected for leaving the parameter space or failing numerically.
    pub invalid: u64,
}

impl AdaptiveScale {
    pub fn new(scale: f64, target: f64) -> Self {
        Self { log_scale: scale.ln(), target, accepted: 0, proposed: 0, total_accepted: 0, total_proposed: 0, invalid: 0 }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.total_proposed += 1;
        if accepted {
            self.accepted += 1;
            self.total_accepted += 1;
        }
    }

    pub fn record_invalid(&mut self) {
        self.invalid += 1;
        self.record(false);
    }

    /// Ends batch `b`: moves the scale when `adapting`, then clears the batch counts.
    pub fn end_batch(&mut self, b: usize, cfg: &AdaptConfig, adapting: bool) {
        if adapting && self.proposed > 0 {
            let rate = self.accepted as f64 / self.proposed as f64;
            self.log_scale += cfg.gain(b) * (rate - self.target);
        }
        self.accepted = 0;
        self.proposed = 0;
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.total_proposed == 0 {
            f64::NAN
        } else {
            self.total_accepted as f64 / self.total_proposed as f64
        }
    }
}
