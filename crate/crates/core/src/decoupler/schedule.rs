//! Progressive sine schedule for the four task weights.
//!
//! Within its period `[S, S + P)` a loss weight follows
//! `w = 1 + 9·|sin(π·C/T)|` with `T = P·N_B` and `C = (E − S)·N_B + B`,
//! rising from 1 to 10 at mid-period and back; outside the period `w = 1`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four decoupled tasks, in loss order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Seg,
    Cls,
    Txt,
    Rec,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Seg, Task::Cls, Task::Txt, Task::Rec];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Seg => "seg",
            Task::Cls => "cls",
            Task::Txt => "txt",
            Task::Rec => "rec",
        }
    }
}

pub fn schedule_weight(
    epoch: usize,
    batch: usize,
    batches_per_epoch: usize,
    period_start: usize,
    period_epochs: usize,
) -> f64 {
    if batches_per_epoch == 0 || period_epochs == 0 {
        return 1.0;
    }
    if epoch < period_start || epoch >= period_start + period_epochs {
        return 1.0;
    }
    let t = (period_epochs * batches_per_epoch) as f64;
    let c = ((epoch - period_start) * batches_per_epoch + batch) as f64;
    1.0 + 9.0 * (c / t * PI).sin().abs()
}

/// Scheduled weights for one batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// `w1..w4` for seg, cls, txt, rec.
    pub w: [f64; 4],
    pub period_starts: [usize; 4],
    pub period_epochs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressiveSchedule {
    pub period_epochs: usize,
    pub period_starts: [usize; 4],
}

impl ProgressiveSchedule {
    /// Starts staggered by a quarter period: `S_k = k·P/4`.
    pub fn staggered(period_epochs: usize) -> Self {
        Self {
            period_epochs,
            period_starts: [0, 1, 2, 3].map(|k| k * period_epochs / 4),
        }
    }

    pub fn weights(&self, epoch: usize, batch: usize, batches_per_epoch: usize) -> LossWeights {
        LossWeights {
            w: self
                .period_starts
                .map(|s| schedule_weight(epoch, batch, batches_per_epoch, s, self.period_epochs)),
            period_starts: self.period_starts,
            period_epochs: self.period_epochs,
        }
    }

    /// First epoch after every period has ended.
    pub fn end(&self) -> usize {
        self.period_starts.iter().max().copied().unwrap_or(0) + self.period_epochs
    }
}

/// `w1·L_seg + w2·L_cls + w3·L_txt + w4·L_rec`.
pub fn total_loss(losses: [f64; 4], weights: [f64; 4]) -> Result<f64> {
    if let Some(t) = Task::ALL.iter().find(|t| !losses[t.index()].is_finite()) {
        return Err(Error::domain(format!("{} loss is not finite", t.name())));
    }
    Ok(losses.iter().zip(weights).map(|(l, w)| l * w).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_peak() {
        assert_eq!(schedule_weight(0, 0, 4, 0, 10), 1.0);
        // C = T/2 at epoch 5, batch 0
        assert!((schedule_weight(5, 0, 4, 0, 10) - 10.0).abs() < 1e-12);
        assert_eq!(schedule_weight(2, 3, 4, 3, 10), 1.0);
        assert_eq!(schedule_weight(13, 0, 4, 3, 10), 1.0);
    }

    #[test]
    fn staggered_starts() {
        assert_eq!(ProgressiveSchedule::staggered(20).period_starts, [0, 5, 10, 15]);
        assert_eq!(ProgressiveSchedule::staggered(20).end(), 35);
    }

    #[test]
    fn total_is_weighted_sum() {
        assert_eq!(total_loss([1.0; 4], [1.0; 4]).unwrap(), 4.0);
        assert_eq!(total_loss([1.0, 0.0, 0.0, 0.0], [10.0, 1.0, 1.0, 1.0]).unwrap(), 10.0);
        assert!(total_loss([f64::NAN, 0.0, 0.0, 0.0], [1.0; 4]).is_err());
    }
}
