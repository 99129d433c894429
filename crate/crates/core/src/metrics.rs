//! Normalized step losses, NMSE summaries and moving averages.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Planar2;
use crate::model::PredictionOutcome;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("cannot summarize an empty loss sequence")]
    Empty,
    #[error("moving-average window must be at least 1")]
    ZeroWindow,
    #[error("standard deviation of {0} must be positive and finite")]
    BadStd(&'static str),
}

/// Per-variable mean and standard deviation used to z-score model inputs and
/// outputs. The displacement std is pooled over both components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    /// `(p_x, p_y, u_x, u_y)` of the object-frame robot position and motion.
    pub input_mean: [f64; 4],
    pub input_std: [f64; 4],
    pub dp_mean: [f64; 2],
    pub dp_std: f64,
    pub dw_mean: f64,
    pub dw_std: f64,
}

impl NormStats {
    /// Zero means and unit stds.
    pub fn identity() -> Self {
        Self {
            input_mean: [0.0; 4],
            input_std: [1.0; 4],
            dp_mean: [0.0; 2],
            dp_std: 1.0,
            dw_mean: 0.0,
            dw_std: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        const NAMES: [&str; 4] = ["p_r_o.x", "p_r_o.y", "u_r_o.x", "u_r_o.y"];
        let good = |s: f64| s.is_finite() && s > 0.0;
        for (s, name) in self.input_std.iter().zip(NAMES) {
            if !good(*s) {
                return Err(MetricsError::BadStd(name));
            }
        }
        if !good(self.dp_std) {
            return Err(MetricsError::BadStd("dp_o"));
        }
        if !good(self.dw_std) {
            return Err(MetricsError::BadStd("dw_o"));
        }
        Ok(())
    }

    /// The prediction that always outputs the training-set mean outcome.
    pub fn mean_outcome(&self) -> PredictionOutcome {
        PredictionOutcome {
            dp_o: Planar2::new(self.dp_mean[0], self.dp_mean[1]),
            dw_o: self.dw_mean,
        }
    }
}

/// Normalized squared errors of one prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pos_x: f64,
    pub pos_y: f64,
    pub rot: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

pub fn step_loss(
    pred: &PredictionOutcome,
    actual: &PredictionOutcome,
    stats: &NormStats,
) -> LossBreakdown {
    let vp = stats.dp_std * stats.dp_std;
    let vw = stats.dw_std * stats.dw_std;
    let ex = pred.dp_o.x - actual.dp_o.x;
    let ey = pred.dp_o.y - actual.dp_o.y;
    let ew = pred.dw_o - actual.dw_o;
    let pos_x = ex * ex / vp;
    let pos_y = ey * ey / vp;
    let rot = ew * ew / vw;
    LossBreakdown {
        pos_x,
        pos_y,
        rot,
        total: pos_x + pos_y + rot,
    }
}

/// Gradient of `step_loss(..).total` with respect to the prediction.
pub fn step_loss_grad(
    pred: &PredictionOutcome,
    actual: &PredictionOutcome,
    stats: &NormStats,
) -> PredictionOutcome {
    let vp = stats.dp_std * stats.dp_std;
    let vw = stats.dw_std * stats.dw_std;
    PredictionOutcome {
        dp_o: (pred.dp_o - actual.dp_o) * (2.0 / vp),
        dw_o: 2.0 * (pred.dw_o - actual.dw_o) / vw,
    }
}

/// Positional and rotational NMSE over a sequence of step losses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NmseSummary {
    pub pos: f64,
    pub rot: f64,
}

pub fn nmse_summary(losses: &[LossBreakdown]) -> Result<NmseSummary, MetricsError> {
    if losses.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = losses.len() as f64;
    let pos = losses
        .iter()
        .map(|l| 0.5 * (l.pos_x + l.pos_y))
        .sum::<f64>()
        / n;
    let rot = losses.iter().map(|l| l.rot).sum::<f64>() / n;
    Ok(NmseSummary { pos, rot })
}

pub fn mean_total(losses: &[LossBreakdown]) -> Result<f64, MetricsError> {
    if losses.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(losses.iter().map(|l| l.total).sum::<f64>() / losses.len() as f64)
}

/// Trailing moving average; the first `window - 1` entries average the
/// available prefix.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>, MetricsError> {
    if window == 0 {
        return Err(MetricsError::ZeroWindow);
    }
    Ok((0..series.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let slice = &series[lo..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}
