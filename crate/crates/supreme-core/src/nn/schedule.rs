//! Cosine annealing with warm restarts.

use super::ops::{NnError, Result};

/// eta(t) = eta_min + (eta_max - eta_min)/2 * (1 + cos(pi * t_cur / T_i))
/// where t_cur restarts at the end of each cycle and cycle i has length
/// T_i = t0 * t_mult^i.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CosineRestartSchedule {
    pub eta_max: f64,
    pub eta_min: f64,
    pub t0: u64,
    pub t_mult: u64,
}

impl CosineRestartSchedule {
    pub fn new(eta_max: f64, eta_min: f64, t0: u64, t_mult: u64) -> Result<Self> {
        if t0 == 0 || t_mult == 0 {
            return Err(NnError::Config(format!("schedule: t0 {t0}, t_mult {t_mult} must be positive")));
        }
        if !(eta_max.is_finite() && eta_min.is_finite()) || eta_min < 0.0 || eta_max < eta_min {
            return Err(NnError::Config(format!(
                "schedule: eta_max {eta_max} must be >= eta_min {eta_min} >= 0"
            )));
        }
        Ok(CosineRestartSchedule { eta_max, eta_min, t0, t_mult })
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let (t_cur, t_i) = if self.t_mult == 1 {
            (step % self.t0, self.t0)
        } else {
            let mut rem = step;
            let mut len = self.t0;
            while rem >= len {
                rem -= len;
                len = len.saturating_mul(self.t_mult);
            }
            (rem, len)
        };
        let cos = (std::f64::consts::PI * t_cur as f64 / t_i as f64).cos();
        self.eta_min + 0.5 * (self.eta_max - self.eta_min) * (1.0 + cos)
    }
}
