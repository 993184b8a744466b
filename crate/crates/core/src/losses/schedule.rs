use super::LossError;

/// Linear warm-up followed by polynomial decay to zero.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WarmPolySchedule {
    pub warm_iters: u64,
    pub warm_start: f64,
    pub base: f64,
    pub total_iters: u64,
    pub gamma: f64,
}

impl Default for WarmPolySchedule {
    /// 50 epochs of 2500 iterations.
    fn default() -> Self {
        Self {
            warm_iters: 4000,
            warm_start: 1e-6,
            base: 0.01,
            total_iters: 50 * 2500,
            gamma: 0.9,
        }
    }
}

impl WarmPolySchedule {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.warm_iters >= self.total_iters {
            return Err(LossError::InvalidConfig(format!(
                "warm_iters {} must be below total_iters {}",
                self.warm_iters, self.total_iters
            )));
        }
        Ok(())
    }

    /// Learning rate at `iter`; iterations past `total_iters` clamp to the end
    /// of the schedule.
    pub fn lr(&self, iter: u64) -> f64 {
        let iter = iter.min(self.total_iters);
        if iter <= self.warm_iters {
            if self.warm_iters == 0 {
                return self.base;
            }
            let t = iter as f64 / self.warm_iters as f64;
            self.warm_start + (self.base - self.warm_start) * t
        } else {
            let progress = (iter - self.warm_iters) as f64 / (self.total_iters - self.warm_iters) as f64;
            self.base * (1.0 - progress).powf(self.gamma)
        }
    }
}
