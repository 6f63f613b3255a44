use serde::{Deserialize, Serialize};

/// Geometric decay from `initial` to `final_lr` over the first
/// `drop_fraction` of training, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub final_lr: f64,
    pub drop_fraction: f64,
    pub iterations: usize,
}

impl LrSchedule {
    pub fn at(&self, iteration: usize) -> f64 {
        let knee = (self.drop_fraction * self.iterations as f64).max(0.0);
        if knee <= 0.0 || iteration as f64 >= knee {
            return self.final_lr;
        }
        let frac = iteration as f64 / knee;
        self.initial * (self.final_lr / self.initial).powf(frac)
    }
}
