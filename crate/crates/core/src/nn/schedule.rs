/// Step decay: `base · factor^⌊iteration / period⌋`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub drop_period: u64,
    pub drop_factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base: 1e-3,
            drop_period: 5_000,
            drop_factor: 2.0 / 3.0,
        }
    }
}

impl LrSchedule {
    pub fn at(&self, iteration: u64) -> f64 {
        let drops = iteration / self.drop_period.max(1);
        self.base * self.drop_factor.powi(drops as i32)
    }
}
