/// Linear warmup, hold at `peak`, then step decay over the final `decay_window` epochs.
///
/// Inside the decay window the rate is
/// `peak * decay_factor^(floor((epoch - start) / decay_every) + 1)`, so the
/// first decay applies as soon as the window opens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub steps_per_epoch: usize,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub decay_window: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        let warmup = self.warmup_epochs * self.steps_per_epoch;
        if step < warmup {
            return self.peak * step as f64 / warmup as f64;
        }
        let epoch = step / self.steps_per_epoch.max(1);
        let start = self.epochs.saturating_sub(self.decay_window);
        if self.decay_window == 0 || epoch < start {
            return self.peak;
        }
        let k = (epoch - start) / self.decay_every.max(1) + 1;
        self.peak * self.decay_factor.powi(k as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::RunConfig;
    use proptest::prelude::*;

    fn crosstask() -> LrSchedule {
        RunConfig::preset("crosstask").unwrap().diffusion.lr_schedule()
    }

    #[test]
    fn warmup_examples() {
        let s = crosstask();
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(20 * 200), 5e-4);
        assert!((s.lr_at(10 * 200) - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn decay_window_steps() {
        let s = crosstask();
        assert_eq!(s.lr_at(89 * 200 + 199), 5e-4);
        assert_eq!(s.lr_at(90 * 200), 2.5e-4);
        assert_eq!(s.lr_at(94 * 200 + 199), 2.5e-4);
        assert_eq!(s.lr_at(95 * 200), 1.25e-4);
        assert_eq!(s.lr_at(119 * 200), 5e-4 * 0.5f64.powi(6));
        let niv = RunConfig::preset("niv").unwrap().diffusion.lr_schedule();
        assert_eq!(niv.lr_at(90 * 50), 3e-4);
        assert_eq!(niv.lr_at(129 * 50 + 49), 3e-4);
    }

    proptest! {
        #[test]
        fn continuous_at_warmup_end_and_piecewise_constant_in_decay(step in 0usize..24_000) {
            let s = crosstask();
            let w = 20 * 200;
            prop_assert!((s.lr_at(w - 1) - s.lr_at(w)).abs() <= s.peak / w as f64 + 1e-18);
            prop_assert!(s.lr_at(step) >= 0.0 && s.lr_at(step) <= s.peak);
            if step >= 90 * 200 {
                let epoch_start = step / 1000 * 1000;
                prop_assert_eq!(s.lr_at(step), s.lr_at(epoch_start.max(90 * 200)));
            }
        }
    }
}
