/// Smallest decrease of the best value that counts as an improvement.
pub const MIN_DELTA: f64 = 1e-8;

/// Best value seen and the number of epochs since it last improved.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauTracker {
    pub best: Option<f64>,
    pub stale: usize,
    pub min_delta: f64,
}

impl Default for PlateauTracker {
    fn default() -> Self {
        PlateauTracker { best: None, stale: 0, min_delta: MIN_DELTA }
    }
}

impl PlateauTracker {
    /// Records one epoch; returns whether it improved on the best.
    pub fn observe(&mut self, value: f64) -> bool {
        let improved = match self.best {
            None => value.is_finite(),
            Some(best) => best - value > self.min_delta,
        };
        if improved {
            self.best = Some(value);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        improved
    }
}

/// Multiplies the learning rate by `factor` after `patience` stale epochs.
///
/// The rate is always `lr0 · factor^reductions`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReduceLrOnPlateau {
    pub lr0: f64,
    pub factor: f64,
    pub patience: usize,
    pub reductions: u32,
    tracker: PlateauTracker,
}

impl ReduceLrOnPlateau {
    pub fn new(lr0: f64, factor: f64, patience: usize) -> Self {
        ReduceLrOnPlateau { lr0, factor, patience, reductions: 0, tracker: PlateauTracker::default() }
    }

    pub fn lr(&self) -> f64 {
        self.lr0 * self.factor.powi(self.reductions as i32)
    }

    /// Records one epoch's monitored value and returns the rate for the next epoch.
    pub fn step(&mut self, value: f64) -> f64 {
        self.tracker.observe(value);
        if self.tracker.stale >= self.patience {
            self.reductions += 1;
            self.tracker.stale = 0;
        }
        self.lr()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    tracker: PlateauTracker,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, tracker: PlateauTracker::default() }
    }

    pub fn step(&mut self, value: f64) -> Decision {
        self.tracker.observe(value);
        if self.tracker.stale >= self.patience {
            Decision::Stop
        } else {
            Decision::Continue
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.tracker.best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_losses_keep_the_rate() {
        let mut s = ReduceLrOnPlateau::new(1e-4, 0.95, 5);
        for i in 0..50 {
            assert_eq!(s.step(1.0 - i as f64 * 0.01), 1e-4);
        }
    }

    #[test]
    fn flat_losses_reduce_every_patience_epochs() {
        let mut s = ReduceLrOnPlateau::new(1e-4, 0.95, 5);
        let lrs: Vec<f64> = (0..11).map(|_| s.step(0.5)).collect();
        // epoch 1 sets the best; epochs 2–6 and 7–11 are the two stale runs
        assert!(lrs[..5].iter().all(|&lr| lr == 1e-4));
        assert_eq!(lrs[5], 1e-4 * 0.95);
        assert!((lrs[5] - 9.5e-5).abs() < 1e-20);
        assert_eq!(lrs[10], 1e-4 * 0.95f64.powi(2));
        assert!((lrs[10] - 9.025e-5).abs() < 1e-20);
    }

    #[test]
    fn flat_run_stops_at_epoch_sixteen() {
        let mut e = EarlyStopping::new(15);
        let stop = (1..=100).find(|_| e.step(1.0) == Decision::Stop);
        assert_eq!(stop, Some(16));
    }

    #[test]
    fn late_improvement_resets_patience() {
        let mut e = EarlyStopping::new(15);
        e.step(1.0);
        for _ in 0..13 {
            assert_eq!(e.step(1.0), Decision::Continue);
        }
        assert_eq!(e.step(0.9), Decision::Continue);
        for _ in 0..14 {
            assert_eq!(e.step(0.95), Decision::Continue);
        }
        assert_eq!(e.step(0.95), Decision::Stop);
        assert_eq!(e.best(), Some(0.9));
    }

    #[test]
    fn sub_delta_changes_are_not_improvements() {
        let mut t = PlateauTracker::default();
        assert!(t.observe(1.0));
        assert!(!t.observe(1.0 - 1e-9));
        assert!(t.observe(1.0 - 1e-6));
        assert!(!t.observe(f64::NAN));
    }
}
