/// Early stopping on a per-epoch loss trace.
///
/// An epoch counts as an improvement when the loss undercuts the best value
/// seen so far by at least `min_improvement`. The rule fires once `patience`
/// consecutive epochs pass without one.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingRule {
    pub min_improvement: f64,
    pub patience: usize,
    best: f64,
    stale: usize,
}

pub const DEFAULT_MIN_IMPROVEMENT: f64 = 3e-4;
pub const DEFAULT_PATIENCE: usize = 100;

impl Default for StoppingRule {
    fn default() -> Self {
        Self::new(DEFAULT_MIN_IMPROVEMENT, DEFAULT_PATIENCE)
    }
}

impl StoppingRule {
    pub fn new(min_improvement: f64, patience: usize) -> Self {
        Self {
            min_improvement,
            patience,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn stale(&self) -> usize {
        self.stale
    }

    /// Feeds one epoch's loss; returns `true` when training should stop.
    pub fn update(&mut self, loss: f64) -> bool {
        if self.best.is_infinite() {
            self.best = loss;
            return false;
        }
        if self.best - loss >= self.min_improvement {
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.best = self.best.min(loss);
        self.stale >= self.patience
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STEP: f64 = 1.0 / 1024.0;

    fn fire_epoch(rule: &mut StoppingRule, trace: impl Iterator<Item = f64>) -> Option<usize> {
        trace.enumerate().find_map(|(i, l)| rule.update(l).then_some(i))
    }

    #[test]
    fn exact_min_improvement_never_fires() {
        let mut rule = StoppingRule::new(STEP, 10);
        let trace = (0..500).map(|k| 1.0 - k as f64 * STEP);
        assert_eq!(fire_epoch(&mut rule, trace), None);
    }

    #[test]
    fn half_improvement_fires_after_patience() {
        let mut rule = StoppingRule::new(STEP, 10);
        let trace = (0..500).map(|k| 1.0 - k as f64 * STEP / 2.0);
        // Epoch 0 sets the baseline; epochs 1..=10 are the stale ones.
        assert_eq!(fire_epoch(&mut rule, trace), Some(10));
    }

    #[test]
    fn improvement_resets_counter() {
        let mut rule = StoppingRule::new(0.1, 3);
        assert!(!rule.update(1.0));
        assert!(!rule.update(1.0));
        assert!(!rule.update(1.0));
        assert!(!rule.update(0.5));
        assert_eq!(rule.stale(), 0);
        assert!(!rule.update(0.5));
        assert!(!rule.update(0.5));
        assert!(rule.update(0.5));
    }
}
