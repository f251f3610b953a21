//! Per-class revised-focal centers from a histogram of target scores.
//!
//! Each epoch the predicted target probability of every sample is dropped
//! into one of 25 bins of its class. The next epoch's center for class `k` is
//! `M_k × 0.04`, where `M_k` is the smallest bin index whose cumulative count
//! reaches `cnt[k] · b`. This needs several epochs over the same classes, so
//! it is meant for offline multi-epoch training, not for the online stream.

use crate::error::{Error, Result};

pub const NUM_BINS: usize = 25;
pub const BIN_WIDTH: f64 = 0.04;
pub const DEFAULT_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHistogram {
    bins: Vec<[u64; NUM_BINS]>,
    counts: Vec<u64>,
    fraction: f64,
}

/// Center for one class, flagged when the class had no recorded scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuEstimate {
    pub mu: f64,
    pub bin: usize,
    pub degenerate: bool,
}

/// Bin of a score: `[i·0.04, (i+1)·0.04)`, with 1.0 in the last bin.
pub fn bin_of(score: f64) -> usize {
    ((score * NUM_BINS as f64).floor() as usize).min(NUM_BINS - 1)
}

impl ScoreHistogram {
    pub fn new(num_classes: usize, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::config("histogram fraction b must lie in (0, 1)"));
        }
        Ok(Self {
            bins: vec![[0; NUM_BINS]; num_classes],
            counts: vec![0; num_classes],
            fraction,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, class: usize) -> u64 {
        self.counts.get(class).copied().unwrap_or(0)
    }

    pub fn bins(&self, class: usize) -> Option<&[u64; NUM_BINS]> {
        self.bins.get(class)
    }

    pub fn record_scores(&mut self, class: usize, scores: &[f64]) -> Result<()> {
        if class >= self.counts.len() {
            return Err(Error::input(format!("class {class} out of range")));
        }
        if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::input(format!("score {bad} outside [0, 1]")));
        }
        for &s in scores {
            self.bins[class][bin_of(s)] += 1;
        }
        self.counts[class] += scores.len() as u64;
        Ok(())
    }

    pub fn compute_mu(&self, class: usize) -> Result<MuEstimate> {
        let bins = self
            .bins
            .get(class)
            .ok_or_else(|| Error::input(format!("class {class} out of range")))?;
        let cnt = self.counts[class];
        if cnt == 0 {
            return Ok(MuEstimate {
                mu: 0.0,
                bin: 0,
                degenerate: true,
            });
        }
        let threshold = cnt as f64 * self.fraction;
        let mut cumulative = 0u64;
        let mut bin = NUM_BINS - 1;
        for (i, &b) in bins.iter().enumerate() {
            cumulative += b;
            if cumulative as f64 >= threshold {
                bin = i;
                break;
            }
        }
        Ok(MuEstimate {
            mu: bin as f64 * BIN_WIDTH,
            bin,
            degenerate: false,
        })
    }

    pub fn reset_epoch(&mut self) {
        self.bins.iter_mut().for_each(|b| *b = [0; NUM_BINS]);
        self.counts.iter_mut().for_each(|c| *c = 0);
    }
}

/// Current per-class centers; all zero before the first histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct MuSchedule {
    pub mu: Vec<f64>,
}

impl MuSchedule {
    pub fn new(num_classes: usize) -> Self {
        Self {
            mu: vec![0.0; num_classes],
        }
    }

    /// Recomputes every class from `hist`. Classes without scores keep their
    /// previous center; their indices are returned.
    pub fn update(&mut self, hist: &ScoreHistogram) -> Result<Vec<usize>> {
        let mut degenerate = Vec::new();
        for class in 0..self.mu.len() {
            let est = hist.compute_mu(class)?;
            if est.degenerate {
                degenerate.push(class);
            } else {
                self.mu[class] = est.mu;
            }
        }
        Ok(degenerate)
    }

    pub fn get(&self, class: usize) -> f64 {
        self.mu.get(class).copied().unwrap_or(0.0)
    }
}
