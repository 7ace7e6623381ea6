//! Streaming ensemble statistics.

use serde::Serialize;

/// Welford accumulator; `merge` combines partial results (Chan et al.).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn from_slice(values: &[f64]) -> Self {
        let mut s = Self::default();
        values.iter().for_each(|&v| s.push(v));
        s
    }

    pub fn push(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

/// Per-component statistics of vector-valued samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VectorStats {
    components: Vec<RunningStats>,
}

impl VectorStats {
    pub fn new(len: usize) -> Self {
        Self { components: vec![RunningStats::default(); len] }
    }

    pub fn push(&mut self, values: &[f64]) {
        if self.components.is_empty() {
            self.components = vec![RunningStats::default(); values.len()];
        }
        assert_eq!(values.len(), self.components.len(), "sample length changed");
        for (s, &v) in self.components.iter_mut().zip(values) {
            s.push(v);
        }
    }

    pub fn merge(&mut self, other: &VectorStats) {
        if self.components.is_empty() {
            self.components = other.components.clone();
            return;
        }
        for (s, o) in self.components.iter_mut().zip(&other.components) {
            s.merge(o);
        }
    }

    pub fn count(&self) -> u64 {
        self.components.first().map_or(0, |s| s.count())
    }

    pub fn mean(&self) -> Vec<f64> {
        self.components.iter().map(|s| s.mean()).collect()
    }

    pub fn components(&self) -> &[RunningStats] {
        &self.components
    }
}
