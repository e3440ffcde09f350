//! Log-domain Monte Carlo accumulation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Running mean of `exp(l_i)` kept in log domain.
///
/// Samples with `l = -inf` (zero integrand) count towards `n` but not the sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogMean {
    pub n: u64,
    shift: f64,
    sum: f64,
    sum_sq: f64,
}

impl Default for LogMean {
    fn default() -> Self {
        Self {
            n: 0,
            shift: f64::NEG_INFINITY,
            sum: 0.0,
            sum_sq: 0.0,
        }
    }
}

impl LogMean {
    pub fn push(&mut self, log_value: f64) {
        self.n += 1;
        if log_value == f64::NEG_INFINITY {
            return;
        }
        if log_value > self.shift {
            self.rescale(log_value);
        }
        let e = (log_value - self.shift).exp();
        self.sum += e;
        self.sum_sq += e * e;
    }

    fn rescale(&mut self, new_shift: f64) {
        if self.shift == f64::NEG_INFINITY {
            self.shift = new_shift;
            return;
        }
        let f = (self.shift - new_shift).exp();
        self.sum *= f;
        self.sum_sq *= f * f;
        self.shift = new_shift;
    }

    pub fn merge(&mut self, other: &LogMean) {
        self.n += other.n;
        if other.shift == f64::NEG_INFINITY {
            return;
        }
        let mut o = *other;
        if o.shift > self.shift {
            self.rescale(o.shift);
        } else {
            o.rescale(self.shift);
        }
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    /// `log` of the sample mean; `-inf` when every sample vanished.
    pub fn log_mean(&self) -> f64 {
        if self.n == 0 || self.sum == 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shift + (self.sum / self.n as f64).ln()
    }

    /// Standard error of the mean divided by the mean, which is the
    /// first-order standard error of [`Self::log_mean`].
    pub fn relative_std_error(&self) -> f64 {
        if self.n < 2 || self.sum == 0.0 {
            return f64::INFINITY;
        }
        let n = self.n as f64;
        let mean = self.sum / n;
        let var = ((self.sum_sq / n) - mean * mean).max(0.0) * n / (n - 1.0);
        (var / n).sqrt() / mean
    }
}

pub const CHUNK: u64 = 2048;

/// Sum `f(i)` for `i in 0..replicas` in log domain, in parallel.
///
/// Replicas are grouped in fixed chunks and the chunk results are merged in
/// index order, so the result does not depend on the thread count.
pub fn par_log_mean<F>(replicas: u64, f: F) -> LogMean
where
    F: Fn(u64) -> f64 + Sync,
{
    let chunks = replicas.div_ceil(CHUNK);
    let parts: Vec<LogMean> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = LogMean::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(replicas) {
                acc.push(f(i));
            }
            acc
        })
        .collect();
    parts.iter().fold(LogMean::default(), |mut acc, p| {
        acc.merge(p);
        acc
    })
}

pub fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::INFINITY);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Linear-interpolated empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}
