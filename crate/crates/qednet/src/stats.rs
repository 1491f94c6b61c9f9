//! Estimation utilities: running moments, time-weighted quantiles, batch
//! means, and least-squares line fits for tail-exponent regression.

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Running {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Running {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d1 = x - self.mean;
        self.mean += d1 / self.count as f64;
        let d2 = x - self.mean;
        self.m2 += d1 * d2;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    pub fn sample_variance(&self) -> f64 {
        if self.count <= 1 {
            f64::NAN
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        (self.sample_variance() / self.count as f64).sqrt()
    }
}

/// Quantiles of a weighted empirical distribution. `samples` is consumed
/// (sorted in place); weights must be nonnegative with a positive total.
/// The level-q quantile is the smallest value whose cumulative weight
/// reaches q of the total.
pub fn weighted_quantiles(samples: &mut [(f64, f64)], levels: &[f64]) -> Vec<f64> {
    assert!(!samples.is_empty(), "weighted_quantiles needs samples");
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = samples.iter().map(|&(_, w)| w).sum();
    let mut out = Vec::with_capacity(levels.len());
    for &q in levels {
        let target = q.clamp(0.0, 1.0) * total;
        let mut acc = 0.0;
        let mut val = samples.last().unwrap().0;
        for &(x, w) in samples.iter() {
            acc += w;
            if acc >= target {
                val = x;
                break;
            }
        }
        out.push(val);
    }
    out
}

/// Batch-means estimate for a time-weighted series: splits the series into
/// `n_batches` spans of equal total weight, returns (overall mean, standard
/// error of the mean estimated from the batch means).
pub fn batch_means(series: &[(f64, f64)], n_batches: usize) -> (f64, f64) {
    assert!(n_batches >= 2, "batch means needs at least two batches");
    let total_w: f64 = series.iter().map(|&(_, w)| w).sum();
    if total_w <= 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let per = total_w / n_batches as f64;
    let mut batch_sums = vec![0.0; n_batches];
    let mut batch_ws = vec![0.0; n_batches];
    let mut acc = 0.0;
    for &(x, w) in series {
        // Assign the whole sample to the batch its midpoint falls in;
        // samples are tiny relative to batches so no splitting is needed.
        let idx = (((acc + 0.5 * w) / per) as usize).min(n_batches - 1);
        batch_sums[idx] += x * w;
        batch_ws[idx] += w;
        acc += w;
    }
    let mean = series.iter().map(|&(x, w)| x * w).sum::<f64>() / total_w;
    let mut r = Running::default();
    for b in 0..n_batches {
        if batch_ws[b] > 0.0 {
            r.push(batch_sums[b] / batch_ws[b]);
        }
    }
    (mean, r.stderr())
}

/// Ordinary least squares fit y = slope x + intercept with the coefficient
/// of determination R^2.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    assert!(xs.len() >= 2, "line fit needs two points");
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r2)
}
