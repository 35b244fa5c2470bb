//! Grid-based 1-D density oracle: trapezoid-normalized discrete densities
//! with moments, quantiles, inverse-CDF sampling, and binned masses for
//! total-variation comparisons.

use rand::Rng;

/// A normalized density tabulated on a uniform grid.
#[derive(Debug, Clone)]
pub struct GridDensity {
    pub points: Vec<f64>,
    /// Normalized density values at the points.
    pub pdf: Vec<f64>,
    pub step: f64,
    /// False when the requested range clips visible mass (boundary density
    /// above 1e-8 of the peak).
    pub coverage_ok: bool,
}

/// Tabulate and trapezoid-normalize `exp(logpdf)` on `[lo, hi]`.
pub fn grid_density(logpdf: impl Fn(f64) -> f64, lo: f64, hi: f64, n_points: usize) -> GridDensity {
    assert!(n_points >= 2 && hi > lo);
    let step = (hi - lo) / (n_points - 1) as f64;
    let points: Vec<f64> = (0..n_points).map(|i| lo + i as f64 * step).collect();
    let logs: Vec<f64> = points.iter().map(|&x| logpdf(x)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut pdf: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let mut mass = 0.0;
    for i in 0..n_points - 1 {
        mass += 0.5 * (pdf[i] + pdf[i + 1]) * step;
    }
    for v in &mut pdf {
        *v /= mass;
    }
    let peak = pdf.iter().copied().fold(0.0, f64::max);
    let coverage_ok = pdf[0] <= 1e-8 * peak && pdf[n_points - 1] <= 1e-8 * peak;
    if !coverage_ok {
        log::warn!("grid density range [{lo}, {hi}] clips visible probability mass");
    }
    GridDensity {
        points,
        pdf,
        step,
        coverage_ok,
    }
}

impl GridDensity {
    pub fn mean(&self) -> f64 {
        self.trapezoid(|x, f| x * f)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.trapezoid(|x, f| (x - m).powi(2) * f)
    }

    fn trapezoid(&self, integrand: impl Fn(f64, f64) -> f64) -> f64 {
        let mut total = 0.0;
        for i in 0..self.points.len() - 1 {
            let a = integrand(self.points[i], self.pdf[i]);
            let b = integrand(self.points[i + 1], self.pdf[i + 1]);
            total += 0.5 * (a + b) * self.step;
        }
        total
    }

    /// Cumulative masses at the grid points (starts at 0, ends at 1).
    pub fn cdf(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len());
        let mut acc = 0.0;
        out.push(0.0);
        for i in 0..self.points.len() - 1 {
            acc += 0.5 * (self.pdf[i] + self.pdf[i + 1]) * self.step;
            out.push(acc);
        }
        let total = *out.last().unwrap();
        for v in &mut out {
            *v /= total;
        }
        out
    }

    /// Quantile by linear interpolation of the grid CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        assert!((0.0..=1.0).contains(&p));
        let cdf = self.cdf();
        match cdf.iter().position(|&c| c >= p) {
            Some(0) => self.points[0],
            Some(i) => {
                let (c0, c1) = (cdf[i - 1], cdf[i]);
                let t = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
                self.points[i - 1] + t * self.step
            }
            None => *self.points.last().unwrap(),
        }
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random())
    }

    /// Probability mass inside each `[edges[i], edges[i+1])` bin.
    pub fn bin_masses(&self, edges: &[f64]) -> Vec<f64> {
        let cdf = self.cdf();
        let cdf_at = |x: f64| -> f64 {
            if x <= self.points[0] {
                return 0.0;
            }
            if x >= *self.points.last().unwrap() {
                return 1.0;
            }
            let i = ((x - self.points[0]) / self.step).floor() as usize;
            let i = i.min(self.points.len() - 2);
            let t = (x - self.points[i]) / self.step;
            cdf[i] + t * (cdf[i + 1] - cdf[i])
        };
        edges
            .windows(2)
            .map(|w| (cdf_at(w[1]) - cdf_at(w[0])).max(0.0))
            .collect()
    }

    /// Total-variation distance between the binned grid masses and the
    /// histogram of `samples` over the same edges (out-of-range samples land
    /// in the end bins).
    pub fn tv_distance_to_samples(&self, samples: &[f64], edges: &[f64]) -> f64 {
        let expected = self.bin_masses(edges);
        let mut counts = vec![0usize; edges.len() - 1];
        for &s in samples {
            let mut bin = edges.len() - 2;
            for (i, w) in edges.windows(2).enumerate() {
                if s < w[1] {
                    bin = i;
                    break;
                }
            }
            counts[bin] += 1;
        }
        let n = samples.len() as f64;
        0.5 * expected
            .iter()
            .zip(&counts)
            .map(|(&e, &c)| (e - c as f64 / n).abs())
            .sum::<f64>()
    }
}
