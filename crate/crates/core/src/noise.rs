//! Noise samplers.
//!
//! Gaussian draws use the ziggurat sampler of `rand_distr`. Laplace draws use
//! the inverse CDF: with `u` uniform on `(-1/2, 1/2)`,
//! `x = -b * sgn(u) * ln(1 - 2|u|)`. The Laplace scale `b` has variance `2b^2`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Distribution family of a noise term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseFamily {
    Gaussian,
    Laplace,
}

impl NoiseFamily {
    /// Variance of one draw at `scale` (standard deviation or Laplace `b`).
    pub fn variance(self, scale: f64) -> f64 {
        match self {
            NoiseFamily::Gaussian => scale * scale,
            NoiseFamily::Laplace => 2.0 * scale * scale,
        }
    }

    /// One draw at `scale`. A zero scale returns exactly zero and consumes
    /// no randomness.
    pub fn sample<R: Rng + ?Sized>(self, scale: f64, rng: &mut R) -> f64 {
        if scale == 0.0 {
            return 0.0;
        }
        match self {
            NoiseFamily::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            }
            NoiseFamily::Laplace => laplace(scale, rng),
        }
    }

    /// `n` independent draws at `scale`.
    pub fn sample_vec<R: Rng + ?Sized>(self, scale: f64, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| self.sample(scale, rng)).collect()
    }
}

fn laplace<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        if u == -0.5 {
            continue;
        }
        let mag = -b * (-2.0 * u.abs()).ln_1p();
        return if u < 0.0 { -mag } else { mag };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::stream_rng;

    fn moments(family: NoiseFamily, scale: f64, n: usize) -> (f64, f64) {
        let mut rng = stream_rng(5, 0);
        let xs = family.sample_vec(scale, n, &mut rng);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, var)
    }

    #[test]
    fn gaussian_moments() {
        let (m, v) = moments(NoiseFamily::Gaussian, 2.0, 200_000);
        assert!(m.abs() < 0.02);
        assert!((v / 4.0 - 1.0).abs() < 0.02);
    }

    #[test]
    fn laplace_moments() {
        let (m, v) = moments(NoiseFamily::Laplace, 2.0, 200_000);
        assert!(m.abs() < 0.03);
        assert!((v / 8.0 - 1.0).abs() < 0.03);
    }

    #[test]
    fn laplace_median_absolute_value_is_b_ln2() {
        let mut rng = stream_rng(6, 0);
        let mut xs: Vec<f64> = NoiseFamily::Laplace
            .sample_vec(1.0, 100_001, &mut rng)
            .into_iter()
            .map(f64::abs)
            .collect();
        xs.sort_by(f64::total_cmp);
        assert!((xs[50_000] - std::f64::consts::LN_2).abs() < 0.01);
    }

    #[test]
    fn zero_scale_is_zero() {
        let mut rng = stream_rng(1, 1);
        assert_eq!(NoiseFamily::Laplace.sample(0.0, &mut rng), 0.0);
        assert_eq!(NoiseFamily::Gaussian.sample(0.0, &mut rng), 0.0);
    }
}
