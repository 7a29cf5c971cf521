//! Primitive draws used by the mechanisms.

use rand::Rng;

use crate::dist::DiscreteDistribution;
use crate::error::{Error, Result};

/// One draw from `Laplace(0, scale)` by inverting the CDF of a uniform draw.
///
/// With `u` uniform on `(-1/2, 1/2)`, `-scale * sign(u) * ln(1 - 2|u|)` has
/// mean 0 and variance `2 * scale^2`.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Result<f64> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::param(
            "scale",
            format!("Laplace scale must be positive and finite, got {scale}"),
        ));
    }
    Ok(laplace_unchecked(rng, scale))
}

pub(crate) fn laplace_unchecked<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        // u = -1/2 is the only value in [-1/2, 1/2) that maps to an infinite draw
        if u > -0.5 {
            let mag = -(1.0 - 2.0 * u.abs()).ln();
            return if u < 0.0 { -scale * mag } else { scale * mag };
        }
    }
}

/// Draws label `y` with probability `dist.prob(y)` by inverse CDF.
pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, dist: &DiscreteDistribution) -> usize {
    let u: f64 = rng.random();
    let probs = dist.probs();
    let mut acc = 0.0;
    for (y, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return y;
        }
    }
    // u landed in the rounding gap above the last partial sum
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("validated distribution has positive mass")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::total_variation;
    use crate::rng::RngStream;

    #[test]
    fn laplace_rejects_bad_scale() {
        let mut rng = RngStream::from_seed(0).rng();
        assert!(sample_laplace(&mut rng, 0.0).is_err());
        assert!(sample_laplace(&mut rng, -1.0).is_err());
        assert!(sample_laplace(&mut rng, f64::INFINITY).is_err());
        assert!(sample_laplace(&mut rng, f64::NAN).is_err());
    }

    #[test]
    fn laplace_moments() {
        let mut rng = RngStream::new(42, 1).rng();
        let m = 1_000_000;
        let draws: Vec<f64> = (0..m).map(|_| sample_laplace(&mut rng, 1.0).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / m as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 2.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn laplace_is_deterministic() {
        let draw = |s| {
            let mut rng = RngStream::new(9, s).rng();
            (0..8).map(|_| sample_laplace(&mut rng, 2.5).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
        assert_ne!(draw(4), draw(5));
    }

    #[test]
    fn categorical_point_mass() {
        for seed in 0..50 {
            let mut rng = RngStream::from_seed(seed).rng();
            let d = DiscreteDistribution::new(vec![1.0, 0.0]).unwrap();
            assert_eq!(sample_categorical(&mut rng, &d), 0);
        }
    }

    fn frequencies(dist: &DiscreteDistribution, m: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::from_seed(seed).rng();
        let mut counts = vec![0usize; dist.num_outcomes()];
        for _ in 0..m {
            counts[sample_categorical(&mut rng, dist)] += 1;
        }
        counts.into_iter().map(|c| c as f64 / m as f64).collect()
    }

    #[test]
    fn categorical_fair_coin() {
        let d = DiscreteDistribution::new(vec![0.5, 0.5]).unwrap();
        let f = frequencies(&d, 1_000_000, 3);
        // 3 sigma of a binomial proportion at m = 1e6 is 0.0015
        assert!((f[0] - 0.5).abs() < 0.002, "{f:?}");
    }

    #[test]
    fn categorical_three_way() {
        let d = DiscreteDistribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        let m = 1_000_000;
        let f = frequencies(&d, m, 4);
        let tv = total_variation(&f, d.probs());
        assert!(tv < 0.005, "tv {tv}");
        assert!(tv < 4.0 * (3.0 / m as f64).sqrt());
    }
}
