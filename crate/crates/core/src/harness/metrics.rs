use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

/// Per-coordinate mean squared error.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::InvalidConfig("mse of empty signals".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// `10 log₁₀(range² / mse)`.
pub fn psnr(mse: f64, range: f64) -> f64 {
    10.0 * (range * range / mse).log10()
}

/// 2-Wasserstein distance between two 1-D empirical distributions, given
/// sorted samples. Sample counts may differ.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len() as u128, b.len() as u128);
    // Walk the merged quantile breakpoints i/n and j/m on the integer grid
    // of step 1/(n m), so the result is symmetric in (a, b).
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0u128;
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i as u128 + 1) * m;
        let next_b = (j as u128 + 1) * n;
        let next = next_a.min(next_b);
        acc += (a[i] - b[j]).powi(2) * (next - prev) as f64;
        prev = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    (acc / (n * m) as f64).sqrt()
}

/// Mean over `projections` random unit directions of the 1-D 2-Wasserstein
/// distance between the projected samples.
pub fn sliced_wasserstein(a: &[Vec<f64>], b: &[Vec<f64>], projections: usize, rng: &mut dyn RngCore) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidConfig("sliced Wasserstein needs at least 2 samples per set".into()));
    }
    if projections == 0 {
        return Err(Error::InvalidConfig("at least one projection is required".into()));
    }
    let d = a[0].len();
    for v in a.iter().chain(b) {
        check_dim(d, v.len())?;
    }
    let mut total = 0.0;
    let mut pa = vec![0.0; a.len()];
    let mut pb = vec![0.0; b.len()];
    for _ in 0..projections {
        let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|x| *x /= norm);
        let project = |v: &Vec<f64>| v.iter().zip(&dir).map(|(x, u)| x * u).sum::<f64>();
        for (p, v) in pa.iter_mut().zip(a) {
            *p = project(v);
        }
        for (p, v) in pb.iter_mut().zip(b) {
            *p = project(v);
        }
        pa.sort_by(f64::total_cmp);
        pb.sort_by(f64::total_cmp);
        total += wasserstein_1d(&pa, &pb);
    }
    Ok(total / projections as f64)
}

/// Sample mean and standard deviation (divisor `n - 1`; zero for `n = 1`).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psnr_relation() {
        assert!((psnr(0.01, 1.0) - 20.0).abs() < 1e-12);
        let m = mse(&[0.0, 1.0], &[0.5, 1.5]).unwrap();
        assert_eq!(m, 0.25);
        assert!((psnr(m, 2.0) - 10.0 * (16.0f64).log10()).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_distance() {
        assert_eq!(wasserstein_1d(&[0.0, 1.0], &[0.0, 1.0]), 0.0);
        // Quantile functions: a = 0 on (0, 1/2], 1 on (1/2, 1]; b = 0.5 throughout.
        assert!((wasserstein_1d(&[0.0, 1.0], &[0.5]) - 0.5).abs() < 1e-15);
        // Unequal counts: a = {0, 3}, b = {0, 0, 3}; they differ by 3 on (1/2, 2/3].
        let w = wasserstein_1d(&[0.0, 3.0], &[0.0, 0.0, 3.0]);
        assert!((w - (9.0f64 / 6.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn shifted_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<Vec<f64>> = (0..20_000).map(|_| vec![rng.sample(StandardNormal)]).collect();
        let b: Vec<Vec<f64>> = (0..20_000)
            .map(|_| vec![1.0 + rng.sample::<f64, _>(StandardNormal)])
            .collect();
        let sw = sliced_wasserstein(&a, &b, 16, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!((sw - 1.0).abs() < 0.05, "{sw}");
        assert_eq!(sliced_wasserstein(&a, &a, 16, &mut ChaCha8Rng::seed_from_u64(2)).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_under_a_shared_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<Vec<f64>> = (0..137).map(|_| (0..3).map(|_| rng.gen::<f64>()).collect()).collect();
        let b: Vec<Vec<f64>> = (0..91).map(|_| (0..3).map(|_| rng.gen::<f64>() * 2.0).collect()).collect();
        let ab = sliced_wasserstein(&a, &b, 128, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let ba = sliced_wasserstein(&b, &a, 128, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(ab, ba);
        assert!(sliced_wasserstein(&a[..1], &b, 8, &mut rng).is_err());
    }
}
