//! Seeded synthetic datasets for tests, examples and the experiment runner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::Dataset;

/// Gaussian blobs around uniformly placed centers, rescaled to `[0, 1]`.
pub fn clustered_points(n: usize, dim: usize, clusters: usize, spread: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = clusters.max(1);
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mut values = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = &centers[rng.random_range(0..clusters)];
        for &mu in c {
            let z: f64 = StandardNormal.sample(&mut rng);
            values.push(mu + spread * z);
        }
    }
    let mut ds = Dataset::from_rows(n, dim, values, None).expect("consistent shape");
    ds.rescale_unit();
    ds
}

/// Points uniform in `[0, 1]^dim` with `y = sin(2π x₁) + x₂² + noise`
/// (`x₂` omitted when `dim == 1`).
pub fn regression(n: usize, dim: usize, noise_sd: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        let mut y = (2.0 * std::f64::consts::PI * x[0]).sin();
        if dim > 1 {
            y += x[1] * x[1];
        }
        let z: f64 = StandardNormal.sample(&mut rng);
        labels.push(y + noise_sd * z);
        values.extend(x);
    }
    Dataset::from_rows(n, dim, values, Some(labels)).expect("consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_scaled() {
        let a = clustered_points(50, 3, 4, 0.1, 1);
        let b = clustered_points(50, 3, 4, 0.1, 1);
        assert_eq!(a, b);
        for i in 0..a.len() {
            assert!(a.point(i).iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
        let r = regression(20, 2, 0.1, 3);
        assert_eq!(r.labels().unwrap().len(), 20);
    }
}
