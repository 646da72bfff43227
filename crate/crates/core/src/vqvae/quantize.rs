use crate::nn::Mat;

/// Squared Euclidean distance.
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the codebook row nearest to `z`; ties go to the lowest index.
pub fn nearest_code(z: &[f64], codebook: &Mat) -> usize {
    assert!(codebook.rows() > 0, "empty codebook");
    let mut best = 0;
    let mut best_d = dist2(z, codebook.row(0));
    for k in 1..codebook.rows() {
        let d = dist2(z, codebook.row(k));
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

/// Nearest code for every row of `z`.
pub fn nearest_codes(z: &Mat, codebook: &Mat) -> Vec<usize> {
    (0..z.rows()).map(|i| nearest_code(z.row(i), codebook)).collect()
}

/// `(index, z_q)` for a single latent.
pub fn quantize(z: &[f64], codebook: &Mat) -> (usize, Vec<f64>) {
    let k = nearest_code(z, codebook);
    (k, codebook.row(k).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn picks_nearest() {
        let cb = Mat::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        assert_eq!(quantize(&[0.9, 0.8], &cb), (1, vec![1.0, 1.0]));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let cb = Mat::from_rows(&[[1.0, 0.0], [5.0, 5.0], [4.0, 4.0], [-1.0, 0.0]]).unwrap();
        assert_eq!(nearest_code(&[0.0, 0.0], &cb), 0);
    }

    #[test]
    fn idempotent_on_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cb = Mat::from_vec(16, 3, (0..48).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        for k in 0..16 {
            let (_, zq) = quantize(cb.row(k), &cb);
            assert_eq!(quantize(&zq, &cb).0, k);
        }
    }

    #[test]
    fn matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cb = Mat::from_vec(32, 4, (0..128).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        for _ in 0..100 {
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
            // oracle: full sort of (distance, index) pairs
            let mut all: Vec<(f64, usize)> = (0..32)
                .map(|k| {
                    let d = z.iter().zip(cb.row(k)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                    (d, k)
                })
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            assert_eq!(nearest_code(&z, &cb), all[0].1);
        }
    }
}
