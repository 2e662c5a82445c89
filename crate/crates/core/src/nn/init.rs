//! Deterministic weight initialization.
//!
//! Dense weights are orthogonal (gain √2 before a ReLU, 1 elsewhere), biases
//! and designated output projections are zero. All random draws happen in
//! `f64` and are cast to the working precision afterwards, so the `f32` and
//! `f64` builds of a network start from bit-identical draw sequences.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::scalar::Scalar;

/// Gain for weights feeding a ReLU.
pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

/// Orthogonal `(rows, cols)` matrix scaled by `gain`.
///
/// Columns are orthonormal when `rows >= cols`, rows otherwise (the transpose
/// convention used by common deep-learning libraries). Gram-Schmidt runs in
/// `f64` with one re-orthogonalization pass.
pub fn orthogonal<F: Scalar, R: Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Array2<F> {
    let transpose = rows < cols;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    let mut a = Array2::<f64>::zeros((r, c));
    for i in 0..r {
        for j in 0..c {
            a[[i, j]] = rng.sample(StandardNormal);
        }
    }
    // Modified Gram-Schmidt over columns, re-orthogonalized once.
    for k in 0..c {
        for _pass in 0..2 {
            for j in 0..k {
                let mut dot = 0.0;
                for i in 0..r {
                    dot += a[[i, j]] * a[[i, k]];
                }
                for i in 0..r {
                    a[[i, k]] -= dot * a[[i, j]];
                }
            }
        }
        let norm: f64 = (0..r).map(|i| a[[i, k]] * a[[i, k]]).sum::<f64>().sqrt();
        assert!(norm > 1e-12, "degenerate column in orthogonal init");
        for i in 0..r {
            a[[i, k]] /= norm;
        }
    }
    let out = if transpose { a.t().to_owned() } else { a };
    out.mapv(|e| F::from_f64(gain * e))
}

/// One-row sinusoidal positional encoding of `position` at width `dim`:
/// interleaved `sin`/`cos` with the standard 10000^(2i/dim) frequency ladder.
pub fn sinusoidal_pe<F: Scalar>(position: usize, dim: usize) -> Array2<F> {
    let mut pe = Array2::<F>::zeros((1, dim));
    let pos = position as f64;
    let mut i = 0;
    while i < dim {
        let freq = 1.0 / 10000f64.powf(i as f64 / dim as f64);
        pe[[0, i]] = F::from_f64((pos * freq).sin());
        if i + 1 < dim {
            pe[[0, i + 1]] = F::from_f64((pos * freq).cos());
        }
        i += 2;
    }
    pe
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_abs_off_identity(g: &Array2<f64>) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[[i, j]] - want).abs());
            }
        }
        worst
    }

    #[test]
    fn tall_matrix_has_orthonormal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w: Array2<f64> = orthogonal(11, 5, 1.0, &mut rng);
        let g = w.t().dot(&w);
        assert!(max_abs_off_identity(&g) < 1e-10);
    }

    #[test]
    fn wide_matrix_has_orthonormal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w: Array2<f64> = orthogonal(4, 9, 1.0, &mut rng);
        let g = w.dot(&w.t());
        assert!(max_abs_off_identity(&g) < 1e-10);
    }

    #[test]
    fn gain_scales_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Array2<f64> = orthogonal(6, 6, RELU_GAIN, &mut rng);
        let g = w.t().dot(&w);
        for i in 0..6 {
            assert!((g[[i, i]] - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn f32_init_matches_f64_cast() {
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let a: Array2<f32> = orthogonal(5, 3, 1.0, &mut r1);
        let b: Array2<f64> = orthogonal(5, 3, 1.0, &mut r2);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(*x, *y as f32);
        }
    }

    #[test]
    fn positional_encoding_position_zero_alternates_zero_one() {
        let pe: Array2<f64> = sinusoidal_pe(0, 8);
        for i in 0..8 {
            let want = if i % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(pe[[0, i]], want);
        }
    }

    #[test]
    fn positional_encodings_are_bounded_and_distinct() {
        let rows: Vec<Array2<f64>> = (0..4).map(|p| sinusoidal_pe(p, 128)).collect();
        for r in &rows {
            assert!(r.iter().all(|e| (-1.0..=1.0).contains(e)));
        }
        for i in 0..4 {
            for j in (i + 1)..4 {
                let diff = (&rows[i] - &rows[j]).mapv(f64::abs).sum();
                assert!(diff > 1e-6, "encodings {i} and {j} coincide");
            }
        }
    }
}
