//! Dense low-rank algebra: singular value decomposition, best rank-r
//! truncation, reconstruction error, and adapter parameter counting.
//!
//! The SVD is a one-sided Jacobi iteration: rotations are applied to column
//! pairs until the implicit Gram matrix is diagonal, which makes the columns
//! mutually orthogonal. Their norms are the singular values and the
//! accumulated rotations form the right factor. The method is slow for big
//! matrices but simple and accurate, which is the right trade-off here: every
//! matrix this crate touches is desk-scale.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::matrix::Matrix;
use crate::rank::RankVector;
use crate::scalar::Real;

/// Shape of one adaptable layer's weight matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    /// 0-based layer index; unique and contiguous within one model.
    pub id: usize,
    pub rows: usize,
    pub cols: usize,
}

impl LayerSpec {
    pub fn new(id: usize, rows: usize, cols: usize) -> Self {
        LayerSpec { id, rows, cols }
    }

    /// Largest admissible rank for this layer.
    pub fn min_dim(&self) -> usize {
        self.rows.min(self.cols)
    }

    /// Adapter parameters per unit of rank: `rows + cols`.
    pub fn param_weight(&self) -> u64 {
        (self.rows + self.cols) as u64
    }
}

/// Check that layer ids are `0..n` in order and shapes are positive.
pub fn validate_layers(layers: &[LayerSpec]) -> Result<(), Error> {
    if layers.is_empty() {
        return Err(Error::invalid("layer list is empty"));
    }
    for (i, layer) in layers.iter().enumerate() {
        if layer.id != i {
            return Err(Error::invalid(format!(
                "layer ids must be contiguous from 0; found id {} at position {i}",
                layer.id
            )));
        }
        if layer.rows == 0 || layer.cols == 0 {
            return Err(Error::invalid(format!(
                "layer {i} has degenerate shape {}x{}",
                layer.rows, layer.cols
            )));
        }
    }
    Ok(())
}

/// Singular values in non-increasing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum<T> {
    values: Vec<T>,
}

impl<T: Real> Spectrum<T> {
    pub fn new(values: Vec<T>) -> Result<Self, Error> {
        for pair in values.windows(2) {
            if pair[1] > pair[0] {
                return Err(Error::invalid("singular values must be non-increasing"));
            }
        }
        if values.iter().any(|&v| v < T::zero() || !v.is_finite()) {
            return Err(Error::invalid(
                "singular values must be finite and non-negative",
            ));
        }
        Ok(Spectrum { values })
    }

    /// Geometric spectrum `sigma0 * decay^j`, handy for synthetic models.
    pub fn geometric(sigma0: f64, decay: f64, count: usize) -> Result<Self, Error> {
        if !(0.0..=1.0).contains(&decay) || sigma0 < 0.0 {
            return Err(Error::invalid(
                "geometric spectrum needs sigma0 >= 0 and decay in [0, 1]",
            ));
        }
        let mut values = Vec::with_capacity(count);
        let mut v = sigma0;
        for _ in 0..count {
            values.push(crate::scalar::real(v));
            v *= decay;
        }
        Spectrum::new(values)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `sum_{j > r} sigma_j^2`: the squared Frobenius error of the best
    /// rank-`r` approximation. `r` beyond the spectrum length yields zero.
    pub fn tail_energy(&self, rank: usize) -> T {
        let table = self.tail_table();
        table[rank.min(self.values.len())]
    }

    /// `table[r] = sum_{j > r} sigma_j^2` for `r = 0..=len`, accumulated from
    /// the small end so every consumer sees bit-identical sums.
    pub fn tail_table(&self) -> Vec<T> {
        let k = self.values.len();
        let mut table = vec![T::zero(); k + 1];
        for r in (0..k).rev() {
            table[r] = table[r + 1] + self.values[r] * self.values[r];
        }
        table
    }

    /// Total energy `sum_j sigma_j^2`.
    pub fn energy(&self) -> T {
        self.tail_energy(0)
    }
}

/// Trainable low-rank factors `u * v^T` over some frozen base.
///
/// Rank 0 is valid and denotes the zero update; the factors are then
/// `m x 0` and `n x 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors<T> {
    u: Matrix<T>,
    v: Matrix<T>,
}

impl<T: Real> LowRankFactors<T> {
    pub fn new(u: Matrix<T>, v: Matrix<T>) -> Result<Self, Error> {
        if u.cols() != v.cols() {
            return Err(Error::shape(format!(
                "factor ranks disagree: u has {} columns, v has {}",
                u.cols(),
                v.cols()
            )));
        }
        let rank = u.cols();
        if rank > u.rows().min(v.rows()) {
            return Err(Error::InvalidRank {
                rank,
                max: u.rows().min(v.rows()),
            });
        }
        Ok(LowRankFactors { u, v })
    }

    /// The rank-0 (zero-update) factors for an `m x n` layer.
    pub fn zero(rows: usize, cols: usize) -> Self {
        LowRankFactors {
            u: Matrix::zeros(rows, 0),
            v: Matrix::zeros(cols, 0),
        }
    }

    pub fn u(&self) -> &Matrix<T> {
        &self.u
    }

    pub fn v(&self) -> &Matrix<T> {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    /// Materialize the update `u * v^T` as a dense matrix.
    pub fn product(&self) -> Matrix<T> {
        self.u
            .matmul_bt(&self.v)
            .expect("factor shapes agree by construction")
    }
}

/// Thin singular value decomposition `m = left * diag(spectrum) * right^T`.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    pub left: Matrix<T>,
    pub spectrum: Spectrum<T>,
    pub right: Matrix<T>,
}

/// Default cap on Jacobi sweeps.
pub const SVD_MAX_SWEEPS: usize = 100;

/// Thin SVD with left/right orthonormal columns and a non-increasing
/// spectrum of length `min(rows, cols)`.
pub fn svd<T: Real>(m: &Matrix<T>) -> Result<Svd<T>, Error> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::invalid("svd requires a non-empty matrix"));
    }
    if m.rows() >= m.cols() {
        svd_tall(m)
    } else {
        let t = svd_tall(&m.transpose())?;
        Ok(Svd {
            left: t.right,
            spectrum: t.spectrum,
            right: t.left,
        })
    }
}

/// One-sided Jacobi on a matrix with `rows >= cols`.
fn svd_tall<T: Real>(m: &Matrix<T>) -> Result<Svd<T>, Error> {
    let rows = m.rows();
    let cols = m.cols();

    // Column-major working copies: `a` is rotated in place, `v` accumulates
    // the rotations so that original = a_current * v^T holds throughout.
    let mut a: Vec<Vec<T>> = (0..cols)
        .map(|j| (0..rows).map(|i| m.at(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<T>> = (0..cols)
        .map(|j| {
            let mut col = vec![T::zero(); cols];
            col[j] = T::one();
            col
        })
        .collect();

    let tol = T::epsilon();
    let mut converged = false;
    for _sweep in 0..SVD_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols.saturating_sub(1) {
            for q in (p + 1)..cols {
                let mut app = T::zero();
                let mut aqq = T::zero();
                let mut apq = T::zero();
                for i in 0..rows {
                    app = app + a[p][i] * a[p][i];
                    aqq = aqq + a[q][i] * a[q][i];
                    apq = apq + a[p][i] * a[q][i];
                }
                if apq.abs() <= tol * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                // Rotation zeroing the (p, q) Gram entry.
                let zeta = (aqq - app) / ((T::one() + T::one()) * apq);
                let t = if zeta >= T::zero() {
                    T::one() / (zeta + (T::one() + zeta * zeta).sqrt())
                } else {
                    -T::one() / (-zeta + (T::one() + zeta * zeta).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let ap = a[p][i];
                    let aq = a[q][i];
                    a[p][i] = c * ap - s * aq;
                    a[q][i] = s * ap + c * aq;
                }
                for i in 0..cols {
                    let vp = v[p][i];
                    let vq = v[q][i];
                    v[p][i] = c * vp - s * vq;
                    v[q][i] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NumericFailure(format!(
            "svd did not converge within {SVD_MAX_SWEEPS} sweeps for a {rows}x{cols} matrix"
        )));
    }

    // Column norms are the singular values; sort them descending.
    let norms: Vec<T> = a
        .iter()
        .map(|col| col.iter().map(|&x| x * x).sum::<T>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));

    let mut left = Matrix::zeros(rows, cols);
    let mut right = Matrix::zeros(cols, cols);
    let mut values = Vec::with_capacity(cols);
    let mut missing: Vec<usize> = Vec::new();
    for (slot, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        values.push(sigma);
        for i in 0..cols {
            right.set(i, slot, v[src][i]);
        }
        if sigma > T::zero() {
            for i in 0..rows {
                left.set(i, slot, a[src][i] / sigma);
            }
        } else {
            missing.push(slot);
        }
    }
    if !missing.is_empty() {
        complete_orthonormal(&mut left, &missing);
    }

    Ok(Svd {
        left,
        spectrum: Spectrum::new(values)?,
        right,
    })
}

/// Fill the listed columns of `q` with unit vectors orthogonal to all other
/// columns, so exact zero singular values still leave an orthonormal factor.
fn complete_orthonormal<T: Real>(q: &mut Matrix<T>, missing: &[usize]) {
    let rows = q.rows();
    let filled: Vec<usize> = (0..q.cols()).filter(|c| !missing.contains(c)).collect();
    let mut done: Vec<usize> = filled;
    for &slot in missing {
        let mut best: Option<(T, Vec<T>)> = None;
        for cand in 0..rows {
            let mut vec: Vec<T> = vec![T::zero(); rows];
            vec[cand] = T::one();
            // Two Gram-Schmidt passes keep the residual orthogonal.
            for _ in 0..2 {
                for &col in &done {
                    let mut dot = T::zero();
                    for i in 0..rows {
                        dot = dot + vec[i] * q.at(i, col);
                    }
                    for i in 0..rows {
                        vec[i] = vec[i] - dot * q.at(i, col);
                    }
                }
            }
            let norm = vec.iter().map(|&x| x * x).sum::<T>().sqrt();
            if best.as_ref().map_or(true, |(n, _)| norm > *n) {
                best = Some((norm, vec));
            }
        }
        let (norm, vec) = best.expect("at least one candidate basis vector");
        for i in 0..rows {
            q.set(i, slot, vec[i] / norm);
        }
        done.push(slot);
    }
}

/// Best rank-`r` factors of `m` in the Frobenius norm: the top-`r` singular
/// triplets with the singular values split as square roots into both sides,
/// so neither factor is ill-scaled.
pub fn truncated_factorization<T: Real>(
    m: &Matrix<T>,
    rank: usize,
) -> Result<LowRankFactors<T>, Error> {
    if rank > m.min_dim() {
        return Err(Error::InvalidRank {
            rank,
            max: m.min_dim(),
        });
    }
    if rank == 0 {
        return Ok(LowRankFactors::zero(m.rows(), m.cols()));
    }
    let decomp = svd(m)?;
    let u = Matrix::from_fn(m.rows(), rank, |i, j| {
        decomp.left.at(i, j) * decomp.spectrum.values()[j].sqrt()
    });
    let v = Matrix::from_fn(m.cols(), rank, |i, j| {
        decomp.right.at(i, j) * decomp.spectrum.values()[j].sqrt()
    });
    LowRankFactors::new(u, v)
}

/// Frobenius norm of `m - (base + u * v^T)`; `base = None` means a zero base.
pub fn reconstruction_error<T: Real>(
    m: &Matrix<T>,
    factors: &LowRankFactors<T>,
    base: Option<&Matrix<T>>,
) -> Result<T, Error> {
    if factors.u().rows() != m.rows() || factors.v().rows() != m.cols() {
        return Err(Error::shape(format!(
            "factors for {}x{} cannot reconstruct {}x{}",
            factors.u().rows(),
            factors.v().rows(),
            m.rows(),
            m.cols()
        )));
    }
    if let Some(b) = base {
        if b.rows() != m.rows() || b.cols() != m.cols() {
            return Err(Error::shape(format!(
                "base {}x{} vs matrix {}x{}",
                b.rows(),
                b.cols(),
                m.rows(),
                m.cols()
            )));
        }
    }
    let update = factors.product();
    let mut acc = T::zero();
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let mut r = m.at(i, j) - update.at(i, j);
            if let Some(b) = base {
                r = r - b.at(i, j);
            }
            acc = acc + r * r;
        }
    }
    Ok(acc.sqrt())
}

/// Total adapter parameters for a rank assignment: `sum_i r_i * (m_i + n_i)`.
pub fn param_count(ranks: &RankVector, layers: &[LayerSpec]) -> Result<u64, Error> {
    if ranks.len() != layers.len() {
        return Err(Error::invalid(format!(
            "rank vector has {} entries for {} layers",
            ranks.len(),
            layers.len()
        )));
    }
    Ok(ranks
        .iter()
        .zip(layers)
        .map(|(&r, layer)| r as u64 * layer.param_weight())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    fn orthonormality_defect(q: &Matrix<f64>) -> f64 {
        let gram = q.transpose().matmul(q).unwrap();
        let mut worst = 0.0f64;
        for i in 0..gram.rows() {
            for j in 0..gram.cols() {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram.at(i, j) - want).abs());
            }
        }
        worst
    }

    fn check_svd(m: &Matrix<f64>) -> Svd<f64> {
        let decomp = svd(m).unwrap();
        assert!(orthonormality_defect(&decomp.left) <= 1e-8);
        assert!(orthonormality_defect(&decomp.right) <= 1e-8);
        let sigma = Matrix::diag(decomp.spectrum.values());
        let recon = decomp
            .left
            .matmul(&sigma)
            .unwrap()
            .matmul(&decomp.right.transpose())
            .unwrap();
        let err = recon.sub(m).unwrap().frobenius_norm();
        assert!(
            err <= 1e-9 * m.frobenius_norm().max(1e-300),
            "reconstruction error {err}"
        );
        decomp
    }

    #[test]
    fn svd_identity_spectrum_is_all_ones() {
        let decomp = check_svd(&Matrix::identity(3));
        assert_eq!(decomp.spectrum.values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn svd_diagonal_spectrum_is_sorted_diagonal() {
        let m = Matrix::diag(&[3.0, 2.0, 1.0]);
        let decomp = check_svd(&m);
        assert_eq!(decomp.spectrum.values(), &[3.0, 2.0, 1.0]);
        // Unsorted diagonal comes back sorted.
        let m = Matrix::diag(&[1.0, 3.0, 2.0]);
        let decomp = check_svd(&m);
        assert_eq!(decomp.spectrum.values(), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn svd_handles_wide_and_tall_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tall = Matrix::<f64>::random_gaussian(6, 4, 1.0, &mut rng);
        check_svd(&tall);
        let wide = Matrix::<f64>::random_gaussian(3, 8, 1.0, &mut rng);
        check_svd(&wide);
    }

    #[test]
    fn svd_of_zero_matrix_keeps_orthonormal_factors() {
        let decomp = check_svd(&Matrix::zeros(4, 3));
        assert_eq!(decomp.spectrum.values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn svd_of_rank_deficient_matrix() {
        // Two proportional columns plus a zero column.
        let m = Matrix::new(3, 3, vec![1.0, 2.0, 0.0, 2.0, 4.0, 0.0, -1.0, -2.0, 0.0]).unwrap();
        let decomp = check_svd(&m);
        assert!(decomp.spectrum.values()[1] < 1e-12);
    }

    #[test]
    fn truncated_rank0_error_is_full_norm() {
        let m = Matrix::diag(&[3.0, 2.0, 1.0]);
        let f = truncated_factorization(&m, 0).unwrap();
        assert_eq!(f.rank(), 0);
        let err = reconstruction_error(&m, &f, None).unwrap();
        assert_close(err, m.frobenius_norm(), 1e-12);
    }

    #[test]
    fn truncated_diagonal_matches_tail() {
        let m = Matrix::diag(&[3.0, 2.0, 1.0]);
        let f = truncated_factorization(&m, 2).unwrap();
        let err = reconstruction_error(&m, &f, None).unwrap();
        assert_close(err, 1.0, 1e-10);
    }

    #[test]
    fn truncated_rejects_excessive_rank() {
        let m = Matrix::<f64>::zeros(4, 3);
        assert!(matches!(
            truncated_factorization(&m, 4),
            Err(Error::InvalidRank { rank: 4, max: 3 })
        ));
    }

    #[test]
    fn truncation_error_matches_spectral_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = Matrix::<f64>::random_gaussian(5, 4, 1.0, &mut rng);
        let decomp = svd(&m).unwrap();
        let f = truncated_factorization(&m, 2).unwrap();
        let err = reconstruction_error(&m, &f, None).unwrap();
        let tail = decomp.spectrum.tail_energy(2).sqrt();
        assert_close(err, tail, 1e-8 * m.frobenius_norm());
    }

    #[test]
    fn reconstruction_error_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = Matrix::<f64>::random_gaussian(4, 2, 1.0, &mut rng);
        let v = Matrix::<f64>::random_gaussian(3, 2, 1.0, &mut rng);
        let f = LowRankFactors::new(u, v).unwrap();
        let product = f.product();
        assert_eq!(reconstruction_error(&product, &f, None).unwrap(), 0.0);

        let zeros = Matrix::<f64>::zeros(2, 2);
        let zf = LowRankFactors::zero(2, 2);
        assert_eq!(reconstruction_error(&zeros, &zf, None).unwrap(), 0.0);

        let m = Matrix::diag(&[1.0, 2.0]);
        assert_eq!(reconstruction_error(&m, &zf, Some(&m)).unwrap(), 0.0);
    }

    #[test]
    fn reconstruction_error_rejects_mismatched_shapes() {
        let m = Matrix::<f64>::zeros(2, 2);
        let f = LowRankFactors::zero(3, 2);
        assert!(matches!(
            reconstruction_error(&m, &f, None),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn param_count_examples() {
        let layers = vec![LayerSpec::new(0, 4, 6), LayerSpec::new(1, 10, 10)];
        let r = RankVector::new(vec![2, 3]);
        assert_eq!(param_count(&r, &layers).unwrap(), 80);
        assert_eq!(
            param_count(&RankVector::new(vec![0, 0]), &layers).unwrap(),
            0
        );
        let big = vec![LayerSpec::new(0, 1024, 1024)];
        assert_eq!(
            param_count(&RankVector::new(vec![256]), &big).unwrap(),
            524_288
        );
        assert!(param_count(&RankVector::new(vec![1]), &layers).is_err());
    }

    #[test]
    fn spectrum_rejects_increasing_or_negative() {
        assert!(Spectrum::new(vec![1.0, 2.0]).is_err());
        assert!(Spectrum::new(vec![1.0, -0.5]).is_err());
        assert!(Spectrum::new(vec![2.0, 1.0, 1.0, 0.0]).is_ok());
    }

    #[test]
    fn tail_energy_clamps_beyond_length() {
        let s = Spectrum::new(vec![3.0, 2.0, 1.0]).unwrap();
        assert_eq!(s.tail_energy(0), 14.0);
        assert_eq!(s.tail_energy(1), 5.0);
        assert_eq!(s.tail_energy(3), 0.0);
        assert_eq!(s.tail_energy(10), 0.0);
    }

    #[test]
    fn layer_validation() {
        assert!(validate_layers(&[]).is_err());
        assert!(validate_layers(&[LayerSpec::new(1, 2, 2)]).is_err());
        assert!(validate_layers(&[LayerSpec::new(0, 2, 0)]).is_err());
        assert!(validate_layers(&[LayerSpec::new(0, 2, 2), LayerSpec::new(1, 3, 5)]).is_ok());
    }

    #[test]
    fn generic_scalar_smoke_test() {
        // f32 instantiation of the same code path.
        let m = Matrix::<f32>::diag(&[3.0, 1.0]);
        let decomp = svd(&m).unwrap();
        assert!((decomp.spectrum.values()[0] - 3.0).abs() < 1e-6);
        let f = truncated_factorization(&m, 1).unwrap();
        let err = reconstruction_error(&m, &f, None).unwrap();
        assert!((err - 1.0).abs() < 1e-5);
    }
}
