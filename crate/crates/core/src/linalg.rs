//! Dense helpers: dot products and principal component analysis.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Convergence tolerance for the symmetric eigensolver.
pub const EIGEN_TOLERANCE: f64 = 1e-10;

/// `a . b` accumulated in `f64` over eight independent lanes.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| *x as f64 * *y as f64)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] as f64 * y[k] as f64;
        }
    }
    acc.iter().sum::<f64>() + tail
}

#[inline]
pub fn norm_sq(a: &[f32]) -> f64 {
    dot(a, a)
}

/// Principal axes of a set of row vectors, ordered by decreasing variance.
#[derive(Clone, Debug)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k` unit-norm, mutually orthogonal axes of length `dim`.
    pub components: Vec<Vec<f64>>,
    /// Variance along each axis (population normalisation), non-increasing.
    pub eigenvalues: Vec<f64>,
}

/// Eigen-decomposition of a symmetric matrix, largest eigenvalue first.
/// Each eigenvector's largest-magnitude entry is made positive so the
/// output does not depend on solver sign conventions.
pub fn symmetric_eigen(m: DMatrix<f64>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m, EIGEN_TOLERANCE, 0)
        .ok_or_else(|| Error::invalid("symmetric eigensolver did not converge"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            fix_sign(&mut v);
            v
        })
        .collect();
    Ok((values, vectors))
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Fits the top-`k` principal axes of `rows`.
///
/// With fewer rows than dimensions the eigenproblem is solved on the
/// `n x n` Gram matrix and mapped back; axes beyond the data rank are
/// completed deterministically from the standard basis.
pub fn fit_pca(rows: &[&[f32]], k: usize) -> Result<Pca> {
    let n = rows.len();
    let dim = rows.first().map(|r| r.len()).unwrap_or(0);
    if n == 0 || dim == 0 {
        return Err(Error::invalid("PCA needs at least one non-empty row"));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: r.len(),
        });
    }
    if k == 0 || k > dim || k > n {
        return Err(Error::invalid(format!(
            "cannot keep {k} components from {n} rows of dimension {dim}"
        )));
    }

    let mut mean = vec![0f64; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += *v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |i, j| rows[i][j] as f64 - mean[j]);

    let (eigenvalues, components) = if n >= dim {
        let cov = centered.transpose() * &centered / n as f64;
        let (values, vectors) = symmetric_eigen(cov)?;
        (
            values.into_iter().take(k).map(|v| v.max(0.0)).collect(),
            vectors.into_iter().take(k).collect::<Vec<_>>(),
        )
    } else {
        let gram = &centered * centered.transpose() / n as f64;
        let (values, vectors) = symmetric_eigen(gram)?;
        let scale_floor = values.first().copied().unwrap_or(0.0).abs().max(1e-300) * 1e-12;
        let mut comps: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut vals = Vec::with_capacity(k);
        for (value, v) in values.iter().zip(vectors.iter()).take(k) {
            if *value <= scale_floor {
                break;
            }
            let u = centered.transpose() * nalgebra::DVector::from_column_slice(v);
            let mut u: Vec<f64> = u.iter().copied().collect();
            if orthonormalize_against(&mut u, &comps) {
                fix_sign(&mut u);
                comps.push(u);
                vals.push(value.max(0.0));
            }
        }
        complete_basis(&mut comps, dim, k);
        vals.resize(comps.len(), 0.0);
        (vals, comps)
    };

    Ok(Pca {
        mean,
        components,
        eigenvalues,
    })
}

/// Gram-Schmidt (applied twice) against `basis`; normalises `v` in place.
/// Returns false if nothing independent remains.
fn orthonormalize_against(v: &mut [f64], basis: &[Vec<f64>]) -> bool {
    let initial: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if initial == 0.0 {
        return false;
    }
    for _ in 0..2 {
        for b in basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
    }
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= initial * 1e-8 {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

fn complete_basis(basis: &mut Vec<Vec<f64>>, dim: usize, k: usize) {
    let mut j = 0;
    while basis.len() < k && j < dim {
        let mut e = vec![0f64; dim];
        e[j] = 1.0;
        if orthonormalize_against(&mut e, basis) {
            fix_sign(&mut e);
            basis.push(e);
        }
        j += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram_identity(vs: &[Vec<f64>], tol: f64) -> bool {
        vs.iter().enumerate().all(|(i, a)| {
            vs.iter().enumerate().all(|(j, b)| {
                let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (d - if i == j { 1.0 } else { 0.0 }).abs() <= tol
            })
        })
    }

    #[test]
    fn rank_one_direction() {
        let rows: Vec<Vec<f32>> = vec![
            vec![1.0, 1.0],
            vec![2.0, 2.0],
            vec![-1.0, -1.0],
            vec![-2.0, -2.0],
        ];
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let pca = fit_pca(&refs, 1).unwrap();
        let c = &pca.components[0];
        assert!((c[0].abs() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!((c[0] - c[1]).abs() < 1e-9);
    }

    #[test]
    fn gram_route_matches_covariance_route() {
        // 6 rows in 10 dims goes through the Gram matrix; the same data
        // padded with duplicated rows goes through the covariance.
        let rows: Vec<Vec<f32>> = (0..6)
            .map(|i| (0..10).map(|j| ((i * 7 + j * 3) % 11) as f32 / 11.0).collect())
            .collect();
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let small = fit_pca(&refs, 4).unwrap();
        let doubled: Vec<&[f32]> = refs.iter().chain(refs.iter()).copied().collect();
        let big = fit_pca(&doubled, 4).unwrap();
        for (a, b) in small.eigenvalues.iter().zip(&big.eigenvalues) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in small.components.iter().zip(&big.components) {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            assert!((d.abs() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn completes_beyond_rank() {
        let rows: Vec<Vec<f32>> = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]];
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        let pca = fit_pca(&refs, 2).unwrap();
        assert_eq!(pca.components.len(), 2);
        assert!(gram_identity(&pca.components, 1e-9));
        assert!(pca.eigenvalues[1].abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_k() {
        let rows: Vec<Vec<f32>> = vec![vec![1.0, 2.0], vec![3.0, 1.0]];
        let refs: Vec<&[f32]> = rows.iter().map(|r| r.as_slice()).collect();
        assert!(fit_pca(&refs, 0).is_err());
        assert!(fit_pca(&refs, 3).is_err());
    }
}
