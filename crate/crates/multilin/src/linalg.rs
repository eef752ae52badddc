//! Dense symmetric eigensolver, singular values, and subspace angles.
//!
//! Everything here is cyclic Jacobi: slow compared to LAPACK but fully
//! deterministic, dependency-free, and accurate to near machine precision,
//! which the test tolerances in this crate (1e-10 and below) require.
//! `singular_values` uses one-sided Jacobi on the matrix itself rather than
//! eigenvalues of AᵀA; the Gram route squares the condition number and turns
//! exact rank deficiency into spurious singular values around 1e-8·σ₁.

use crate::tensor::Matrix;
use crate::{Error, Result};

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors, column `k` pairs with `values[k]`.
    pub vectors: Matrix,
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Off-diagonal Frobenius norm.
fn off_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = a.get(i, j);
                s += v * v;
            }
        }
    }
    s.sqrt()
}

/// Eigendecomposition of a symmetric matrix via cyclic Jacobi rotations.
///
/// Sweeps until the off-diagonal norm falls below `1e-12` relative to the
/// input norm, or 100 sweeps. Column signs are fixed so the largest-magnitude
/// entry of each eigenvector is positive (lowest index wins ties); among
/// numerically equal eigenvalues, columns are ordered by the index of their
/// first non-negligible entry so the output is a deterministic function of
/// the input.
pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::Dimension(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let sym_defect = {
        let mut d: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                d = d.max((a.get(i, j) - a.get(j, i)).abs());
            }
        }
        d
    };
    let scale = a.frobenius_norm();
    if sym_defect > 1e-9 * scale.max(1.0) {
        return Err(Error::Contract(format!(
            "matrix is not symmetric: max asymmetry {sym_defect:.3e}"
        )));
    }

    let mut d = a.clone();
    // symmetrise exactly so rotations preserve symmetry bit-for-bit
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (d.get(i, j) + d.get(j, i));
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    let mut v = Matrix::identity(n);
    let threshold = JACOBI_TOL * scale.max(f64::MIN_POSITIVE);

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if off_norm(&d) <= threshold {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = d.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = d.get(p, p);
                let aqq = d.get(q, q);
                // classic Jacobi rotation choosing the smaller angle
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let dkp = d.get(k, p);
                    let dkq = d.get(k, q);
                    d.set(k, p, c * dkp - s * dkq);
                    d.set(k, q, s * dkp + c * dkq);
                }
                for k in 0..n {
                    let dpk = d.get(p, k);
                    let dqk = d.get(q, k);
                    d.set(p, k, c * dpk - s * dqk);
                    d.set(q, k, s * dpk + c * dqk);
                }
                // re-pin the rotated pair so roundoff never reintroduces
                // asymmetry in the (p,q) block
                d.set(p, q, 0.0);
                d.set(q, p, 0.0);

                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let eigvals: Vec<f64> = (0..n).map(|i| d.get(i, i)).collect();
    // descending by eigenvalue; ties broken later once signs are fixed
    order.sort_by(|&i, &j| eigvals[j].partial_cmp(&eigvals[i]).unwrap());

    let mut values = Vec::with_capacity(n);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for &k in &order {
        values.push(eigvals[k]);
        cols.push(fix_sign(v.col(k)));
    }

    // deterministic order within numerically degenerate eigenvalue groups
    let tie_tol = 1e-12 * scale.max(1.0);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (values[start] - values[end]).abs() <= tie_tol {
            end += 1;
        }
        if end - start > 1 {
            let mut group: Vec<(usize, Vec<f64>)> = cols
                .drain(start..end)
                .map(|col| (first_significant(&col), col))
                .collect();
            group.sort_by_key(|&(lead, _)| lead);
            for (i, (_, col)) in group.into_iter().enumerate() {
                cols.insert(start + i, col);
            }
        }
        start = end;
    }

    let mut vectors = Matrix::zeros(n, n);
    for (k, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            vectors.set(i, k, x);
        }
    }
    Ok(SymEig { values, vectors })
}

/// Flips a vector so its largest-magnitude entry is positive; on magnitude
/// ties the lowest-index entry decides.
fn fix_sign(mut col: Vec<f64>) -> Vec<f64> {
    let mut best = 0;
    for (i, &x) in col.iter().enumerate() {
        if x.abs() > col[best].abs() {
            best = i;
        }
    }
    if col[best] < 0.0 {
        for x in col.iter_mut() {
            *x = -*x;
        }
    }
    col
}

/// Index of the first entry with magnitude above 1e-12.
fn first_significant(col: &[f64]) -> usize {
    col.iter()
        .position(|&x| x.abs() > 1e-12)
        .unwrap_or(col.len())
}

/// Singular values in descending order, via one-sided Jacobi.
///
/// Rotates column pairs of a working copy until all pairs are orthogonal;
/// the column norms are then the singular values. Converges to full relative
/// accuracy on small singular values, unlike the AᵀA eigenvalue route.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    // work on the tall orientation so columns are the short dimension
    let work = if a.rows() >= a.cols() {
        a.clone()
    } else {
        a.transpose()
    };
    let m = work.rows();
    let n = work.cols();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| work.col(j)).collect();

    let frob: f64 = cols
        .iter()
        .flat_map(|c| c.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if frob == 0.0 {
        return vec![0.0; n];
    }
    let tol = 1e-15;

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for k in 0..m {
                    app += cols[p][k] * cols[p][k];
                    aqq += cols[q][k] * cols[q][k];
                    apq += cols[p][k] * cols[q][k];
                }
                if apq.abs() <= tol * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..m {
                    let xp = cols[p][k];
                    let xq = cols[q][k];
                    cols[p][k] = c * xp - s * xq;
                    cols[q][k] = s * xp + c * xq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sv: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Thin QR via modified Gram-Schmidt with one reorthogonalisation pass.
/// Returns the orthonormal factor; requires full column rank.
pub fn orthonormalize(a: &Matrix) -> Result<Matrix> {
    let m = a.rows();
    let n = a.cols();
    if n > m {
        return Err(Error::Dimension(format!(
            "cannot orthonormalise {n} columns in dimension {m}"
        )));
    }
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    for j in 0..n {
        for _pass in 0..2 {
            for i in 0..j {
                let dot: f64 = cols[j].iter().zip(&cols[i]).map(|(&x, &y)| x * y).sum();
                for k in 0..m {
                    cols[j][k] -= dot * cols[i][k];
                }
            }
        }
        let norm: f64 = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return Err(Error::Contract(format!(
                "column {j} is linearly dependent on earlier columns"
            )));
        }
        for x in cols[j].iter_mut() {
            *x /= norm;
        }
    }
    let mut q = Matrix::zeros(m, n);
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            q.set(i, j, x);
        }
    }
    Ok(q)
}

/// Largest principal angle (radians) between the column spans of two
/// matrices with orthonormal columns and equal column counts.
///
/// Uses the sine route `σ_max(Q₂ − Q₁(Q₁ᵀQ₂))`, which resolves angles near
/// zero to full precision; the cosine route loses everything below ~1e-8.
pub fn max_principal_angle(q1: &Matrix, q2: &Matrix) -> Result<f64> {
    if q1.rows() != q2.rows() || q1.cols() != q2.cols() {
        return Err(Error::Dimension(format!(
            "principal angles need equal shapes, got {}x{} and {}x{}",
            q1.rows(),
            q1.cols(),
            q2.rows(),
            q2.cols()
        )));
    }
    let proj = q1.matmul(&q1.transpose().matmul(q2));
    let mut resid = Matrix::zeros(q2.rows(), q2.cols());
    for r in 0..q2.rows() {
        for c in 0..q2.cols() {
            resid.set(r, c, q2.get(r, c) - proj.get(r, c));
        }
    }
    let sv = singular_values(&resid);
    let s = sv.first().copied().unwrap_or(0.0).min(1.0);
    Ok(s.asin())
}
