//! Mode-wise principal component analysis of activation tensor batches.
//!
//! For a batch of third-order tensors, each mode gets its own basis: the
//! eigenvectors of that mode's total scatter matrix
//! `Ψₙ = Σₘ (Zₘ₍ₙ₎ − Z̄₍ₙ₎)(Zₘ₍ₙ₎ − Z̄₍ₙ₎)ᵀ`, where `Z₍ₙ₎` is the mode-`n`
//! unfolding and `Z̄` the batch mean. With full ranks this is the one-shot
//! (non-iterative) multilinear PCA; truncation keeps the leading columns.
//! The flattened special case (tensors reshaped to `P×1×1`) reduces exactly
//! to linear PCA on the vectorised batch, which [`linear_pca_basis`]
//! computes directly for comparison.

use crate::linalg::{sym_eig, SymEig};
use crate::tensor::{Matrix, Mode, Tensor, TensorShape3};
use crate::{Error, Result};
use std::path::Path;

/// A batch of third-order activation tensors with a common shape.
#[derive(Debug, Clone)]
pub struct ActivationBatch {
    shape: TensorShape3,
    tensors: Vec<Tensor>,
}

impl ActivationBatch {
    pub fn new(tensors: Vec<Tensor>) -> Result<Self> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::Contract("activation batch must be non-empty".into()))?;
        let shape = first.shape3()?;
        for (i, t) in tensors.iter().enumerate() {
            if t.shape() != first.shape() {
                return Err(Error::Dimension(format!(
                    "batch member {i} has shape {:?}, expected {:?}",
                    t.shape(),
                    first.shape()
                )));
            }
        }
        Ok(Self { shape, tensors })
    }

    /// Splits a stacked order-4 tensor (batch axis first) into a batch.
    pub fn from_stacked(stacked: &Tensor) -> Result<Self> {
        if stacked.order() != 4 {
            return Err(Error::Dimension(format!(
                "stacked batch must be order 4, got order {}",
                stacked.order()
            )));
        }
        let dims = stacked.shape().to_vec();
        let (m, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
        let per = c * h * w;
        let mut tensors = Vec::with_capacity(m);
        for i in 0..m {
            let slice = stacked.data()[i * per..(i + 1) * per].to_vec();
            tensors.push(Tensor::new(vec![c, h, w], slice)?);
        }
        Self::new(tensors)
    }

    /// Stacks the batch back into an order-4 tensor, batch axis first.
    pub fn to_stacked(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.len() * self.shape.len());
        for t in &self.tensors {
            data.extend_from_slice(t.data());
        }
        Tensor::new(
            vec![self.len(), self.shape.c, self.shape.h, self.shape.w],
            data,
        )
        .expect("batch members share a validated shape")
    }

    pub fn shape(&self) -> TensorShape3 {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    /// Elementwise batch mean.
    pub fn mean(&self) -> Tensor {
        let mut acc = Tensor::zeros(&self.shape.dims()).expect("validated shape");
        for t in &self.tensors {
            acc.add_assign(t).expect("uniform shapes");
        }
        acc.scaled(1.0 / self.len() as f64)
    }
}

/// Orthonormal basis for one mode with the scatter spectrum that produced it.
#[derive(Debug, Clone)]
pub struct FactorBasis {
    mode: Mode,
    /// Extent × extent orthonormal matrix, columns ordered by descending
    /// eigenvalue.
    basis: Matrix,
    /// Scatter eigenvalues, descending. Tiny negative roundoff is clamped
    /// to zero at construction; anything more negative is rejected.
    eigenvalues: Vec<f64>,
}

impl FactorBasis {
    pub fn new(mode: Mode, basis: Matrix, eigenvalues: Vec<f64>) -> Result<Self> {
        if basis.rows() != basis.cols() {
            return Err(Error::Dimension(format!(
                "factor basis must be square, got {}x{}",
                basis.rows(),
                basis.cols()
            )));
        }
        if eigenvalues.len() != basis.cols() {
            return Err(Error::Dimension(format!(
                "{} eigenvalues for a {}-column basis",
                eigenvalues.len(),
                basis.cols()
            )));
        }
        let scale = eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1.0);
        let mut clamped = Vec::with_capacity(eigenvalues.len());
        for &lam in &eigenvalues {
            if lam < -1e-10 * scale {
                return Err(Error::Contract(format!(
                    "scatter eigenvalue {lam:e} is negative beyond roundoff"
                )));
            }
            clamped.push(lam.max(0.0));
        }
        Ok(Self {
            mode,
            basis,
            eigenvalues: clamped,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn extent(&self) -> usize {
        self.basis.rows()
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Basis column `i` as a vector.
    pub fn component(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.basis.cols() {
            return Err(Error::Dimension(format!(
                "component {i} out of range for a {}-column basis",
                self.basis.cols()
            )));
        }
        Ok(self.basis.col(i))
    }

    /// The leading `rank` columns.
    pub fn truncated(&self, rank: usize) -> Result<Matrix> {
        self.basis.take_cols(rank)
    }
}

/// Per-mode factor bases plus the batch mean they were centred on.
#[derive(Debug, Clone)]
pub struct MultilinearBasis {
    pub channel: FactorBasis,
    pub height: FactorBasis,
    pub width: FactorBasis,
    /// Batch mean subtracted before scatter accumulation; projection
    /// re-subtracts it, reconstruction adds it back.
    pub mean: Tensor,
}

impl MultilinearBasis {
    pub fn factor(&self, mode: Mode) -> &FactorBasis {
        match mode {
            Mode::Channel => &self.channel,
            Mode::Height => &self.height,
            Mode::Width => &self.width,
        }
    }

    pub fn shape(&self) -> TensorShape3 {
        TensorShape3 {
            c: self.channel.extent(),
            h: self.height.extent(),
            w: self.width.extent(),
        }
    }

    fn check_ranks(&self, ranks: (usize, usize, usize)) -> Result<()> {
        let shape = self.shape();
        let bounds = [
            (ranks.0, shape.c, Mode::Channel),
            (ranks.1, shape.h, Mode::Height),
            (ranks.2, shape.w, Mode::Width),
        ];
        for (r, ext, mode) in bounds {
            if r == 0 || r > ext {
                return Err(Error::Dimension(format!(
                    "rank {r} invalid for mode {mode} with extent {ext}"
                )));
            }
        }
        Ok(())
    }
}

/// Mode-`n` total scatter of a centred batch:
/// `Σₘ (Zₘ₍ₙ₎ − Z̄₍ₙ₎)(Zₘ₍ₙ₎ − Z̄₍ₙ₎)ᵀ`.
///
/// Accumulated as `D·Dᵀ` per member so the result is exactly symmetric.
pub fn scatter_matrix(batch: &ActivationBatch, mode: Mode) -> Result<Matrix> {
    let mean = batch.mean();
    let n = batch.shape().extent(mode);
    let mut scatter = Matrix::zeros(n, n);
    for t in batch.tensors() {
        let centred = t.sub(&mean)?;
        let unfolded = centred.unfold(mode.index())?;
        let cols = unfolded.cols();
        // accumulate the upper triangle, mirror at the end: keeps the
        // result bit-exactly symmetric regardless of summation order
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for k in 0..cols {
                    s += unfolded.get(i, k) * unfolded.get(j, k);
                }
                scatter.set(i, j, scatter.get(i, j) + s);
            }
        }
    }
    let mut out = scatter;
    for i in 0..n {
        for j in 0..i {
            let v = out.get(j, i);
            out.set(i, j, v);
        }
    }
    Ok(out)
}

/// Full-rank mode-wise PCA of a batch: one eigendecomposition per mode.
pub fn compute_bases(batch: &ActivationBatch) -> Result<MultilinearBasis> {
    let mean = batch.mean();
    let mut factors = Vec::with_capacity(3);
    for mode in Mode::ALL {
        let scatter = scatter_matrix(batch, mode)?;
        let SymEig { values, vectors } = sym_eig(&scatter)?;
        factors.push(FactorBasis::new(mode, vectors, values)?);
    }
    let mut it = factors.into_iter();
    Ok(MultilinearBasis {
        channel: it.next().unwrap(),
        height: it.next().unwrap(),
        width: it.next().unwrap(),
        mean,
    })
}

/// Projects a tensor onto the leading `ranks` components of each mode:
/// `(Z − Z̄) ×₁U₁ᵀ ×₂U₂ᵀ ×₃U₃ᵀ` with truncated factors.
pub fn mpca_project(
    z: &Tensor,
    basis: &MultilinearBasis,
    ranks: (usize, usize, usize),
) -> Result<Tensor> {
    basis.check_ranks(ranks)?;
    if z.shape3()? != basis.shape() {
        return Err(Error::Dimension(format!(
            "tensor shape {:?} does not match basis shape {}",
            z.shape(),
            basis.shape()
        )));
    }
    let centred = z.sub(&basis.mean)?;
    let u1 = basis.channel.truncated(ranks.0)?;
    let u2 = basis.height.truncated(ranks.1)?;
    let u3 = basis.width.truncated(ranks.2)?;
    centred
        .mode_n_product(&u1.transpose(), 1)?
        .mode_n_product(&u2.transpose(), 2)?
        .mode_n_product(&u3.transpose(), 3)
}

/// Maps a core tensor back to activation space:
/// `core ×₁U₁ ×₂U₂ ×₃U₃ + Z̄` with truncated factors.
pub fn mpca_reconstruct(
    core: &Tensor,
    basis: &MultilinearBasis,
    ranks: (usize, usize, usize),
) -> Result<Tensor> {
    basis.check_ranks(ranks)?;
    let dims = core.shape();
    if dims.len() != 3 || dims[0] != ranks.0 || dims[1] != ranks.1 || dims[2] != ranks.2 {
        return Err(Error::Dimension(format!(
            "core shape {dims:?} does not match ranks {ranks:?}"
        )));
    }
    let u1 = basis.channel.truncated(ranks.0)?;
    let u2 = basis.height.truncated(ranks.1)?;
    let u3 = basis.width.truncated(ranks.2)?;
    core.mode_n_product(&u1, 1)?
        .mode_n_product(&u2, 2)?
        .mode_n_product(&u3, 3)?
        .add(&basis.mean)
}

/// Linear PCA basis of the vectorised batch, for comparison against the
/// mode-wise method. Returns the scatter eigenvectors of the centred
/// vectorised tensors (unnormalised scatter, matching the per-mode scatter
/// convention) and the batch mean vector.
pub struct LinearBasis {
    /// P × P orthonormal matrix, columns ordered by descending eigenvalue.
    pub basis: Matrix,
    /// Scatter eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Mean of the vectorised batch.
    pub mean: Vec<f64>,
}

pub fn linear_pca_basis(batch: &ActivationBatch) -> Result<LinearBasis> {
    let p = batch.shape().len();
    let vecs: Vec<Tensor> = batch.tensors().iter().map(|t| t.vec()).collect();
    let mut mean = vec![0.0; p];
    for v in &vecs {
        for (m, &x) in mean.iter_mut().zip(v.data()) {
            *m += x;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for m in mean.iter_mut() {
        *m *= inv;
    }
    let mut scatter = Matrix::zeros(p, p);
    for v in vecs.iter() {
        let centred: Vec<f64> = v.data().iter().zip(&mean).map(|(&x, &m)| x - m).collect();
        for i in 0..p {
            for j in i..p {
                scatter.set(i, j, scatter.get(i, j) + centred[i] * centred[j]);
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            let v = scatter.get(j, i);
            scatter.set(i, j, v);
        }
    }
    let SymEig { values, vectors } = sym_eig(&scatter)?;
    Ok(LinearBasis {
        basis: vectors,
        eigenvalues: values,
        mean,
    })
}

/// Per-mode scatter spectra, in mode order.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EigenvalueReport {
    pub channel: Vec<f64>,
    pub height: Vec<f64>,
    pub width: Vec<f64>,
}

impl EigenvalueReport {
    pub fn of(basis: &MultilinearBasis) -> Self {
        Self {
            channel: basis.channel.eigenvalues().to_vec(),
            height: basis.height.eigenvalues().to_vec(),
            width: basis.width.eigenvalues().to_vec(),
        }
    }
}

/// Writes a basis set as a directory: `U1.npy`, `U2.npy`, `U3.npy` (one
/// square factor per mode), `mean.npy`, and `eigenvalues.json` with the
/// three scatter spectra. Each file is written atomically.
pub fn save_bases(dir: &Path, basis: &MultilinearBasis) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let factors = [&basis.channel, &basis.height, &basis.width];
    for f in factors {
        let name = format!("U{}.npy", f.mode().index());
        crate::npy::write_npy_matrix(&dir.join(name), f.basis())?;
    }
    crate::npy::write_npy(&dir.join("mean.npy"), &basis.mean)?;
    let report = EigenvalueReport::of(basis);
    let json = serde_json::to_string_pretty(&report)?;
    crate::npy::write_bytes_atomic(&dir.join("eigenvalues.json"), json.as_bytes())?;
    Ok(())
}

/// Reads a basis directory written by [`save_bases`], revalidating shapes
/// and spectra.
pub fn load_bases(dir: &Path) -> Result<MultilinearBasis> {
    let text = std::fs::read_to_string(dir.join("eigenvalues.json"))?;
    let report: EigenvalueReport = serde_json::from_str(&text)?;
    let mean = crate::npy::read_npy(&dir.join("mean.npy"))?;
    let shape = mean.shape3()?;
    let spectra = [&report.channel, &report.height, &report.width];
    let mut factors = Vec::with_capacity(3);
    for (mode, spectrum) in Mode::ALL.iter().zip(spectra) {
        let name = format!("U{}.npy", mode.index());
        let m = crate::npy::read_npy_matrix(&dir.join(name))?;
        factors.push(FactorBasis::new(*mode, m, spectrum.clone())?);
    }
    let width = factors.pop().expect("three factors");
    let height = factors.pop().expect("three factors");
    let channel = factors.pop().expect("three factors");
    let basis = MultilinearBasis {
        channel,
        height,
        width,
        mean,
    };
    if basis.shape() != shape {
        return Err(Error::Dimension(format!(
            "factor extents {} do not match the mean's shape {shape}",
            basis.shape()
        )));
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_principal_angle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(m: usize, shape: (usize, usize, usize), seed: u64) -> ActivationBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, w) = shape;
        let tensors = (0..m)
            .map(|_| {
                let data: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Tensor::new(vec![c, h, w], data).unwrap()
            })
            .collect();
        ActivationBatch::new(tensors).unwrap()
    }

    #[test]
    fn batch_construction_checks() {
        assert!(ActivationBatch::new(vec![]).is_err());
        let a = Tensor::zeros(&[2, 2, 2]).unwrap();
        let b = Tensor::zeros(&[2, 2, 3]).unwrap();
        assert!(ActivationBatch::new(vec![a.clone(), b]).is_err());
        assert!(ActivationBatch::new(vec![a.clone(), a]).is_ok());
    }

    #[test]
    fn stacked_roundtrip() {
        let batch = random_batch(4, (2, 3, 2), 9);
        let stacked = batch.to_stacked();
        assert_eq!(stacked.shape(), &[4, 2, 3, 2]);
        let back = ActivationBatch::from_stacked(&stacked).unwrap();
        assert_eq!(back.tensors(), batch.tensors());
    }

    #[test]
    fn scatter_matches_hand_loop() {
        let batch = random_batch(6, (3, 2, 2), 21);
        let mean = batch.mean();
        for mode in Mode::ALL {
            let got = scatter_matrix(&batch, mode).unwrap();
            let n = batch.shape().extent(mode);
            // oracle: explicit D·Dᵀ accumulation per member
            let mut expect = Matrix::zeros(n, n);
            for t in batch.tensors() {
                let d = t.sub(&mean).unwrap().unfold(mode.index()).unwrap();
                for i in 0..n {
                    for j in 0..n {
                        let mut s = 0.0;
                        for k in 0..d.cols() {
                            s += d.get(i, k) * d.get(j, k);
                        }
                        expect.set(i, j, expect.get(i, j) + s);
                    }
                }
            }
            assert!(got.max_abs_diff(&expect) <= 1e-12 * expect.frobenius_norm().max(1.0));
            // exact symmetry
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(got.get(i, j), got.get(j, i));
                }
            }
        }
    }

    #[test]
    fn scatter_of_constant_batch_is_zero() {
        let t = Tensor::ones(&[2, 2, 2]).unwrap();
        let batch = ActivationBatch::new(vec![t.clone(), t.clone(), t]).unwrap();
        for mode in Mode::ALL {
            let s = scatter_matrix(&batch, mode).unwrap();
            assert_eq!(s.frobenius_norm(), 0.0);
        }
        // zero scatter: basis falls back to the identity
        let bases = compute_bases(&batch).unwrap();
        assert_eq!(*bases.channel.basis(), Matrix::identity(2));
    }

    #[test]
    fn bases_orthonormal_and_descending() {
        let batch = random_batch(20, (4, 3, 3), 2);
        let bases = compute_bases(&batch).unwrap();
        for mode in Mode::ALL {
            let f = bases.factor(mode);
            assert!(f.basis().orthonormality_defect() <= 1e-10);
            for w in f.eigenvalues().windows(2) {
                assert!(w[0] >= w[1]);
            }
            assert!(f.eigenvalues().iter().all(|&l| l >= 0.0));
        }
    }

    #[test]
    fn full_rank_projection_reconstructs() {
        let batch = random_batch(12, (3, 3, 2), 5);
        let bases = compute_bases(&batch).unwrap();
        let ranks = (3, 3, 2);
        for t in batch.tensors() {
            let core = mpca_project(t, &bases, ranks).unwrap();
            let back = mpca_reconstruct(&core, &bases, ranks).unwrap();
            assert!(t.max_abs_diff(&back) <= 1e-10);
        }
    }

    #[test]
    fn projection_energy_decreases_with_rank() {
        let batch = random_batch(30, (4, 3, 3), 8);
        let bases = compute_bases(&batch).unwrap();
        let full: f64 = batch
            .tensors()
            .iter()
            .map(|t| {
                mpca_project(t, &bases, (4, 3, 3))
                    .unwrap()
                    .frobenius_norm()
                    .powi(2)
            })
            .sum();
        let truncated: f64 = batch
            .tensors()
            .iter()
            .map(|t| {
                mpca_project(t, &bases, (2, 2, 2))
                    .unwrap()
                    .frobenius_norm()
                    .powi(2)
            })
            .sum();
        assert!(truncated <= full + 1e-9);
    }

    #[test]
    fn rank_validation() {
        let batch = random_batch(5, (3, 2, 2), 1);
        let bases = compute_bases(&batch).unwrap();
        assert!(mpca_project(batch.tensors().first().unwrap(), &bases, (4, 2, 2)).is_err());
        assert!(mpca_project(batch.tensors().first().unwrap(), &bases, (0, 2, 2)).is_err());
        let core = Tensor::zeros(&[2, 2, 2]).unwrap();
        assert!(mpca_reconstruct(&core, &bases, (3, 2, 2)).is_err());
    }

    #[test]
    fn planted_mode_subspace_recovered() {
        // construct a batch whose mode-1 fibers live exactly in a planted
        // 2-dimensional subspace of R^4 (plus the mean); the leading two
        // recovered components must span it to near machine precision
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let planted = crate::linalg::orthonormalize(
            &Matrix::new(
                4,
                2,
                (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap(),
        )
        .unwrap();
        let mut tensors = Vec::new();
        for _ in 0..60 {
            // random core in the planted column space
            let mut t = Tensor::zeros(&[4, 3, 3]).unwrap();
            for h in 0..3 {
                for w in 0..3 {
                    let a: f64 = rng.gen_range(-1.0..1.0);
                    let b: f64 = rng.gen_range(-1.0..1.0);
                    for c in 0..4 {
                        t.set(&[c, h, w], a * planted.get(c, 0) + b * planted.get(c, 1));
                    }
                }
            }
            tensors.push(t);
        }
        let batch = ActivationBatch::new(tensors).unwrap();
        let bases = compute_bases(&batch).unwrap();
        let lead = bases.channel.truncated(2).unwrap();
        let angle = max_principal_angle(&planted, &lead).unwrap();
        assert!(angle <= 1e-6, "principal angle {angle:e}");
        // remaining eigenvalues vanish
        assert!(bases.channel.eigenvalues()[2] <= 1e-10 * bases.channel.eigenvalues()[0]);
    }

    #[test]
    fn flattened_batch_reduces_to_linear_pca() {
        // reshape each member to P x 1 x 1: mode-1 scatter then equals the
        // vectorised scatter, so the mode-1 basis must match linear PCA
        let batch = random_batch(40, (3, 2, 2), 13);
        let p = batch.shape().len();
        let flattened: Vec<Tensor> = batch
            .tensors()
            .iter()
            .map(|t| Tensor::new(vec![p, 1, 1], t.vec().into_data()).unwrap())
            .collect();
        let flat_batch = ActivationBatch::new(flattened).unwrap();
        let mode_wise = compute_bases(&flat_batch).unwrap();
        let linear = linear_pca_basis(&batch).unwrap();

        // compare one-dimensional leading subspaces (eigengap guards the
        // comparison; vectors may differ by sign handled by angle)
        let gap = linear.eigenvalues[0] - linear.eigenvalues[1];
        assert!(gap > 1e-6 * linear.eigenvalues[0]);
        let q1 = mode_wise.channel.truncated(1).unwrap();
        let mut q2 = Matrix::zeros(p, 1);
        for i in 0..p {
            q2.set(i, 0, linear.basis.get(i, 0));
        }
        let angle = max_principal_angle(&q1, &q2).unwrap();
        assert!(angle <= 1e-8, "principal angle {angle:e}");
        for (a, b) in mode_wise
            .channel
            .eigenvalues()
            .iter()
            .zip(&linear.eigenvalues)
        {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0));
        }
    }

    #[test]
    fn full_rank_kronecker_projector_is_identity() {
        // with full ranks the three factors are square orthonormal, so
        // projection then reconstruction is the identity on centred tensors;
        // equivalently (U3 (x) U2 (x) U1) is orthogonal
        let batch = random_batch(10, (3, 2, 2), 28);
        let bases = compute_bases(&batch).unwrap();
        let k = bases
            .width
            .basis()
            .kronecker(bases.height.basis())
            .kronecker(bases.channel.basis());
        assert!(k.orthonormality_defect() <= 1e-8);
    }

    #[test]
    fn spectrum_invariant_under_batch_order() {
        let batch = random_batch(15, (3, 3, 2), 44);
        let mut reversed: Vec<Tensor> = batch.tensors().to_vec();
        reversed.reverse();
        let bases_a = compute_bases(&batch).unwrap();
        let bases_b = compute_bases(&ActivationBatch::new(reversed).unwrap()).unwrap();
        for mode in Mode::ALL {
            for (a, b) in bases_a
                .factor(mode)
                .eigenvalues()
                .iter()
                .zip(bases_b.factor(mode).eigenvalues())
            {
                assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn compute_bases_deterministic() {
        let batch = random_batch(10, (3, 2, 2), 77);
        let a = compute_bases(&batch).unwrap();
        let b = compute_bases(&batch).unwrap();
        for mode in Mode::ALL {
            assert_eq!(a.factor(mode).basis(), b.factor(mode).basis());
            assert_eq!(a.factor(mode).eigenvalues(), b.factor(mode).eigenvalues());
        }
    }

    #[test]
    fn factor_basis_clamps_roundoff_negatives() {
        let basis = Matrix::identity(2);
        let f = FactorBasis::new(Mode::Channel, basis.clone(), vec![1.0, -1e-12]).unwrap();
        assert_eq!(f.eigenvalues(), &[1.0, 0.0]);
        assert!(FactorBasis::new(Mode::Channel, basis, vec![1.0, -1e-3]).is_err());
    }

    #[test]
    fn bases_save_load_roundtrip_is_bit_exact() {
        let batch = random_batch(12, (3, 2, 2), 90);
        let bases = compute_bases(&batch).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("bases");
        save_bases(&root, &bases).unwrap();
        let back = load_bases(&root).unwrap();
        for mode in Mode::ALL {
            assert_eq!(back.factor(mode).basis(), bases.factor(mode).basis());
            assert_eq!(back.factor(mode).eigenvalues(), bases.factor(mode).eigenvalues());
        }
        assert_eq!(back.mean, bases.mean);
        // projection through the reloaded basis matches exactly
        let t = batch.tensors()[0].clone();
        let shape = batch.shape();
        let ranks = (shape.c, shape.h, shape.w);
        let a = mpca_project(&t, &bases, ranks).unwrap();
        let b = mpca_project(&t, &back, ranks).unwrap();
        assert_eq!(a, b);
    }
}
