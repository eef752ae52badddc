//! Synthetic linear generator with known ground truth, plus the
//! off-diagonal disentanglement metric.
//!
//! The model maps a latent vector `z` to an activation tensor through a
//! fixed order-4 map, optionally with additive sampling noise. Two map
//! styles exist: `dense` (i.i.d. Gaussian entries) exercises generic
//! regression, and `multilinear` builds the map from small cores contracted
//! through planted orthonormal per-mode factors, so that each mode's
//! principal subspace is known exactly and recovery can be checked against
//! it. A third construction, [`make_alignment_scenario`], plants three
//! mutually orthogonal edit directions and embeds them as dedicated latent
//! axes; with probes along those same directions the attribute matrix is
//! near-diagonal, which pins the metric's expected value.

use crate::edits::SelectorSpec;
use crate::linalg::orthonormalize;
use crate::mpca::MultilinearBasis;
use crate::regression::{direction_to_latent, TrainingPair, TuckerWeights};
use crate::tensor::{outer3, Matrix, Tensor, TensorShape3};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::Path;

/// How the generator map is constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapStyle {
    /// i.i.d. Gaussian map entries with standard deviation `1/√d`.
    Dense,
    /// Map built from per-latent cores supported on the leading block of
    /// planted orthonormal per-mode factors.
    Multilinear,
}

impl MapStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            MapStyle::Dense => "dense",
            MapStyle::Multilinear => "multilinear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(MapStyle::Dense),
            "multilinear" => Ok(MapStyle::Multilinear),
            other => Err(Error::Contract(format!(
                "unknown map style `{other}` (expected dense or multilinear)"
            ))),
        }
    }
}

/// Planted orthonormal per-mode factors of a multilinear map, with the
/// block ranks the cores are supported on.
#[derive(Debug, Clone)]
pub struct PlantedFactors {
    /// C×C orthonormal.
    pub a: Matrix,
    /// H×H orthonormal.
    pub b: Matrix,
    /// W×W orthonormal.
    pub cmat: Matrix,
    /// Supported block size per mode; samples' mode-n fibers lie exactly
    /// in the span of the leading `ranks.n` columns.
    pub ranks: (usize, usize, usize),
}

/// Fixed linear generator standing in for a pretrained image model.
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    d: usize,
    shape: TensorShape3,
    /// Order-4 map `d×C×H×W`; the activation is the contraction of the map
    /// with `z` over the latent axis.
    map: Tensor,
    noise_sigma: f64,
    style: MapStyle,
    planted: Option<PlantedFactors>,
}

impl SyntheticModel {
    pub fn new(
        d: usize,
        shape: TensorShape3,
        map: Tensor,
        noise_sigma: f64,
        style: MapStyle,
        planted: Option<PlantedFactors>,
    ) -> Result<Self> {
        if map.shape() != [d, shape.c, shape.h, shape.w] {
            return Err(Error::Dimension(format!(
                "map shape {:?} does not match d={d}, shape {shape}",
                map.shape()
            )));
        }
        if noise_sigma < 0.0 || !noise_sigma.is_finite() {
            return Err(Error::Contract(format!(
                "noise sigma must be finite and >= 0, got {noise_sigma}"
            )));
        }
        if let Some(p) = &planted {
            for (m, ext) in [(&p.a, shape.c), (&p.b, shape.h), (&p.cmat, shape.w)] {
                if m.rows() != ext || m.cols() != ext {
                    return Err(Error::Dimension(format!(
                        "planted factor is {}x{}, expected {ext}x{ext}",
                        m.rows(),
                        m.cols()
                    )));
                }
                if m.orthonormality_defect() > 1e-10 {
                    return Err(Error::Contract(
                        "planted factors must be orthonormal".into(),
                    ));
                }
            }
        }
        Ok(Self {
            d,
            shape,
            map,
            noise_sigma,
            style,
            planted,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn shape(&self) -> TensorShape3 {
        self.shape
    }

    pub fn map(&self) -> &Tensor {
        &self.map
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn style(&self) -> MapStyle {
        self.style
    }

    pub fn planted_factors(&self) -> Option<&PlantedFactors> {
        self.planted.as_ref()
    }
}

/// Builds a generator map. Dense style draws every entry i.i.d. Gaussian
/// with standard deviation `1/√d`; multilinear style plants orthonormal
/// factors and supports each latent's core on the leading
/// `min(3, extent)` block per mode with geometrically decaying weights,
/// giving exact per-mode span containment with a non-degenerate spectrum.
pub fn make_synthetic(
    d: usize,
    shape: TensorShape3,
    style: MapStyle,
    noise_sigma: f64,
    seed: u64,
) -> Result<SyntheticModel> {
    if d == 0 {
        return Err(Error::Contract("latent dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = shape.len();
    let scale = 1.0 / (d as f64).sqrt();
    match style {
        MapStyle::Dense => {
            let data: Vec<f64> = (0..d * p)
                .map(|_| {
                    let x: f64 = rng.sample(StandardNormal);
                    x * scale
                })
                .collect();
            let map = Tensor::new(vec![d, shape.c, shape.h, shape.w], data)?;
            SyntheticModel::new(d, shape, map, noise_sigma, style, None)
        }
        MapStyle::Multilinear => {
            let a = random_orthonormal(shape.c, &mut rng)?;
            let b = random_orthonormal(shape.h, &mut rng)?;
            let cmat = random_orthonormal(shape.w, &mut rng)?;
            let ranks = (shape.c.min(3), shape.h.min(3), shape.w.min(3));
            let mut map = Tensor::zeros(&[d, shape.c, shape.h, shape.w])?;
            for l in 0..d {
                let slice = &mut map.data_mut()[l * p..(l + 1) * p];
                for ia in 0..ranks.0 {
                    for ib in 0..ranks.1 {
                        for ic in 0..ranks.2 {
                            let g: f64 = rng.sample(StandardNormal);
                            let coef =
                                g * scale * 0.6f64.powi((ia + ib + ic) as i32);
                            let term = outer3(&a.col(ia), &b.col(ib), &cmat.col(ic))?;
                            for (s, &t) in slice.iter_mut().zip(term.data()) {
                                *s += coef * t;
                            }
                        }
                    }
                }
            }
            let planted = PlantedFactors { a, b, cmat, ranks };
            SyntheticModel::new(d, shape, map, noise_sigma, style, Some(planted))
        }
    }
}

fn random_orthonormal(n: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let data: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    orthonormalize(&Matrix::new(n, n, data)?)
}

/// Noiseless generation: the map contracted with `z`. Sampling noise only
/// perturbs training data drawn by [`sample_pairs`], never generation, so
/// probe chains are deterministic in `z`.
pub fn generate(model: &SyntheticModel, z: &[f64]) -> Result<Tensor> {
    if z.len() != model.d {
        return Err(Error::Dimension(format!(
            "latent length {} does not match model d {}",
            z.len(),
            model.d
        )));
    }
    let p = model.shape.len();
    let mut out = vec![0.0; p];
    for (l, &zl) in z.iter().enumerate() {
        if zl == 0.0 {
            continue;
        }
        let slice = &model.map.data()[l * p..(l + 1) * p];
        for (o, &m) in out.iter_mut().zip(slice) {
            *o += zl * m;
        }
    }
    Tensor::new(model.shape.dims(), out)
}

/// Draws `m` training pairs: `z ~ N(0, I_d)`, activation = map·z plus
/// `noise_sigma`-scaled Gaussian noise per entry. Per pair, the latent is
/// drawn first, then the noise, from one seeded stream.
pub fn sample_pairs(model: &SyntheticModel, m: usize, seed: u64) -> Result<Vec<TrainingPair>> {
    if m == 0 {
        return Err(Error::Contract("sample count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(m);
    for _ in 0..m {
        let z: Vec<f64> = (0..model.d).map(|_| rng.sample(StandardNormal)).collect();
        let mut act = generate(model, &z)?;
        if model.noise_sigma > 0.0 {
            for v in act.data_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *v += model.noise_sigma * e;
            }
        }
        pairs.push(TrainingPair { z, activation: act });
    }
    Ok(pairs)
}

/// Attribute-leakage matrix: entry `(i, j)` is the mean absolute change in
/// attribute `i` when direction `j` was edited. All entries non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeMatrix {
    a: Matrix,
}

impl AttributeMatrix {
    pub fn new(a: Matrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::Dimension(format!(
                "attribute matrix must be square, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        if a.data().iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::Contract(
                "attribute matrix entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self { a })
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }
}

/// Mean off-diagonal of the column-normalised attribute matrix:
/// each column is divided by its sum, then
/// `(Σᵢⱼ âᵢⱼ − tr Â) / (N² − N)`. Lower is better; zero means edits only
/// move their own attribute.
pub fn mod_metric(attr: &AttributeMatrix) -> Result<f64> {
    let n = attr.n();
    if n < 2 {
        return Err(Error::Contract(format!(
            "off-diagonal mean needs N >= 2, got {n}"
        )));
    }
    let a = attr.matrix();
    let mut col_sums = vec![0.0; n];
    for (j, sum) in col_sums.iter_mut().enumerate() {
        for i in 0..n {
            *sum += a.get(i, j);
        }
        if *sum == 0.0 {
            return Err(Error::ZeroSumColumn { column: j });
        }
    }
    let mut total = 0.0;
    let mut diag = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = a.get(i, j) / col_sums[j];
            total += v;
            if i == j {
                diag += v;
            }
        }
    }
    Ok((total - diag) / (n * n - n) as f64)
}

/// Runs the probe protocol: for `n_images` seed latents, apply each edit
/// direction scaled by `step`, regenerate, and record the mean absolute
/// change of each linear probe. Probes are fixed tensors evaluated by
/// inner product with the activation. Deterministic given the seed.
#[allow(clippy::too_many_arguments)]
pub fn attribute_probe(
    model: &SyntheticModel,
    w: &TuckerWeights,
    basis: &MultilinearBasis,
    directions: &[SelectorSpec],
    probes: &[Tensor],
    n_images: usize,
    step: f64,
    seed: u64,
) -> Result<AttributeMatrix> {
    let n = directions.len();
    if n == 0 || probes.len() != n {
        return Err(Error::Dimension(format!(
            "need equally many directions and probes, got {} and {}",
            n,
            probes.len()
        )));
    }
    if n_images == 0 {
        return Err(Error::Contract("image count must be positive".into()));
    }
    if w.shape() != model.shape || w.d() != model.d {
        return Err(Error::Dimension(format!(
            "weights ({}, d={}) do not match model ({}, d={})",
            w.shape(),
            w.d(),
            model.shape,
            model.d
        )));
    }
    for (i, p) in probes.iter().enumerate() {
        if p.shape() != model.shape.dims() {
            return Err(Error::Dimension(format!(
                "probe {i} has shape {:?}, expected {}",
                p.shape(),
                model.shape
            )));
        }
    }
    // edit directions are image-independent in latent space
    let deltas: Vec<Vec<f64>> = directions
        .iter()
        .map(|spec| direction_to_latent(spec, basis, w))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Matrix::zeros(n, n);
    for _ in 0..n_images {
        let z: Vec<f64> = (0..model.d).map(|_| rng.sample(StandardNormal)).collect();
        let original = generate(model, &z)?;
        let base_vals: Vec<f64> = probes.iter().map(|p| inner(p, &original)).collect();
        for (j, delta) in deltas.iter().enumerate() {
            let edited_z: Vec<f64> = z
                .iter()
                .zip(delta)
                .map(|(&zi, &di)| zi + step * di)
                .collect();
            let edited = generate(model, &edited_z)?;
            for (i, probe) in probes.iter().enumerate() {
                let diff = (inner(probe, &edited) - base_vals[i]).abs();
                acc.set(i, j, acc.get(i, j) + diff);
            }
        }
    }
    let inv = 1.0 / n_images as f64;
    let mut mean = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            mean.set(i, j, acc.get(i, j) * inv);
        }
    }
    AttributeMatrix::new(mean)
}

fn inner(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).sum()
}

/// A synthetic setup where three mutually orthogonal edit directions are
/// planted and embedded as the first three latent axes.
///
/// The planted per-mode columns are unit vectors orthogonal to the ones
/// vector. That choice makes the three cross-mode edit tensors (a channel
/// column, a height column, and a width column, each broadcast with ones)
/// exactly orthogonal to one another, so probes along them separate edits
/// structurally rather than statistically. Remaining latent axes map to
/// smaller-scale rank-1 fillers built from later factor columns, mutually
/// orthogonal to the planted edits and to each other.
#[derive(Debug, Clone)]
pub struct AlignmentScenario {
    pub model: SyntheticModel,
    /// Unit-norm planted edit tensors, one per mode.
    pub planted_edits: [Tensor; 3],
    /// The zero-sum unit basis columns the edits are built from, one per
    /// mode (length C, H, W respectively).
    pub planted_columns: [Vec<f64>; 3],
}

/// Builds the planted-alignment scenario. Requires every extent ≥ 2,
/// `d ≥ 3`, and enough distinct filler combinations:
/// `d − 3 ≤ (C−1)(H−1)(W−1)`.
pub fn make_alignment_scenario(
    d: usize,
    shape: TensorShape3,
    seed: u64,
) -> Result<AlignmentScenario> {
    if shape.c < 2 || shape.h < 2 || shape.w < 2 {
        return Err(Error::Contract(format!(
            "alignment scenario needs every extent >= 2, got {shape}"
        )));
    }
    if d < 3 {
        return Err(Error::Contract(format!(
            "alignment scenario needs d >= 3, got {d}"
        )));
    }
    let combos = (shape.c - 1) * (shape.h - 1) * (shape.w - 1);
    if d - 3 > combos {
        return Err(Error::Contract(format!(
            "alignment scenario supports at most {} latents at shape {shape}, got {d}",
            combos + 3
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = zero_sum_leading_orthonormal(shape.c, &mut rng)?;
    let b = zero_sum_leading_orthonormal(shape.h, &mut rng)?;
    let cmat = zero_sum_leading_orthonormal(shape.w, &mut rng)?;

    let u = a.col(0);
    let v = b.col(0);
    let wv = cmat.col(0);
    let ones = |n: usize| vec![1.0; n];
    let edit_c = normalized(outer3(&u, &ones(shape.h), &ones(shape.w))?);
    let edit_h = normalized(outer3(&ones(shape.c), &v, &ones(shape.w))?);
    let edit_w = normalized(outer3(&ones(shape.c), &ones(shape.h), &wv)?);

    let p = shape.len();
    let mut map = Tensor::zeros(&[d, shape.c, shape.h, shape.w])?;
    for (l, edit) in [&edit_c, &edit_h, &edit_w].iter().enumerate() {
        map.data_mut()[l * p..(l + 1) * p].copy_from_slice(edit.data());
    }
    // fillers: distinct rank-1 combinations of non-leading factor columns,
    // orthogonal to every planted edit because their per-mode columns are
    // orthogonal to the leading (planted) columns
    let filler_scale = 0.5;
    for l in 3..d {
        let f = l - 3;
        let ia = 1 + f % (shape.c - 1);
        let ib = 1 + (f / (shape.c - 1)) % (shape.h - 1);
        let ic = 1 + (f / ((shape.c - 1) * (shape.h - 1))) % (shape.w - 1);
        let term = outer3(&a.col(ia), &b.col(ib), &cmat.col(ic))?;
        let slice = &mut map.data_mut()[l * p..(l + 1) * p];
        for (s, &t) in slice.iter_mut().zip(term.data()) {
            *s = filler_scale * t;
        }
    }

    let planted = PlantedFactors {
        a,
        b,
        cmat,
        ranks: (shape.c.min(3), shape.h.min(3), shape.w.min(3)),
    };
    let model = SyntheticModel::new(
        d,
        shape,
        map,
        0.0,
        MapStyle::Multilinear,
        Some(planted),
    )?;
    Ok(AlignmentScenario {
        model,
        planted_edits: [edit_c, edit_h, edit_w],
        planted_columns: [u, v, wv],
    })
}

/// Orthonormal n×n matrix whose first column is orthogonal to the ones
/// vector. Built by projecting a random first column against ones, then
/// completing with further random columns under Gram-Schmidt.
fn zero_sum_leading_orthonormal(n: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let mut first: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mean = first.iter().sum::<f64>() / n as f64;
    for x in first.iter_mut() {
        *x -= mean;
    }
    let mut m = Matrix::zeros(n, n);
    for (i, &x) in first.iter().enumerate() {
        m.set(i, 0, x);
    }
    for j in 1..n {
        for i in 0..n {
            m.set(i, j, rng.sample(StandardNormal));
        }
    }
    orthonormalize(&m)
}

fn normalized(t: Tensor) -> Tensor {
    let norm = t.frobenius_norm();
    t.scaled(1.0 / norm)
}

/// Index of the basis column most parallel to `target` (largest absolute
/// inner product). Mirrors manually identifying a prominent recovered
/// direction for a known concept.
pub fn best_matching_column(basis: &Matrix, target: &[f64]) -> usize {
    let mut best = 0;
    let mut best_score = -1.0;
    for j in 0..basis.cols() {
        let score: f64 = (0..basis.rows())
            .map(|i| basis.get(i, j) * target[i])
            .sum::<f64>()
            .abs();
        if score > best_score {
            best_score = score;
            best = j;
        }
    }
    best
}

/// Sidecar metadata stored next to the generator map.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelMetadata {
    pub d: usize,
    pub noise_sigma: f64,
    pub shape: TensorShape3,
    pub style: String,
}

/// Writes a model as `map.npy` plus `model.json` in `dir`. Planted
/// factors are construction-time scaffolding and are not persisted; a
/// reloaded model generates identically but no longer reports them.
pub fn save_model(dir: &Path, model: &SyntheticModel) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::npy::write_npy(&dir.join("map.npy"), model.map())?;
    let meta = ModelMetadata {
        d: model.d(),
        noise_sigma: model.noise_sigma(),
        shape: model.shape(),
        style: model.style().as_str().to_string(),
    };
    let json = serde_json::to_string_pretty(&meta)?;
    crate::npy::write_bytes_atomic(&dir.join("model.json"), json.as_bytes())?;
    Ok(())
}

/// Reads a model directory written by [`save_model`].
pub fn load_model(dir: &Path) -> Result<SyntheticModel> {
    let text = std::fs::read_to_string(dir.join("model.json"))?;
    let meta: ModelMetadata = serde_json::from_str(&text)?;
    let map = crate::npy::read_npy(&dir.join("map.npy"))?;
    let style = MapStyle::parse(&meta.style)?;
    SyntheticModel::new(meta.d, meta.shape, map, meta.noise_sigma, style, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edits::SelectorTerm;
    use crate::linalg::max_principal_angle;
    use crate::mpca::{compute_bases, ActivationBatch};
    use crate::regression::{fit, RegressionConfig};
    use crate::tensor::Mode;

    fn shape(c: usize, h: usize, w: usize) -> TensorShape3 {
        TensorShape3::new(c, h, w).unwrap()
    }

    #[test]
    fn dense_model_deterministic() {
        let m1 = make_synthetic(4, shape(3, 2, 2), MapStyle::Dense, 0.0, 7).unwrap();
        let m2 = make_synthetic(4, shape(3, 2, 2), MapStyle::Dense, 0.0, 7).unwrap();
        assert_eq!(m1.map(), m2.map());
        let z = vec![0.3, -1.0, 0.5, 2.0];
        assert_eq!(
            generate(&m1, &z).unwrap(),
            generate(&m2, &z).unwrap()
        );
    }

    #[test]
    fn scalar_model_is_scalar_multiplication() {
        let m = make_synthetic(1, shape(1, 1, 1), MapStyle::Dense, 0.0, 3).unwrap();
        let w = m.map().data()[0];
        for z in [0.0, 1.0, -2.5] {
            assert_eq!(generate(&m, &[z]).unwrap().data()[0], w * z);
        }
    }

    #[test]
    fn generation_is_linear() {
        let m = make_synthetic(5, shape(3, 2, 2), MapStyle::Dense, 0.0, 11).unwrap();
        let z1 = vec![0.5, -1.0, 2.0, 0.0, 1.0];
        let z2 = vec![1.5, 0.3, -0.7, 1.0, -2.0];
        let sum: Vec<f64> = z1.iter().zip(&z2).map(|(&a, &b)| a + b).collect();
        let lhs = generate(&m, &sum).unwrap();
        let rhs = generate(&m, &z1).unwrap().add(&generate(&m, &z2).unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
    }

    #[test]
    fn noiseless_pairs_lie_on_the_map() {
        let m = make_synthetic(4, shape(2, 3, 2), MapStyle::Dense, 0.0, 13).unwrap();
        let pairs = sample_pairs(&m, 10, 14).unwrap();
        for p in &pairs {
            let regenerated = generate(&m, &p.z).unwrap();
            assert_eq!(p.activation, regenerated);
        }
    }

    #[test]
    fn noisy_pairs_deviate_but_boundedly() {
        let sigma = 0.1;
        let m = make_synthetic(4, shape(3, 3, 3), MapStyle::Dense, sigma, 15).unwrap();
        let pairs = sample_pairs(&m, 20, 16).unwrap();
        let p_len = (27f64).sqrt();
        let mut any_nonzero = false;
        for p in &pairs {
            let clean = generate(&m, &p.z).unwrap();
            let dev = p.activation.sub(&clean).unwrap().frobenius_norm();
            if dev > 0.0 {
                any_nonzero = true;
            }
            assert!(dev <= 10.0 * sigma * p_len, "deviation {dev}");
        }
        assert!(any_nonzero);
    }

    #[test]
    fn sample_pairs_deterministic() {
        let m = make_synthetic(3, shape(2, 2, 2), MapStyle::Dense, 0.05, 17).unwrap();
        let a = sample_pairs(&m, 8, 18).unwrap();
        let b = sample_pairs(&m, 8, 18).unwrap();
        assert_eq!(a, b);
        let c = sample_pairs(&m, 8, 19).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn latent_sample_mean_is_small() {
        // law of large numbers at 5 sigma: the empirical mean over 100k
        // standard normal draws stays inside 0.02 per coordinate
        let m = make_synthetic(8, shape(1, 1, 1), MapStyle::Dense, 0.0, 21).unwrap();
        let pairs = sample_pairs(&m, 100_000, 22).unwrap();
        let mut mean = [0.0; 8];
        for p in &pairs {
            for (acc, &z) in mean.iter_mut().zip(&p.z) {
                *acc += z;
            }
        }
        for acc in mean.iter_mut() {
            *acc /= pairs.len() as f64;
        }
        let max = mean.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(max <= 0.02, "max coordinate of latent mean {max}");
    }

    #[test]
    fn multilinear_fibers_contained_in_planted_span() {
        let m = make_synthetic(6, shape(5, 4, 4), MapStyle::Multilinear, 0.0, 25).unwrap();
        let planted = m.planted_factors().unwrap();
        let pairs = sample_pairs(&m, 12, 26).unwrap();
        // project each mode-1 fiber onto the planted block; residual must
        // vanish because cores are supported exactly on that block
        let lead = planted.a.take_cols(planted.ranks.0).unwrap();
        let proj = lead.matmul(&lead.transpose());
        for p in &pairs {
            let unf = p.activation.unfold(1).unwrap();
            let projected = proj.matmul(&unf);
            assert!(projected.max_abs_diff(&unf) <= 1e-12);
        }
    }

    #[test]
    fn multilinear_bases_recover_planted_spans() {
        let m = make_synthetic(6, shape(8, 6, 6), MapStyle::Multilinear, 0.0, 29).unwrap();
        let planted = m.planted_factors().unwrap();
        let pairs = sample_pairs(&m, 800, 30).unwrap();
        let batch =
            ActivationBatch::new(pairs.into_iter().map(|p| p.activation).collect()).unwrap();
        let bases = compute_bases(&batch).unwrap();
        let cases = [
            (Mode::Channel, &planted.a, planted.ranks.0),
            (Mode::Height, &planted.b, planted.ranks.1),
            (Mode::Width, &planted.cmat, planted.ranks.2),
        ];
        for (mode, factor, r) in cases {
            let recovered = bases.factor(mode).truncated(r).unwrap();
            let target = factor.take_cols(r).unwrap();
            let angle = max_principal_angle(&target, &recovered).unwrap();
            assert!(angle <= 1e-6, "mode {mode}: angle {angle:e}");
        }
    }

    #[test]
    fn mod_metric_identity_is_zero() {
        for n in 2..=5 {
            let attr = AttributeMatrix::new(Matrix::identity(n)).unwrap();
            assert_eq!(mod_metric(&attr).unwrap(), 0.0);
        }
    }

    #[test]
    fn mod_metric_uniform_matrix() {
        let attr = AttributeMatrix::new(Matrix::new(3, 3, vec![1.0; 9]).unwrap()).unwrap();
        let got = mod_metric(&attr).unwrap();
        assert!((got - 1.0 / 3.0).abs() <= 1e-15);
    }

    #[test]
    fn mod_metric_diagonal_dominant_example() {
        let attr = AttributeMatrix::new(
            Matrix::new(3, 3, vec![4.0, 1.0, 1.0, 1.0, 4.0, 1.0, 1.0, 1.0, 4.0]).unwrap(),
        )
        .unwrap();
        let got = mod_metric(&attr).unwrap();
        assert!((got - 1.0 / 6.0).abs() <= 1e-12);
    }

    #[test]
    fn mod_metric_zero_column_rejected() {
        let attr = AttributeMatrix::new(
            Matrix::new(2, 2, vec![1.0, 0.0, 2.0, 0.0]).unwrap(),
        )
        .unwrap();
        match mod_metric(&attr) {
            Err(Error::ZeroSumColumn { column }) => assert_eq!(column, 1),
            other => panic!("expected zero-sum column error, got {other:?}"),
        }
    }

    #[test]
    fn mod_metric_column_rescale_invariant() {
        let base = Matrix::new(3, 3, vec![4.0, 1.0, 0.5, 1.0, 3.0, 1.0, 0.25, 1.0, 5.0]).unwrap();
        let reference = mod_metric(&AttributeMatrix::new(base.clone()).unwrap()).unwrap();
        // power-of-two column scale: numerator and denominator scale
        // identically, so the metric is bit-identical
        let mut scaled = base.clone();
        for i in 0..3 {
            scaled.set(i, 1, scaled.get(i, 1) * 4.0);
        }
        let got = mod_metric(&AttributeMatrix::new(scaled).unwrap()).unwrap();
        assert_eq!(got, reference);
        // arbitrary positive scale: equal to roundoff
        let mut scaled = base;
        for i in 0..3 {
            scaled.set(i, 2, scaled.get(i, 2) * 1.7);
        }
        let got = mod_metric(&AttributeMatrix::new(scaled).unwrap()).unwrap();
        assert!((got - reference).abs() <= 1e-12);
    }

    #[test]
    fn attribute_matrix_rejects_negative() {
        assert!(AttributeMatrix::new(Matrix::new(2, 2, vec![1.0, -0.1, 0.0, 1.0]).unwrap()).is_err());
        assert!(AttributeMatrix::new(Matrix::new(2, 3, vec![0.0; 6]).unwrap()).is_err());
    }

    /// Shared fixture: the alignment scenario carried through sampling,
    /// basis recovery, and regression.
    fn aligned_chain(
        d: usize,
        sh: TensorShape3,
        m_samples: usize,
        steps: usize,
    ) -> (
        AlignmentScenario,
        MultilinearBasis,
        TuckerWeights,
        Vec<SelectorSpec>,
    ) {
        let scenario = make_alignment_scenario(d, sh, 41).unwrap();
        let pairs = sample_pairs(&scenario.model, m_samples, 42).unwrap();
        let batch = ActivationBatch::new(
            pairs.iter().map(|p| p.activation.clone()).collect(),
        )
        .unwrap();
        let bases = compute_bases(&batch).unwrap();
        let config = RegressionConfig {
            batch_size: 128,
            iterations: steps,
            lambda: 0.0,
            learning_rate: 0.05,
            rank: (sh.c, sh.h, sh.w, d),
            seed: 43,
        };
        let weights = fit(&pairs, &config).unwrap().weights;

        let letters = ['C', 'H', 'W'];
        let modes = [Mode::Channel, Mode::Height, Mode::Width];
        let mut specs = Vec::new();
        for k in 0..3 {
            let recovered = bases.factor(modes[k]).basis();
            let idx = best_matching_column(recovered, &scenario.planted_columns[k]);
            let term =
                SelectorTerm::parse(&format!("1:{}:{}:1.0", letters[k], idx)).unwrap();
            specs.push(SelectorSpec::new(vec![term]));
        }
        (scenario, bases, weights, specs)
    }

    #[test]
    fn planted_edits_mutually_orthogonal() {
        let scenario = make_alignment_scenario(6, shape(6, 4, 4), 51).unwrap();
        let e = &scenario.planted_edits;
        for i in 0..3 {
            assert!((e[i].frobenius_norm() - 1.0).abs() <= 1e-12);
            for j in (i + 1)..3 {
                let dot = inner(&e[i], &e[j]);
                assert!(dot.abs() <= 1e-12, "edits {i},{j} overlap {dot:e}");
            }
        }
        // planted columns are zero-sum
        for col in &scenario.planted_columns {
            assert!(col.iter().sum::<f64>().abs() <= 1e-12);
        }
    }

    #[test]
    fn alignment_validations() {
        assert!(make_alignment_scenario(2, shape(4, 4, 4), 0).is_err());
        assert!(make_alignment_scenario(4, shape(1, 4, 4), 0).is_err());
        // d too large for distinct fillers: (2-1)(2-1)(2-1) = 1 combo
        assert!(make_alignment_scenario(5, shape(2, 2, 2), 0).is_err());
        assert!(make_alignment_scenario(4, shape(2, 2, 2), 0).is_ok());
    }

    #[test]
    fn probe_zero_step_gives_zero_matrix() {
        let (scenario, bases, weights, specs) = aligned_chain(6, shape(6, 4, 4), 400, 400);
        let probes: Vec<Tensor> = scenario.planted_edits.to_vec();
        let attr = attribute_probe(
            &scenario.model,
            &weights,
            &bases,
            &specs,
            &probes,
            10,
            0.0,
            77,
        )
        .unwrap();
        assert_eq!(attr.matrix().frobenius_norm(), 0.0);
    }

    #[test]
    fn probe_scales_linearly_with_step() {
        let (scenario, bases, weights, specs) = aligned_chain(6, shape(6, 4, 4), 400, 400);
        let probes: Vec<Tensor> = scenario.planted_edits.to_vec();
        let single = attribute_probe(
            &scenario.model,
            &weights,
            &bases,
            &specs,
            &probes,
            10,
            1.0,
            78,
        )
        .unwrap();
        let double = attribute_probe(
            &scenario.model,
            &weights,
            &bases,
            &specs,
            &probes,
            10,
            2.0,
            78,
        )
        .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let a = single.matrix().get(i, j);
                let b = double.matrix().get(i, j);
                assert!((b - 2.0 * a).abs() <= 1e-8 * a.max(1.0), "entry {i},{j}");
            }
        }
    }

    #[test]
    fn probe_deterministic() {
        let (scenario, bases, weights, specs) = aligned_chain(5, shape(4, 4, 4), 300, 300);
        let probes: Vec<Tensor> = scenario.planted_edits.to_vec();
        let a = attribute_probe(
            &scenario.model, &weights, &bases, &specs, &probes, 20, 1.0, 99,
        )
        .unwrap();
        let b = attribute_probe(
            &scenario.model, &weights, &bases, &specs, &probes, 20, 1.0, 99,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aligned_probe_mod_is_small() {
        let (scenario, bases, weights, specs) = aligned_chain(6, shape(6, 4, 4), 1500, 3000);
        let probes: Vec<Tensor> = scenario.planted_edits.to_vec();
        let attr = attribute_probe(
            &scenario.model,
            &weights,
            &bases,
            &specs,
            &probes,
            50,
            1.0,
            100,
        )
        .unwrap();
        let score = mod_metric(&attr).unwrap();
        assert!(score <= 0.05, "off-diagonal leakage {score}");
        // diagonal dominance: each column's diagonal entry is the largest
        for j in 0..3 {
            let diag = attr.matrix().get(j, j);
            for i in 0..3 {
                if i != j {
                    assert!(attr.matrix().get(i, j) < diag);
                }
            }
        }
    }

    #[test]
    fn best_matching_column_finds_planted() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let q = random_orthonormal(5, &mut rng).unwrap();
        for j in 0..5 {
            let target = q.col(j);
            assert_eq!(best_matching_column(&q, &target), j);
            // sign flip must not matter
            let flipped: Vec<f64> = target.iter().map(|x| -x).collect();
            assert_eq!(best_matching_column(&q, &flipped), j);
        }
    }

    #[test]
    fn model_save_load_roundtrip_generates_identically() {
        let shape = TensorShape3::new(3, 2, 2).unwrap();
        let model = make_synthetic(4, shape, MapStyle::Multilinear, 0.25, 70).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("model");
        save_model(&root, &model).unwrap();
        let back = load_model(&root).unwrap();
        assert_eq!(back.map(), model.map());
        assert_eq!(back.d(), model.d());
        assert_eq!(back.shape(), model.shape());
        assert_eq!(back.noise_sigma(), model.noise_sigma());
        assert_eq!(back.style(), model.style());
        // scaffolding factors are not persisted
        assert!(model.planted_factors().is_some());
        assert!(back.planted_factors().is_none());
        // sampling from the reloaded model is bit-identical
        let a = sample_pairs(&model, 5, 71).unwrap();
        let b = sample_pairs(&back, 5, 71).unwrap();
        assert_eq!(a, b);
    }
}
