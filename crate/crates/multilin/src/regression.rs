//! Tucker-factored linear regression from activation tensors to latents.
//!
//! The weight is an order-4 tensor `W` of shape `C×H×W×d` stored factored:
//! a core of shape `r₁×r₂×r₃×r₄` and four factor matrices `C×r₁`, `H×r₂`,
//! `W×r₃`, `d×r₄`, with `W = core ×₁F₁ ×₂F₂ ×₃F₃ ×₄F₄`. Prediction is the
//! generalised inner product `⟨Z, W⟩` over the first three modes, evaluated
//! in factored form. Training minimises
//! `mean ‖z − ⟨Z, W⟩‖² + λ‖W‖²_F` by plain mini-batch gradient descent on
//! the core and all four factors; `λ` penalises the materialised weight,
//! not the factors.

use crate::edits::SelectorSpec;
use crate::mpca::MultilinearBasis;
use crate::tensor::{gen_inner_product, Matrix, Tensor, TensorShape3};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::path::Path;

/// Tucker-factored order-4 regression weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerWeights {
    shape: TensorShape3,
    d: usize,
    rank: (usize, usize, usize, usize),
    core: Tensor,
    factors: [Matrix; 4],
}

impl TuckerWeights {
    pub fn new(
        shape: TensorShape3,
        d: usize,
        core: Tensor,
        factors: [Matrix; 4],
    ) -> Result<Self> {
        if core.order() != 4 {
            return Err(Error::Dimension(format!(
                "core must be order 4, got order {}",
                core.order()
            )));
        }
        let rank = (
            core.shape()[0],
            core.shape()[1],
            core.shape()[2],
            core.shape()[3],
        );
        check_rank(shape, d, rank)?;
        let expected = [
            (shape.c, rank.0),
            (shape.h, rank.1),
            (shape.w, rank.2),
            (d, rank.3),
        ];
        for (n, ((rows, cols), f)) in expected.iter().zip(&factors).enumerate() {
            if f.rows() != *rows || f.cols() != *cols {
                return Err(Error::Dimension(format!(
                    "factor {} must be {rows}x{cols}, got {}x{}",
                    n + 1,
                    f.rows(),
                    f.cols()
                )));
            }
        }
        Ok(Self {
            shape,
            d,
            rank,
            core,
            factors,
        })
    }

    pub fn shape(&self) -> TensorShape3 {
        self.shape
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn rank(&self) -> (usize, usize, usize, usize) {
        self.rank
    }

    pub fn core(&self) -> &Tensor {
        &self.core
    }

    pub fn factors(&self) -> &[Matrix; 4] {
        &self.factors
    }

    /// Number of stored parameters: core entries plus factor entries.
    pub fn parameter_count(&self) -> usize {
        self.core.len() + self.factors.iter().map(|f| f.rows() * f.cols()).sum::<usize>()
    }

    /// Number of parameters of the unfactored weight: `C·H·W·d`.
    pub fn dense_parameter_count(&self) -> usize {
        self.shape.len() * self.d
    }

    /// Adds `delta` to one core entry. Intended for finite-difference
    /// probes of the training objective.
    pub fn perturb_core(&mut self, idx: &[usize], delta: f64) {
        let v = self.core.get(idx);
        self.core.set(idx, v + delta);
    }

    /// Adds `delta` to one factor entry (`which` is 0-based).
    pub fn perturb_factor(&mut self, which: usize, row: usize, col: usize, delta: f64) {
        let v = self.factors[which].get(row, col);
        self.factors[which].set(row, col, v + delta);
    }
}

fn check_rank(shape: TensorShape3, d: usize, rank: (usize, usize, usize, usize)) -> Result<()> {
    if d == 0 {
        return Err(Error::Dimension("latent dimension must be positive".into()));
    }
    let bounds = [
        (rank.0, shape.c, "1"),
        (rank.1, shape.h, "2"),
        (rank.2, shape.w, "3"),
        (rank.3, d, "4"),
    ];
    for (r, full, which) in bounds {
        if r == 0 || r > full {
            return Err(Error::Dimension(format!(
                "rank {r} invalid for mode {which} with extent {full}"
            )));
        }
    }
    Ok(())
}

/// Gradient-descent settings for [`fit`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RegressionConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub rank: (usize, usize, usize, usize),
    pub seed: u64,
}

impl RegressionConfig {
    /// Defaults: `λ = 1e-4`, learning rate `1e-3`, 1000 iterations,
    /// batch size 64.
    pub fn new(rank: (usize, usize, usize, usize), seed: u64) -> Self {
        Self {
            batch_size: 64,
            iterations: 1000,
            lambda: 1e-4,
            learning_rate: 1e-3,
            rank,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Contract(format!(
                "ridge coefficient must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Contract(format!(
                "learning rate must be finite and > 0, got {}",
                self.learning_rate
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Contract("iteration count must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Contract("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// One supervised example: the latent code and the activation it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub z: Vec<f64>,
    pub activation: Tensor,
}

/// Validates shape/latent consistency across a dataset.
fn dataset_dims(pairs: &[TrainingPair]) -> Result<(TensorShape3, usize)> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::Contract("training dataset must be non-empty".into()))?;
    let shape = first.activation.shape3()?;
    let d = first.z.len();
    if d == 0 {
        return Err(Error::Contract("latent dimension must be positive".into()));
    }
    for (i, p) in pairs.iter().enumerate() {
        if p.activation.shape() != first.activation.shape() || p.z.len() != d {
            return Err(Error::Dimension(format!(
                "pair {i} is inconsistent with the first pair (shape {:?}, d {})",
                first.activation.shape(),
                d
            )));
        }
    }
    Ok((shape, d))
}

/// Random starting point: factor entries i.i.d. uniform on `[-s, s]` with
/// `s = 1/√rₙ` (the factor's column count), core entries i.i.d. normal
/// scaled by `1/√(r₁r₂r₃r₄)`. Core is filled first, then factors in mode
/// order, all row-major, from one seeded stream.
pub fn init_weights(
    shape: TensorShape3,
    d: usize,
    rank: (usize, usize, usize, usize),
    seed: u64,
) -> Result<TuckerWeights> {
    check_rank(shape, d, rank)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r1, r2, r3, r4) = rank;
    let core_scale = 1.0 / ((r1 * r2 * r3 * r4) as f64).sqrt();
    let core_data: Vec<f64> = (0..r1 * r2 * r3 * r4)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            x * core_scale
        })
        .collect();
    let core = Tensor::new(vec![r1, r2, r3, r4], core_data)?;

    let dims = [(shape.c, r1), (shape.h, r2), (shape.w, r3), (d, r4)];
    let mut factors = Vec::with_capacity(4);
    for (rows, cols) in dims {
        let s = 1.0 / (cols as f64).sqrt();
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-s..s)).collect();
        factors.push(Matrix::new(rows, cols, data)?);
    }
    let factors: [Matrix; 4] = factors.try_into().expect("exactly four factors");
    TuckerWeights::new(shape, d, core, factors)
}

/// Expands the factored weight to the dense `C×H×W×d` tensor.
pub fn materialize(w: &TuckerWeights) -> Tensor {
    w.core
        .mode_n_product(&w.factors[0], 1)
        .and_then(|t| t.mode_n_product(&w.factors[1], 2))
        .and_then(|t| t.mode_n_product(&w.factors[2], 3))
        .and_then(|t| t.mode_n_product(&w.factors[3], 4))
        .expect("factor shapes are validated at construction")
}

/// Predicted latent `⟨Z, W⟩` evaluated in factored form:
/// project `Z` through the first three factors, contract with the core,
/// expand through the latent factor. Matches the materialised evaluation
/// to within roundoff.
pub fn predict_latent(z_act: &Tensor, w: &TuckerWeights) -> Result<Vec<f64>> {
    if z_act.shape3()? != w.shape {
        return Err(Error::Dimension(format!(
            "activation shape {:?} does not match weight shape {}",
            z_act.shape(),
            w.shape
        )));
    }
    let p = z_act
        .mode_n_product(&w.factors[0].transpose(), 1)?
        .mode_n_product(&w.factors[1].transpose(), 2)?
        .mode_n_product(&w.factors[2].transpose(), 3)?;
    let q = gen_inner_product(&p, &w.core)?;
    Ok(w.factors[3].matvec(q.data()))
}

/// Mean squared prediction error plus the ridge term `λ‖W‖²_F` on the
/// materialised weight.
pub fn loss(pairs: &[TrainingPair], w: &TuckerWeights, lambda: f64) -> Result<f64> {
    let _ = dataset_dims(pairs)?;
    let (value, _, _) = loss_and_grad(pairs, w, lambda, false)?;
    Ok(value)
}

/// Analytic gradients of [`loss`] with respect to the core and each factor.
pub fn loss_gradients(
    pairs: &[TrainingPair],
    w: &TuckerWeights,
    lambda: f64,
) -> Result<(Tensor, [Matrix; 4])> {
    let _ = dataset_dims(pairs)?;
    let (_, grad_core, grad_factors) = loss_and_grad(pairs, w, lambda, true)?;
    Ok((grad_core.expect("requested"), grad_factors.expect("requested")))
}

/// Shared evaluation path for the objective and its gradients.
///
/// The data gradient with respect to the dense weight is
/// `G = (2/B)·Σₘ Zₘ ⊗ rₘ + 2λ·W` with residual `rₘ = ⟨Zₘ,W⟩ − zₘ`; chain
/// rule through the factorisation gives
/// `∂core = G ×₁F₁ᵀ ×₂F₂ᵀ ×₃F₃ᵀ ×₄F₄ᵀ` and
/// `∂Fₙ = G₍ₙ₎ · (Bₙ)₍ₙ₎ᵀ` where `Bₙ` is the core expanded through every
/// factor except `Fₙ`.
#[allow(clippy::type_complexity)]
fn loss_and_grad(
    pairs: &[TrainingPair],
    w: &TuckerWeights,
    lambda: f64,
    want_grad: bool,
) -> Result<(f64, Option<Tensor>, Option<[Matrix; 4]>)> {
    let b = pairs.len() as f64;
    let d = w.d;
    let dense = materialize(w);

    let mut data_loss = 0.0;
    let mut g = if want_grad {
        Some(Tensor::zeros(&[w.shape.c, w.shape.h, w.shape.w, d])?)
    } else {
        None
    };
    for pair in pairs {
        let pred = predict_latent(&pair.activation, w)?;
        if pair.z.len() != d {
            return Err(Error::Dimension(format!(
                "latent length {} does not match weight d {}",
                pair.z.len(),
                d
            )));
        }
        let resid: Vec<f64> = pred.iter().zip(&pair.z).map(|(&p, &t)| p - t).collect();
        data_loss += resid.iter().map(|r| r * r).sum::<f64>();
        if let Some(g) = g.as_mut() {
            let scale = 2.0 / b;
            let gd = g.data_mut();
            for (i, &zv) in pair.activation.data().iter().enumerate() {
                if zv == 0.0 {
                    continue;
                }
                let row = &mut gd[i * d..(i + 1) * d];
                for (out, &r) in row.iter_mut().zip(&resid) {
                    *out += scale * zv * r;
                }
            }
        }
    }
    let value = data_loss / b + lambda * dense.frobenius_norm().powi(2);

    if !want_grad {
        return Ok((value, None, None));
    }
    let mut g = g.expect("allocated above");
    if lambda != 0.0 {
        let gd = g.data_mut();
        for (out, &wv) in gd.iter_mut().zip(dense.data()) {
            *out += 2.0 * lambda * wv;
        }
    }

    let grad_core = g
        .mode_n_product(&w.factors[0].transpose(), 1)?
        .mode_n_product(&w.factors[1].transpose(), 2)?
        .mode_n_product(&w.factors[2].transpose(), 3)?
        .mode_n_product(&w.factors[3].transpose(), 4)?;

    let mut grad_factors = Vec::with_capacity(4);
    for n in 0..4 {
        let mut partial = w.core.clone();
        for m in 0..4 {
            if m == n {
                continue;
            }
            partial = partial.mode_n_product(&w.factors[m], m + 1)?;
        }
        let g_unf = g.unfold(n + 1)?;
        let p_unf = partial.unfold(n + 1)?;
        grad_factors.push(g_unf.matmul(&p_unf.transpose()));
    }
    let grad_factors: [Matrix; 4] = grad_factors.try_into().expect("four gradients");
    Ok((value, Some(grad_core), Some(grad_factors)))
}

/// Learned weights plus the per-step mini-batch loss trace.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub weights: TuckerWeights,
    /// Objective value of each step's mini-batch, evaluated before that
    /// step's update.
    pub loss_history: Vec<f64>,
    /// Full-dataset objective of the returned weights.
    pub final_loss: f64,
}

/// Mini-batch gradient descent on the core and all four factors.
///
/// The dataset order is reshuffled each epoch from a stream derived from
/// the config seed; initialisation uses the seed directly, so the whole
/// run is a deterministic function of `(pairs, config)`. A non-finite
/// objective aborts with the offending step.
pub fn fit(pairs: &[TrainingPair], config: &RegressionConfig) -> Result<FitResult> {
    config.validate()?;
    let (shape, d) = dataset_dims(pairs)?;
    let mut w = init_weights(shape, d, config.rank, config.seed)?;
    // distinct stream for the epoch shuffle so it cannot collide with
    // the initialisation draws
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
    let batch = config.batch_size.min(pairs.len());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut shuffle_rng);
    let mut pos = 0;

    let mut loss_history = Vec::with_capacity(config.iterations);
    let mut scratch: Vec<TrainingPair> = Vec::with_capacity(batch);
    for step in 0..config.iterations {
        if pos + batch > order.len() {
            order.shuffle(&mut shuffle_rng);
            pos = 0;
        }
        scratch.clear();
        scratch.extend(order[pos..pos + batch].iter().map(|&i| pairs[i].clone()));
        pos += batch;

        let (value, grad_core, grad_factors) =
            loss_and_grad(&scratch, &w, config.lambda, true)?;
        if !value.is_finite() {
            return Err(Error::TrainingDiverged { step });
        }
        loss_history.push(value);

        let grad_core = grad_core.expect("requested");
        let grad_factors = grad_factors.expect("requested");
        let lr = config.learning_rate;
        for (p, &gr) in w.core.data_mut().iter_mut().zip(grad_core.data()) {
            *p -= lr * gr;
        }
        for (f, gf) in w.factors.iter_mut().zip(&grad_factors) {
            for r in 0..f.rows() {
                for c in 0..f.cols() {
                    f.set(r, c, f.get(r, c) - lr * gf.get(r, c));
                }
            }
        }
    }

    let final_loss = loss(pairs, &w, config.lambda)?;
    if !final_loss.is_finite() {
        return Err(Error::TrainingDiverged {
            step: config.iterations,
        });
    }
    Ok(FitResult {
        weights: w,
        loss_history,
        final_loss,
    })
}

/// Latent direction of an edit: assemble the edit tensor for the weight's
/// activation shape, then push it through the regression. Linear in the
/// selector weights.
pub fn direction_to_latent(
    spec: &SelectorSpec,
    basis: &MultilinearBasis,
    w: &TuckerWeights,
) -> Result<Vec<f64>> {
    let edit = crate::edits::assemble_edit_tensor(spec, basis, w.shape)?;
    predict_latent(&edit, w)
}

/// Sidecar metadata stored next to the weight arrays.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WeightsMetadata {
    pub d: usize,
    pub final_loss: f64,
    pub lambda: f64,
    pub rank: (usize, usize, usize, usize),
    pub seed: u64,
    pub shape: TensorShape3,
}

/// Writes a weight set as a directory: `core.npy`, `factor1.npy` through
/// `factor4.npy`, and `weights.json` with the training provenance. Each
/// file is written atomically.
pub fn save_weights(dir: &Path, w: &TuckerWeights, meta: &WeightsMetadata) -> Result<()> {
    if meta.shape != w.shape || meta.d != w.d || meta.rank != w.rank {
        return Err(Error::Contract(
            "metadata disagrees with the weights it describes".into(),
        ));
    }
    std::fs::create_dir_all(dir)?;
    crate::npy::write_npy(&dir.join("core.npy"), &w.core)?;
    for (n, f) in w.factors.iter().enumerate() {
        crate::npy::write_npy_matrix(&dir.join(format!("factor{}.npy", n + 1)), f)?;
    }
    let json = serde_json::to_string_pretty(meta)?;
    crate::npy::write_bytes_atomic(&dir.join("weights.json"), json.as_bytes())?;
    Ok(())
}

/// Reads a weight directory written by [`save_weights`], cross-checking
/// the arrays against the metadata.
pub fn load_weights(dir: &Path) -> Result<(TuckerWeights, WeightsMetadata)> {
    let text = std::fs::read_to_string(dir.join("weights.json"))?;
    let meta: WeightsMetadata = serde_json::from_str(&text)?;
    let core = crate::npy::read_npy(&dir.join("core.npy"))?;
    let mut factors = Vec::with_capacity(4);
    for n in 1..=4 {
        factors.push(crate::npy::read_npy_matrix(&dir.join(format!("factor{n}.npy")))?);
    }
    let factors: [Matrix; 4] = factors.try_into().expect("four factors");
    let w = TuckerWeights::new(meta.shape, meta.d, core, factors)?;
    if w.rank != meta.rank {
        return Err(Error::Contract(format!(
            "stored core has rank {:?}, metadata says {:?}",
            w.rank, meta.rank
        )));
    }
    Ok((w, meta))
}
