//! Command-line pipeline: sample a synthetic batch, compute bases, fit
//! the regression, turn selector files into latent directions, and score
//! disentanglement.
//!
//! Every subcommand takes its settings from flags, from a JSON config
//! file, or both; a flag always overrides the file. Seeds are never
//! defaulted: a run that involves randomness must state its seeds, so two
//! invocations with the same inputs are byte-identical. All outputs are
//! written atomically, and any failure is reported as a single
//! `error: ...` line with a nonzero exit status.

use crate::edits::{parse_selector_lines, SelectorSpec};
use crate::mpca::{compute_bases, load_bases, save_bases, ActivationBatch};
use crate::npy;
use crate::regression::{
    direction_to_latent, fit, load_weights, save_weights, RegressionConfig, TrainingPair,
    WeightsMetadata,
};
use crate::synth::{
    attribute_probe, load_model, make_synthetic, mod_metric, sample_pairs, save_model, MapStyle,
};
use crate::tensor::{Tensor, TensorShape3};
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

/// Multilinear analysis and editing of activation tensor batches.
#[derive(Debug, Parser)]
#[command(name = "multilin", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic activation batch and save its generator
    Synth(SynthArgs),
    /// Compute per-mode bases of an activation batch
    Bases(BasesArgs),
    /// Fit the low-rank regression from activations to latents
    Fit(FitArgs),
    /// Map each selector line to a latent direction
    Edit(EditArgs),
    /// Score attribute leakage of three edit directions
    Mod(ModArgs),
}

/// Optional settings shared by all subcommands, loaded from `--config`.
/// Every field can also be given as a flag; flags win.
#[derive(Debug, Default, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub bases: Option<PathBuf>,
    pub batch: Option<PathBuf>,
    pub d: Option<usize>,
    pub latents: Option<PathBuf>,
    pub m: Option<usize>,
    pub model: Option<PathBuf>,
    pub n_images: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub out: Option<PathBuf>,
    pub regression: Option<RegressionFileConfig>,
    pub sample_seed: Option<u64>,
    pub seed: Option<u64>,
    pub selectors: Option<Vec<PathBuf>>,
    pub shape: Option<String>,
    pub step: Option<f64>,
    pub style: Option<String>,
    pub weights: Option<PathBuf>,
}

/// Gradient-descent settings as they appear in the config file; any
/// omitted field falls back to the flag or the built-in default.
#[derive(Debug, Default, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionFileConfig {
    pub batch_size: Option<usize>,
    pub iterations: Option<usize>,
    pub lambda: Option<f64>,
    pub learning_rate: Option<f64>,
    pub rank: Option<(usize, usize, usize, usize)>,
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (batch.npy, latents.npy, model/)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Latent dimension
    #[arg(long)]
    pub d: Option<usize>,
    /// Activation shape as CxHxW, e.g. 8x4x4
    #[arg(long)]
    pub shape: Option<String>,
    /// Generator map style: dense or multilinear
    #[arg(long)]
    pub style: Option<String>,
    /// Additive noise level on sampled activations
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Number of samples
    #[arg(long)]
    pub m: Option<usize>,
    /// Seed for the generator map
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed for drawing the samples
    #[arg(long)]
    pub sample_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BasesArgs {
    /// JSON config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input batch (M x C x H x W NPY)
    #[arg(long)]
    pub batch: Option<PathBuf>,
    /// Output directory (U1.npy, U2.npy, U3.npy, mean.npy, eigenvalues.json)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// JSON config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input batch (M x C x H x W NPY)
    #[arg(long)]
    pub batch: Option<PathBuf>,
    /// Input latents (M x d NPY)
    #[arg(long)]
    pub latents: Option<PathBuf>,
    /// Output weights directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Tucker rank as r1,r2,r3,r4; defaults to full rank
    #[arg(long)]
    pub rank: Option<String>,
    /// Seed for initialisation and batch shuffling
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ridge coefficient on the materialised weight
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Gradient-descent step size
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Number of descent steps
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Mini-batch size
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    /// JSON config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bases directory from `bases`
    #[arg(long)]
    pub bases: Option<PathBuf>,
    /// Weights directory from `fit`
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Selector file, one term per line
    #[arg(long)]
    pub selectors: Option<PathBuf>,
    /// Output NPY of latent directions, one row per selector line
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModArgs {
    /// JSON config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model directory from `synth`
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Weights directory from `fit`
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Bases directory from `bases`
    #[arg(long)]
    pub bases: Option<PathBuf>,
    /// Three selector files, one per direction
    #[arg(long, num_args = 3)]
    pub selectors: Option<Vec<PathBuf>>,
    /// Number of seed images to probe
    #[arg(long)]
    pub n_images: Option<usize>,
    /// Edit step size applied to each direction
    #[arg(long)]
    pub step: Option<f64>,
    /// Seed for the probe images
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Report printed by `fit`.
#[derive(Debug, serde::Serialize)]
struct FitReport {
    dense_parameter_count: usize,
    factored_parameter_count: usize,
    final_loss: f64,
}

/// Report printed by `mod`.
#[derive(Debug, serde::Serialize)]
struct ModReport {
    attribute_matrix: Vec<Vec<f64>>,
    #[serde(rename = "mod")]
    mod_value: f64,
}

fn load_file_config(path: Option<&PathBuf>) -> Result<FileConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
        None => Ok(FileConfig::default()),
    }
}

/// Flag value, else config-file value, else an error naming the setting.
fn require<T>(flag: Option<T>, file: Option<T>, what: &str) -> Result<T> {
    flag.or(file).ok_or_else(|| {
        Error::Contract(format!(
            "missing required setting `{what}` (give a flag or a config entry)"
        ))
    })
}

/// Flag value, else config-file value, else the default.
fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn parse_shape(s: &str) -> Result<TensorShape3> {
    let parts: Vec<&str> = s.split('x').collect();
    let bad = || Error::Contract(format!("shape must look like CxHxW, got `{s}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut dims = [0usize; 3];
    for (d, p) in dims.iter_mut().zip(&parts) {
        *d = p.trim().parse().map_err(|_| bad())?;
    }
    TensorShape3::new(dims[0], dims[1], dims[2])
}

fn parse_rank(s: &str) -> Result<(usize, usize, usize, usize)> {
    let parts: Vec<&str> = s.split(',').collect();
    let bad = || Error::Contract(format!("rank must look like r1,r2,r3,r4, got `{s}`"));
    if parts.len() != 4 {
        return Err(bad());
    }
    let mut r = [0usize; 4];
    for (v, p) in r.iter_mut().zip(&parts) {
        *v = p.trim().parse().map_err(|_| bad())?;
    }
    Ok((r[0], r[1], r[2], r[3]))
}

/// Reads a stacked batch file plus a latent file into training pairs.
fn read_training_pairs(batch: &Path, latents: &Path) -> Result<Vec<TrainingPair>> {
    let (bshape, bdata) = npy::read_npy_raw(batch)?;
    let [m, c, h, w] = bshape[..] else {
        return Err(Error::Dimension(format!(
            "batch file must be 4-d (M x C x H x W), got shape {bshape:?}"
        )));
    };
    let (lshape, ldata) = npy::read_npy_raw(latents)?;
    let [lm, d] = lshape[..] else {
        return Err(Error::Dimension(format!(
            "latent file must be 2-d (M x d), got shape {lshape:?}"
        )));
    };
    if lm != m {
        return Err(Error::Dimension(format!(
            "batch has {m} samples but latent file has {lm}"
        )));
    }
    let p = c * h * w;
    let mut pairs = Vec::with_capacity(m);
    for i in 0..m {
        pairs.push(TrainingPair {
            z: ldata[i * d..(i + 1) * d].to_vec(),
            activation: Tensor::new(vec![c, h, w], bdata[i * p..(i + 1) * p].to_vec())?,
        });
    }
    Ok(pairs)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Bases(a) => cmd_bases(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Edit(a) => cmd_edit(a),
        Command::Mod(a) => cmd_mod(a),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let file = load_file_config(args.config.as_ref())?;
    let out = require(args.out, file.out, "out")?;
    let d = require(args.d, file.d, "d")?;
    let shape = parse_shape(&require(args.shape, file.shape, "shape")?)?;
    let style = MapStyle::parse(&pick(args.style, file.style, "dense".to_string()))?;
    let noise_sigma = pick(args.noise_sigma, file.noise_sigma, 0.0);
    let m = pick(args.m, file.m, 10_000);
    let seed = require(args.seed, file.seed, "seed")?;
    let sample_seed = require(args.sample_seed, file.sample_seed, "sample-seed")?;

    let model = make_synthetic(d, shape, style, noise_sigma, seed)?;
    let pairs = sample_pairs(&model, m, sample_seed)?;

    std::fs::create_dir_all(&out)?;
    let mut batch_data = Vec::with_capacity(m * shape.len());
    let mut latent_data = Vec::with_capacity(m * d);
    for p in &pairs {
        batch_data.extend_from_slice(p.activation.data());
        latent_data.extend_from_slice(&p.z);
    }
    npy::write_npy_raw(
        &out.join("batch.npy"),
        &[m, shape.c, shape.h, shape.w],
        &batch_data,
    )?;
    npy::write_npy_raw(&out.join("latents.npy"), &[m, d], &latent_data)?;
    save_model(&out.join("model"), &model)?;
    Ok(())
}

fn cmd_bases(args: BasesArgs) -> Result<()> {
    let file = load_file_config(args.config.as_ref())?;
    let batch_path = require(args.batch, file.batch, "batch")?;
    let out = require(args.out, file.out, "out")?;

    let stacked = npy::read_npy(&batch_path)?;
    let batch = ActivationBatch::from_stacked(&stacked)?;
    let bases = compute_bases(&batch)?;
    save_bases(&out, &bases)
}

fn cmd_fit(args: FitArgs) -> Result<()> {
    let file = load_file_config(args.config.as_ref())?;
    let reg = file.regression.unwrap_or_default();
    let batch_path = require(args.batch, file.batch, "batch")?;
    let latents_path = require(args.latents, file.latents, "latents")?;
    let out = require(args.out, file.out, "out")?;

    let pairs = read_training_pairs(&batch_path, &latents_path)?;
    let first = &pairs[0];
    let shape = first.activation.shape3()?;
    let d = first.z.len();

    let rank = match args.rank {
        Some(s) => parse_rank(&s)?,
        None => reg.rank.unwrap_or((shape.c, shape.h, shape.w, d)),
    };
    let seed = require(args.seed, reg.seed, "seed")?;
    let config = RegressionConfig {
        batch_size: pick(args.batch_size, reg.batch_size, 64),
        iterations: pick(args.iterations, reg.iterations, 1000),
        lambda: pick(args.lambda, reg.lambda, 1e-4),
        learning_rate: pick(args.learning_rate, reg.learning_rate, 1e-3),
        rank,
        seed,
    };
    let result = fit(&pairs, &config)?;
    let meta = WeightsMetadata {
        d,
        final_loss: result.final_loss,
        lambda: config.lambda,
        rank,
        seed,
        shape,
    };
    save_weights(&out, &result.weights, &meta)?;
    let report = FitReport {
        dense_parameter_count: result.weights.dense_parameter_count(),
        factored_parameter_count: result.weights.parameter_count(),
        final_loss: result.final_loss,
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_edit(args: EditArgs) -> Result<()> {
    let file = load_file_config(args.config.as_ref())?;
    let file_selector = match file.selectors {
        Some(v) if v.len() == 1 => Some(v.into_iter().next().expect("one path")),
        Some(v) => {
            return Err(Error::Contract(format!(
                "edit needs exactly one selector file, config lists {}",
                v.len()
            )))
        }
        None => None,
    };
    let bases_dir = require(args.bases, file.bases, "bases")?;
    let weights_dir = require(args.weights, file.weights, "weights")?;
    let selector_path = require(args.selectors, file_selector, "selectors")?;
    let out = require(args.out, file.out, "out")?;

    let basis = load_bases(&bases_dir)?;
    let (w, _) = load_weights(&weights_dir)?;
    let text = std::fs::read_to_string(&selector_path)?;
    let terms = parse_selector_lines(&text)?;

    // one latent direction per selector line, kept separate rather than
    // merged, so callers can mix and match downstream
    let mut rows = Vec::with_capacity(terms.len() * w.d());
    for term in &terms {
        let spec = SelectorSpec::new(vec![term.clone()]);
        let z = direction_to_latent(&spec, &basis, &w)?;
        rows.extend(z);
    }
    npy::write_npy_raw(&out, &[terms.len(), w.d()], &rows)
}

fn cmd_mod(args: ModArgs) -> Result<()> {
    let file = load_file_config(args.config.as_ref())?;
    let model_dir = require(args.model, file.model, "model")?;
    let weights_dir = require(args.weights, file.weights, "weights")?;
    let bases_dir = require(args.bases, file.bases, "bases")?;
    let selector_paths = require(args.selectors, file.selectors, "selectors")?;
    if selector_paths.len() != 3 {
        return Err(Error::Contract(format!(
            "mod needs exactly three selector files, got {}",
            selector_paths.len()
        )));
    }
    let n_images = pick(args.n_images, file.n_images, 100);
    let step = pick(args.step, file.step, 1.0);
    let seed = require(args.seed, file.seed, "seed")?;

    let model = load_model(&model_dir)?;
    let (w, _) = load_weights(&weights_dir)?;
    let basis = load_bases(&bases_dir)?;

    let mut specs = Vec::with_capacity(3);
    for p in &selector_paths {
        let text = std::fs::read_to_string(p)?;
        specs.push(SelectorSpec::new(parse_selector_lines(&text)?));
    }
    // each probe reads out its own direction: the unit-normalised edit
    // tensor, so a perfectly disentangled model scores near zero
    let mut probes = Vec::with_capacity(3);
    for (i, spec) in specs.iter().enumerate() {
        let edit = crate::edits::assemble_edit_tensor(spec, &basis, w.shape())?;
        let norm = edit.frobenius_norm();
        if norm == 0.0 {
            return Err(Error::Contract(format!(
                "selector file {} produces a zero edit tensor, cannot probe it",
                selector_paths[i].display()
            )));
        }
        probes.push(edit.scaled(1.0 / norm));
    }
    let attr = attribute_probe(&model, &w, &basis, &specs, &probes, n_images, step, seed)?;
    let value = mod_metric(&attr)?;

    let n = attr.n();
    let mut matrix = Vec::with_capacity(n);
    for i in 0..n {
        matrix.push((0..n).map(|j| attr.matrix().get(i, j)).collect());
    }
    let report = ModReport {
        attribute_matrix: matrix,
        mod_value: value,
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}
