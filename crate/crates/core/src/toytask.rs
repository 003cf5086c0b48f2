//! Synthetic shape-classification task with ground-truth saliency, plus the
//! trainer that fits the toy encoder on subpixel tokens.
//!
//! Each sample is a 64x64 RGB image holding exactly one foreground shape over
//! a textured, class-uninformative background. Classes combine four shape
//! kinds with two color families (8 classes). Every shape kind fills its
//! support with a characteristic interior pattern (rings, stripes, diagonal
//! stripes, checker), so a token window landing on the object carries class
//! evidence while off-object windows carry none - token placement, not
//! capacity, is what decides sparse accuracy. Shapes are placed with a mild
//! central bias, mirroring the subject-centering of classification datasets,
//! and the saliency mask is the shape support dilated by 2 px, so a salient
//! prior provably concentrates tokens on the class-determining region.

use std::path::Path;

use rayon::prelude::*;

use crate::encoder::{self, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::imagery::{Image, SaliencyMask};
use crate::metrics::{self, EvalReport};
use crate::priors::{PriorKind, PriorSpec};
use crate::rng::SplitMix64;
use crate::subpixel::{self, TokenizerConfig};

pub const IMG_SIZE: usize = 64;
pub const NUM_CLASSES: usize = 8;
/// Shape support is dilated by this many pixels to form the saliency mask.
const SALIENCY_DILATION: f64 = 2.0;
/// Soft edge width of rendered shapes, in pixels.
const EDGE_WIDTH: f64 = 1.5;

/// One dataset entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    pub image: Image,
    pub label: usize,
    pub saliency: SaliencyMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ShapeKind {
    Disk,
    Square,
    Triangle,
    Cross,
}

impl ShapeKind {
    fn from_index(i: usize) -> Self {
        match i {
            0 => ShapeKind::Disk,
            1 => ShapeKind::Square,
            2 => ShapeKind::Triangle,
            _ => ShapeKind::Cross,
        }
    }
}

/// Signed distance to the shape boundary, negative inside. `p` is relative to
/// the shape center, already rotated into the shape frame.
fn shape_sdf(kind: ShapeKind, p: (f64, f64), size: f64) -> f64 {
    let (x, y) = p;
    match kind {
        ShapeKind::Disk => (x * x + y * y).sqrt() - size,
        ShapeKind::Square => {
            let (qx, qy) = (x.abs() - size, y.abs() - size);
            let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
            outside + qx.max(qy).min(0.0)
        }
        ShapeKind::Triangle => {
            // equilateral triangle, side 2 * size
            let k = 3f64.sqrt();
            let (mut px, mut py) = (x.abs() - size, y + size / k);
            if px + k * py > 0.0 {
                let (nx, ny) = ((px - k * py) / 2.0, (-k * px - py) / 2.0);
                px = nx;
                py = ny;
            }
            px -= px.clamp(-2.0 * size, 0.0);
            -(px * px + py * py).sqrt() * py.signum()
        }
        ShapeKind::Cross => {
            // two orthogonal bars: half-length `size`, half-width 0.35 size
            let t = 0.35 * size;
            let bar = |hx: f64, hy: f64, x: f64, y: f64| {
                let (qx, qy) = (x.abs() - hx, y.abs() - hy);
                let outside = (qx.max(0.0).powi(2) + qy.max(0.0).powi(2)).sqrt();
                outside + qx.max(qy).min(0.0)
            };
            bar(size, t, x, y).min(bar(t, size, x, y))
        }
    }
}

/// Farthest boundary point from the center, used to keep shapes inside the
/// image.
fn shape_extent(kind: ShapeKind, size: f64) -> f64 {
    match kind {
        ShapeKind::Disk => size,
        ShapeKind::Square => size * std::f64::consts::SQRT_2,
        ShapeKind::Triangle => 2.0 * size / 3f64.sqrt(),
        ShapeKind::Cross => size * (1.0f64 + 0.35 * 0.35).sqrt(),
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as usize % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Deterministically generate sample `index` of the dataset keyed by `seed`.
fn gen_sample(seed: u64, index: usize) -> ToySample {
    let mut rng = SplitMix64::derive(seed, index as u64);
    let label = index % NUM_CLASSES;
    let shape = ShapeKind::from_index(label / 2);
    let family = label % 2;

    // geometry: sizes keep the area at or above 5% of the image
    let size = match shape {
        ShapeKind::Disk => rng.range(9.0, 12.0),
        ShapeKind::Square => rng.range(8.0, 10.5),
        ShapeKind::Triangle => rng.range(11.5, 15.0),
        ShapeKind::Cross => rng.range(10.5, 14.0),
    };
    let theta = rng.range(0.0, std::f64::consts::TAU);
    let extent = shape_extent(shape, size);
    let margin = extent + SALIENCY_DILATION + 1.0;
    let lo = margin.max(8.0);
    let hi = (IMG_SIZE as f64 - 1.0) - lo;
    let half = (IMG_SIZE as f64 - 1.0) / 2.0;
    // central bias, clamped so the dilated support stays inside the image
    let cx = (half + 9.0 * rng.normal()).clamp(lo, hi);
    let cy = (half + 9.0 * rng.normal()).clamp(lo, hi);

    // color: warm family around red-orange, cool family around cyan-blue
    let hue = if family == 0 { 0.96 + rng.range(0.0, 0.13) } else { rng.range(0.52, 0.66) };
    let sat = rng.range(0.65, 0.95);
    let val = rng.range(0.75, 1.0);
    let rgb = hsv_to_rgb(hue, sat, val);

    // background: two-octave value noise around mid-gray, hue-neutral
    let lattice: Vec<f64> = (0..81).map(|_| rng.u01()).collect(); // 9x9, 8 px cells
    let tint: [f64; 3] = [rng.range(-0.05, 0.05), rng.range(-0.05, 0.05), rng.range(-0.05, 0.05)];
    let mut fine_rng = SplitMix64::derive(seed ^ 0x00F1_FE, index as u64);

    let (sin_t, cos_t) = theta.sin_cos();
    let mut data = vec![0.0; IMG_SIZE * IMG_SIZE * 3];
    let mut mask = vec![0.0; IMG_SIZE * IMG_SIZE];
    const PERIOD: f64 = 5.5; // interior pattern wavelength in pixels
    for y in 0..IMG_SIZE {
        for x in 0..IMG_SIZE {
            // coarse noise, bilinear over the 9x9 lattice
            let (gx, gy) = (x as f64 / 8.0, y as f64 / 8.0);
            let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
            let (fx, fy) = (gx - ix as f64, gy - iy as f64);
            let l = |r: usize, c: usize| lattice[r.min(8) * 9 + c.min(8)];
            let coarse = (1.0 - fy) * ((1.0 - fx) * l(iy, ix) + fx * l(iy, ix + 1))
                + fy * ((1.0 - fx) * l(iy + 1, ix) + fx * l(iy + 1, ix + 1));
            let fine = fine_rng.range(-0.08, 0.08);
            let lum = 0.45 + 0.28 * (coarse - 0.5) + fine;

            // shape frame
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let local = (cos_t * dx + sin_t * dy, -sin_t * dx + cos_t * dy);
            let sdf = shape_sdf(shape, local, size);
            let alpha = (0.5 - sdf / EDGE_WIDTH).clamp(0.0, 1.0);
            // per-kind interior pattern: the local class signature
            let wave = std::f64::consts::TAU / PERIOD;
            let pattern = match shape {
                ShapeKind::Disk => (wave * (local.0 * local.0 + local.1 * local.1).sqrt()).cos(),
                ShapeKind::Square => (wave * local.0).cos(),
                ShapeKind::Triangle => {
                    (wave * (local.0 + local.1) * std::f64::consts::FRAC_1_SQRT_2).cos()
                }
                ShapeKind::Cross => (wave * local.0).cos() * (wave * local.1).cos(),
            };
            let shade = 0.72 + 0.28 * pattern;

            let idx = (y * IMG_SIZE + x) * 3;
            for c in 0..3 {
                let bg = (lum + tint[c]).clamp(0.0, 1.0);
                let fg = (rgb[c] * shade).clamp(0.0, 1.0);
                data[idx + c] = (alpha * fg + (1.0 - alpha) * bg).clamp(0.0, 1.0);
            }
            if sdf <= SALIENCY_DILATION {
                mask[y * IMG_SIZE + x] = 1.0;
            }
        }
    }
    ToySample {
        image: Image::new(IMG_SIZE, IMG_SIZE, 3, data).expect("generated image valid"),
        label,
        saliency: SaliencyMask::new(IMG_SIZE, IMG_SIZE, mask).expect("generated mask valid"),
    }
}

/// Generate `n` samples, class-balanced within one, deterministic per seed.
pub fn gen_dataset(n: usize, seed: u64) -> Result<Vec<ToySample>> {
    if n < NUM_CLASSES {
        return Err(Error::InvalidArgument(format!(
            "dataset needs at least {NUM_CLASSES} samples, got {n}"
        )));
    }
    Ok((0..n).into_par_iter().map(|i| gen_sample(seed, i)).collect())
}

/// Persist a dataset as a directory of TensorFiles plus `manifest.csv`
/// (`index,label,image,mask` columns).
pub fn save_dataset(samples: &[ToySample], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("index,label,image,mask\n");
    for (i, s) in samples.iter().enumerate() {
        let image_name = format!("image_{i:05}.sptf");
        let mask_name = format!("mask_{i:05}.sptf");
        s.image.save_tensor(dir.join(&image_name))?;
        s.saliency.save_tensor(dir.join(&mask_name))?;
        manifest.push_str(&format!("{i},{},{image_name},{mask_name}\n", s.label));
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).map_err(|e| Error::io(path, e))
}

/// Load a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<ToySample>> {
    let dir = dir.as_ref();
    let path = dir.join("manifest.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::format(&path, format!("line {}: expected 4 fields", lineno + 1)));
        }
        let label: usize = fields[1]
            .parse()
            .map_err(|_| Error::format(&path, format!("line {}: bad label", lineno + 1)))?;
        let image = Image::load(dir.join(fields[2]))?;
        let saliency = SaliencyMask::load(dir.join(fields[3]))?;
        if saliency.height() != image.height() || saliency.width() != image.width() {
            return Err(Error::ShapeMismatch(format!(
                "sample {}: mask dims do not match image",
                fields[0]
            )));
        }
        samples.push(ToySample { image, label, saliency });
    }
    if samples.is_empty() {
        return Err(Error::format(&path, "empty dataset"));
    }
    Ok(samples)
}

/// Training hyperparameters. The encoder and tokenizer shapes ride along so a
/// single value describes the full training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub encoder: EncoderConfig,
    pub tokenizer: TokenizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak Adam learning rate; cosine-decays to zero over the run.
    pub lr: f64,
    /// Weight-init and shuffle seed.
    pub seed: u64,
    /// Prior for per-step token placement.
    pub prior: PriorKind,
    /// Dense token budget used during training.
    pub train_m: usize,
    /// When set, each batch draws its budget from {16, 32, 64}.
    pub budget_jitter: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            encoder: EncoderConfig::toy(),
            tokenizer: TokenizerConfig { window: 8, ..TokenizerConfig::default() },
            epochs: 8,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            prior: PriorKind::Isotropic,
            train_m: 64,
            budget_jitter: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.tokenizer.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.train_m == 0 {
            return Err(Error::InvalidArgument("training counts must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Result of a training run.
pub struct TrainOutcome {
    /// Parameters of the best-validation epoch.
    pub params: EncoderParams,
    pub best_val_top1: f64,
    /// Per-epoch `(mean train loss, val top-1)`.
    pub history: Vec<(f64, f64)>,
}

fn prior_for(
    kind: PriorKind,
    m: usize,
    sample_index: usize,
    base_seed: u64,
    sample: &ToySample,
) -> Result<crate::priors::PlacementSet> {
    let mut spec = PriorSpec::new(kind, m, 0);
    spec.seed = base_seed ^ (sample_index as u64).wrapping_mul(0xA076_1D64_78BD_642F);
    spec.sample(sample.image.height(), sample.image.width(), Some(&sample.saliency))
}

/// Tokenize one sample under a prior and run the encoder forward.
fn forward_sample(
    params: &EncoderParams,
    tokcfg: &TokenizerConfig,
    sample: &ToySample,
    kind: PriorKind,
    m: usize,
    seed: u64,
    index: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let placements = prior_for(kind, m, index, seed, sample)?;
    let tokens = subpixel::tokenize(&sample.image, &placements, tokcfg)?;
    encoder::forward(params, &tokens)
}

/// Cross-entropy training with Adam and cosine decay; returns the parameters
/// of the best validation epoch. The dataset splits 90/10 by index.
pub fn train_toy(config: &TrainConfig, dataset: &[ToySample]) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.len() < 10 {
        return Err(Error::InvalidArgument("dataset too small for a 90/10 split".into()));
    }
    let split = dataset.len() * 9 / 10;
    let (train, val) = dataset.split_at(split);

    let mut params = EncoderParams::init(config.encoder.clone(), config.seed)?;
    // Adam state aligned with tensor visit order
    let mut adam_m: Vec<Vec<f64>> = Vec::new();
    let mut adam_v: Vec<Vec<f64>> = Vec::new();
    params.for_each_tensor(|_, _, v| {
        adam_m.push(vec![0.0; v.len()]);
        adam_v.push(vec![0.0; v.len()]);
    });
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);

    let total_steps = config.epochs * train.len().div_ceil(config.batch_size);
    let mut step = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut best_params = params.clone();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        // seeded shuffle
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng = SplitMix64::derive(config.seed ^ 0x5F0F, epoch as u64);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.below(i as u64 + 1) as usize;
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let m = if config.budget_jitter {
                let mut r = SplitMix64::derive(config.seed ^ 0xB0D6, (epoch * 10_000 + batches) as u64);
                [16, 32, 64][r.below(3) as usize]
            } else {
                config.train_m
            };
            // per-image forward/backward, reduced in index order
            let results: Vec<Result<(f64, EncoderParams)>> = batch
                .par_iter()
                .map(|&idx| {
                    let sample = &train[idx];
                    let placements = prior_for(config.prior, m, idx, config.seed, sample)?;
                    let tokens = subpixel::tokenize(&sample.image, &placements, &config.tokenizer)?;
                    let trace = encoder::forward_traced(&params, &tokens)?;
                    let loss = encoder::loss(
                        trace.logits(),
                        sample.label,
                        config.encoder.label_smoothing,
                    )?;
                    let grads = encoder::backward_params(&params, &trace, sample.label)?;
                    Ok((loss, grads))
                })
                .collect();
            let mut batch_loss = 0.0;
            let mut grad_sum: Option<EncoderParams> = None;
            for r in results {
                let (loss, grads) = r?;
                batch_loss += loss;
                match &mut grad_sum {
                    None => grad_sum = Some(grads),
                    Some(acc) => {
                        let mut tensors: Vec<Vec<f64>> = Vec::new();
                        grads.for_each_tensor(|_, _, v| tensors.push(v.to_vec()));
                        let mut i = 0;
                        acc.for_each_tensor_mut(|_, v| {
                            crate::linalg::axpy(1.0, &tensors[i], v);
                            i += 1;
                        });
                    }
                }
            }
            let count = batch.len() as f64;
            batch_loss /= count;
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged: non-finite loss at epoch {epoch} step {step}"
                )));
            }
            epoch_loss += batch_loss;
            batches += 1;
            let mut grads = grad_sum.expect("nonempty batch");
            // mean over the batch + global-norm clip at 1.0
            let mut sq_norm = 0.0;
            grads.for_each_tensor_mut(|_, v| {
                for g in v.iter_mut() {
                    *g /= count;
                    sq_norm += *g * *g;
                }
            });
            let clip = (1.0 / sq_norm.sqrt()).min(1.0);
            // 5% linear warmup, then cosine decay to zero
            let warmup = (total_steps / 20).max(1);
            let lr_t = if step < warmup {
                config.lr * (step + 1) as f64 / warmup as f64
            } else {
                let t = (step - warmup) as f64 / (total_steps - warmup).max(1) as f64;
                config.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            };
            step += 1;
            let t = step as f64;
            let bc1 = 1.0 - beta1.powf(t);
            let bc2 = 1.0 - beta2.powf(t);
            let mut grad_tensors: Vec<Vec<f64>> = Vec::new();
            grads.for_each_tensor(|_, _, v| grad_tensors.push(v.to_vec()));
            let mut i = 0;
            params.for_each_tensor_mut(|_, v| {
                let g = &grad_tensors[i];
                let (m1, v2) = (&mut adam_m[i], &mut adam_v[i]);
                for ((p, &gr), (mm, vv)) in
                    v.iter_mut().zip(g.iter()).zip(m1.iter_mut().zip(v2.iter_mut()))
                {
                    let gc = gr * clip;
                    *mm = beta1 * *mm + (1.0 - beta1) * gc;
                    *vv = beta2 * *vv + (1.0 - beta2) * gc * gc;
                    let mhat = *mm / bc1;
                    let vhat = *vv / bc2;
                    *p -= lr_t * mhat / (vhat.sqrt() + eps);
                }
                i += 1;
            });
        }
        let val_top1 = eval_top1(&params, &config.tokenizer, val, config.prior, config.train_m, config.seed)?;
        history.push((epoch_loss / batches as f64, val_top1));
        if val_top1 > best_val {
            best_val = val_top1;
            best_params = params.clone();
        }
    }
    Ok(TrainOutcome { params: best_params, best_val_top1: best_val, history })
}

/// Top-1 accuracy of `params` over `samples` under a prior and budget.
pub fn eval_top1(
    params: &EncoderParams,
    tokcfg: &TokenizerConfig,
    samples: &[ToySample],
    prior: PriorKind,
    m: usize,
    seed: u64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let preds: Vec<Result<usize>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let (logits, _) = forward_sample(params, tokcfg, s, prior, m, seed, i)?;
            Ok(crate::oracle::argmax(&logits))
        })
        .collect();
    let mut correct = 0usize;
    for (p, s) in preds.into_iter().zip(samples) {
        if p? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Full evaluation under the kNN protocol: the database holds class-token
/// features of `db_samples`, queries come from `query_samples`, both under
/// the same prior protocol. Returns the combined report.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    params: &EncoderParams,
    tokcfg: &TokenizerConfig,
    db_samples: &[ToySample],
    query_samples: &[ToySample],
    prior: PriorKind,
    m: usize,
    seed: u64,
    knn_k: usize,
    knn_temperature: f64,
) -> Result<EvalReport> {
    if query_samples.is_empty() || db_samples.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation or database set".into()));
    }
    let db: Vec<Result<Vec<f64>>> = db_samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| Ok(forward_sample(params, tokcfg, s, prior, m, seed, i)?.1))
        .collect();
    let db_features: Vec<Vec<f64>> = db.into_iter().collect::<Result<_>>()?;
    let db_labels: Vec<usize> = db_samples.iter().map(|s| s.label).collect();

    let evals: Vec<Result<(usize, usize)>> = query_samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            // query streams never collide with database streams
            let (logits, feature) =
                forward_sample(params, tokcfg, s, prior, m, seed ^ 0x9E37, i)?;
            let pred = crate::oracle::argmax(&logits);
            let k = knn_k.min(db_features.len());
            let knn_pred =
                metrics::knn_classify(&db_features, &db_labels, &feature, k, knn_temperature)?;
            Ok((pred, knn_pred))
        })
        .collect();
    let mut preds = Vec::with_capacity(query_samples.len());
    let mut knn_preds = Vec::with_capacity(query_samples.len());
    for e in evals {
        let (p, kp) = e?;
        preds.push(p);
        knn_preds.push(kp);
    }
    let labels: Vec<usize> = query_samples.iter().map(|s| s.label).collect();
    metrics::build_report(&preds, &knn_preds, &labels, params.config().num_classes, m)
}
