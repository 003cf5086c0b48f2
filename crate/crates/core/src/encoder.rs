//! The toy transformer classifier with explicit forward and reverse passes.
//!
//! Architecture: token features project linearly into the model width and the
//! positional embedding is added; a class token is prepended; pre-norm blocks
//! of multi-head self-attention and a GELU MLP follow; the classifier head
//! reads the final-norm class-token state. Self-attention has no mask, so the
//! encoder treats its input as an unordered multiset of tokens.
//!
//! The reverse pass is written by hand against a [`ForwardTrace`] of cached
//! activations and produces exact gradients at three levels: parameters (for
//! training), token inputs (features + positional embeddings), and - composed
//! with the tokenizer Jacobians - the placements themselves. Summation order
//! is fixed everywhere, so identical inputs give bit-identical results.

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imagery::{self, DType, Image};
use crate::linalg::{axpy, dot, matvec};
use crate::priors::PlacementSet;
use crate::rng::SplitMix64;
use crate::subpixel::{self, Token, TokenizerConfig};

const LN_EPS: f64 = 1e-5;
const PARAMS_MAGIC: [u8; 4] = *b"SPTM";
const PARAMS_VERSION: u32 = 1;

/// Shape of the toy transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Number of transformer blocks.
    pub depth: usize,
    /// Model width d.
    pub width: usize,
    /// Attention heads; must divide the width.
    pub heads: usize,
    /// MLP hidden width as a multiple of d.
    pub mlp_ratio: usize,
    pub num_classes: usize,
    /// Flattened token feature length, `k^2 * C`.
    pub token_feature_dim: usize,
    pub label_smoothing: f64,
}

impl EncoderConfig {
    /// Toy default: depth 4, width 128, 4 heads, 8 classes, 8x8 RGB windows.
    pub fn toy() -> Self {
        EncoderConfig {
            depth: 4,
            width: 128,
            heads: 4,
            mlp_ratio: 4,
            num_classes: 8,
            token_feature_dim: 8 * 8 * 3,
            label_smoothing: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.depth,
            self.width,
            self.heads,
            self.mlp_ratio,
            self.num_classes,
            self.token_feature_dim,
        ];
        if counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidArgument("all encoder counts must be >= 1".into()));
        }
        if self.width % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "width {} not divisible by heads {}",
                self.width, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::InvalidArgument("label smoothing must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn mlp_dim(&self) -> usize {
        self.width * self.mlp_ratio
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

/// Per-block parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    /// `(3d, d)` row-major: rows 0..d are Q, d..2d are K, 2d..3d are V.
    pub qkv_w: Vec<f64>,
    pub qkv_b: Vec<f64>,
    /// `(d, d)` attention output projection.
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    /// `(mlp, d)` and `(d, mlp)` MLP matrices.
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Vec<f64>,
    pub fc2_b: Vec<f64>,
}

impl BlockParams {
    fn zeros(cfg: &EncoderConfig) -> Self {
        let d = cfg.width;
        let m = cfg.mlp_dim();
        BlockParams {
            ln1_g: vec![0.0; d],
            ln1_b: vec![0.0; d],
            qkv_w: vec![0.0; 3 * d * d],
            qkv_b: vec![0.0; 3 * d],
            out_w: vec![0.0; d * d],
            out_b: vec![0.0; d],
            ln2_g: vec![0.0; d],
            ln2_b: vec![0.0; d],
            fc1_w: vec![0.0; m * d],
            fc1_b: vec![0.0; m],
            fc2_w: vec![0.0; d * m],
            fc2_b: vec![0.0; d],
        }
    }
}

/// All weights of the classifier. The same struct doubles as the gradient
/// accumulator. A version counter detects stale traces: any mutation through
/// [`EncoderParams::for_each_tensor_mut`] bumps it.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    version: u64,
    /// `(d, feat)` token feature projection.
    pub patch_w: Vec<f64>,
    pub patch_b: Vec<f64>,
    /// Class-token vector.
    pub cls: Vec<f64>,
    pub blocks: Vec<BlockParams>,
    pub lnf_g: Vec<f64>,
    pub lnf_b: Vec<f64>,
    /// `(num_classes, d)` classifier head.
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl EncoderParams {
    /// All-zero parameters (LN scales included); see [`EncoderParams::init`]
    /// for a trainable initialization. Also serves as the gradient buffer.
    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let d = config.width;
        let blocks = (0..config.depth).map(|_| BlockParams::zeros(&config)).collect();
        Ok(EncoderParams {
            version: 0,
            patch_w: vec![0.0; d * config.token_feature_dim],
            patch_b: vec![0.0; d],
            cls: vec![0.0; d],
            blocks,
            lnf_g: vec![0.0; d],
            lnf_b: vec![0.0; d],
            head_w: vec![0.0; config.num_classes * d],
            head_b: vec![0.0; config.num_classes],
            config,
        })
    }

    /// Zeros with unit norm scales: the "empty" model that maps every input
    /// to the uniform distribution.
    pub fn zeros_with_unit_norms(config: EncoderConfig) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        for b in &mut p.blocks {
            b.ln1_g.fill(1.0);
            b.ln2_g.fill(1.0);
        }
        p.lnf_g.fill(1.0);
        Ok(p)
    }

    /// Random init: the input projection uses fan-in scaling so patch content
    /// enters the residual stream at unit-ish magnitude; everything else is
    /// normal(0, 0.02) with unit norm scales and zero biases.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros_with_unit_norms(config)?;
        let mut rng = SplitMix64::new(seed);
        let patch_scale = 1.0 / (p.config.token_feature_dim as f64).sqrt();
        for x in p.patch_w.iter_mut() {
            *x = patch_scale * rng.normal();
        }
        let mut fill = |v: &mut Vec<f64>| {
            for x in v.iter_mut() {
                *x = 0.02 * rng.normal();
            }
        };
        fill(&mut p.cls);
        for b in &mut p.blocks {
            fill(&mut b.qkv_w);
            fill(&mut b.out_w);
            fill(&mut b.fc1_w);
            fill(&mut b.fc2_w);
        }
        fill(&mut p.head_w);
        Ok(p)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Visit every tensor as `(name, dims, values)` in a fixed order.
    pub fn for_each_tensor(&self, mut f: impl FnMut(&str, &[usize], &[f64])) {
        let d = self.config.width;
        let feat = self.config.token_feature_dim;
        let m = self.config.mlp_dim();
        let c = self.config.num_classes;
        f("patch_w", &[d, feat], &self.patch_w);
        f("patch_b", &[d], &self.patch_b);
        f("cls", &[d], &self.cls);
        for (l, b) in self.blocks.iter().enumerate() {
            let name = |part: &str| format!("block{l}.{part}");
            f(&name("ln1_g"), &[d], &b.ln1_g);
            f(&name("ln1_b"), &[d], &b.ln1_b);
            f(&name("qkv_w"), &[3 * d, d], &b.qkv_w);
            f(&name("qkv_b"), &[3 * d], &b.qkv_b);
            f(&name("out_w"), &[d, d], &b.out_w);
            f(&name("out_b"), &[d], &b.out_b);
            f(&name("ln2_g"), &[d], &b.ln2_g);
            f(&name("ln2_b"), &[d], &b.ln2_b);
            f(&name("fc1_w"), &[m, d], &b.fc1_w);
            f(&name("fc1_b"), &[m], &b.fc1_b);
            f(&name("fc2_w"), &[d, m], &b.fc2_w);
            f(&name("fc2_b"), &[d], &b.fc2_b);
        }
        f("lnf_g", &[d], &self.lnf_g);
        f("lnf_b", &[d], &self.lnf_b);
        f("head_w", &[c, d], &self.head_w);
        f("head_b", &[c], &self.head_b);
    }

    /// Mutable tensor visit in the same order as [`Self::for_each_tensor`].
    /// Bumps the version counter, invalidating outstanding traces.
    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        self.version += 1;
        f("patch_w", &mut self.patch_w);
        f("patch_b", &mut self.patch_b);
        f("cls", &mut self.cls);
        for (l, b) in self.blocks.iter_mut().enumerate() {
            let name = |part: &str| format!("block{l}.{part}");
            f(&name("ln1_g"), &mut b.ln1_g);
            f(&name("ln1_b"), &mut b.ln1_b);
            f(&name("qkv_w"), &mut b.qkv_w);
            f(&name("qkv_b"), &mut b.qkv_b);
            f(&name("out_w"), &mut b.out_w);
            f(&name("out_b"), &mut b.out_b);
            f(&name("ln2_g"), &mut b.ln2_g);
            f(&name("ln2_b"), &mut b.ln2_b);
            f(&name("fc1_w"), &mut b.fc1_w);
            f(&name("fc1_b"), &mut b.fc1_b);
            f(&name("fc2_w"), &mut b.fc2_w);
            f(&name("fc2_b"), &mut b.fc2_b);
        }
        f("lnf_g", &mut self.lnf_g);
        f("lnf_b", &mut self.lnf_b);
        f("head_w", &mut self.head_w);
        f("head_b", &mut self.head_b);
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(|_, _, v| n += v.len());
        n
    }

    /// Content digest over all tensors in visit order.
    pub fn digest(&self) -> u64 {
        let mut acc: u64 = 0xcbf2_9ce4_8422_2325;
        self.for_each_tensor(|_, _, v| {
            acc ^= crate::rng::digest_f64(v);
            acc = acc.wrapping_mul(0x0000_0100_0000_01B3);
        });
        acc
    }

    /// Write all tensors into a single container: a manifest of
    /// `(name, dims, offset, length)` entries followed by one TensorFile blob
    /// per tensor. A pseudo-tensor named `config` leads the manifest.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut entries: Vec<(String, Vec<usize>, u64, u64)> = Vec::new();
        let mut blobs: Vec<u8> = Vec::new();
        let mut stage = |name: &str, dims: &[usize], values: &[f64]| {
            let mut blob = Vec::new();
            imagery::encode_tensor(dims, values, DType::F64, &mut blob).expect("vec write");
            entries.push((name.to_string(), dims.to_vec(), blobs.len() as u64, blob.len() as u64));
            blobs.extend(blob);
        };
        let cfg = &self.config;
        let cfg_vec = [
            cfg.depth as f64,
            cfg.width as f64,
            cfg.heads as f64,
            cfg.mlp_ratio as f64,
            cfg.num_classes as f64,
            cfg.token_feature_dim as f64,
            cfg.label_smoothing,
        ];
        stage("config", &[cfg_vec.len()], &cfg_vec);
        self.for_each_tensor(|name, dims, values| stage(name, dims, values));

        let mut manifest: Vec<u8> = Vec::new();
        manifest.extend(PARAMS_MAGIC);
        manifest.extend(PARAMS_VERSION.to_le_bytes());
        manifest.extend((entries.len() as u32).to_le_bytes());
        for (name, dims, offset, len) in &entries {
            manifest.extend((name.len() as u32).to_le_bytes());
            manifest.extend(name.as_bytes());
            manifest.extend((dims.len() as u32).to_le_bytes());
            for &dim in dims {
                manifest.extend((dim as u32).to_le_bytes());
            }
            manifest.extend(offset.to_le_bytes());
            manifest.extend(len.to_le_bytes());
        }
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        w.write_all(&manifest).map_err(|e| Error::io(path, e))?;
        w.write_all(&blobs).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Load a parameter file. The stored tensors must match the stored config
    /// exactly; any name, shape or count mismatch is an error.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            let end = *pos + n;
            let slice =
                bytes.get(*pos..end).ok_or_else(|| Error::format(path, "truncated manifest"))?;
            *pos = end;
            Ok(slice)
        };
        let u32_at =
            |pos: &mut usize| -> Result<u32> { Ok(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap())) };
        if take(&mut pos, 4)? != PARAMS_MAGIC {
            return Err(Error::format(path, "bad magic (want SPTM)"));
        }
        let version = u32_at(&mut pos)?;
        if version != PARAMS_VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let count = u32_at(&mut pos)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u32_at(&mut pos)? as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| Error::format(path, "manifest name not utf-8"))?;
            let ndim = u32_at(&mut pos)? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(u32_at(&mut pos)? as usize);
            }
            let offset = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
            let len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
            entries.push((name, dims, offset, len));
        }
        let payload = &bytes[pos..];
        let fetch = |name: &str, entry_dims: &[usize], offset: usize, len: usize| -> Result<Vec<f64>> {
            let blob = payload
                .get(offset..offset + len)
                .ok_or_else(|| Error::format(path, format!("tensor {name} out of range")))?;
            let (dims, values) = imagery::decode_tensor(blob, path)?;
            if dims != entry_dims {
                return Err(Error::format(path, format!("tensor {name}: manifest/blob dims differ")));
            }
            Ok(values)
        };

        let (cfg_name, cfg_dims, cfg_off, cfg_len) = entries
            .first()
            .filter(|e| e.0 == "config")
            .ok_or_else(|| Error::format(path, "missing config entry"))?;
        let cfg_vec = fetch(cfg_name, cfg_dims, *cfg_off as usize, *cfg_len as usize)?;
        if cfg_vec.len() != 7 {
            return Err(Error::format(path, "config entry must hold 7 values"));
        }
        let config = EncoderConfig {
            depth: cfg_vec[0] as usize,
            width: cfg_vec[1] as usize,
            heads: cfg_vec[2] as usize,
            mlp_ratio: cfg_vec[3] as usize,
            num_classes: cfg_vec[4] as usize,
            token_feature_dim: cfg_vec[5] as usize,
            label_smoothing: cfg_vec[6],
        };
        let mut params = EncoderParams::zeros(config)?;

        let mut iter = entries.iter().skip(1);
        let mut status: Result<()> = Ok(());
        params.for_each_tensor_mut(|name, values| {
            if status.is_err() {
                return;
            }
            let Some((entry_name, dims, offset, len)) = iter.next() else {
                status = Err(Error::format(path, "manifest has too few tensors"));
                return;
            };
            if entry_name != name {
                status =
                    Err(Error::format(path, format!("expected tensor {name}, found {entry_name}")));
                return;
            }
            match fetch(entry_name, dims, *offset, *len) {
                Ok(v) if v.len() == values.len() => values.copy_from_slice(&v),
                Ok(v) => {
                    status = Err(Error::format(
                        path,
                        format!("tensor {name}: {} values, expected {}", v.len(), values.len()),
                    ));
                }
                Err(e) => status = Err(e),
            }
        });
        status?;
        if iter.next().is_some() {
            return Err(Error::format(path, "manifest has extra tensors"));
        }
        params.version = 0;
        Ok(params)
    }
}

/// tanh-approximation GELU and its derivative.
#[inline]
fn gelu(x: f64) -> f64 {
    const S: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const C: f64 = 0.044715;
    0.5 * x * (1.0 + (S * (x + C * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    const S: f64 = 0.797_884_560_802_865_4;
    const C: f64 = 0.044715;
    let a = S * (x + C * x * x * x);
    let t = a.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * S * (1.0 + 3.0 * C * x * x)
}

/// LayerNorm over one vector; returns (mean, rstd).
#[inline]
fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], out: &mut [f64]) -> (f64, f64) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        out[i] = (x[i] - mean) * rstd * gamma[i] + beta[i];
    }
    (mean, rstd)
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Per-block activation cache. Token-major matrices are `(n, d)`; attention
/// probabilities are `(heads, n, n)`.
struct BlockTrace {
    x_in: Vec<f64>,
    ln1_mean: Vec<f64>,
    ln1_rstd: Vec<f64>,
    h1: Vec<f64>,
    qkv: Vec<f64>,
    att_probs: Vec<f64>,
    att_merged: Vec<f64>,
    x_mid: Vec<f64>,
    ln2_mean: Vec<f64>,
    ln2_rstd: Vec<f64>,
    h2: Vec<f64>,
    mlp_pre: Vec<f64>,
    mlp_act: Vec<f64>,
}

/// Cached activations of one forward call, consumed by the reverse pass.
pub struct ForwardTrace {
    params_version: u64,
    n: usize,
    token_features: Vec<Vec<f64>>,
    blocks: Vec<BlockTrace>,
    x_final: Vec<f64>,
    lnf_mean: f64,
    lnf_rstd: f64,
    cls_feature: Vec<f64>,
    logits: Vec<f64>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn cls_feature(&self) -> &[f64] {
        &self.cls_feature
    }
}

/// Gradients of the loss w.r.t. one token's inputs.
#[derive(Debug, Clone)]
pub struct TokenGrad {
    pub d_features: Vec<f64>,
    pub d_pos_embedding: Vec<f64>,
}

fn check_tokens(params: &EncoderParams, tokens: &[Token]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("forward requires at least one token".into()));
    }
    let cfg = &params.config;
    for (i, t) in tokens.iter().enumerate() {
        if t.features.len() != cfg.token_feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "token {i} features {} != config {}",
                t.features.len(),
                cfg.token_feature_dim
            )));
        }
        if t.pos_embedding.len() != cfg.width {
            return Err(Error::ShapeMismatch(format!(
                "token {i} embedding {} != width {}",
                t.pos_embedding.len(),
                cfg.width
            )));
        }
    }
    Ok(())
}

/// Forward pass; returns `(logits, cls_feature)`.
pub fn forward(params: &EncoderParams, tokens: &[Token]) -> Result<(Vec<f64>, Vec<f64>)> {
    let trace = forward_traced(params, tokens)?;
    Ok((trace.logits, trace.cls_feature))
}

/// Forward pass that caches every activation the reverse pass needs.
pub fn forward_traced(params: &EncoderParams, tokens: &[Token]) -> Result<ForwardTrace> {
    check_tokens(params, tokens)?;
    let cfg = &params.config;
    let d = cfg.width;
    let n = tokens.len() + 1; // class token at index 0
    let heads = cfg.heads;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mlp = cfg.mlp_dim();

    // embed: x[0] = cls, x[i] = patch_w f_i + patch_b + pe_i
    let mut x = vec![0.0; n * d];
    x[..d].copy_from_slice(&params.cls);
    for (i, t) in tokens.iter().enumerate() {
        let row = &mut x[(i + 1) * d..(i + 2) * d];
        matvec(&params.patch_w, Some(&params.patch_b), &t.features, row);
        for (r, pe) in row.iter_mut().zip(&t.pos_embedding) {
            *r += pe;
        }
    }

    let mut blocks = Vec::with_capacity(cfg.depth);
    for bp in &params.blocks {
        let x_in = x;
        // pre-norm attention
        let mut h1 = vec![0.0; n * d];
        let mut ln1_mean = vec![0.0; n];
        let mut ln1_rstd = vec![0.0; n];
        for t in 0..n {
            let (m, r) = layer_norm(
                &x_in[t * d..(t + 1) * d],
                &bp.ln1_g,
                &bp.ln1_b,
                &mut h1[t * d..(t + 1) * d],
            );
            ln1_mean[t] = m;
            ln1_rstd[t] = r;
        }
        let mut qkv = vec![0.0; n * 3 * d];
        for t in 0..n {
            matvec(
                &bp.qkv_w,
                Some(&bp.qkv_b),
                &h1[t * d..(t + 1) * d],
                &mut qkv[t * 3 * d..(t + 1) * 3 * d],
            );
        }
        let mut att_probs = vec![0.0; heads * n * n];
        let mut att_merged = vec![0.0; n * d];
        for h in 0..heads {
            let off_q = h * hd;
            let off_k = d + h * hd;
            let off_v = 2 * d + h * hd;
            for i in 0..n {
                let q = &qkv[i * 3 * d + off_q..i * 3 * d + off_q + hd];
                let row = &mut att_probs[(h * n + i) * n..(h * n + i + 1) * n];
                for (j, rj) in row.iter_mut().enumerate() {
                    let k = &qkv[j * 3 * d + off_k..j * 3 * d + off_k + hd];
                    *rj = dot(q, k) * scale;
                }
                softmax_in_place(row);
                let out = &mut att_merged[i * d + h * hd..i * d + (h + 1) * hd];
                for j in 0..n {
                    let v = &qkv[j * 3 * d + off_v..j * 3 * d + off_v + hd];
                    axpy(row[j], v, out);
                }
            }
        }
        // residual add of the projected attention output
        let mut x_mid = x_in.clone();
        let mut proj = vec![0.0; d];
        for t in 0..n {
            matvec(&bp.out_w, Some(&bp.out_b), &att_merged[t * d..(t + 1) * d], &mut proj);
            axpy(1.0, &proj, &mut x_mid[t * d..(t + 1) * d]);
        }
        // pre-norm MLP
        let mut h2 = vec![0.0; n * d];
        let mut ln2_mean = vec![0.0; n];
        let mut ln2_rstd = vec![0.0; n];
        for t in 0..n {
            let (m, r) = layer_norm(
                &x_mid[t * d..(t + 1) * d],
                &bp.ln2_g,
                &bp.ln2_b,
                &mut h2[t * d..(t + 1) * d],
            );
            ln2_mean[t] = m;
            ln2_rstd[t] = r;
        }
        let mut mlp_pre = vec![0.0; n * mlp];
        let mut mlp_act = vec![0.0; n * mlp];
        let mut x_out = x_mid.clone();
        let mut back = vec![0.0; d];
        for t in 0..n {
            let pre = &mut mlp_pre[t * mlp..(t + 1) * mlp];
            matvec(&bp.fc1_w, Some(&bp.fc1_b), &h2[t * d..(t + 1) * d], pre);
            let act = &mut mlp_act[t * mlp..(t + 1) * mlp];
            for (a, p) in act.iter_mut().zip(pre.iter()) {
                *a = gelu(*p);
            }
            matvec(&bp.fc2_w, Some(&bp.fc2_b), act, &mut back);
            axpy(1.0, &back, &mut x_out[t * d..(t + 1) * d]);
        }
        blocks.push(BlockTrace {
            x_in,
            ln1_mean,
            ln1_rstd,
            h1,
            qkv,
            att_probs,
            att_merged,
            x_mid,
            ln2_mean,
            ln2_rstd,
            h2,
            mlp_pre,
            mlp_act,
        });
        x = x_out;
    }

    // final norm on the class token only; other rows feed nothing downstream
    let mut cls_feature = vec![0.0; d];
    let (lnf_mean, lnf_rstd) = layer_norm(&x[..d], &params.lnf_g, &params.lnf_b, &mut cls_feature);
    let mut logits = vec![0.0; cfg.num_classes];
    matvec(&params.head_w, Some(&params.head_b), &cls_feature, &mut logits);

    Ok(ForwardTrace {
        params_version: params.version,
        n,
        token_features: tokens.iter().map(|t| t.features.clone()).collect(),
        blocks,
        x_final: x,
        lnf_mean,
        lnf_rstd,
        cls_feature,
        logits,
    })
}

/// Smoothed target distribution: `eps / C` everywhere plus `1 - eps` on the
/// true class.
fn target_distribution(num_classes: usize, label: usize, smoothing: f64) -> Vec<f64> {
    let mut q = vec![smoothing / num_classes as f64; num_classes];
    q[label] += 1.0 - smoothing;
    q
}

/// Cross-entropy of logits against a (possibly smoothed) one-hot label via a
/// numerically stable log-sum-exp.
pub fn loss(logits: &[f64], label: usize, smoothing: f64) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let q = target_distribution(logits.len(), label, smoothing);
    Ok(lse - q.iter().zip(logits).map(|(qi, li)| qi * li).sum::<f64>())
}

/// Gradient of [`loss`] w.r.t. the logits: `softmax(logits) - q`.
fn loss_grad_logits(logits: &[f64], label: usize, smoothing: f64) -> Vec<f64> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    let q = target_distribution(logits.len(), label, smoothing);
    for (pi, qi) in p.iter_mut().zip(q) {
        *pi -= qi;
    }
    p
}

/// LayerNorm reverse for one token; accumulates into `dx`, `dgamma`, `dbeta`.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward(
    dy: &[f64],
    x: &[f64],
    gamma: &[f64],
    mean: f64,
    rstd: f64,
    dx: &mut [f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) {
    let d = x.len() as f64;
    let mut dnorm_mean = 0.0;
    let mut dnorm_xhat_mean = 0.0;
    for i in 0..x.len() {
        let xhat = (x[i] - mean) * rstd;
        let dnorm = dy[i] * gamma[i];
        dnorm_mean += dnorm;
        dnorm_xhat_mean += dnorm * xhat;
    }
    dnorm_mean /= d;
    dnorm_xhat_mean /= d;
    for i in 0..x.len() {
        let xhat = (x[i] - mean) * rstd;
        let dnorm = dy[i] * gamma[i];
        dgamma[i] += dy[i] * xhat;
        dbeta[i] += dy[i];
        dx[i] += rstd * (dnorm - dnorm_mean - xhat * dnorm_xhat_mean);
    }
}

/// Shared reverse pass. Always walks the whole graph; the flags control which
/// gradient sets are materialized.
fn reverse(
    params: &EncoderParams,
    trace: &ForwardTrace,
    label: usize,
    want_params: bool,
    want_tokens: bool,
) -> Result<(Option<EncoderParams>, Option<Vec<TokenGrad>>)> {
    if trace.params_version != params.version {
        return Err(Error::InvalidArgument(
            "stale trace: parameters changed after the forward pass".into(),
        ));
    }
    let cfg = &params.config;
    if label >= cfg.num_classes {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            cfg.num_classes
        )));
    }
    let d = cfg.width;
    let n = trace.n;
    let heads = cfg.heads;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mlp = cfg.mlp_dim();

    let mut grads = EncoderParams::zeros(cfg.clone())?;

    // head and final norm (class token only)
    let dlogits = loss_grad_logits(&trace.logits, label, cfg.label_smoothing);
    let mut dcls_feature = vec![0.0; d];
    for (c, &dl) in dlogits.iter().enumerate() {
        axpy(dl, &params.head_w[c * d..(c + 1) * d], &mut dcls_feature);
        if want_params {
            axpy(dl, &trace.cls_feature, &mut grads.head_w[c * d..(c + 1) * d]);
            grads.head_b[c] += dl;
        }
    }
    let mut dx = vec![0.0; n * d];
    {
        let mut dg = vec![0.0; d];
        let mut db = vec![0.0; d];
        layer_norm_backward(
            &dcls_feature,
            &trace.x_final[..d],
            &params.lnf_g,
            trace.lnf_mean,
            trace.lnf_rstd,
            &mut dx[..d],
            &mut dg,
            &mut db,
        );
        if want_params {
            grads.lnf_g.copy_from_slice(&dg);
            grads.lnf_b.copy_from_slice(&db);
        }
    }

    // blocks in reverse
    for ((bp, bt), gb) in params
        .blocks
        .iter()
        .rev()
        .zip(trace.blocks.iter().rev())
        .zip(grads.blocks.iter_mut().rev())
    {
        // MLP residual branch
        let mut dh2 = vec![0.0; n * d];
        for t in 0..n {
            let dxr: Vec<f64> = dx[t * d..(t + 1) * d].to_vec();
            let act = &bt.mlp_act[t * mlp..(t + 1) * mlp];
            let pre = &bt.mlp_pre[t * mlp..(t + 1) * mlp];
            let mut dact = vec![0.0; mlp];
            for r in 0..d {
                axpy(dxr[r], &bp.fc2_w[r * mlp..(r + 1) * mlp], &mut dact);
            }
            if want_params {
                for r in 0..d {
                    axpy(dxr[r], act, &mut gb.fc2_w[r * mlp..(r + 1) * mlp]);
                    gb.fc2_b[r] += dxr[r];
                }
            }
            let mut dpre = dact;
            for (dp, p) in dpre.iter_mut().zip(pre) {
                *dp *= gelu_grad(*p);
            }
            let dh2_t = &mut dh2[t * d..(t + 1) * d];
            for r in 0..mlp {
                axpy(dpre[r], &bp.fc1_w[r * d..(r + 1) * d], dh2_t);
            }
            if want_params {
                let h2_t = &bt.h2[t * d..(t + 1) * d];
                for r in 0..mlp {
                    axpy(dpre[r], h2_t, &mut gb.fc1_w[r * d..(r + 1) * d]);
                    gb.fc1_b[r] += dpre[r];
                }
            }
        }
        // ln2 backward into the residual stream (residual identity keeps dx)
        for t in 0..n {
            layer_norm_backward(
                &dh2[t * d..(t + 1) * d],
                &bt.x_mid[t * d..(t + 1) * d],
                &bp.ln2_g,
                bt.ln2_mean[t],
                bt.ln2_rstd[t],
                &mut dx[t * d..(t + 1) * d],
                &mut gb.ln2_g,
                &mut gb.ln2_b,
            );
        }

        // attention residual branch: datt_merged = out_w^T dx
        let mut datt_merged = vec![0.0; n * d];
        for t in 0..n {
            let dxr: Vec<f64> = dx[t * d..(t + 1) * d].to_vec();
            let dm = &mut datt_merged[t * d..(t + 1) * d];
            for r in 0..d {
                axpy(dxr[r], &bp.out_w[r * d..(r + 1) * d], dm);
            }
            if want_params {
                let merged = &bt.att_merged[t * d..(t + 1) * d];
                for r in 0..d {
                    axpy(dxr[r], merged, &mut gb.out_w[r * d..(r + 1) * d]);
                    gb.out_b[r] += dxr[r];
                }
            }
        }
        // attention core
        let mut dqkv = vec![0.0; n * 3 * d];
        for h in 0..heads {
            let off_q = h * hd;
            let off_k = d + h * hd;
            let off_v = 2 * d + h * hd;
            for i in 0..n {
                let probs = &bt.att_probs[(h * n + i) * n..(h * n + i + 1) * n];
                let dout = &datt_merged[i * d + h * hd..i * d + (h + 1) * hd];
                let mut dprobs = vec![0.0; n];
                for j in 0..n {
                    let v = &bt.qkv[j * 3 * d + off_v..j * 3 * d + off_v + hd];
                    dprobs[j] = dot(dout, v);
                }
                for j in 0..n {
                    let dv = &mut dqkv[j * 3 * d + off_v..j * 3 * d + off_v + hd];
                    axpy(probs[j], dout, dv);
                }
                // softmax backward
                let inner = dot(probs, &dprobs);
                let q: Vec<f64> = bt.qkv[i * 3 * d + off_q..i * 3 * d + off_q + hd].to_vec();
                let mut dq_acc = vec![0.0; hd];
                for j in 0..n {
                    let dscore = probs[j] * (dprobs[j] - inner) * scale;
                    let k = &bt.qkv[j * 3 * d + off_k..j * 3 * d + off_k + hd];
                    axpy(dscore, k, &mut dq_acc);
                    let dk = &mut dqkv[j * 3 * d + off_k..j * 3 * d + off_k + hd];
                    axpy(dscore, &q, dk);
                }
                axpy(1.0, &dq_acc, &mut dqkv[i * 3 * d + off_q..i * 3 * d + off_q + hd]);
            }
        }
        // qkv projection backward
        let mut dh1 = vec![0.0; n * d];
        for t in 0..n {
            let dq = &dqkv[t * 3 * d..(t + 1) * 3 * d];
            let dh = &mut dh1[t * d..(t + 1) * d];
            for r in 0..3 * d {
                axpy(dq[r], &bp.qkv_w[r * d..(r + 1) * d], dh);
            }
            if want_params {
                let h1_t = &bt.h1[t * d..(t + 1) * d];
                for r in 0..3 * d {
                    axpy(dq[r], h1_t, &mut gb.qkv_w[r * d..(r + 1) * d]);
                    gb.qkv_b[r] += dq[r];
                }
            }
        }
        // ln1 backward into the residual stream
        for t in 0..n {
            layer_norm_backward(
                &dh1[t * d..(t + 1) * d],
                &bt.x_in[t * d..(t + 1) * d],
                &bp.ln1_g,
                bt.ln1_mean[t],
                bt.ln1_rstd[t],
                &mut dx[t * d..(t + 1) * d],
                &mut gb.ln1_g,
                &mut gb.ln1_b,
            );
        }
    }

    // embedding backward
    let token_grads = if want_tokens {
        let mut out = Vec::with_capacity(n - 1);
        for i in 1..n {
            let dxr = &dx[i * d..(i + 1) * d];
            let mut d_features = vec![0.0; cfg.token_feature_dim];
            let feat_dim = cfg.token_feature_dim;
            for r in 0..d {
                axpy(dxr[r], &params.patch_w[r * feat_dim..(r + 1) * feat_dim], &mut d_features);
            }
            out.push(TokenGrad { d_features, d_pos_embedding: dxr.to_vec() });
        }
        Some(out)
    } else {
        None
    };
    if want_params {
        grads.cls.copy_from_slice(&dx[..d]);
        let feat_dim = cfg.token_feature_dim;
        for i in 1..n {
            let dxr = &dx[i * d..(i + 1) * d];
            let feats = &trace.token_features[i - 1];
            for r in 0..d {
                axpy(dxr[r], feats, &mut grads.patch_w[r * feat_dim..(r + 1) * feat_dim]);
                grads.patch_b[r] += dxr[r];
            }
        }
    }

    Ok((want_params.then_some(grads), token_grads))
}

/// Exact reverse-mode gradients w.r.t. every parameter tensor.
pub fn backward_params(
    params: &EncoderParams,
    trace: &ForwardTrace,
    label: usize,
) -> Result<EncoderParams> {
    let (g, _) = reverse(params, trace, label, true, false)?;
    Ok(g.expect("requested"))
}

/// Exact reverse-mode gradients w.r.t. each token's features and embedding.
pub fn backward_tokens(
    params: &EncoderParams,
    trace: &ForwardTrace,
    label: usize,
) -> Result<Vec<TokenGrad>> {
    let (_, t) = reverse(params, trace, label, false, true)?;
    Ok(t.expect("requested"))
}

/// Both gradient sets from one reverse sweep (used by the trainer).
pub fn backward_all(
    params: &EncoderParams,
    trace: &ForwardTrace,
    label: usize,
) -> Result<(EncoderParams, Vec<TokenGrad>)> {
    let (g, t) = reverse(params, trace, label, true, true)?;
    Ok((g.expect("requested"), t.expect("requested")))
}

/// Loss and its gradient w.r.t. the placements, chained through the patch and
/// positional-embedding Jacobians. The two booleans select which gradient
/// routes contribute; disabling one is a diagnostic tool, not a normal mode.
pub fn position_gradient_with_paths(
    params: &EncoderParams,
    image: &Image,
    placements: &PlacementSet,
    label: usize,
    tokcfg: &TokenizerConfig,
    use_feature_path: bool,
    use_embedding_path: bool,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let tokens = subpixel::tokenize(image, placements, tokcfg)?;
    let trace = forward_traced(params, &tokens)?;
    let loss_value = loss(&trace.logits, label, params.config.label_smoothing)?;
    let token_grads = backward_tokens(params, &trace, label)?;
    let mut out = Vec::with_capacity(placements.len());
    for (i, &s) in placements.iter().enumerate() {
        let mut gx = 0.0;
        let mut gy = 0.0;
        if use_feature_path {
            let jac = subpixel::patch_position_jacobian(image, s, tokcfg.window)?;
            for (df, j) in token_grads[i].d_features.iter().zip(&jac) {
                gx += df * j[0];
                gy += df * j[1];
            }
        }
        if use_embedding_path {
            let jac =
                subpixel::positional_embedding_jacobian(s, image.height(), image.width(), tokcfg)?;
            for (dp, j) in token_grads[i].d_pos_embedding.iter().zip(&jac) {
                gx += dp * j[0];
                gy += dp * j[1];
            }
        }
        out.push((gx, gy));
    }
    Ok((loss_value, out))
}

/// Loss and full placement gradient `dL/dS`, an `m x 2` matrix.
pub fn position_gradient(
    params: &EncoderParams,
    image: &Image,
    placements: &PlacementSet,
    label: usize,
    tokcfg: &TokenizerConfig,
) -> Result<(f64, Vec<(f64, f64)>)> {
    position_gradient_with_paths(params, image, placements, label, tokcfg, true, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            depth: 2,
            width: 16,
            heads: 2,
            mlp_ratio: 2,
            num_classes: 4,
            token_feature_dim: 6,
            label_smoothing: 0.0,
        }
    }

    fn random_tokens(cfg: &EncoderConfig, count: usize, seed: u64) -> Vec<Token> {
        let mut rng = SplitMix64::new(seed);
        (0..count)
            .map(|i| Token {
                features: (0..cfg.token_feature_dim).map(|_| rng.u01()).collect(),
                position: (i as f64, i as f64),
                pos_embedding: (0..cfg.width).map(|_| rng.normal() * 0.5).collect(),
            })
            .collect()
    }

    fn run_loss(params: &EncoderParams, tokens: &[Token], label: usize) -> f64 {
        let (logits, _) = forward(params, tokens).unwrap();
        loss(&logits, label, params.config().label_smoothing).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_softmax() {
        let cfg = tiny_config();
        let params = EncoderParams::zeros_with_unit_norms(cfg.clone()).unwrap();
        let tokens = random_tokens(&cfg, 3, 1);
        let (logits, _) = forward(&params, &tokens).unwrap();
        let mut probs = logits.clone();
        softmax_in_place(&mut probs);
        for p in probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_permutation_invariant() {
        let cfg = tiny_config();
        let params = EncoderParams::init(cfg.clone(), 3).unwrap();
        let tokens = random_tokens(&cfg, 5, 2);
        let (logits_a, feat_a) = forward(&params, &tokens).unwrap();
        let mut permuted = tokens.clone();
        permuted.swap(0, 3);
        permuted.swap(1, 4);
        let (logits_b, feat_b) = forward(&params, &permuted).unwrap();
        for (a, b) in logits_a.iter().zip(&logits_b) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        for (a, b) in feat_a.iter().zip(&feat_b) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_vs_duplicated_token_differ() {
        let cfg = tiny_config();
        let params = EncoderParams::init(cfg.clone(), 7).unwrap();
        let one = random_tokens(&cfg, 1, 4);
        let two = vec![one[0].clone(), one[0].clone()];
        let (la, _) = forward(&params, &one).unwrap();
        let (lb, _) = forward(&params, &two).unwrap();
        let gap: f64 = la.iter().zip(&lb).map(|(a, b)| (a - b).abs()).sum();
        assert!(gap > 1e-8, "duplicate token left logits unchanged: {gap}");
    }

    #[test]
    fn loss_uniform_logits_is_ln_c() {
        let logits = vec![0.7; 10];
        let l = loss(&logits, 3, 0.0).unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        // smoothing does not change the loss at uniform logits
        let ls = loss(&logits, 3, 0.1).unwrap();
        assert!((ls - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_vanishes_with_margin() {
        let mut logits = vec![0.0; 8];
        logits[2] = 50.0;
        assert!(loss(&logits, 2, 0.0).unwrap() < 1e-12);
        assert!(loss(&vec![0.0; 8], 8, 0.0).is_err());
    }

    #[test]
    fn empty_token_list_rejected() {
        let params = EncoderParams::init(tiny_config(), 0).unwrap();
        assert!(forward(&params, &[]).is_err());
    }

    fn tensor_len(p: &EncoderParams, name: &str) -> usize {
        let mut out = 0;
        p.for_each_tensor(|n, _, v| {
            if n == name {
                out = v.len();
            }
        });
        out
    }

    fn tensor_at(p: &EncoderParams, name: &str, idx: usize) -> f64 {
        let mut out = 0.0;
        p.for_each_tensor(|n, _, v| {
            if n == name {
                out = v[idx];
            }
        });
        out
    }

    fn set_tensor_at(p: &mut EncoderParams, name: &str, idx: usize, value: f64) {
        p.for_each_tensor_mut(|n, v| {
            if n == name {
                v[idx] = value;
            }
        });
    }

    #[test]
    fn param_gradients_match_finite_differences() {
        let cfg = tiny_config();
        let mut params = EncoderParams::init(cfg.clone(), 11).unwrap();
        let tokens = random_tokens(&cfg, 3, 12);
        let label = 1;
        let trace = forward_traced(&params, &tokens).unwrap();
        let analytic = backward_params(&params, &trace, label).unwrap();

        let eps = 1e-5;
        let names: Vec<String> = {
            let mut v = Vec::new();
            params.for_each_tensor(|n, _, _| v.push(n.to_string()));
            v
        };
        for name in names {
            let len = tensor_len(&params, &name);
            for probe in 0..3usize.min(len) {
                let idx = (probe * (len / 3).max(1)) % len;
                let grad = tensor_at(&analytic, &name, idx);
                let orig = tensor_at(&params, &name, idx);
                set_tensor_at(&mut params, &name, idx, orig + eps);
                let lp = run_loss(&params, &tokens, label);
                set_tensor_at(&mut params, &name, idx, orig - eps);
                let lm = run_loss(&params, &tokens, label);
                set_tensor_at(&mut params, &name, idx, orig);
                let numeric = (lp - lm) / (2.0 * eps);
                let denom = grad.abs().max(numeric.abs());
                if denom > 1e-7 {
                    let rel = (grad - numeric).abs() / denom;
                    assert!(rel < 1e-5, "{name}[{idx}]: analytic {grad} vs fd {numeric}");
                } else {
                    assert!((grad - numeric).abs() < 1e-8, "{name}[{idx}]");
                }
            }
        }
    }

    #[test]
    fn token_gradients_match_finite_differences() {
        let cfg = tiny_config();
        let params = EncoderParams::init(cfg.clone(), 21).unwrap();
        let mut tokens = random_tokens(&cfg, 3, 22);
        let label = 2;
        let trace = forward_traced(&params, &tokens).unwrap();
        let analytic = backward_tokens(&params, &trace, label).unwrap();
        let eps = 1e-5;
        for ti in 0..tokens.len() {
            for fi in (0..cfg.token_feature_dim).step_by(2) {
                let orig = tokens[ti].features[fi];
                tokens[ti].features[fi] = orig + eps;
                let lp = run_loss(&params, &tokens, label);
                tokens[ti].features[fi] = orig - eps;
                let lm = run_loss(&params, &tokens, label);
                tokens[ti].features[fi] = orig;
                let numeric = (lp - lm) / (2.0 * eps);
                let grad = analytic[ti].d_features[fi];
                let denom = grad.abs().max(numeric.abs()).max(1e-7);
                assert!((grad - numeric).abs() / denom < 1e-5, "token {ti} feature {fi}");
            }
            for ei in (0..cfg.width).step_by(3) {
                let orig = tokens[ti].pos_embedding[ei];
                tokens[ti].pos_embedding[ei] = orig + eps;
                let lp = run_loss(&params, &tokens, label);
                tokens[ti].pos_embedding[ei] = orig - eps;
                let lm = run_loss(&params, &tokens, label);
                tokens[ti].pos_embedding[ei] = orig;
                let numeric = (lp - lm) / (2.0 * eps);
                let grad = analytic[ti].d_pos_embedding[ei];
                let denom = grad.abs().max(numeric.abs()).max(1e-7);
                assert!((grad - numeric).abs() / denom < 1e-5, "token {ti} embed {ei}");
            }
        }
    }

    #[test]
    fn token_gradients_are_permutation_equivariant() {
        let cfg = tiny_config();
        let params = EncoderParams::init(cfg.clone(), 31).unwrap();
        let tokens = random_tokens(&cfg, 4, 32);
        let trace = forward_traced(&params, &tokens).unwrap();
        let grads = backward_tokens(&params, &trace, 0).unwrap();
        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<Token> = perm.iter().map(|&i| tokens[i].clone()).collect();
        let trace_p = forward_traced(&params, &permuted).unwrap();
        let grads_p = backward_tokens(&params, &trace_p, 0).unwrap();
        for (slot, &src) in perm.iter().enumerate() {
            for (a, b) in grads[src].d_features.iter().zip(&grads_p[slot].d_features) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn identical_heads_receive_identical_gradients() {
        let cfg = tiny_config();
        let mut params = EncoderParams::init(cfg.clone(), 41).unwrap();
        let d = cfg.width;
        let hd = cfg.head_dim();
        // mirror head 0 onto head 1 in Q, K, V rows of block 0
        let qkv = &mut params.blocks[0].qkv_w;
        for section in 0..3 {
            for r in 0..hd {
                let src = (section * d + r) * d;
                let dst = (section * d + hd + r) * d;
                let row: Vec<f64> = qkv[src..src + d].to_vec();
                qkv[dst..dst + d].copy_from_slice(&row);
            }
        }
        // out_w must consume both heads identically as well
        let out_w = &mut params.blocks[0].out_w;
        for r in 0..d {
            let row: Vec<f64> = out_w[r * d..r * d + hd].to_vec();
            out_w[r * d + hd..r * d + 2 * hd].copy_from_slice(&row);
        }
        let tokens = random_tokens(&cfg, 3, 42);
        let trace = forward_traced(&params, &tokens).unwrap();
        let grads = backward_params(&params, &trace, 1).unwrap();
        let gq = &grads.blocks[0].qkv_w;
        for section in 0..3 {
            for r in 0..hd {
                for c in 0..d {
                    let a = gq[(section * d + r) * d + c];
                    let b = gq[(section * d + hd + r) * d + c];
                    assert!((a - b).abs() < 1e-10, "section {section} row {r} col {c}");
                }
            }
        }
    }

    #[test]
    fn zeroed_head_blocks_upstream_gradient() {
        let cfg = tiny_config();
        let mut params = EncoderParams::init(cfg.clone(), 51).unwrap();
        params.head_w.fill(0.0);
        params.head_b.fill(0.0);
        let tokens = random_tokens(&cfg, 2, 52);
        let trace = forward_traced(&params, &tokens).unwrap();
        let grads = backward_params(&params, &trace, 0).unwrap();
        // head gradient is nonzero, everything upstream is exactly zero
        assert!(grads.head_w.iter().any(|&g| g != 0.0));
        assert!(grads.patch_w.iter().all(|&g| g == 0.0));
        assert!(grads.blocks[0].qkv_w.iter().all(|&g| g == 0.0));
        assert!(grads.lnf_g.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn stale_trace_is_rejected() {
        let cfg = tiny_config();
        let mut params = EncoderParams::init(cfg.clone(), 61).unwrap();
        let tokens = random_tokens(&cfg, 2, 62);
        let trace = forward_traced(&params, &tokens).unwrap();
        params.for_each_tensor_mut(|_, v| {
            if let Some(x) = v.first_mut() {
                *x += 1e-3;
            }
        });
        let err = backward_params(&params, &trace, 0).unwrap_err();
        assert!(err.to_string().contains("stale trace"), "{err}");
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = std::env::temp_dir().join(format!("encoder-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("params.sptm");
        let cfg = tiny_config();
        let params = EncoderParams::init(cfg.clone(), 71).unwrap();
        params.save(&path).unwrap();
        let loaded = EncoderParams::load(&path).unwrap();
        assert_eq!(params.digest(), loaded.digest());
        assert_eq!(loaded.config(), &cfg);
        // forward agreement on a fixed input
        let tokens = random_tokens(&cfg, 3, 72);
        let (a, _) = forward(&params, &tokens).unwrap();
        let (b, _) = forward(&loaded, &tokens).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn load_rejects_truncated_file() {
        let dir = std::env::temp_dir().join(format!("encoder-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("clipped.sptm");
        let params = EncoderParams::init(tiny_config(), 81).unwrap();
        params.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let len = bytes.len();
        bytes.truncate(len - 16);
        std::fs::write(&path, bytes).unwrap();
        assert!(EncoderParams::load(&path).is_err());
    }

    #[test]
    fn softmax_rows_are_normalized() {
        let cfg = tiny_config();
        let params = EncoderParams::init(cfg.clone(), 91).unwrap();
        let tokens = random_tokens(&cfg, 4, 92);
        let trace = forward_traced(&params, &tokens).unwrap();
        let n = tokens.len() + 1;
        for bt in &trace.blocks {
            for row in bt.att_probs.chunks(n) {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
    }
}
