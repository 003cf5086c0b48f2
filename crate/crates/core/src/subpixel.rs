//! Differentiable token extraction at continuous image positions.
//!
//! A token is a `k x k` window of bilinear samples centered on a continuous
//! placement, flattened row-major `(dy, dx, channel)`, plus a smooth Fourier
//! positional embedding of the placement. Both the window and the embedding
//! carry analytic derivatives with respect to the placement, which is what
//! lets the oracle run gradient search over positions.
//!
//! Sampling conventions, fixed once and shared by the value and Jacobian
//! paths:
//!
//! * window offsets are `o_i = i - (k - 1) / 2`, unit spacing, so half-integer
//!   centers with even `k` land exactly on the pixel lattice and reproduce
//!   discrete patch tokenization;
//! * out-of-range sample coordinates clamp to the image rectangle (edge
//!   replication) and contribute zero derivative along the clamped axis;
//! * at integer sample coordinates the derivative uses the right-hand cell.

use crate::error::{Error, Result};
use crate::imagery::Image;
use crate::priors::PlacementSet;
use crate::rng::SplitMix64;

/// Window size, embedding width and Fourier settings for tokenization.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerConfig {
    /// Window side in pixels.
    pub window: usize,
    /// Positional-embedding width; must be divisible by 4 so each axis gets
    /// matched sin/cos pairs before projection.
    pub embed_dim: usize,
    /// Number of dyadic frequencies per axis.
    pub num_freqs: usize,
    /// Seed of the fixed projection from Fourier features to `embed_dim`.
    pub freq_seed: u64,
}

impl TokenizerConfig {
    pub fn new(window: usize, embed_dim: usize) -> Result<Self> {
        let cfg = TokenizerConfig { window, embed_dim, num_freqs: 6, freq_seed: 0x5EED_F00D };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidArgument("window must be at least 1".into()));
        }
        if self.embed_dim == 0 || self.embed_dim % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "embed_dim must be a positive multiple of 4, got {}",
                self.embed_dim
            )));
        }
        if self.num_freqs == 0 {
            return Err(Error::InvalidArgument("num_freqs must be at least 1".into()));
        }
        Ok(())
    }

    /// Flattened feature length per token on a C-channel image.
    pub fn feature_len(&self, channels: usize) -> usize {
        self.window * self.window * channels
    }

    /// The fixed projection matrix, `(embed_dim, 4 * num_freqs)` row-major.
    /// Entries are normal draws scaled by `0.5 / sqrt(4 F)` from `freq_seed`,
    /// sized so the embedding does not drown the projected patch content.
    pub fn embedding_projection(&self) -> Vec<f64> {
        let input = 4 * self.num_freqs;
        let scale = 0.5 / (input as f64).sqrt();
        let mut rng = SplitMix64::new(self.freq_seed);
        (0..self.embed_dim * input).map(|_| scale * rng.normal()).collect()
    }
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig { window: 16, embed_dim: 128, num_freqs: 6, freq_seed: 0x5EED_F00D }
    }
}

/// One extracted token: window features, source placement, embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub features: Vec<f64>,
    pub position: (f64, f64),
    pub pos_embedding: Vec<f64>,
}

/// Bilinear sample with its partial derivatives, one channel.
#[inline]
fn bilinear_sample(image: &Image, x: f64, y: f64, c: usize) -> (f64, f64, f64) {
    let max_x = (image.width() - 1) as f64;
    let max_y = (image.height() - 1) as f64;
    let cx = x.clamp(0.0, max_x);
    let cy = y.clamp(0.0, max_y);
    let clamped_x = cx != x;
    let clamped_y = cy != y;

    let x0 = cx.floor();
    let y0 = cy.floor();
    let fx = cx - x0;
    let fy = cy - y0;
    let x0i = x0 as usize;
    let y0i = y0 as usize;
    let x1i = (x0i + 1).min(image.width() - 1);
    let y1i = (y0i + 1).min(image.height() - 1);

    let p00 = image.at(y0i, x0i, c);
    let p10 = image.at(y0i, x1i, c);
    let p01 = image.at(y1i, x0i, c);
    let p11 = image.at(y1i, x1i, c);

    let value = (1.0 - fy) * ((1.0 - fx) * p00 + fx * p10) + fy * ((1.0 - fx) * p01 + fx * p11);
    // Piecewise-constant cell derivative; floor() picks the right-hand cell
    // at integer coordinates, and the degenerate cell at the far edge already
    // yields zero. Clamped axes are forced to zero explicitly.
    let mut dx = (1.0 - fy) * (p10 - p00) + fy * (p11 - p01);
    let mut dy = (1.0 - fx) * (p01 - p00) + fx * (p11 - p10);
    if clamped_x {
        dx = 0.0;
    }
    if clamped_y {
        dy = 0.0;
    }
    (value, dx, dy)
}

/// Bilinear interpolation of channel `c` at `(x, y)`; coordinates outside the
/// image clamp to the border (edge replication).
pub fn bilinear_at(image: &Image, x: f64, y: f64, c: usize) -> f64 {
    bilinear_sample(image, x, y, c).0
}

fn check_in_domain(image: &Image, s: (f64, f64)) -> Result<()> {
    let (x, y) = s;
    let max_x = (image.width() - 1) as f64;
    let max_y = (image.height() - 1) as f64;
    if !x.is_finite() || !y.is_finite() || !(0.0..=max_x).contains(&x) || !(0.0..=max_y).contains(&y)
    {
        return Err(Error::InvalidArgument(format!(
            "placement ({x}, {y}) outside [0, {max_x}] x [0, {max_y}]"
        )));
    }
    Ok(())
}

/// Extract the `k x k` window centered at `s`, flattened `(dy, dx, channel)`.
pub fn extract_patch(image: &Image, s: (f64, f64), k: usize) -> Result<Vec<f64>> {
    check_in_domain(image, s)?;
    let channels = image.channels();
    let mut out = Vec::with_capacity(k * k * channels);
    let half = (k as f64 - 1.0) / 2.0;
    for i in 0..k {
        let sy = s.1 + i as f64 - half;
        for j in 0..k {
            let sx = s.0 + j as f64 - half;
            for c in 0..channels {
                out.push(bilinear_at(image, sx, sy, c));
            }
        }
    }
    Ok(out)
}

/// Analytic Jacobian of [`extract_patch`] w.r.t. the placement: a
/// `(k^2 C) x 2` matrix in row-major `[d/dx, d/dy]` pairs.
pub fn patch_position_jacobian(image: &Image, s: (f64, f64), k: usize) -> Result<Vec<[f64; 2]>> {
    check_in_domain(image, s)?;
    let channels = image.channels();
    let mut out = Vec::with_capacity(k * k * channels);
    let half = (k as f64 - 1.0) / 2.0;
    for i in 0..k {
        let sy = s.1 + i as f64 - half;
        for j in 0..k {
            let sx = s.0 + j as f64 - half;
            for c in 0..channels {
                let (_, dx, dy) = bilinear_sample(image, sx, sy, c);
                out.push([dx, dy]);
            }
        }
    }
    Ok(out)
}

/// Raw Fourier feature vector of a placement: for each frequency `2^f` and
/// each axis, a sin/cos pair of the normalized coordinate.
fn fourier_features(s: (f64, f64), height: usize, width: usize, num_freqs: usize) -> Vec<f64> {
    let u = s.0 / (width - 1) as f64;
    let v = s.1 / (height - 1) as f64;
    let mut out = Vec::with_capacity(4 * num_freqs);
    for f in 0..num_freqs {
        let w = std::f64::consts::TAU * (1u64 << f) as f64;
        out.push((w * u).sin());
        out.push((w * u).cos());
        out.push((w * v).sin());
        out.push((w * v).cos());
    }
    out
}

/// Smooth positional embedding: Fourier features of the normalized placement
/// mapped through the fixed seeded projection.
pub fn positional_embedding(
    s: (f64, f64),
    height: usize,
    width: usize,
    config: &TokenizerConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let feats = fourier_features(s, height, width, config.num_freqs);
    let proj = config.embedding_projection();
    let mut out = vec![0.0; config.embed_dim];
    crate::linalg::matvec(&proj, None, &feats, &mut out);
    Ok(out)
}

/// Analytic Jacobian of the positional embedding w.r.t. `s`: `embed_dim x 2`.
pub fn positional_embedding_jacobian(
    s: (f64, f64),
    height: usize,
    width: usize,
    config: &TokenizerConfig,
) -> Result<Vec<[f64; 2]>> {
    config.validate()?;
    let du_dx = 1.0 / (width - 1) as f64;
    let dv_dy = 1.0 / (height - 1) as f64;
    let u = s.0 * du_dx;
    let v = s.1 * dv_dy;
    let nf = config.num_freqs;
    // d(features)/dx and /dy are nonzero only on the matching axis block
    let mut dfx = vec![0.0; 4 * nf];
    let mut dfy = vec![0.0; 4 * nf];
    for f in 0..nf {
        let w = std::f64::consts::TAU * (1u64 << f) as f64;
        dfx[4 * f] = w * (w * u).cos() * du_dx;
        dfx[4 * f + 1] = -w * (w * u).sin() * du_dx;
        dfy[4 * f + 2] = w * (w * v).cos() * dv_dy;
        dfy[4 * f + 3] = -w * (w * v).sin() * dv_dy;
    }
    let proj = config.embedding_projection();
    let input = 4 * nf;
    let out = (0..config.embed_dim)
        .map(|r| {
            let row = &proj[r * input..(r + 1) * input];
            [crate::linalg::dot(row, &dfx), crate::linalg::dot(row, &dfy)]
        })
        .collect();
    Ok(out)
}

/// Tokenize every placement in order. Placements may overlap freely; an empty
/// set yields an empty token list.
pub fn tokenize(
    image: &Image,
    placements: &PlacementSet,
    config: &TokenizerConfig,
) -> Result<Vec<Token>> {
    config.validate()?;
    let proj = config.embedding_projection();
    let input = 4 * config.num_freqs;
    debug_assert_eq!(proj.len(), config.embed_dim * input);
    placements
        .iter()
        .map(|&s| {
            let features = extract_patch(image, s, config.window)?;
            let feats = fourier_features(s, image.height(), image.width(), config.num_freqs);
            let mut pos_embedding = vec![0.0; config.embed_dim];
            crate::linalg::matvec(&proj, None, &feats, &mut pos_embedding);
            Ok(Token { features, position: s, pos_embedding })
        })
        .collect()
}
