//! Spatial priors: initial placement sampling over the continuous image domain.
//!
//! A placement is a continuous `(x, y)` position in pixel units inside
//! `[0, W-1] x [0, H-1]`. The samplers here produce the initial placement sets
//! that the oracle search refines: stochastic coverage (uniform, gaussian),
//! deterministic coverage (sobol, isotropic, center), content-driven
//! (weighted/salient) and the adversarial variants derived from a saliency
//! mask (background, boundary).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imagery::SaliencyMask;
use crate::rng::SplitMix64;

/// An ordered list of continuous token positions, `(x, y)` in pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementSet {
    points: Vec<(f64, f64)>,
}

impl PlacementSet {
    /// Validate that every coordinate is finite and inside the image domain.
    pub fn new(points: Vec<(f64, f64)>, height: usize, width: usize) -> Result<Self> {
        let (max_x, max_y) = ((width - 1) as f64, (height - 1) as f64);
        for &(x, y) in &points {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::Numeric("placement coordinates must be finite".into()));
            }
            if !(0.0..=max_x).contains(&x) || !(0.0..=max_y).contains(&y) {
                return Err(Error::InvalidArgument(format!(
                    "placement ({x}, {y}) outside [0, {max_x}] x [0, {max_y}]"
                )));
            }
        }
        Ok(PlacementSet { points })
    }

    pub(crate) fn from_points_unchecked(points: Vec<(f64, f64)>) -> Self {
        PlacementSet { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, f64)> {
        self.points.iter()
    }
}

/// Which prior generates the initial placements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PriorKind {
    Uniform,
    Gaussian,
    Sobol,
    Isotropic,
    Center,
    Salient,
    Background,
    Boundary,
}

impl PriorKind {
    /// Priors whose output varies with the seed.
    pub fn is_stochastic(self) -> bool {
        !matches!(self, PriorKind::Sobol | PriorKind::Isotropic | PriorKind::Center)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PriorKind::Uniform),
            "gaussian" => Ok(PriorKind::Gaussian),
            "sobol" => Ok(PriorKind::Sobol),
            "isotropic" => Ok(PriorKind::Isotropic),
            "center" => Ok(PriorKind::Center),
            "salient" => Ok(PriorKind::Salient),
            "background" => Ok(PriorKind::Background),
            "boundary" => Ok(PriorKind::Boundary),
            other => Err(Error::InvalidArgument(format!("unknown prior '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PriorKind::Uniform => "uniform",
            PriorKind::Gaussian => "gaussian",
            PriorKind::Sobol => "sobol",
            PriorKind::Isotropic => "isotropic",
            PriorKind::Center => "center",
            PriorKind::Salient => "salient",
            PriorKind::Background => "background",
            PriorKind::Boundary => "boundary",
        }
    }
}

/// Full description of a prior draw: kind, token count, seed and the
/// hyperparameters of the parameterized variants.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub m: usize,
    pub seed: u64,
    /// Gaussian sigma as a fraction of `min(H, W)`.
    pub gaussian_sigma_frac: f64,
    /// Center-prior warp exponent, `>= 1`.
    pub center_gamma: f64,
    /// Boundary-prior decay length as a fraction of `min(H, W)`.
    pub boundary_tau_frac: f64,
}

impl PriorSpec {
    pub fn new(kind: PriorKind, m: usize, seed: u64) -> Self {
        PriorSpec {
            kind,
            m,
            seed,
            gaussian_sigma_frac: 0.2,
            center_gamma: 1.5,
            boundary_tau_frac: 0.05,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidArgument("token count m must be at least 1".into()));
        }
        if self.gaussian_sigma_frac <= 0.0 || self.boundary_tau_frac <= 0.0 {
            return Err(Error::InvalidArgument("sigma_frac and tau_frac must be positive".into()));
        }
        if self.center_gamma < 1.0 {
            return Err(Error::InvalidArgument("center gamma must be >= 1".into()));
        }
        Ok(())
    }

    /// Draw a placement set on an `H x W` image. The salient and background
    /// kinds need the paired saliency mask.
    pub fn sample(&self, height: usize, width: usize, mask: Option<&SaliencyMask>) -> Result<PlacementSet> {
        self.validate()?;
        let need_mask =
            |kind: &str| Error::InvalidArgument(format!("{kind} prior requires a saliency mask"));
        match self.kind {
            PriorKind::Uniform => sample_uniform(self.m, height, width, self.seed),
            PriorKind::Gaussian => {
                sample_gaussian(self.m, height, width, self.gaussian_sigma_frac, self.seed)
            }
            PriorKind::Sobol => sample_sobol(self.m, height, width),
            PriorKind::Isotropic => sample_isotropic(self.m, height, width),
            PriorKind::Center => sample_center(self.m, height, width, self.center_gamma),
            PriorKind::Salient => {
                let m = mask.ok_or_else(|| need_mask("salient"))?;
                check_mask_dims(m, height, width)?;
                sample_weighted(self.m, m.data(), height, width, self.seed)
            }
            PriorKind::Background => {
                let m = mask.ok_or_else(|| need_mask("background"))?;
                check_mask_dims(m, height, width)?;
                let weights = derive_background_weights(m);
                sample_weighted(self.m, &weights, height, width, self.seed)
            }
            PriorKind::Boundary => {
                let weights = derive_boundary_weights(height, width, self.boundary_tau_frac);
                sample_weighted(self.m, &weights, height, width, self.seed)
            }
        }
    }
}

fn check_mask_dims(mask: &SaliencyMask, height: usize, width: usize) -> Result<()> {
    if mask.height() != height || mask.width() != width {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} does not match image {height}x{width}",
            mask.height(),
            mask.width()
        )));
    }
    Ok(())
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidArgument("token count m must be at least 1".into()));
    }
    Ok(())
}

/// Independent draws `x ~ U[0, W-1]`, `y ~ U[0, H-1]`.
pub fn sample_uniform(m: usize, height: usize, width: usize, seed: u64) -> Result<PlacementSet> {
    check_m(m)?;
    let mut rng = SplitMix64::new(seed);
    let points = (0..m)
        .map(|_| {
            let x = rng.u01() * (width - 1) as f64;
            let y = rng.u01() * (height - 1) as f64;
            (x, y)
        })
        .collect();
    Ok(PlacementSet::from_points_unchecked(points))
}

/// Per-axis normal draws around the image center, clamped to bounds.
pub fn sample_gaussian(
    m: usize,
    height: usize,
    width: usize,
    sigma_frac: f64,
    seed: u64,
) -> Result<PlacementSet> {
    check_m(m)?;
    if sigma_frac <= 0.0 {
        return Err(Error::InvalidArgument("sigma_frac must be positive".into()));
    }
    let sigma = sigma_frac * height.min(width) as f64;
    let (cx, cy) = ((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0);
    let mut rng = SplitMix64::new(seed);
    let points = (0..m)
        .map(|_| {
            let x = (cx + sigma * rng.normal()).clamp(0.0, (width - 1) as f64);
            let y = (cy + sigma * rng.normal()).clamp(0.0, (height - 1) as f64);
            (x, y)
        })
        .collect();
    Ok(PlacementSet::from_points_unchecked(points))
}

/// First `m` points of the unscrambled 2-D Sobol sequence on the unit square.
///
/// Dimension 1 is the van der Corput sequence in base 2; dimension 2 uses the
/// classic direction numbers from the primitive polynomial `x^2 + x + 1`
/// (`m_k = 2 m_{k-1} xor m_{k-1}`, starting at 1). Points come out in
/// Gray-code order beginning at the origin.
pub fn sobol_unit_points(m: usize) -> Vec<(f64, f64)> {
    const BITS: u32 = 52;
    let mut v1 = [0u64; BITS as usize];
    let mut v2 = [0u64; BITS as usize];
    let mut m2: u64 = 1;
    for k in 0..BITS as usize {
        v1[k] = 1u64 << (BITS - 1 - k as u32);
        v2[k] = m2 << (BITS - 1 - k as u32);
        m2 = (m2 << 1) ^ m2;
    }
    let scale = 1.0 / (1u64 << BITS) as f64;
    let (mut x1, mut x2) = (0u64, 0u64);
    let mut out = Vec::with_capacity(m);
    for i in 0..m as u64 {
        if i > 0 {
            let c = (i - 1).trailing_ones() as usize; // lowest zero bit of i-1
            x1 ^= v1[c];
            x2 ^= v2[c];
        }
        out.push((x1 as f64 * scale, x2 as f64 * scale));
    }
    out
}

/// Sobol points scaled onto the image domain by `(u, v) -> (u (W-1), v (H-1))`.
pub fn sample_sobol(m: usize, height: usize, width: usize) -> Result<PlacementSet> {
    check_m(m)?;
    let points = sobol_unit_points(m)
        .into_iter()
        .map(|(u, v)| (u * (width - 1) as f64, v * (height - 1) as f64))
        .collect();
    Ok(PlacementSet::from_points_unchecked(points))
}

/// Row layout for the isotropic and center lattices. A perfect square
/// `m = g^2` yields `g` rows of `g` columns; any other count spreads the
/// tokens over `round(sqrt(m))` rows whose column counts differ by at most
/// one, keeping the lattice as even as the budget allows.
fn lattice_rows(m: usize) -> Vec<usize> {
    let g = (m as f64).sqrt().round().max(1.0) as usize;
    let base = m / g;
    let extra = m % g;
    (0..g).map(|i| base + usize::from(i < extra)).collect()
}

/// Evenly spaced lattice of cell centers, row-major. For square `m = g^2` the
/// points are exactly `x_j = (j + 0.5) W / g - 0.5`, `y_i = (i + 0.5) H / g - 0.5`.
pub fn sample_isotropic(m: usize, height: usize, width: usize) -> Result<PlacementSet> {
    check_m(m)?;
    let rows = lattice_rows(m);
    let g_rows = rows.len();
    let mut points = Vec::with_capacity(m);
    for (i, &cols) in rows.iter().enumerate() {
        let y = (i as f64 + 0.5) * height as f64 / g_rows as f64 - 0.5;
        for j in 0..cols {
            let x = (j as f64 + 0.5) * width as f64 / cols as f64 - 0.5;
            points.push((x, y));
        }
    }
    PlacementSet::new(points, height, width)
}

/// Odd warp that pulls lattice fractions toward 0.5; the center is a fixed
/// point and `gamma = 1` is the identity.
fn center_warp(u: f64, gamma: f64) -> f64 {
    let t = 2.0 * u - 1.0;
    0.5 + 0.5 * t.signum() * t.abs().powf(gamma)
}

/// Center-biased lattice: fractions `u = (j + 0.5) / g` map through
/// `v = 0.5 + 0.5 sign(2u-1) |2u-1|^gamma` and scale as `v (D-1)` per axis.
pub fn sample_center(m: usize, height: usize, width: usize, gamma: f64) -> Result<PlacementSet> {
    check_m(m)?;
    if gamma < 1.0 {
        return Err(Error::InvalidArgument("center gamma must be >= 1".into()));
    }
    let rows = lattice_rows(m);
    let g_rows = rows.len();
    let mut points = Vec::with_capacity(m);
    for (i, &cols) in rows.iter().enumerate() {
        let vy = center_warp((i as f64 + 0.5) / g_rows as f64, gamma);
        let y = vy * (height - 1) as f64;
        for j in 0..cols {
            let vx = center_warp((j as f64 + 0.5) / cols as f64, gamma);
            let x = vx * (width - 1) as f64;
            points.push((x, y));
        }
    }
    PlacementSet::new(points, height, width)
}

/// Draw `m` distinct pixels with probability proportional to `weights`
/// (Gumbel-top-k over log-weights, zero-weight pixels excluded), then jitter
/// each selected pixel center by `U[-0.5, 0.5]` per axis, clamped to bounds.
pub fn sample_weighted(
    m: usize,
    weights: &[f64],
    height: usize,
    width: usize,
    seed: u64,
) -> Result<PlacementSet> {
    check_m(m)?;
    if weights.len() != height * width {
        return Err(Error::ShapeMismatch(format!(
            "weights length {} != {height}*{width}",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Numeric("weights must be finite and nonnegative".into()));
    }
    let mut rng = SplitMix64::new(seed);
    // One Gumbel draw per pixel regardless of weight keeps the stream layout
    // independent of the mask contents.
    let mut keyed: Vec<(f64, usize)> = Vec::new();
    for (idx, &w) in weights.iter().enumerate() {
        let g = rng.gumbel();
        if w > 0.0 {
            keyed.push((w.ln() + g, idx));
        }
    }
    if keyed.is_empty() {
        return Err(Error::InvalidArgument("all-zero weights".into()));
    }
    if m > keyed.len() {
        return Err(Error::InvalidArgument(format!(
            "m = {m} exceeds {} positive-weight pixels",
            keyed.len()
        )));
    }
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let points = keyed[..m]
        .iter()
        .map(|&(_, idx)| {
            let (py, px) = (idx / width, idx % width);
            let jx = rng.range(-0.5, 0.5);
            let jy = rng.range(-0.5, 0.5);
            let x = (px as f64 + jx).clamp(0.0, (width - 1) as f64);
            let y = (py as f64 + jy).clamp(0.0, (height - 1) as f64);
            (x, y)
        })
        .collect();
    Ok(PlacementSet::from_points_unchecked(points))
}

/// Inverse saliency: weight `1 - M` per pixel.
pub fn derive_background_weights(mask: &SaliencyMask) -> Vec<f64> {
    mask.data().iter().map(|&v| 1.0 - v).collect()
}

/// Edge bias: weight `exp(-d_border / (tau_frac min(H, W)))` with `d_border`
/// the distance in pixels to the nearest image edge (edge pixels score 0).
pub fn derive_boundary_weights(height: usize, width: usize, tau_frac: f64) -> Vec<f64> {
    let tau = tau_frac * height.min(width) as f64;
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let d = [x, y, width - 1 - x, height - 1 - y].into_iter().min().unwrap() as f64;
            out.push((-d / tau).exp());
        }
    }
    out
}

/// Serialize placement sets as CSV: header `x0,y0,...,x{m-1},y{m-1}`, one row
/// per set.
pub fn save_placements(sets: &[PlacementSet], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let m = sets.first().map_or(0, |s| s.len());
    if sets.iter().any(|s| s.len() != m) {
        return Err(Error::ShapeMismatch("all placement sets must share the same m".into()));
    }
    let mut text = placements_header(m);
    for set in sets {
        text.push('\n');
        text.push_str(&placements_row(set));
    }
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_placements(
    path: impl AsRef<Path>,
    height: usize,
    width: usize,
) -> Result<Vec<PlacementSet>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format(path, "empty placements file"))?;
    let cols = header.split(',').count();
    if cols % 2 != 0 {
        return Err(Error::format(path, format!("odd column count {cols}")));
    }
    let mut sets = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let values: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let values = values.map_err(|e| Error::format(path, format!("bad float: {e}")))?;
        if values.len() != cols {
            return Err(Error::format(path, "row length does not match header"));
        }
        let points = values.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        sets.push(PlacementSet::new(points, height, width)?);
    }
    Ok(sets)
}

pub(crate) fn placements_header(m: usize) -> String {
    let mut header = String::new();
    for i in 0..m {
        if i > 0 {
            header.push(',');
        }
        let _ = write!(header, "x{i},y{i}");
    }
    header
}

pub(crate) fn placements_row(set: &PlacementSet) -> String {
    let mut row = String::new();
    for (i, (x, y)) in set.iter().enumerate() {
        if i > 0 {
            row.push(',');
        }
        let _ = write!(row, "{x},{y}");
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    const W: usize = 224;
    const H: usize = 224;

    fn in_bounds(set: &PlacementSet, height: usize, width: usize) -> bool {
        set.iter().all(|&(x, y)| {
            (0.0..=(width - 1) as f64).contains(&x) && (0.0..=(height - 1) as f64).contains(&y)
        })
    }

    #[test]
    fn uniform_is_deterministic_per_seed() {
        let a = sample_uniform(32, H, W, 9).unwrap();
        let b = sample_uniform(32, H, W, 9).unwrap();
        assert_eq!(a, b);
        let c = sample_uniform(32, H, W, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_monte_carlo_mean() {
        // 10^4 draws: the empirical mean sits within +-2 px of (111.5, 111.5).
        let set = sample_uniform(10_000, H, W, 123).unwrap();
        let n = set.len() as f64;
        let mx: f64 = set.iter().map(|p| p.0).sum::<f64>() / n;
        let my: f64 = set.iter().map(|p| p.1).sum::<f64>() / n;
        assert!((mx - 111.5).abs() < 2.0, "mean x {mx}");
        assert!((my - 111.5).abs() < 2.0, "mean y {my}");
        assert!(in_bounds(&set, H, W));
    }

    #[test]
    fn zero_m_is_an_error() {
        assert!(sample_uniform(0, H, W, 0).is_err());
        assert!(sample_gaussian(0, H, W, 0.2, 0).is_err());
        assert!(sample_sobol(0, H, W).is_err());
        assert!(sample_isotropic(0, H, W).is_err());
        assert!(sample_center(0, H, W, 1.5).is_err());
        assert!(sample_weighted(0, &[1.0; 4], 2, 2, 0).is_err());
    }

    #[test]
    fn gaussian_sigma_zero_limit_degenerates_to_center() {
        // tiny sigma stands in for the sigma -> 0 limit
        let set = sample_gaussian(64, H, W, 1e-12, 5).unwrap();
        for &(x, y) in set.iter() {
            assert!((x - 111.5).abs() < 1e-6);
            assert!((y - 111.5).abs() < 1e-6);
        }
    }

    #[test]
    fn gaussian_concentration_monte_carlo() {
        // Monte-Carlo oracle for the one-sigma box mass. Per axis the normal
        // puts ~68.3% within one sigma, so the joint box holds ~46.6%; the
        // empirical fractions must bracket those values.
        let sigma = 0.2 * 224.0;
        let set = sample_gaussian(10_000, H, W, 0.2, 77).unwrap();
        let n = set.len() as f64;
        let joint = set
            .iter()
            .filter(|&&(x, y)| (x - 111.5).abs() <= sigma && (y - 111.5).abs() <= sigma)
            .count() as f64
            / n;
        let per_x = set.iter().filter(|&&(x, _)| (x - 111.5).abs() <= sigma).count() as f64 / n;
        assert!((per_x - 0.6827).abs() < 0.02, "per-axis mass {per_x}");
        assert!((joint - 0.4661).abs() < 0.03, "joint box mass {joint}");
        assert!(in_bounds(&set, H, W));
    }

    #[test]
    fn gaussian_deterministic_per_seed() {
        assert_eq!(
            sample_gaussian(16, H, W, 0.2, 3).unwrap(),
            sample_gaussian(16, H, W, 0.2, 3).unwrap()
        );
    }

    #[test]
    fn sobol_reference_prefix() {
        let pts = sobol_unit_points(8);
        let expect = [
            (0.0, 0.0),
            (0.5, 0.5),
            (0.75, 0.25),
            (0.25, 0.75),
            (0.375, 0.375),
            (0.875, 0.875),
            (0.625, 0.125),
            (0.125, 0.625),
        ];
        // dyadic rationals: comparisons are bit-exact
        assert_eq!(pts, expect);
    }

    #[test]
    fn sobol_origin_and_scaling() {
        let set = sample_sobol(3, H, W).unwrap();
        assert_eq!(set.points()[0], (0.0, 0.0));
        assert_eq!(set.points()[1], (0.5 * 223.0, 0.5 * 223.0));
    }

    #[test]
    fn sobol_prefix_stratification() {
        // Brute force: every prefix of length 2^k puts exactly one point in
        // each of the 2^k equal cells along each axis.
        for k in 0..7u32 {
            let n = 1usize << k;
            let pts = sobol_unit_points(n);
            for axis in 0..2 {
                let mut counts = vec![0usize; n];
                for p in &pts {
                    let u = if axis == 0 { p.0 } else { p.1 };
                    let cell = ((u * n as f64) as usize).min(n - 1);
                    counts[cell] += 1;
                }
                assert!(counts.iter().all(|&c| c == 1), "k={k} axis={axis} counts={counts:?}");
            }
        }
    }

    #[test]
    fn isotropic_square_formula() {
        let set = sample_isotropic(4, 4, 4).unwrap();
        let expect = [(0.5, 0.5), (2.5, 0.5), (0.5, 2.5), (2.5, 2.5)];
        assert_eq!(set.points(), expect);
    }

    #[test]
    fn isotropic_matches_vit_patch_centers() {
        let set = sample_isotropic(196, 224, 224).unwrap();
        assert_eq!(set.len(), 196);
        assert_eq!(set.points()[0], (7.5, 7.5));
        for i in 0..14 {
            for j in 0..14 {
                let (x, y) = set.points()[i * 14 + j];
                assert_eq!(x, 7.5 + 16.0 * j as f64);
                assert_eq!(y, 7.5 + 16.0 * i as f64);
            }
        }
    }

    #[test]
    fn isotropic_non_square_is_balanced() {
        let set = sample_isotropic(8, 64, 64).unwrap();
        assert_eq!(set.len(), 8);
        assert!(in_bounds(&set, 64, 64));
        // 3 rows with 3/3/2 columns
        let ys: Vec<f64> = set.iter().map(|p| p.1).collect();
        assert_eq!(ys.iter().filter(|&&y| y == ys[0]).count(), 3);
        assert_eq!(lattice_rows(8), vec![3, 3, 2]);
        assert_eq!(lattice_rows(3), vec![2, 1]);
        assert_eq!(lattice_rows(49), vec![7; 7]);
    }

    #[test]
    fn center_fixed_point_and_gamma_one() {
        assert_eq!(center_warp(0.5, 1.7), 0.5);
        // gamma = 1: deviation from the isotropic lattice is |u - 0.5| per
        // axis (the (D-1)- vs D/g-convention gap), strictly below half a px.
        let g = 8usize;
        let d = 64usize;
        let iso = sample_isotropic(g * g, d, d).unwrap();
        let cen = sample_center(g * g, d, d, 1.0).unwrap();
        let mut max_dev: f64 = 0.0;
        for (a, b) in iso.iter().zip(cen.iter()) {
            max_dev = max_dev.max((a.0 - b.0).abs()).max((a.1 - b.1).abs());
        }
        let u_edge = (g as f64 - 0.5) / g as f64;
        let expect = u_edge - 0.5;
        assert!((max_dev - expect).abs() < 1e-12, "max dev {max_dev} vs {expect}");
        assert!(max_dev < 0.5);
    }

    #[test]
    fn center_is_denser_at_the_middle() {
        // warp at adjacent quantiles: nearest-neighbor spacing at the center
        // is strictly below the spacing at the rim
        let g = 14usize;
        let set = sample_center(g * g, 224, 224, 1.5).unwrap();
        let xs: Vec<f64> = set.points()[..g].iter().map(|p| p.0).collect();
        let center_gap = xs[g / 2] - xs[g / 2 - 1];
        let edge_gap = xs[1] - xs[0];
        assert!(center_gap < edge_gap, "center {center_gap} vs edge {edge_gap}");
    }

    #[test]
    fn weighted_single_positive_pixel() {
        let (h, w) = (16, 16);
        let mut weights = vec![0.0; h * w];
        weights[5 * w + 11] = 3.0;
        let set = sample_weighted(1, &weights, h, w, 2).unwrap();
        let (x, y) = set.points()[0];
        assert!((x - 11.0).abs() <= 0.5);
        assert!((y - 5.0).abs() <= 0.5);
    }

    #[test]
    fn weighted_rejects_degenerate_inputs() {
        let weights = vec![0.0; 16];
        assert!(sample_weighted(1, &weights, 4, 4, 0).is_err());
        let mut one = vec![0.0; 16];
        one[3] = 1.0;
        assert!(sample_weighted(2, &one, 4, 4, 0).is_err());
    }

    #[test]
    fn weighted_uniform_chi_square() {
        // One draw per trial over a 4x4 grid with uniform weights; the
        // selection histogram passes a chi-square uniformity test at p > 0.01
        // (99th percentile of chi-square with 15 dof is 30.578).
        let (h, w) = (4, 4);
        let weights = vec![1.0; h * w];
        let trials = 100_000;
        let mut counts = vec![0usize; h * w];
        for t in 0..trials {
            let set = sample_weighted(1, &weights, h, w, t as u64).unwrap();
            let (x, y) = set.points()[0];
            counts[y.round() as usize * w + x.round() as usize] += 1;
        }
        let expected = trials as f64 / (h * w) as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 30.578, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn weighted_never_duplicates_pixels() {
        let (h, w) = (8, 8);
        let weights = vec![1.0; h * w];
        for seed in 0..20 {
            let set = sample_weighted(32, &weights, h, w, seed).unwrap();
            let mut cells: Vec<(i64, i64)> =
                set.iter().map(|&(x, y)| (x.round() as i64, y.round() as i64)).collect();
            cells.sort();
            cells.dedup();
            assert_eq!(cells.len(), 32, "duplicate pixel under seed {seed}");
        }
    }

    #[test]
    fn background_weights_invert_mask() {
        let mask = SaliencyMask::new(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(derive_background_weights(&mask).iter().all(|&w| w == 0.0));
        let mask2 = SaliencyMask::new(2, 2, vec![0.25, 0.5, 0.75, 1.0]).unwrap();
        assert_eq!(derive_background_weights(&mask2), vec![0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn boundary_weights_decay_from_edges() {
        let w = derive_boundary_weights(224, 224, 0.05);
        assert_eq!(w[0], 1.0); // corner pixel: d = 0, exp(0) = 1
        let tau = 0.05 * 224.0;
        // most-interior pixels of an even-sized image sit 111 px from the
        // nearest edge; the worked value exp(-111.5 / 11.2) evaluates the
        // same formula at the continuous image center half a pixel away
        let center_px = w[112 * 224 + 112];
        assert_eq!(center_px, (-111.0f64 / tau).exp());
        let continuous_center = (-111.5f64 / 11.2).exp();
        assert!(center_px > continuous_center);
        assert!(center_px < (-110.5f64 / tau).exp());
    }

    #[test]
    fn all_priors_in_bounds_and_reproducible() {
        let mask = {
            let mut data = vec![0.0; 64 * 64];
            for y in 20..40 {
                for x in 20..40 {
                    data[y * 64 + x] = 1.0;
                }
            }
            SaliencyMask::new(64, 64, data).unwrap()
        };
        for kind in [
            PriorKind::Uniform,
            PriorKind::Gaussian,
            PriorKind::Sobol,
            PriorKind::Isotropic,
            PriorKind::Center,
            PriorKind::Salient,
            PriorKind::Background,
            PriorKind::Boundary,
        ] {
            for seed in [0u64, 1, 99] {
                let spec = PriorSpec::new(kind, 16, seed);
                let a = spec.sample(64, 64, Some(&mask)).unwrap();
                let b = spec.sample(64, 64, Some(&mask)).unwrap();
                assert_eq!(a, b, "{kind:?} not reproducible");
                assert!(in_bounds(&a, 64, 64), "{kind:?} out of bounds");
                assert_eq!(a.len(), 16);
            }
        }
    }

    #[test]
    fn placements_csv_roundtrip() {
        let dir = std::env::temp_dir().join(format!("priors-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("sets.csv");
        let sets =
            vec![sample_uniform(5, 64, 64, 1).unwrap(), sample_uniform(5, 64, 64, 2).unwrap()];
        save_placements(&sets, &path).unwrap();
        let back = load_placements(&path, 64, 64).unwrap();
        assert_eq!(sets, back);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x0,y0,x1,y1,"));
    }
}
