//! Per-image gradient search over token placements with a frozen encoder.
//!
//! The search minimizes (or, adversarially, maximizes) the classification
//! loss as a function of the placements alone. Updates run in normalized
//! `[0, 1]^2` coordinates - `u = (x / (W-1), y / (H-1))` - so step sizes stay
//! comparable across image resolutions, and every step projects back into the
//! image domain. A grid-snap mode projects placements onto the centers of a
//! `g x g` patch lattice, emulating discrete tokenization.

use std::fmt::Write as _;
use std::path::Path;

use crate::encoder::{self, EncoderParams};
use crate::error::{Error, Result};
use crate::imagery::Image;
use crate::priors::{self, PlacementSet};
use crate::rng::SplitMix64;
use crate::subpixel::{self, TokenizerConfig};

/// Continuous search vs projection onto a patch lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    Subpixel,
    GridSnap,
}

/// What the search optimizes: loss descent under the true label, ascent under
/// the true label, or descent toward a randomized wrong label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Descent,
    Ascent,
    Obfuscated,
}

/// When grid-snap projection applies: after every step (projected gradient)
/// or only once after the final step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapWhen {
    EveryStep,
    Final,
}

/// Oracle search settings.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    /// Step size in normalized coordinates per unit gradient.
    pub lr: f64,
    pub steps: usize,
    pub mode: SearchMode,
    pub objective: Objective,
    /// Snap-lattice side for [`SearchMode::GridSnap`].
    pub grid_g: usize,
    pub snap_when: SnapWhen,
    /// Seed for the obfuscated-label draw.
    pub seed: u64,
    /// Diagnostic switch: drop the positional-embedding gradient route.
    pub use_embedding_path: bool,
}

impl OracleConfig {
    /// The short search schedule: lr 3e-3 for 5 steps.
    pub fn short() -> Self {
        OracleConfig {
            lr: 3e-3,
            steps: 5,
            mode: SearchMode::Subpixel,
            objective: Objective::Descent,
            grid_g: 8,
            snap_when: SnapWhen::EveryStep,
            seed: 0,
            use_embedding_path: true,
        }
    }

    /// The aggressive schedule: lr 1e-2 for 10 steps.
    pub fn long() -> Self {
        OracleConfig { lr: 1e-2, steps: 10, ..Self::short() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument("oracle lr must be positive".into()));
        }
        if self.grid_g == 0 {
            return Err(Error::InvalidArgument("grid_g must be at least 1".into()));
        }
        Ok(())
    }
}

/// Placement history of one search: `steps + 1` rows of `m` positions, the
/// loss at each row, and the final top-1 prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<Vec<(f64, f64)>>,
    pub losses: Vec<f64>,
    pub final_prediction: usize,
}

impl Trajectory {
    pub fn initial(&self) -> &[(f64, f64)] {
        &self.positions[0]
    }

    pub fn last(&self) -> &[(f64, f64)] {
        self.positions.last().expect("trajectory has at least one row")
    }

    pub fn final_placements(&self, height: usize, width: usize) -> Result<PlacementSet> {
        PlacementSet::new(self.last().to_vec(), height, width)
    }

    /// Write positions as CSV (header `x0,y0,...`, one row per step) plus a
    /// `step,loss` sidecar next to it.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let m = self.positions[0].len();
        let mut text = priors::placements_header(m);
        for row in &self.positions {
            let set = PlacementSet::from_points_unchecked(row.clone());
            text.push('\n');
            text.push_str(&priors::placements_row(&set));
        }
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        let mut losses = String::from("step,loss");
        for (i, l) in self.losses.iter().enumerate() {
            let _ = write!(losses, "\n{i},{l}");
        }
        losses.push('\n');
        let sidecar = sidecar_path(path);
        std::fs::write(&sidecar, losses).map_err(|e| Error::io(sidecar, e))
    }
}

/// `trajectory.csv -> trajectory_loss.csv`
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trajectory");
    path.with_file_name(format!("{stem}_loss.csv"))
}

/// Project every placement onto the nearest center of the `g x g` lattice
/// (`x_j = (j + 0.5) W / g - 0.5`); exact midpoints snap toward the lower
/// index.
pub fn grid_snap(set: &PlacementSet, height: usize, width: usize, g: usize) -> PlacementSet {
    let snap_axis = |v: f64, extent: usize| -> f64 {
        let spacing = extent as f64 / g as f64;
        let first = 0.5 * spacing - 0.5;
        // ceil(t - 0.5) rounds halves down, matching the lower-index tie-break
        let t = (v - first) / spacing;
        let j = (t - 0.5).ceil().clamp(0.0, (g - 1) as f64);
        first + j * spacing
    };
    let points =
        set.iter().map(|&(x, y)| (snap_axis(x, width), snap_axis(y, height))).collect();
    PlacementSet::from_points_unchecked(points)
}

/// Draw a label uniformly from the wrong classes.
fn obfuscated_label(true_label: usize, num_classes: usize, seed: u64) -> usize {
    let mut rng = SplitMix64::new(seed);
    let wrong = rng.below(num_classes as u64 - 1) as usize;
    if wrong >= true_label {
        wrong + 1
    } else {
        wrong
    }
}

/// Gradient search over placements; the encoder stays frozen throughout.
///
/// Descent follows `u <- clamp(u - lr * dL/du)`; ascent negates the step;
/// the obfuscated objective descends toward a seeded wrong label. Grid-snap
/// mode projects onto the snap lattice (including the initial placements, so
/// every recorded row is a lattice point when snapping every step). The loss
/// is recorded at every row, and a non-finite gradient aborts the search.
pub fn spot_on_search(
    params: &EncoderParams,
    image: &Image,
    label: usize,
    initial: &PlacementSet,
    tokcfg: &TokenizerConfig,
    oracfg: &OracleConfig,
) -> Result<Trajectory> {
    oracfg.validate()?;
    if initial.is_empty() {
        return Err(Error::InvalidArgument("oracle needs at least one placement".into()));
    }
    let (h, w) = (image.height(), image.width());
    let num_classes = params.config().num_classes;
    if label >= num_classes {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {num_classes} classes"
        )));
    }
    let target_label = match oracfg.objective {
        Objective::Obfuscated => obfuscated_label(label, num_classes, oracfg.seed),
        _ => label,
    };
    let step_sign = match oracfg.objective {
        Objective::Ascent => 1.0,
        _ => -1.0,
    };
    let snap_every = oracfg.mode == SearchMode::GridSnap && oracfg.snap_when == SnapWhen::EveryStep;

    let mut current = if snap_every {
        grid_snap(initial, h, w, oracfg.grid_g)
    } else {
        initial.clone()
    };
    let mut positions = Vec::with_capacity(oracfg.steps + 1);
    let mut losses = Vec::with_capacity(oracfg.steps + 1);
    positions.push(current.points().to_vec());

    let sx = (w - 1) as f64;
    let sy = (h - 1) as f64;
    for step in 0..oracfg.steps {
        let (loss_here, grad) = encoder::position_gradient_with_paths(
            params,
            image,
            &current,
            target_label,
            tokcfg,
            true,
            oracfg.use_embedding_path,
        )?;
        losses.push(loss_here);
        if grad.iter().any(|g| !g.0.is_finite() || !g.1.is_finite()) {
            return Err(Error::Numeric(format!("non-finite placement gradient at step {step}")));
        }
        let moved: Vec<(f64, f64)> = current
            .iter()
            .zip(&grad)
            .map(|(&(x, y), &(gx, gy))| {
                // chain rule into normalized coordinates: dL/du = dL/dx * sx
                let ux = (x / sx + step_sign * oracfg.lr * gx * sx).clamp(0.0, 1.0);
                let uy = (y / sy + step_sign * oracfg.lr * gy * sy).clamp(0.0, 1.0);
                (ux * sx, uy * sy)
            })
            .collect();
        current = PlacementSet::from_points_unchecked(moved);
        if snap_every {
            current = grid_snap(&current, h, w, oracfg.grid_g);
        }
        positions.push(current.points().to_vec());
    }
    if oracfg.mode == SearchMode::GridSnap && oracfg.snap_when == SnapWhen::Final {
        current = grid_snap(&current, h, w, oracfg.grid_g);
        *positions.last_mut().expect("nonempty") = current.points().to_vec();
    }

    // final row loss and prediction, evaluated under the true label
    let tokens = subpixel::tokenize(image, &current, tokcfg)?;
    let (logits, _) = encoder::forward(params, &tokens)?;
    losses.push(encoder::loss(&logits, target_label, params.config().label_smoothing)?);
    let final_prediction = argmax(&logits);

    Ok(Trajectory { positions, losses, final_prediction })
}

/// Index of the largest value; the first wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Evaluate a target model at the final placements of trajectories optimized
/// elsewhere; returns top-1 accuracy over the image set.
pub fn transfer_positions(
    params_target: &EncoderParams,
    images: &[Image],
    labels: &[usize],
    trajectories: &[Trajectory],
    tokcfg: &TokenizerConfig,
) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("transfer needs at least one image".into()));
    }
    if images.len() != labels.len() || images.len() != trajectories.len() {
        return Err(Error::ShapeMismatch(format!(
            "images {} / labels {} / trajectories {} must agree",
            images.len(),
            labels.len(),
            trajectories.len()
        )));
    }
    let mut correct = 0usize;
    for ((image, &label), traj) in images.iter().zip(labels).zip(trajectories) {
        let placements = traj.final_placements(image.height(), image.width())?;
        let tokens = subpixel::tokenize(image, &placements, tokcfg)?;
        let (logits, _) = encoder::forward(params_target, &tokens)?;
        if argmax(&logits) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / images.len() as f64)
}
