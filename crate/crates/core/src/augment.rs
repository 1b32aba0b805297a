//! Train-time position augmentation: mean-normalization, global shift,
//! local shift and global scaling, applied before embedding.
//!
//! Every random operation consumes draws from a caller-owned [`RngStream`]
//! in a fixed order, documented on each function. Inference mode never
//! touches the stream.

use serde::{Deserialize, Serialize};

use crate::error::{CapeError, Result};
use crate::positions::{PositionGrid2D, PositionSet1D};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Augmentation parameters. Shifts are in position units (tokens, seconds,
/// or grid coordinates).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationConfig {
    pub max_global_shift: f64,
    pub max_local_shift: f64,
    pub max_scale: f64,
    pub mean_normalize: bool,
    pub mode: Mode,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigJson {
    max_global_shift: f64,
    max_local_shift: f64,
    max_scale: f64,
    mean_normalize: bool,
    augment: bool,
    seed: u64,
}

impl AugmentationConfig {
    /// Mean-normalization only.
    pub fn inference(mean_normalize: bool) -> Self {
        Self {
            max_global_shift: 0.0,
            max_local_shift: 0.0,
            max_scale: 1.0,
            mean_normalize,
            mode: Mode::Inference,
            seed: 0,
        }
    }

    /// Image defaults for a grid with `patches_per_side` patches per side:
    /// `Δmax = 0.5`, `εmax = 1/P`, `λmax = 1.4`.
    pub fn image_default(patches_per_side: usize, seed: u64) -> Self {
        Self {
            max_global_shift: 0.5,
            max_local_shift: 1.0 / patches_per_side.max(1) as f64,
            max_scale: 1.4,
            mean_normalize: false,
            mode: Mode::Train,
            seed,
        }
    }

    /// Audio defaults: global shift of ±30 s, local shift 0.5 frame at
    /// `hop` seconds (keeps frame order), and the given `λmax`.
    pub fn audio_default(hop: f64, max_scale: f64, seed: u64) -> Self {
        Self {
            max_global_shift: 30.0,
            max_local_shift: 0.5 * hop,
            max_scale,
            mean_normalize: true,
            mode: Mode::Train,
            seed,
        }
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_scale >= 1.0) || !self.max_scale.is_finite() {
            return Err(CapeError::InvalidConfig(format!("max_scale must be >= 1, got {}", self.max_scale)));
        }
        for (name, v) in [("max_global_shift", self.max_global_shift), ("max_local_shift", self.max_local_shift)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(CapeError::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ConfigJson = serde_json::from_str(text)?;
        let cfg = Self {
            max_global_shift: raw.max_global_shift,
            max_local_shift: raw.max_local_shift,
            max_scale: raw.max_scale,
            mean_normalize: raw.mean_normalize,
            mode: if raw.augment { Mode::Train } else { Mode::Inference },
            seed: raw.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        let raw = ConfigJson {
            max_global_shift: self.max_global_shift,
            max_local_shift: self.max_local_shift,
            max_scale: self.max_scale,
            mean_normalize: self.mean_normalize,
            augment: self.is_train(),
            seed: self.seed,
        };
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    fn log_scale_bound(&self) -> f64 {
        self.max_scale.ln()
    }
}

/// Subtracts the NaN-ignoring mean from every sequence.
pub fn mean_normalize(positions: &PositionSet1D) -> Result<PositionSet1D> {
    let mut out = positions.clone();
    for b in 0..out.batch() {
        let row = out.row_mut(b);
        let (sum, count) = row
            .iter()
            .filter(|v| !v.is_nan())
            .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        if count == 0 {
            return Err(CapeError::InvalidInput(format!("sequence {b} is all padding; cannot mean-normalize")));
        }
        let mean = sum / count as f64;
        for v in row.iter_mut() {
            *v -= mean;
        }
    }
    Ok(out)
}

/// Returns `(p + Δ + ε) · λ` per token, after optional mean-normalization.
///
/// Draw order in train mode: `Δ` for every sequence, then `ε` for every
/// token (row-major, padding included), then `log λ` for every sequence.
pub fn augment_positions_1d(
    positions: &PositionSet1D,
    cfg: &AugmentationConfig,
    rng: &mut RngStream,
) -> Result<PositionSet1D> {
    cfg.validate()?;
    let mut out = if cfg.mean_normalize { mean_normalize(positions)? } else { positions.clone() };
    if !cfg.is_train() {
        return Ok(out);
    }
    let (batch, len) = (out.batch(), out.len());
    let deltas: Vec<f64> = (0..batch).map(|_| rng.symmetric(cfg.max_global_shift)).collect();
    let locals: Vec<f64> = (0..batch * len).map(|_| rng.symmetric(cfg.max_local_shift)).collect();
    let log_bound = cfg.log_scale_bound();
    let scales: Vec<f64> = (0..batch).map(|_| rng.symmetric(log_bound).exp()).collect();
    for b in 0..batch {
        let row = out.row_mut(b);
        for (t, v) in row.iter_mut().enumerate() {
            *v = (*v + deltas[b] + locals[b * len + t]) * scales[b];
        }
    }
    Ok(out)
}

/// Augments an existing grid in place of a copy. No mean-normalization: an
/// unaugmented linspace grid is already centred.
///
/// Draw order in train mode: `Δx` per element, `Δy` per element, `εx` per
/// token, `εy` per token, then `log λ` per element. One `λ` scales both axes.
pub fn augment_grid(grid: &PositionGrid2D, cfg: &AugmentationConfig, rng: &mut RngStream) -> Result<PositionGrid2D> {
    cfg.validate()?;
    let mut out = grid.clone();
    if !cfg.is_train() {
        return Ok(out);
    }
    let batch = out.batch();
    let per = out.tokens_per_element();
    let shift_x: Vec<f64> = (0..batch).map(|_| rng.symmetric(cfg.max_global_shift)).collect();
    let shift_y: Vec<f64> = (0..batch).map(|_| rng.symmetric(cfg.max_global_shift)).collect();
    let local_x: Vec<f64> = (0..batch * per).map(|_| rng.symmetric(cfg.max_local_shift)).collect();
    let local_y: Vec<f64> = (0..batch * per).map(|_| rng.symmetric(cfg.max_local_shift)).collect();
    let log_bound = cfg.log_scale_bound();
    let scales: Vec<f64> = (0..batch).map(|_| rng.symmetric(log_bound).exp()).collect();
    let (xs, ys) = out.coords_mut();
    for i in 0..batch * per {
        let b = i / per;
        xs[i] = (xs[i] + shift_x[b] + local_x[i]) * scales[b];
        ys[i] = (ys[i] + shift_y[b] + local_y[i]) * scales[b];
    }
    Ok(out)
}

/// Square `P×P` patch grid for `batch` images, augmented per [`augment_grid`].
pub fn augment_grid_2d(
    patches_per_side: usize,
    batch: usize,
    cfg: &AugmentationConfig,
    rng: &mut RngStream,
) -> Result<PositionGrid2D> {
    if patches_per_side == 0 {
        return Err(CapeError::InvalidInput("patches per side must be >= 1".into()));
    }
    let grid = PositionGrid2D::linspace(batch, patches_per_side, patches_per_side)?;
    augment_grid(&grid, cfg, rng)
}

/// Target-to-source token ratio used to stretch source positions.
pub fn source_scale_factor(target_tokens: u64, source_tokens: u64) -> Result<f64> {
    if target_tokens == 0 || source_tokens == 0 {
        return Err(CapeError::InvalidInput("token counts must be positive".into()));
    }
    Ok(target_tokens as f64 / source_tokens as f64)
}

/// Target-to-source token ratios for English-German and English-French corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LanguagePair {
    EnglishGerman,
    EnglishFrench,
}

impl LanguagePair {
    pub fn alpha(self) -> f64 {
        match self {
            LanguagePair::EnglishGerman => 1.0337,
            LanguagePair::EnglishFrench => 1.1632,
        }
    }
}

/// Maximum local shift used for translation pairs, overriding `εmax`.
pub const MT_LOCAL_SHIFT: f64 = 0.5;

/// Translation pairs: source positions are stretched by `alpha`, then source
/// and target of pair `b` share one `Δ` and one `λ` while local shifts are
/// drawn independently from `U(-0.5, 0.5)`.
///
/// Draw order in train mode: `Δ` per pair, `ε` for every source token
/// (row-major), `ε` for every target token, then `log λ` per pair.
pub fn augment_mt_pair(
    src: &PositionSet1D,
    tgt: &PositionSet1D,
    alpha: f64,
    cfg: &AugmentationConfig,
    rng: &mut RngStream,
) -> Result<(PositionSet1D, PositionSet1D)> {
    cfg.validate()?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(CapeError::InvalidInput(format!("alpha must be positive, got {alpha}")));
    }
    if cfg.mean_normalize {
        return Err(CapeError::InvalidConfig(
            "translation pairs keep source and target aligned at the first position; disable mean_normalize".into(),
        ));
    }
    if src.batch() != tgt.batch() {
        return Err(CapeError::ShapeMismatch(format!(
            "{} source vs {} target sequences",
            src.batch(),
            tgt.batch()
        )));
    }
    let mut src_out = src.clone();
    for b in 0..src_out.batch() {
        for v in src_out.row_mut(b) {
            *v *= alpha;
        }
    }
    let mut tgt_out = tgt.clone();
    if !cfg.is_train() {
        return Ok((src_out, tgt_out));
    }
    let batch = src.batch();
    let deltas: Vec<f64> = (0..batch).map(|_| rng.symmetric(cfg.max_global_shift)).collect();
    let src_local: Vec<f64> = (0..src.as_slice().len()).map(|_| rng.symmetric(MT_LOCAL_SHIFT)).collect();
    let tgt_local: Vec<f64> = (0..tgt.as_slice().len()).map(|_| rng.symmetric(MT_LOCAL_SHIFT)).collect();
    let log_bound = cfg.log_scale_bound();
    let scales: Vec<f64> = (0..batch).map(|_| rng.symmetric(log_bound).exp()).collect();
    for (set, locals) in [(&mut src_out, &src_local), (&mut tgt_out, &tgt_local)] {
        let len = set.len();
        for b in 0..batch {
            for (t, v) in set.row_mut(b).iter_mut().enumerate() {
                *v = (*v + deltas[b] + locals[b * len + t]) * scales[b];
            }
        }
    }
    Ok((src_out, tgt_out))
}

/// Evaluation-time coordinate range strategies for resolution `r` when the
/// model was trained at `train_resolution`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalRescale {
    Baseline,
    Linear,
    Sqrt,
}

impl EvalRescale {
    pub fn gamma(self, resolution: f64, train_resolution: f64) -> f64 {
        match self {
            EvalRescale::Baseline => 1.0,
            EvalRescale::Linear => resolution / train_resolution,
            EvalRescale::Sqrt => (resolution / train_resolution).sqrt(),
        }
    }
}

/// Maps grid coordinates from `[-1, 1]` to `[-γ, γ]`.
pub fn rescale_eval_positions(grid: &PositionGrid2D, gamma: f64) -> Result<PositionGrid2D> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(CapeError::InvalidInput(format!("gamma must be positive, got {gamma}")));
    }
    let mut out = grid.clone();
    let (xs, ys) = out.coords_mut();
    xs.iter_mut().chain(ys.iter_mut()).for_each(|v| *v *= gamma);
    Ok(out)
}
