//! Raw positions per modality, before any augmentation.

use serde::{Deserialize, Serialize};

use crate::embedding::linspace;
use crate::error::{CapeError, Result};
use crate::rng::RngStream;

/// Batch of equal-length position sequences, row-major. NaN marks padding.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionSet1D {
    batch: usize,
    len: usize,
    values: Vec<f64>,
}

impl PositionSet1D {
    pub fn new(batch: usize, len: usize, values: Vec<f64>) -> Result<Self> {
        if batch == 0 || len == 0 {
            return Err(CapeError::InvalidInput("position set must be non-empty".into()));
        }
        if values.len() != batch * len {
            return Err(CapeError::ShapeMismatch(format!(
                "{} values for {batch} sequences of length {len}",
                values.len()
            )));
        }
        if values.iter().any(|v| v.is_infinite()) {
            return Err(CapeError::InvalidInput("infinite position".into()));
        }
        Ok(Self { batch, len, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != len) {
            return Err(CapeError::ShapeMismatch("sequences must share one length; pad with NaN".into()));
        }
        Self::new(rows.len(), len, rows.concat())
    }

    pub fn single(values: Vec<f64>) -> Result<Self> {
        let len = values.len();
        Self::new(1, len, values)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, b: usize) -> &[f64] {
        &self.values[b * self.len..(b + 1) * self.len]
    }

    pub(crate) fn row_mut(&mut self, b: usize) -> &mut [f64] {
        &mut self.values[b * self.len..(b + 1) * self.len]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.len)
    }
}

/// Patch coordinates, stored `[batch][ix][iy]`: `x` varies along the first
/// grid axis and `y` along the second. Tokens are flattened in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionGrid2D {
    batch: usize,
    nx: usize,
    ny: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PositionGrid2D {
    pub fn new(batch: usize, nx: usize, ny: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = batch * nx * ny;
        if n == 0 {
            return Err(CapeError::InvalidInput("grid must be non-empty".into()));
        }
        if x.len() != n || y.len() != n {
            return Err(CapeError::ShapeMismatch(format!(
                "grid {batch}x{nx}x{ny} needs {n} coordinates, got x={} y={}",
                x.len(),
                y.len()
            )));
        }
        Ok(Self { batch, nx, ny, x, y })
    }

    /// Unaugmented grid: `x = linspace(-1, 1, nx)`, `y = linspace(-1, 1, ny)`,
    /// repeated for every batch element.
    pub fn linspace(batch: usize, nx: usize, ny: usize) -> Result<Self> {
        if batch == 0 || nx == 0 || ny == 0 {
            return Err(CapeError::InvalidInput(format!("grid dimensions must be >= 1, got {batch}x{nx}x{ny}")));
        }
        let lx = linspace(-1.0, 1.0, nx);
        let ly = linspace(-1.0, 1.0, ny);
        let n = batch * nx * ny;
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..batch {
            for &xv in &lx {
                for &yv in &ly {
                    x.push(xv);
                    y.push(yv);
                }
            }
        }
        Ok(Self { batch, nx, ny, x, y })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn tokens_per_element(&self) -> usize {
        self.nx * self.ny
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub(crate) fn coords_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.x, &mut self.y)
    }

    /// Coordinates of one batch element.
    pub fn element(&self, b: usize) -> (&[f64], &[f64]) {
        let n = self.tokens_per_element();
        (&self.x[b * n..(b + 1) * n], &self.y[b * n..(b + 1) * n])
    }
}

/// Token ordinals `0..n_tokens`.
pub fn text_positions(n_tokens: usize) -> Result<PositionSet1D> {
    if n_tokens == 0 {
        return Err(CapeError::InvalidInput("n_tokens must be >= 1".into()));
    }
    PositionSet1D::single((0..n_tokens).map(|i| i as f64).collect())
}

/// Patch grid spanning `[-1, 1]` on both axes regardless of pixel
/// resolution. `x` runs over `width_patches`, `y` over `height_patches`.
pub fn image_positions(height_patches: usize, width_patches: usize) -> Result<PositionGrid2D> {
    PositionGrid2D::linspace(1, width_patches, height_patches)
}

/// Patches per side for a square image: `resolution / patch_size`.
pub fn patches_per_side(resolution: usize, patch_size: usize) -> Result<usize> {
    if patch_size == 0 || resolution < patch_size {
        return Err(CapeError::InvalidInput(format!(
            "resolution {resolution} cannot hold a patch of {patch_size}"
        )));
    }
    Ok(resolution / patch_size)
}

/// Frame-center timestamps `offset + i * hop` in seconds.
pub fn audio_positions(n_frames: usize, hop: f64, offset: f64) -> Result<PositionSet1D> {
    if !(hop > 0.0) || !hop.is_finite() {
        return Err(CapeError::InvalidInput(format!("hop must be positive, got {hop}")));
    }
    if n_frames == 0 {
        return Err(CapeError::InvalidInput("n_frames must be >= 1".into()));
    }
    if !offset.is_finite() {
        return Err(CapeError::InvalidInput("offset must be finite".into()));
    }
    PositionSet1D::single((0..n_frames).map(|i| offset + i as f64 * hop).collect())
}

/// Padding-free batch layout: per-sample hop distances so every sample yields
/// the frame count of a mean-duration sample at `base_hop`, plus masks that
/// trim the residual rounding differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub durations: Vec<f64>,
    pub base_hop: f64,
    pub target_frames: usize,
    pub hops: Vec<f64>,
    pub keep_masks: Vec<Vec<bool>>,
}

impl BatchPlan {
    /// Frames each sample keeps after masking.
    pub fn kept_counts(&self) -> Vec<usize> {
        self.keep_masks.iter().map(|m| m.iter().filter(|&&k| k).count()).collect()
    }

    /// Original audio timestamps (`i * hop`) of the frames sample `s` keeps.
    pub fn kept_timestamps(&self, s: usize) -> Vec<f64> {
        let hop = self.hops[s];
        self.keep_masks[s]
            .iter()
            .enumerate()
            .filter(|(_, &k)| k)
            .map(|(i, _)| i as f64 * hop)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

// Absorbs representation error in duration / hop when the quotient is integral.
const FRAME_COUNT_SLACK: f64 = 1e-9;

fn frame_count(duration: f64, hop: f64) -> usize {
    (duration / hop + FRAME_COUNT_SLACK).floor() as usize
}

fn check_durations(durations: &[f64], base_hop: f64) -> Result<()> {
    if durations.is_empty() {
        return Err(CapeError::InvalidInput("no durations".into()));
    }
    if let Some(d) = durations.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
        return Err(CapeError::InvalidInput(format!("durations must be positive, got {d}")));
    }
    if !(base_hop > 0.0) || !base_hop.is_finite() {
        return Err(CapeError::InvalidInput(format!("base_hop must be positive, got {base_hop}")));
    }
    Ok(())
}

fn target_frames(durations: &[f64], base_hop: f64) -> Result<usize> {
    let mean = durations.iter().sum::<f64>() / durations.len() as f64;
    let target = (mean / base_hop).round_ties_even();
    if target < 1.0 {
        return Err(CapeError::InvalidInput(format!(
            "mean duration {mean} s is shorter than one hop of {base_hop} s"
        )));
    }
    Ok(target as usize)
}

/// Real-valued hop distances: `hop_i = duration_i / target_frames`.
///
/// Draws: for each sample in order whose frame count exceeds the batch
/// minimum, one uniform per candidate frame until the selection completes.
pub fn plan_padding_free_batch(durations: &[f64], base_hop: f64, rng: &mut RngStream) -> Result<BatchPlan> {
    check_durations(durations, base_hop)?;
    let target = target_frames(durations, base_hop)?;
    let hops: Vec<f64> = durations.iter().map(|d| d / target as f64).collect();
    Ok(finish_plan(durations, base_hop, target, hops, rng))
}

/// Like [`plan_padding_free_batch`] but rounds each hop to a whole number of
/// samples at `sample_rate`, so frame counts only match approximately and the
/// masks do real work.
pub fn plan_padding_free_batch_quantized(
    durations: &[f64],
    base_hop: f64,
    sample_rate: u32,
    rng: &mut RngStream,
) -> Result<BatchPlan> {
    check_durations(durations, base_hop)?;
    if sample_rate == 0 {
        return Err(CapeError::InvalidInput("sample_rate must be positive".into()));
    }
    let target = target_frames(durations, base_hop)?;
    let sr = f64::from(sample_rate);
    let hops = durations
        .iter()
        .map(|d| {
            let samples = (d / target as f64 * sr).round().max(1.0);
            samples / sr
        })
        .collect();
    Ok(finish_plan(durations, base_hop, target, hops, rng))
}

fn finish_plan(durations: &[f64], base_hop: f64, target: usize, hops: Vec<f64>, rng: &mut RngStream) -> BatchPlan {
    let counts: Vec<usize> = durations.iter().zip(&hops).map(|(&d, &h)| frame_count(d, h)).collect();
    let keep = counts.iter().copied().min().unwrap_or(0);
    let keep_masks = counts.iter().map(|&n| select_ordered(n, keep, rng)).collect();
    BatchPlan { durations: durations.to_vec(), base_hop, target_frames: target, hops, keep_masks }
}

/// Selection sampling: keeps `k` of `n` slots uniformly at random, in order.
fn select_ordered(n: usize, k: usize, rng: &mut RngStream) -> Vec<bool> {
    if k >= n {
        return vec![true; n];
    }
    let mut mask = vec![false; n];
    let mut chosen = 0;
    for (t, slot) in mask.iter_mut().enumerate() {
        if chosen == k {
            break;
        }
        if ((n - t) as f64) * rng.next_f64() < (k - chosen) as f64 {
            *slot = true;
            chosen += 1;
        }
    }
    mask
}

/// Duration-perturbed shuffling parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShuffleSpec {
    pub perturbation_low: f64,
    pub perturbation_high: f64,
    pub batch_size: usize,
}

impl ShuffleSpec {
    pub fn new(batch_size: usize) -> Self {
        Self { perturbation_low: 0.85, perturbation_high: 1.15, batch_size }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CapeError::InvalidInput("batch_size must be >= 1".into()));
        }
        if !(self.perturbation_low > 0.0) || self.perturbation_low > self.perturbation_high {
            return Err(CapeError::InvalidInput(format!(
                "perturbation range [{}, {}] must be positive and ordered",
                self.perturbation_low, self.perturbation_high
            )));
        }
        Ok(())
    }
}

/// Groups sample indices into batches of similar duration: each duration is
/// multiplied by one uniform draw (in index order), indices are stable-sorted
/// by the perturbed value and chunked. The last batch may be short.
pub fn shuffle_by_perturbed_duration(
    durations: &[f64],
    spec: &ShuffleSpec,
    rng: &mut RngStream,
) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    if durations.is_empty() {
        return Err(CapeError::InvalidInput("no durations".into()));
    }
    let perturbed: Vec<f64> = durations
        .iter()
        .map(|d| d * rng.uniform(spec.perturbation_low, spec.perturbation_high))
        .collect();
    let mut order: Vec<usize> = (0..durations.len()).collect();
    order.sort_by(|&a, &b| perturbed[a].total_cmp(&perturbed[b]));
    Ok(order.chunks(spec.batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_ordinals() {
        assert_eq!(text_positions(1).unwrap().as_slice(), &[0.0]);
        assert_eq!(text_positions(4).unwrap().as_slice(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(*text_positions(150).unwrap().as_slice().last().unwrap(), 149.0);
        assert!(text_positions(0).is_err());
    }

    #[test]
    fn image_grid_3x3() {
        let g = image_positions(3, 3).unwrap();
        let (x, y) = g.element(0);
        // first axis is x
        assert_eq!(&x[0..3], &[-1.0, -1.0, -1.0]);
        assert_eq!(&y[0..3], &[-1.0, 0.0, 1.0]);
        let xs: Vec<f64> = (0..3).map(|i| x[i * 3]).collect();
        assert_eq!(xs, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn image_grid_14_and_24() {
        let g = image_positions(14, 14).unwrap();
        assert_eq!(g.x().len(), 196);
        assert_eq!((g.x()[0], g.y()[0]), (-1.0, -1.0));
        assert_eq!((g.x()[195], g.y()[195]), (1.0, 1.0));
        let g = image_positions(24, 24).unwrap();
        assert!((g.y()[1] - g.y()[0] - 2.0 / 23.0).abs() < 1e-15);
        assert_eq!(patches_per_side(224, 16).unwrap(), 14);
        assert_eq!(patches_per_side(384, 16).unwrap(), 24);
        assert!(image_positions(0, 3).is_err());
    }

    #[test]
    fn rectangular_grid_axes() {
        let g = image_positions(2, 5).unwrap();
        assert_eq!((g.nx(), g.ny()), (5, 2));
        assert_eq!(g.x()[g.x().len() - 1], 1.0);
    }

    #[test]
    fn audio_timestamps() {
        let p = audio_positions(3, 0.010, 0.0).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 0.010, 0.020]);
        let p = audio_positions(100, 0.030, 0.0).unwrap();
        assert!((p.as_slice()[99] - 2.97).abs() < 1e-12);
        let p = audio_positions(5, 0.008, 1.0).unwrap();
        assert!((p.as_slice()[4] - 1.032).abs() < 1e-12);
        assert!(audio_positions(3, 0.0, 0.0).is_err());
        assert!(audio_positions(3, -0.01, 0.0).is_err());
    }

    #[test]
    fn plan_8_10_12() {
        let mut rng = RngStream::new(1);
        let plan = plan_padding_free_batch(&[8.0, 10.0, 12.0], 0.010, &mut rng).unwrap();
        assert_eq!(plan.target_frames, 1000);
        for (h, want) in plan.hops.iter().zip([0.008, 0.010, 0.012]) {
            assert!((h - want).abs() < 1e-15);
        }
        assert_eq!(plan.kept_counts(), vec![1000, 1000, 1000]);
    }

    #[test]
    fn plan_single_and_uniform() {
        let mut rng = RngStream::new(1);
        let plan = plan_padding_free_batch(&[10.0], 0.010, &mut rng).unwrap();
        assert!((plan.hops[0] - 0.010).abs() < 1e-15);
        assert!(plan.keep_masks[0].iter().all(|&k| k));
        let plan = plan_padding_free_batch(&[10.0; 3], 0.010, &mut rng).unwrap();
        assert!(plan.hops.iter().all(|h| (h - 0.010).abs() < 1e-15));
        assert!(plan.keep_masks.iter().flatten().all(|&k| k));
    }

    #[test]
    fn plan_rejects_bad_durations() {
        let mut rng = RngStream::new(1);
        assert!(plan_padding_free_batch(&[], 0.01, &mut rng).is_err());
        assert!(plan_padding_free_batch(&[1.0, 0.0], 0.01, &mut rng).is_err());
        assert!(plan_padding_free_batch(&[1.0, -2.0], 0.01, &mut rng).is_err());
        assert!(plan_padding_free_batch(&[1.0], 0.0, &mut rng).is_err());
    }

    #[test]
    fn quantized_plan_drops_frames_in_order() {
        let mut rng = RngStream::new(9);
        let durations = [7.3331, 10.0, 12.71];
        let plan = plan_padding_free_batch_quantized(&durations, 0.010, 16_000, &mut rng).unwrap();
        let counts = plan.kept_counts();
        assert!(counts.windows(2).all(|w| w[0] == w[1]));
        let raw: Vec<usize> = plan.keep_masks.iter().map(Vec::len).collect();
        assert_eq!(counts[0], *raw.iter().min().unwrap());
        assert!(raw.iter().any(|&r| r > counts[0]));
        for s in 0..durations.len() {
            let ts = plan.kept_timestamps(s);
            assert!(ts.windows(2).all(|w| w[0] < w[1]));
            for t in ts {
                let idx = (t / plan.hops[s]).round();
                assert!((idx * plan.hops[s] - t).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn selection_is_uniform_ish() {
        let mut rng = RngStream::new(5);
        let mut hits = [0usize; 10];
        for _ in 0..20_000 {
            for (i, k) in select_ordered(10, 3, &mut rng).into_iter().enumerate() {
                hits[i] += usize::from(k);
            }
        }
        // expected 6000 per slot
        for h in hits {
            assert!((5700..6300).contains(&h), "{hits:?}");
        }
    }

    #[test]
    fn plan_json_fields() {
        let mut rng = RngStream::new(1);
        let plan = plan_padding_free_batch(&[1.0, 2.0], 0.5, &mut rng).unwrap();
        let v: serde_json::Value = serde_json::from_str(&plan.to_json().unwrap()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["base_hop", "durations", "hops", "keep_masks", "target_frames"]);
    }

    #[test]
    fn shuffle_collapsed_range_sorts() {
        let spec = ShuffleSpec { perturbation_low: 1.0, perturbation_high: 1.0, batch_size: 2 };
        let mut rng = RngStream::new(3);
        let batches = shuffle_by_perturbed_duration(&[5.0, 1.0, 3.0, 2.0, 4.0], &spec, &mut rng).unwrap();
        assert_eq!(batches, vec![vec![1, 3], vec![2, 4], vec![0]]);
    }

    #[test]
    fn shuffle_identical_durations_follow_draws() {
        let spec = ShuffleSpec::new(3);
        let durations = [2.0; 7];
        let mut rng = RngStream::new(11);
        let batches = shuffle_by_perturbed_duration(&durations, &spec, &mut rng).unwrap();
        let mut replay = RngStream::new(11);
        let draws: Vec<f64> = (0..7).map(|_| replay.uniform(0.85, 1.15)).collect();
        let mut expect: Vec<usize> = (0..7).collect();
        expect.sort_by(|&a, &b| draws[a].total_cmp(&draws[b]));
        assert_eq!(batches.concat(), expect);
    }

    #[test]
    fn shuffle_rejects_bad_spec() {
        let mut rng = RngStream::new(0);
        assert!(shuffle_by_perturbed_duration(&[], &ShuffleSpec::new(2), &mut rng).is_err());
        assert!(shuffle_by_perturbed_duration(&[1.0], &ShuffleSpec::new(0), &mut rng).is_err());
        let bad = ShuffleSpec { perturbation_low: 1.2, perturbation_high: 1.1, batch_size: 1 };
        assert!(shuffle_by_perturbed_duration(&[1.0], &bad, &mut rng).is_err());
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(PositionSet1D::from_rows(&[vec![0.0, 1.0], vec![0.0]]).is_err());
        assert!(PositionSet1D::from_rows(&[]).is_err());
    }
}
