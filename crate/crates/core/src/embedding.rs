//! Sinusoidal embeddings of continuous positions.
//!
//! Text and audio use one frequency family `ω_k` over scalar positions;
//! images use planar wave vectors `(w_x, w_y)` over coordinates in `[-1, 1]`.
//! Rows are laid out `[cos(phase) | sin(phase)]` unless converted.

use std::f64::consts::PI;

use crate::error::{CapeError, Result};
use crate::matrix::Matrix;
use crate::positions::PositionGrid2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
    Audio,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Audio => "audio",
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = CapeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            "audio" => Ok(Modality::Audio),
            other => Err(CapeError::InvalidInput(format!("unknown modality {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Frequencies {
    /// Angular frequency per position unit, one per (cos, sin) pair.
    Linear(Vec<f64>),
    /// Planar wave vectors; the phase is `π (w_x x + w_y y)`.
    Planar { wx: Vec<f64>, wy: Vec<f64> },
}

/// Frequency family and embedding width for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySpec {
    modality: Modality,
    dim: usize,
    freqs: Frequencies,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 || dim % 2 != 0 {
        return Err(CapeError::InvalidSpec(format!("dim_K must be even and >= 2, got {dim}")));
    }
    Ok(())
}

fn geometric(dim: usize, scale: f64) -> Vec<f64> {
    (0..dim / 2)
        .map(|k| scale * 10000f64.powf(-2.0 * k as f64 / dim as f64))
        .collect()
}

impl FrequencySpec {
    /// `ω_k = 10000^(-2k/K)`, `k = 0..K/2`.
    pub fn text(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self { modality: Modality::Text, dim, freqs: Frequencies::Linear(geometric(dim, 1.0)) })
    }

    /// `ω_k = 30 · 10000^(-2k/K)` for positions in seconds.
    pub fn audio(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self { modality: Modality::Audio, dim, freqs: Frequencies::Linear(geometric(dim, 30.0)) })
    }

    /// Magnitudes `ρ_j = 10^(j/(K/2))` for `j = 1..=K/2`, direction angle
    /// `j - 1` radians.
    pub fn image(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let half = dim / 2;
        let rho: Vec<f64> = (1..=half).map(|j| 10f64.powf(j as f64 / half as f64)).collect();
        Ok(Self::planar(dim, &rho))
    }

    /// Image variant with `ρ = 10^linspace(0, 1, K/2)`, so magnitudes start at 1.
    pub fn image_approx(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let half = dim / 2;
        let rho: Vec<f64> = linspace(0.0, 1.0, half).into_iter().map(|e| 10f64.powf(e)).collect();
        Ok(Self::planar(dim, &rho))
    }

    fn planar(dim: usize, rho: &[f64]) -> Self {
        let wx = rho.iter().enumerate().map(|(k, r)| r * (k as f64).cos()).collect();
        let wy = rho.iter().enumerate().map(|(k, r)| r * (k as f64).sin()).collect();
        Self { modality: Modality::Image, dim, freqs: Frequencies::Planar { wx, wy } }
    }

    pub fn for_modality(modality: Modality, dim: usize) -> Result<Self> {
        match modality {
            Modality::Text => Self::text(dim),
            Modality::Audio => Self::audio(dim),
            Modality::Image => Self::image(dim),
        }
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half(&self) -> usize {
        self.dim / 2
    }

    /// Angular frequencies for text/audio, `None` for images.
    pub fn omega(&self) -> Option<&[f64]> {
        match &self.freqs {
            Frequencies::Linear(w) => Some(w),
            Frequencies::Planar { .. } => None,
        }
    }

    /// `(w_x, w_y)` for images, `None` otherwise.
    pub fn planar_frequencies(&self) -> Option<(&[f64], &[f64])> {
        match &self.freqs {
            Frequencies::Planar { wx, wy } => Some((wx, wy)),
            Frequencies::Linear(_) => None,
        }
    }

    fn require_linear(&self) -> Result<&[f64]> {
        self.omega().ok_or_else(|| {
            CapeError::InvalidSpec(format!("{} spec has no scalar frequencies", self.modality))
        })
    }

    fn require_planar(&self) -> Result<(&[f64], &[f64])> {
        self.planar_frequencies().ok_or_else(|| {
            CapeError::InvalidSpec(format!("{} spec has no planar frequencies", self.modality))
        })
    }
}

/// `numpy.linspace(start, stop, n)`; `n == 1` yields `[start]`.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (stop - start) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|i| start + i as f64 * step).collect();
            v[n - 1] = stop;
            v
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layout {
    /// Columns `0..K/2` hold cosines, `K/2..K` sines.
    #[default]
    Concatenated,
    /// Columns alternate `cos, sin, cos, sin, ...`.
    Interleaved,
}

impl Layout {
    /// Column indices of the `(cos, sin)` pair `k` in a row of width `2 * half`.
    #[inline]
    pub fn pair_columns(self, half: usize, k: usize) -> (usize, usize) {
        match self {
            Layout::Concatenated => (k, k + half),
            Layout::Interleaved => (2 * k, 2 * k + 1),
        }
    }
}

impl std::fmt::Display for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Layout::Concatenated => "concatenated",
            Layout::Interleaved => "interleaved",
        })
    }
}

impl std::str::FromStr for Layout {
    type Err = CapeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concatenated" => Ok(Layout::Concatenated),
            "interleaved" => Ok(Layout::Interleaved),
            other => Err(CapeError::InvalidInput(format!("unknown layout {other:?}"))),
        }
    }
}

/// Per-token embedding rows. Padding tokens (NaN positions) are all-NaN rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    matrix: Matrix,
    layout: Layout,
}

impl Embedding {
    pub fn new(matrix: Matrix, layout: Layout) -> Result<Self> {
        check_dim(matrix.cols())?;
        Ok(Self { matrix, layout })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn n_tokens(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    pub fn is_padding(&self, i: usize) -> bool {
        self.row(i).iter().any(|v| v.is_nan())
    }

    /// `(cos, sin)` pair `k` of token `i`, independent of layout.
    pub fn pair(&self, i: usize, k: usize) -> (f64, f64) {
        let (c, s) = self.layout.pair_columns(self.dim() / 2, k);
        (self.row(i)[c], self.row(i)[s])
    }

    pub fn to_layout(&self, layout: Layout) -> Self {
        if layout == self.layout {
            return self.clone();
        }
        let half = self.dim() / 2;
        let mut out = Matrix::zeros(self.n_tokens(), self.dim());
        for i in 0..self.n_tokens() {
            for k in 0..half {
                let (c, s) = self.pair(i, k);
                let (ci, si) = layout.pair_columns(half, k);
                out[(i, ci)] = c;
                out[(i, si)] = s;
            }
        }
        Self { matrix: out, layout }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.matrix.as_slice().iter().map(|&v| v as f32).collect()
    }
}

fn phases_to_embedding(n: usize, half: usize, mut phase: impl FnMut(usize, usize) -> f64) -> Matrix {
    let mut m = Matrix::zeros(n, 2 * half);
    for i in 0..n {
        let row = m.row_mut(i);
        for k in 0..half {
            let (s, c) = phase(i, k).sin_cos();
            row[k] = c;
            row[k + half] = s;
        }
    }
    m
}

fn check_nonempty(n: usize) -> Result<()> {
    if n == 0 {
        return Err(CapeError::InvalidInput("empty position set".into()));
    }
    Ok(())
}

/// `[cos(ω_k p) | sin(ω_k p)]` for every position `p`. NaN positions give
/// NaN rows.
pub fn embed_1d(positions: &[f64], spec: &FrequencySpec) -> Result<Embedding> {
    let omega = spec.require_linear()?;
    check_nonempty(positions.len())?;
    if positions.iter().any(|p| p.is_infinite()) {
        return Err(CapeError::InvalidInput("infinite position".into()));
    }
    let m = phases_to_embedding(positions.len(), omega.len(), |i, k| omega[k] * positions[i]);
    Ok(Embedding { matrix: m, layout: Layout::Concatenated })
}

/// Derivative of each embedding row with respect to its own position.
pub fn embed_1d_derivative(positions: &[f64], spec: &FrequencySpec) -> Result<Embedding> {
    let omega = spec.require_linear()?;
    check_nonempty(positions.len())?;
    let half = omega.len();
    let mut m = Matrix::zeros(positions.len(), spec.dim());
    for (i, &p) in positions.iter().enumerate() {
        let row = m.row_mut(i);
        for (k, &w) in omega.iter().enumerate() {
            let (s, c) = (w * p).sin_cos();
            row[k] = -w * s;
            row[k + half] = w * c;
        }
    }
    Ok(Embedding { matrix: m, layout: Layout::Concatenated })
}

/// Rotates every `(cos, sin)` pair by `ω_k · shift`, mapping the embedding of
/// `p` onto the embedding of `p + shift`.
pub fn shift_apply(emb: &Embedding, shift: f64, spec: &FrequencySpec) -> Result<Embedding> {
    let omega = spec.require_linear()?;
    check_width(emb, spec)?;
    let rot: Vec<(f64, f64)> = omega.iter().map(|w| (w * shift).sin_cos()).collect();
    Ok(rotate(emb, &rot))
}

/// Planar counterpart of [`shift_apply`]: the commuting rotations for a
/// shift of `(dx, dy)`.
pub fn shift_apply_2d(emb: &Embedding, dx: f64, dy: f64, spec: &FrequencySpec) -> Result<Embedding> {
    let (wx, wy) = spec.require_planar()?;
    check_width(emb, spec)?;
    let rot: Vec<(f64, f64)> =
        wx.iter().zip(wy).map(|(a, b)| (PI * (a * dx + b * dy)).sin_cos()).collect();
    Ok(rotate(emb, &rot))
}

fn check_width(emb: &Embedding, spec: &FrequencySpec) -> Result<()> {
    if emb.dim() != spec.dim() {
        return Err(CapeError::ShapeMismatch(format!(
            "embedding width {} vs spec dim_K {}",
            emb.dim(),
            spec.dim()
        )));
    }
    Ok(())
}

fn rotate(emb: &Embedding, rot: &[(f64, f64)]) -> Embedding {
    let half = emb.dim() / 2;
    let mut out = emb.matrix.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        for (k, &(s, c)) in rot.iter().enumerate() {
            let (ci, si) = emb.layout.pair_columns(half, k);
            let (a, b) = (row[ci], row[si]);
            row[ci] = a * c - b * s;
            row[si] = b * c + a * s;
        }
    }
    Embedding { matrix: out, layout: emb.layout }
}

/// Embeds every grid token; rows follow the grid's token order
/// (batch, then `x` index, then `y` index).
pub fn embed_2d(grid: &PositionGrid2D, spec: &FrequencySpec) -> Result<Embedding> {
    let (wx, wy) = spec.require_planar()?;
    let (xs, ys) = (grid.x(), grid.y());
    if xs.len() != ys.len() {
        return Err(CapeError::ShapeMismatch(format!("{} x vs {} y coordinates", xs.len(), ys.len())));
    }
    check_nonempty(xs.len())?;
    let m = phases_to_embedding(xs.len(), wx.len(), |i, k| PI * (wx[k] * xs[i] + wy[k] * ys[i]));
    Ok(Embedding { matrix: m, layout: Layout::Concatenated })
}

/// Derivatives of each row of [`embed_2d`] with respect to the token's `x`
/// and `y` coordinates.
pub fn embed_2d_derivative(grid: &PositionGrid2D, spec: &FrequencySpec) -> Result<(Embedding, Embedding)> {
    let (wx, wy) = spec.require_planar()?;
    let (xs, ys) = (grid.x(), grid.y());
    check_nonempty(xs.len())?;
    let half = wx.len();
    let mut dx = Matrix::zeros(xs.len(), spec.dim());
    let mut dy = Matrix::zeros(xs.len(), spec.dim());
    for i in 0..xs.len() {
        for k in 0..half {
            let (s, c) = (PI * (wx[k] * xs[i] + wy[k] * ys[i])).sin_cos();
            dx[(i, k)] = -PI * wx[k] * s;
            dx[(i, k + half)] = PI * wx[k] * c;
            dy[(i, k)] = -PI * wy[k] * s;
            dy[(i, k + half)] = PI * wy[k] * c;
        }
    }
    Ok((
        Embedding { matrix: dx, layout: Layout::Concatenated },
        Embedding { matrix: dy, layout: Layout::Concatenated },
    ))
}

/// Learned absolute lookup table with modular wrap for indices past its end.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsposTable {
    table: Matrix,
}

impl AbsposTable {
    pub fn new(table: Matrix) -> Result<Self> {
        if table.rows() == 0 {
            return Err(CapeError::InvalidInput("abspos table needs at least one row".into()));
        }
        Ok(Self { table })
    }

    pub fn period(&self) -> usize {
        self.table.rows()
    }

    pub fn lookup(&self, index: u64) -> &[f64] {
        self.table.row((index % self.table.rows() as u64) as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-9;

    #[test]
    fn zero_positions_text() {
        let spec = FrequencySpec::text(4).unwrap();
        let e = embed_1d(&[0.0, 0.0, 0.0], &spec).unwrap();
        for i in 0..3 {
            assert_eq!(e.row(i), &[1.0, 1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn zero_time_audio() {
        for dim in [2, 8, 64] {
            let spec = FrequencySpec::audio(dim).unwrap();
            let e = embed_1d(&[0.0], &spec).unwrap();
            let row = e.row(0);
            assert!(row[..dim / 2].iter().all(|&v| v == 1.0));
            assert!(row[dim / 2..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn odd_or_tiny_dims_rejected() {
        assert!(matches!(FrequencySpec::text(7), Err(CapeError::InvalidSpec(_))));
        assert!(matches!(FrequencySpec::image(0), Err(CapeError::InvalidSpec(_))));
        assert!(matches!(FrequencySpec::audio(1), Err(CapeError::InvalidSpec(_))));
    }

    #[test]
    fn empty_positions_rejected() {
        let spec = FrequencySpec::text(4).unwrap();
        assert!(matches!(embed_1d(&[], &spec), Err(CapeError::InvalidInput(_))));
    }

    #[test]
    fn modality_mismatch_rejected() {
        let img = FrequencySpec::image(4).unwrap();
        assert!(embed_1d(&[1.0], &img).is_err());
        let txt = FrequencySpec::text(4).unwrap();
        let e = embed_1d(&[1.0], &txt).unwrap();
        assert!(shift_apply(&e, 1.0, &FrequencySpec::text(8).unwrap()).is_err());
    }

    #[test]
    fn nan_positions_give_nan_rows() {
        let spec = FrequencySpec::text(6).unwrap();
        let e = embed_1d(&[1.0, f64::NAN], &spec).unwrap();
        assert!(!e.is_padding(0));
        assert!(e.row(1).iter().all(|v| v.is_nan()));
    }

    #[test]
    fn shift_five_from_three() {
        let spec = FrequencySpec::text(64).unwrap();
        let a = embed_1d(&[5.0], &spec).unwrap();
        let b = shift_apply(&embed_1d(&[3.0], &spec).unwrap(), 2.0, &spec).unwrap();
        assert!(a.matrix().max_abs_diff(b.matrix()) < TOL);
    }

    #[test]
    fn shift_seven_from_four_k128() {
        let spec = FrequencySpec::text(128).unwrap();
        let a = embed_1d(&[7.0], &spec).unwrap();
        let b = shift_apply(&embed_1d(&[4.0], &spec).unwrap(), 3.0, &spec).unwrap();
        assert!(a.matrix().max_abs_diff(b.matrix()) < TOL);
    }

    #[test]
    fn zero_shift_is_identity_and_inverse_undoes() {
        let spec = FrequencySpec::audio(16).unwrap();
        let e = embed_1d(&[0.3, 1.7, 12.0], &spec).unwrap();
        assert_eq!(shift_apply(&e, 0.0, &spec).unwrap(), e);
        let back = shift_apply(&shift_apply(&e, 2.0, &spec).unwrap(), -2.0, &spec).unwrap();
        assert!(back.matrix().max_abs_diff(e.matrix()) < TOL);
    }

    #[test]
    fn shift_respects_interleaved_layout() {
        let spec = FrequencySpec::text(8).unwrap();
        let e = embed_1d(&[2.5], &spec).unwrap().to_layout(Layout::Interleaved);
        let shifted = shift_apply(&e, 1.5, &spec).unwrap();
        let direct = embed_1d(&[4.0], &spec).unwrap().to_layout(Layout::Interleaved);
        assert!(shifted.matrix().max_abs_diff(direct.matrix()) < TOL);
        assert_eq!(shifted.to_layout(Layout::Concatenated).layout(), Layout::Concatenated);
    }

    #[test]
    fn text_and_audio_frequencies() {
        let t = FrequencySpec::text(8).unwrap();
        let w = t.omega().unwrap();
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 0.1).abs() < 1e-15);
        assert!((w[3] - 1e-3).abs() < 1e-15);
        let a = FrequencySpec::audio(8).unwrap();
        let w = a.omega().unwrap();
        assert_eq!(w[0], 30.0);
        assert!(w.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn image_frequencies_k768() {
        let spec = FrequencySpec::image(768).unwrap();
        let (wx, wy) = spec.planar_frequencies().unwrap();
        assert!((wx[0] - 10f64.powf(1.0 / 384.0)).abs() < 1e-15);
        assert!((wx[0] - 1.006).abs() < 1e-3);
        assert_eq!(wy[0], 0.0);
        assert!((wx[383].hypot(wy[383]) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn approx_image_frequencies_start_at_one() {
        let spec = FrequencySpec::image_approx(16).unwrap();
        let (wx, wy) = spec.planar_frequencies().unwrap();
        assert_eq!(wx[0], 1.0);
        assert!((wx[7].hypot(wy[7]) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn linspace_matches_numpy_conventions() {
        assert_eq!(linspace(-1.0, 1.0, 3), vec![-1.0, 0.0, 1.0]);
        assert_eq!(linspace(-1.0, 1.0, 1), vec![-1.0]);
        assert!(linspace(-1.0, 1.0, 0).is_empty());
        let v = linspace(-1.0, 1.0, 24);
        assert!((v[1] - v[0] - 2.0 / 23.0).abs() < 1e-15);
    }

    #[test]
    fn layout_round_trip() {
        let spec = FrequencySpec::text(6).unwrap();
        let e = embed_1d(&[0.5, 2.0], &spec).unwrap();
        let il = e.to_layout(Layout::Interleaved);
        assert_eq!(il.row(0)[0], e.row(0)[0]);
        assert_eq!(il.row(0)[1], e.row(0)[3]);
        assert_eq!(il.to_layout(Layout::Concatenated), e);
    }

    #[test]
    fn abspos_wraps() {
        let table = Matrix::from_fn(5, 4, |i, j| (i * 10 + j) as f64);
        let t = AbsposTable::new(table).unwrap();
        assert_eq!(t.lookup(0), t.lookup(5));
        assert_eq!(t.lookup(2 * 5 + 3), &[30.0, 31.0, 32.0, 33.0]);
        assert_eq!(t.lookup(u64::MAX), t.lookup(u64::MAX % 5));
    }

    #[test]
    fn f32_export() {
        let spec = FrequencySpec::text(4).unwrap();
        let e = embed_1d(&[1.0], &spec).unwrap();
        let v = e.to_f32();
        assert_eq!(v.len(), 4);
        assert_eq!(v[0], 1f64.cos() as f32);
    }
}
