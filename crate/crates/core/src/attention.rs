//! Single-head, single-layer attention encoder used to probe how positional
//! embeddings interact with attention, plus the workload for the relative
//! position cost benchmark.
//!
//! Token vectors are rows; weights act on them as column vectors
//! (`q_i = W_q x_i`). The layer computes
//!
//! ```text
//! x_i  = t_i (+ e_i in addpos mode)
//! s_ij = q_i · (k_j + r_clip(j - i)) / sqrt(d)      (r only in relpos mode)
//! a_ij = softmax_j(s_ij) over non-padding j
//! o_i  = W_o Σ_j a_ij v_j + x_i
//! ```

use crate::embedding::Embedding;
use crate::error::{CapeError, Result};
use crate::matrix::{apply_rows, apply_rows_transposed, axpy, dot, Matrix};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosMode {
    NoPos,
    AddPos,
    RelPos,
}

impl std::fmt::Display for PosMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PosMode::NoPos => "nopos",
            PosMode::AddPos => "addpos",
            PosMode::RelPos => "relpos",
        })
    }
}

/// Learned key offsets indexed by clipped relative distance.
#[derive(Debug, Clone, PartialEq)]
pub struct RelposTable {
    max_context: usize,
    offsets: Matrix,
}

impl RelposTable {
    pub fn new(max_context: usize, offsets: Matrix) -> Result<Self> {
        if max_context == 0 {
            return Err(CapeError::InvalidInput("max_context must be >= 1".into()));
        }
        if offsets.rows() != 2 * max_context + 1 {
            return Err(CapeError::ShapeMismatch(format!(
                "relpos table needs {} rows, got {}",
                2 * max_context + 1,
                offsets.rows()
            )));
        }
        Ok(Self { max_context, offsets })
    }

    pub fn random(max_context: usize, d_model: usize, rng: &mut RngStream) -> Result<Self> {
        let bound = 1.0 / (d_model as f64).sqrt();
        let offsets = Matrix::from_fn(2 * max_context + 1, d_model, |_, _| rng.symmetric(bound));
        Self::new(max_context, offsets)
    }

    pub fn max_context(&self) -> usize {
        self.max_context
    }

    pub fn offsets(&self) -> &Matrix {
        &self.offsets
    }

    /// Table row for relative distance `j - i`, clamped to `±max_context`.
    #[inline]
    pub fn index(&self, distance: isize) -> usize {
        let c = self.max_context as isize;
        (distance.clamp(-c, c) + c) as usize
    }

    pub fn offset(&self, distance: isize) -> &[f64] {
        self.offsets.row(self.index(distance))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub d_model: usize,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub mode: PosMode,
    pub relpos: Option<RelposTable>,
}

impl AttentionParams {
    /// Weights uniform in `[-1/√d, 1/√d]`, drawn `W_q, W_k, W_v, W_o` in
    /// row-major order, then the relpos table if `mode` is relpos.
    pub fn random(d_model: usize, mode: PosMode, max_context: usize, rng: &mut RngStream) -> Result<Self> {
        if d_model == 0 || d_model % 2 != 0 {
            return Err(CapeError::InvalidInput(format!("d_model must be positive and even, got {d_model}")));
        }
        let bound = 1.0 / (d_model as f64).sqrt();
        let mut draw = || Matrix::from_fn(d_model, d_model, |_, _| rng.symmetric(bound));
        let (w_q, w_k, w_v, w_o) = (draw(), draw(), draw(), draw());
        let relpos = match mode {
            PosMode::RelPos => Some(RelposTable::random(max_context, d_model, rng)?),
            _ => None,
        };
        let params = Self { d_model, w_q, w_k, w_v, w_o, mode, relpos };
        params.validate()?;
        Ok(params)
    }

    pub fn with_mode(&self, mode: PosMode, relpos: Option<RelposTable>) -> Result<Self> {
        let p = Self { mode, relpos, ..self.clone() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_model;
        for (name, w) in [("W_q", &self.w_q), ("W_k", &self.w_k), ("W_v", &self.w_v), ("W_o", &self.w_o)] {
            if w.rows() != d || w.cols() != d {
                return Err(CapeError::ShapeMismatch(format!("{name} is {}x{}, want {d}x{d}", w.rows(), w.cols())));
            }
            if !w.is_finite() {
                return Err(CapeError::InvalidInput(format!("{name} has non-finite entries")));
            }
        }
        match (self.mode, &self.relpos) {
            (PosMode::RelPos, None) => Err(CapeError::InvalidInput("relpos mode needs a relpos table".into())),
            (PosMode::RelPos, Some(t)) if t.offsets.cols() != d => {
                Err(CapeError::ShapeMismatch(format!("relpos width {} vs d_model {d}", t.offsets.cols())))
            }
            _ => Ok(()),
        }
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    attn: Matrix,
    active: Vec<bool>,
    /// relpos only: first reachable table row and `q_i · r_c` for reachable `c`.
    rel_base: usize,
    qr: Option<Matrix>,
    output: Matrix,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }

    /// Softmax weights; rows of padding queries are zero.
    pub fn attention(&self) -> &Matrix {
        &self.attn
    }

    /// Layer input after the positional embedding is added.
    pub fn input(&self) -> &Matrix {
        &self.x
    }
}

/// Gradients of a scalar loss with respect to the layer inputs.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub tokens: Matrix,
    pub relpos: Option<Matrix>,
}

fn try_zeros(rows: usize, cols: usize) -> Result<Matrix> {
    let n = rows.checked_mul(cols).ok_or(CapeError::OutOfMemory { length: rows, bytes: usize::MAX })?;
    let mut data = Vec::new();
    data.try_reserve_exact(n)
        .map_err(|_| CapeError::OutOfMemory { length: rows, bytes: n.saturating_mul(8) })?;
    data.resize(n, 0.0);
    Matrix::from_vec(rows, cols, data)
}

fn build_input(tokens: &Matrix, pos_emb: Option<&Embedding>, padding: Option<&[bool]>, params: &AttentionParams) -> Result<(Matrix, Vec<bool>)> {
    let n = tokens.rows();
    let d = params.d_model;
    if n == 0 {
        return Err(CapeError::InvalidInput("no tokens".into()));
    }
    if tokens.cols() != d {
        return Err(CapeError::ShapeMismatch(format!("tokens have width {}, d_model is {d}", tokens.cols())));
    }
    let active: Vec<bool> = match padding {
        Some(p) if p.len() != n => {
            return Err(CapeError::ShapeMismatch(format!("padding mask has {} entries for {n} tokens", p.len())))
        }
        Some(p) => p.iter().map(|&pad| !pad).collect(),
        None => vec![true; n],
    };
    let mut x = tokens.clone();
    match (params.mode, pos_emb) {
        (PosMode::AddPos, Some(e)) => {
            if e.n_tokens() != n || e.dim() != d {
                return Err(CapeError::ShapeMismatch(format!(
                    "positional embedding is {}x{}, tokens are {n}x{d}",
                    e.n_tokens(),
                    e.dim()
                )));
            }
            for i in 0..n {
                let row = e.row(i);
                let nan = row.iter().any(|v| v.is_nan());
                match (nan, active[i]) {
                    (true, true) => {
                        return Err(CapeError::InvalidInput(format!(
                            "positional embedding row {i} is NaN but the token is not masked as padding"
                        )))
                    }
                    (false, _) if active[i] => axpy(x.row_mut(i), 1.0, row),
                    _ => {}
                }
            }
        }
        (PosMode::AddPos, None) => return Err(CapeError::InvalidInput("addpos mode needs a positional embedding".into())),
        (_, Some(_)) => {
            return Err(CapeError::InvalidInput(format!("{} mode takes no absolute positional embedding", params.mode)))
        }
        (_, None) => {}
    }
    if !active.iter().any(|&a| a) {
        return Err(CapeError::InvalidInput("every token is padding".into()));
    }
    Ok((x, active))
}

/// Runs the layer and keeps what the backward pass needs. Padding queries
/// produce zero rows and are never attended to.
pub fn forward(
    tokens: &Matrix,
    pos_emb: Option<&Embedding>,
    padding: Option<&[bool]>,
    params: &AttentionParams,
) -> Result<ForwardCache> {
    params.validate()?;
    let (x, active) = build_input(tokens, pos_emb, padding, params)?;
    let n = x.rows();
    let d = params.d_model;
    let scale = 1.0 / (d as f64).sqrt();
    let q = apply_rows(&params.w_q, &x);
    let k = apply_rows(&params.w_k, &x);
    let v = apply_rows(&params.w_v, &x);

    let mut attn = try_zeros(n, n)?;
    let (rel_base, qr) = match (&params.relpos, params.mode) {
        (Some(table), PosMode::RelPos) => {
            // Only distances in -(n-1)..=(n-1) occur; precompute q_i · r_c for those rows.
            let lo = table.index(-(n as isize - 1));
            let hi = table.index(n as isize - 1);
            let mut qr = try_zeros(n, hi - lo + 1)?;
            for i in 0..n {
                let qi = q.row(i);
                let out = qr.row_mut(i);
                for (c, o) in out.iter_mut().enumerate() {
                    *o = dot(qi, table.offsets.row(lo + c));
                }
            }
            (lo, Some(qr))
        }
        _ => (0, None),
    };

    // Keys are visited in an order defined by their content, so permuting the
    // input tokens permutes the output rows bitwise (reductions see the same
    // operand order).
    let mut key_order: Vec<usize> = (0..n).filter(|&j| active[j]).collect();
    key_order.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b))
            .map(|(u, v)| u.total_cmp(v))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    for i in 0..n {
        if !active[i] {
            continue;
        }
        let qi = q.row(i);
        let row = attn.row_mut(i);
        let mut max = f64::NEG_INFINITY;
        for &j in &key_order {
            let mut s = dot(qi, k.row(j));
            if let (Some(qr), Some(table)) = (&qr, &params.relpos) {
                s += qr[(i, table.index(j as isize - i as isize) - rel_base)];
            }
            s *= scale;
            row[j] = s;
            max = max.max(s);
        }
        let mut total = 0.0;
        for &j in &key_order {
            row[j] = (row[j] - max).exp();
            total += row[j];
        }
        for (j, a) in row.iter_mut().enumerate() {
            *a = if active[j] { *a / total } else { 0.0 };
        }
    }

    let mut h = Matrix::zeros(n, d);
    for i in 0..n {
        if !active[i] {
            continue;
        }
        let hi = h.row_mut(i);
        for &j in &key_order {
            axpy(hi, attn[(i, j)], v.row(j));
        }
    }
    let mut output = apply_rows(&params.w_o, &h);
    for i in 0..n {
        if active[i] {
            axpy(output.row_mut(i), 1.0, x.row(i));
        } else {
            output.row_mut(i).fill(0.0);
        }
    }
    Ok(ForwardCache { x, q, k, v, attn, active, rel_base, qr, output })
}

/// Layer output; see [`forward`].
pub fn encode(
    tokens: &Matrix,
    pos_emb: Option<&Embedding>,
    padding: Option<&[bool]>,
    params: &AttentionParams,
) -> Result<Matrix> {
    Ok(forward(tokens, pos_emb, padding, params)?.output)
}

/// Pre-softmax scores `s_ij` (same formula as [`forward`], no masking).
pub fn attention_logits(x: &Matrix, params: &AttentionParams) -> Result<Matrix> {
    params.validate()?;
    if x.cols() != params.d_model {
        return Err(CapeError::ShapeMismatch(format!("input width {} vs d_model {}", x.cols(), params.d_model)));
    }
    let n = x.rows();
    let scale = 1.0 / (params.d_model as f64).sqrt();
    let q = apply_rows(&params.w_q, x);
    let k = apply_rows(&params.w_k, x);
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut v = dot(q.row(i), k.row(j));
            if let (PosMode::RelPos, Some(t)) = (params.mode, &params.relpos) {
                v += dot(q.row(i), t.offset(j as isize - i as isize));
            }
            s[(i, j)] = v * scale;
        }
    }
    Ok(s)
}

/// Backpropagates `grad_out = ∂L/∂output` to the layer input (which equals
/// the gradient for both the tokens and an added positional embedding) and,
/// in relpos mode, to the offset table. Weight gradients are not computed.
pub fn backward(cache: &ForwardCache, grad_out: &Matrix, params: &AttentionParams) -> Result<Gradients> {
    let n = cache.x.rows();
    let d = params.d_model;
    if grad_out.rows() != n || grad_out.cols() != d {
        return Err(CapeError::ShapeMismatch("output gradient shape".into()));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut g = grad_out.clone();
    for i in 0..n {
        if !cache.active[i] {
            g.row_mut(i).fill(0.0);
        }
    }
    let dh = apply_rows_transposed(&params.w_o, &g);
    let mut dv = try_zeros(n, d)?;
    let mut ds = try_zeros(n, n)?;
    for i in 0..n {
        if !cache.active[i] {
            continue;
        }
        let a = cache.attn.row(i);
        let dhi = dh.row(i);
        let row = ds.row_mut(i);
        let mut weighted = 0.0;
        for j in 0..n {
            if a[j] != 0.0 {
                let da = dot(dhi, cache.v.row(j));
                row[j] = da;
                weighted += a[j] * da;
                axpy(dv.row_mut(j), a[j], dhi);
            }
        }
        for j in 0..n {
            row[j] = a[j] * (row[j] - weighted) * scale;
        }
    }

    let mut dq = Matrix::zeros(n, d);
    let mut dk = Matrix::zeros(n, d);
    for i in 0..n {
        let dqi = dq.row_mut(i);
        for j in 0..n {
            let s = ds[(i, j)];
            if s != 0.0 {
                axpy(dqi, s, cache.k.row(j));
            }
        }
    }
    for i in 0..n {
        let qi = cache.q.row(i);
        for j in 0..n {
            let s = ds[(i, j)];
            if s != 0.0 {
                axpy(dk.row_mut(j), s, qi);
            }
        }
    }

    let relpos = match (&params.relpos, &cache.qr, params.mode) {
        (Some(table), Some(qr), PosMode::RelPos) => {
            // Gradients via the reachable offset rows: dq_i += Σ_c (Σ_j ds_ij) r_c, dR_c += Σ_i (Σ_j ds_ij) q_i.
            let width = qr.cols();
            let mut dqr = try_zeros(n, width)?;
            for i in 0..n {
                for j in 0..n {
                    let s = ds[(i, j)];
                    if s != 0.0 {
                        dqr[(i, table.index(j as isize - i as isize) - cache.rel_base)] += s;
                    }
                }
            }
            let mut dtable = Matrix::zeros(table.offsets.rows(), d);
            for i in 0..n {
                let qi = cache.q.row(i);
                for c in 0..width {
                    let w = dqr[(i, c)];
                    if w != 0.0 {
                        axpy(dq.row_mut(i), w, table.offsets.row(cache.rel_base + c));
                        axpy(dtable.row_mut(cache.rel_base + c), w, qi);
                    }
                }
            }
            Some(dtable)
        }
        _ => None,
    };

    let mut dx = g;
    for (w, grad) in [(&params.w_q, &dq), (&params.w_k, &dk), (&params.w_v, &dv)] {
        let back = apply_rows_transposed(w, grad);
        for i in 0..n {
            axpy(dx.row_mut(i), 1.0, back.row(i));
        }
    }
    Ok(Gradients { tokens: dx, relpos })
}

/// Analytic Jacobian of the flattened output with respect to the flattened
/// tokens, one backward pass per output entry.
pub fn encoder_jacobian(
    tokens: &Matrix,
    pos_emb: Option<&Embedding>,
    params: &AttentionParams,
) -> Result<Matrix> {
    let cache = forward(tokens, pos_emb, None, params)?;
    let (n, d) = (tokens.rows(), tokens.cols());
    let mut jac = Matrix::zeros(n * d, n * d);
    let mut seed = Matrix::zeros(n, d);
    for r in 0..n * d {
        seed.as_mut_slice()[r] = 1.0;
        let g = backward(&cache, &seed, params)?;
        jac.row_mut(r).copy_from_slice(g.tokens.as_slice());
        seed.as_mut_slice()[r] = 0.0;
    }
    Ok(jac)
}

/// Central-difference Jacobian: `J[r][c] = ∂f_r/∂p_c`.
pub fn finite_difference_jacobian<F>(f: F, point: &[f64], step: f64) -> Result<Matrix>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(step > 0.0) {
        return Err(CapeError::InvalidInput(format!("step must be positive, got {step}")));
    }
    if point.iter().any(|v| !v.is_finite()) {
        return Err(CapeError::NonDifferentiable("point has non-finite coordinates".into()));
    }
    let outputs = f(point)?.len();
    let mut jac = Matrix::zeros(outputs, point.len());
    let mut probe = point.to_vec();
    for c in 0..point.len() {
        probe[c] = point[c] + step;
        let plus = f(&probe)?;
        probe[c] = point[c] - step;
        let minus = f(&probe)?;
        probe[c] = point[c];
        if plus.len() != outputs || minus.len() != outputs {
            return Err(CapeError::ShapeMismatch("function output length changed".into()));
        }
        for r in 0..outputs {
            jac[(r, c)] = (plus[r] - minus[r]) / (2.0 * step);
        }
    }
    Ok(jac)
}

/// Largest `|a - n| / max(|a|, |n|, 1)` over all entries. The floor of 1
/// keeps entries whose true value is ~0 from dominating.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> Result<f64> {
    if analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols() {
        return Err(CapeError::ShapeMismatch("jacobian shapes differ".into()));
    }
    Ok(analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max))
}

/// Compares an analytic Jacobian against central finite differences at
/// `point` and returns the max relative error.
pub fn gradient_check<F, J>(f: F, jacobian: J, point: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
    J: Fn(&[f64]) -> Result<Matrix>,
{
    if point.iter().any(|v| v.is_nan()) {
        return Err(CapeError::NonDifferentiable("NaN in inputs".into()));
    }
    let numeric = finite_difference_jacobian(&f, point, step)?;
    let analytic = jacobian(point)?;
    max_relative_error(&analytic, &numeric)
}
