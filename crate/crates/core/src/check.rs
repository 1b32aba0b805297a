//! Invariant suite behind `cape check`. Each check measures one property,
//! compares it against a fixed tolerance and reports the measurement.

use std::f64::consts::TAU;

use crate::attention::{
    attention_logits, encode, encoder_jacobian, gradient_check, AttentionParams, PosMode, RelposTable,
};
use crate::augment::{augment_grid_2d, augment_positions_1d, mean_normalize, AugmentationConfig, Mode};
use crate::embedding::{
    embed_1d, embed_1d_derivative, embed_2d, embed_2d_derivative, shift_apply, shift_apply_2d, AbsposTable,
    Embedding, FrequencySpec,
};
use crate::error::Result;
use crate::io::{component_pgm, EmbeddingFile, PositionFile};
use crate::matrix::{dot, Matrix};
use crate::positions::{
    image_positions, patches_per_side, plan_padding_free_batch, plan_padding_free_batch_quantized,
    shuffle_by_perturbed_duration, PositionGrid2D, PositionSet1D, ShuffleSpec,
};
use crate::reference;
use crate::rng::RngStream;

/// Deliberate defect for the negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Shift checks rotate by `-m` instead of `m`.
    FlipShiftSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    pub fn line(&self) -> String {
        format!(
            "{} {:<42} measured={:.3e} tol={:.1e}{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            if self.detail.is_empty() { String::new() } else { format!("  ({})", self.detail) }
        )
    }
}

/// `measured <= tolerance` passes.
fn at_most(name: &'static str, measured: f64, tolerance: f64) -> CheckReport {
    CheckReport { name, measured, tolerance, passed: measured <= tolerance, detail: String::new() }
}

/// Boolean property; measured is the count of violations.
fn holds(name: &'static str, violations: usize, detail: impl Into<String>) -> CheckReport {
    CheckReport { name, measured: violations as f64, tolerance: 0.0, passed: violations == 0, detail: detail.into() }
}

type CheckFn = fn(Fault) -> Result<CheckReport>;

const CHECKS: &[(&str, CheckFn)] = &[
    ("embed.unit_circle", unit_circle),
    ("embed.row_norm", row_norm),
    ("embed.nan_padding", nan_padding),
    ("shift.identity_text", shift_text),
    ("shift.identity_audio", shift_audio),
    ("shift.identity_image", shift_image),
    ("embed.translation_invariant_1d", translation_1d),
    ("embed.translation_invariant_2d", translation_2d),
    ("spec.audio_frequencies", audio_frequencies),
    ("spec.image_frequencies", image_frequencies),
    ("embed.jacobian", embedding_jacobians),
    ("abspos.modular_wrap", abspos_wrap),
    ("augment.inference_seed_free", inference_seed_free),
    ("augment.mean_normalize_idempotent", mean_idempotent),
    ("augment.order_preservation", order_preservation),
    ("augment.zero_mean_draws", zero_mean_draws),
    ("augment.oracle_equivalence", oracle_equivalence),
    ("augment.determinism", determinism),
    ("positions.padding_free_plan", padding_free_plan),
    ("positions.shuffle_partition", shuffle_partition),
    ("positions.resolution_independence", resolution_independence),
    ("attention.permutation_equivariance", permutation_equivariance),
    ("attention.positional_sensitivity", positional_sensitivity),
    ("attention.translation_invariant_logits", shift_invariant_logits),
    ("attention.softmax_rows", softmax_rows),
    ("attention.relpos_clipping", relpos_clipping),
    ("attention.encoder_jacobian", encoder_gradient),
    ("io.round_trip", io_round_trip),
    ("io.pgm_range", pgm_range),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

/// Runs every check whose name contains `filter` (all when `None`). A check
/// that errors is reported as a failure.
pub fn run_checks(filter: Option<&str>, fault: Fault) -> Vec<CheckReport> {
    CHECKS
        .iter()
        .filter(|(name, _)| filter.is_none_or(|f| name.contains(f)))
        .map(|(name, f)| {
            f(fault).unwrap_or_else(|e| CheckReport {
                name,
                measured: f64::NAN,
                tolerance: 0.0,
                passed: false,
                detail: format!("error: {e}"),
            })
        })
        .collect()
}

const SEED: u64 = 0xCA9E;

fn sample_embeddings() -> Result<Vec<Embedding>> {
    let mut rng = RngStream::new(SEED);
    let text: Vec<f64> = (0..50).map(|_| rng.symmetric(1e4)).collect();
    let audio: Vec<f64> = (0..50).map(|_| rng.uniform(0.0, 120.0)).collect();
    let cfg = AugmentationConfig::image_default(14, SEED);
    let grid = augment_grid_2d(14, 2, &cfg, &mut rng)?;
    Ok(vec![
        embed_1d(&text, &FrequencySpec::text(64)?)?,
        embed_1d(&audio, &FrequencySpec::audio(256)?)?,
        embed_2d(&grid, &FrequencySpec::image(768)?)?,
    ])
}

fn unit_circle(_: Fault) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    for e in sample_embeddings()? {
        for i in 0..e.n_tokens() {
            for k in 0..e.dim() / 2 {
                let (c, s) = e.pair(i, k);
                worst = worst.max((c * c + s * s - 1.0).abs());
            }
        }
    }
    Ok(at_most("embed.unit_circle", worst, 1e-12))
}

fn row_norm(_: Fault) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    for e in sample_embeddings()? {
        let want = (e.dim() as f64 / 2.0).sqrt();
        for i in 0..e.n_tokens() {
            worst = worst.max((dot(e.row(i), e.row(i)).sqrt() - want).abs());
        }
    }
    Ok(at_most("embed.row_norm", worst, 1e-9))
}

fn nan_padding(_: Fault) -> Result<CheckReport> {
    let e = embed_1d(&[1.0, f64::NAN, 2.0], &FrequencySpec::text(16)?)?;
    let bad = usize::from(!e.row(1).iter().all(|v| v.is_nan()))
        + usize::from(e.row(0).iter().any(|v| v.is_nan()))
        + usize::from(e.row(2).iter().any(|v| v.is_nan()));
    Ok(holds("embed.nan_padding", bad, ""))
}

fn signed(fault: Fault, m: f64) -> f64 {
    if fault == Fault::FlipShiftSign {
        -m
    } else {
        m
    }
}

fn shift_1d(name: &'static str, spec: &FrequencySpec, range: f64, fault: Fault) -> Result<CheckReport> {
    let mut rng = RngStream::new(SEED ^ 1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (p, m) = (rng.symmetric(range), rng.symmetric(range));
        let direct = embed_1d(&[p + m], spec)?;
        let rotated = shift_apply(&embed_1d(&[p], spec)?, signed(fault, m), spec)?;
        worst = worst.max(direct.matrix().max_abs_diff(rotated.matrix()));
    }
    Ok(at_most(name, worst, 1e-9))
}

fn shift_text(fault: Fault) -> Result<CheckReport> {
    shift_1d("shift.identity_text", &FrequencySpec::text(128)?, 1e4, fault)
}

fn shift_audio(fault: Fault) -> Result<CheckReport> {
    shift_1d("shift.identity_audio", &FrequencySpec::audio(128)?, 60.0, fault)
}

fn shift_image(fault: Fault) -> Result<CheckReport> {
    let spec = FrequencySpec::image(128)?;
    let mut rng = RngStream::new(SEED ^ 2);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (x, y, dx, dy) = (rng.symmetric(10.0), rng.symmetric(10.0), rng.symmetric(10.0), rng.symmetric(10.0));
        let at = |a, b| PositionGrid2D::new(1, 1, 1, vec![a], vec![b]);
        let direct = embed_2d(&at(x + dx, y + dy)?, &spec)?;
        let rotated = shift_apply_2d(&embed_2d(&at(x, y)?, &spec)?, signed(fault, dx), signed(fault, dy), &spec)?;
        worst = worst.max(direct.matrix().max_abs_diff(rotated.matrix()));
    }
    Ok(at_most("shift.identity_image", worst, 1e-9))
}

fn translation_1d(_: Fault) -> Result<CheckReport> {
    let mut rng = RngStream::new(SEED ^ 3);
    let mut worst: f64 = 0.0;
    for spec in [FrequencySpec::text(64)?, FrequencySpec::audio(64)?] {
        for _ in 0..200 {
            let (a, b, s) = (rng.symmetric(100.0), rng.symmetric(100.0), rng.symmetric(100.0));
            let e = embed_1d(&[a, b, a + s, b + s], &spec)?;
            worst = worst.max((dot(e.row(0), e.row(1)) - dot(e.row(2), e.row(3))).abs());
        }
    }
    Ok(at_most("embed.translation_invariant_1d", worst, 1e-9))
}

fn translation_2d(_: Fault) -> Result<CheckReport> {
    let spec = FrequencySpec::image(128)?;
    let mut rng = RngStream::new(SEED ^ 4);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let c: Vec<f64> = (0..6).map(|_| rng.symmetric(2.0)).collect();
        let (dx, dy) = (c[4], c[5]);
        let g = PositionGrid2D::new(1, 4, 1, vec![c[0], c[2], c[0] + dx, c[2] + dx], vec![c[1], c[3], c[1] + dy, c[3] + dy])?;
        let e = embed_2d(&g, &spec)?;
        worst = worst.max((dot(e.row(0), e.row(1)) - dot(e.row(2), e.row(3))).abs());
    }
    Ok(at_most("embed.translation_invariant_2d", worst, 1e-9))
}

fn audio_frequencies(_: Fault) -> Result<CheckReport> {
    let mut bad = 0;
    for dim in [2, 64, 256, 768] {
        let spec = FrequencySpec::audio(dim)?;
        let w = spec.omega().unwrap_or(&[]);
        bad += usize::from(w.first() != Some(&30.0));
        bad += w.windows(2).filter(|p| !(p[0] > p[1])).count();
    }
    Ok(holds("spec.audio_frequencies", bad, "omega[0] = 30 and strictly decreasing"))
}

fn image_frequencies(_: Fault) -> Result<CheckReport> {
    let mut bad = 0;
    for dim in [4, 64, 384, 720] {
        let spec = FrequencySpec::image(dim)?;
        let half = spec.half();
        let (wx, wy) = spec.planar_frequencies().unwrap_or((&[], &[]));
        let rho: Vec<f64> = wx.iter().zip(wy).map(|(a, b)| a.hypot(*b)).collect();
        bad += rho.windows(2).filter(|p| !(p[0] < p[1])).count();
        bad += usize::from((rho[0] - 10f64.powf(1.0 / half as f64)).abs() > 1e-12);
        bad += usize::from((rho[half - 1] - 10.0).abs() > 1e-12);
        let mut angles: Vec<f64> = (0..half).map(|j| (j as f64).rem_euclid(TAU)).collect();
        angles.sort_by(f64::total_cmp);
        bad += angles.windows(2).filter(|p| p[1] - p[0] < 1e-9).count();
    }
    Ok(holds("spec.image_frequencies", bad, "magnitudes increase to 10, distinct angles"))
}

fn embedding_jacobians(_: Fault) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    for spec in [FrequencySpec::text(32)?, FrequencySpec::audio(32)?] {
        let point = [1.7, -0.4, 3.25];
        let f = |p: &[f64]| Ok(embed_1d(p, &spec)?.into_matrix().into_vec());
        let jac = |p: &[f64]| -> Result<Matrix> {
            let d = embed_1d_derivative(p, &spec)?;
            let k = spec.dim();
            Ok(Matrix::from_fn(p.len() * k, p.len(), |r, c| if r / k == c { d.row(c)[r % k] } else { 0.0 }))
        };
        worst = worst.max(gradient_check(f, jac, &point, 1e-5)?);
    }
    let spec = FrequencySpec::image(32)?;
    let point = [0.3, -0.8, 0.9, 0.1];
    let grid_of = |p: &[f64]| PositionGrid2D::new(1, 2, 1, vec![p[0], p[2]], vec![p[1], p[3]]);
    let f = |p: &[f64]| Ok(embed_2d(&grid_of(p)?, &spec)?.into_matrix().into_vec());
    let jac = |p: &[f64]| -> Result<Matrix> {
        let (dx, dy) = embed_2d_derivative(&grid_of(p)?, &spec)?;
        let k = spec.dim();
        Ok(Matrix::from_fn(2 * k, 4, |r, c| {
            let token = r / k;
            match (c / 2 == token, c % 2) {
                (true, 0) => dx.row(token)[r % k],
                (true, _) => dy.row(token)[r % k],
                _ => 0.0,
            }
        }))
    };
    worst = worst.max(gradient_check(f, jac, &point, 1e-5)?);
    Ok(at_most("embed.jacobian", worst, 1e-4))
}

fn abspos_wrap(_: Fault) -> Result<CheckReport> {
    let mut rng = RngStream::new(SEED ^ 5);
    let n = 17;
    let table = AbsposTable::new(Matrix::from_fn(n, 8, |_, _| rng.symmetric(1.0)))?;
    let bad = [0u64, 5, 16, 17, 2 * 17 + 3, 1_000_003]
        .iter()
        .filter(|&&t| table.lookup(t) != table.lookup(t % n as u64))
        .count();
    Ok(holds("abspos.modular_wrap", bad, ""))
}

fn positions_batch(rng: &mut RngStream, batch: usize, len: usize, pad: bool) -> Result<PositionSet1D> {
    let mut rows = Vec::with_capacity(batch);
    for _ in 0..batch {
        let valid = if pad { 1 + rng.below(len) } else { len };
        rows.push((0..len).map(|t| if t < valid { t as f64 + rng.symmetric(0.25) } else { f64::NAN }).collect());
    }
    PositionSet1D::from_rows(&rows)
}

fn bit_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn inference_seed_free(_: Fault) -> Result<CheckReport> {
    let mut rng = RngStream::new(SEED ^ 6);
    let p = positions_batch(&mut rng, 3, 9, true)?;
    let mut cfg = AugmentationConfig::inference(true);
    cfg.max_global_shift = 5.0;
    cfg.max_scale = 2.0;
    let a = augment_positions_1d(&p, &cfg, &mut RngStream::new(1))?;
    let b = augment_positions_1d(&p, &cfg, &mut RngStream::new(2))?;
    let g1 = augment_grid_2d(5, 2, &cfg, &mut RngStream::new(1))?;
    let g2 = augment_grid_2d(5, 2, &cfg, &mut RngStream::new(2))?;
    let bad = usize::from(!bit_equal(a.as_slice(), b.as_slice())) + usize::from(g1 != g2);
    Ok(holds("augment.inference_seed_free", bad, ""))
}

fn mean_idempotent(_: Fault) -> Result<CheckReport> {
    let mut rng = RngStream::new(SEED ^ 7);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let p = positions_batch(&mut rng, 4, 20, true)?;
        let once = mean_normalize(&p)?;
        let twice = mean_normalize(&once)?;
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            if !a.is_nan() {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(at_most("augment.mean_normalize_idempotent", worst, 1e-12))
}

fn order_preservation(_: Fault) -> Result<CheckReport> {
    let mut rng = RngStream::new(SEED ^ 8);
    let mut bad = 0;
    for _ in 0..200 {
        let gap = rng.uniform(0.01, 2.0);
        let len = 2 + rng.below(40);
        let start = rng.symmetric(50.0);
        let p = PositionSet1D::single((0..len).map(|i| start + i as f64 * gap).collect())?;
        let cfg = AugmentationConfig {
            max_global_shift: rng.uniform(0.0, 100.0),
            // strictly below g/2 so the gap stays positive after rounding
            max_local_shift: 0.4999 * gap,
            max_scale: rng.uniform(1.0, 3.0),
            mean_normalize: rng.next_f64() < 0.5,
            mode: Mode::Train,
            seed: 0,
        };
        let out = augment_positions_1d(&p, &cfg, &mut rng)?;
        bad += out.as_slice().windows(2).filter(|w| !(w[0] < w[1])).count();
    }
    Ok(holds("augment.order_preservation", bad, "εmax < g/2"))
}

fn zero_mean_draws(_: Fault) -> Result<CheckReport> {
    // Δ ~ U(-a, a) has σ = a/√3; same for log λ with a = ln λmax.
    let n = 100_000;
    let cfg = AugmentationConfig {
        max_global_shift: 3.0,
        max_local_shift: 0.0,
        max_scale: 2.0,
        mean_normalize: false,
        mode: Mode::Train,
        seed: 0,
    };
    let p = PositionSet1D::new(n, 1, vec![1.0; n])?;
    let out = augment_positions_1d(&p, &cfg, &mut RngStream::new(SEED ^ 9))?;
    // Replay the same stream to recover Δ and log λ separately.
    let mut r = RngStream::new(SEED ^ 9);
    let deltas: Vec<f64> = (0..n).map(|_| r.symmetric(3.0)).collect();
    (0..n).for_each(|_| {
        r.symmetric(0.0);
    });
    let logs: Vec<f64> = (0..n).map(|_| r.symmetric(2f64.ln())).collect();
    let replay_err = (0..n)
        .map(|b| (out.as_slice()[b] - (1.0 + deltas[b]) * logs[b].exp()).abs())
        .fold(0.0, f64::max);
    let z = |xs: &[f64], bound: f64| {
        let mean = xs.iter().sum::<f64>() / n as f64;
        mean.abs() / (3.0 * bound / 3f64.sqrt() / (n as f64).sqrt())
    };
    let worst = z(&deltas, 3.0).max(z(&logs, 2f64.ln()));
    let mut report = at_most("augment.zero_mean_draws", worst, 1.0);
    report.passed &= replay_err < 1e-12;
    report.detail = "|mean| / (3σ/√n)".into();
    Ok(report)
}

fn oracle_equivalence(_: Fault) -> Result<CheckReport> {
    let mut cfg_rng = RngStream::new(SEED ^ 10);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let cfg = AugmentationConfig {
            max_global_shift: cfg_rng.uniform(0.0, 10.0),
            max_local_shift: cfg_rng.uniform(0.0, 1.0),
            max_scale: cfg_rng.uniform(1.0, 3.0),
            mean_normalize: trial % 2 == 0,
            mode: if trial % 7 == 3 { Mode::Inference } else { Mode::Train },
            seed: cfg_rng.next_u64(),
        };
        let batch = 1 + cfg_rng.below(4);
        let len = 1 + cfg_rng.below(12);
        let p = positions_batch(&mut cfg_rng, batch, len, true)?;
        let ours = augment_positions_1d(&p, &cfg, &mut RngStream::new(cfg.seed))?;
        let rows: Vec<Vec<f64>> = p.rows().map(<[f64]>::to_vec).collect();
        let theirs = reference::augment_positions_1d(
            &rows,
            cfg.mean_normalize,
            cfg.is_train(),
            cfg.max_global_shift,
            cfg.max_local_shift,
            cfg.max_scale,
            &mut RngStream::new(cfg.seed),
        );
        for (a, b) in ours.as_slice().iter().zip(theirs.concat()) {
            if a.is_nan() != b.is_nan() {
                worst = f64::INFINITY;
            } else if !a.is_nan() {
                worst = worst.max((a - b).abs());
            }
        }
        let side = 1 + cfg_rng.below(8);
        let ours = augment_grid_2d(side, batch, &cfg, &mut RngStream::new(cfg.seed))?;
        let (x, y) = reference::cape_2d_grid(
            side,
            batch,
            cfg.is_train(),
            cfg.max_global_shift,
            cfg.max_local_shift,
            cfg.max_scale,
            &mut RngStream::new(cfg.seed),
        );
        let flat = |a: Vec<Vec<Vec<f64>>>| a.into_iter().flatten().flatten().collect::<Vec<f64>>();
        for (a, b) in ours.x().iter().chain(ours.y()).zip(flat(x).into_iter().chain(flat(y))) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(at_most("augment.oracle_equivalence", worst, 1e-12))
}

fn determinism(_: Fault) -> Result<CheckReport> {
    let cfg = AugmentationConfig::image_default(14, 42);
    let p = positions_batch(&mut RngStream::new(3), 3, 10, true)?;
    let mut bad = 0;
    let run1 = augment_positions_1d(&p, &cfg, &mut RngStream::new(cfg.seed))?;
    let run2 = augment_positions_1d(&p, &cfg, &mut RngStream::new(cfg.seed))?;
    bad += usize::from(!bit_equal(run1.as_slice(), run2.as_slice()));
    let g1 = augment_grid_2d(14, 2, &cfg, &mut RngStream::new(cfg.seed))?;
    let g2 = augment_grid_2d(14, 2, &cfg, &mut RngStream::new(cfg.seed))?;
    bad += usize::from(!bit_equal(g1.x(), g2.x()) || !bit_equal(g1.y(), g2.y()));
    Ok(holds("augment.determinism", bad, ""))
}

fn padding_free_plan(_: Fault) -> Result<CheckReport> {
    let mut bad = 0;
    let mut rng = RngStream::new(SEED ^ 11);
    let plan = plan_padding_free_batch(&[8.0, 10.0, 12.0], 0.010, &mut rng)?;
    bad += usize::from(plan.target_frames != 1000);
    bad += plan.hops.iter().zip([0.008, 0.010, 0.012]).filter(|(h, w)| (*h - w).abs() > 1e-15).count();
    for _ in 0..20 {
        let durations: Vec<f64> = (0..5).map(|_| rng.uniform(2.0, 20.0)).collect();
        let plan = plan_padding_free_batch_quantized(&durations, 0.010, 16_000, &mut rng)?;
        let kept = plan.kept_counts();
        let min_raw = plan.keep_masks.iter().map(Vec::len).min().unwrap_or(0);
        bad += kept.iter().filter(|&&k| k != min_raw).count();
        for s in 0..durations.len() {
            let ts = plan.kept_timestamps(s);
            bad += ts.iter().filter(|t| **t >= durations[s] + 1e-9).count();
        }
    }
    Ok(holds("positions.padding_free_plan", bad, "equal kept counts, original timestamps"))
}

fn shuffle_partition(_: Fault) -> Result<CheckReport> {
    let mut rng = RngStream::new(SEED ^ 12);
    let durations: Vec<f64> = (0..1001).map(|_| rng.uniform(1.0, 30.0)).collect();
    let batches = shuffle_by_perturbed_duration(&durations, &ShuffleSpec::new(16), &mut rng)?;
    let mut seen = vec![0usize; durations.len()];
    batches.iter().flatten().for_each(|&i| seen[i] += 1);
    let bad = seen.iter().filter(|&&c| c != 1).count();
    Ok(holds("positions.shuffle_partition", bad, ""))
}

fn resolution_independence(_: Fault) -> Result<CheckReport> {
    let mut bad = 0;
    for (res, want) in [(160, 10), (224, 14), (384, 24), (672, 42)] {
        let p = patches_per_side(res, 16)?;
        bad += usize::from(p != want);
        let g = image_positions(p, p)?;
        let (lo, hi) = g.x().iter().fold((f64::MAX, f64::MIN), |(l, h), v| (l.min(*v), h.max(*v)));
        bad += usize::from(lo != -1.0 || hi != 1.0);
    }
    Ok(holds("positions.resolution_independence", bad, "patch grid spans [-1, 1] at every resolution"))
}

/// Every permutation of `0..n`, lexicographic.
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

fn permutation_equivariance(_: Fault) -> Result<CheckReport> {
    let mut rng = RngStream::new(SEED ^ 13);
    let d = 8;
    let params = AttentionParams::random(d, PosMode::NoPos, 1, &mut rng)?;
    let mut bad = 0;
    let mut total = 0;
    let mut trial = |perm: &[usize], tokens: &Matrix, out: &Matrix| -> Result<()> {
        let permuted = encode(&tokens.permute_rows(perm), None, None, &params)?;
        total += 1;
        bad += usize::from(!bit_equal(permuted.as_slice(), out.permute_rows(perm).as_slice()));
        Ok(())
    };
    for n in 1..=6 {
        let tokens = Matrix::from_fn(n, d, |_, _| rng.symmetric(1.0));
        let out = encode(&tokens, None, None, &params)?;
        for perm in all_permutations(n) {
            trial(&perm, &tokens, &out)?;
        }
    }
    let tokens = Matrix::from_fn(64, d, |_, _| rng.symmetric(1.0));
    let out = encode(&tokens, None, None, &params)?;
    for _ in 0..100 {
        let mut perm: Vec<usize> = (0..64).collect();
        rng.shuffle(&mut perm);
        trial(&perm, &tokens, &out)?;
    }
    Ok(holds("attention.permutation_equivariance", bad, format!("{total} permutations, bitwise")))
}

fn positional_sensitivity(_: Fault) -> Result<CheckReport> {
    let mut rng = RngStream::new(SEED ^ 14);
    let d = 16;
    let n = 6;
    let params = AttentionParams::random(d, PosMode::AddPos, 1, &mut rng)?;
    let spec = FrequencySpec::text(d)?;
    let pos = embed_1d(&(0..n).map(|i| i as f64).collect::<Vec<_>>(), &spec)?;
    let tokens = Matrix::from_fn(n, d, |_, _| rng.symmetric(1.0));
    let out = encode(&tokens, Some(&pos), None, &params)?;
    let perm = [1, 0, 3, 2, 5, 4];
    let permuted = encode(&tokens.permute_rows(&perm), Some(&pos), None, &params)?;
    let diff = permuted.max_abs_diff(&out.permute_rows(&perm));
    Ok(CheckReport {
        name: "attention.positional_sensitivity",
        measured: diff,
        tolerance: 1e-6,
        passed: diff > 1e-6,
        detail: "must exceed tolerance".into(),
    })
}

/// Logits from pure embeddings: identity projections, zero tokens.
pub fn embedding_logits(emb: &Embedding) -> Result<Matrix> {
    let d = emb.dim();
    let params = AttentionParams {
        d_model: d,
        w_q: Matrix::identity(d),
        w_k: Matrix::identity(d),
        w_v: Matrix::identity(d),
        w_o: Matrix::identity(d),
        mode: PosMode::AddPos,
        relpos: None,
    };
    attention_logits(emb.matrix(), &params)
}

fn shift_invariant_logits(_: Fault) -> Result<CheckReport> {
    let mut rng = RngStream::new(SEED ^ 15);
    let mut worst: f64 = 0.0;
    for spec in [FrequencySpec::text(64)?, FrequencySpec::audio(64)?] {
        let p: Vec<f64> = (0..10).map(|_| rng.symmetric(50.0)).collect();
        let s = rng.symmetric(500.0);
        let shifted: Vec<f64> = p.iter().map(|v| v + s).collect();
        let a = embedding_logits(&embed_1d(&p, &spec)?)?;
        let b = embedding_logits(&embed_1d(&shifted, &spec)?)?;
        worst = worst.max(a.max_abs_diff(&b));
    }
    let spec = FrequencySpec::image(64)?;
    let grid = augment_grid_2d(4, 1, &AugmentationConfig::image_default(4, 0), &mut rng)?;
    let (dx, dy) = (rng.symmetric(3.0), rng.symmetric(3.0));
    let moved = PositionGrid2D::new(
        1,
        grid.nx(),
        grid.ny(),
        grid.x().iter().map(|v| v + dx).collect(),
        grid.y().iter().map(|v| v + dy).collect(),
    )?;
    let a = embedding_logits(&embed_2d(&grid, &spec)?)?;
    let b = embedding_logits(&embed_2d(&moved, &spec)?)?;
    worst = worst.max(a.max_abs_diff(&b));
    Ok(at_most("attention.translation_invariant_logits", worst, 1e-9))
}

fn softmax_rows(_: Fault) -> Result<CheckReport> {
    let mut rng = RngStream::new(SEED ^ 16);
    let mut worst: f64 = 0.0;
    for mode in [PosMode::NoPos, PosMode::RelPos] {
        let params = AttentionParams::random(8, mode, 4, &mut rng)?;
        let tokens = Matrix::from_fn(20, 8, |_, _| rng.symmetric(3.0));
        let cache = crate::attention::forward(&tokens, None, None, &params)?;
        for i in 0..20 {
            worst = worst.max((cache.attention().row(i).iter().sum::<f64>() - 1.0).abs());
        }
    }
    Ok(at_most("attention.softmax_rows", worst, 1e-12))
}

fn relpos_clipping(_: Fault) -> Result<CheckReport> {
    let table = RelposTable::random(5, 8, &mut RngStream::new(SEED ^ 17))?;
    let bad = (6..40)
        .filter(|&d| table.offset(d) != table.offset(5) || table.offset(-d) != table.offset(-5))
        .count();
    Ok(holds("attention.relpos_clipping", bad, ""))
}

fn encoder_gradient(_: Fault) -> Result<CheckReport> {
    let mut rng = RngStream::new(SEED ^ 18);
    let (n, d) = (3, 8);
    let params = AttentionParams::random(d, PosMode::AddPos, 1, &mut rng)?;
    let pos = embed_1d(&[0.0, 1.0, 2.0], &FrequencySpec::text(d)?)?;
    let tokens = Matrix::from_fn(n, d, |_, _| rng.symmetric(1.0));
    let f = |x: &[f64]| Ok(encode(&Matrix::from_vec(n, d, x.to_vec())?, Some(&pos), None, &params)?.into_vec());
    let jac = |x: &[f64]| encoder_jacobian(&Matrix::from_vec(n, d, x.to_vec())?, Some(&pos), &params);
    let err = gradient_check(f, jac, tokens.as_slice(), 1e-5)?;
    Ok(at_most("attention.encoder_jacobian", err, 1e-4))
}

fn io_round_trip(_: Fault) -> Result<CheckReport> {
    let mut bad = 0;
    for e in sample_embeddings()? {
        let file = EmbeddingFile { modality: crate::embedding::Modality::Text, embedding: e };
        let text = file.to_text();
        let back = EmbeddingFile::from_text(&text)?;
        bad += usize::from(back.to_text() != text);
        bad += usize::from(!bit_equal(back.embedding.matrix().as_slice(), file.embedding.matrix().as_slice()));
    }
    let p = positions_batch(&mut RngStream::new(SEED), 3, 7, true)?;
    let text = PositionFile::OneD(p).to_text();
    bad += usize::from(PositionFile::from_text(&text)?.to_text() != text);
    Ok(holds("io.round_trip", bad, "save→load→save byte-identical"))
}

fn pgm_range(_: Fault) -> Result<CheckReport> {
    let spec = FrequencySpec::image(64)?;
    let g = image_positions(14, 14)?;
    let e = embed_2d(&g, &spec)?;
    let mut bad = 0;
    for c in 0..64 {
        let pgm = component_pgm(&e, 14, 14, c)?;
        let values: Vec<i64> = pgm.split_whitespace().skip(4).map(|v| v.parse().unwrap_or(-1)).collect();
        bad += usize::from(values.len() != 196);
        for (t, v) in values.iter().enumerate() {
            let (iy, ix) = (t / 14, t % 14);
            let want = (255.0 * (e.row(ix * 14 + iy)[c] + 1.0) / 2.0).round() as i64;
            bad += usize::from(!(0..=255).contains(v) || *v != want);
        }
    }
    Ok(holds("io.pgm_range", bad, "values in [0, 255], round(255(v+1)/2)"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes() {
        let reports = run_checks(None, Fault::None);
        assert_eq!(reports.len(), CHECKS.len());
        for r in &reports {
            assert!(r.passed, "{}", r.line());
        }
    }

    #[test]
    fn negative_control_fails() {
        let reports = run_checks(Some("shift"), Fault::FlipShiftSign);
        assert_eq!(reports.len(), 3);
        assert!(reports.iter().all(|r| !r.passed));
    }

    #[test]
    fn filter_selects_by_substring() {
        let names: Vec<_> = run_checks(Some("shift."), Fault::None).into_iter().map(|r| r.name).collect();
        assert_eq!(names, ["shift.identity_text", "shift.identity_audio", "shift.identity_image"]);
    }

    #[test]
    fn permutation_counts() {
        assert_eq!(all_permutations(0).len(), 1);
        assert_eq!(all_permutations(4).len(), 24);
        assert_eq!(all_permutations(6).len(), 720);
    }
}
