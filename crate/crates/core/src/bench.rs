//! Timing of the attention layer with and without relative position offsets.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use crate::attention::{backward, forward, AttentionParams, PosMode};
use crate::error::{CapeError, Result};
use crate::matrix::Matrix;
use crate::rng::RngStream;

/// Lengths whose n×n working set would exceed this are reported as failures
/// instead of being run.
pub const MEMORY_BUDGET_BYTES: usize = 2 << 30;

pub const CSV_HEADER: &str = "mode,length,pass,seconds_mean,seconds_std,repeats,warmup,threads";

const PASS_LABEL: &str = "forward+backward";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub mode: PosMode,
    pub length: usize,
    pub pass: &'static str,
    pub seconds_mean: f64,
    pub seconds_std: f64,
    pub repeats: usize,
    pub warmup: usize,
    pub threads: usize,
    pub error: Option<String>,
}

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:.9e},{:.9e},{},{},{}",
            self.mode, self.length, self.pass, self.seconds_mean, self.seconds_std, self.repeats, self.warmup, self.threads
        )
    }
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_line());
    }
    out
}

fn working_set_bytes(length: usize, d_model: usize, context: usize) -> usize {
    let n = length;
    let reach = (2 * n).saturating_sub(1).min(2 * context + 1);
    // attention + score gradient, reachable offsets twice, ~10 n×d buffers
    8usize
        .saturating_mul(n)
        .saturating_mul((2 * n).saturating_add(2 * reach).saturating_add(10 * d_model))
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn time_one(params: &AttentionParams, tokens: &Matrix, grad: &Matrix) -> Result<f64> {
    let start = Instant::now();
    let cache = forward(black_box(tokens), None, None, params)?;
    let g = backward(&cache, grad, params)?;
    black_box(&g);
    Ok(start.elapsed().as_secs_f64())
}

/// Times a forward and backward pass of the vanilla (`nopos`) and `relpos`
/// variants of `params` for every length, `warmup` discarded runs then
/// `repeats` measured ones. `params` must carry a relpos table; the vanilla
/// variant reuses its weights. Runs on the calling thread only.
pub fn bench_layer(params: &AttentionParams, lengths: &[usize], repeats: usize, warmup: usize) -> Result<Vec<BenchRow>> {
    if repeats == 0 {
        return Err(CapeError::InvalidInput("repeats must be >= 1".into()));
    }
    if lengths.is_empty() || lengths.contains(&0) {
        return Err(CapeError::InvalidInput("lengths must be a non-empty list of positive integers".into()));
    }
    let table = params
        .relpos
        .clone()
        .ok_or_else(|| CapeError::InvalidInput("benchmark params need a relpos table".into()))?;
    let variants = [
        params.with_mode(PosMode::NoPos, None)?,
        params.with_mode(PosMode::RelPos, Some(table.clone()))?,
    ];
    let d = params.d_model;
    let mut rng = RngStream::new(0x0BE7_C4A5);
    let mut rows = Vec::with_capacity(lengths.len() * variants.len());
    for &length in lengths {
        let bytes = working_set_bytes(length, d, table.max_context());
        let inputs = if bytes > MEMORY_BUDGET_BYTES {
            Err(CapeError::OutOfMemory { length, bytes })
        } else {
            let tokens = Matrix::from_fn(length, d, |_, _| rng.symmetric(1.0));
            let grad = Matrix::from_fn(length, d, |_, _| rng.symmetric(1.0));
            Ok((tokens, grad))
        };
        for variant in &variants {
            let measured = inputs.as_ref().map_err(|e| e.to_string()).and_then(|(tokens, grad)| {
                let run = || time_one(variant, tokens, grad).map_err(|e| e.to_string());
                for _ in 0..warmup {
                    run()?;
                }
                (0..repeats).map(|_| run()).collect::<std::result::Result<Vec<f64>, String>>()
            });
            let (seconds_mean, seconds_std, error) = match measured {
                Ok(samples) => {
                    let (m, s) = mean_std(&samples);
                    (m, s, None)
                }
                Err(e) => (f64::NAN, f64::NAN, Some(e)),
            };
            rows.push(BenchRow {
                mode: variant.mode,
                length,
                pass: PASS_LABEL,
                seconds_mean,
                seconds_std,
                repeats,
                warmup,
                threads: 1,
                error,
            });
        }
    }
    Ok(rows)
}

/// `relpos / nopos` mean-time ratio per length, in table order.
pub fn slowdown(rows: &[BenchRow]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for r in rows.iter().filter(|r| r.mode == PosMode::RelPos) {
        if let Some(base) = rows.iter().find(|b| b.mode == PosMode::NoPos && b.length == r.length) {
            out.push((r.length, r.seconds_mean / base.seconds_mean));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(d: usize, ctx: usize) -> AttentionParams {
        AttentionParams::random(d, PosMode::RelPos, ctx, &mut RngStream::new(1)).unwrap()
    }

    #[test]
    fn table_shape() {
        let rows = bench_layer(&params(8, 4), &[3, 5, 7], 2, 1).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.error.is_none() && r.seconds_mean > 0.0));
        let csv = to_csv(&rows);
        assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(csv.lines().count(), 7);
        assert_eq!(slowdown(&rows).len(), 3);
    }

    #[test]
    fn single_sample_protocol() {
        let rows = bench_layer(&params(4, 2), &[4], 1, 0).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].seconds_std, 0.0);
        assert_eq!(rows[0].repeats, 1);
    }

    #[test]
    fn invalid_protocols() {
        let p = params(4, 2);
        assert!(bench_layer(&p, &[4], 0, 0).is_err());
        assert!(bench_layer(&p, &[], 1, 0).is_err());
        assert!(bench_layer(&p, &[0], 1, 0).is_err());
        let vanilla = AttentionParams::random(4, PosMode::NoPos, 1, &mut RngStream::new(0)).unwrap();
        assert!(bench_layer(&vanilla, &[4], 1, 0).is_err());
    }

    #[test]
    fn oversized_length_is_reported() {
        let rows = bench_layer(&params(4, 2), &[4, 1 << 20], 1, 0).unwrap();
        assert!(rows[0].error.is_none());
        assert!(rows[2].error.as_deref().unwrap().contains("allocation"));
        assert!(rows[3].seconds_mean.is_nan());
        assert!(rows[3].csv_line().contains("NaN"));
    }
}
