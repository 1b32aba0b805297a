//! Direct port of the numpy reference augmentation, kept structurally close
//! to the original (nested arrays, `uniform(low, high, size)` calls in source
//! order) and sharing nothing with [`crate::augment`] except the random
//! stream. Used as a cross-check oracle.

use crate::rng::RngStream;

/// `rng.uniform(low, high, size=[n])` flattened in C order.
fn uniform(rng: &mut RngStream, low: f64, high: f64, size: usize) -> Vec<f64> {
    (0..size).map(|_| low + (high - low) * rng.next_f64()).collect()
}

fn nanmean(row: &[f64]) -> f64 {
    let vals: Vec<f64> = row.iter().copied().filter(|v| !v.is_nan()).collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}

fn np_linspace(start: f64, stop: f64, num: usize) -> Vec<f64> {
    if num == 1 {
        return vec![start];
    }
    let div = (num - 1) as f64;
    let step = (stop - start) / div;
    let mut y: Vec<f64> = (0..num).map(|i| i as f64 * step + start).collect();
    y[num - 1] = stop;
    y
}

/// `augment_positions_1d(positions_1d, mean_normalize, augment, ...)`.
#[allow(clippy::too_many_arguments)]
pub fn augment_positions_1d(
    positions_1d: &[Vec<f64>],
    mean_normalize: bool,
    augment: bool,
    max_global_shift: f64,
    max_local_shift: f64,
    max_scale: f64,
    rng: &mut RngStream,
) -> Vec<Vec<f64>> {
    assert!(max_scale >= 1.0);
    let batch_size = positions_1d.len();
    let n_tokens = positions_1d[0].len();
    let mut positions_1d = positions_1d.to_vec();
    if mean_normalize {
        for row in positions_1d.iter_mut() {
            let m = nanmean(row);
            row.iter_mut().for_each(|v| *v -= m);
        }
    }
    if augment {
        let delta = uniform(rng, -max_global_shift, max_global_shift, batch_size);
        let delta_local = uniform(rng, -max_local_shift, max_local_shift, batch_size * n_tokens);
        let log_lambdas = uniform(rng, -max_scale.ln(), max_scale.ln(), batch_size);
        let mut new_positions = vec![vec![0.0; n_tokens]; batch_size];
        for b in 0..batch_size {
            for t in 0..n_tokens {
                new_positions[b][t] =
                    (positions_1d[b][t] + delta[b] + delta_local[b * n_tokens + t]) * log_lambdas[b].exp();
            }
        }
        new_positions
    } else {
        positions_1d
    }
}

/// Grid part of `CAPE_2d`: returns `(x, y)` shaped `[batch][n_patches][n_patches]`.
pub fn cape_2d_grid(
    n_patches: usize,
    batch_size: usize,
    augment: bool,
    max_global_shift: f64,
    max_local_shift: f64,
    max_scale: f64,
    rng: &mut RngStream,
) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>) {
    let lin = np_linspace(-1.0, 1.0, n_patches);
    let mut x = vec![vec![vec![0.0; n_patches]; n_patches]; batch_size];
    let mut y = vec![vec![vec![0.0; n_patches]; n_patches]; batch_size];
    for b in 0..batch_size {
        for i in 0..n_patches {
            for j in 0..n_patches {
                x[b][i][j] += lin[i];
                y[b][i][j] += lin[j];
            }
        }
    }
    if augment {
        let each = |a: &mut Vec<Vec<Vec<f64>>>, f: &dyn Fn(usize, usize, usize) -> f64, op: fn(&mut f64, f64)| {
            for (b, plane) in a.iter_mut().enumerate() {
                for (i, row) in plane.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        op(v, f(b, i, j));
                    }
                }
            }
        };
        let add: fn(&mut f64, f64) = |v, d| *v += d;
        let mul: fn(&mut f64, f64) = |v, d| *v *= d;
        let n2 = n_patches * n_patches;
        // global shift
        let gx = uniform(rng, -max_global_shift, max_global_shift, batch_size);
        each(&mut x, &|b, _, _| gx[b], add);
        let gy = uniform(rng, -max_global_shift, max_global_shift, batch_size);
        each(&mut y, &|b, _, _| gy[b], add);
        // local shift
        let lx = uniform(rng, -max_local_shift, max_local_shift, batch_size * n2);
        each(&mut x, &|b, i, j| lx[b * n2 + i * n_patches + j], add);
        let ly = uniform(rng, -max_local_shift, max_local_shift, batch_size * n2);
        each(&mut y, &|b, i, j| ly[b * n2 + i * n_patches + j], add);
        // scaling
        let lambdas: Vec<f64> = uniform(rng, -max_scale.ln(), max_scale.ln(), batch_size)
            .into_iter()
            .map(f64::exp)
            .collect();
        each(&mut x, &|b, _, _| lambdas[b], mul);
        each(&mut y, &|b, _, _| lambdas[b], mul);
    }
    (x, y)
}

/// Full `CAPE_2d`: `[batch][i][j][n_channels]` embeddings.
#[allow(clippy::too_many_arguments)]
pub fn cape_2d(
    n_patches: usize,
    batch_size: usize,
    augment: bool,
    n_channels: usize,
    max_global_shift: f64,
    max_local_shift: f64,
    max_scale: f64,
    rng: &mut RngStream,
) -> Vec<Vec<Vec<Vec<f64>>>> {
    let (x, y) = cape_2d_grid(n_patches, batch_size, augment, max_global_shift, max_local_shift, max_scale, rng);
    let half_channels = n_channels / 2;
    let rho: Vec<f64> = (1..=half_channels).map(|a| 10f64.powf(a as f64 / half_channels as f64)).collect();
    let w_x: Vec<f64> = (0..half_channels).map(|a| rho[a] * (a as f64).cos()).collect();
    let w_y: Vec<f64> = (0..half_channels).map(|a| rho[a] * (a as f64).sin()).collect();
    let mut out = vec![vec![vec![Vec::with_capacity(2 * half_channels); n_patches]; n_patches]; batch_size];
    for b in 0..batch_size {
        for i in 0..n_patches {
            for j in 0..n_patches {
                let phase: Vec<f64> = (0..half_channels)
                    .map(|c| std::f64::consts::PI * (w_x[c] * x[b][i][j] + w_y[c] * y[b][i][j]))
                    .collect();
                let cell = &mut out[b][i][j];
                cell.extend(phase.iter().map(|p| p.cos()));
                cell.extend(phase.iter().map(|p| p.sin()));
            }
        }
    }
    out
}
