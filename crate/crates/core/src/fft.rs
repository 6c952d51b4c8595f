//! Multidimensional complex FFT on row-major `n^d` arrays.
//!
//! Transforms run one axis at a time. Non-contiguous axes are transposed
//! into a scratch block so that rustfft always sees contiguous lines.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use once_cell::sync::Lazy;
use rayon::prelude::*;
use rustfft::{Fft, FftDirection, FftPlanner};

type PlanMap = HashMap<(usize, bool), Arc<dyn Fft<f64>>>;

static PLANS: Lazy<Mutex<PlanMap>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn plan(n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    let mut plans = PLANS.lock().expect("fft plan cache poisoned");
    plans
        .entry((n, forward))
        .or_insert_with(|| {
            let dir = if forward {
                FftDirection::Forward
            } else {
                FftDirection::Inverse
            };
            FftPlanner::new().plan_fft(n, dir)
        })
        .clone()
}

/// Unnormalized DFT, `sum_j a_j exp(-2 pi i k j / n)` along every axis.
pub fn forward(data: &mut [Complex64], dim: usize, n: usize) {
    transform(data, dim, n, true);
}

/// Unnormalized inverse DFT, `sum_k a_k exp(+2 pi i k j / n)` along every axis.
pub fn inverse(data: &mut [Complex64], dim: usize, n: usize) {
    transform(data, dim, n, false);
}

fn transform(data: &mut [Complex64], dim: usize, n: usize, forward: bool) {
    debug_assert_eq!(data.len(), n.pow(dim as u32));
    let fft = plan(n, forward);
    for axis in 0..dim {
        let stride = n.pow((dim - 1 - axis) as u32);
        if stride == 1 {
            let scratch_len = fft.get_inplace_scratch_len();
            // Contiguous lines: batch them in large chunks.
            let chunk = (n * 256).min(data.len());
            data.par_chunks_mut(chunk).for_each_init(
                || vec![Complex64::default(); scratch_len],
                |scratch, lines| fft.process_with_scratch(lines, scratch),
            );
            continue;
        }
        let block = n * stride;
        let batch = COLUMN_BATCH.min(stride);
        let scratch_len = fft.get_inplace_scratch_len();
        data.par_chunks_mut(block).for_each_init(
            || {
                (
                    vec![Complex64::default(); n * batch],
                    vec![Complex64::default(); scratch_len],
                )
            },
            |(tmp, scratch), blk| {
                // blk is (n, stride) row-major; gather `batch` columns at a
                // time into contiguous lines.
                let mut j0 = 0;
                while j0 < stride {
                    let w = batch.min(stride - j0);
                    let lines = &mut tmp[..n * w];
                    for i in 0..n {
                        let row = &blk[i * stride + j0..i * stride + j0 + w];
                        for (j, v) in row.iter().enumerate() {
                            lines[j * n + i] = *v;
                        }
                    }
                    fft.process_with_scratch(lines, scratch);
                    for i in 0..n {
                        let row = &mut blk[i * stride + j0..i * stride + j0 + w];
                        for (j, v) in row.iter_mut().enumerate() {
                            *v = lines[j * n + i];
                        }
                    }
                    j0 += w;
                }
            },
        );
    }
}

const COLUMN_BATCH: usize = 32;

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft_1d(input: &[Complex64], sign: f64) -> Vec<Complex64> {
        let n = input.len();
        (0..n)
            .map(|k| {
                input
                    .iter()
                    .enumerate()
                    .map(|(j, a)| {
                        let ang = sign * 2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
                        a * Complex64::from_polar(1.0, ang)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_in_three_dimensions() {
        let n = 6;
        let dim = 3;
        let len = n * n * n;
        let input: Vec<Complex64> = (0..len)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut fast = input.clone();
        forward(&mut fast, dim, n);

        // Naive separable reference along each axis in turn.
        let mut slow = input;
        for axis in 0..dim {
            let stride = n.pow((dim - 1 - axis) as u32);
            let outer = len / (n * stride);
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * n * stride + s;
                    let line: Vec<Complex64> = (0..n).map(|i| slow[base + i * stride]).collect();
                    let out = naive_dft_1d(&line, -1.0);
                    for i in 0..n {
                        slow[base + i * stride] = out[i];
                    }
                }
            }
        }
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn inverse_undoes_forward_up_to_count() {
        let n = 8;
        let dim = 2;
        let input: Vec<Complex64> = (0..n * n)
            .map(|i| Complex64::new(i as f64, -(i as f64) * 0.5))
            .collect();
        let mut data = input.clone();
        forward(&mut data, dim, n);
        inverse(&mut data, dim, n);
        for (a, b) in data.iter().zip(&input) {
            assert!((a / (n * n) as f64 - b).norm() < 1e-12);
        }
    }
}
