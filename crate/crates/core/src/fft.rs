//! Minimal 3D FFT on flat complex buffers, layout `[i3][i2][i1]` with `i1`
//! fastest. Forward transforms divide by `N^3` so buffers hold genuine
//! Fourier coefficients: `f(x) = sum_n fhat(n) exp(2*pi*i n.x)`.
//!
//! Strided axes are handled by blocked transposes so every 1D transform
//! runs on contiguous lines. Lines are processed in parallel with disjoint
//! writes; reduction order is fixed, so results are bit-reproducible.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

static PLAN_CACHE: Mutex<Option<HashMap<usize, Arc<Plans>>>> = Mutex::new(None);

fn plans(n: usize) -> Arc<Plans> {
    let mut guard = PLAN_CACHE.lock().unwrap();
    let cache = guard.get_or_insert_with(HashMap::new);
    cache
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Plans {
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
            })
        })
        .clone()
}

const TILE: usize = 16;

/// Swap the two inner axes of every slab: `[i3][i2][i1] -> [i3][i1][i2]`.
fn transpose_inner(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    let n2 = n * n;
    dst.par_chunks_mut(n2).zip(src.par_chunks(n2)).for_each(|(d, s)| {
        for b2 in (0..n).step_by(TILE) {
            for b1 in (0..n).step_by(TILE) {
                for i2 in b2..(b2 + TILE).min(n) {
                    for i1 in b1..(b1 + TILE).min(n) {
                        d[i1 * n + i2] = s[i2 * n + i1];
                    }
                }
            }
        }
    });
}

/// Swap the outer and inner axes: `[i3][i2][i1] -> [i1][i2][i3]`.
fn transpose_outer(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    let n2 = n * n;
    // parallelize over i1-tiles of the destination (disjoint writes)
    let tiles: Vec<usize> = (0..n).step_by(TILE).collect();
    let dst_ptr = SendPtr(dst.as_mut_ptr());
    tiles.par_iter().for_each(|&b1| {
        let dst_ptr = &dst_ptr;
        for b3 in (0..n).step_by(TILE) {
            for i2 in 0..n {
                for i1 in b1..(b1 + TILE).min(n) {
                    let drow = i1 * n2 + i2 * n;
                    for i3 in b3..(b3 + TILE).min(n) {
                        unsafe {
                            *dst_ptr.0.add(drow + i3) = src[i3 * n2 + i2 * n + i1];
                        }
                    }
                }
            }
        }
    });
}

fn fft_lines(data: &mut [Complex64], n: usize, fft: &Arc<dyn Fft<f64>>) {
    data.par_chunks_mut(n).for_each(|line| fft.process(line));
}

struct SendPtr(*mut Complex64);
unsafe impl Sync for SendPtr {}

fn transform(data: &mut [Complex64], n: usize, fft: &Arc<dyn Fft<f64>>) {
    let mut scratch = vec![Complex64::default(); data.len()];
    // axis 1 (contiguous)
    fft_lines(data, n, fft);
    // axis 2 via inner transpose
    transpose_inner(data, &mut scratch, n);
    fft_lines(&mut scratch, n, fft);
    transpose_inner(&scratch, data, n);
    // axis 3 via outer transpose
    transpose_outer(data, &mut scratch, n);
    fft_lines(&mut scratch, n, fft);
    transpose_outer(&scratch, data, n);
}

/// In-place forward transform (real samples -> Fourier coefficients).
pub fn forward(data: &mut [Complex64], n: usize) {
    assert_eq!(data.len(), n * n * n);
    let p = plans(n);
    transform(data, n, &p.forward);
    let scale = 1.0 / (n * n * n) as f64;
    data.par_iter_mut().for_each(|v| *v *= scale);
}

/// In-place inverse transform (Fourier coefficients -> samples).
pub fn inverse(data: &mut [Complex64], n: usize) {
    assert_eq!(data.len(), n * n * n);
    let p = plans(n);
    transform(data, n, &p.inverse);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_single_mode() {
        let n = 8;
        let mut data = vec![Complex64::default(); n * n * n];
        // f(x) = sin(2 pi x1), x1 the fastest axis
        for i3 in 0..n {
            for i2 in 0..n {
                for i1 in 0..n {
                    let x = i1 as f64 / n as f64;
                    data[(i3 * n + i2) * n + i1] =
                        Complex64::new((2.0 * std::f64::consts::PI * x).sin(), 0.0);
                }
            }
        }
        let orig = data.clone();
        forward(&mut data, n);
        let idx_p = 1;
        let idx_m = n - 1;
        assert!((data[idx_p] - Complex64::new(0.0, -0.5)).norm() < 1e-12);
        assert!((data[idx_m] - Complex64::new(0.0, 0.5)).norm() < 1e-12);
        let energy: f64 = data.iter().map(|c| c.norm_sqr()).sum();
        assert!((energy - 0.5).abs() < 1e-12);
        inverse(&mut data, n);
        for (a, b) in data.iter().zip(orig.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn axes_are_distinguished() {
        // put distinct single modes on each axis and verify their slots
        let n = 16;
        let mut data = vec![Complex64::default(); n * n * n];
        for i3 in 0..n {
            for i2 in 0..n {
                for i1 in 0..n {
                    let x1 = i1 as f64 / n as f64;
                    let x2 = i2 as f64 / n as f64;
                    let x3 = i3 as f64 / n as f64;
                    let tau = 2.0 * std::f64::consts::PI;
                    data[(i3 * n + i2) * n + i1] = Complex64::new(
                        (tau * x1).cos() + 2.0 * (tau * 2.0 * x2).cos() + 3.0 * (tau * 3.0 * x3).cos(),
                        0.0,
                    );
                }
            }
        }
        forward(&mut data, n);
        let at = |k1: usize, k2: usize, k3: usize| data[(k3 * n + k2) * n + k1].re;
        assert!((at(1, 0, 0) - 0.5).abs() < 1e-12);
        assert!((at(0, 2, 0) - 1.0).abs() < 1e-12);
        assert!((at(0, 0, 3) - 1.5).abs() < 1e-12);
    }
}
