//! Norm evaluation: Lebesgue norms by grid quadrature, Sobolev norms by
//! weighted Parseval sums, Besov norms by sharp dyadic Littlewood-Paley
//! blocks, and Hölder `C^{1-eps}` through its `B^{1-eps}_{inf,inf}` proxy.
//! Time-composite norms combine per-sample spatial norms by quadrature.

use crate::error::Error;
use crate::field::Field;
use crate::Result;
use rustfft::num_complex::Complex64;
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// Descriptor of a single norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    /// `L^p` in space; `p = f64::INFINITY` for the sup norm.
    Lp(f64),
    /// Inhomogeneous Sobolev `H^s`, weight `(1 + |2 pi n|^2)^s` on coefficients.
    SobolevH(f64),
    /// `B^s_{p,1}`: `sum_j 2^{js} ||Δ_j f||_{L^p}` over sharp annuli.
    Besov { s: f64, p: f64 },
    /// Hölder `C^alpha` (0 < alpha < 1) evaluated as `B^alpha_{inf,inf}`.
    Holder(f64),
}

impl NormKind {
    pub fn key(&self) -> String {
        match self {
            NormKind::Lp(p) if p.is_infinite() => "Linf".to_string(),
            NormKind::Lp(p) => format!("L{p}"),
            NormKind::SobolevH(s) => format!("H{s}"),
            NormKind::Besov { s, p } if p.is_infinite() => format!("B({s},inf,1)"),
            NormKind::Besov { s, p } => format!("B({s},{p},1)"),
            NormKind::Holder(a) => format!("C{a}"),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            NormKind::Lp(p) if p >= 1.0 => Ok(()),
            NormKind::SobolevH(s) if s >= 0.0 => Ok(()),
            NormKind::Besov { p, .. } if p >= 1.0 => Ok(()),
            NormKind::Holder(a) if a > 0.0 && a < 1.0 => Ok(()),
            _ => Err(Error::InvalidParam(format!("invalid norm descriptor {self:?}"))),
        }
    }
}

/// Map from norm descriptor key to value.
#[derive(Debug, Clone, Default)]
pub struct NormReport {
    entries: BTreeMap<String, f64>,
}

impl NormReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: f64) {
        assert!(value.is_finite() && value >= 0.0, "norm values must be finite and >= 0");
        self.entries.insert(key.into(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries.get(key).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &f64)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Pointwise Euclidean magnitude over components, in real space.
fn magnitude(f: &Field) -> Vec<f64> {
    let comps = f.to_real_all();
    let len = comps[0].len();
    (0..len)
        .map(|i| comps.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt())
        .collect()
}

/// `L^p` norm of a pointwise-magnitude sample vector with uniform weights.
pub fn lp_of_samples(mag: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return mag.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    }
    let h3 = 1.0 / mag.len() as f64;
    (mag.iter().map(|&v| v.abs().powf(p)).sum::<f64>() * h3).powf(1.0 / p)
}

/// Dyadic block index of an integer mode: `None` for the zero mode, else
/// the unique `j >= 1` with `2^{j-1} <= |n| < 2^j` (Euclidean modulus).
fn block_of(k: [i64; 3]) -> Option<u32> {
    let n2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
    if n2 == 0.0 {
        return None;
    }
    let r = n2.sqrt();
    let mut j = 1u32;
    while (1u64 << j) as f64 <= r {
        j += 1;
    }
    // now 2^{j-1} <= r < 2^j
    Some(j)
}

fn block_fields(f: &Field) -> Vec<(i32, Field)> {
    let grid = f.grid().clone();
    let jmax = {
        let kmax = (3.0f64).sqrt() * grid.kcap() as f64;
        let mut j = 1;
        while (1u64 << j) as f64 <= kmax {
            j += 1;
        }
        j
    };
    let mut out = Vec::new();
    for jb in -1i32..=(jmax as i32) {
        let mut comps: Vec<Vec<Complex64>> =
            (0..f.rank().comps()).map(|c| f.spectral(c).to_vec()).collect();
        let mut nonzero = false;
        for (idx, k) in grid.modes() {
            let keep = match block_of(k) {
                None => jb == -1,
                Some(j) => jb == j as i32,
            };
            for c in comps.iter_mut() {
                if !keep {
                    c[idx] = Complex64::default();
                } else if c[idx].norm_sqr() > 0.0 {
                    nonzero = true;
                }
            }
        }
        if nonzero {
            out.push((jb, Field::from_spectral(&grid, f.rank(), comps).unwrap()));
        }
    }
    out
}

/// Evaluate one spatial norm of a field.
pub fn compute_norm(f: &Field, kind: NormKind) -> Result<f64> {
    kind.validate()?;
    match kind {
        NormKind::Lp(p) => Ok(lp_of_samples(&magnitude(f), p)),
        NormKind::SobolevH(s) => {
            let mut acc = 0.0;
            for (idx, k) in f.grid().modes() {
                let k2 = (2.0 * PI) * (2.0 * PI) * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
                let w = (1.0 + k2).powf(s);
                for c in 0..f.rank().comps() {
                    acc += w * f.spectral(c)[idx].norm_sqr();
                }
            }
            Ok(acc.sqrt())
        }
        NormKind::Besov { s, p } => {
            let mut acc = 0.0;
            for (j, bf) in block_fields(f) {
                let w = if j <= 0 { 1.0 } else { (2.0f64).powf(j as f64 * s) };
                acc += w * lp_of_samples(&magnitude(&bf), p);
            }
            Ok(acc)
        }
        NormKind::Holder(alpha) => {
            let mut best = 0.0f64;
            for (j, bf) in block_fields(f) {
                let w = if j <= 0 { 1.0 } else { (2.0f64).powf(j as f64 * alpha) };
                best = best.max(w * lp_of_samples(&magnitude(&bf), f64::INFINITY));
            }
            Ok(best)
        }
    }
}

/// Combine per-sample values `g(t_i)` into `||g||_{L^p_t}` with trapezoid
/// weights on a (possibly non-uniform) increasing time grid.
pub fn lp_time(times: &[f64], values: &[f64], p: f64) -> f64 {
    assert_eq!(times.len(), values.len());
    if values.is_empty() {
        return 0.0;
    }
    if p.is_infinite() {
        return values.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    }
    let mut acc = 0.0;
    for i in 0..times.len() - 1 {
        let dt = times[i + 1] - times[i];
        acc += 0.5 * dt * (values[i].abs().powf(p) + values[i + 1].abs().powf(p));
    }
    acc.powf(1.0 / p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Rank;
    use crate::grid::Grid3;
    use crate::ops::random_field;

    #[test]
    fn l2_of_sine_is_parseval() {
        let grid = Grid3::new(16).unwrap();
        let n = grid.n();
        let s: Vec<f64> = (0..grid.len())
            .map(|idx| (2.0 * PI * (idx % n) as f64 / n as f64).sin())
            .collect();
        let f = Field::from_real(&grid, Rank::Scalar, &[s]).unwrap();
        let l2 = compute_norm(&f, NormKind::Lp(2.0)).unwrap();
        assert!((l2 - 0.5f64.sqrt()).abs() < 1e-12);
        // quadrature L2 agrees with coefficient l2
        assert!((l2 - f.l2()).abs() < 1e-12 * l2);
    }

    #[test]
    fn besov_l2_blocks_reassemble_parseval() {
        let grid = Grid3::new(32).unwrap();
        let f = random_field(&grid, Rank::Scalar, 3);
        // sum_j ||Δ_j f||_2^2 = ||f||_2^2 for sharp blocks
        let mut acc = 0.0;
        for (_, bf) in super::block_fields(&f) {
            let v = compute_norm(&bf, NormKind::Lp(2.0)).unwrap();
            acc += v * v;
        }
        let l2 = compute_norm(&f, NormKind::Lp(2.0)).unwrap();
        assert!((acc.sqrt() - l2).abs() < 1e-8 * l2);
    }

    #[test]
    fn invalid_descriptors_rejected() {
        let grid = Grid3::new(8).unwrap();
        let f = Field::zero(&grid, Rank::Scalar);
        assert!(compute_norm(&f, NormKind::Lp(0.5)).is_err());
        assert!(compute_norm(&f, NormKind::Holder(1.5)).is_err());
        assert!(compute_norm(&f, NormKind::SobolevH(-1.0)).is_err());
    }

    #[test]
    fn lp_time_trapezoid() {
        // integral of t over [0,1] with p=1
        let times: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let vals = times.clone();
        let v = lp_time(&times, &vals, 1.0);
        assert!((v - 0.5).abs() < 1e-12);
        assert!((lp_time(&times, &vals, f64::INFINITY) - 1.0).abs() < 1e-15);
    }
}
