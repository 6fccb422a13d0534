//! Periodic fields on `T^3` with Fourier coefficients as the canonical
//! representation and real-space samples as a derived view.

use crate::error::Error;
use crate::fft;
use crate::grid::Grid3;
use crate::Result;
use rustfft::num_complex::Complex64;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// Cached per-resolution index tables: the flat index of `-n` for every
/// mode, and the dealiasing keep-mask.
struct GridTables {
    neg: Vec<u32>,
    keep: Vec<bool>,
}

static TABLES: Mutex<Option<HashMap<usize, Arc<GridTables>>>> = Mutex::new(None);

fn tables(grid: &Grid3) -> Arc<GridTables> {
    let mut guard = TABLES.lock().unwrap();
    let cache = guard.get_or_insert_with(HashMap::new);
    cache
        .entry(grid.n())
        .or_insert_with(|| {
            let cap = grid.kcap() as i64;
            let mut neg = vec![0u32; grid.len()];
            let mut keep = vec![false; grid.len()];
            for (idx, k) in grid.modes() {
                neg[idx] = grid.mode_index([-k[0], -k[1], -k[2]]) as u32;
                keep[idx] = k[0].abs() <= cap && k[1].abs() <= cap && k[2].abs() <= cap;
            }
            Arc::new(GridTables { neg, keep })
        })
        .clone()
}

/// Tensorial rank of a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rank {
    Scalar,
    Vector,
    Tensor,
}

impl Rank {
    #[inline]
    pub fn comps(self) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => 3,
            Rank::Tensor => 9,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Rank::Scalar => "scalar",
            Rank::Vector => "vector",
            Rank::Tensor => "tensor3x3",
        }
    }
}

/// Symmetry classes a field may assert. Asserted flags are checked against
/// the data by [`Field::verify_flags`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymFlag {
    MeanFree,
    DivergenceFree,
    Symmetric,
    Antisymmetric,
    TraceFree,
}

pub const FLAG_TOL: f64 = 1e-12;

/// A scalar/vector/rank-2 field sampled on a [`Grid3`], stored spectrally.
///
/// Invariants: coefficients are Hermitian-symmetric (real samples) and
/// truncated to the grid's dealiasing cap, so pointwise products of fields
/// stay exact on kept modes.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Grid3,
    rank: Rank,
    comps: Vec<Vec<Complex64>>,
    flags: Vec<SymFlag>,
}

impl Field {
    pub fn zero(grid: &Grid3, rank: Rank) -> Self {
        let comps = (0..rank.comps()).map(|_| vec![Complex64::default(); grid.len()]).collect();
        Self { grid: grid.clone(), rank, comps, flags: Vec::new() }
    }

    /// Build from real-space samples (one slice per component, layout
    /// `[i3][i2][i1]`, x1 fastest). Transforms, enforces Hermitian symmetry
    /// and applies the dealiasing truncation.
    pub fn from_real(grid: &Grid3, rank: Rank, samples: &[Vec<f64>]) -> Result<Self> {
        if samples.len() != rank.comps() {
            return Err(Error::RankMismatch { expected: rank.name(), got: "component count" });
        }
        let mut comps = Vec::with_capacity(rank.comps());
        for s in samples {
            if s.len() != grid.len() {
                return Err(Error::GridMismatch);
            }
            let mut buf: Vec<Complex64> = s.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            fft::forward(&mut buf, grid.n());
            comps.push(buf);
        }
        let mut f = Self { grid: grid.clone(), rank, comps, flags: Vec::new() };
        f.truncate();
        f.symmetrize_hermitian();
        Ok(f)
    }

    /// Build directly from spectral coefficients. Truncates and enforces
    /// Hermitian symmetry.
    pub fn from_spectral(grid: &Grid3, rank: Rank, comps: Vec<Vec<Complex64>>) -> Result<Self> {
        if comps.len() != rank.comps() {
            return Err(Error::RankMismatch { expected: rank.name(), got: "component count" });
        }
        for c in &comps {
            if c.len() != grid.len() {
                return Err(Error::GridMismatch);
            }
        }
        let mut f = Self { grid: grid.clone(), rank, comps, flags: Vec::new() };
        f.truncate();
        f.symmetrize_hermitian();
        Ok(f)
    }

    /// Internal fast path for Fourier-multiplier outputs: multipliers of
    /// already-truncated Hermitian fields stay truncated and Hermitian, so
    /// no sweep is needed.
    pub(crate) fn from_spectral_raw(grid: &Grid3, rank: Rank, comps: Vec<Vec<Complex64>>) -> Self {
        debug_assert_eq!(comps.len(), rank.comps());
        Self { grid: grid.clone(), rank, comps, flags: Vec::new() }
    }

    #[inline]
    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    #[inline]
    pub fn rank(&self) -> Rank {
        self.rank
    }

    #[inline]
    pub fn spectral(&self, comp: usize) -> &[Complex64] {
        &self.comps[comp]
    }

    #[inline]
    pub fn spectral_mut(&mut self, comp: usize) -> &mut [Complex64] {
        &mut self.comps[comp]
    }

    /// Real-space samples of one component.
    pub fn to_real(&self, comp: usize) -> Vec<f64> {
        let mut buf = self.comps[comp].clone();
        fft::inverse(&mut buf, self.grid.n());
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Real-space samples of every component.
    pub fn to_real_all(&self) -> Vec<Vec<f64>> {
        (0..self.rank.comps()).map(|c| self.to_real(c)).collect()
    }

    pub fn flags(&self) -> &[SymFlag] {
        &self.flags
    }

    pub fn with_flags(mut self, flags: &[SymFlag]) -> Self {
        self.flags = flags.to_vec();
        self
    }

    pub fn assert_flag(&mut self, flag: SymFlag) {
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
        }
    }

    /// Mean (zero mode) of a component.
    #[inline]
    pub fn mean(&self, comp: usize) -> f64 {
        self.comps[comp][0].re
    }

    /// Remove the spatial mean of every component; returns the largest
    /// removed |mean| so silent drift stays visible to callers.
    pub fn project_mean_free(&mut self) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &mut self.comps {
            worst = worst.max(c[0].norm());
            c[0] = Complex64::default();
        }
        worst
    }

    /// l2 norm of the coefficient vector over all components; by Parseval
    /// this equals the L2(T^3) norm of the field.
    pub fn l2(&self) -> f64 {
        self.comps
            .iter()
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Zero every mode outside the dealiasing cap.
    pub fn truncate(&mut self) {
        let tab = tables(&self.grid);
        for c in &mut self.comps {
            for (v, &k) in c.iter_mut().zip(tab.keep.iter()) {
                if !k {
                    *v = Complex64::default();
                }
            }
        }
    }

    /// Force exact Hermitian symmetry c(-n) = conj(c(n)).
    pub fn symmetrize_hermitian(&mut self) {
        let tab = tables(&self.grid);
        for c in &mut self.comps {
            for idx in 0..c.len() {
                let nidx = tab.neg[idx] as usize;
                if nidx > idx {
                    let avg = 0.5 * (c[idx] + c[nidx].conj());
                    c[idx] = avg;
                    c[nidx] = avg.conj();
                } else if nidx == idx {
                    c[idx] = Complex64::new(c[idx].re, 0.0);
                }
            }
        }
    }

    /// Linear combination self + alpha * other.
    pub fn add_scaled(&mut self, other: &Field, alpha: f64) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        if self.rank != other.rank {
            return Err(Error::RankMismatch { expected: self.rank.name(), got: other.rank.name() });
        }
        for (a, b) in self.comps.iter_mut().zip(other.comps.iter()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += alpha * y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for c in &mut self.comps {
            for x in c.iter_mut() {
                *x *= alpha;
            }
        }
    }

    /// Residue of an asserted symmetry flag (absolute for mean, relative in
    /// L2 for the rest, 0 when the field vanishes).
    pub fn flag_residue(&self, flag: SymFlag) -> f64 {
        let scale = self.l2().max(1e-300);
        match flag {
            SymFlag::MeanFree => {
                self.comps.iter().map(|c| c[0].norm()).fold(0.0, f64::max)
            }
            SymFlag::DivergenceFree => {
                assert!(self.rank != Rank::Scalar);
                let mut acc = 0.0;
                for (idx, k) in self.grid.modes() {
                    let kk = [k[0] as f64, k[1] as f64, k[2] as f64];
                    if self.rank == Rank::Vector {
                        let mut d = Complex64::default();
                        for j in 0..3 {
                            d += Complex64::i() * 2.0 * std::f64::consts::PI * kk[j]
                                * self.comps[j][idx];
                        }
                        acc += d.norm_sqr();
                    } else {
                        // row divergence (div M)_i = d_j M_ij
                        for i in 0..3 {
                            let mut d = Complex64::default();
                            for j in 0..3 {
                                d += Complex64::i() * 2.0 * std::f64::consts::PI * kk[j]
                                    * self.comps[3 * i + j][idx];
                            }
                            acc += d.norm_sqr();
                        }
                    }
                }
                // normalize by the gradient scale so the measure is relative
                let kmax = self.grid.kcap() as f64 * 2.0 * std::f64::consts::PI;
                acc.sqrt() / (kmax * scale)
            }
            SymFlag::Symmetric => {
                assert_eq!(self.rank, Rank::Tensor);
                let mut acc = 0.0;
                for i in 0..3 {
                    for j in (i + 1)..3 {
                        for (a, b) in
                            self.comps[3 * i + j].iter().zip(self.comps[3 * j + i].iter())
                        {
                            acc += (a - b).norm_sqr();
                        }
                    }
                }
                acc.sqrt() / scale
            }
            SymFlag::Antisymmetric => {
                assert_eq!(self.rank, Rank::Tensor);
                let mut acc = 0.0;
                for i in 0..3 {
                    for j in i..3 {
                        for (a, b) in
                            self.comps[3 * i + j].iter().zip(self.comps[3 * j + i].iter())
                        {
                            acc += (a + b).norm_sqr();
                        }
                    }
                }
                acc.sqrt() / scale
            }
            SymFlag::TraceFree => {
                assert_eq!(self.rank, Rank::Tensor);
                let mut acc = 0.0;
                for idx in 0..self.grid.len() {
                    let tr = self.comps[0][idx] + self.comps[4][idx] + self.comps[8][idx];
                    acc += tr.norm_sqr();
                }
                acc.sqrt() / scale
            }
        }
    }

    /// Check every asserted flag against the data.
    pub fn verify_flags(&self, tol: f64) -> Result<()> {
        for &flag in &self.flags {
            let r = self.flag_residue(flag);
            if r > tol {
                return Err(Error::IdentityViolation {
                    what: format!("{flag:?} flag"),
                    value: r,
                    tol,
                });
            }
        }
        Ok(())
    }
}

/// Dealiased pointwise product of two real-space sample slices, returned in
/// real space. Inputs must already be kept-mode band-limited fields.
pub fn pointwise_product(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sin_x1(grid: &Grid3) -> Field {
        let n = grid.n();
        let mut s = vec![0.0; grid.len()];
        for (idx, v) in s.iter_mut().enumerate() {
            let x = (idx % n) as f64 / n as f64;
            *v = (2.0 * std::f64::consts::PI * x).sin();
        }
        Field::from_real(grid, Rank::Scalar, &[s]).unwrap()
    }

    #[test]
    fn roundtrip_and_parseval() {
        let grid = Grid3::new(16).unwrap();
        let f = sin_x1(&grid);
        assert!((f.l2() - (0.5f64).sqrt()).abs() < 1e-12);
        let r = f.to_real(0);
        let x = 3.0 / 16.0;
        assert!((r[3] - (2.0 * std::f64::consts::PI * x).sin()).abs() < 1e-12);
    }

    #[test]
    fn flags_are_verified() {
        let grid = Grid3::new(8).unwrap();
        let mut f = sin_x1(&grid);
        f.assert_flag(SymFlag::MeanFree);
        assert!(f.verify_flags(1e-12).is_ok());
        // constant field is not mean-free
        let c = Field::from_real(&grid, Rank::Scalar, &[vec![1.0; grid.len()]]).unwrap();
        let c = c.with_flags(&[SymFlag::MeanFree]);
        assert!(c.verify_flags(1e-12).is_err());
    }

    #[test]
    fn truncation_kills_high_modes() {
        let grid = Grid3::new(8).unwrap();
        // kcap = 2 at N=8; a mode-3 wave must be dropped entirely
        let n = grid.n();
        let mut s = vec![0.0; grid.len()];
        for (idx, v) in s.iter_mut().enumerate() {
            let x = (idx % n) as f64 / n as f64;
            *v = (2.0 * std::f64::consts::PI * 3.0 * x).cos();
        }
        let f = Field::from_real(&grid, Rank::Scalar, &[s]).unwrap();
        assert!(f.l2() < 1e-13);
    }
}
