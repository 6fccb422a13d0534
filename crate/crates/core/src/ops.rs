//! Exact spectral calculus on [`Field`]s: differential operators, the Leray
//! projector and the two matrix-valued right inverses of the divergence.
//!
//! Conventions, used consistently across the crate:
//! * `(v ⊗ w)_{ij} = v_i w_j`,
//! * row divergence `(div M)_i = d_j M_{ij}`,
//! * `(grad u)_{ij} = d_j u_i`, so `div(grad u) = Δu` componentwise.
//!
//! The symmetric inverse divergence produces a trace-free symmetric tensor
//! with `div(R v) = v` for mean-free `v`; the antisymmetric one produces an
//! antisymmetric tensor with `div(Ra u) = u` for divergence-free `u`:
//!
//! `(Ra u)_{ij} = Δ^{-1}(d_j u_i - d_i u_j)`.

use crate::error::Error;
use crate::field::{Field, Rank, SymFlag};
use crate::grid::Grid3;
use crate::Result;
use rustfft::num_complex::Complex64;
use std::f64::consts::PI;

pub const MEAN_FREE_TOL: f64 = 1e-10;
pub const DIV_FREE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffOp {
    Grad,
    Div,
    Curl,
    Laplacian,
    InvLaplacian,
}

fn kappa(k: [i64; 3]) -> [f64; 3] {
    [2.0 * PI * k[0] as f64, 2.0 * PI * k[1] as f64, 2.0 * PI * k[2] as f64]
}

fn require_mean_free(f: &Field, op: &'static str) -> Result<()> {
    let scale = f.l2().max(1.0);
    let mean = (0..f.rank().comps()).map(|c| f.mean(c).abs()).fold(0.0, f64::max);
    if mean > MEAN_FREE_TOL * scale {
        return Err(Error::NotMeanFree { op, mean });
    }
    Ok(())
}

fn require_div_free(f: &Field, op: &'static str) -> Result<()> {
    let r = f.flag_residue(SymFlag::DivergenceFree);
    if r > DIV_FREE_TOL {
        return Err(Error::NotDivergenceFree { op, div: r });
    }
    Ok(())
}

/// Apply one exact Fourier-multiplier differential operator.
pub fn differential_op(f: &Field, op: DiffOp) -> Result<Field> {
    let grid = f.grid().clone();
    match op {
        DiffOp::Grad => match f.rank() {
            Rank::Scalar => {
                let mut out = vec![vec![Complex64::default(); grid.len()]; 3];
                for (idx, k) in grid.modes() {
                    let kap = kappa(k);
                    let v = f.spectral(0)[idx];
                    for (j, o) in out.iter_mut().enumerate() {
                        o[idx] = Complex64::i() * kap[j] * v;
                    }
                }
                Ok(Field::from_spectral_raw(&grid, Rank::Vector, out))
            }
            Rank::Vector => {
                // (grad u)_{ij} = d_j u_i
                let mut out = vec![vec![Complex64::default(); grid.len()]; 9];
                for (idx, k) in grid.modes() {
                    let kap = kappa(k);
                    for i in 0..3 {
                        let v = f.spectral(i)[idx];
                        for j in 0..3 {
                            out[3 * i + j][idx] = Complex64::i() * kap[j] * v;
                        }
                    }
                }
                Ok(Field::from_spectral_raw(&grid, Rank::Tensor, out))
            }
            Rank::Tensor => Err(Error::RankMismatch { expected: "scalar or vector", got: "tensor3x3" }),
        },
        DiffOp::Div => match f.rank() {
            Rank::Scalar => Err(Error::RankMismatch { expected: "vector or tensor", got: "scalar" }),
            Rank::Vector => {
                let mut out = vec![vec![Complex64::default(); grid.len()]];
                for (idx, k) in grid.modes() {
                    let kap = kappa(k);
                    let mut d = Complex64::default();
                    for j in 0..3 {
                        d += Complex64::i() * kap[j] * f.spectral(j)[idx];
                    }
                    out[0][idx] = d;
                }
                Ok(Field::from_spectral_raw(&grid, Rank::Scalar, out))
            }
            Rank::Tensor => {
                let mut out = vec![vec![Complex64::default(); grid.len()]; 3];
                for (idx, k) in grid.modes() {
                    let kap = kappa(k);
                    for (i, o) in out.iter_mut().enumerate() {
                        let mut d = Complex64::default();
                        for j in 0..3 {
                            d += Complex64::i() * kap[j] * f.spectral(3 * i + j)[idx];
                        }
                        o[idx] = d;
                    }
                }
                Ok(Field::from_spectral_raw(&grid, Rank::Vector, out))
            }
        },
        DiffOp::Curl => {
            if f.rank() != Rank::Vector {
                return Err(Error::RankMismatch { expected: "vector", got: f.rank().name() });
            }
            let mut out = vec![vec![Complex64::default(); grid.len()]; 3];
            for (idx, k) in grid.modes() {
                let kap = kappa(k);
                let u = [f.spectral(0)[idx], f.spectral(1)[idx], f.spectral(2)[idx]];
                out[0][idx] = Complex64::i() * (kap[1] * u[2] - kap[2] * u[1]);
                out[1][idx] = Complex64::i() * (kap[2] * u[0] - kap[0] * u[2]);
                out[2][idx] = Complex64::i() * (kap[0] * u[1] - kap[1] * u[0]);
            }
            Ok(Field::from_spectral_raw(&grid, Rank::Vector, out))
        }
        DiffOp::Laplacian => {
            let mut out: Vec<Vec<Complex64>> =
                (0..f.rank().comps()).map(|c| f.spectral(c).to_vec()).collect();
            for (idx, k) in grid.modes() {
                let kap = kappa(k);
                let m = -(kap[0] * kap[0] + kap[1] * kap[1] + kap[2] * kap[2]);
                for o in out.iter_mut() {
                    o[idx] *= m;
                }
            }
            Ok(Field::from_spectral_raw(&grid, f.rank(), out))
        }
        DiffOp::InvLaplacian => {
            require_mean_free(f, "inv_laplacian")?;
            let mut out: Vec<Vec<Complex64>> =
                (0..f.rank().comps()).map(|c| f.spectral(c).to_vec()).collect();
            for (idx, k) in grid.modes() {
                let kap = kappa(k);
                let k2 = kap[0] * kap[0] + kap[1] * kap[1] + kap[2] * kap[2];
                for o in out.iter_mut() {
                    o[idx] = if k2 == 0.0 { Complex64::default() } else { -o[idx] / k2 };
                }
            }
            let mut g = Field::from_spectral_raw(&grid, f.rank(), out);
            g.assert_flag(SymFlag::MeanFree);
            Ok(g)
        }
    }
}

/// Leray projector `P_H = Id - grad Δ^{-1} div` onto divergence-free fields.
pub fn leray_project(v: &Field) -> Result<Field> {
    if v.rank() != Rank::Vector {
        return Err(Error::RankMismatch { expected: "vector", got: v.rank().name() });
    }
    require_mean_free(v, "leray_project")?;
    let grid = v.grid().clone();
    let mut out = vec![vec![Complex64::default(); grid.len()]; 3];
    for (idx, k) in grid.modes() {
        let kap = kappa(k);
        let k2 = kap[0] * kap[0] + kap[1] * kap[1] + kap[2] * kap[2];
        let u = [v.spectral(0)[idx], v.spectral(1)[idx], v.spectral(2)[idx]];
        if k2 == 0.0 {
            continue;
        }
        let kd = (kap[0] * u[0] + kap[1] * u[1] + kap[2] * u[2]) / k2;
        for (j, o) in out.iter_mut().enumerate() {
            o[idx] = u[j] - kap[j] * kd;
        }
    }
    let mut f = Field::from_spectral_raw(&grid, Rank::Vector, out);
    f.assert_flag(SymFlag::MeanFree);
    f.assert_flag(SymFlag::DivergenceFree);
    Ok(f)
}

/// Trace-free symmetric right inverse of the divergence:
/// `(R v)_{kl} = d_k Δ^{-1} v_l + d_l Δ^{-1} v_k - 1/2 (δ_{kl} + d_k d_l Δ^{-1}) Δ^{-1} div v`.
pub fn inverse_divergence_sym(v: &Field) -> Result<Field> {
    if v.rank() != Rank::Vector {
        return Err(Error::RankMismatch { expected: "vector", got: v.rank().name() });
    }
    require_mean_free(v, "inverse_divergence_sym")?;
    let grid = v.grid().clone();
    let mut out = vec![vec![Complex64::default(); grid.len()]; 9];
    for (idx, k) in grid.modes() {
        let kap = kappa(k);
        let k2 = kap[0] * kap[0] + kap[1] * kap[1] + kap[2] * kap[2];
        if k2 == 0.0 {
            continue;
        }
        let u = [v.spectral(0)[idx], v.spectral(1)[idx], v.spectral(2)[idx]];
        let kdotu = kap[0] * u[0] + kap[1] * u[1] + kap[2] * u[2];
        for a in 0..3 {
            for b in 0..3 {
                let mut val = -Complex64::i() / k2 * (kap[a] * u[b] + kap[b] * u[a]);
                let delta = if a == b { 1.0 } else { 0.0 };
                val += Complex64::i() * kdotu / (2.0 * k2) * (delta + kap[a] * kap[b] / k2);
                out[3 * a + b][idx] = val;
            }
        }
    }
    let mut f = Field::from_spectral_raw(&grid, Rank::Tensor, out);
    f.assert_flag(SymFlag::Symmetric);
    f.assert_flag(SymFlag::TraceFree);
    f.assert_flag(SymFlag::MeanFree);
    Ok(f)
}

/// Antisymmetric right inverse of the divergence on divergence-free fields:
/// `(Ra u)_{ij} = Δ^{-1}(d_j u_i - d_i u_j)`.
pub fn inverse_divergence_antisym(u: &Field) -> Result<Field> {
    if u.rank() != Rank::Vector {
        return Err(Error::RankMismatch { expected: "vector", got: u.rank().name() });
    }
    require_mean_free(u, "inverse_divergence_antisym")?;
    require_div_free(u, "inverse_divergence_antisym")?;
    let grid = u.grid().clone();
    let mut out = vec![vec![Complex64::default(); grid.len()]; 9];
    for (idx, k) in grid.modes() {
        let kap = kappa(k);
        let k2 = kap[0] * kap[0] + kap[1] * kap[1] + kap[2] * kap[2];
        if k2 == 0.0 {
            continue;
        }
        let v = [u.spectral(0)[idx], u.spectral(1)[idx], u.spectral(2)[idx]];
        for i in 0..3 {
            for j in 0..3 {
                out[3 * i + j][idx] = Complex64::i() * (kap[i] * v[j] - kap[j] * v[i]) / k2;
            }
        }
    }
    let mut f = Field::from_spectral_raw(&grid, Rank::Tensor, out);
    f.assert_flag(SymFlag::Antisymmetric);
    f.assert_flag(SymFlag::MeanFree);
    Ok(f)
}

/// Dealiased tensor product `(v ⊗ w)_{ij} = v_i w_j` of two vector fields.
pub fn outer_product(v: &Field, w: &Field) -> Result<Field> {
    if v.rank() != Rank::Vector || w.rank() != Rank::Vector {
        return Err(Error::RankMismatch { expected: "vector", got: "non-vector" });
    }
    if v.grid() != w.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = v.grid().clone();
    let vr = v.to_real_all();
    let wr = w.to_real_all();
    let mut comps = Vec::with_capacity(9);
    for i in 0..3 {
        for j in 0..3 {
            comps.push(vr[i].iter().zip(wr[j].iter()).map(|(a, b)| a * b).collect());
        }
    }
    Field::from_real(&grid, Rank::Tensor, &comps)
}

/// Trace-free part `S - tr(S)/3 Id` of a tensor field.
pub fn deviatoric(t: &Field) -> Result<Field> {
    if t.rank() != Rank::Tensor {
        return Err(Error::RankMismatch { expected: "tensor3x3", got: t.rank().name() });
    }
    let grid = t.grid().clone();
    let mut out: Vec<Vec<Complex64>> = (0..9).map(|c| t.spectral(c).to_vec()).collect();
    for idx in 0..grid.len() {
        let tr = (t.spectral(0)[idx] + t.spectral(4)[idx] + t.spectral(8)[idx]) / 3.0;
        out[0][idx] -= tr;
        out[4][idx] -= tr;
        out[8][idx] -= tr;
    }
    Ok(Field::from_spectral_raw(&grid, Rank::Tensor, out))
}

/// Pointwise squared magnitude |v|^2 of a vector field, dealiased.
pub fn magnitude_sq(v: &Field) -> Result<Field> {
    if v.rank() != Rank::Vector {
        return Err(Error::RankMismatch { expected: "vector", got: v.rank().name() });
    }
    let grid = v.grid().clone();
    let vr = v.to_real_all();
    let s: Vec<f64> = (0..grid.len())
        .map(|i| vr[0][i] * vr[0][i] + vr[1][i] * vr[1][i] + vr[2][i] * vr[2][i])
        .collect();
    Field::from_real(&grid, Rank::Scalar, &[s])
}

/// `div div Δ^{-1}` applied to a tensor field, returning a mean-free scalar.
pub fn div_div_inv_laplacian(t: &Field) -> Result<Field> {
    if t.rank() != Rank::Tensor {
        return Err(Error::RankMismatch { expected: "tensor3x3", got: t.rank().name() });
    }
    let grid = t.grid().clone();
    let mut out = vec![vec![Complex64::default(); grid.len()]];
    for (idx, k) in grid.modes() {
        let kap = kappa(k);
        let k2 = kap[0] * kap[0] + kap[1] * kap[1] + kap[2] * kap[2];
        if k2 == 0.0 {
            continue;
        }
        let mut acc = Complex64::default();
        for i in 0..3 {
            for j in 0..3 {
                // d_i d_j M_ij -> (i kap_i)(i kap_j) = -kap_i kap_j
                acc += kap[i] * kap[j] * t.spectral(3 * i + j)[idx];
            }
        }
        out[0][idx] = acc / k2;
    }
    let mut f = Field::from_spectral_raw(&grid, Rank::Scalar, out);
    f.assert_flag(SymFlag::MeanFree);
    Ok(f)
}

/// Maximum pointwise |f| over the grid of a scalar component.
pub fn max_abs(samples: &[f64]) -> f64 {
    samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

/// Deterministic random mean-free scalar/vector field with modes below the
/// cap, unit L2, for tests and certification sweeps.
pub fn random_field(grid: &Grid3, rank: Rank, seed: u64) -> Field {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let cap = grid.kcap().min(4) as i64;
    let mut comps = vec![vec![Complex64::default(); grid.len()]; rank.comps()];
    for c in comps.iter_mut() {
        for k1 in -cap..=cap {
            for k2 in -cap..=cap {
                for k3 in -cap..=cap {
                    if k1 == 0 && k2 == 0 && k3 == 0 {
                        continue;
                    }
                    let idx = grid.mode_index([k1, k2, k3]);
                    c[idx] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                }
            }
        }
    }
    let mut f = Field::from_spectral(grid, rank, comps).unwrap();
    let n = f.l2();
    if n > 0.0 {
        f.scale(1.0 / n);
    }
    f.assert_flag(SymFlag::MeanFree);
    f
}
