//! Rational direction sets on the unit sphere and the two positive matrix
//! decompositions the construction rests on: skew-symmetric matrices near 0
//! over generators `kbar ⊗ kbbar - kbbar ⊗ kbar`, and symmetric matrices
//! near the identity over generators `kbar ⊗ kbar`.
//!
//! Coefficient maps are affine: base coefficients reconstruct the center
//! exactly and a minimum-Frobenius-norm linear correction (via the
//! pseudoinverse of the generator matrix) accounts for the perturbation.
//! The admissible radius of each set is certified at construction: it is
//! the largest radius for which every coefficient stays at or above 10% of
//! the smallest base coefficient, times a 0.9 safety factor.

use crate::error::Error;
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// Rational orthonormal triple `(k, kbar, kbbar)`; `scale * k` etc. have
/// integer entries exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionTriple {
    scale: i64,
    ik: [i64; 3],
    ikbar: [i64; 3],
    ikbbar: [i64; 3],
}

fn idot(a: [i64; 3], b: [i64; 3]) -> i64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn icross(a: [i64; 3], b: [i64; 3]) -> [i64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl DirectionTriple {
    /// Validates, in exact integer arithmetic, that all three scaled
    /// vectors have squared length `scale^2` and are pairwise orthogonal.
    pub fn new(scale: i64, ik: [i64; 3], ikbar: [i64; 3], ikbbar: [i64; 3]) -> Result<Self> {
        if scale <= 0 {
            return Err(Error::InvalidParam("direction scale must be positive".into()));
        }
        let s2 = scale * scale;
        for v in [ik, ikbar, ikbbar] {
            if idot(v, v) != s2 {
                return Err(Error::InvalidParam(format!(
                    "direction {v:?} is not a unit vector at scale {scale}"
                )));
            }
        }
        for (a, b) in [(ik, ikbar), (ik, ikbbar), (ikbar, ikbbar)] {
            if idot(a, b) != 0 {
                return Err(Error::InvalidParam(format!("directions {a:?}, {b:?} not orthogonal")));
            }
        }
        Ok(Self { scale, ik, ikbar, ikbbar })
    }

    #[inline]
    pub fn n_lambda(&self) -> i64 {
        self.scale
    }

    /// Integer vector `scale * k`; the building blocks oscillate along it.
    #[inline]
    pub fn ik(&self) -> [i64; 3] {
        self.ik
    }

    pub fn k(&self) -> [f64; 3] {
        let s = self.scale as f64;
        [self.ik[0] as f64 / s, self.ik[1] as f64 / s, self.ik[2] as f64 / s]
    }

    pub fn kbar(&self) -> [f64; 3] {
        let s = self.scale as f64;
        [self.ikbar[0] as f64 / s, self.ikbar[1] as f64 / s, self.ikbar[2] as f64 / s]
    }

    pub fn kbbar(&self) -> [f64; 3] {
        let s = self.scale as f64;
        [self.ikbbar[0] as f64 / s, self.ikbbar[1] as f64 / s, self.ikbbar[2] as f64 / s]
    }

    /// `k x kbar` (equals `± kbbar`).
    pub fn k_cross_kbar(&self) -> [f64; 3] {
        let c = icross(self.ik, self.ikbar);
        let s = (self.scale * self.scale) as f64;
        [c[0] as f64 / s, c[1] as f64 / s, c[2] as f64 / s]
    }

    /// `k x kbbar` (equals `∓ kbar`).
    pub fn k_cross_kbbar(&self) -> [f64; 3] {
        let c = icross(self.ik, self.ikbbar);
        let s = (self.scale * self.scale) as f64;
        [c[0] as f64 / s, c[1] as f64 / s, c[2] as f64 / s]
    }

    /// Skew generator `kbar ⊗ kbbar - kbbar ⊗ kbar` as a row-major 3x3.
    pub fn skew_generator(&self) -> [f64; 9] {
        let a = self.kbar();
        let b = self.kbbar();
        let mut g = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                g[3 * i + j] = a[i] * b[j] - b[i] * a[j];
            }
        }
        g
    }

    /// Symmetric generator `kbar ⊗ kbar`.
    pub fn sym_generator(&self) -> [f64; 9] {
        let a = self.kbar();
        let mut g = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                g[3 * i + j] = a[i] * a[j];
            }
        }
        g
    }

    /// `kbar ⊗ kbar - kbbar ⊗ kbbar` (compensation generator).
    pub fn sym_diff_generator(&self) -> [f64; 9] {
        let a = self.kbar();
        let b = self.kbbar();
        let mut g = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                g[3 * i + j] = a[i] * a[j] - b[i] * b[j];
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetKind {
    /// Skew decomposition near the zero matrix.
    Skew,
    /// Symmetric decomposition near the identity.
    Sym,
}

/// A validated direction family with its affine coefficient map.
#[derive(Debug, Clone)]
pub struct DirectionSet {
    kind: SetKind,
    triples: Vec<DirectionTriple>,
    base: Vec<f64>,
    /// Certified admissible radius (Frobenius) around the center.
    radius: f64,
    /// Documented coefficient floor: every admissible input keeps all
    /// coefficients at or above this value.
    delta_pos: f64,
    /// Pseudoinverse of the generator matrix, mapping (isometric) matrix
    /// coordinates to minimum-norm coefficient corrections.
    pinv: DMatrix<f64>,
}

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Isometric coordinates of a skew matrix: `sqrt(2) * (M_12, M_13, M_23)`.
fn skew_coords(m: &[f64; 9]) -> DVector<f64> {
    DVector::from_vec(vec![SQRT2 * m[1], SQRT2 * m[2], SQRT2 * m[5]])
}

/// Isometric coordinates of a symmetric matrix.
fn sym_coords(m: &[f64; 9]) -> DVector<f64> {
    DVector::from_vec(vec![m[0], m[4], m[8], SQRT2 * m[1], SQRT2 * m[2], SQRT2 * m[5]])
}

fn frob(m: &[f64; 9]) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn sym_residue(m: &[f64; 9]) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let d = m[3 * i + j] - m[3 * j + i];
            acc += d * d;
        }
    }
    acc.sqrt()
}

fn antisym_residue(m: &[f64; 9]) -> f64 {
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let d = m[3 * i + j] + m[3 * j + i];
            acc += d * d;
        }
    }
    acc.sqrt()
}

/// Coefficient floor as a fraction of the smallest base coefficient.
const POS_FRACTION: f64 = 0.1;
/// Safety factor on the certified radius.
const RADIUS_SAFETY: f64 = 0.9;

impl DirectionSet {
    /// Build one of the two compiled-in families and certify it.
    ///
    /// * skew: the six coordinate triples (unit scale), generators `±A_i`,
    /// * sym: twelve triples with entries in `{±1, ±2}/3` whose `kbar`
    ///   lines sum to `4 Id` exactly.
    pub fn build(kind: SetKind) -> DirectionSet {
        let triples = match kind {
            SetKind::Skew => axis_triples(),
            SetKind::Sym => third_family_triples(),
        };
        Self::from_triples(kind, triples).expect("compiled-in direction set must validate")
    }

    fn from_triples(kind: SetKind, triples: Vec<DirectionTriple>) -> Result<DirectionSet> {
        let dim = match kind {
            SetKind::Skew => 3,
            SetKind::Sym => 6,
        };
        let min_count = match kind {
            SetKind::Skew => 4,
            SetKind::Sym => 7,
        };
        if triples.len() < min_count {
            return Err(Error::InvalidParam(format!(
                "{kind:?} set needs at least {min_count} triples"
            )));
        }
        let cols: Vec<DVector<f64>> = triples
            .iter()
            .map(|t| match kind {
                SetKind::Skew => skew_coords(&t.skew_generator()),
                SetKind::Sym => sym_coords(&t.sym_generator()),
            })
            .collect();
        let g = DMatrix::from_columns(&cols);
        let svd = g.clone().svd(true, true);
        let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10).count();
        if rank != dim {
            return Err(Error::InvalidParam(format!(
                "{kind:?} generators span rank {rank}, need {dim}"
            )));
        }
        let pinv = svd.pseudo_inverse(1e-12).map_err(|e| Error::InvalidParam(e.to_string()))?;

        // Base coefficients: equal weights reconstructing the center.
        let (base_val, center) = match kind {
            SetKind::Skew => {
                // generators cancel in ± pairs; any constant works
                (0.5, DVector::zeros(3))
            }
            SetKind::Sym => {
                // sum over the family is c * Id; solve the constant
                let mut sum_diag = 0.0;
                for t in &triples {
                    let kb = t.kbar();
                    sum_diag += kb[0] * kb[0] + kb[1] * kb[1] + kb[2] * kb[2];
                }
                // sum_k a0 kbar⊗kbar = Id requires a0 * sum_diag = 3
                (3.0 / sum_diag, sym_coords(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]))
            }
        };
        let base = vec![base_val; triples.len()];
        let recon = &g * DVector::from_vec(base.clone());
        let err = (&recon - &center).norm();
        if err > 1e-12 {
            return Err(Error::InvalidParam(format!(
                "base coefficients do not reconstruct the center: err {err:.3e}"
            )));
        }

        // Certified radius: per coefficient k the worst unit direction d has
        // (pinv d)_k = -||row_k(pinv)||, so the exact positivity radius is
        // min_k (a0_k - floor) / ||row_k||; keep 0.9 of it.
        let delta_pos = POS_FRACTION * base_val;
        let mut radius = f64::INFINITY;
        for k in 0..triples.len() {
            let row_norm = pinv.row(k).norm();
            if row_norm > 1e-14 {
                radius = radius.min((base_val - delta_pos) / row_norm);
            }
        }
        let radius = RADIUS_SAFETY * radius;
        assert!(radius.is_finite() && radius > 0.0);

        Ok(DirectionSet { kind, triples, base, radius, delta_pos, pinv })
    }

    #[inline]
    pub fn kind(&self) -> SetKind {
        self.kind
    }

    pub fn triples(&self) -> &[DirectionTriple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn base_coefficients(&self) -> &[f64] {
        &self.base
    }

    /// Certified admissible radius (`eps_b` or `eps_u`).
    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Documented positive floor for coefficients of admissible inputs.
    pub fn delta_pos(&self) -> f64 {
        self.delta_pos
    }

    /// Affine coefficients for a skew matrix near 0.
    pub fn decompose_skew(&self, m: &[f64; 9]) -> Result<Vec<f64>> {
        assert_eq!(self.kind, SetKind::Skew);
        let scale = frob(m).max(1e-300);
        let res = antisym_residue(m);
        if res > 1e-12 * scale.max(1.0) {
            return Err(Error::WrongSymmetryClass { class: "antisymmetric", residue: res });
        }
        let norm = frob(m);
        if norm > self.radius {
            return Err(Error::OutOfBall { norm, radius: self.radius });
        }
        let corr = &self.pinv * skew_coords(m);
        Ok(self.base.iter().zip(corr.iter()).map(|(b, c)| b + c).collect())
    }

    /// Affine coefficients for a symmetric matrix near the identity.
    pub fn decompose_sym(&self, r: &[f64; 9]) -> Result<Vec<f64>> {
        assert_eq!(self.kind, SetKind::Sym);
        let res = sym_residue(r);
        if res > 1e-12 * frob(r).max(1.0) {
            return Err(Error::WrongSymmetryClass { class: "symmetric", residue: res });
        }
        let mut dev = *r;
        dev[0] -= 1.0;
        dev[4] -= 1.0;
        dev[8] -= 1.0;
        let norm = frob(&dev);
        if norm > self.radius {
            return Err(Error::OutOfBall { norm, radius: self.radius });
        }
        let corr = &self.pinv * sym_coords(&dev);
        Ok(self.base.iter().zip(corr.iter()).map(|(b, c)| b + c).collect())
    }

    /// Rows of the pseudoinverse as plain slices (one per triple), for hot
    /// pointwise loops: `c_k = base_k + row_k . coords`.
    pub fn pinv_rows(&self) -> Vec<Vec<f64>> {
        (0..self.triples.len()).map(|k| self.pinv.row(k).iter().copied().collect()).collect()
    }

    /// Isometric coordinates of a skew matrix / symmetric deviation used by
    /// the affine map (matching [`Self::pinv_rows`]).
    pub fn coords_of(&self, m: &[f64; 9]) -> Vec<f64> {
        match self.kind {
            SetKind::Skew => vec![SQRT2 * m[1], SQRT2 * m[2], SQRT2 * m[5]],
            SetKind::Sym => {
                vec![m[0] - 1.0, m[4] - 1.0, m[8] - 1.0, SQRT2 * m[1], SQRT2 * m[2], SQRT2 * m[5]]
            }
        }
    }

    /// Pointwise coefficient evaluation without ball/symmetry re-checks,
    /// for hot loops that have already validated admissibility bounds.
    pub fn coefficients_unchecked(&self, m: &[f64; 9]) -> Vec<f64> {
        let coords = match self.kind {
            SetKind::Skew => skew_coords(m),
            SetKind::Sym => {
                let mut dev = *m;
                dev[0] -= 1.0;
                dev[4] -= 1.0;
                dev[8] -= 1.0;
                sym_coords(&dev)
            }
        };
        let corr = &self.pinv * coords;
        self.base.iter().zip(corr.iter()).map(|(b, c)| b + c).collect()
    }

    /// Reconstruct `sum_k a_k G_k` for audit.
    pub fn reconstruct(&self, coeffs: &[f64]) -> [f64; 9] {
        let mut out = [0.0; 9];
        for (t, &a) in self.triples.iter().zip(coeffs.iter()) {
            let g = match self.kind {
                SetKind::Skew => t.skew_generator(),
                SetKind::Sym => t.sym_generator(),
            };
            for (o, gv) in out.iter_mut().zip(g.iter()) {
                *o += a * gv;
            }
        }
        // add the center back for the symmetric family
        if self.kind == SetKind::Sym {
            // reconstruct() returns sum a_k G_k; for sym sets callers compare
            // against the full matrix, so nothing to add here: the base
            // coefficients already carry the identity.
        }
        out
    }

    /// Rational text table `(scale, k, kbar, kbbar)` per row, for audit.
    pub fn export_table(&self) -> String {
        let mut s = String::new();
        s.push_str("# idx scale k1 k2 k3 kbar1 kbar2 kbar3 kbbar1 kbbar2 kbbar3 (entries / scale)\n");
        for (i, t) in self.triples.iter().enumerate() {
            s.push_str(&format!(
                "{} {} {}/{den} {}/{den} {}/{den} {}/{den} {}/{den} {}/{den} {}/{den} {}/{den} {}/{den}\n",
                i,
                t.scale,
                t.ik[0], t.ik[1], t.ik[2],
                t.ikbar[0], t.ikbar[1], t.ikbar[2],
                t.ikbbar[0], t.ikbbar[1], t.ikbbar[2],
                den = t.scale
            ));
        }
        s
    }
}

fn axis_triples() -> Vec<DirectionTriple> {
    let e = [[1i64, 0, 0], [0, 1, 0], [0, 0, 1]];
    let mut out = Vec::new();
    // (e_i; e_j, e_l) cyclic gives +A_i, swapped gives -A_i
    for i in 0..3 {
        let j = (i + 1) % 3;
        let l = (i + 2) % 3;
        out.push(DirectionTriple::new(1, e[i], e[j], e[l]).unwrap());
        out.push(DirectionTriple::new(1, e[i], e[l], e[j]).unwrap());
    }
    out
}

/// Twelve rational triples with entries in `{±1, ±2}/3`, one per line of
/// the orbit of `(2,2,-1)/3` under signed permutations; validated in exact
/// arithmetic and summing to `4 Id` over `kbar ⊗ kbar`.
fn third_family_triples() -> Vec<DirectionTriple> {
    let base: ([i64; 3], [i64; 3], [i64; 3]) = ([2, -1, 2], [2, 2, -1], [-1, 2, 2]);
    // all 24 rotation matrices of the cube as signed permutations
    let mut rots: Vec<[[i64; 3]; 3]> = Vec::new();
    let perms: [[usize; 3]; 6] =
        [[0, 1, 2], [1, 2, 0], [2, 0, 1], [0, 2, 1], [2, 1, 0], [1, 0, 2]];
    for (pi, p) in perms.iter().enumerate() {
        let perm_sign: i64 = if pi < 3 { 1 } else { -1 };
        for s0 in [-1i64, 1] {
            for s1 in [-1i64, 1] {
                for s2 in [-1i64, 1] {
                    if perm_sign * s0 * s1 * s2 != 1 {
                        continue; // keep det = +1
                    }
                    let mut m = [[0i64; 3]; 3];
                    let signs = [s0, s1, s2];
                    for r in 0..3 {
                        m[r][p[r]] = signs[r];
                    }
                    rots.push(m);
                }
            }
        }
    }
    let apply = |m: &[[i64; 3]; 3], v: [i64; 3]| -> [i64; 3] {
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    };
    let canon = |v: [i64; 3]| -> [i64; 3] {
        for c in v {
            if c != 0 {
                return if c < 0 { [-v[0], -v[1], -v[2]] } else { v };
            }
        }
        v
    };
    let mut seen: Vec<[i64; 3]> = Vec::new();
    let mut out = Vec::new();
    for m in &rots {
        let kb = apply(m, base.1);
        let line = canon(kb);
        if seen.contains(&line) {
            continue;
        }
        seen.push(line);
        out.push(DirectionTriple::new(3, apply(m, base.0), kb, apply(m, base.2)).unwrap());
    }
    assert_eq!(out.len(), 12);
    // exact integer check: sum over the family of (3 kbar)⊗(3 kbar) = 36 Id
    let mut acc = [[0i64; 3]; 3];
    for t in &out {
        for i in 0..3 {
            for j in 0..3 {
                acc[i][j] += t.ikbar[i] * t.ikbar[j];
            }
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(acc[i][j], if i == j { 36 } else { 0 });
        }
    }
    out
}

/// Maximum |entry| of `scale * k` over a set's triples, for Nyquist checks.
pub fn max_int_component(set: &DirectionSet) -> i64 {
    set.triples()
        .iter()
        .map(|t| t.ik().iter().map(|v| v.abs()).max().unwrap())
        .max()
        .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_skew(rng: &mut impl Rng, norm: f64) -> [f64; 9] {
        let (a, b, c) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let mut m = [0.0; 9];
        m[1] = a;
        m[3] = -a;
        m[2] = b;
        m[6] = -b;
        m[5] = c;
        m[7] = -c;
        let f = frob(&m);
        for v in m.iter_mut() {
            *v *= norm / f;
        }
        m
    }

    fn random_symdev(rng: &mut impl Rng, norm: f64) -> [f64; 9] {
        let mut s = [0.0; 9];
        for i in 0..3 {
            for j in i..3 {
                let v = rng.gen_range(-1.0..1.0);
                s[3 * i + j] = v;
                s[3 * j + i] = v;
            }
        }
        let f = frob(&s);
        for v in s.iter_mut() {
            *v *= norm / f;
        }
        s
    }

    #[test]
    fn sets_build_and_certify() {
        let skew = DirectionSet::build(SetKind::Skew);
        assert!(skew.len() >= 4);
        assert!(skew.radius() > 0.0);
        let sym = DirectionSet::build(SetKind::Sym);
        assert!(sym.len() >= 7);
        assert!(sym.radius() > 0.0);
        // orthonormality of every triple
        for t in skew.triples().iter().chain(sym.triples()) {
            let (k, kb, kbb) = (t.k(), t.kbar(), t.kbbar());
            for v in [k, kb, kbb] {
                let n: f64 = v.iter().map(|x| x * x).sum();
                assert!((n - 1.0).abs() < 1e-14);
            }
            let d: f64 = k.iter().zip(kb.iter()).map(|(a, b)| a * b).sum();
            assert!(d.abs() < 1e-14);
        }
        // disjoint direction lists
        for tb in skew.triples() {
            for tu in sym.triples() {
                assert_ne!(tb.ik(), tu.ik());
            }
        }
    }

    #[test]
    fn center_reconstruction() {
        let skew = DirectionSet::build(SetKind::Skew);
        let zero = [0.0; 9];
        let coeffs = skew.decompose_skew(&zero).unwrap();
        assert_eq!(coeffs, skew.base_coefficients());
        let rec = skew.reconstruct(&coeffs);
        assert!(frob(&rec) < 1e-14);

        let sym = DirectionSet::build(SetKind::Sym);
        let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let coeffs = sym.decompose_sym(&id).unwrap();
        assert_eq!(coeffs, sym.base_coefficients());
        let rec = sym.reconstruct(&coeffs);
        let mut diff = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                diff = diff.max((rec[3 * i + j] - want).abs());
            }
        }
        assert!(diff < 1e-13);
    }

    #[test]
    fn random_admissible_inputs_reconstruct_positively() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let skew = DirectionSet::build(SetKind::Skew);
        for _ in 0..2000 {
            let r = rng.gen_range(0.0..skew.radius());
            let m = random_skew(&mut rng, r);
            let coeffs = skew.decompose_skew(&m).unwrap();
            assert!(coeffs.iter().all(|&c| c > 0.0));
            let rec = skew.reconstruct(&coeffs);
            let err: f64 =
                rec.iter().zip(m.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(err < 1e-12, "err = {err:.3e}");
        }
        let sym = DirectionSet::build(SetKind::Sym);
        for _ in 0..2000 {
            let r = rng.gen_range(0.0..sym.radius());
            let dev = random_symdev(&mut rng, r);
            let mut rm = dev;
            rm[0] += 1.0;
            rm[4] += 1.0;
            rm[8] += 1.0;
            let coeffs = sym.decompose_sym(&rm).unwrap();
            assert!(coeffs.iter().all(|&c| c > 0.0));
            let rec = sym.reconstruct(&coeffs);
            let err: f64 =
                rec.iter().zip(rm.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(err < 1e-12, "err = {err:.3e}");
        }
    }

    #[test]
    fn positivity_floor_on_radius_sphere() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for set in [DirectionSet::build(SetKind::Skew), DirectionSet::build(SetKind::Sym)] {
            let floor = set.delta_pos();
            let r_test = 0.999 * set.radius();
            for _ in 0..2000 {
                let m = match set.kind() {
                    SetKind::Skew => random_skew(&mut rng, r_test),
                    SetKind::Sym => {
                        let mut r = random_symdev(&mut rng, r_test);
                        r[0] += 1.0;
                        r[4] += 1.0;
                        r[8] += 1.0;
                        r
                    }
                };
                let coeffs = match set.kind() {
                    SetKind::Skew => set.decompose_skew(&m).unwrap(),
                    SetKind::Sym => set.decompose_sym(&m).unwrap(),
                };
                // 0.9 safety factor leaves clear margin above the floor
                assert!(coeffs.iter().all(|&c| c >= floor));
            }
        }
    }

    #[test]
    fn out_of_ball_and_wrong_class_rejected() {
        let skew = DirectionSet::build(SetKind::Skew);
        let mut m = [0.0; 9];
        m[1] = 10.0 * skew.radius();
        m[3] = -m[1];
        assert!(matches!(skew.decompose_skew(&m), Err(Error::OutOfBall { .. })));
        let mut not_skew = [0.0; 9];
        not_skew[0] = 0.1;
        assert!(matches!(
            skew.decompose_skew(&not_skew),
            Err(Error::WrongSymmetryClass { .. })
        ));
    }

    #[test]
    fn affine_map_jacobian_matches_finite_differences() {
        // The coefficient map is affine; its (constant) Jacobian applied to
        // any direction must match a central difference to tight tolerance.
        let skew = DirectionSet::build(SetKind::Skew);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let m0 = random_skew(&mut rng, 0.3 * skew.radius());
        let dir = random_skew(&mut rng, 1.0);
        let h = 1e-4;
        let mut mp = m0;
        let mut mm = m0;
        for i in 0..9 {
            mp[i] += h * dir[i];
            mm[i] -= h * dir[i];
        }
        let cp = skew.decompose_skew(&mp).unwrap();
        let cm = skew.decompose_skew(&mm).unwrap();
        let lin = skew.coefficients_unchecked(&dir);
        let base = skew.base_coefficients();
        for k in 0..skew.len() {
            let fd = (cp[k] - cm[k]) / (2.0 * h);
            let exact = lin[k] - base[k];
            assert!((fd - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn affinity_of_opposite_inputs() {
        let skew = DirectionSet::build(SetKind::Skew);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let m = random_skew(&mut rng, 0.5 * skew.radius());
        let mneg: [f64; 9] = std::array::from_fn(|i| -m[i]);
        let cp = skew.decompose_skew(&m).unwrap();
        let cn = skew.decompose_skew(&mneg).unwrap();
        for k in 0..skew.len() {
            let avg = 0.5 * (cp[k] + cn[k]);
            assert!((avg - skew.base_coefficients()[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn export_table_has_rational_entries() {
        let sym = DirectionSet::build(SetKind::Sym);
        let table = sym.export_table();
        assert!(table.contains("/3"));
        assert_eq!(table.lines().count(), 13);
    }
}
