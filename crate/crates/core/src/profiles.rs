//! One-dimensional smooth profiles: the compactly supported bump underlying
//! every cutoff, its rescaled/periodized versions, the periodic potential
//! whose second derivative generates the shear profile, and the smoothstep
//! used by all temporal cutoffs. Everything here is analytic; derivative
//! formulas are closed-form so downstream time derivatives carry no finite
//! difference error.

use crate::error::Error;
use crate::Result;

/// Unnormalized bump `exp(-1/(x(1/2-x)))` supported on `(0, 1/2)`.
pub fn bump_half(x: f64) -> f64 {
    if x <= 0.0 || x >= 0.5 {
        return 0.0;
    }
    (-1.0 / (x * (0.5 - x))).exp()
}

/// Derivative of [`bump_half`].
pub fn bump_half_d1(x: f64) -> f64 {
    if x <= 0.0 || x >= 0.5 {
        return 0.0;
    }
    let u = x * (0.5 - x);
    let du = 0.5 - 2.0 * x;
    // d/dx exp(-1/u) = exp(-1/u) * du / u^2
    bump_half(x) * du / (u * u)
}

/// Unnormalized bump `exp(-1/(x(1-x)))` supported on `(0, 1)`, with first
/// and second derivatives; used as the periodic potential for the shear
/// profile.
pub fn bump_unit(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    (-1.0 / (x * (1.0 - x))).exp()
}

pub fn bump_unit_d1(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    let u = x * (1.0 - x);
    let du = 1.0 - 2.0 * x;
    bump_unit(x) * du / (u * u)
}

pub fn bump_unit_d2(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    let u = x * (1.0 - x);
    let du = 1.0 - 2.0 * x;
    let g = bump_unit(x);
    // with w = 1/u: f = e^{-w}, f'' = (w'^2 - w'') f
    let wp = -du / (u * u);
    let wpp = 2.0 / (u * u) + 2.0 * du * du / (u * u * u);
    (wp * wp - wpp) * g
}

/// Simpson quadrature on `[a, b]` with `2m` panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, m: usize) -> f64 {
    let n = 2 * m;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Smooth, L2-normalized cutoff profile supported in `[0, 1/2]`:
/// `phi = c * bump_half` with `int phi^2 = 1`.
#[derive(Debug, Clone)]
pub struct CutoffProfile {
    norm: f64,
}

impl CutoffProfile {
    pub fn new() -> Self {
        // int_0^{1/2} bump^2; integrand vanishes to all orders at endpoints
        let i2 = simpson(|x| bump_half(x) * bump_half(x), 0.0, 0.5, 1 << 14);
        Self { norm: 1.0 / i2.sqrt() }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.norm * bump_half(x)
    }

    #[inline]
    pub fn d1(&self, x: f64) -> f64 {
        self.norm * bump_half_d1(x)
    }

    /// Uniform samples over `[0, 1)` for export/plotting.
    pub fn sample(&self, m: usize) -> Vec<f64> {
        (0..m).map(|i| self.eval(i as f64 / m as f64)).collect()
    }
}

impl Default for CutoffProfile {
    fn default() -> Self {
        Self::new()
    }
}

/// Rescaled, 1-periodic profile `phi_r(x) = r^{-1/2} phi(x/r)`, supported
/// on `[0, r/2]` within each period; `int_0^1 phi_r^2 = 1`.
#[derive(Debug, Clone)]
pub struct PhiR {
    profile: CutoffProfile,
    r: f64,
}

impl PhiR {
    pub fn new(profile: &CutoffProfile, r: f64) -> Result<Self> {
        if !(r > 0.0 && r <= 0.5) {
            return Err(Error::InvalidParam(format!(
                "phi_r scale must lie in (0, 1/2], got {r}"
            )));
        }
        Ok(Self { profile: profile.clone(), r })
    }

    #[inline]
    pub fn r(&self) -> f64 {
        self.r
    }

    /// Periodic evaluation.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.rem_euclid(1.0);
        self.profile.eval(x / self.r) / self.r.sqrt()
    }

    #[inline]
    pub fn d1(&self, x: f64) -> f64 {
        let x = x.rem_euclid(1.0);
        self.profile.d1(x / self.r) / (self.r * self.r.sqrt())
    }

    /// `L^p[0,1]` norm by dense quadrature over the support.
    pub fn lp(&self, p: f64) -> f64 {
        if p.is_infinite() {
            let m = 1 << 16;
            return (0..=m)
                .map(|i| self.eval(self.r * 0.5 * i as f64 / m as f64).abs())
                .fold(0.0, f64::max);
        }
        simpson(|x| self.eval(x).abs().powf(p), 0.0, self.r * 0.5, 1 << 14).powf(1.0 / p)
    }

    /// `L^p[0,1]` norm of the derivative.
    pub fn d1_lp(&self, p: f64) -> f64 {
        if p.is_infinite() {
            let m = 1 << 16;
            return (0..=m)
                .map(|i| self.d1(self.r * 0.5 * i as f64 / m as f64).abs())
                .fold(0.0, f64::max);
        }
        simpson(|x| self.d1(x).abs().powf(p), 0.0, self.r * 0.5, 1 << 14).powf(1.0 / p)
    }

    /// Measure of the support within one period: `r/2`.
    pub fn support_measure(&self) -> f64 {
        self.r * 0.5
    }
}

/// `C^inf` step: 0 for `s <= 0`, 1 for `s >= 1`, strictly monotone between.
#[inline]
pub fn smoothstep(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let b = (-1.0 / s).exp();
    let c = (-1.0 / (1.0 - s)).exp();
    b / (b + c)
}

pub fn smoothstep_d1(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    let b = (-1.0 / s).exp();
    let c = (-1.0 / (1.0 - s)).exp();
    let bp = b / (s * s);
    let cp = -c / ((1.0 - s) * (1.0 - s));
    (bp * c - b * cp) / ((b + c) * (b + c))
}

pub fn smoothstep_d2(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    let b = (-1.0 / s).exp();
    let c = (-1.0 / (1.0 - s)).exp();
    let s2 = s * s;
    let t = 1.0 - s;
    let t2 = t * t;
    let bp = b / s2;
    let cp = -c / t2;
    let bpp = b * (1.0 / (s2 * s2) - 2.0 / (s2 * s));
    let cpp = c * (1.0 / (t2 * t2) - 2.0 / (t2 * t));
    let den = b + c;
    let num = bp * c - b * cp;
    let nump = bpp * c - b * cpp;
    (nump * den - 2.0 * num * (bp + cp)) / (den * den * den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_is_normalized_and_supported() {
        let phi = CutoffProfile::new();
        let i2 = simpson(|x| phi.eval(x) * phi.eval(x), 0.0, 0.5, 1 << 15);
        assert!((i2 - 1.0).abs() < 1e-10);
        assert_eq!(phi.eval(-0.1), 0.0);
        assert_eq!(phi.eval(0.5), 0.0);
        assert_eq!(phi.eval(0.7), 0.0);
        assert!(phi.eval(0.25) > 0.0);
    }

    #[test]
    fn phi_r_normalized_any_scale() {
        let phi = CutoffProfile::new();
        for r in [0.5, 0.25, 0.125, 1.0 / 64.0] {
            let pr = PhiR::new(&phi, r).unwrap();
            assert!((pr.lp(2.0) - 1.0).abs() < 1e-10, "r={r}");
            assert!(pr.support_measure() <= r / 2.0 + 1e-15);
        }
        assert!(PhiR::new(&phi, 0.6).is_err());
    }

    #[test]
    fn phi_r_l1_scales_like_sqrt_r() {
        // ||phi_r||_L1 = r^{1/2} ||phi||_L1
        let phi = CutoffProfile::new();
        let l1_half = PhiR::new(&phi, 0.5).unwrap().lp(1.0);
        for r in [0.25, 0.125, 1.0 / 16.0] {
            let l1 = PhiR::new(&phi, r).unwrap().lp(1.0);
            let predicted = l1_half * (r / 0.5).sqrt();
            assert!((l1 - predicted).abs() < 0.05 * predicted, "r={r}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let phi = CutoffProfile::new();
        let pr = PhiR::new(&phi, 0.25).unwrap();
        let h = 1e-6;
        for &x in &[0.03, 0.06, 0.1] {
            let fd = (pr.eval(x + h) - pr.eval(x - h)) / (2.0 * h);
            assert!((fd - pr.d1(x)).abs() < 1e-4 * (1.0 + pr.d1(x).abs()));
        }
        for &s in &[0.2, 0.5, 0.8] {
            let fd = (smoothstep(s + h) - smoothstep(s - h)) / (2.0 * h);
            assert!((fd - smoothstep_d1(s)).abs() < 1e-5);
            let fd2 = (smoothstep_d1(s + h) - smoothstep_d1(s - h)) / (2.0 * h);
            assert!((fd2 - smoothstep_d2(s)).abs() < 1e-4 * (1.0 + smoothstep_d2(s).abs()));
        }
        for &x in &[0.2, 0.4, 0.6, 0.8] {
            let fd = (bump_unit_d1(x + h) - bump_unit_d1(x - h)) / (2.0 * h);
            assert!((fd - bump_unit_d2(x)).abs() < 1e-4 * (1.0 + bump_unit_d2(x).abs()));
        }
    }

    #[test]
    fn smoothstep_endpoints_flat() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert!((smoothstep(0.5) - 0.5).abs() < 1e-15);
        assert!(smoothstep_d1(1e-9) < 1e-100);
        assert!(smoothstep_d1(1.0 - 1e-9) < 1e-100);
    }
}
