//! Temporal machinery: the gluing schedule with its interval families, the
//! partition-of-unity cutoffs, the perturbation window cutoff, the pointwise
//! amplitude cutoff, and the temporal concentration pair `g`/`h`.
//!
//! All cutoffs are built from one analytic smoothstep, so first and second
//! time derivatives are available in closed form; the downstream stress
//! assembly differentiates amplitudes by the chain rule instead of finite
//! differences.

use crate::error::Error;
use crate::profiles::{smoothstep, smoothstep_d1, smoothstep_d2, CutoffProfile, PhiR};
use crate::Result;

/// Interval bookkeeping for one gluing stage: `t_i = 2T + i tau`,
/// `I_i = [t_i + tau/3, t_i + 2 tau/3]`, `J_i = (t_i - tau/3, t_i + tau/3)`.
#[derive(Debug, Clone)]
pub struct GluingSchedule {
    t_cap: f64,
    tau: f64,
    count: usize,
}

impl GluingSchedule {
    /// Toy-mode schedule: `count` overlap windows, `tau = T/(count+1)`, so
    /// `t_count = 3T - tau` holds exactly.
    pub fn new(t_cap: f64, count: usize) -> Result<Self> {
        if !(t_cap > 0.0 && t_cap <= 0.25) {
            return Err(Error::InvalidParam(format!("T must lie in (0, 1/4], got {t_cap}")));
        }
        if count < 3 {
            return Err(Error::Schedule(format!(
                "need at least 3 windows so tau <= T/4, got {count}"
            )));
        }
        let tau = t_cap / (count + 1) as f64;
        let s = Self { t_cap, tau, count };
        // t_{N_q} = 3T - tau must close exactly
        let gap = (s.t(count) - (3.0 * t_cap - tau)).abs();
        if gap > 1e-12 {
            return Err(Error::Schedule(format!("interval arithmetic inconsistent: gap {gap:.3e}")));
        }
        Ok(s)
    }

    #[inline]
    pub fn t_cap(&self) -> f64 {
        self.t_cap
    }

    #[inline]
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Number of overlap windows `N_q`.
    #[inline]
    pub fn count(&self) -> usize {
        self.count
    }

    #[inline]
    pub fn t(&self, i: usize) -> f64 {
        2.0 * self.t_cap + i as f64 * self.tau
    }

    /// Overlap interval `I_i`, `1 <= i <= count`.
    pub fn overlap_interval(&self, i: usize) -> (f64, f64) {
        assert!((1..=self.count).contains(&i));
        (self.t(i) + self.tau / 3.0, self.t(i) + 2.0 * self.tau / 3.0)
    }

    /// Exact-flow interval `J_i`, `1 <= i <= count`.
    pub fn exact_interval(&self, i: usize) -> (f64, f64) {
        assert!((1..=self.count).contains(&i));
        (self.t(i) - self.tau / 3.0, self.t(i) + self.tau / 3.0)
    }

    /// True when `t` lies in some overlap interval; returns its index.
    pub fn overlap_index(&self, t: f64) -> Option<usize> {
        for i in 1..=self.count {
            let (a, b) = self.overlap_interval(i);
            if t >= a && t <= b {
                return Some(i);
            }
        }
        None
    }

    /// Plateau on which the glued field equals the left input flow.
    pub fn left_plateau_end(&self) -> f64 {
        2.0 * self.t_cap + 4.0 * self.tau / 3.0
    }

    /// Start of the plateau on which the glued field equals the right flow.
    pub fn right_plateau_start(&self) -> f64 {
        3.0 * self.t_cap - self.tau / 3.0
    }
}

/// The partition of unity `{chi_i}_{i=1..count+1}` subordinate to a
/// schedule, with analytic first and second derivatives.
///
/// `chi_1` falls on `I_1`; `chi_i` (interior) rises on `I_{i-1}`, is 1 on
/// `J_i` and falls on `I_i`; `chi_{count+1}` rises on `I_count`. Ramps are
/// complementary smoothsteps, so the family sums to 1 identically.
#[derive(Debug, Clone)]
pub struct ChiFamily {
    schedule: GluingSchedule,
}

impl ChiFamily {
    pub fn new(schedule: &GluingSchedule) -> Self {
        Self { schedule: schedule.clone() }
    }

    fn ramp(&self, i: usize, t: f64) -> f64 {
        let (a, b) = self.schedule.overlap_interval(i);
        smoothstep((t - a) / (b - a))
    }

    fn ramp_d1(&self, i: usize, t: f64) -> f64 {
        let (a, b) = self.schedule.overlap_interval(i);
        smoothstep_d1((t - a) / (b - a)) / (b - a)
    }

    fn ramp_d2(&self, i: usize, t: f64) -> f64 {
        let (a, b) = self.schedule.overlap_interval(i);
        smoothstep_d2((t - a) / (b - a)) / ((b - a) * (b - a))
    }

    /// `chi_i(t)` for `1 <= i <= count + 1`.
    pub fn chi(&self, i: usize, t: f64) -> f64 {
        let c = self.schedule.count();
        assert!((1..=c + 1).contains(&i));
        if i == 1 {
            1.0 - self.ramp(1, t)
        } else if i == c + 1 {
            self.ramp(c, t)
        } else {
            // rises on I_{i-1}, falls on I_i
            self.ramp(i - 1, t) - self.ramp(i, t)
        }
    }

    pub fn chi_d1(&self, i: usize, t: f64) -> f64 {
        let c = self.schedule.count();
        if i == 1 {
            -self.ramp_d1(1, t)
        } else if i == c + 1 {
            self.ramp_d1(c, t)
        } else {
            self.ramp_d1(i - 1, t) - self.ramp_d1(i, t)
        }
    }

    pub fn chi_d2(&self, i: usize, t: f64) -> f64 {
        let c = self.schedule.count();
        if i == 1 {
            -self.ramp_d2(1, t)
        } else if i == c + 1 {
            self.ramp_d2(c, t)
        } else {
            self.ramp_d2(i - 1, t) - self.ramp_d2(i, t)
        }
    }

    /// Indices with `chi_i(t)` possibly nonzero (at most two).
    pub fn active(&self, t: f64) -> Vec<usize> {
        let c = self.schedule.count();
        match self.schedule.overlap_index(t) {
            Some(i) => vec![i, i + 1],
            None => {
                // plateau or exact window: exactly one cutoff equals 1
                for i in 1..=c + 1 {
                    if self.chi(i, t) > 0.5 {
                        return vec![i];
                    }
                }
                unreachable!("partition of unity must cover [0,1]")
            }
        }
    }
}

/// Perturbation window cutoff `eta`: supported in
/// `(2T + 7 tau/6, 3T - tau/6)`, identically 1 on
/// `[2T + 4 tau/3, 3T - tau/3]`.
#[derive(Debug, Clone)]
pub struct EtaCutoff {
    rise_a: f64,
    rise_b: f64,
    fall_a: f64,
    fall_b: f64,
}

impl EtaCutoff {
    pub fn new(schedule: &GluingSchedule) -> Self {
        let t_cap = schedule.t_cap();
        let tau = schedule.tau();
        Self {
            rise_a: 2.0 * t_cap + 7.0 * tau / 6.0,
            rise_b: 2.0 * t_cap + 4.0 * tau / 3.0,
            fall_a: 3.0 * t_cap - tau / 3.0,
            fall_b: 3.0 * t_cap - tau / 6.0,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        smoothstep((t - self.rise_a) / (self.rise_b - self.rise_a))
            * (1.0 - smoothstep((t - self.fall_a) / (self.fall_b - self.fall_a)))
    }

    pub fn d1(&self, t: f64) -> f64 {
        let r = smoothstep((t - self.rise_a) / (self.rise_b - self.rise_a));
        let rp = smoothstep_d1((t - self.rise_a) / (self.rise_b - self.rise_a))
            / (self.rise_b - self.rise_a);
        let f = 1.0 - smoothstep((t - self.fall_a) / (self.fall_b - self.fall_a));
        let fp = -smoothstep_d1((t - self.fall_a) / (self.fall_b - self.fall_a))
            / (self.fall_b - self.fall_a);
        rp * f + r * fp
    }

    pub fn support(&self) -> (f64, f64) {
        (self.rise_a, self.fall_b)
    }

    pub fn plateau(&self) -> (f64, f64) {
        (self.rise_b, self.fall_a)
    }
}

/// Pointwise amplitude cutoff: 1 on `[0,1]`, the identity on `[2,inf)`,
/// and a smooth blend on `(1,2)` satisfying `z <= 2 chi(z) <= 4z`.
pub fn amp_chi(z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    if z <= 1.0 {
        1.0
    } else if z >= 2.0 {
        z
    } else {
        let s = smoothstep(z - 1.0);
        (1.0 - s) + s * z
    }
}

/// Derivative of [`amp_chi`].
pub fn amp_chi_d1(z: f64) -> f64 {
    if z <= 1.0 {
        0.0
    } else if z >= 2.0 {
        1.0
    } else {
        let s = smoothstep(z - 1.0);
        let sp = smoothstep_d1(z - 1.0);
        sp * (z - 1.0) + s
    }
}

/// Temporal concentration profile `g` (period `1/periods`, one rescaled
/// bump per period, `int_0^1 g^2 = 1`) and its zero-mean antiderivative
/// companion `h` with `|h| <= 1/periods`.
#[derive(Debug, Clone)]
pub struct TemporalProfile {
    lambda: u64,
    sigma: f64,
    periods: u64,
    phi_r: PhiR,
    /// cumulative integral of `phi_r^2` over the bump support
    cdf: Vec<f64>,
    cdf_step: f64,
}

impl TemporalProfile {
    /// `g_{(2,sigma)}(t) = phi_{lambda^{-2}}(round(lambda^sigma) t)`.
    ///
    /// The oscillation count is rounded to an integer so `[0,1]` holds a
    /// whole number of periods, making `||g||_{L2[0,1]} = 1` exact and `h`
    /// periodic.
    pub fn new(cutoff: &CutoffProfile, lambda: u64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma < 2.0) {
            return Err(Error::InvalidParam(format!("sigma must lie in (0,2), got {sigma}")));
        }
        let lam = lambda as f64;
        let periods = (lam.powf(sigma).round() as u64).max(1);
        let r = lam.powi(-2);
        if r > 0.5 {
            return Err(Error::InvalidParam("lambda too small for temporal concentration".into()));
        }
        let phi_r = PhiR::new(cutoff, r)?;
        // dense cumulative quadrature of phi_r^2 over [0, r/2]
        let m = 1 << 15;
        let step = (r * 0.5) / m as f64;
        let mut cdf = Vec::with_capacity(m + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        let mut prev = 0.0f64;
        for j in 1..=m {
            let x = j as f64 * step;
            let v = phi_r.eval(x).powi(2);
            acc += 0.5 * step * (prev + v);
            prev = v;
            cdf.push(acc);
        }
        // normalize the cumulative so that total mass is exactly 1; the
        // profile itself is normalized to 1e-10, this keeps h periodic to
        // round-off
        let total = acc;
        for v in cdf.iter_mut() {
            *v /= total;
        }
        Ok(Self { lambda, sigma, periods, phi_r, cdf, cdf_step: step })
    }

    #[inline]
    pub fn periods(&self) -> u64 {
        self.periods
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lambda(&self) -> u64 {
        self.lambda
    }

    /// Width of one concentration bump in `t`.
    pub fn bump_width(&self) -> f64 {
        self.phi_r.r() * 0.5 / self.periods as f64
    }

    #[inline]
    pub fn g(&self, t: f64) -> f64 {
        self.phi_r.eval((self.periods as f64 * t).rem_euclid(1.0))
    }

    #[inline]
    pub fn g_d1(&self, t: f64) -> f64 {
        self.periods as f64 * self.phi_r.d1((self.periods as f64 * t).rem_euclid(1.0))
    }

    /// `P g^2 = g^2 - 1` (the mean of `g^2` over `[0,1]` is exactly 1).
    #[inline]
    pub fn pg2(&self, t: f64) -> f64 {
        let g = self.g(t);
        g * g - 1.0
    }

    /// Mass of `phi_r^2` accumulated up to phase `u` in one period.
    fn mass(&self, u: f64) -> f64 {
        let half = self.phi_r.r() * 0.5;
        if u <= 0.0 {
            0.0
        } else if u >= half {
            1.0
        } else {
            let j = (u / self.cdf_step).floor() as usize;
            let frac = u / self.cdf_step - j as f64;
            let j1 = (j + 1).min(self.cdf.len() - 1);
            self.cdf[j] * (1.0 - frac) + self.cdf[j1] * frac
        }
    }

    /// `h(t)`: the rescaled zero-mean antiderivative of `P g^2`; periodic
    /// with period `1/periods` and `|h| <= 1/periods <= 2 lambda^{-sigma}`.
    pub fn h(&self, t: f64) -> f64 {
        let u = (self.periods as f64 * t).rem_euclid(1.0);
        (self.mass(u) - u) / self.periods as f64
    }

    /// `d/dt h = P g^2` (exact, used by the temporal-corrector assembly).
    #[inline]
    pub fn h_d1(&self, t: f64) -> f64 {
        self.pg2(t)
    }

    /// Upper bound `2 lambda^{-sigma}` from the construction.
    pub fn h_linf_bound(&self) -> f64 {
        2.0 * (self.lambda as f64).powf(-self.sigma)
    }

    /// `L^p[0,1]` norm of `d^m g / dt^m` via the 1D profile.
    pub fn g_lp(&self, deriv: usize, p: f64) -> f64 {
        match deriv {
            0 => self.phi_r.lp(p),
            1 => self.periods as f64 * self.phi_r.d1_lp(p),
            _ => panic!("only m = 0, 1 supported"),
        }
    }
}

/// Stage-1 cutoff: 1 on `(-inf, 2T + 2 tau]`, falling to 0 at `3T - tau`.
#[derive(Debug, Clone)]
pub struct InitialCutoff {
    a: f64,
    b: f64,
}

impl InitialCutoff {
    pub fn new(t_cap: f64, tau: f64) -> Result<Self> {
        let a = 2.0 * t_cap + 2.0 * tau;
        let b = 3.0 * t_cap - tau;
        if b <= a {
            return Err(Error::Schedule("initial cutoff window is empty".into()));
        }
        Ok(Self { a, b })
    }

    pub fn eval(&self, t: f64) -> f64 {
        1.0 - smoothstep((t - self.a) / (self.b - self.a))
    }

    pub fn d1(&self, t: f64) -> f64 {
        -smoothstep_d1((t - self.a) / (self.b - self.a)) / (self.b - self.a)
    }

    pub fn window(&self) -> (f64, f64) {
        (self.a, self.b)
    }
}
