//! The parameter cascade: exponents derived from `(eps, p)` and the
//! per-stage frequencies, time scales and stress budgets.
//!
//! Faithful mode follows the cascade exactly; its frequencies are
//! astronomically large (`b ~ 10^6`, `lambda_q = ceil(a^{b^q})`), so
//! faithful parameters are computed and reported in log10 and no field
//! construction is attempted with them. Toy mode records explicit overrides
//! for everything a desk-scale run needs.

use crate::error::Error;
use crate::Result;

pub const C0: f64 = 4096.0; // 2^12

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Faithful,
    Toy,
}

/// Explicit desk-scale overrides.
#[derive(Debug, Clone)]
pub struct ToyOverrides {
    /// Per-stage frequencies `lambda_q`, strictly increasing, `q = 1, 2, ...`.
    pub lambdas: Vec<u64>,
    /// Overlap-window counts per gluing stage (paper: `lambda_q^15 - 1`).
    pub windows: Vec<usize>,
    pub gamma: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// Toy exponent for the stress budgets `delta_q`.
    pub beta: f64,
    /// Optional explicit `delta_q` list overriding the formula.
    pub deltas: Option<Vec<f64>>,
}

impl Default for ToyOverrides {
    fn default() -> Self {
        Self {
            lambdas: vec![3, 10],
            windows: vec![3, 7],
            gamma: 0.5,
            sigma: 0.75,
            alpha: 0.05,
            beta: 0.5,
            deltas: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParameterSet {
    pub eps: f64,
    pub p: f64,
    pub t_cap: f64,
    pub a: f64,
    pub mode: Mode,
    pub gamma: f64,
    pub sigma: f64,
    pub b: f64,
    pub beta: f64,
    pub alpha: f64,
    pub toy: Option<ToyOverrides>,
}

/// Derive the cascade. Faithful exponents come from the minimum rule; toy
/// mode validates and records its overrides.
pub fn derive_parameters(
    eps: f64,
    p: f64,
    t_cap: f64,
    a: f64,
    mode: Mode,
    overrides: Option<ToyOverrides>,
) -> Result<ParameterSet> {
    if !(1.0..2.0).contains(&p) {
        return Err(Error::InvalidParam(format!("p must lie in [1,2), got {p}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParam(format!("eps must lie in (0,1), got {eps}")));
    }
    if !(t_cap > 0.0 && t_cap <= 0.25) {
        return Err(Error::InvalidParam(format!("T must lie in (0, 1/4], got {t_cap}")));
    }
    if a <= 1.0 {
        return Err(Error::InvalidParam("a must exceed 1".into()));
    }
    let gamma_f = (4.0 / (3.0 * p) - 2.0 / 3.0).min(2.0 * eps / 3.0).min(1.0 / 24.0);
    let sigma_f = gamma_f / 16.0;
    let b = 4.0 * C0 / sigma_f;
    let beta_f = 1.0 / (b * b * b);
    let alpha_f = beta_f / 16.0;

    match mode {
        Mode::Faithful => {
            if overrides.is_some() {
                return Err(Error::InvalidParam("faithful mode takes no overrides".into()));
            }
            Ok(ParameterSet {
                eps,
                p,
                t_cap,
                a,
                mode,
                gamma: gamma_f,
                sigma: sigma_f,
                b,
                beta: beta_f,
                alpha: alpha_f,
                toy: None,
            })
        }
        Mode::Toy => {
            let ov = overrides.unwrap_or_default();
            if !(ov.gamma > 0.0 && ov.gamma < 1.0) {
                return Err(Error::InvalidParam(format!(
                    "toy gamma must lie in (0,1), got {}",
                    ov.gamma
                )));
            }
            if !(ov.sigma > 0.0 && ov.sigma < 1.0) {
                return Err(Error::InvalidParam(format!(
                    "toy sigma must lie in (0,1), got {}",
                    ov.sigma
                )));
            }
            if ov.lambdas.len() < 2 {
                return Err(Error::InvalidParam("toy mode needs at least lambda_1, lambda_2".into()));
            }
            if !ov.lambdas.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::InvalidParam("toy lambdas must increase strictly".into()));
            }
            if ov.windows.is_empty() || ov.windows.iter().any(|&w| w < 3) {
                return Err(Error::InvalidParam("toy window counts must be >= 3".into()));
            }
            // endpoint-identity nesting between consecutive stages needs
            // 2 tau_{q+1} <= 7 tau_q / 6
            for w in ov.windows.windows(2) {
                let tau0 = t_cap / (w[0] + 1) as f64;
                let tau1 = t_cap / (w[1] + 1) as f64;
                if 2.0 * tau1 > 7.0 * tau0 / 6.0 + 1e-12 {
                    return Err(Error::InvalidParam(format!(
                        "window counts {} -> {} break endpoint nesting (need 2 tau' <= 7 tau/6)",
                        w[0], w[1]
                    )));
                }
            }
            if let Some(d) = &ov.deltas {
                if d.len() < ov.lambdas.len() || d.iter().any(|&x| x <= 0.0) {
                    return Err(Error::InvalidParam(
                        "toy deltas must be positive, one per stage".into(),
                    ));
                }
            }
            Ok(ParameterSet {
                eps,
                p,
                t_cap,
                a,
                mode,
                gamma: ov.gamma,
                sigma: ov.sigma,
                b,
                beta: ov.beta,
                alpha: ov.alpha,
                toy: Some(ov),
            })
        }
    }
}

impl ParameterSet {
    /// `lambda_q` for a toy run (`q >= 1`).
    pub fn lambda(&self, q: usize) -> Result<u64> {
        match &self.toy {
            Some(ov) => ov
                .lambdas
                .get(q - 1)
                .copied()
                .ok_or_else(|| Error::InvalidParam(format!("no toy lambda for stage {q}"))),
            None => Err(Error::InvalidParam(
                "faithful lambdas are astronomically large; use lambda_log10".into(),
            )),
        }
    }

    /// `log10(lambda_q) = b^q log10(a)` in faithful mode (the ceiling is
    /// negligible at this magnitude).
    pub fn lambda_log10(&self, q: usize) -> f64 {
        self.b.powi(q as i32) * self.a.log10()
    }

    /// `log10(tau_q)` in faithful mode: `tau_q = T lambda_q^{-15}`.
    pub fn tau_log10(&self, q: usize) -> f64 {
        self.t_cap.log10() - 15.0 * self.lambda_log10(q)
    }

    /// `log10(delta_q)`: `delta_q = lambda_2^{3 beta} lambda_q^{-2 beta}`.
    pub fn delta_log10(&self, q: usize) -> f64 {
        3.0 * self.beta * self.lambda_log10(2) - 2.0 * self.beta * self.lambda_log10(q)
    }

    /// Window count of stage `q` in toy mode.
    pub fn windows(&self, q: usize) -> Result<usize> {
        let ov = self.toy.as_ref().ok_or_else(|| {
            Error::InvalidParam("faithful window count lambda_q^15 - 1 is not materializable".into())
        })?;
        let idx = (q - 1).min(ov.windows.len() - 1);
        Ok(ov.windows[idx])
    }

    /// `tau_q` in toy mode.
    pub fn tau(&self, q: usize) -> Result<f64> {
        Ok(self.t_cap / (self.windows(q)? + 1) as f64)
    }

    /// Stress budget `delta_q` (toy formula or explicit override).
    pub fn delta(&self, q: usize) -> Result<f64> {
        let ov = self
            .toy
            .as_ref()
            .ok_or_else(|| Error::InvalidParam("faithful deltas via delta_log10".into()))?;
        if let Some(d) = &ov.deltas {
            return Ok(d[q - 1]);
        }
        let l2 = ov.lambdas[1.min(ov.lambdas.len() - 1)] as f64;
        let lq = *ov
            .lambdas
            .get(q - 1)
            .ok_or_else(|| Error::InvalidParam(format!("no toy lambda for stage {q}")))?
            as f64;
        Ok(l2.powf(3.0 * self.beta) * lq.powf(-2.0 * self.beta))
    }
}
