//! Flat `key = value` run configuration: one line per key, `#` comments.
//! The committed desk-scale acceptance configurations live in `configs/`.

use crate::error::Error;
use crate::params::{derive_parameters, Mode, ParameterSet, ToyOverrides};
use crate::stage::StageConfig;
use crate::Result;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    map: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("key {key}: not a number: {v:?}"))),
        }
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("key {key}: not an integer: {v:?}"))),
        }
    }

    pub fn u64_list(&self, key: &str, default: &[u64]) -> Result<Vec<u64>> {
        match self.map.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("key {key}: bad list entry {x:?}")))
                })
                .collect(),
        }
    }

    pub fn usize_list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.map.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("key {key}: bad list entry {x:?}")))
                })
                .collect(),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("key {key}: bad list entry {x:?}")))
                })
                .collect::<std::result::Result<Vec<f64>, Error>>()
                .map(Some),
        }
    }

    /// Assemble the parameter cascade from this config.
    pub fn parameters(&self) -> Result<ParameterSet> {
        let eps = self.f64("eps", 0.5)?;
        let p = self.f64("p", 1.0)?;
        let t_cap = self.f64("T", 0.25)?;
        let a = self.f64("a", 2.0)?;
        let mode = match self.get("mode").unwrap_or("toy") {
            "toy" => Mode::Toy,
            "faithful" => Mode::Faithful,
            other => return Err(Error::Config(format!("mode must be toy|faithful, got {other}"))),
        };
        if mode == Mode::Faithful {
            return derive_parameters(eps, p, t_cap, a, mode, None);
        }
        let defaults = ToyOverrides::default();
        let ov = ToyOverrides {
            lambdas: self.u64_list("lambdas", &defaults.lambdas)?,
            windows: self.usize_list("windows", &defaults.windows)?,
            gamma: self.f64("gamma", defaults.gamma)?,
            sigma: self.f64("sigma", defaults.sigma)?,
            alpha: self.f64("alpha", defaults.alpha)?,
            beta: self.f64("beta", defaults.beta)?,
            deltas: self.f64_list("deltas")?,
        };
        derive_parameters(eps, p, t_cap, a, mode, Some(ov))
    }

    /// Stage knobs.
    pub fn stage_config(&self, q: usize) -> Result<StageConfig> {
        let d = StageConfig::default();
        Ok(StageConfig {
            q,
            solver_steps_per_tau: self.usize("solver_steps_per_tau", d.solver_steps_per_tau)?,
            slow_per_tau: self.usize("slow_per_tau", d.slow_per_tau)?,
            bump_samples: self.usize("bump_samples", d.bump_samples)?,
            ledger_stride: self.usize("ledger_stride", d.ledger_stride)?,
            margin: self.f64("margin", d.margin)?,
            plateau_samples: self.usize("plateau_samples", d.plateau_samples)?,
            residual_span: match (self.get("residual_from"), self.get("residual_to")) {
                (Some(a), Some(b)) => Some((
                    a.parse().map_err(|_| Error::Config("bad residual_from".into()))?,
                    b.parse().map_err(|_| Error::Config("bad residual_to".into()))?,
                )),
                _ => d.residual_span,
            },
            lean_norms: self.usize("lean_norms", 0)? != 0,
        })
    }

    pub fn grid_n(&self) -> Result<usize> {
        self.usize("resolution", 32)
    }

    pub fn nu(&self) -> Result<f64> {
        self.f64("nu", 0.0)
    }

    pub fn seed(&self) -> Result<u64> {
        Ok(self.usize("seed", 7)? as u64)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.map {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_typed_getters() {
        let cfg = RunConfig::parse(
            "# comment\nmode = toy\nlambdas = 4, 10\nwindows=3\ngamma = 0.5\nresolution = 64\n",
        )
        .unwrap();
        assert_eq!(cfg.grid_n().unwrap(), 64);
        assert_eq!(cfg.u64_list("lambdas", &[]).unwrap(), vec![4, 10]);
        let params = cfg.parameters().unwrap();
        assert_eq!(params.lambda(2).unwrap(), 10);
        assert!(RunConfig::parse("no_equals_here\n").is_err());
    }

    #[test]
    fn defaults_apply() {
        let cfg = RunConfig::parse("").unwrap();
        let params = cfg.parameters().unwrap();
        assert_eq!(params.lambda(1).unwrap(), 3);
        let sc = cfg.stage_config(1).unwrap();
        assert_eq!(sc.q, 1);
    }
}
