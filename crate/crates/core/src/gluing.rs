//! Gluing: replace an approximate relaxed solution by a patchwork of exact
//! MHD flows joined with the temporal partition of unity, concentrating the
//! stress in the overlap intervals.
//!
//! The runner streams forward in time: it launches a solver for flow `i`
//! from the input state at `t_i`, keeps at most the two flows whose cutoffs
//! are active, and produces the glued quintuple together with its exact
//! time derivatives (cutoff derivatives are analytic, flow derivatives are
//! the MHD tendency evaluated on the sampled state, stress derivatives
//! follow by the chain rule).

use crate::error::Error;
use crate::field::{Field, Rank, SymFlag};
use crate::grid::Grid3;
use crate::mhd::{nonlinear_rhs, pressure_of, MhdSolver, MhdState, SolverConfig};
use crate::ops::{self, DiffOp};
use crate::timecut::{ChiFamily, GluingSchedule, InitialCutoff};
use crate::Result;
use std::collections::BTreeMap;

/// A relaxed-system state that can be evaluated at arbitrary times: the
/// input contract of one construction stage.
pub trait StageInput: Send + Sync {
    fn grid(&self) -> &Grid3;
    /// Dissipation flag of the system this state solves (1 or 0).
    fn nu(&self) -> f64;
    /// `(v, b)` at time `t`.
    fn fields(&self, t: f64) -> Result<(Field, Field)>;
    /// `(dv/dt, db/dt)` at time `t`.
    fn tendencies(&self, t: f64) -> Result<(Field, Field)>;
    fn pressure(&self, t: f64) -> Result<Field>;
    /// `(R, M)` at time `t`.
    fn stresses(&self, t: f64) -> Result<(Field, Field)>;
}

/// Classification of a sample time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowClass {
    /// Plateau or exact interval: the glued state is an exact flow, the
    /// glued stresses vanish.
    Exact,
    /// Inside overlap interval `I_i` (stress supported here).
    Overlap(usize),
}

/// The glued quintuple and its time derivatives at one instant.
#[derive(Debug, Clone)]
pub struct GluedSample {
    pub t: f64,
    pub class: WindowClass,
    pub v: Field,
    pub b: Field,
    pub p: Field,
    pub r: Field,
    pub m: Field,
    pub dv: Field,
    pub db: Field,
    pub dr: Field,
    pub dm: Field,
    /// Largest spatial mean discarded when projecting a flow difference
    /// (must stay at round-off; logged, never silently dropped).
    pub discarded_mean: f64,
}

/// One exact flow with cubic-Hermite dense output between solver steps.
struct DenseFlow {
    solver: MhdSolver,
    prev: Option<(f64, Field, Field, Field, Field)>, // t, v, b, dv, db
    t_end: f64,
}

impl DenseFlow {
    fn new(init: MhdState, cfg: SolverConfig, t_end: f64) -> Self {
        Self { solver: MhdSolver::new(init, cfg), prev: None, t_end }
    }

    fn advance(&mut self, t: f64) -> Result<()> {
        if t > self.t_end + 1e-12 {
            return Err(Error::Solver(format!("flow queried past its window end {t}")));
        }
        while self.solver.t < t - 1e-12 {
            let (dv, db) = self.solver.tendency()?;
            self.prev =
                Some((self.solver.t, self.solver.v.clone(), self.solver.b.clone(), dv, db));
            self.solver.step()?;
        }
        Ok(())
    }

    /// Evaluate `(v, b, dv, db)` at `t` up to the current solver time
    /// (cubic Hermite between the last two steps; tendencies re-evaluated
    /// on the interpolated state so they are consistent with the PDE).
    fn eval(&mut self, t: f64, nu: f64) -> Result<(Field, Field, Field, Field)> {
        self.advance(t)?;
        if (t - self.solver.t).abs() < 1e-12 {
            let (dv, db) = self.solver.tendency()?;
            return Ok((self.solver.v.clone(), self.solver.b.clone(), dv, db));
        }
        let (t0, v0, b0, dv0, db0) = self
            .prev
            .as_ref()
            .ok_or_else(|| Error::Solver(format!("dense output missing history at t = {t}")))?;
        let t1 = self.solver.t;
        let h = t1 - t0;
        let s = (t - t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let (dv1, db1) = self.solver.tendency()?;
        let blend = |f0: &Field, d0: &Field, f1: &Field, d1: &Field| -> Result<Field> {
            let mut out = f0.clone();
            out.scale(h00);
            out.add_scaled(d0, h10 * h)?;
            out.add_scaled(f1, h01)?;
            out.add_scaled(d1, h11 * h)?;
            Ok(out)
        };
        let v = blend(v0, dv0, &self.solver.v, &dv1)?;
        let b = blend(b0, db0, &self.solver.b, &db1)?;
        let (mut fv, mut fb) = nonlinear_rhs(&v, &b)?;
        if nu != 0.0 {
            fv.add_scaled(&ops::differential_op(&v, DiffOp::Laplacian)?, nu)?;
            fb.add_scaled(&ops::differential_op(&b, DiffOp::Laplacian)?, nu)?;
        }
        Ok((v, b, fv, fb))
    }
}

/// Streams the glued stage over `[0, 1]`; sample times must be
/// non-decreasing.
pub struct GluingRunner<'a> {
    input: &'a dyn StageInput,
    schedule: GluingSchedule,
    chi: ChiFamily,
    solver_dt: f64,
    flows: BTreeMap<usize, DenseFlow>,
    last_t: f64,
}

impl<'a> GluingRunner<'a> {
    pub fn new(
        input: &'a dyn StageInput,
        schedule: &GluingSchedule,
        solver_dt: f64,
    ) -> Result<Self> {
        if solver_dt <= 0.0 || solver_dt > schedule.tau() / 12.0 {
            return Err(Error::InvalidParam(format!(
                "solver dt {} must be positive and resolve tau/12 = {}",
                solver_dt,
                schedule.tau() / 12.0
            )));
        }
        Ok(Self {
            input,
            schedule: schedule.clone(),
            chi: ChiFamily::new(schedule),
            solver_dt,
            flows: BTreeMap::new(),
            last_t: -1.0,
        })
    }

    pub fn schedule(&self) -> &GluingSchedule {
        &self.schedule
    }

    /// Flow `i` (`0 <= i <= count`) evaluated at `t`, with tendencies.
    /// Flows 0 and `count` are the input state itself (the input is an
    /// exact flow on its plateaus); interior flows launch from the input
    /// at `t_i` and are integrated over `[t_i, t_{i+2}]`.
    fn flow(&mut self, i: usize, t: f64) -> Result<(Field, Field, Field, Field)> {
        let count = self.schedule.count();
        if i == 0 || i == count {
            let (v, b) = self.input.fields(t)?;
            let (dv, db) = self.input.tendencies(t)?;
            return Ok((v, b, dv, db));
        }
        if !self.flows.contains_key(&i) {
            let t_i = self.schedule.t(i);
            if t < t_i - 1e-12 {
                return Err(Error::Solver(format!("flow {i} queried before its launch time")));
            }
            let (v, b) = self.input.fields(t_i)?;
            let init = MhdState::new(t_i, v, b)?;
            let cfg = SolverConfig::new(self.input.nu(), self.solver_dt)?;
            let window_end = self.schedule.t((i + 2).min(count + 1)) + 1e-9;
            self.flows.insert(i, DenseFlow::new(init, cfg, window_end));
        }
        let nu = self.input.nu();
        self.flows.get_mut(&i).unwrap().eval(t, nu)
    }

    fn flow_pressure(&mut self, i: usize, t: f64) -> Result<Field> {
        let count = self.schedule.count();
        if i == 0 || i == count {
            return self.input.pressure(t);
        }
        let (v, b, _, _) = self.flow(i, t)?;
        pressure_of(&v, &b)
    }

    /// Drop flows whose windows ended before `t`.
    fn retire(&mut self, t: f64) {
        let sched = self.schedule.clone();
        let count = sched.count();
        self.flows.retain(|&i, _| sched.t((i + 2).min(count + 1)) >= t - 1e-9);
    }

    /// Evaluate the glued quintuple at `t` (non-decreasing across calls).
    pub fn sample(&mut self, t: f64) -> Result<GluedSample> {
        if t < self.last_t - 1e-12 {
            return Err(Error::Solver("gluing samples must be non-decreasing in t".into()));
        }
        self.last_t = t;
        self.retire(t);
        let grid = self.input.grid().clone();

        match self.schedule.overlap_index(t) {
            None => {
                let act = self.chi.active(t);
                debug_assert_eq!(act.len(), 1);
                let i = act[0] - 1; // chi_{i+1} multiplies flow i
                let (v, b, dv, db) = self.flow(i, t)?;
                let p = self.flow_pressure(i, t)?;
                let zero_t = Field::zero(&grid, Rank::Tensor);
                Ok(GluedSample {
                    t,
                    class: WindowClass::Exact,
                    v,
                    b,
                    p,
                    r: zero_t.clone(),
                    m: zero_t.clone(),
                    dv,
                    db,
                    dr: zero_t.clone(),
                    dm: zero_t,
                    discarded_mean: 0.0,
                })
            }
            Some(i) => {
                // I_i: flows i-1 and i blend through chi_i (falling)
                let c = self.chi.chi(i, t);
                let c1 = self.chi.chi_d1(i, t);
                let c2 = self.chi.chi_d2(i, t);
                let (va, ba, dva, dba) = self.flow(i - 1, t)?;
                let (vb, bb, dvb, dbb) = self.flow(i, t)?;
                let pa = self.flow_pressure(i - 1, t)?;
                let pb = self.flow_pressure(i, t)?;

                // differences u = v_{i-1} - v_i, e = b_{i-1} - b_i
                let mut u = va.clone();
                u.add_scaled(&vb, -1.0)?;
                let mut e = ba.clone();
                e.add_scaled(&bb, -1.0)?;
                let mut du = dva.clone();
                du.add_scaled(&dvb, -1.0)?;
                let mut de = dba.clone();
                de.add_scaled(&dbb, -1.0)?;
                let mut discarded = u.project_mean_free().max(e.project_mean_free());
                discarded = discarded.max(du.project_mean_free()).max(de.project_mean_free());

                // glued fields: v = chi v_{i-1} + (1-chi) v_i
                let mut v = vb.clone();
                v.add_scaled(&u, c)?;
                let mut b = bb.clone();
                b.add_scaled(&e, c)?;
                let mut dv = dvb.clone();
                dv.add_scaled(&du, c)?;
                dv.add_scaled(&u, c1)?;
                let mut db = dbb.clone();
                db.add_scaled(&de, c)?;
                db.add_scaled(&e, c1)?;

                let ru = ops::inverse_divergence_sym(&u)?;
                let rdu = ops::inverse_divergence_sym(&du)?;
                let rae = ops::inverse_divergence_antisym(&e)?;
                let rade = ops::inverse_divergence_antisym(&de)?;
                // materialize the four difference fields once, build every
                // quadratic combination pointwise
                let ur = u.to_real_all();
                let er = e.to_real_all();
                let dur = du.to_real_all();
                let der = de.to_real_all();
                let len = grid.len();
                let tens = |f: &dyn Fn(usize, usize, usize) -> f64| -> Result<Field> {
                    let mut comps = vec![vec![0.0; len]; 9];
                    for i in 0..3 {
                        for j in 0..3 {
                            let c = &mut comps[3 * i + j];
                            for (idx, v) in c.iter_mut().enumerate() {
                                *v = f(i, j, idx);
                            }
                        }
                    }
                    Field::from_real(&grid, Rank::Tensor, &comps)
                };
                let uu = ops::deviatoric(&tens(&|i, j, x| ur[i][x] * ur[j][x])?)?;
                let ee = ops::deviatoric(&tens(&|i, j, x| er[i][x] * er[j][x])?)?;
                let duu = ops::deviatoric(&tens(&|i, j, x| {
                    dur[i][x] * ur[j][x] + ur[i][x] * dur[j][x]
                })?)?;
                let dee = ops::deviatoric(&tens(&|i, j, x| {
                    der[i][x] * er[j][x] + er[i][x] * der[j][x]
                })?)?;
                let cc = c * (1.0 - c);
                let dcc = c1 * (1.0 - 2.0 * c);

                // R = chi' R(u) - chi(1-chi)(dev(u⊗u) - dev(e⊗e))
                let mut r = ru.clone();
                r.scale(c1);
                r.add_scaled(&uu, -cc)?;
                r.add_scaled(&ee, cc)?;
                let mut dr = ru;
                dr.scale(c2);
                dr.add_scaled(&rdu, c1)?;
                dr.add_scaled(&uu, -dcc)?;
                dr.add_scaled(&duu, -cc)?;
                dr.add_scaled(&ee, dcc)?;
                dr.add_scaled(&dee, cc)?;

                // M = chi' Ra(e) - chi(1-chi)(e⊗u - u⊗e)
                let skew = tens(&|i, j, x| er[i][x] * ur[j][x] - ur[i][x] * er[j][x])?;
                let dskew = tens(&|i, j, x| {
                    der[i][x] * ur[j][x] + er[i][x] * dur[j][x]
                        - dur[i][x] * er[j][x]
                        - ur[i][x] * der[j][x]
                })?;
                let mut m = rae.clone();
                m.scale(c1);
                m.add_scaled(&skew, -cc)?;
                let mut dm = rae;
                dm.scale(c2);
                dm.add_scaled(&rade, c1)?;
                dm.add_scaled(&skew, -dcc)?;
                dm.add_scaled(&dskew, -cc)?;

                // pressure blend plus the trace compensation
                let mag: Vec<f64> = (0..len)
                    .map(|x| {
                        er[0][x] * er[0][x] + er[1][x] * er[1][x] + er[2][x] * er[2][x]
                            - ur[0][x] * ur[0][x]
                            - ur[1][x] * ur[1][x]
                            - ur[2][x] * ur[2][x]
                    })
                    .collect();
                let mag = Field::from_real(&grid, Rank::Scalar, &[mag])?;
                let mut p = pa;
                p.scale(c);
                p.add_scaled(&pb, 1.0 - c)?;
                p.add_scaled(&mag, cc / 3.0)?;
                p.project_mean_free();

                r.assert_flag(SymFlag::Symmetric);
                r.assert_flag(SymFlag::TraceFree);
                m.assert_flag(SymFlag::Antisymmetric);

                Ok(GluedSample {
                    t,
                    class: WindowClass::Overlap(i),
                    v,
                    b,
                    p,
                    r,
                    m,
                    dv,
                    db,
                    dr,
                    dm,
                    discarded_mean: discarded,
                })
            }
        }
    }
}

/// A closed-form exact MHD flow.
pub trait AnalyticFlow: Send + Sync {
    fn fields(&self, t: f64) -> (Field, Field);
    fn tendencies(&self, t: f64) -> (Field, Field);
    fn pressure(&self, t: f64) -> Field;
}

/// The shear fixture as an [`AnalyticFlow`].
pub struct ShearFlowExact {
    pub grid: Grid3,
    pub amplitude: f64,
    pub nu: f64,
}

impl AnalyticFlow for ShearFlowExact {
    fn fields(&self, t: f64) -> (Field, Field) {
        let st = crate::mhd::exact_shear_solution(&self.grid, self.amplitude, t, self.nu);
        (st.v, st.b)
    }

    fn tendencies(&self, t: f64) -> (Field, Field) {
        let st = crate::mhd::exact_shear_solution(&self.grid, self.amplitude, t, self.nu);
        let mut v = st.v;
        let mut b = st.b;
        let c = -4.0 * std::f64::consts::PI * std::f64::consts::PI * self.nu;
        v.scale(c);
        b.scale(c);
        (v, b)
    }

    fn pressure(&self, _t: f64) -> Field {
        Field::zero(&self.grid, Rank::Scalar)
    }
}

/// Stage-1 construction: glue two exact flows with the single falling
/// cutoff (1 up to `2T + 2 tau_1`, 0 from `3T - tau_1`). Implements
/// [`StageInput`], so it seeds the pipeline.
pub struct InitialGlue {
    grid: Grid3,
    nu: f64,
    flow1: Box<dyn AnalyticFlow>,
    flow2: Box<dyn AnalyticFlow>,
    cutoff: InitialCutoff,
}

impl InitialGlue {
    pub fn new(
        grid: &Grid3,
        nu: f64,
        flow1: Box<dyn AnalyticFlow>,
        flow2: Box<dyn AnalyticFlow>,
        t_cap: f64,
        tau1: f64,
    ) -> Result<Self> {
        Ok(Self {
            grid: grid.clone(),
            nu,
            flow1,
            flow2,
            cutoff: InitialCutoff::new(t_cap, tau1)?,
        })
    }

    pub fn cutoff_window(&self) -> (f64, f64) {
        self.cutoff.window()
    }

    fn diff(&self, t: f64) -> Result<(Field, Field)> {
        let (v1, b1) = self.flow1.fields(t);
        let (v2, b2) = self.flow2.fields(t);
        let mut u = v1;
        u.add_scaled(&v2, -1.0)?;
        let mut e = b1;
        e.add_scaled(&b2, -1.0)?;
        u.project_mean_free();
        e.project_mean_free();
        Ok((u, e))
    }
}

impl StageInput for InitialGlue {
    fn grid(&self) -> &Grid3 {
        &self.grid
    }

    fn nu(&self) -> f64 {
        self.nu
    }

    fn fields(&self, t: f64) -> Result<(Field, Field)> {
        let c = self.cutoff.eval(t);
        let (v1, b1) = self.flow1.fields(t);
        let (v2, b2) = self.flow2.fields(t);
        let mut v = v2;
        let mut b = b2;
        let mut u = v1;
        u.add_scaled(&v, -1.0)?;
        let mut e = b1;
        e.add_scaled(&b, -1.0)?;
        v.add_scaled(&u, c)?;
        b.add_scaled(&e, c)?;
        Ok((v, b))
    }

    fn tendencies(&self, t: f64) -> Result<(Field, Field)> {
        let c = self.cutoff.eval(t);
        let c1 = self.cutoff.d1(t);
        let (dv1, db1) = self.flow1.tendencies(t);
        let (dv2, db2) = self.flow2.tendencies(t);
        let (u, e) = self.diff(t)?;
        let mut dv = dv2;
        let mut du = dv1;
        du.add_scaled(&dv, -1.0)?;
        dv.add_scaled(&du, c)?;
        dv.add_scaled(&u, c1)?;
        let mut db = db2;
        let mut de = db1;
        de.add_scaled(&db, -1.0)?;
        db.add_scaled(&de, c)?;
        db.add_scaled(&e, c1)?;
        Ok((dv, db))
    }

    fn pressure(&self, t: f64) -> Result<Field> {
        let c = self.cutoff.eval(t);
        let cc = c * (1.0 - c);
        let (u, e) = self.diff(t)?;
        let mut p = self.flow1.pressure(t);
        p.scale(c);
        p.add_scaled(&self.flow2.pressure(t), 1.0 - c)?;
        p.add_scaled(&ops::magnitude_sq(&u)?, -cc / 3.0)?;
        p.add_scaled(&ops::magnitude_sq(&e)?, cc / 3.0)?;
        p.project_mean_free();
        Ok(p)
    }

    fn stresses(&self, t: f64) -> Result<(Field, Field)> {
        let c = self.cutoff.eval(t);
        let c1 = self.cutoff.d1(t);
        let cc = c * (1.0 - c);
        if c1 == 0.0 && cc == 0.0 {
            let z = Field::zero(&self.grid, Rank::Tensor);
            return Ok((z.clone(), z));
        }
        let (u, e) = self.diff(t)?;
        let mut r = ops::inverse_divergence_sym(&u)?;
        r.scale(c1);
        r.add_scaled(&ops::deviatoric(&ops::outer_product(&u, &u)?)?, -cc)?;
        r.add_scaled(&ops::deviatoric(&ops::outer_product(&e, &e)?)?, cc)?;
        let mut m = ops::inverse_divergence_antisym(&e)?;
        m.scale(c1);
        m.add_scaled(&ops::outer_product(&e, &u)?, -cc)?;
        m.add_scaled(&ops::outer_product(&u, &e)?, cc)?;
        r.assert_flag(SymFlag::Symmetric);
        r.assert_flag(SymFlag::TraceFree);
        m.assert_flag(SymFlag::Antisymmetric);
        Ok((r, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stress;

    fn grid() -> Grid3 {
        Grid3::new(16).unwrap()
    }

    #[test]
    fn initial_glue_of_identical_flows_has_zero_stress() {
        let g = grid();
        let f1 = Box::new(ShearFlowExact { grid: g.clone(), amplitude: 1.0, nu: 1.0 });
        let f2 = Box::new(ShearFlowExact { grid: g.clone(), amplitude: 1.0, nu: 1.0 });
        let ig = InitialGlue::new(&g, 1.0, f1, f2, 0.25, 0.0625).unwrap();
        for t in [0.1, 0.6, 0.9] {
            let (r, m) = ig.stresses(t).unwrap();
            assert!(r.l2() < 1e-12 && m.l2() < 1e-12);
        }
    }

    #[test]
    fn initial_glue_endpoint_identities_and_support() {
        let g = grid();
        let t_cap = 0.25;
        let tau = 0.0625;
        let f1 = Box::new(ShearFlowExact { grid: g.clone(), amplitude: 1.0, nu: 1.0 });
        let f2 = Box::new(ShearFlowExact { grid: g.clone(), amplitude: 2.0, nu: 1.0 });
        let ig = InitialGlue::new(&g, 1.0, f1, f2, t_cap, tau).unwrap();
        let (a, b) = ig.cutoff_window();
        // left plateau: equals flow 1 bitwise
        let t = a - 0.01;
        let (v, _) = ig.fields(t).unwrap();
        let want = crate::mhd::exact_shear_solution(&g, 1.0, t, 1.0);
        let mut d = v;
        d.add_scaled(&want.v, -1.0).unwrap();
        assert!(d.l2() == 0.0);
        // right plateau: equals flow 2
        let t = b + 0.01;
        let (v, _) = ig.fields(t).unwrap();
        let want = crate::mhd::exact_shear_solution(&g, 2.0, t, 1.0);
        let mut d = v;
        d.add_scaled(&want.v, -1.0).unwrap();
        assert!(d.l2() == 0.0);
        // stresses supported only inside the window
        let (r, m) = ig.stresses(a - 1e-3).unwrap();
        assert!(r.l2() == 0.0 && m.l2() == 0.0);
        let (r, m) = ig.stresses(0.5 * (a + b)).unwrap();
        assert!(r.l2() > 0.0 && m.l2() > 0.0);
        r.verify_flags(1e-12).unwrap();
        m.verify_flags(1e-12).unwrap();
    }

    #[test]
    fn initial_glue_satisfies_relaxed_system() {
        // residual of the relaxed system on the stage-1 quintuple, using
        // analytic time derivatives: vanishes to spectral round-off
        let g = grid();
        let f1 = Box::new(ShearFlowExact { grid: g.clone(), amplitude: 1.0, nu: 1.0 });
        let f2 = Box::new(ShearFlowExact { grid: g.clone(), amplitude: 2.0, nu: 1.0 });
        let ig = InitialGlue::new(&g, 1.0, f1, f2, 0.25, 0.0625).unwrap();
        for t in [0.58, 0.65] {
            let (v, b) = ig.fields(t).unwrap();
            let (dv, db) = ig.tendencies(t).unwrap();
            let p = ig.pressure(t).unwrap();
            let (r, m) = ig.stresses(t).unwrap();
            let (em, ei) = stress::relaxed_residual(&v, &b, &dv, &db, &p, &r, &m, 1.0).unwrap();
            let scale = v.l2().max(b.l2()).max(1e-30);
            assert!(em.l2() / scale < 1e-9, "momentum residual {}", em.l2() / scale);
            assert!(ei.l2() / scale < 1e-9, "induction residual {}", ei.l2() / scale);
        }
    }

    #[test]
    fn glue_runner_exact_windows_match_flows() {
        let g = grid();
        let f1 = Box::new(ShearFlowExact { grid: g.clone(), amplitude: 1.0, nu: 1.0 });
        let f2 = Box::new(ShearFlowExact { grid: g.clone(), amplitude: 2.0, nu: 1.0 });
        let ig = InitialGlue::new(&g, 1.0, f1, f2, 0.25, 0.0625).unwrap();
        let sched = GluingSchedule::new(0.25, 3).unwrap();
        let mut runner = GluingRunner::new(&ig, &sched, sched.tau() / 256.0).unwrap();
        // left plateau sample equals the input bitwise
        let t0 = 0.1;
        let s = runner.sample(t0).unwrap();
        assert_eq!(s.class, WindowClass::Exact);
        let (vin, _) = ig.fields(t0).unwrap();
        let mut d = s.v.clone();
        d.add_scaled(&vin, -1.0).unwrap();
        assert!(d.l2() == 0.0);
        assert!(s.r.l2() == 0.0);
        // inside J_2 the glued field is an exact flow and stress vanishes
        let (ja, jb) = sched.exact_interval(2);
        let s = runner.sample(0.5 * (ja + jb)).unwrap();
        assert_eq!(s.class, WindowClass::Exact);
        assert!(s.r.l2() == 0.0 && s.m.l2() == 0.0);
        // overlap sample: right symmetry classes, divergence-free fields
        let (ia, ib) = sched.overlap_interval(2);
        let s = runner.sample(0.5 * (ia + ib)).unwrap();
        assert!(matches!(s.class, WindowClass::Overlap(2)));
        s.r.verify_flags(1e-10).unwrap();
        s.m.verify_flags(1e-10).unwrap();
        assert!(s.v.flag_residue(SymFlag::DivergenceFree) < 1e-10);
        assert!(s.b.flag_residue(SymFlag::DivergenceFree) < 1e-10);
        assert!(s.discarded_mean < 1e-12);
    }

    #[test]
    fn glued_quintuple_satisfies_relaxed_system_on_overlap() {
        let g = grid();
        let f1 = Box::new(ShearFlowExact { grid: g.clone(), amplitude: 1.0, nu: 1.0 });
        let f2 = Box::new(ShearFlowExact { grid: g.clone(), amplitude: 2.0, nu: 1.0 });
        let ig = InitialGlue::new(&g, 1.0, f1, f2, 0.25, 0.0625).unwrap();
        let sched = GluingSchedule::new(0.25, 3).unwrap();
        let mut runner = GluingRunner::new(&ig, &sched, sched.tau() / 512.0).unwrap();
        let (ia, ib) = sched.overlap_interval(1);
        let t = 0.5 * (ia + ib);
        let s = runner.sample(t).unwrap();
        let (em, ei) =
            stress::relaxed_residual(&s.v, &s.b, &s.dv, &s.db, &s.p, &s.r, &s.m, 1.0).unwrap();
        let scale = s.v.l2().max(s.b.l2()).max(1e-30);
        // analytic-in-time derivatives make the residual spectrally exact
        assert!(em.l2() / scale < 1e-8, "momentum {}", em.l2() / scale);
        assert!(ei.l2() / scale < 1e-8, "induction {}", ei.l2() / scale);
    }
}
