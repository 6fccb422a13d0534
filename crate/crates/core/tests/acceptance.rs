//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Desk-scale runs are shared across criteria through lazy statics.
//!
//! The committed configurations live in `configs/`; every tolerance is
//! pinned here in code.

use std::sync::OnceLock;
use torus_mhd::config::RunConfig;
use torus_mhd::field::{Rank, SymFlag};
use torus_mhd::geometry::{DirectionSet, SetKind};
use torus_mhd::gluing::{GluingRunner, InitialGlue, ShearFlowExact};
use torus_mhd::grid::Grid3;
use torus_mhd::mhd::{exact_shear_solution, shear_nonlinear_residual, MhdSolver, SolverConfig};
use torus_mhd::ops::{self, DiffOp};
use torus_mhd::profiles::{CutoffProfile, PhiR};
use torus_mhd::shear::ShearFlow;
use torus_mhd::stage::{run_stage, seed_generic, seed_wiggle_shear, StageReport};
use torus_mhd::stress::ResidualAccumulator;
use torus_mhd::timecut::{GluingSchedule, TemporalProfile};

fn config_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn verdict(criterion: usize, pass: bool, detail: &str) {
    println!("ACCEPTANCE {criterion}: {} -- {detail}", if pass { "PASS" } else { "FAIL" });
}

fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Shared desk-scale stage run (criteria 6, 7, 8, 10).
fn desk_run() -> &'static (StageReport, f64) {
    static RUN: OnceLock<(StageReport, f64)> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = RunConfig::load(&config_path("desk.cfg")).expect("desk config");
        let params = cfg.parameters().expect("desk params");
        let grid = Grid3::new(cfg.grid_n().unwrap()).unwrap();
        let tau1 = params.tau(1).unwrap();
        let seed = seed_wiggle_shear(
            &grid,
            cfg.nu().unwrap(),
            params.t_cap,
            tau1,
            cfg.f64("seed_amp_left", 1.0).unwrap(),
            cfg.f64("seed_amp_right", 2.0).unwrap(),
            cfg.f64("seed_zeta", 0.5).unwrap(),
            cfg.f64("seed_omega", 240.0).unwrap(),
        )
        .expect("desk seed");
        let scfg = cfg.stage_config(1).unwrap();
        let report = run_stage(&seed, &params, &scfg).expect("desk stage run");
        (report, params.p)
    })
}

#[test]
fn accept_01_inverse_divergence_round_trips() {
    let grid = Grid3::new(32).unwrap();
    let mut worst_sym = 0.0f64;
    let mut worst_anti = 0.0f64;
    let mut worst_class = 0.0f64;
    let start = std::time::Instant::now();
    for seed in 0..100u64 {
        let v = ops::random_field(&grid, Rank::Vector, 1000 + seed);
        let r = ops::inverse_divergence_sym(&v).unwrap();
        let mut back = ops::differential_op(&r, DiffOp::Div).unwrap();
        back.add_scaled(&v, -1.0).unwrap();
        worst_sym = worst_sym.max(back.l2() / v.l2());
        worst_class = worst_class
            .max(r.flag_residue(SymFlag::Symmetric))
            .max(r.flag_residue(SymFlag::TraceFree));

        let u = ops::leray_project(&ops::random_field(&grid, Rank::Vector, 2000 + seed)).unwrap();
        let a = ops::inverse_divergence_antisym(&u).unwrap();
        let mut back = ops::differential_op(&a, DiffOp::Div).unwrap();
        back.add_scaled(&u, -1.0).unwrap();
        worst_anti = worst_anti.max(back.l2() / u.l2());
        worst_class = worst_class.max(a.flag_residue(SymFlag::Antisymmetric));
    }
    let pass = worst_sym <= 1e-10 && worst_anti <= 1e-10 && worst_class <= 1e-12;
    verdict(
        1,
        pass,
        &format!(
            "round trips (sym {worst_sym:.2e}, antisym {worst_anti:.2e}) <= 1e-10, classes {worst_class:.2e} <= 1e-12, {:?}",
            start.elapsed()
        ),
    );
    assert!(pass);
}

#[test]
fn accept_02_geometric_lemmas() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
    let skew = DirectionSet::build(SetKind::Skew);
    let sym = DirectionSet::build(SetKind::Sym);
    let mut worst = 0.0f64;
    let mut min_coeff = f64::INFINITY;
    for _ in 0..10_000 {
        // random admissible skew input
        let (a, b, c): (f64, f64, f64) =
            (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let norm = (2.0 * (a * a + b * b + c * c)).sqrt().max(1e-12);
        let scale = rng.gen_range(0.0..0.999 * skew.radius()) / norm;
        let m = [
            0.0, a * scale, b * scale,
            -a * scale, 0.0, c * scale,
            -b * scale, -c * scale, 0.0,
        ];
        let coeffs = skew.decompose_skew(&m).unwrap();
        min_coeff = min_coeff.min(coeffs.iter().copied().fold(f64::INFINITY, f64::min));
        let rec = skew.reconstruct(&coeffs);
        let err: f64 =
            rec.iter().zip(m.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        worst = worst.max(err);

        // random admissible symmetric input near Id
        let mut s = [0.0; 9];
        for i in 0..3 {
            for j in i..3 {
                let v = rng.gen_range(-1.0..1.0);
                s[3 * i + j] = v;
                s[3 * j + i] = v;
            }
        }
        let f: f64 = s.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let scale = rng.gen_range(0.0..0.999 * sym.radius()) / f;
        let mut r = [0.0; 9];
        for i in 0..9 {
            r[i] = s[i] * scale;
        }
        r[0] += 1.0;
        r[4] += 1.0;
        r[8] += 1.0;
        let coeffs = sym.decompose_sym(&r).unwrap();
        min_coeff = min_coeff.min(coeffs.iter().copied().fold(f64::INFINITY, f64::min));
        let rec = sym.reconstruct(&coeffs);
        let err: f64 =
            rec.iter().zip(r.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        worst = worst.max(err);
    }
    let pass = worst <= 1e-12 && min_coeff > 0.0;
    verdict(
        2,
        pass,
        &format!(
            "reconstruction {worst:.2e} <= 1e-12, min coefficient {min_coeff:.3e} > 0; certified eps_b = {:.4}, eps_u = {:.4}",
            skew.radius(),
            sym.radius()
        ),
    );
    assert!(pass);
}

#[test]
fn accept_03_building_block_scaling() {
    let gamma = 0.5;
    let cutoff = CutoffProfile::new();
    let skew = DirectionSet::build(SetKind::Skew);
    let triple = &skew.triples()[0];
    let grid = Grid3::new(512).unwrap();
    let lams = [32u64, 64, 128];
    let mut all_ok = true;
    let mut details = String::new();
    for m in [0usize, 1] {
        for p in [1.0, 2.0, f64::INFINITY] {
            let mut pts = Vec::new();
            let mut want = 0.0;
            for &lam in &lams {
                let blk = ShearFlow::new(&grid, triple, gamma, lam, &cutoff).unwrap();
                pts.push(((lam as f64).ln(), blk.phi_lp_continuum(m, p).ln()));
                want = blk.predicted_exponent(m, p);
            }
            let slope = fit_slope(&pts);
            let ok = if want.abs() > 1e-12 {
                (slope - want).abs() <= 0.10 * want.abs()
            } else {
                slope.abs() < 0.02
            };
            all_ok &= ok;
            details.push_str(&format!("D^{m} L{p}: {slope:.3} vs {want:.3}; "));
        }
    }
    // support measure slope within 10% of -gamma
    let mut pts = Vec::new();
    for &lam in &lams {
        let blk = ShearFlow::new(&grid, triple, gamma, lam, &cutoff).unwrap();
        pts.push(((lam as f64).ln(), blk.support_fraction().ln()));
    }
    let slope = fit_slope(&pts);
    let ok_support = (slope + gamma).abs() <= 0.10 * gamma;
    all_ok &= ok_support;
    details.push_str(&format!("support: {slope:.3} vs {:.3}; ", -gamma));
    // h bound as an exact inequality over the sweep
    let sigma = 0.25;
    let mut ok_h = true;
    for &lam in &lams {
        let g = TemporalProfile::new(&cutoff, lam, sigma).unwrap();
        let period = 1.0 / g.periods() as f64;
        let mut hmax = 0.0f64;
        for j in 0..20_000 {
            hmax = hmax.max(g.h(period * j as f64 / 20_000.0).abs());
        }
        ok_h &= hmax <= g.h_linf_bound();
    }
    all_ok &= ok_h;
    details.push_str(&format!("|h| <= 2 lambda^-sigma: {ok_h}"));
    verdict(3, all_ok, &details);
    assert!(all_ok);
}

#[test]
fn accept_04_exact_flow_solver() {
    let grid = Grid3::new(16).unwrap();
    // fixture reproduction at t = 0.1
    let init = exact_shear_solution(&grid, 1.0, 0.0, 1.0);
    let cfg = SolverConfig::new(1.0, 1.0 / 640.0).unwrap();
    let mut solver = MhdSolver::new(init, cfg);
    solver.advance_to(0.1).unwrap();
    let want = exact_shear_solution(&grid, 1.0, 0.1, 1.0);
    let mut dv = solver.v.clone();
    dv.add_scaled(&want.v, -1.0).unwrap();
    let mut db = solver.b.clone();
    db.add_scaled(&want.b, -1.0).unwrap();
    let fixture_err = dv.l2().max(db.l2());

    // viscous energy inequality on a generic state, every step
    let v = ops::leray_project(&ops::random_field(&grid, Rank::Vector, 5001)).unwrap();
    let b = ops::leray_project(&ops::random_field(&grid, Rank::Vector, 5002)).unwrap();
    let mut sv = v;
    sv.scale(0.3);
    let mut sb = b;
    sb.scale(0.3);
    let init = torus_mhd::mhd::MhdState::new(0.0, sv, sb).unwrap();
    let mut solver = MhdSolver::new(init, SolverConfig::new(1.0, 5e-4).unwrap());
    let mut prev = solver.state().unwrap().energy();
    let mut energy_ok = true;
    for _ in 0..400 {
        solver.step().unwrap();
        let e = solver.state().unwrap().energy();
        energy_ok &= e <= prev + 1e-10;
        prev = e;
    }

    let nl = shear_nonlinear_residual(&grid, 1.0, 0.05, 1.0).unwrap();
    let pass = fixture_err <= 1e-6 && energy_ok && nl <= 1e-12;
    verdict(
        4,
        pass,
        &format!("fixture L2 err {fixture_err:.2e} <= 1e-6, energy inequality {energy_ok}, nonlinear residual {nl:.2e} <= 1e-12"),
    );
    assert!(pass);
}

#[test]
fn accept_05_gluing() {
    // toy 3-window glue of two distinct viscous shear flows at T = 0.05
    // (fields remain O(0.01) across the construction window). The exact
    // flows are closed-form, so the integrator reproduces them to round-off
    // and the residual certificate measures its own documented
    // time-differentiation order (4th-order central differences).
    let grid = Grid3::new(32).unwrap();
    let t_cap = 0.05;
    let sched = GluingSchedule::new(t_cap, 3).unwrap();
    let tau = sched.tau();
    let make_input = || {
        InitialGlue::new(
            &grid,
            1.0,
            Box::new(ShearFlowExact { grid: grid.clone(), amplitude: 1.0, nu: 1.0 }),
            Box::new(ShearFlowExact { grid: grid.clone(), amplitude: 2.0, nu: 1.0 }),
            t_cap,
            tau,
        )
        .unwrap()
    };

    // support/symmetry scan over the full active window
    let input = make_input();
    let mut runner = GluingRunner::new(&input, &sched, tau / 48.0).unwrap();
    let mut support_err = 0.0f64;
    let mut class_err = 0.0f64;
    for j in 0..=(4 * 48) {
        let t = 2.0 * t_cap + j as f64 * tau / 48.0;
        let t = t.min(3.0 * t_cap);
        let s = runner.sample(t).unwrap();
        if s.class == torus_mhd::gluing::WindowClass::Exact {
            support_err = support_err.max(s.r.l2()).max(s.m.l2());
        } else {
            class_err = class_err
                .max(s.r.flag_residue(SymFlag::Symmetric))
                .max(s.r.flag_residue(SymFlag::TraceFree))
                .max(s.m.flag_residue(SymFlag::Antisymmetric));
        }
    }

    // residual certificate around the stress-carrying window, solver steps
    // aligned with the sample grid so no dense-output interpolation enters
    let residual_at = |steps_per_tau: usize| -> f64 {
        let input = make_input();
        let mut runner = GluingRunner::new(&input, &sched, tau / steps_per_tau as f64).unwrap();
        let dt_res = tau / steps_per_tau as f64;
        let mut acc = ResidualAccumulator::new(1.0, dt_res);
        let t0 = sched.t(3);
        let steps = steps_per_tau / 2;
        for j in 0..=steps {
            let t = t0 + j as f64 * dt_res;
            let s = runner.sample(t).unwrap();
            acc.push(t, s.v, s.b, s.p, s.r, s.m).unwrap();
        }
        let (rm, ri) = acc.rms();
        rm.max(ri)
    };
    let res_coarse = residual_at(256);
    let res_fine = residual_at(512);
    let order = (res_coarse / res_fine).log2();
    let pass = support_err <= 1e-10
        && class_err <= 1e-10
        && res_fine <= 1e-6
        && (3.0..=5.0).contains(&order);
    verdict(
        5,
        pass,
        &format!(
            "stress off overlaps {support_err:.2e} <= 1e-10, classes {class_err:.2e}, residual {res_fine:.2e} <= 1e-6, dt-refinement order {order:.2} (documented differentiation order 4; the integrator is exact on the closed-form pair)"
        ),
    );
    assert!(pass);
}

#[test]
fn accept_06_amplitude_reconstruction() {
    let (report, _) = desk_run();
    let pass = report.recon_skew_max <= 1e-10 && report.recon_sym_max <= 1e-10;
    verdict(
        6,
        pass,
        &format!(
            "skew reconstruction {:.2e} <= 1e-10, symmetric reconstruction {:.2e} <= 1e-10 over eta-plateau samples",
            report.recon_skew_max, report.recon_sym_max
        ),
    );
    assert!(pass);
}

#[test]
fn accept_07_corrector_identities() {
    let (report, _) = desk_run();
    let pass = report.div_wpwc_max <= 1e-8
        && report.div_dpdc_max <= 1e-8
        && report.div_wt_max <= 1e-10
        && report.div_dt_max <= 1e-10
        && report.support_violation == 0.0;
    verdict(
        7,
        pass,
        &format!(
            "div(wp+wc) {:.2e} <= 1e-8, div(dp+dc) {:.2e} <= 1e-8, div wt {:.2e}, div dt {:.2e} <= 1e-10, temporal support violation {:.2e} (exact)",
            report.div_wpwc_max,
            report.div_dpdc_max,
            report.div_wt_max,
            report.div_dt_max,
            report.support_violation
        ),
    );
    assert!(pass);
}

#[test]
fn accept_08_cancellation_ledgers() {
    let (report, _) = desk_run();
    let skew = report.ledger_max.get("skew_lowfreq_cancellation").copied().unwrap_or(f64::NAN);
    let temporal = report.ledger_max.get("temporal_cancellation").copied().unwrap_or(f64::NAN);
    let reynolds =
        report.ledger_max.get("reynolds_lowfreq_cancellation").copied().unwrap_or(f64::NAN);
    let pass = skew <= 1e-8 && temporal <= 1e-8 && reynolds <= 1e-8;
    verdict(
        8,
        pass,
        &format!("skew {skew:.2e}, temporal {temporal:.2e}, reynolds {reynolds:.2e} all <= 1e-8"),
    );
    assert!(pass);
}

#[test]
fn accept_09_residual_refinement() {
    let cfg = RunConfig::load(&config_path("refine.cfg")).expect("refine config");
    let params = cfg.parameters().unwrap();
    let tau1 = params.tau(1).unwrap();

    let run_at = |n: usize, refine: usize| -> StageReport {
        let grid = Grid3::new(n).unwrap();
        let seed = seed_generic(
            &grid,
            cfg.nu().unwrap(),
            params.t_cap,
            tau1,
            cfg.f64("seed_amp", 0.6).unwrap(),
            cfg.f64("seed_mix_amp", 0.25).unwrap(),
            cfg.f64("seed_omega", 240.0).unwrap(),
            cfg.seed().unwrap(),
        )
        .unwrap();
        let mut scfg = cfg.stage_config(1).unwrap();
        scfg.solver_steps_per_tau *= refine;
        scfg.slow_per_tau *= refine;
        run_stage(&seed, &params, &scfg).unwrap()
    };

    let coarse = run_at(32, 1);
    let fine = run_at(64, 2);
    let r1 = coarse.residual_rms_mom.max(coarse.residual_rms_ind);
    let r2 = fine.residual_rms_mom.max(fine.residual_rms_ind);
    let order = (r1 / r2).log2();
    // documented scheme order 2, +-30%
    let pass = (1.4..=2.6).contains(&order) && r2 < r1;
    verdict(
        9,
        pass,
        &format!(
            "residual rms {r1:.3e} (N=32) -> {r2:.3e} (N=64, dt/2): order {order:.2} within 2 +- 30%"
        ),
    );
    assert!(pass);
}

#[test]
fn accept_10_stress_comparison_and_decorrelation() {
    // clause 2: decorrelation gap slope over the lambda sweep
    let slope_for_p = |p: f64| -> (f64, f64) {
        let m = 1 << 21;
        let phi = CutoffProfile::new();
        // witness pair: rough-C1 small-norm f against a thin tall bump g,
        // where the lemma's bound is saturated
        let f_eval = |x: f64| -> f64 {
            let mut v = 0.3;
            let mut amp = 0.05;
            let mut freq = 1.0;
            for _ in 0..10 {
                v += amp * (2.0 * std::f64::consts::PI * freq * x).cos();
                amp *= 0.5_f64.powf(1.05);
                freq *= 2.0;
            }
            v
        };
        let g_prof = PhiR::new(&phi, 0.01).unwrap();
        let gp = g_prof.lp(p);
        let fp = {
            let mut acc = 0.0;
            for j in 0..m {
                let x = (j as f64 + 0.5) / m as f64;
                acc += f_eval(x).abs().powf(p) / m as f64;
            }
            acc.powf(1.0 / p)
        };
        let mut pts = Vec::new();
        let mut cmax = 0.0f64;
        for lam in [2u64, 4, 8, 16] {
            let mut acc = 0.0;
            for j in 0..m {
                let x = (j as f64 + 0.5) / m as f64;
                let val = f_eval(x) * g_prof.eval((lam as f64 * x).rem_euclid(1.0));
                acc += val.abs().powf(p) / m as f64;
            }
            let norm = acc.powf(1.0 / p);
            let gap = (norm - fp * gp).abs();
            pts.push(((lam as f64).ln(), gap.ln()));
            // C fit for the lemma inequality gap <= C lam^{-1/p} |f|_C1 |g|_p
            let c1 = 1.0; // |f|_C1 is order one for the witness; fold into C
            cmax = cmax.max(gap * (lam as f64).powf(1.0 / p) / (c1 * gp));
        }
        (fit_slope(&pts), cmax)
    };
    let (s1, c1) = slope_for_p(1.0);
    let (s2, c2) = slope_for_p(2.0);
    let deco_ok = (s1 + 1.0).abs() <= 0.15 && (s2 + 0.5).abs() <= 0.15 * 0.5;

    // clause 1: stress comparison at the committed configuration
    let (report, _) = desk_run();
    let reduced = report.new_stress_l1 < report.glued_stress_l1;
    let drift = report.residue_l1.get("osc_skew_temporal_drift").copied().unwrap_or(0.0)
        + report.residue_l1.get("osc_sym_temporal_drift").copied().unwrap_or(0.0);
    let pass = reduced && deco_ok;
    verdict(
        10,
        pass,
        &format!(
            "stress L1: new {:.4e} vs glued {:.4e} (reduced: {reduced}; temporal-corrector drift residue {drift:.3e} dominates when not reduced -- see ledgers); decorrelation slopes {s1:.3} (want -1), {s2:.3} (want -0.5), fitted C: {c1:.2}, {c2:.2}",
            report.new_stress_l1, report.glued_stress_l1
        ),
    );
    assert!(pass);
}
