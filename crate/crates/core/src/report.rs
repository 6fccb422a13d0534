//! CSV schemas and the binary field-dump format.
//!
//! * `norms.csv`: `stage,norm,value,bound_formula,bound_value`
//! * `ledgers.csv`: `term,norm,value,tolerance,pass`
//! * `residual.csv`: `t,momentum,induction`
//! * field dumps: flat little-endian f64 real-space samples, axis order
//!   `(t, x1, x2, x3, component)` (t outermost, component fastest), plus a
//!   text sidecar with shape, spacings and flags.

use crate::field::Field;
use crate::params::ParameterSet;
use crate::stage::StageReport;
use crate::Result;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

/// Inductive-bookkeeping rows for one or more completed stages.
pub fn norms_csv(reports: &[(usize, &StageReport)], params: &ParameterSet) -> String {
    let mut s = String::from("stage,norm,value,bound_formula,bound_value\n");
    for (q, rep) in reports {
        let q1 = q + 1;
        let sum_sqrt_delta: f64 =
            (1..=q1).map(|i| params.delta(i).map(|d| d.sqrt()).unwrap_or(f64::NAN)).sum();
        let lam_next = params.lambda(q1).map(|l| l as f64).unwrap_or(f64::NAN);
        let delta_next2 = params.delta(q1 + 1).unwrap_or(f64::NAN);
        let bound_l1 = delta_next2 * lam_next.powf(-6.0 * params.alpha);
        let delta_next_sqrt = params.delta(q1).map(|d| d.sqrt()).unwrap_or(f64::NAN);
        let rows: &[(&str, &str, f64)] = &[
            ("vb_L2_tx", "sum_i<=q+1 delta_i^1/2", sum_sqrt_delta),
            ("vb_Lp_t_Linf_x", "sum_i<=q+1 delta_i^1/2", sum_sqrt_delta),
            ("vb_L1_t_C1eps_x", "sum_i<=q+1 delta_i^1/2", sum_sqrt_delta),
            ("vb_Linf_t_H3_x", "lambda_{q+1}^6", lam_next.powi(6)),
            ("stress_Linf_t_H3_x", "lambda_{q+1}^6", lam_next.powi(6)),
            ("stress_L1_tx_new", "delta_{q+2} lambda_{q+1}^-6a", bound_l1),
            ("diff_L2_tx", "delta_{q+1}^1/2", delta_next_sqrt),
            ("diff_Lp_t_Linf_x", "delta_{q+1}^1/2", delta_next_sqrt),
            ("diff_L1_t_C1eps_x", "delta_{q+1}^1/2", delta_next_sqrt),
        ];
        for (name, formula, bound) in rows {
            if let Some(v) = rep.norms.get(name) {
                let pass = if v <= *bound { "pass" } else { "fail" };
                let _ = writeln!(s, "{q},{name},{v:.12e},{formula},{bound:.12e},{pass}");
            }
        }
        for (name, v) in [
            ("stress_L1_tx_glued", rep.glued_stress_l1),
            ("stress_L1_tx_input", rep.input_stress_l1),
        ] {
            let _ = writeln!(s, "{q},{name},{v:.12e},-,,");
        }
    }
    s
}

/// Ledger rows: hard identities with tolerances plus reported residues.
pub fn ledgers_csv(report: &StageReport) -> String {
    let mut s = String::from("term,norm,value,tolerance,pass\n");
    for (name, value) in &report.ledger_max {
        let tol = match name.as_str() {
            "skew_lowfreq_cancellation" => crate::stress::TOL_SKEW_CANCEL,
            "temporal_cancellation" => crate::stress::TOL_TEMPORAL_CANCEL,
            "reynolds_lowfreq_cancellation" => crate::stress::TOL_REYNOLDS_CANCEL,
            _ => f64::NAN,
        };
        let pass = if value <= &tol { "pass" } else { "fail" };
        let _ = writeln!(s, "{name},L2/scale,{value:.6e},{tol:.1e},{pass}");
    }
    for (name, value) in &report.residue_l1 {
        let _ = writeln!(s, "{name},L1_t(L2_x),{value:.6e},,");
    }
    for (name, value, tol) in [
        ("recon_skew", report.recon_skew_max, 1e-10),
        ("recon_sym", report.recon_sym_max, 1e-10),
        ("div_wp_wc", report.div_wpwc_max, 1e-8),
        ("div_dp_dc", report.div_dpdc_max, 1e-8),
        ("div_wt", report.div_wt_max, 1e-10),
        ("div_dt", report.div_dt_max, 1e-10),
        ("support_containment", report.support_violation, 0.0),
        ("stress_class_residue", report.class_residue_max, 1e-12),
        ("stress_outside_overlaps", report.stress_outside_overlaps, 1e-10),
        ("endpoint_left", report.endpoint_left, 1e-12),
        ("endpoint_right", report.endpoint_right, 1e-12),
        ("discarded_mean", report.discarded_mean, 1e-10),
    ] {
        let pass = if value <= tol { "pass" } else { "fail" };
        let _ = writeln!(s, "{name},max,{value:.6e},{tol:.1e},{pass}");
    }
    s
}

/// True when every hard (toleranced) ledger row passes.
pub fn hard_ledgers_pass(report: &StageReport) -> bool {
    let csv = ledgers_csv(report);
    !csv.lines().any(|l| l.ends_with(",fail"))
}

/// Residual trace rows.
pub fn residual_csv(report: &StageReport) -> String {
    let mut s = String::from("t,momentum,induction\n");
    for (t, m, i) in &report.residual_trace {
        let _ = writeln!(s, "{t:.9},{m:.6e},{i:.6e}");
    }
    s
}

/// Two-column profile CSV.
pub fn profile_csv(samples: &[(f64, f64)]) -> String {
    let mut s = String::from("t,value\n");
    for (t, v) in samples {
        let _ = writeln!(s, "{t:.9},{v:.12e}");
    }
    s
}

/// Dump time-sampled fields: little-endian f64, axis order
/// `(t, x1, x2, x3, component)`, with a text sidecar.
pub fn dump_fields(path: &Path, name: &str, samples: &[(f64, Field)]) -> Result<()> {
    assert!(!samples.is_empty());
    let grid = samples[0].1.grid().clone();
    let n = grid.n();
    let comps = samples[0].1.rank().comps();
    let data_path = path.join(format!("{name}.f64"));
    let mut file = std::io::BufWriter::new(std::fs::File::create(&data_path)?);
    for (_, f) in samples {
        let reals = f.to_real_all();
        for i1 in 0..n {
            for i2 in 0..n {
                for i3 in 0..n {
                    let idx = grid.at(i3, i2, i1);
                    for r in reals.iter() {
                        file.write_all(&r[idx].to_le_bytes())?;
                    }
                }
            }
        }
    }
    file.flush()?;
    let mut side = String::new();
    let _ = writeln!(side, "name: {name}");
    let _ = writeln!(side, "layout: t,x1,x2,x3,component (component fastest)");
    let _ = writeln!(side, "dtype: f64 little-endian");
    let _ = writeln!(side, "shape: {} {n} {n} {n} {comps}", samples.len());
    let _ = writeln!(side, "dx: {}", grid.dx());
    let _ = writeln!(
        side,
        "times: {}",
        samples.iter().map(|(t, _)| format!("{t:.9}")).collect::<Vec<_>>().join(" ")
    );
    let _ = writeln!(side, "flags: {:?}", samples[0].1.flags());
    std::fs::write(path.join(format!("{name}.meta")), side)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Rank;
    use crate::grid::Grid3;

    #[test]
    fn dump_roundtrip() {
        let dir = std::env::temp_dir().join(format!("torus-mhd-dump-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let grid = Grid3::new(4).unwrap();
        let n = grid.n();
        let vals: Vec<f64> = (0..grid.len()).map(|i| (i % 7) as f64).collect();
        let f = Field::from_real(&grid, Rank::Scalar, &[vals]).unwrap();
        dump_fields(&dir, "probe", &[(0.0, f.clone())]).unwrap();
        let bytes = std::fs::read(dir.join("probe.f64")).unwrap();
        assert_eq!(bytes.len(), grid.len() * 8);
        // spot-check the (t=0, x1=1, x2=0, x3=0) element under x1-major
        // ordering
        let offset = (n * n) * 8; // i1 = 1, i2 = i3 = 0, comp 0
        let got = f64::from_le_bytes(bytes[offset..offset + 8].try_into().unwrap());
        let want = f.to_real(0)[grid.at(0, 0, 1)];
        assert!((got - want).abs() < 1e-12);
        let meta = std::fs::read_to_string(dir.join("probe.meta")).unwrap();
        assert!(meta.contains("shape: 1 4 4 4 1"));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
