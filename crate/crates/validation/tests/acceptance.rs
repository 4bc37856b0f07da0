//! Acceptance criteria, one test each. Every test writes a single
//! `criterion N ... PASS|FAIL` line to stderr (uncaptured) before asserting.

use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::time::{Duration, Instant};

use ahx::flow::{
    integrate_orbit, scattering_jacobian, scattering_map, trace_geodesic, BPhasePoint, BoundaryCovector, GeodesicTrajectory,
    TraceOptions,
};
use ahx::jacobi::{
    covector_grid, decay_exponent, rate_bracket, simplicity_check, stable_unstable, JacobiSystem, SimplicityOptions, T_ASYM_DEFAULT,
};
use ahx::metric::fixtures::{deformed, disc, half_plane, perturbed};
use ahx::metric::TrigPoly;
use ahx::recover::{default_deltas, recover_asymptotic_at, recover_jet_fit, FitOptions, SynthesisOptions};
use ahx::renorm::{
    boundary_distance, conformal_shift, default_lambda_grid, deformation_derivative, renormalized_length, renormalized_length_mellin,
    scattering_from_distance_check,
};
use ahx::xray::{
    adjointness_check, lift_tensor, resolvent_zero, santalo_check, sym_derivative, xray_along, xray_phase, Direction, MeshSpec,
    QuadratureMeasure, SymmetricTensorField,
};
use ahx::Family;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, name: &str, budget_s: u64, start: Instant, o: Outcome) {
    let el = start.elapsed();
    let in_time = el <= Duration::from_secs(budget_s);
    let ok = o.pass && in_time;
    let line = format!(
        "criterion {n:>2} {name:<34} {}  {}  [{:.1}s / {}s{}]\n",
        if ok { "PASS" } else { "FAIL" },
        o.detail,
        el.as_secs_f64(),
        budget_s,
        if in_time { "" } else { " over budget" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "{}", line.trim_end());
}

fn opts() -> TraceOptions<f64> {
    TraceOptions::with_tol(1e-12)
}

fn trace(f: &Family, y: f64, eta: f64) -> ahx::Result<GeodesicTrajectory<f64>> {
    trace_geodesic(f, &BoundaryCovector::incoming1(y, eta), &opts())
}

/// Collects the worst value of a per-item error, turning failures into `∞`.
fn worst<I: IntoIterator<Item = ahx::Result<f64>>>(items: I) -> (f64, Vec<String>) {
    let mut w = 0.0f64;
    let mut errs = Vec::new();
    for r in items {
        match r {
            Ok(v) if v.is_finite() => w = w.max(v),
            Ok(v) => {
                w = f64::INFINITY;
                errs.push(format!("non-finite {v}"));
            }
            Err(e) => {
                w = f64::INFINITY;
                errs.push(e.to_string());
            }
        }
    }
    (w, errs)
}

fn errs_note(e: &[String]) -> String {
    if e.is_empty() {
        String::new()
    } else {
        format!(" ({} failures, first: {})", e.len(), e[0])
    }
}

#[test]
fn c01_half_plane_scattering() {
    let t = Instant::now();
    let f = half_plane::<f64>();
    let ys = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0];
    let etas = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 4.0];
    let (err, e) = worst(ys.iter().flat_map(|&y| {
        let f = &f;
        etas.iter().map(move |&eta| {
            let out = scattering_map(f, &BoundaryCovector::incoming1(y, eta), &opts())?;
            Ok((out.y[0] - (y + 2.0 / eta)).abs().max((out.eta[0] - eta).abs()))
        })
    }));
    report(1, "half-plane scattering oracle", 5, t, Outcome { pass: err < 1e-8, detail: format!("max error {err:.2e} < 1e-8{}", errs_note(&e)) });
}

#[test]
fn c02_half_plane_renormalized_length() {
    let t = Instant::now();
    let f = half_plane::<f64>();
    let mut err = 0.0f64;
    let mut residue = 0.0f64;
    let mut notes = Vec::new();
    for eta in [0.5, 1.0, 2.0, 4.0] {
        let exact = 2.0 * (2.0 / eta as f64).ln();
        match trace(&f, 0.0, eta).and_then(|tr| Ok((renormalized_length(&tr)?, renormalized_length_mellin(&tr, &default_lambda_grid())?))) {
            Ok((a, b)) => {
                err = err.max((a.length - exact).abs()).max((b.length - exact).abs());
                residue = residue.max(b.residue_error.unwrap_or(f64::INFINITY));
            }
            Err(e) => {
                err = f64::INFINITY;
                notes.push(e.to_string());
            }
        }
    }
    report(
        2,
        "half-plane renormalized length",
        10,
        t,
        Outcome {
            pass: err < 1e-6 && residue < 1e-4,
            detail: format!("max error {err:.2e} < 1e-6, |c_-1 - 2| {residue:.2e} < 1e-4{}", errs_note(&notes)),
        },
    );
}

#[test]
fn c03_disc_renormalized_distance() {
    let t = Instant::now();
    let f = disc::<f64>();
    let (err, e) = worst((1..=10).map(|k| {
        let th = 0.3 * k as f64;
        let d = boundary_distance(&f, &[0.0], &[th], 1e-11)?;
        Ok((d.d_r - 2.0 * (2.0 * (th / 2.0).sin()).ln()).abs())
    }));
    report(3, "disc renormalized distance", 20, t, Outcome { pass: err < 1e-6, detail: format!("max error {err:.2e} < 1e-6{}", errs_note(&e)) });
}

#[test]
fn c04_symplecticity() {
    let t = Instant::now();
    let etas = [-3.5, -2.5, -1.8, -1.2, -0.8, 0.8, 1.2, 1.8, 2.5, 3.5];
    let mut err = 0.0f64;
    let mut notes = Vec::new();
    let mut count = 0;
    for f in [disc::<f64>(), perturbed(0.1, 0.05)] {
        let (w, e) = worst((0..10).flat_map(|j| {
            let y = TAU * j as f64 / 10.0;
            let f = f.clone();
            etas.iter().map(move |&eta| {
                let j = scattering_jacobian(&f, &BoundaryCovector::incoming1(y, eta), 1e-4, &opts())?;
                Ok((j.det - 1.0).abs())
            })
        }));
        count += 100;
        err = err.max(w);
        notes.extend(e);
    }
    report(4, "symplecticity of scattering", 60, t, Outcome { pass: err < 1e-6, detail: format!("max |det - 1| {err:.2e} < 1e-6 over {count} points{}", errs_note(&notes)) });
}

#[test]
fn c05_conformal_law() {
    let t = Instant::now();
    let omega = |_: f64, y: &[f64]| 0.1 * y[0].sin();
    let mut err = 0.0f64;
    let mut notes = Vec::new();
    for f in [disc::<f64>(), perturbed(0.1, 0.05)] {
        let (w, e) = worst((0..10).map(|k| {
            let (y, eta) = (0.6 * k as f64, [1.3, -0.9, 2.2, -1.7, 0.8][k % 5]);
            let tr = trace(&f, y, eta)?;
            let shift = conformal_shift(&tr, omega, &default_lambda_grid())?;
            let yp = tr.outgoing_unreduced()[0];
            Ok((shift - 0.1 * (y.sin() + yp.sin())).abs())
        }));
        err = err.max(w);
        notes.extend(e);
    }
    report(5, "conformal change law", 30, t, Outcome { pass: err < 1e-6, detail: format!("max error {err:.2e} < 1e-6 over 20 geodesics{}", errs_note(&notes)) });
}

/// `ρ · exp(−|x − x_c|²/(2σ²))` in ball coordinates, `x_c = (0.5, 0)`, `σ = 0.07`.
fn disc_bump(s: &BPhasePoint<f64>) -> f64 {
    let r = (2.0 - s.rho) / (2.0 + s.rho);
    let (x1, x2) = (r * s.y[0].cos(), r * s.y[0].sin());
    let d2 = (x1 - 0.5).powi(2) + x2 * x2;
    s.rho * (-d2 / (2.0 * 0.07f64.powi(2))).exp()
}

fn disc_mesh(eta_panels: usize, rho_panels: usize, interior_y: usize, theta: usize) -> MeshSpec {
    MeshSpec { eta_panels, boundary_y: 128, rho_panels, interior_y, interior_theta: theta, rho_window: (0.02, 1.99), ..Default::default() }
}

#[test]
fn c06_santalo_identity() {
    let t = Instant::now();
    let f = disc::<f64>();
    let mut gaps = Vec::new();
    let mut note = String::new();
    for (ep, rp, iy) in [(20, 8, 64), (40, 16, 128), (80, 32, 256)] {
        let r = QuadratureMeasure::build(&f, &disc_mesh(ep, rp, iy, 4)).and_then(|m| santalo_check(&f, &disc_bump, &m, 1e-10));
        match r {
            Ok(r) => gaps.push(r.relative_gap),
            Err(e) => {
                note = format!(" ({e})");
                gaps.push(f64::INFINITY);
            }
        }
    }
    let orders: Vec<f64> = gaps.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let order = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    let gap = *gaps.last().unwrap();
    report(
        6,
        "Santalo identity",
        120,
        t,
        Outcome {
            pass: gap < 1e-4 && order >= 3.0,
            detail: format!("relative gap {gap:.2e} < 1e-4, mesh order {order:.2} >= 3 (gaps {}){note}", gaps.iter().map(|g| format!("{g:.2e}")).collect::<Vec<_>>().join(", ")),
        },
    );
}

#[test]
fn c07_adjointness() {
    let t = Instant::now();
    let f = disc::<f64>();
    let omega = |z: &BoundaryCovector<f64>| 1.0 + 0.5 * z.y[0].cos() + 0.3 * z.eta[0] / (1.0 + z.eta[0] * z.eta[0]);
    let r = QuadratureMeasure::build(&f, &disc_mesh(80, 16, 128, 32)).and_then(|m| adjointness_check(&f, &disc_bump, &omega, &m, 1e-10));
    let (gap, note) = match r {
        Ok(r) => (r.relative_gap, format!(" (<If,w> = {:.10}, <f,w o B-> = {:.10})", r.boundary_side, r.interior_side)),
        Err(e) => (f64::INFINITY, format!(" ({e})")),
    };
    report(7, "adjointness of I and extension", 60, t, Outcome { pass: gap < 1e-4, detail: format!("relative gap {gap:.2e} < 1e-4{note}") });
}

fn kernel_fixtures() -> Vec<(usize, SymmetricTensorField<f64>)> {
    vec![
        (1, SymmetricTensorField::scalar(1, 2, |r: f64, y: &[f64]| r * r * y[0].cos())),
        (1, SymmetricTensorField::scalar(1, 1, |r: f64, y: &[f64]| r * (2.0 * y[0]).sin())),
        (1, SymmetricTensorField::scalar(1, 3, |r: f64, y: &[f64]| r.powi(3) * (-r).exp() * (1.0 + 0.5 * y[0].cos()))),
        (2, SymmetricTensorField::new(1, 1, 1, |r: f64, y: &[f64]| vec![r * y[0].sin(), r * r * y[0].cos()]).unwrap()),
        (2, SymmetricTensorField::new(1, 1, 1, |r: f64, y: &[f64]| vec![r * r, r * (2.0 * y[0]).cos()]).unwrap()),
        (2, SymmetricTensorField::new(1, 1, 1, |r: f64, y: &[f64]| vec![r * (-r).exp() * y[0].cos(), r * y[0].sin()]).unwrap()),
    ]
}

#[test]
fn c08_kernel_of_xray() {
    let t = Instant::now();
    let f = perturbed::<f64>(0.1, 0.05);
    let etas = [-2.5, -1.0, 0.8, 1.5, 3.0];
    let mut worst_ratio = 0.0f64;
    let mut notes = Vec::new();
    for (m, q) in kernel_fixtures() {
        let dq = match sym_derivative(&f, &q) {
            Ok(d) => d,
            Err(e) => {
                notes.push(e.to_string());
                worst_ratio = f64::INFINITY;
                continue;
            }
        };
        assert_eq!(dq.rank, m);
        let mut vmax = 0.0f64;
        let mut scale = 0.0f64;
        for j in 0..10 {
            let y = TAU * j as f64 / 10.0;
            for &eta in &etas {
                let r = trace(&f, y, eta).and_then(|tr| {
                    let v = xray_along(&f, &dq, &tr, 1e-11)?.value;
                    let a = xray_phase(&tr, |s| lift_tensor(&f, &dq, s).map(f64::abs).unwrap_or(f64::NAN), 1e-10);
                    Ok((v, a))
                });
                match r {
                    Ok((v, a)) => {
                        vmax = vmax.max(v.abs());
                        scale = scale.max(a);
                    }
                    Err(e) => {
                        notes.push(e.to_string());
                        vmax = f64::INFINITY;
                    }
                }
            }
        }
        worst_ratio = worst_ratio.max(vmax / scale);
    }
    report(
        8,
        "potential tensors in the kernel",
        120,
        t,
        Outcome {
            pass: worst_ratio < 1e-6,
            detail: format!("max |I_m(Dq)| / scale {worst_ratio:.2e} < 1e-6 (m = 1, 2; 3 fixtures each; 50 geodesics){}", errs_note(&notes)),
        },
    );
}

#[test]
fn c09_deformation_linearization() {
    let t = Instant::now();
    let base = perturbed::<f64>(0.1, 0.05);
    let path = |s: f64| Ok(deformed(&base, s, TrigPoly { cos: vec![0.1, 0.05], sin: vec![] }));
    let h = 1e-3;
    let mut lit = 0.0f64;
    let mut with_terms = 0.0f64;
    let mut notes = Vec::new();
    for k in 0..20 {
        let y = TAU * (k / 4) as f64 / 5.0;
        let eta = [-1.5, 0.8, 1.2, 2.0][k % 4];
        let z = BoundaryCovector::incoming1(y, eta);
        let r = deformation_derivative(path, &z, h, 1e-12).and_then(|r| {
            let a = scattering_map(&path(h)?, &z, &opts())?;
            let b = scattering_map(&path(-h)?, &z, &opts())?;
            let boundary_term = 0.5 * (a.eta[0] + b.eta[0]) * base.y_diff(&b.y, &a.y)[0] / (2.0 * h);
            Ok((r, boundary_term))
        });
        match r {
            Ok((r, bt)) => {
                lit = lit.max((r.dl_ds - r.i2).abs());
                with_terms = with_terms.max((r.dl_ds - 0.5 * r.i2 - bt).abs());
            }
            Err(e) => {
                notes.push(e.to_string());
                lit = f64::INFINITY;
            }
        }
    }
    report(
        9,
        "deformation linearization",
        120,
        t,
        Outcome {
            pass: lit < 1e-4,
            detail: format!(
                "max |dL/ds - I2(g')| {lit:.2e} < 1e-4; with factor 1/2 and exit-point term the gap is {with_terms:.2e}{}",
                errs_note(&notes)
            ),
        },
    );
}

#[test]
fn c10_scattering_from_distance() {
    let t = Instant::now();
    let mut err = 0.0f64;
    let mut notes = Vec::new();
    for f in [disc::<f64>(), perturbed(0.1, 0.05)] {
        let (w, e) = worst((0..10).map(|k| {
            let ym = 0.6 * k as f64;
            let yp = ym + 0.8 + 0.2 * k as f64;
            Ok(scattering_from_distance_check(&f, &[ym], &[yp], 1e-4, 1e-11)?.residual)
        }));
        err = err.max(w);
        notes.extend(e);
    }
    report(10, "scattering from distance", 120, t, Outcome { pass: err < 1e-4, detail: format!("max residual {err:.2e} < 1e-4 over 20 pairs{}", errs_note(&notes)) });
}

#[test]
fn c11_jet_recovery() {
    let t = Instant::now();
    let f = perturbed::<f64>(0.1, 0.05);
    let dirs = vec![vec![1.0], vec![-1.0]];
    let (mut e0, mut e1, mut f1, mut f2) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut notes = Vec::new();
    for y in [0.0, PI / 2.0, PI] {
        let a = 0.1 * y.cos();
        let (d1, d2) = (2.0 * a, 4.0 * a * a + 4.0 * 0.05);
        let r = recover_asymptotic_at(&f, &[y], &dirs, &default_deltas(), 0.05, &SynthesisOptions::default())
            .and_then(|rec| Ok((recover_jet_fit(&rec.samples, 2, &FitOptions::default())?, rec)));
        match r {
            Ok((fit, rec)) => {
                e0 = e0.max((rec.jet.h0[0][0] - 1.0).abs());
                e1 = e1.max((rec.jet.drho_h.unwrap()[0][0] - d1).abs());
                f1 = f1.max((fit.drho_h.unwrap()[0][0] - d1).abs());
                f2 = f2.max((fit.d2rho_h.unwrap()[0][0] - d2).abs());
            }
            Err(e) => {
                notes.push(e.to_string());
                e0 = f64::INFINITY;
            }
        }
    }
    report(
        11,
        "boundary jet recovery",
        300,
        t,
        Outcome {
            pass: e0 < 1e-4 && e1 < 5e-3 && f1 < 1e-3 && f2 < 5e-2,
            detail: format!(
                "h0 {e0:.1e} < 1e-4, d_rho h {e1:.1e} < 5e-3 (asymptotic), fit d_rho h {f1:.1e} < 1e-3, d2_rho h {f2:.1e} < 5e-2{}",
                errs_note(&notes)
            ),
        },
    );
}

#[test]
fn c12_dynamics_diagnostics() {
    let t = Instant::now();
    let mut notes: Vec<String> = Vec::new();
    let hp = half_plane::<f64>();
    let nu = JacobiSystem::from_covector(&hp, &BoundaryCovector::incoming1(0.0, 0.8), &opts())
        .and_then(|s| decay_exponent(&s, T_ASYM_DEFAULT, 0.0, 10.0, 40))
        .unwrap_or_else(|e| {
            notes.push(e.to_string());
            f64::NAN
        });
    let grid = covector_grid(&[0.0, 1.5, 3.0, 4.5], &[-2.0, -0.9, 0.9, 2.0]);
    let mut conj = 0usize;
    for f in [disc::<f64>(), perturbed(0.1, 0.05)] {
        let rep = simplicity_check(&f, &grid, &SimplicityOptions::default());
        conj += rep.conjugate_count;
        notes.extend(rep.failure_messages);
    }
    let pf = perturbed::<f64>(0.1, 0.05);
    let mut uniq = 0.0f64;
    for &(y, eta) in &[(0.0, 1.0), (2.0, -0.6), (4.0, 2.5)] {
        let r = JacobiSystem::from_covector(&pf, &BoundaryCovector::incoming1(y, eta), &opts())
            .and_then(|s| Ok((stable_unstable(&s, 25.0)?, stable_unstable(&s, 30.0)?)));
        match r {
            Ok((a, b)) => {
                for i in 0..2 {
                    uniq = uniq.max((a.stable[i] - b.stable[i]).abs()).max((a.unstable[i] - b.unstable[i]).abs());
                }
            }
            Err(e) => {
                notes.push(e.to_string());
                uniq = f64::INFINITY;
            }
        }
    }
    let mut c_max = 0.0f64;
    for f in [half_plane::<f64>(), disc(), perturbed(0.1, 0.05)] {
        for &(y, eta) in &[(0.0, 0.9), (2.0, -1.5), (4.0, 2.5)] {
            match trace(&f, y, eta).and_then(|tr| rate_bracket(&f, &tr, -0.5, 20.0, 200)) {
                Ok(b) => c_max = c_max.max(b.upper),
                Err(e) => {
                    notes.push(e.to_string());
                    c_max = f64::INFINITY;
                }
            }
        }
    }
    let pass = (nu - 1.0).abs() < 1e-3 && conj == 0 && uniq < 1e-8 && c_max <= 1.5 && notes.is_empty();
    report(
        12,
        "dynamics diagnostics",
        180,
        t,
        Outcome {
            pass,
            detail: format!(
                "decay exponent {nu:.8} (|nu-1| < 1e-3), conjugate points {conj}, T_asym 25 vs 30 {uniq:.1e} < 1e-8, rate bracket C {c_max:.4} <= 1.5{}",
                errs_note(&notes)
            ),
        },
    );
}

#[test]
fn c13_resolvent_identity() {
    let t = Instant::now();
    let fam = perturbed::<f64>(0.1, 0.05);
    let f = |s: &BPhasePoint<f64>| (1.0 + 0.3 * s.y[0].cos()) * (0.5 + s.xi_bar0 * s.xi_bar0) + s.rho;
    let (err, e) = worst((0..20).map(|k| {
        let (y, eta) = (0.3 * k as f64, [1.1, -0.7, 2.0, -1.6][k % 4]);
        let orbit = integrate_orbit(&fam, &BoundaryCovector::incoming1(y, eta).to_phase(), false, &opts())?;
        let tau = orbit.tau_end * (0.2 + 0.03 * k as f64);
        let h = 1e-3 * orbit.tau_end;
        let r = |tt: f64| resolvent_zero(&fam, &f, &orbit.state(tt), Direction::Forward, 1e-12);
        let z = orbit.state(tau);
        // X = ρ X̄, and X̄ is d/dτ along the stored orbit.
        let flow_derivative = z.rho * (r(tau + h)? - r(tau - h)?) / (2.0 * h);
        let end = orbit.end.clone();
        Ok((flow_derivative + (f(&z) - f(&end))).abs())
    }));
    report(13, "zero-energy resolvent identity", 60, t, Outcome { pass: err < 1e-5, detail: format!("max error {err:.2e} < 1e-5 over 20 points{}", errs_note(&e)) });
}
