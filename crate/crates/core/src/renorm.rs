//! Renormalized lengths of complete geodesics, the renormalized boundary
//! distance by two-point shooting, the change of conformal representative and
//! the first variation of the length under metric deformations.

use std::sync::Arc;

use crate::error::{AhxError, Result};
use crate::flow::{trace_geodesic, BoundaryCovector, GeodesicTrajectory, TraceOptions};
use crate::linalg::{solve, Mat};
use crate::metric::BoundaryMetricFamily;
use crate::quad;
use crate::scalar::{c, to_f64, Real};
use crate::xray::{xray_along, SymmetricTensorField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthMethod {
    Regularized,
    Mellin,
}

#[derive(Clone, Debug)]
pub struct RenormalizedLengthRecord<T> {
    pub z: BoundaryCovector<T>,
    pub length: T,
    pub method: LengthMethod,
    pub estimated_error: T,
    /// `|c₋₁ − 2|` for the Mellin fit.
    pub residue_error: Option<T>,
}

/// Default `λ` values `2⁻⁷, …, 2⁻¹¹` for the Mellin fit.
pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.0078125, 0.00390625, 0.001953125, 0.0009765625, 0.00048828125];

/// Largest acceptable RMS misfit of the Laurent model in the Mellin fit.
pub const MELLIN_FIT_TOL: f64 = 1e-6;

fn check_complete<T: Real>(traj: &GeodesicTrajectory<T>) -> Result<()> {
    if traj.tau_plus > T::zero() && traj.tau_plus.is_finite() && traj.orbit.end.rho == T::zero() {
        Ok(())
    } else {
        Err(AhxError::IncompleteTrajectory)
    }
}

/// `L = ∫₀^{τ₊} [1/ρ − 1/τ − 1/(τ₊−τ)] dτ + 2 log τ₊`.
pub fn renormalized_length<T: Real>(traj: &GeodesicTrajectory<T>) -> Result<RenormalizedLengthRecord<T>> {
    check_complete(traj)?;
    let r = quad::integrate(
        |t| traj.regularized_inverse_rho(t),
        T::zero(),
        traj.tau_plus,
        &traj.orbit.step_breaks(),
        c(1e-13),
        c(1e-12),
        4000,
    );
    Ok(RenormalizedLengthRecord {
        z: traj.incoming.clone(),
        length: r.value + c::<T>(2.0) * traj.tau_plus.ln(),
        method: LengthMethod::Regularized,
        estimated_error: r.error,
        residue_error: None,
    })
}

/// `(log(ρ/τ), log(ρ/(τ₊−τ)))` with the small-argument forms near the ends.
fn log_ratios<T: Real>(traj: &GeodesicTrajectory<T>, tau: T) -> (T, T) {
    let s = traj.tau_plus - tau;
    if tau < traj.window {
        let d = traj.start_series.deficit(tau);
        let rho = tau - d;
        ((-d / tau).ln_1p(), (rho / s).ln())
    } else if s < traj.window {
        let d = traj.end_series.deficit(s);
        let rho = s - d;
        ((rho / tau).ln(), (-d / s).ln_1p())
    } else {
        let rho = traj.orbit.rho_dense(tau);
        ((rho / tau).ln(), (rho / s).ln())
    }
}

/// Laurent coefficients `(c₋₁, c₀, c₁, c₂)` fitted to `(λ, I(λ))` by least squares
/// on `λ·I(λ)`, together with the RMS misfit in `I`.
fn laurent_fit<T: Real>(lams: &[T], vals: &[T]) -> Result<([T; 4], T)> {
    let scale = lams.iter().fold(T::zero(), |m, &l| m.max(l));
    let mut ata = Mat::zeros(4);
    let mut atb = vec![T::zero(); 4];
    for (&l, &v) in lams.iter().zip(vals) {
        let u = l / scale;
        let row = [T::one(), u, u * u, u * u * u];
        let rhs = l * v;
        for i in 0..4 {
            atb[i] = atb[i] + row[i] * rhs;
            for j in 0..4 {
                ata.set(i, j, ata.get(i, j) + row[i] * row[j]);
            }
        }
    }
    let x = solve(&ata.a, &atb, 4).ok_or_else(|| AhxError::FitFailure("singular Laurent fit".into()))?;
    let coef = [x[0], x[1] / scale, x[2] / (scale * scale), x[3] / (scale * scale * scale)];
    let mut ss = T::zero();
    for (&l, &v) in lams.iter().zip(vals) {
        let m = coef[0] / l + coef[1] + coef[2] * l + coef[3] * l * l;
        ss = ss + (m - v) * (m - v);
    }
    Ok((coef, (ss / c(lams.len() as f64)).sqrt()))
}

type Weight<'a, T> = Option<&'a dyn Fn(T, &[T]) -> T>;

/// Mellin finite part of `∫ρ^{λ−1}e^{λω}dτ` (ω ≡ 0 when `omega` is `None`).
fn mellin_finite_part<T: Real>(traj: &GeodesicTrajectory<T>, grid: &[T], omega: Weight<'_, T>) -> Result<([T; 4], T, T)> {
    check_complete(traj)?;
    if grid.len() < 4 {
        return Err(AhxError::InsufficientSamples("the Mellin fit needs at least 4 values of lambda".into()));
    }
    if grid.iter().any(|&l| !(l > T::zero() && l <= c(0.5))) {
        return Err(AhxError::OutOfRange("lambda values must lie in (0, 1/2]".into()));
    }
    let tp = traj.tau_plus;
    let n = traj.orbit.dim();
    let (w_minus, w_plus) = match omega {
        Some(w) => (w(T::zero(), &traj.orbit.start.y), w(T::zero(), &traj.orbit.end.y)),
        None => (T::zero(), T::zero()),
    };
    let breaks = traj.orbit.step_breaks();
    let half = tp * c(0.5);
    let mut vals = Vec::with_capacity(grid.len());
    let mut qerr = T::zero();
    for &lam in grid {
        let lm1 = lam - T::one();
        let r = quad::integrate(
            |tau| {
                let s = tp - tau;
                let (ls, le) = log_ratios(traj, tau);
                let dw = |wref: T| match omega {
                    Some(w) => {
                        let st = traj.state(tau);
                        let mut y = st.y;
                        y.truncate(n);
                        lam * (w(traj.rho(tau), &y) - wref)
                    }
                    None => T::zero(),
                };
                if tau <= half {
                    let a = (lam * w_minus).exp() * tau.powf(lm1) * (lm1 * ls + dw(w_minus)).exp_m1();
                    a - (lam * w_plus).exp() * s.powf(lm1)
                } else {
                    let b = (lam * w_plus).exp() * s.powf(lm1) * (lm1 * le + dw(w_plus)).exp_m1();
                    b - (lam * w_minus).exp() * tau.powf(lm1)
                }
            },
            T::zero(),
            tp,
            &breaks,
            c(1e-13),
            c(1e-12),
            4000,
        );
        qerr = qerr.max(r.error);
        let analytic = tp.powf(lam) * ((lam * w_minus).exp() + (lam * w_plus).exp()) / lam;
        vals.push(r.value + analytic);
    }
    let (coef, misfit) = laurent_fit(grid, &vals)?;
    if !(misfit <= c(MELLIN_FIT_TOL)) {
        return Err(AhxError::FitFailure(format!("Laurent misfit {misfit} above {MELLIN_FIT_TOL}")));
    }
    Ok((coef, misfit, qerr))
}

/// Renormalized length as the constant term of the Laurent expansion of
/// `λ ↦ ∫₀^{τ₊} ρ^{λ−1} dτ` at `λ = 0`.
pub fn renormalized_length_mellin<T: Real>(traj: &GeodesicTrajectory<T>, lambda_grid: &[T]) -> Result<RenormalizedLengthRecord<T>> {
    let (coef, misfit, qerr) = mellin_finite_part(traj, lambda_grid, None)?;
    Ok(RenormalizedLengthRecord {
        z: traj.incoming.clone(),
        length: coef[1],
        method: LengthMethod::Mellin,
        estimated_error: misfit + qerr,
        residue_error: Some((coef[0] - c(2.0)).abs()),
    })
}

pub fn default_lambda_grid<T: Real>() -> Vec<T> {
    DEFAULT_LAMBDA_GRID.iter().map(|&l| c(l)).collect()
}

/// Change of renormalized length when the defining function `ρ` is replaced by
/// `ρe^ω`; `omega(ρ, y)` is the caller's extension of a boundary function.
///
/// Both lengths are Mellin finite parts on the same `λ` grid.
pub fn conformal_shift<T: Real, W: Fn(T, &[T]) -> T>(traj: &GeodesicTrajectory<T>, omega: W, lambda_grid: &[T]) -> Result<T> {
    let (plain, _, _) = mellin_finite_part(traj, lambda_grid, None)?;
    let (hat, _, _) = mellin_finite_part(traj, lambda_grid, Some(&omega))?;
    Ok(hat[1] - plain[1])
}

/// Result of two-point shooting between boundary points.
#[derive(Clone, Debug)]
pub struct DistanceRecord<T> {
    pub y_minus: Vec<T>,
    pub y_plus: Vec<T>,
    pub d_r: T,
    pub eta_star: Vec<T>,
    pub newton_iters: usize,
}

/// Iteration cap for the shooting Newton solver.
pub const NEWTON_MAX_ITERS: usize = 50;

fn shooting_opts<T: Real>() -> TraceOptions<T> {
    TraceOptions::with_tol(c(1e-12))
}

fn shoot<T: Real>(family: &BoundaryMetricFamily<T>, y_minus: &[T], y_plus: &[T], eta: &[T]) -> Result<(Vec<T>, GeodesicTrajectory<T>)> {
    let tr = trace_geodesic(family, &BoundaryCovector::incoming(y_minus.to_vec(), eta.to_vec()), &shooting_opts())?;
    // y_out − y₊, wrapped on periodic coordinates.
    let r = family.y_diff(y_plus, &tr.outgoing_unreduced());
    Ok((r, tr))
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |s, &x| s + x * x).sqrt()
}

/// Renormalized distance between boundary points: finds the initial momentum
/// `η*` with `π(S_g(y₋, η*)) = y₊` by damped Newton shooting and returns the
/// renormalized length of the connecting geodesic.
pub fn boundary_distance<T: Real>(family: &BoundaryMetricFamily<T>, y_minus: &[T], y_plus: &[T], tol: T) -> Result<DistanceRecord<T>> {
    let n = family.dim;
    if y_minus.len() != n || y_plus.len() != n {
        return Err(AhxError::OutOfRange(format!("expected {n} boundary coordinates")));
    }
    let delta = family.y_diff(y_minus, y_plus);
    if norm(&delta) == T::zero() {
        return Err(AhxError::OutOfRange("boundary points must differ".into()));
    }
    // Frozen-metric guess η⁰ = 2Δ♭/|Δ|²_{h₀}.
    let e0 = family.eval_unchecked(T::zero(), y_minus)?;
    let flat = e0.flat(&delta);
    let nn = e0.h_mat.bilinear(&delta, &delta);
    let mut eta: Vec<T> = flat.iter().map(|&v| c::<T>(2.0) * v / nn).collect();
    let (mut r, mut tr) = shoot(family, y_minus, y_plus, &eta)?;
    let mut rn = norm(&r);
    let mut iters = 0;
    while rn > tol {
        if iters >= NEWTON_MAX_ITERS {
            return Err(AhxError::NewtonFailure { iters, residual: to_f64(rn) });
        }
        iters += 1;
        // Jacobian of π∘S_g in η by central differences.
        let mut jac = vec![T::zero(); n * n];
        for j in 0..n {
            let h = c::<T>(1e-6) * T::one().max(eta[j].abs());
            let mut ep = eta.clone();
            let mut em = eta.clone();
            ep[j] = ep[j] + h;
            em[j] = em[j] - h;
            let (rp, _) = shoot(family, y_minus, y_plus, &ep)?;
            let (rm, _) = shoot(family, y_minus, y_plus, &em)?;
            for i in 0..n {
                jac[i * n + j] = (rp[i] - rm[i]) / (h + h);
            }
        }
        let step = solve(&jac, &r, n).ok_or(AhxError::NewtonFailure { iters, residual: to_f64(rn) })?;
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let cand: Vec<T> = eta.iter().zip(&step).map(|(&e, &d)| e - t * d).collect();
            if let Ok((rc, trc)) = shoot(family, y_minus, y_plus, &cand) {
                let rcn = norm(&rc);
                if rcn < rn {
                    eta = cand;
                    r = rc;
                    rn = rcn;
                    tr = trc;
                    accepted = true;
                    break;
                }
            }
            t = t * c(0.5);
        }
        if !accepted {
            // A Newton step below the trace accuracy means the residual sits at the noise floor.
            if norm(&step) <= c::<T>(1e-9) * (T::one() + norm(&eta)) {
                break;
            }
            return Err(AhxError::NewtonFailure { iters, residual: to_f64(rn) });
        }
    }
    let rec = renormalized_length(&tr)?;
    Ok(DistanceRecord { y_minus: y_minus.to_vec(), y_plus: y_plus.to_vec(), d_r: rec.length, eta_star: eta, newton_iters: iters })
}

/// Comparison of `S_g(p, −d_p d^R)` with `(q, d_q d^R)`.
#[derive(Clone, Debug)]
pub struct ScatteringFromDistance<T> {
    pub grad_p: Vec<T>,
    pub grad_q: Vec<T>,
    pub eta_star: Vec<T>,
    pub scattered: BoundaryCovector<T>,
    /// Max-norm deviation of the scattered datum from `(q, d_q d^R)`.
    pub residual: T,
}

/// Recovers scattering data from the renormalized distance by central differences
/// of `d^R` in both arguments (step `fd_step`).
pub fn scattering_from_distance_check<T: Real>(
    family: &BoundaryMetricFamily<T>,
    y_minus: &[T],
    y_plus: &[T],
    fd_step: T,
    tol: T,
) -> Result<ScatteringFromDistance<T>> {
    let n = family.dim;
    let base = boundary_distance(family, y_minus, y_plus, tol)?;
    let grad = |which: usize| -> Result<Vec<T>> {
        (0..n)
            .map(|k| {
                let shifted = |d: T| {
                    let (mut a, mut b) = (y_minus.to_vec(), y_plus.to_vec());
                    if which == 0 {
                        a[k] = a[k] + d;
                    } else {
                        b[k] = b[k] + d;
                    }
                    boundary_distance(family, &a, &b, tol).map(|r| r.d_r)
                };
                Ok((shifted(fd_step)? - shifted(-fd_step)?) / (fd_step + fd_step))
            })
            .collect()
    };
    let gp = grad(0)?;
    let gq = grad(1)?;
    let start: Vec<T> = gp.iter().map(|&v| -v).collect();
    let tr = trace_geodesic(family, &BoundaryCovector::incoming(y_minus.to_vec(), start), &shooting_opts())?;
    let out = tr.outgoing(family);
    let dy = family.y_diff(y_plus, &tr.outgoing_unreduced());
    let mut res = T::zero();
    for k in 0..n {
        res = res.max(dy[k].abs()).max((out.eta[k] - gq[k]).abs());
    }
    Ok(ScatteringFromDistance { grad_p: gp, grad_q: gq, eta_star: base.eta_star, scattered: out, residual: res })
}

/// Both sides of the first-variation identity for a one-parameter family of metrics.
#[derive(Clone, Copy, Debug)]
pub struct DeformationReport<T> {
    /// Central difference of `s ↦ L_{g(s)}(z)` at `s = 0`.
    pub dl_ds: T,
    /// `I₂(ġ)(z)` along the `s = 0` geodesic.
    pub i2: T,
}

/// `∂_s g(s)|₀` as a rank-2 field, by central differences of the path in `s`.
/// Declared with the smallest admissible weight (−1).
pub fn metric_derivative<T: Real>(minus: &BoundaryMetricFamily<T>, plus: &BoundaryMetricFamily<T>, fd_step: T) -> SymmetricTensorField<T> {
    let (a, b) = (Arc::new(minus.clone()), Arc::new(plus.clone()));
    let n = minus.dim;
    SymmetricTensorField::new(2, n, -1, move |rho, y| {
        let (hm, hp) = (a.parts(rho, y).h, b.parts(rho, y).h);
        let s = (rho * rho * (fd_step + fd_step)).recip();
        let mut out = vec![T::zero(); (n + 1) * (n + 1)];
        for i in 0..n {
            for j in 0..n {
                out[(i + 1) * (n + 1) + j + 1] = (hp.get(i, j) - hm.get(i, j)) * s;
            }
        }
        out
    })
    .expect("rank 2 is supported")
}

/// `∂_s` of the renormalized distance between fixed boundary points (central
/// differences), with `I₂(ġ)` along the `s = 0` connecting geodesic.
///
/// Unlike [`deformation_derivative`], the endpoints do not move with `s`, so no
/// boundary term `η₊·∂_s y₊` enters; the result satisfies `∂_s d^R = ½ I₂(ġ)`.
pub fn distance_variation<T: Real, P: Fn(T) -> Result<BoundaryMetricFamily<T>>>(
    family_path: P,
    y_minus: &[T],
    y_plus: &[T],
    fd_step: T,
    tol: T,
) -> Result<DeformationReport<T>> {
    let (gm, g0, gp) = (family_path(-fd_step)?, family_path(T::zero())?, family_path(fd_step)?);
    let dm = boundary_distance(&gm, y_minus, y_plus, tol)?.d_r;
    let dp = boundary_distance(&gp, y_minus, y_plus, tol)?.d_r;
    let base = boundary_distance(&g0, y_minus, y_plus, tol)?;
    let traj = trace_geodesic(&g0, &BoundaryCovector::incoming(y_minus.to_vec(), base.eta_star), &shooting_opts())?;
    let gdot = metric_derivative(&gm, &gp, fd_step);
    let i2 = xray_along(&g0, &gdot, &traj, tol)?.value;
    Ok(DeformationReport { dl_ds: (dp - dm) / (fd_step + fd_step), i2 })
}

/// Finite-difference `∂_s L_{g(s)}(z)` at fixed incoming datum `z`, and `I₂(ġ)(z)`
/// for a path of normal-form metrics.
pub fn deformation_derivative<T: Real, P: Fn(T) -> Result<BoundaryMetricFamily<T>>>(
    family_path: P,
    z: &BoundaryCovector<T>,
    fd_step: T,
    tol: T,
) -> Result<DeformationReport<T>> {
    let opts = TraceOptions::with_tol(tol.min(c(1e-12)));
    let (gm, g0, gp) = (family_path(-fd_step)?, family_path(T::zero())?, family_path(fd_step)?);
    let lm = renormalized_length(&trace_geodesic(&gm, z, &opts)?)?.length;
    let lp = renormalized_length(&trace_geodesic(&gp, z, &opts)?)?.length;
    let dl_ds = (lp - lm) / (fd_step + fd_step);
    let gdot = metric_derivative(&gm, &gp, fd_step);
    let traj = trace_geodesic(&g0, z, &opts)?;
    let i2 = xray_along(&g0, &gdot, &traj, tol)?.value;
    Ok(DeformationReport { dl_ds, i2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{scattering_map, Side};
    use crate::metric::fixtures::*;
    use crate::metric::TrigPoly;
    use std::f64::consts::{LN_2, PI};

    fn tr(f: &BoundaryMetricFamily<f64>, y: f64, eta: f64) -> GeodesicTrajectory<f64> {
        trace_geodesic(f, &BoundaryCovector::incoming1(y, eta), &TraceOptions::with_tol(1e-12)).unwrap()
    }

    #[test]
    fn half_plane_lengths() {
        let f = half_plane::<f64>();
        for &eta in &[0.5, 1.0, 2.0, 4.0] {
            let t = tr(&f, 0.0, eta);
            let exact = 2.0 * (2.0 / eta).ln();
            let a = renormalized_length(&t).unwrap();
            let b = renormalized_length_mellin(&t, &default_lambda_grid()).unwrap();
            assert!((a.length - exact).abs() < 1e-9, "{} {}", a.length, exact);
            assert!((b.length - exact).abs() < 1e-7, "{} {}", b.length, exact);
            assert!(b.residue_error.unwrap() < 1e-8);
            assert_eq!(b.method, LengthMethod::Mellin);
        }
    }

    #[test]
    fn disc_diameter_length() {
        let f = disc::<f64>();
        let t = tr(&f, 0.0, 0.0);
        assert!((renormalized_length(&t).unwrap().length - 2.0 * LN_2).abs() < 1e-9);
        assert!((renormalized_length_mellin(&t, &default_lambda_grid()).unwrap().length - 2.0 * LN_2).abs() < 1e-7);
    }

    #[test]
    fn methods_agree_and_reversal_invariant() {
        let f = perturbed::<f64>(0.1, 0.05);
        for &(y, eta) in &[(0.3, 1.0), (2.0, -2.5), (4.0, 0.7)] {
            let t = tr(&f, y, eta);
            let a = renormalized_length(&t).unwrap();
            let b = renormalized_length_mellin(&t, &default_lambda_grid()).unwrap();
            assert!((a.length - b.length).abs() < 1e-6);
            let out = t.outgoing(&f);
            let back = tr(&f, out.y[0], -out.eta[0]);
            assert!((renormalized_length(&back).unwrap().length - a.length).abs() < 1e-8);
        }
    }

    #[test]
    fn mellin_grid_validation() {
        let t = tr(&half_plane(), 0.0, 1.0);
        assert!(renormalized_length_mellin(&t, &[0.01, 0.02, 0.03]).is_err());
        assert!(renormalized_length_mellin(&t, &[0.01, 0.02, 0.03, 0.9]).is_err());
    }

    #[test]
    fn laurent_fit_recovers_exact_model() {
        let lams: Vec<f64> = DEFAULT_LAMBDA_GRID.to_vec();
        let vals: Vec<f64> = lams.iter().map(|&l| 2.0 / l + 0.7 - 3.0 * l + 5.0 * l * l).collect();
        let (coef, misfit) = laurent_fit(&lams, &vals).unwrap();
        assert!((coef[0] - 2.0).abs() < 1e-10 && (coef[1] - 0.7).abs() < 1e-8 && misfit < 1e-9);
    }

    #[test]
    fn half_plane_distance() {
        let f = half_plane::<f64>();
        for &u in &[1.0, 2.0, 4.0] {
            let d = boundary_distance(&f, &[0.0], &[u], 1e-10).unwrap();
            assert!((d.d_r - 2.0 * u.ln()).abs() < 1e-8);
            assert!((d.eta_star[0] - 2.0 / u).abs() < 1e-8);
            assert_eq!(d.newton_iters, 0);
        }
        assert!(boundary_distance(&f, &[1.0], &[1.0], 1e-10).is_err());
    }

    #[test]
    fn disc_distance_and_symmetry() {
        let f = disc::<f64>();
        for &th in &[PI / 2.0, PI, 2.0] {
            let d = boundary_distance(&f, &[0.0], &[th], 1e-10).unwrap();
            assert!((d.d_r - 2.0 * (2.0 * (th / 2.0).sin()).ln()).abs() < 1e-7, "{th}: {}", d.d_r);
        }
        let p = perturbed::<f64>(0.1, 0.05);
        let a = boundary_distance(&p, &[0.4], &[2.0], 1e-11).unwrap();
        let b = boundary_distance(&p, &[2.0], &[0.4], 1e-11).unwrap();
        assert!((a.d_r - b.d_r).abs() < 1e-8);
        // Plumbing identity with a direct trace.
        let t = tr(&p, 0.4, a.eta_star[0]);
        assert!((renormalized_length(&t).unwrap().length - a.d_r).abs() < 1e-12);
    }

    #[test]
    fn scattering_from_distance_examples() {
        let f = half_plane::<f64>();
        let r = scattering_from_distance_check(&f, &[0.0], &[2.0], 1e-4, 1e-11).unwrap();
        assert!((r.grad_p[0] + 1.0).abs() < 1e-6 && (r.grad_q[0] - 1.0).abs() < 1e-6);
        assert!(r.residual < 1e-6);
        assert_eq!(r.scattered.side, Side::Outgoing);
        let d = disc::<f64>();
        let r = scattering_from_distance_check(&d, &[0.0], &[PI], 1e-4, 1e-11).unwrap();
        assert!(r.grad_p[0].abs() < 1e-6 && r.residual < 1e-5, "{r:?}");
    }

    #[test]
    fn conformal_shift_examples() {
        let f = disc::<f64>();
        let t = tr(&f, 0.5, 1.3);
        let g = default_lambda_grid();
        assert_eq!(conformal_shift(&t, |_, _| 0.0, &g).unwrap(), 0.0);
        let s = conformal_shift(&t, |_, _| 0.25, &g).unwrap();
        assert!((s - 0.5).abs() < 1e-7);
        let s = conformal_shift(&t, |_, y: &[f64]| 0.1 * y[0].sin(), &g).unwrap();
        let yp = t.outgoing(&f).y[0];
        assert!((s - 0.1 * (0.5f64.sin() + yp.sin())).abs() < 1e-7);
    }

    fn deformed_path(amp: f64) -> impl Fn(f64) -> Result<BoundaryMetricFamily<f64>> {
        let base = half_plane::<f64>();
        move |s: f64| Ok(deformed(&base, s, TrigPoly::constant(amp)))
    }

    /// At fixed incoming datum the exit point moves with `s`:
    /// `∂_s L = ½ I₂(ġ) + η₊ ∂_s y₊`.
    #[test]
    fn deformation_at_fixed_incoming_datum() {
        let z = BoundaryCovector::incoming1(0.0, 1.0);
        let h = 1e-3;
        let r = deformation_derivative(deformed_path(0.1), &z, h, 1e-12).unwrap();
        assert!((r.i2 - 0.1 * 16.0 / 15.0).abs() < 1e-9);
        let o = TraceOptions::with_tol(1e-12);
        let yp = |s: f64| scattering_map(&deformed_path(0.1)(s).unwrap(), &z, &o).unwrap();
        let (a, b) = (yp(h), yp(-h));
        let boundary_term = a.eta[0] * (a.y[0] - b.y[0]) / (2.0 * h);
        assert!((r.dl_ds - 0.5 * r.i2 - boundary_term).abs() < 1e-6, "{r:?} {boundary_term}");
        let r2 = deformation_derivative(deformed_path(0.2), &z, h, 1e-12).unwrap();
        assert!((r2.i2 / r.i2 - 2.0).abs() < 1e-6 && (r2.dl_ds / r.dl_ds - 2.0).abs() < 1e-5);
        let r0 = deformation_derivative(deformed_path(0.0), &z, h, 1e-12).unwrap();
        assert!(r0.dl_ds.abs() < 1e-12 && r0.i2 == 0.0);
    }

    /// Between fixed endpoints the first variation of length is `½ I₂(ġ)`.
    #[test]
    fn distance_first_variation_has_half_factor() {
        for &(u, amp) in &[(2.0, 0.1), (1.0, -0.3)] {
            let r = distance_variation(deformed_path(amp), &[0.0], &[u], 1e-3, 1e-11).unwrap();
            assert!((r.dl_ds - 0.5 * r.i2).abs() < 1e-6, "{r:?}");
        }
    }
}
