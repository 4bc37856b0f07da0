//! Jacobi fields along complete geodesics of a surface (`n = 1`): the scalar
//! equation `ÿ + K(γ(t)) y = 0` in hyperbolic arclength, conjugate points,
//! stable/unstable solutions fixed by their asymptotics, and the simplicity
//! diagnostic built from them.
//!
//! Hyperbolic time is carried by the logit `φ = log(τ/(τ₊ − τ))` of the
//! rescaled parameter, so both ends of the geodesic are resolved to full
//! relative precision however far out `t` goes.

use crate::error::{AhxError, Result};
use crate::flow::{trace_geodesic, BoundaryCovector, GeodesicTrajectory, TraceOptions};
use crate::metric::{gauss_curvature_unchecked, BoundaryMetricFamily};
use crate::ode::{DenseStep, Dopri5, Tolerances};
use crate::quad;
use crate::scalar::{c, to_f64, Real};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Default asymptotic time for the frozen-coefficient initial data.
pub const T_ASYM_DEFAULT: f64 = 25.0;
/// Integrator tolerance for Jacobi solutions.
pub const JACOBI_TOL: f64 = 1e-12;
/// `ρ` below which the geodesic counts as having left the traced range.
const RHO_FLOOR: f64 = 1e-250;
/// Step cap in hyperbolic time, so curvature features are not stepped over.
const MAX_STEP: f64 = 0.5;
/// Required `|K + 1|` at `±T_asym`.
const ASYMPTOTIC_CURVATURE_TOL: f64 = 1e-10;

/// The Jacobi equation along one complete geodesic, with `t = 0` at `tau0`.
#[derive(Clone, Debug)]
pub struct JacobiSystem<'a, T> {
    pub family: &'a BoundaryMetricFamily<T>,
    pub traj: GeodesicTrajectory<T>,
    pub tau0: T,
    pub tol: T,
}

/// A point of the base geodesic as seen from the Jacobi clock.
#[derive(Clone, Copy, Debug)]
pub struct BasePoint<T> {
    pub tau: T,
    /// `τ₊ − τ`, accurate near the outgoing end.
    pub tau_to_end: T,
    pub rho: T,
    pub y: T,
    pub curvature: T,
}

impl<'a, T: Real> JacobiSystem<'a, T> {
    pub fn new(family: &'a BoundaryMetricFamily<T>, traj: GeodesicTrajectory<T>, tau0: T) -> Result<Self> {
        if family.dim != 1 {
            return Err(AhxError::Unsupported("Jacobi fields are implemented for n = 1".into()));
        }
        if !(tau0 > T::zero() && tau0 < traj.tau_plus) {
            return Err(AhxError::OutOfRange("base point must lie strictly inside the geodesic".into()));
        }
        Ok(JacobiSystem { family, traj, tau0, tol: c(JACOBI_TOL) })
    }

    /// System with `t = 0` at the point of maximal `ρ`.
    pub fn at_turning_point(family: &'a BoundaryMetricFamily<T>, traj: GeodesicTrajectory<T>) -> Result<Self> {
        let tau0 = traj.turning_point();
        Self::new(family, traj, tau0)
    }

    /// Traces `z` and centres the system at the turning point.
    pub fn from_covector(family: &'a BoundaryMetricFamily<T>, z: &BoundaryCovector<T>, opts: &TraceOptions<T>) -> Result<Self> {
        let traj = trace_geodesic(family, z, opts)?;
        Self::at_turning_point(family, traj)
    }

    fn phi_of_tau(&self, tau: T) -> T {
        (tau / (self.traj.tau_plus - tau)).ln()
    }

    /// Base point at logit parameter `φ`.
    pub fn base_at_phi(&self, phi: T) -> BasePoint<T> {
        let tp = self.traj.tau_plus;
        // τ = τ₊/(1 + e^{−φ}), τ₊ − τ = τ₊/(1 + e^{φ}); each exact at its own end.
        let (tau, s) = if phi < T::zero() {
            let e = phi.exp();
            (tp * e / (T::one() + e), tp / (T::one() + e))
        } else {
            let e = (-phi).exp();
            (tp / (T::one() + e), tp * e / (T::one() + e))
        };
        let tr = &self.traj;
        let rho = if tau < tr.window {
            tr.start_series.rho(tau)
        } else if s < tr.window {
            tr.end_series.rho(s)
        } else {
            tr.orbit.rho_dense(tau)
        };
        let y = tr.orbit.state(tau).y[0];
        let curvature = gauss_curvature_unchecked(self.family, rho, y);
        BasePoint { tau, tau_to_end: s, rho, y, curvature }
    }

    /// Integrates `(φ, y, ẏ)` from `t_a` (where `φ = phi_a`) towards `t_b`.
    fn run(&self, t_a: T, phi_a: T, x_a: [T; 2], t_b: T, renormalize: bool) -> Result<JacobiSolution<T>> {
        let tp = self.traj.tau_plus;
        let floor = c::<T>(RHO_FLOOR);
        let rhs = |_t: T, v: &[T], d: &mut [T]| {
            let b = self.base_at_phi(v[0]);
            d[0] = b.rho * tp / (b.tau * b.tau_to_end);
            d[1] = v[2];
            d[2] = -b.curvature * v[1];
        };
        let scale = x_a[0].abs() + x_a[1].abs();
        if !(scale > T::zero()) {
            return Err(AhxError::OutOfRange("Jacobi initial data must be nonzero".into()));
        }
        let tol = Tolerances { rtol: vec![self.tol; 3], atol: vec![self.tol, self.tol * scale, self.tol * scale] };
        let mut steps = Vec::new();
        let mut start = [phi_a, x_a[0], x_a[1]];
        if t_b == t_a {
            return Ok(JacobiSolution { t_a, t_b, steps, start: [phi_a, x_a[0], x_a[1]] });
        }
        let mut st = Dopri5::new(rhs, t_a, vec![phi_a, x_a[0], x_a[1]], T::zero(), t_b > t_a, tol);
        st.max_steps = 1_000_000;
        let fwd = t_b > t_a;
        loop {
            let remaining = (t_b - st.t()).abs();
            st.h_max = remaining.min(c(MAX_STEP));
            let step = st.step()?;
            let t1 = step.t1();
            let beyond = (t1 - t_b).abs() <= t_b.abs().max(T::one()) * T::epsilon() * c(8.0)
                || if fwd { t1 >= t_b } else { t1 <= t_b };
            let y1 = step.y1();
            if self.base_at_phi(y1[0]).rho < floor {
                return Err(AhxError::OutOfRange("t_span exceeds the traced range of the geodesic".into()));
            }
            if renormalize && !beyond {
                let n = y1[1].abs() + y1[2].abs();
                if n > c(1e20) {
                    // Only the direction matters here; rescale the whole history.
                    let inv = n.recip();
                    steps.push(step);
                    for s in steps.iter_mut() {
                        s.scale_components(&[1, 2], inv);
                    }
                    start[1] = start[1] * inv;
                    start[2] = start[2] * inv;
                    let mut v = y1;
                    v[1] = v[1] * inv;
                    v[2] = v[2] * inv;
                    st.set_state(v);
                    continue;
                }
            }
            steps.push(step);
            if beyond {
                break;
            }
        }
        Ok(JacobiSolution { t_a, t_b, steps, start })
    }

    /// `φ` at hyperbolic time `t`.
    pub fn phi_at(&self, t: T) -> Result<T> {
        let phi0 = self.phi_of_tau(self.tau0);
        if t == T::zero() {
            return Ok(phi0);
        }
        let sol = self.run(T::zero(), phi0, [T::one(), T::zero()], t, true)?;
        Ok(sol.state(t)[0])
    }

    /// Base point at hyperbolic time `t`.
    pub fn base_at(&self, t: T) -> Result<BasePoint<T>> {
        Ok(self.base_at_phi(self.phi_at(t)?))
    }

    /// Hyperbolic time of rescaled parameter `τ`, relative to the origin.
    pub fn t_of_tau(&self, tau: T) -> T {
        let (a, b, sign) = if tau >= self.tau0 { (self.tau0, tau, T::one()) } else { (tau, self.tau0, -T::one()) };
        let breaks = self.traj.orbit.step_breaks();
        let v = quad::integrate(|s| self.traj.rho(s).recip(), a, b, &breaks, c(1e-14), c(1e-13), 4000).value;
        sign * v
    }
}

/// Dense Jacobi solution on `[t_a, t_b]` (either orientation).
#[derive(Clone, Debug)]
pub struct JacobiSolution<T> {
    pub t_a: T,
    pub t_b: T,
    steps: Vec<DenseStep<T>>,
    start: [T; 3],
}

impl<T: Real> JacobiSolution<T> {
    fn state(&self, t: T) -> Vec<T> {
        if self.steps.is_empty() || t == self.t_a {
            return self.start.to_vec();
        }
        let fwd = self.t_b > self.t_a;
        let idx = if fwd {
            self.steps.partition_point(|s| s.t1() < t)
        } else {
            self.steps.partition_point(|s| s.t1() > t)
        };
        self.steps[idx.min(self.steps.len() - 1)].eval(t)
    }

    /// `(y, ẏ)` at `t`.
    pub fn at(&self, t: T) -> [T; 2] {
        let s = self.state(t);
        [s[1], s[2]]
    }

    /// Logit clock value at `t`.
    pub fn phi(&self, t: T) -> T {
        self.state(t)[0]
    }

    /// `(t, y, ẏ)` at the end of every accepted step.
    pub fn samples(&self) -> Vec<(T, T, T)> {
        let mut out = vec![(self.t_a, self.start[1], self.start[2])];
        for s in &self.steps {
            let t = if (self.t_b > self.t_a && s.t1() > self.t_b) || (self.t_b < self.t_a && s.t1() < self.t_b) {
                self.t_b
            } else {
                s.t1()
            };
            let v = s.eval(t);
            out.push((t, v[1], v[2]));
        }
        out
    }

    /// Zeros of `y` strictly after `t_a`, bracketed per step and bisected.
    pub fn zeros(&self) -> Vec<T> {
        let mut out = Vec::new();
        let fwd = self.t_b > self.t_a;
        for s in &self.steps {
            let lo = s.t0;
            let hi = if (fwd && s.t1() > self.t_b) || (!fwd && s.t1() < self.t_b) { self.t_b } else { s.t1() };
            let (ya, yb) = (s.component(lo, 1), s.component(hi, 1));
            // A zero exactly at a step end is reported once, by the step it ends.
            if ya == T::zero() {
                continue;
            }
            if yb == T::zero() {
                out.push(hi);
            } else if (ya > T::zero()) != (yb > T::zero()) {
                let (mut a, mut b) = (lo, hi);
                for _ in 0..200 {
                    let m = (a + b) * c(0.5);
                    if m == a || m == b {
                        break;
                    }
                    if (s.component(m, 1) > T::zero()) == (ya > T::zero()) {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                out.push((a + b) * c(0.5));
            }
        }
        out
    }
}

/// Solves `ÿ + K y = 0` from `(y0, ẏ0)` at `t_span.0` to `t_span.1`.
pub fn jacobi_solve<T: Real>(system: &JacobiSystem<'_, T>, y0: T, ydot0: T, t_span: (T, T)) -> Result<JacobiSolution<T>> {
    let phi = system.phi_at(t_span.0)?;
    system.run(t_span.0, phi, [y0, ydot0], t_span.1, false)
}

/// Conjugate times in `(0, t_max]` of the origin along the geodesic.
pub fn conjugate_points<T: Real>(system: &JacobiSystem<'_, T>, t_max: T) -> Result<Vec<T>> {
    let sol = jacobi_solve(system, T::zero(), T::one(), (T::zero(), t_max))?;
    Ok(sol.zeros())
}

/// Stable and unstable data at one base point.
#[derive(Clone, Copy, Debug)]
pub struct BundleFrame<T> {
    /// Hyperbolic time of the base point.
    pub t: T,
    pub tau: T,
    /// Unit `(y, ẏ)` of the solution decaying as `t → +∞`.
    pub stable: [T; 2],
    /// Unit `(y, ẏ)` of the solution decaying as `t → −∞`.
    pub unstable: [T; 2],
    /// Angle between the two lines, in radians.
    pub transversality: T,
    /// `det[stable | unstable]` of the unit data.
    pub det: T,
}

impl<T: Real> BundleFrame<T> {
    pub fn angle_deg(&self) -> T {
        self.transversality.to_degrees()
    }
}

fn unit<T: Real>(v: [T; 2]) -> [T; 2] {
    let n = v[0].hypot(v[1]);
    let s = if v[0] < T::zero() || (v[0] == T::zero() && v[1] < T::zero()) { -n } else { n };
    [v[0] / s, v[1] / s]
}

fn frame<T: Real>(t: T, tau: T, s: [T; 2], u: [T; 2]) -> BundleFrame<T> {
    let (s, u) = (unit(s), unit(u));
    let dot = (s[0] * u[0] + s[1] * u[1]).abs().min(T::one());
    BundleFrame { t, tau, stable: s, unstable: u, transversality: dot.acos(), det: s[0] * u[1] - s[1] * u[0] }
}

fn check_asymptotic<T: Real>(system: &JacobiSystem<'_, T>, t: T) -> Result<T> {
    let phi = system.phi_at(t)?;
    let k = system.base_at_phi(phi).curvature;
    if (k + T::one()).abs() > c(ASYMPTOTIC_CURVATURE_TOL) {
        return Err(AhxError::OutOfRange(format!(
            "|K + 1| = {:e} at t = {} is above {:e}; increase T_asym",
            to_f64((k + T::one()).abs()),
            to_f64(t),
            ASYMPTOTIC_CURVATURE_TOL
        )));
    }
    Ok(phi)
}

/// Solution with `e^{t}x → (1, −1)` as `t → +∞`, computed backwards from
/// `T_asym` down to `t_min` with renormalization (only its direction is meaningful
/// where renormalization occurred).
pub fn stable_solution<T: Real>(system: &JacobiSystem<'_, T>, t_asym: T, t_min: T) -> Result<JacobiSolution<T>> {
    let phi = check_asymptotic(system, t_asym)?;
    let e = (-t_asym).exp();
    system.run(t_asym, phi, [e, -e], t_min, true)
}

/// Solution with `e^{−t}x → (1, 1)` as `t → −∞`, computed forwards from `−T_asym`.
pub fn unstable_solution<T: Real>(system: &JacobiSystem<'_, T>, t_asym: T, t_max: T) -> Result<JacobiSolution<T>> {
    let phi = check_asymptotic(system, -t_asym)?;
    let e = (-t_asym).exp();
    system.run(-t_asym, phi, [e, e], t_max, true)
}

/// Stable/unstable frame at the origin of the system.
pub fn stable_unstable<T: Real>(system: &JacobiSystem<'_, T>, t_asym: T) -> Result<BundleFrame<T>> {
    Ok(stable_unstable_along(system, t_asym, &[T::zero()])?.remove(0))
}

/// Frames at several hyperbolic times along the geodesic.
pub fn stable_unstable_along<T: Real>(system: &JacobiSystem<'_, T>, t_asym: T, times: &[T]) -> Result<Vec<BundleFrame<T>>> {
    let lo = times.iter().fold(T::zero(), |m, &t| m.min(t));
    let hi = times.iter().fold(T::zero(), |m, &t| m.max(t));
    if !(hi < t_asym && lo > -t_asym) {
        return Err(AhxError::OutOfRange("base times must lie inside (−T_asym, T_asym)".into()));
    }
    let s = stable_solution(system, t_asym, lo)?;
    let u = unstable_solution(system, t_asym, hi)?;
    Ok(times
        .iter()
        .map(|&t| {
            let tau = system.base_at_phi(s.phi(t)).tau;
            frame(t, tau, s.at(t), u.at(t))
        })
        .collect())
}

/// Proxy norm `|y| + |ẏ|`.
fn proxy<T: Real>(x: [T; 2]) -> T {
    x[0].abs() + x[1].abs()
}

/// Least-squares slope of `−log(|y| + |ẏ|)` of the stable solution over `[t0, t1]`.
pub fn decay_exponent<T: Real>(system: &JacobiSystem<'_, T>, t_asym: T, t0: T, t1: T, n: usize) -> Result<T> {
    let s = stable_solution(system, t_asym, t0.min(t1))?;
    let pts: Vec<(T, T)> = (0..=n)
        .map(|k| {
            let t = t0 + (t1 - t0) * c(k as f64 / n as f64);
            (t, proxy(s.at(t)).ln())
        })
        .collect();
    let m = c::<T>(pts.len() as f64);
    let (st, sl) = pts.iter().fold((T::zero(), T::zero()), |(a, b), &(t, l)| (a + t, b + l));
    let (tm, lm) = (st / m, sl / m);
    let (num, den) = pts
        .iter()
        .fold((T::zero(), T::zero()), |(a, b), &(t, l)| (a + (t - tm) * (l - lm), b + (t - tm) * (t - tm)));
    Ok(-num / den)
}

/// Smallest `C` with `‖x(t+s)‖ ≤ C e^{−νt}‖x(s)‖` for the stable solution and
/// its mirror for the unstable one, over a grid of `s, t + s` in `[−span, span]`.
pub fn hyperbolicity_constant<T: Real>(system: &JacobiSystem<'_, T>, t_asym: T, nu: T, span: T, n: usize) -> Result<T> {
    let st = stable_solution(system, t_asym, -span)?;
    let un = unstable_solution(system, t_asym, span)?;
    let grid: Vec<T> = (0..=n).map(|k| -span + (span + span) * c(k as f64 / n as f64)).collect();
    let ns: Vec<T> = grid.iter().map(|&t| proxy(st.at(t))).collect();
    let nu_: Vec<T> = grid.iter().map(|&t| proxy(un.at(t))).collect();
    let mut best = T::zero();
    for i in 0..grid.len() {
        for j in i..grid.len() {
            let dt = grid[j] - grid[i];
            let w = (nu * dt).exp();
            best = best.max(ns[j] / ns[i] * w).max(nu_[i] / nu_[j] * w);
        }
    }
    Ok(best)
}

/// `ρ|y|/|ẏ|` of the stable solution at the given times: the ratio of its
/// horizontal to vertical part in compactified coordinates.
pub fn boundary_verticality<T: Real>(system: &JacobiSystem<'_, T>, t_asym: T, times: &[T]) -> Result<Vec<T>> {
    let lo = times.iter().fold(T::zero(), |m, &t| m.min(t));
    let s = stable_solution(system, t_asym, lo)?;
    Ok(times
        .iter()
        .map(|&t| {
            let x = s.at(t);
            let rho = system.base_at_phi(s.phi(t)).rho;
            rho * x[0].abs() / x[1].abs()
        })
        .collect())
}

/// `max |K(t) + 1| e^{|t|}` over `n + 1` points of `[−span, span]`.
pub fn curvature_decay_constant<T: Real>(system: &JacobiSystem<'_, T>, span: T, n: usize) -> Result<T> {
    let fwd = system.run(T::zero(), system.phi_of_tau(system.tau0), [T::one(), T::zero()], span, true)?;
    let bwd = system.run(T::zero(), system.phi_of_tau(system.tau0), [T::one(), T::zero()], -span, true)?;
    let mut best = T::zero();
    for k in 0..=n {
        let t = span * c(k as f64 / n as f64);
        for (sol, tt) in [(&fwd, t), (&bwd, -t)] {
            let kk = system.base_at_phi(sol.phi(tt)).curvature;
            best = best.max((kk + T::one()).abs() * t.exp());
        }
    }
    Ok(best)
}

/// Bounds of `ρ(t)e^{t}/ρ(0)` for `t ∈ [0, span]`, with `t = 0` where the
/// geodesic, past its turning point, first has `ξ̄₀ = xi_start`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RateBracket {
    pub lower: f64,
    pub upper: f64,
}

pub fn rate_bracket<T: Real>(
    family: &BoundaryMetricFamily<T>,
    traj: &GeodesicTrajectory<T>,
    xi_start: T,
    span: T,
    n: usize,
) -> Result<RateBracket> {
    if !(xi_start < T::zero() && xi_start > -T::one()) {
        return Err(AhxError::OutOfRange("xi_start must lie in (−1, 0)".into()));
    }
    let turn = traj.turning_point();
    let xi = |tau: T| traj.orbit.state(tau).xi_bar0 - xi_start;
    let (mut a, mut b) = (turn, traj.tau_plus * (T::one() - c(1e-9)));
    if !(xi(a) > T::zero() && xi(b) <= T::zero()) {
        return Err(AhxError::OutOfRange("no outgoing point with the requested angle".into()));
    }
    for _ in 0..200 {
        let m = (a + b) * c(0.5);
        if m == a || m == b {
            break;
        }
        if xi(m) > T::zero() {
            a = m;
        } else {
            b = m;
        }
    }
    let sys = JacobiSystem::new(family, traj.clone(), b)?;
    let sol = sys.run(T::zero(), sys.phi_of_tau(b), [T::one(), T::zero()], span, true)?;
    let rho0 = traj.rho(b);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..=n {
        let t = span * c(k as f64 / n as f64);
        let r = to_f64(sys.base_at_phi(sol.phi(t)).rho * t.exp() / rho0);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(RateBracket { lower: lo, upper: hi })
}

/// Outcome of a simplicity sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimplicityReport {
    pub min_angle_deg: f64,
    pub min_abs_det: f64,
    pub conjugate_count: usize,
    /// Smallest fitted decay exponent of stable solutions.
    pub nu_fit: f64,
    /// Largest measured hyperbolicity constant at `ν = SIMPLICITY_NU`.
    pub c_fit: f64,
    pub geodesics: usize,
    pub failures: usize,
    pub failure_messages: Vec<String>,
}

/// Sweep parameters for [`simplicity_check`].
#[derive(Clone, Debug)]
pub struct SimplicityOptions {
    pub t_asym: f64,
    /// Base points along each geodesic, in hyperbolic time from the turning point.
    pub base_times: Vec<f64>,
    /// Conjugate points are searched from `−conjugate_span` to `+conjugate_span`.
    pub conjugate_span: f64,
    pub nu: f64,
    pub trace: TraceOptions<f64>,
}

pub const SIMPLICITY_NU: f64 = 0.95;

impl Default for SimplicityOptions {
    fn default() -> Self {
        SimplicityOptions {
            t_asym: T_ASYM_DEFAULT,
            base_times: vec![-4.0, -2.0, 0.0, 2.0, 4.0],
            conjugate_span: 10.0,
            nu: SIMPLICITY_NU,
            trace: TraceOptions::with_tol(1e-12),
        }
    }
}

struct GeodesicDiagnostics {
    min_angle: f64,
    min_det: f64,
    conjugate: usize,
    nu_fit: f64,
    c_fit: f64,
}

fn diagnose_one(family: &BoundaryMetricFamily<f64>, z: &BoundaryCovector<f64>, o: &SimplicityOptions) -> Result<GeodesicDiagnostics> {
    let sys = JacobiSystem::from_covector(family, z, &o.trace)?;
    let frames = stable_unstable_along(&sys, o.t_asym, &o.base_times)?;
    let min_angle = frames.iter().map(|f| f.angle_deg()).fold(f64::INFINITY, f64::min);
    let min_det = frames.iter().map(|f| f.det.abs()).fold(f64::INFINITY, f64::min);
    let span = o.conjugate_span;
    let phi = sys.phi_at(-span)?;
    let sol = sys.run(-span, phi, [0.0, 1.0], span, false)?;
    let conjugate = sol.zeros().len();
    let nu_fit = decay_exponent(&sys, o.t_asym, 0.0, 10.0, 40)?;
    let c_fit = hyperbolicity_constant(&sys, o.t_asym, o.nu, 8.0, 64)?;
    Ok(GeodesicDiagnostics { min_angle, min_det, conjugate, nu_fit, c_fit })
}

/// Sweeps stable/unstable frames and conjugate points over a grid of incoming
/// covectors (in parallel).
pub fn simplicity_check(family: &BoundaryMetricFamily<f64>, grid: &[BoundaryCovector<f64>], o: &SimplicityOptions) -> SimplicityReport {
    let results: Vec<Result<GeodesicDiagnostics>> = grid.par_iter().map(|z| diagnose_one(family, z, o)).collect();
    let mut rep = SimplicityReport {
        min_angle_deg: f64::INFINITY,
        min_abs_det: f64::INFINITY,
        conjugate_count: 0,
        nu_fit: f64::INFINITY,
        c_fit: 0.0,
        geodesics: grid.len(),
        failures: 0,
        failure_messages: Vec::new(),
    };
    for r in results {
        match r {
            Ok(d) => {
                rep.min_angle_deg = rep.min_angle_deg.min(d.min_angle);
                rep.min_abs_det = rep.min_abs_det.min(d.min_det);
                rep.conjugate_count += d.conjugate;
                rep.nu_fit = rep.nu_fit.min(d.nu_fit);
                rep.c_fit = rep.c_fit.max(d.c_fit);
            }
            Err(e) => {
                rep.failures += 1;
                rep.failure_messages.push(e.to_string());
            }
        }
    }
    rep
}

/// Grid of incoming covectors `(y, η)` used by the diagnostics.
pub fn covector_grid(ys: &[f64], etas: &[f64]) -> Vec<BoundaryCovector<f64>> {
    ys.iter().flat_map(|&y| etas.iter().map(move |&e| BoundaryCovector::incoming1(y, e))).collect()
}
