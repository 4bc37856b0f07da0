//! The rescaled geodesic flow on the compactified cosphere bundle, boundary
//! arrival, scattering data and short geodesics.
//!
//! State layout used by every integrator here: `[ρ, y…, ξ̄₀, η…]`.

use crate::error::{AhxError, Result};
use crate::linalg::Mat;
use crate::metric::{BoundaryMetricFamily, FamilyKind, MetricEval};
use crate::ode::{DenseStep, Dopri5, Tolerances};
use crate::quad;
use crate::scalar::{c, to_f64, wrap_angle, Real};

/// A point `(ρ, y, ξ̄₀, η)` of the compactified cosphere bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct BPhasePoint<T> {
    pub rho: T,
    pub y: Vec<T>,
    pub xi_bar0: T,
    pub eta: Vec<T>,
}

impl<T: Real> BPhasePoint<T> {
    pub fn from_slice(v: &[T]) -> Self {
        let n = (v.len() - 2) / 2;
        BPhasePoint { rho: v[0], y: v[1..=n].to_vec(), xi_bar0: v[n + 1], eta: v[n + 2..].to_vec() }
    }

    pub fn to_vec(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(2 * self.y.len() + 2);
        v.push(self.rho);
        v.extend_from_slice(&self.y);
        v.push(self.xi_bar0);
        v.extend_from_slice(&self.eta);
        v
    }

    /// `ξ̄₀² + ρ²|η|²_{h_ρ} − 1`.
    pub fn constraint_residual(&self, family: &BoundaryMetricFamily<T>) -> Result<T> {
        let e = family.eval_unchecked(self.rho, &self.y)?;
        Ok(self.xi_bar0 * self.xi_bar0 + self.rho * self.rho * e.eta_normsq(&self.eta) - T::one())
    }

    /// The same geodesic traversed backwards.
    pub fn reversed(&self) -> Self {
        BPhasePoint {
            rho: self.rho,
            y: self.y.clone(),
            xi_bar0: -self.xi_bar0,
            eta: self.eta.iter().map(|&x| -x).collect(),
        }
    }

    /// Unit-speed state through `(ρ, y)` with `ξ̄₀ = cos a` and the η-direction `dir`
    /// scaled so that `ρ|η|_{h_ρ} = |sin a|`.
    pub fn from_angle(family: &BoundaryMetricFamily<T>, rho: T, y: &[T], angle: T, dir: &[T]) -> Result<Self> {
        let e = family.eval_unchecked(rho, y)?;
        let nrm = e.eta_normsq(dir).sqrt();
        let s = angle.sin() / (rho * nrm);
        Ok(BPhasePoint { rho, y: y.to_vec(), xi_bar0: angle.cos(), eta: dir.iter().map(|&d| d * s).collect() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Incoming,
    Outgoing,
}

/// A boundary datum `(y, η)` identified with a point of `∂∓S*M`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryCovector<T> {
    pub y: Vec<T>,
    pub eta: Vec<T>,
    pub side: Side,
}

impl<T: Real> BoundaryCovector<T> {
    pub fn incoming(y: Vec<T>, eta: Vec<T>) -> Self {
        BoundaryCovector { y, eta, side: Side::Incoming }
    }

    pub fn incoming1(y: T, eta: T) -> Self {
        Self::incoming(vec![y], vec![eta])
    }

    /// Phase-space point: `ρ = 0`, `ξ̄₀ = +1` (incoming) or `−1` (outgoing).
    pub fn to_phase(&self) -> BPhasePoint<T> {
        let s = if self.side == Side::Incoming { T::one() } else { -T::one() };
        BPhasePoint { rho: T::zero(), y: self.y.clone(), xi_bar0: s, eta: self.eta.clone() }
    }

    /// Incoming datum of the reversed geodesic.
    pub fn time_reversed(&self) -> Self {
        BoundaryCovector {
            y: self.y.clone(),
            eta: self.eta.iter().map(|&x| -x).collect(),
            side: if self.side == Side::Incoming { Side::Outgoing } else { Side::Incoming },
        }
    }
}

/// Evaluates the rescaled field into `out` (no range checks). Returns `false`
/// if the metric is singular at the state.
pub(crate) fn barx_into<T: Real>(family: &BoundaryMetricFamily<T>, s: &[T], out: &mut [T]) -> bool {
    let n = family.dim;
    let rho = s[0];
    let y = &s[1..=n];
    let xb = s[n + 1];
    let eta = &s[n + 2..];
    out[0] = xb;
    if eta.iter().all(|&e| e == T::zero()) {
        for v in out[1..].iter_mut() {
            *v = T::zero();
        }
        return true;
    }
    let e = match family.eval_unchecked(rho, y) {
        Ok(e) => e,
        Err(_) => {
            for v in out.iter_mut() {
                *v = T::nan();
            }
            return false;
        }
    };
    fill_barx(&e, rho, eta, n, out);
    true
}

fn fill_barx<T: Real>(e: &MetricEval<T>, rho: T, eta: &[T], n: usize, out: &mut [T]) {
    let sharp = e.sharp(eta);
    let nn = e.h_inv.bilinear(eta, eta);
    let dr = -e.dh_drho_mat.bilinear(&sharp, &sharp);
    for i in 0..n {
        out[1 + i] = rho * sharp[i];
    }
    let half = c::<T>(0.5);
    out[n + 1] = -(rho * nn + half * rho * rho * dr);
    for k in 0..n {
        let dk = -e.dh_dy_mats[k].bilinear(&sharp, &sharp);
        out[n + 2 + k] = -half * rho * dk;
    }
}

/// `X̄ = (ξ̄₀, ρ h^{ij}η_i, −[ρ|η|² + ½ρ²∂_ρ|η|²], −½ρ ∂_{y^k}|η|²)`.
pub fn barx_eval<T: Real>(family: &BoundaryMetricFamily<T>, state: &BPhasePoint<T>) -> Result<BPhasePoint<T>> {
    if !(state.rho >= T::zero()) {
        return Err(AhxError::OutOfRange("rho must be non-negative".into()));
    }
    if !family.in_chart(&state.y) {
        return Err(AhxError::OutOfRange(format!("y = {:?} outside the chart", state.y)));
    }
    let s = state.to_vec();
    let mut out = vec![T::zero(); s.len()];
    if !barx_into(family, &s, &mut out) {
        return Err(AhxError::SingularMetric { rho: to_f64(state.rho) });
    }
    Ok(BPhasePoint::from_slice(&out))
}

/// Integration controls.
#[derive(Clone, Debug)]
pub struct TraceOptions<T> {
    /// Relative/absolute integrator tolerance.
    pub tol: T,
    /// Budget of hyperbolic length spent above `rho_floor`.
    pub t_max: T,
    /// Arclength is monitored only where `ρ ≥ rho_floor`.
    pub rho_floor: T,
    pub max_steps: usize,
}

impl<T: Real> Default for TraceOptions<T> {
    fn default() -> Self {
        TraceOptions { tol: c(1e-10), t_max: c(60.0), rho_floor: c(1e-3), max_steps: 200_000 }
    }
}

impl<T: Real> TraceOptions<T> {
    pub fn with_tol(tol: T) -> Self {
        TraceOptions { tol, ..Default::default() }
    }
}

/// Coordinates a dense step was computed in.
#[derive(Clone, Copy, Debug)]
enum Chart<T> {
    /// `[ρ, y, ξ̄₀, η]`.
    Normal,
    /// Cartesian ball coordinates `[x₁, x₂, p₁, p₂]` around the disc centre;
    /// `y_ref` and the sign of the angular momentum fix the branch of `y`.
    Centre { y_ref: T, positive: bool },
}

#[derive(Clone, Debug)]
struct Piece<T> {
    step: DenseStep<T>,
    hi: T,
    chart: Chart<T>,
}

impl<T: Real> Piece<T> {
    fn eval(&self, tau: T) -> Vec<T> {
        let v = self.step.eval(tau);
        match self.chart {
            Chart::Normal => v,
            Chart::Centre { y_ref, positive } => centre_to_normal(&v, y_ref, positive),
        }
    }

    fn component(&self, tau: T, i: usize) -> T {
        match self.chart {
            Chart::Normal => self.step.component(tau, i),
            _ => self.eval(tau)[i],
        }
    }
}

/// Dense solution of the rescaled flow from a start state until the boundary.
///
/// The parameter runs from 0 to `tau_end`. A backward orbit is stored as the
/// forward orbit of the reversed state; see [`Orbit::state_forward`].
#[derive(Clone, Debug)]
pub struct Orbit<T> {
    dim: usize,
    pieces: Vec<Piece<T>>,
    pub tau_end: T,
    pub start: BPhasePoint<T>,
    pub end: BPhasePoint<T>,
    pub backward: bool,
    /// Parameters where the integration switched charts.
    pub chart_switches: Vec<T>,
    /// Hyperbolic length accumulated above the monitor floor.
    pub monitored_length: T,
}

impl<T: Real> Orbit<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    fn piece(&self, tau: T) -> &Piece<T> {
        let idx = self.pieces.partition_point(|p| p.step.t0 <= tau).saturating_sub(1);
        &self.pieces[idx]
    }

    fn raw(&self, tau: T) -> Vec<T> {
        if tau <= T::zero() {
            return self.start.to_vec();
        }
        if tau >= self.tau_end {
            return self.end.to_vec();
        }
        self.piece(tau).eval(tau)
    }

    fn raw_component(&self, tau: T, i: usize) -> T {
        if tau <= T::zero() {
            return self.start.to_vec()[i];
        }
        if tau >= self.tau_end {
            return self.end.to_vec()[i];
        }
        self.piece(tau).component(tau, i)
    }

    /// Phase point at parameter `τ` (orientation as integrated).
    pub fn state(&self, tau: T) -> BPhasePoint<T> {
        BPhasePoint::from_slice(&self.raw(tau))
    }

    /// Phase point at parameter `τ` in the forward orientation of the geodesic.
    pub fn state_forward(&self, tau: T) -> BPhasePoint<T> {
        let s = self.state(tau);
        if self.backward {
            s.reversed()
        } else {
            s
        }
    }

    pub fn rho_dense(&self, tau: T) -> T {
        self.raw_component(tau, 0)
    }

    /// Parameters and states at the end of each accepted step.
    pub fn samples(&self) -> Vec<(T, BPhasePoint<T>)> {
        let mut out = vec![(T::zero(), self.start.clone())];
        for p in &self.pieces {
            if p.hi >= self.tau_end {
                break;
            }
            out.push((p.hi, BPhasePoint::from_slice(&p.eval(p.hi))));
        }
        out.push((self.tau_end, self.end.clone()));
        out
    }

    /// Boundary datum at the far end, in the forward orientation: `B₊` for a
    /// forward orbit, `B₋` (incoming) for a backward one.
    pub fn boundary_end(&self) -> BoundaryCovector<T> {
        if self.backward {
            let e = self.end.reversed();
            BoundaryCovector { y: e.y, eta: e.eta, side: Side::Incoming }
        } else {
            BoundaryCovector { y: self.end.y.clone(), eta: self.end.eta.clone(), side: Side::Outgoing }
        }
    }

    /// Step boundaries, useful as quadrature breakpoints.
    pub fn step_breaks(&self) -> Vec<T> {
        self.pieces.iter().map(|p| p.hi).filter(|&h| h < self.tau_end).collect()
    }
}

/// The disc chart is left for Cartesian coordinates when `ρ` exceeds this value…
const CENTRE_ENTER: f64 = 1.5;
/// …and re-entered when `ρ` drops below this one.
const CENTRE_LEAVE: f64 = 1.4;

/// `(ρ, y, ξ̄₀, η) → (x, p)` in the ball model, `ρ = 2(1 − r)/(1 + r)`.
fn normal_to_centre<T: Real>(v: &[T]) -> Vec<T> {
    let (rho, y, xb, eta) = (v[0], v[1], v[2], v[3]);
    let two = c::<T>(2.0);
    let r = (two - rho) / (two + rho);
    let (sy, cy) = y.sin_cos();
    let opr = T::one() + r;
    let p_r = -c::<T>(4.0) * (xb / rho) / (opr * opr);
    let p_t = eta / r;
    vec![r * cy, r * sy, p_r * cy - p_t * sy, p_r * sy + p_t * cy]
}

fn centre_to_normal<T: Real>(v: &[T], y_ref: T, positive: bool) -> Vec<T> {
    let (x1, x2, p1, p2) = (v[0], v[1], v[2], v[3]);
    let r = x1.hypot(x2);
    let two = c::<T>(2.0);
    let rho = two * (T::one() - r) / (T::one() + r);
    let eta = x1 * p2 - x2 * p1;
    let opr = T::one() + r;
    let y = if r > T::zero() {
        // The angle swept inside the centre region is below π, in the direction of η.
        let half_pi = T::FRAC_PI_2();
        let d = x2.atan2(x1) - y_ref;
        if positive {
            y_ref + wrap_angle(d + half_pi) - half_pi
        } else {
            y_ref - (wrap_angle(-d + half_pi) - half_pi)
        }
    } else {
        y_ref + if positive { T::FRAC_PI_2() } else { -T::FRAC_PI_2() }
    };
    let p_r = if r > T::zero() { (x1 * p1 + x2 * p2) / r } else { p1.hypot(p2) };
    let xb = -rho * p_r * opr * opr / c(4.0);
    vec![rho, y, xb, eta]
}

/// Geodesic field of the ball model in rescaled time, `d/dτ = ρ⁻¹ d/dt`.
fn centre_rhs<T: Real>(v: &[T], d: &mut [T]) {
    let (x1, x2, p1, p2) = (v[0], v[1], v[2], v[3]);
    let q = T::one() - x1 * x1 - x2 * x2;
    let r = x1.hypot(x2);
    let inv_rho = (T::one() + r) / (c::<T>(2.0) * (T::one() - r));
    let w = q * q / c(4.0);
    let pp = p1 * p1 + p2 * p2;
    let k = q * pp / c(2.0);
    d[0] = inv_rho * w * p1;
    d[1] = inv_rho * w * p2;
    d[2] = inv_rho * k * x1;
    d[3] = inv_rho * k * x2;
}

fn tolerances<T: Real>(dim: usize, tol: T) -> Tolerances<T> {
    let mut t = Tolerances::uniform(2 * dim + 2, tol, tol);
    // ρ is controlled relatively so that it stays accurate near the boundary.
    t.atol[0] = tol * c(1e-4);
    t
}

fn bisect<T: Real, F: Fn(T) -> T>(f: F, mut lo: T, mut hi: T) -> T {
    // Invariant: f(lo) > 0 ≥ f(hi).
    for _ in 0..200 {
        let mid = (lo + hi) * c(0.5);
        if !(mid > lo && mid < hi) {
            break;
        }
        if f(mid) > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Integrates the rescaled flow until `ρ` returns to 0.
///
/// With `backward` set, the reversed state is integrated forward, so the
/// stored states carry the reversed covector; see [`Orbit::state_forward`].
/// For the exact disc the region around the centre is integrated in Cartesian
/// ball coordinates, where the polar chart degenerates.
pub fn integrate_orbit<T: Real>(
    family: &BoundaryMetricFamily<T>,
    start: &BPhasePoint<T>,
    backward: bool,
    opts: &TraceOptions<T>,
) -> Result<Orbit<T>> {
    let n = family.dim;
    let start = if backward { start.reversed() } else { start.clone() };
    let rhs = |_t: T, s: &[T], d: &mut [T]| {
        barx_into(family, s, d);
    };
    let crhs = |_t: T, s: &[T], d: &mut [T]| centre_rhs(s, d);
    let centre = matches!(family.kind, FamilyKind::DiscNormal);
    let (enter, leave) = (c::<T>(CENTRE_ENTER), c::<T>(CENTRE_LEAVE));
    let mut stepper = Dopri5::new(rhs, T::zero(), start.to_vec(), T::zero(), true, tolerances(n, opts.tol));
    stepper.max_steps = opts.max_steps;
    let mut cstepper: Option<(Dopri5<T, _>, T, bool)> = None;
    let mut pieces: Vec<Piece<T>> = Vec::new();
    let mut switches = Vec::new();
    let mut length = T::zero();
    let mut steps = 0usize;
    // Restores the unit-cosphere constraint through ξ̄₀ alone, where that is
    // well conditioned; η is left untouched so conserved momenta stay exact.
    let proj = |v: &mut [T]| {
        if v[n + 1] * v[n + 1] < c(0.5) || v[n + 2..].iter().all(|&e| e == T::zero()) {
            return;
        }
        if let Ok(e) = family.eval_unchecked(v[0], &v[1..=n]) {
            let rest = T::one() - v[0] * v[0] * e.eta_normsq(&v[n + 2..]);
            if rest > T::zero() {
                v[n + 1] = rest.sqrt().copysign(v[n + 1]);
            }
        }
    };
    loop {
        steps += 1;
        if steps > opts.max_steps {
            return Err(AhxError::Integration(crate::ode::OdeError::TooManySteps(opts.max_steps)));
        }
        if let Some((cs, y_ref, positive)) = cstepper.as_mut() {
            let (y_ref, positive) = (*y_ref, *positive);
            let st = cs.step()?;
            let piece = Piece { step: st, hi: T::zero(), chart: Chart::Centre { y_ref, positive } };
            let (t0, t1) = (piece.step.t0, piece.step.t1());
            let mut piece = Piece { hi: t1, ..piece };
            let r1 = piece.component(t1, 0);
            let tm = (t0 + t1) * c(0.5);
            length = length + (t1 - t0) / c(6.0)
                * (piece.component(t0, 0).recip() + c::<T>(4.0) * piece.component(tm, 0).recip() + r1.recip());
            if r1 <= leave {
                let tc = bisect(|t| piece.component(t, 0) - leave, t0, t1);
                let s = piece.eval(tc);
                piece.hi = tc;
                pieces.push(piece);
                switches.push(tc);
                stepper = Dopri5::new(rhs, tc, s, T::zero(), true, tolerances(n, opts.tol));
                stepper.max_steps = opts.max_steps;
                cstepper = None;
            } else {
                pieces.push(piece);
            }
            if length > opts.t_max {
                return Err(AhxError::TrappedOrSlow { length: to_f64(length), t_max: to_f64(opts.t_max) });
            }
            continue;
        }
        let mut st = stepper.step()?;
        let t0 = st.t0;
        let t1 = st.t1();
        let mut y1 = st.y1();
        if y1[0] <= T::zero() {
            // Boundary event: bisection on the dense output, then one Newton polish.
            let tb = bisect(|t| st.component(t, 0), t0, t1);
            let rb = st.component(tb, 0);
            let xb = st.component(tb, n + 1);
            let mut tau = tb;
            if xb < T::zero() {
                let cand = tb - rb / xb;
                if cand > t0 && cand <= t1 {
                    tau = cand;
                }
            }
            let mut end = st.eval(tau);
            end[0] = T::zero();
            end[n + 1] = -T::one();
            pieces.push(Piece { step: st, hi: tau, chart: Chart::Normal });
            return Ok(Orbit {
                dim: n,
                pieces,
                tau_end: tau,
                start,
                end: BPhasePoint::from_slice(&end),
                backward,
                chart_switches: switches,
                monitored_length: length,
            });
        }
        if centre && y1[0] >= enter {
            let tc = bisect(|t| enter - st.component(t, 0), t0, t1);
            let s = st.eval(tc);
            pieces.push(Piece { step: st, hi: tc, chart: Chart::Normal });
            switches.push(tc);
            let mut cs = Dopri5::new(crhs, tc, normal_to_centre(&s), T::zero(), true, Tolerances::uniform(4, opts.tol * c(0.01), opts.tol * c(0.01)));
            cs.max_steps = opts.max_steps;
            cstepper = Some((cs, s[1], s[3] >= T::zero()));
            continue;
        }
        // Hyperbolic length above the floor (Simpson on the step).
        let tm = (t0 + t1) * c(0.5);
        let (r0, rm, r1) = (st.component(t0, 0), st.component(tm, 0), y1[0]);
        if r0 >= opts.rho_floor && rm >= opts.rho_floor && r1 >= opts.rho_floor {
            length = length + (t1 - t0) / c(6.0) * (r0.recip() + c::<T>(4.0) * rm.recip() + r1.recip());
        }
        if length > opts.t_max {
            return Err(AhxError::TrappedOrSlow { length: to_f64(length), t_max: to_f64(opts.t_max) });
        }
        if !family.in_chart(&y1[1..=n]) {
            return Err(AhxError::ChartExit { y: y1[1..=n].iter().map(|&v| to_f64(v)).collect() });
        }
        proj(&mut y1);
        st.set_end(&y1);
        stepper.set_state(y1);
        pieces.push(Piece { hi: t1, step: st, chart: Chart::Normal });
    }
}

/// Coefficients of `ρ(σ) = σ − N₀σ³/6 − N_ρσ⁴/8 + O(σ⁵)` at a boundary end,
/// where `N₀ = |η|²_{h₀}` and `N_ρ = ∂_ρ|η|²` at `ρ = 0`.
#[derive(Clone, Copy, Debug)]
pub struct EndSeries<T> {
    pub n0: T,
    pub nrho: T,
}

impl<T: Real> EndSeries<T> {
    pub fn at(family: &BoundaryMetricFamily<T>, y: &[T], eta: &[T]) -> Result<Self> {
        let e = family.eval_unchecked(T::zero(), y)?;
        Ok(EndSeries { n0: e.eta_normsq(eta), nrho: e.drho_normsq(eta) })
    }

    pub fn rho(&self, s: T) -> T {
        s - self.deficit(s)
    }

    /// `σ − ρ(σ)`, free of cancellation.
    pub fn deficit(&self, s: T) -> T {
        let s3 = s * s * s;
        self.n0 * s3 / c(6.0) + self.nrho * s3 * s / c(8.0)
    }
}

/// A complete geodesic from `∂₋S*M` to `∂₊S*M` with dense output.
#[derive(Clone, Debug)]
pub struct GeodesicTrajectory<T> {
    pub incoming: BoundaryCovector<T>,
    pub orbit: Orbit<T>,
    pub tau_plus: T,
    pub start_series: EndSeries<T>,
    pub end_series: EndSeries<T>,
    /// Half-width of the endpoint windows where the series replace dense output.
    pub window: T,
}

impl<T: Real> GeodesicTrajectory<T> {
    pub fn state(&self, tau: T) -> BPhasePoint<T> {
        self.orbit.state(tau)
    }

    /// `ρ(τ)` using the endpoint expansions inside the end windows.
    pub fn rho(&self, tau: T) -> T {
        let s = self.tau_plus - tau;
        if tau < self.window {
            self.start_series.rho(tau)
        } else if s < self.window {
            self.end_series.rho(s)
        } else {
            self.orbit.rho_dense(tau)
        }
    }

    /// `1/ρ − 1/τ − 1/(τ₊ − τ)`, evaluated without catastrophic cancellation at the ends.
    pub fn regularized_inverse_rho(&self, tau: T) -> T {
        let s = self.tau_plus - tau;
        if tau < self.window {
            let r = self.start_series.rho(tau);
            self.start_series.deficit(tau) / (r * tau) - s.recip()
        } else if s < self.window {
            let r = self.end_series.rho(s);
            self.end_series.deficit(s) / (r * s) - tau.recip()
        } else {
            self.orbit.rho_dense(tau).recip() - tau.recip() - s.recip()
        }
    }

    /// Outgoing datum `(y₊, η₊)` with periodic coordinates reduced.
    pub fn outgoing(&self, family: &BoundaryMetricFamily<T>) -> BoundaryCovector<T> {
        let mut y = self.orbit.end.y.clone();
        family.reduce_y(&mut y);
        BoundaryCovector { y, eta: self.orbit.end.eta.clone(), side: Side::Outgoing }
    }

    /// Outgoing base point without reduction (continuous in the initial data).
    pub fn outgoing_unreduced(&self) -> Vec<T> {
        self.orbit.end.y.clone()
    }

    /// Hyperbolic length `∫_{τa}^{τb} dτ/ρ` for `0 < τa < τb < τ₊`.
    pub fn arclength(&self, tau_a: T, tau_b: T) -> T {
        let breaks = self.orbit.step_breaks();
        quad::integrate(|t| self.rho(t).recip(), tau_a, tau_b, &breaks, c(1e-13), c(1e-12), 4000).value
    }

    /// Parameter `τ` with maximal `ρ` (the turning point of the geodesic).
    pub fn turning_point(&self) -> T {
        let samples = self.orbit.samples();
        let mut best = 0;
        for (i, (_, s)) in samples.iter().enumerate() {
            if s.rho > samples[best].1.rho {
                best = i;
            }
        }
        let lo = if best > 0 { samples[best - 1].0 } else { T::zero() };
        let hi = if best + 1 < samples.len() { samples[best + 1].0 } else { self.tau_plus };
        // ξ̄₀ = dρ/dτ changes sign at the maximum.
        let n = self.orbit.dim();
        let f = |t: T| self.orbit.raw_component(t, n + 1);
        if f(lo) > T::zero() && f(hi) <= T::zero() {
            bisect(f, lo, hi)
        } else {
            samples[best].0
        }
    }
}

/// Traces the geodesic entering at `z ∈ ∂₋S*M` until it reaches `∂₊S*M`.
pub fn trace_geodesic<T: Real>(
    family: &BoundaryMetricFamily<T>,
    z: &BoundaryCovector<T>,
    opts: &TraceOptions<T>,
) -> Result<GeodesicTrajectory<T>> {
    if z.side != Side::Incoming {
        return Err(AhxError::OutOfRange("trace_geodesic needs an incoming covector".into()));
    }
    if z.y.len() != family.dim || z.eta.len() != family.dim {
        return Err(AhxError::OutOfRange(format!("expected {} boundary coordinates", family.dim)));
    }
    if !(opts.tol > T::zero()) {
        return Err(AhxError::OutOfRange("tolerance must be positive".into()));
    }
    if !family.in_chart(&z.y) {
        return Err(AhxError::ChartExit { y: z.y.iter().map(|&v| to_f64(v)).collect() });
    }
    let orbit = integrate_orbit(family, &z.to_phase(), false, opts)?;
    let tau_plus = orbit.tau_end;
    let start_series = EndSeries::at(family, &z.y, &z.eta)?;
    let end_series = EndSeries::at(family, &orbit.end.y, &orbit.end.eta)?;
    let window = tau_plus * c(1e-3);
    Ok(GeodesicTrajectory { incoming: z.clone(), orbit, tau_plus, start_series, end_series, window })
}

/// `S_g(z)`: the outgoing datum of the geodesic entering at `z`.
pub fn scattering_map<T: Real>(
    family: &BoundaryMetricFamily<T>,
    z: &BoundaryCovector<T>,
    opts: &TraceOptions<T>,
) -> Result<BoundaryCovector<T>> {
    Ok(trace_geodesic(family, z, opts)?.outgoing(family))
}

/// Finite-difference Jacobian of the scattering map in `(y, η)` coordinates.
#[derive(Clone, Debug)]
pub struct ScatteringJacobian<T> {
    /// Row-major `2n × 2n`, rows `(y₊, η₊)`, columns `(y, η)`.
    pub matrix: Mat<T>,
    /// `max |Mᵀ J M − J|` for `J` the matrix of `Σ dηᵢ∧dyⁱ`.
    pub symplectic_residual: T,
    pub det: T,
}

/// Central-difference Jacobian of `S_g` with relative step `step`.
pub fn scattering_jacobian<T: Real>(
    family: &BoundaryMetricFamily<T>,
    z: &BoundaryCovector<T>,
    step: T,
    opts: &TraceOptions<T>,
) -> Result<ScatteringJacobian<T>> {
    let n = family.dim;
    let m = 2 * n;
    let eval = |zz: &BoundaryCovector<T>| -> Result<Vec<T>> {
        let tr = trace_geodesic(family, zz, opts)?;
        let mut v = tr.outgoing_unreduced();
        v.extend_from_slice(&tr.orbit.end.eta);
        Ok(v)
    };
    let mut mat = Mat::zeros(m);
    for j in 0..m {
        let base = if j < n { z.y[j] } else { z.eta[j - n] };
        let h = step * (T::one().max(base.abs()));
        let shift = |d: T| {
            let mut zz = z.clone();
            if j < n {
                zz.y[j] = zz.y[j] + d;
            } else {
                zz.eta[j - n] = zz.eta[j - n] + d;
            }
            zz
        };
        let fp = eval(&shift(h))?;
        let fm = eval(&shift(-h))?;
        let dy = family.y_diff(&fm[..n], &fp[..n]);
        for i in 0..m {
            let d = if i < n { dy[i] } else { fp[i] - fm[i] };
            mat.set(i, j, d / (h + h));
        }
    }
    let mut jm = Mat::zeros(m);
    for i in 0..n {
        jm.set(i, n + i, -T::one());
        jm.set(n + i, i, T::one());
    }
    let res = mat.transpose().mul(&jm).mul(&mat).sub(&jm).max_abs();
    let det = determinant(&mat);
    Ok(ScatteringJacobian { matrix: mat, symplectic_residual: res, det })
}

fn determinant<T: Real>(m: &Mat<T>) -> T {
    let n = m.n;
    let mut a = m.a.clone();
    let mut det = T::one();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if a[piv * n + col] == T::zero() {
            return T::zero();
        }
        if piv != col {
            for j in 0..n {
                a.swap(piv * n + j, col * n + j);
            }
            det = -det;
        }
        det = det * a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for j in col..n {
                a[r * n + j] = a[r * n + j] - f * a[col * n + j];
            }
        }
    }
    det
}

/// Solution of the short-geodesic system in the variables `(θ, u, ω)`.
#[derive(Clone, Debug)]
pub struct ShortGeodesicResult<T> {
    pub delta: T,
    pub omega0: Vec<T>,
    /// `(s, θ, u, ω)` at the end of every accepted step.
    pub theta_samples: Vec<(T, T, Vec<T>, Vec<T>)>,
    pub u_end: Vec<T>,
    pub y_end: Vec<T>,
    pub omega_end: Vec<T>,
    pub s0: T,
}

/// Default cap on `δ` for the short-geodesic system.
pub const DELTA_MAX_DEFAULT: f64 = 0.2;

/// Largest admissible `δ`: monotonicity of `θ` on the frozen solution with 50 % margin,
/// capped at [`DELTA_MAX_DEFAULT`].
pub fn delta_max<T: Real>(family: &BoundaryMetricFamily<T>, y0: &[T], omega0: &[T]) -> Result<T> {
    let e = family.eval_unchecked(T::zero(), y0)?;
    let nn = e.eta_normsq(omega0);
    let dr = e.drho_normsq(omega0);
    // On the frozen solution Q̃ = sinθ ∂_ρ|ω|²/(2|ω|³); its most negative value sets the limit.
    let worst = (-dr / (c::<T>(2.0) * nn * nn.sqrt())).max(T::zero());
    let cap = c::<T>(DELTA_MAX_DEFAULT);
    if worst == T::zero() {
        Ok(cap)
    } else {
        Ok(cap.min((c::<T>(1.5) * worst).recip()))
    }
}

/// Solves `ρ |ω|_{h_ρ(y)} = target` by Newton iteration from `ρ = target`.
fn solve_rho<T: Real>(family: &BoundaryMetricFamily<T>, y: &[T], omega: &[T], target: T) -> Option<(T, MetricEval<T>)> {
    let mut rho = target;
    for _ in 0..50 {
        let e = family.eval_unchecked(rho, y).ok()?;
        let nn = e.eta_normsq(omega);
        let nr = nn.sqrt();
        let f = rho * nr - target;
        let df = nr + rho * e.drho_normsq(omega) / (c::<T>(2.0) * nr);
        if !(df > T::zero()) {
            return None;
        }
        let d = f / df;
        rho = rho - d;
        if !(rho >= -T::epsilon()) {
            return None;
        }
        if d.abs() <= c::<T>(4.0) * T::epsilon() * (T::one() + rho.abs()) || f == T::zero() {
            let e = family.eval_unchecked(rho, y).ok()?;
            return Some((rho, e));
        }
    }
    None
}

/// Integrates the short-geodesic system from `(θ, u, ω) = (0, 0, ω₀)` until `θ = π`.
pub fn short_geodesic<T: Real>(
    family: &BoundaryMetricFamily<T>,
    y0: &[T],
    omega0: &[T],
    delta: T,
    tol: T,
) -> Result<ShortGeodesicResult<T>> {
    let n = family.dim;
    let e0 = family.eval_unchecked(T::zero(), y0)?;
    let norm0 = e0.eta_normsq(omega0).sqrt();
    if (norm0 - T::one()).abs() > c(1e-10) {
        return Err(AhxError::OutOfRange(format!("omega0 must be unit in h0, has norm {norm0}")));
    }
    let dmax = delta_max(family, y0, omega0)?;
    if !(delta > T::zero() && delta < dmax) {
        return Err(AhxError::OutOfRange(format!("delta = {delta} outside (0, {dmax})")));
    }
    let failure = std::cell::Cell::new(None::<AhxError>);
    let rhs = |_s: T, v: &[T], d: &mut [T]| {
        let th = v[0];
        let u = &v[1..=n];
        let om = &v[n + 1..];
        let y: Vec<T> = (0..n).map(|i| y0[i] + delta * u[i]).collect();
        let target = delta * th.sin().max(T::zero());
        let (_rho, e) = match solve_rho(family, &y, om, target) {
            Some(r) => r,
            None => {
                failure.set(Some(AhxError::NewtonFailure { iters: 50, residual: f64::NAN }));
                for x in d.iter_mut() {
                    *x = T::nan();
                }
                return;
            }
        };
        let nn = e.eta_normsq(om);
        let nr = nn.sqrt();
        let sharp = e.sharp(om);
        let st = th.sin();
        let q = st * e.drho_normsq(om) / (c::<T>(2.0) * nn * nr);
        d[0] = T::one() + delta * q;
        for i in 0..n {
            d[1 + i] = st * sharp[i] / nn;
            d[n + 1 + i] = -delta * st * e.dy_normsq(om, i) / (c::<T>(2.0) * nn);
        }
    };
    let mut v0 = vec![T::zero(); 2 * n + 1];
    v0[n + 1..].copy_from_slice(omega0);
    let mut stepper = Dopri5::new(rhs, T::zero(), v0.clone(), T::zero(), true, Tolerances::uniform(2 * n + 1, tol, tol));
    stepper.h_max = c(0.25);
    let mut samples = vec![(T::zero(), T::zero(), vec![T::zero(); n], omega0.to_vec())];
    let pi = T::PI();
    loop {
        let st = match stepper.step() {
            Ok(s) => s,
            Err(err) => return Err(failure.take().unwrap_or(AhxError::Integration(err))),
        };
        if let Some(err) = failure.take() {
            return Err(err);
        }
        let y1 = st.y1();
        if y1[0] < st.y0()[0] {
            return Err(AhxError::OutOfRange("theta is not monotone; delta beyond validity".into()));
        }
        if y1[0] >= pi {
            let s0 = bisect(|s| pi - st.component(s, 0), st.t0, st.t1());
            let v = st.eval(s0);
            let u_end = v[1..=n].to_vec();
            let y_end: Vec<T> = (0..n).map(|i| y0[i] + delta * u_end[i]).collect();
            let omega_end = v[n + 1..].to_vec();
            samples.push((s0, pi, u_end.clone(), omega_end.clone()));
            return Ok(ShortGeodesicResult {
                delta,
                omega0: omega0.to_vec(),
                theta_samples: samples,
                u_end,
                y_end,
                omega_end,
                s0,
            });
        }
        samples.push((st.t1(), y1[0], y1[1..=n].to_vec(), y1[n + 1..].to_vec()));
    }
}
