//! Symmetric tensor fields on the interior, their lifts to the unit cosphere
//! bundle, geodesic X-ray transforms, the symmetrized covariant derivative,
//! gauge normalization, phase-space quadrature and zero-energy resolvents.
//!
//! Tensor components live in the coordinate coframe `{dρ, dy¹, …, dyⁿ}`; index 0 is `dρ`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{AhxError, Result};
use crate::flow::{integrate_orbit, trace_geodesic, BPhasePoint, BoundaryCovector, GeodesicTrajectory, TraceOptions};
use crate::metric::{BoundaryMetricFamily, MetricEval};
use crate::quad::{self, QuadResult};
use crate::scalar::{c, to_f64, Real};

type ComponentFn<T> = Arc<dyn Fn(T, &[T]) -> Vec<T> + Send + Sync>;
/// `(∂_ρ components, [∂_{y^k} components])`.
type DerivativeFn<T> = Arc<dyn Fn(T, &[T]) -> (Vec<T>, Vec<Vec<T>>) + Send + Sync>;

/// A symmetric covariant tensor field of rank 0, 1 or 2 with declared boundary weight:
/// components are `ρ^weight` times a function smooth up to `ρ = 0`.
#[derive(Clone)]
pub struct SymmetricTensorField<T> {
    pub rank: usize,
    pub dim: usize,
    pub weight: i32,
    comps: ComponentFn<T>,
    derivs: Option<DerivativeFn<T>>,
}

impl<T> fmt::Debug for SymmetricTensorField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymmetricTensorField")
            .field("rank", &self.rank)
            .field("dim", &self.dim)
            .field("weight", &self.weight)
            .field("analytic_derivatives", &self.derivs.is_some())
            .finish()
    }
}

impl<T: Real> SymmetricTensorField<T> {
    /// `comps(ρ, y)` returns the `(n+1)^rank` components row-major. Rank-2
    /// arrays are symmetrized on evaluation.
    pub fn new<F>(rank: usize, dim: usize, weight: i32, comps: F) -> Result<Self>
    where
        F: Fn(T, &[T]) -> Vec<T> + Send + Sync + 'static,
    {
        if rank > 2 {
            return Err(AhxError::Unsupported(format!("tensor rank {rank}")));
        }
        Ok(SymmetricTensorField { rank, dim, weight, comps: Arc::new(comps), derivs: None })
    }

    pub fn scalar<F>(dim: usize, weight: i32, f: F) -> Self
    where
        F: Fn(T, &[T]) -> T + Send + Sync + 'static,
    {
        SymmetricTensorField { rank: 0, dim, weight, comps: Arc::new(move |r, y| vec![f(r, y)]), derivs: None }
    }

    pub fn zero(rank: usize, dim: usize) -> Self {
        let len = (dim + 1).pow(rank as u32);
        SymmetricTensorField { rank, dim, weight: 0, comps: Arc::new(move |_, _| vec![T::zero(); len]), derivs: None }
    }

    /// Attaches exact first derivatives, used by [`sym_derivative`] instead of differencing.
    pub fn with_derivatives<F>(mut self, d: F) -> Self
    where
        F: Fn(T, &[T]) -> (Vec<T>, Vec<Vec<T>>) + Send + Sync + 'static,
    {
        self.derivs = Some(Arc::new(d));
        self
    }

    /// The metric `g = ρ⁻²(dρ² + h_ρ)` as a rank-2 field of weight −2.
    pub fn metric(family: &BoundaryMetricFamily<T>) -> Self {
        let fam = family.clone();
        let n = family.dim;
        SymmetricTensorField {
            rank: 2,
            dim: n,
            weight: -2,
            comps: Arc::new(move |rho, y| {
                let p = fam.parts(rho, y);
                let s = (rho * rho).recip();
                let mut out = vec![T::zero(); (n + 1) * (n + 1)];
                out[0] = s;
                for i in 0..n {
                    for j in 0..n {
                        out[(i + 1) * (n + 1) + j + 1] = s * p.h.get(i, j);
                    }
                }
                out
            }),
            derivs: None,
        }
    }

    pub fn components(&self, rho: T, y: &[T]) -> Vec<T> {
        let mut v = (self.comps)(rho, y);
        if self.rank == 2 {
            symmetrize(&mut v, self.dim + 1);
        }
        v
    }

    /// Admissible for the X-ray transform iff `weight ≥ 1 − rank`.
    pub fn is_admissible(&self) -> bool {
        self.weight >= 1 - self.rank as i32
    }

    pub fn check_admissible(&self) -> Result<()> {
        if self.is_admissible() {
            Ok(())
        } else {
            Err(AhxError::InadmissibleWeight { rank: self.rank, weight: self.weight, min: 1 - self.rank as i32 })
        }
    }

    /// Samples `ρ^{−weight}·|components|` at `ρ = 10⁻², 10⁻⁴` and rejects the
    /// declared weight if the scaled size grows by more than a factor 10.
    pub fn validate_weight(&self, ys: &[Vec<T>]) -> Result<()> {
        let scaled = |rho: T, y: &[T]| {
            let m = self.components(rho, y).iter().fold(T::zero(), |m, v| m.max(v.abs()));
            m * rho.powi(-self.weight)
        };
        for y in ys {
            let a = scaled(c(1e-2), y);
            let b = scaled(c(1e-4), y);
            if !(b <= c::<T>(10.0) * a + c(1e-12)) {
                return Err(AhxError::InadmissibleWeight {
                    rank: self.rank,
                    weight: self.weight,
                    min: 1 - self.rank as i32,
                });
            }
        }
        Ok(())
    }

    /// `s·self`.
    pub fn scaled(&self, s: T) -> Self {
        let f = self.comps.clone();
        let d = self.derivs.clone();
        SymmetricTensorField {
            rank: self.rank,
            dim: self.dim,
            weight: self.weight,
            comps: Arc::new(move |r, y| f(r, y).into_iter().map(|v| v * s).collect()),
            derivs: d.map(|d| -> DerivativeFn<T> {
                Arc::new(move |r, y| {
                    let (a, b) = d(r, y);
                    let sc = |v: Vec<T>| v.into_iter().map(|x| x * s).collect::<Vec<T>>();
                    (sc(a), b.into_iter().map(sc).collect())
                })
            }),
        }
    }

    /// Sum of two fields of the same rank; the weight is the smaller of the two.
    pub fn add(&self, o: &Self) -> Result<Self> {
        if self.rank != o.rank || self.dim != o.dim {
            return Err(AhxError::OutOfRange("tensor rank or dimension mismatch".into()));
        }
        let (f, g) = (self.comps.clone(), o.comps.clone());
        Ok(SymmetricTensorField {
            rank: self.rank,
            dim: self.dim,
            weight: self.weight.min(o.weight),
            comps: Arc::new(move |r, y| f(r, y).into_iter().zip(g(r, y)).map(|(a, b)| a + b).collect()),
            derivs: None,
        })
    }

    /// First derivatives: analytic when attached, otherwise central differences with step `10⁻⁶`.
    pub fn derivatives(&self, rho: T, y: &[T]) -> (Vec<T>, Vec<Vec<T>>) {
        if let Some(d) = &self.derivs {
            let (mut a, mut b) = d(rho, y);
            if self.rank == 2 {
                symmetrize(&mut a, self.dim + 1);
                for v in b.iter_mut() {
                    symmetrize(v, self.dim + 1);
                }
            }
            return (a, b);
        }
        let base = c::<T>(FD_STEP);
        let hr = base.min(rho * c(0.5)).max(T::epsilon());
        let diff = |p: Vec<T>, m: Vec<T>, h: T| p.into_iter().zip(m).map(|(a, b)| (a - b) / (h + h)).collect::<Vec<T>>();
        let dr = diff(self.components(rho + hr, y), self.components(rho - hr, y), hr);
        let dy = (0..self.dim)
            .map(|k| {
                let h = base * (T::one() + y[k].abs());
                let mut yp = y.to_vec();
                let mut ym = y.to_vec();
                yp[k] = yp[k] + h;
                ym[k] = ym[k] - h;
                diff(self.components(rho, &yp), self.components(rho, &ym), h)
            })
            .collect();
        (dr, dy)
    }
}

/// Finite-difference step for tensor components without analytic derivatives.
pub const FD_STEP: f64 = 1e-6;

fn symmetrize<T: Real>(v: &mut [T], m: usize) {
    let half = c::<T>(0.5);
    for i in 0..m {
        for j in i + 1..m {
            let s = (v[i * m + j] + v[j * m + i]) * half;
            v[i * m + j] = s;
            v[j * m + i] = s;
        }
    }
}

/// `ξ^♯ = ξ̄₀ρ ∂_ρ + ρ² h^{ij}η_i ∂_{y^j}`: the unit tangent dual to the b-covector.
pub fn unit_tangent<T: Real>(e: &MetricEval<T>, state: &BPhasePoint<T>) -> Vec<T> {
    let rho = state.rho;
    let mut v = vec![state.xi_bar0 * rho];
    v.extend(e.sharp(&state.eta).into_iter().map(|s| rho * rho * s));
    v
}

fn contract<T: Real>(rank: usize, comps: &[T], v: &[T]) -> T {
    match rank {
        0 => comps[0],
        1 => comps.iter().zip(v).fold(T::zero(), |s, (&a, &b)| s + a * b),
        _ => {
            let m = v.len();
            let mut s = T::zero();
            for a in 0..m {
                for b in 0..m {
                    s = s + comps[a * m + b] * v[a] * v[b];
                }
            }
            s
        }
    }
}

/// `π*_m f(state) = f(ξ^♯, …, ξ^♯)`.
pub fn lift_tensor<T: Real>(
    family: &BoundaryMetricFamily<T>,
    f: &SymmetricTensorField<T>,
    state: &BPhasePoint<T>,
) -> Result<T> {
    if state.rho == T::zero() {
        if f.weight < 0 {
            return Err(AhxError::InadmissibleWeight { rank: f.rank, weight: f.weight, min: 0 });
        }
        if f.rank > 0 {
            return Ok(T::zero());
        }
    }
    let e = family.eval_unchecked(state.rho, &state.y)?;
    Ok(lift_with(&e, f, state))
}

fn lift_with<T: Real>(e: &MetricEval<T>, f: &SymmetricTensorField<T>, state: &BPhasePoint<T>) -> T {
    let comps = f.components(state.rho, &state.y);
    if f.rank == 0 {
        return comps[0];
    }
    contract(f.rank, &comps, &unit_tangent(e, state))
}

fn quad_tols<T: Real>(tol: T) -> (T, T) {
    (tol * c(1e-2), tol)
}

/// `∫₀^{τ₊} π*_m f / ρ dτ` along a traced trajectory.
pub fn xray_along<T: Real>(
    family: &BoundaryMetricFamily<T>,
    f: &SymmetricTensorField<T>,
    traj: &GeodesicTrajectory<T>,
    tol: T,
) -> Result<QuadResult<T>> {
    f.check_admissible()?;
    let (abs, rel) = quad_tols(tol);
    let breaks = traj.orbit.step_breaks();
    let mut failure = None;
    let r = quad::integrate(
        |tau| {
            let mut s = traj.state(tau);
            s.rho = traj.rho(tau);
            match family.eval_unchecked(s.rho, &s.y) {
                Ok(e) => lift_with(&e, f, &s) / s.rho,
                Err(err) => {
                    failure = Some(err);
                    T::zero()
                }
            }
        },
        T::zero(),
        traj.tau_plus,
        &breaks,
        abs,
        rel,
        4000,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(r),
    }
}

/// `I_m f(z)`: traces the geodesic entering at `z` and integrates the lift of `f`.
pub fn xray_transform<T: Real>(
    family: &BoundaryMetricFamily<T>,
    f: &SymmetricTensorField<T>,
    z: &BoundaryCovector<T>,
    tol: T,
) -> Result<T> {
    f.check_admissible()?;
    let traj = trace_geodesic(family, z, &TraceOptions::with_tol(tol.min(c(1e-10))))?;
    Ok(xray_along(family, f, &traj, tol)?.value)
}

/// `∫ f(φ̄_τ z)/ρ dτ` for a function `f` on the cosphere bundle.
pub fn xray_phase<T: Real, F: Fn(&BPhasePoint<T>) -> T>(traj: &GeodesicTrajectory<T>, f: F, tol: T) -> T {
    let (abs, rel) = quad_tols(tol);
    let breaks = traj.orbit.step_breaks();
    quad::integrate(
        |tau| {
            let mut s = traj.state(tau);
            s.rho = traj.rho(tau);
            f(&s) / s.rho
        },
        T::zero(),
        traj.tau_plus,
        &breaks,
        abs,
        rel,
        4000,
    )
    .value
}

/// Christoffel symbols `Γ^c_{ab}` of `g = ρ⁻²(dρ² + h_ρ)`, flattened as `[c][a][b]`.
pub fn christoffel<T: Real>(e: &MetricEval<T>, rho: T) -> Vec<T> {
    let n = e.h_mat.n;
    let m = n + 1;
    let r2 = (rho * rho).recip();
    let r3 = r2 / rho;
    let two = c::<T>(2.0);
    // ∂_d g_{ab} stored as dg[d][a][b].
    let mut dg = vec![T::zero(); m * m * m];
    let mut ginv = vec![T::zero(); m * m];
    ginv[0] = rho * rho;
    dg[0] = -two * r3;
    for i in 0..n {
        for j in 0..n {
            ginv[(i + 1) * m + j + 1] = rho * rho * e.h_inv.get(i, j);
            dg[(i + 1) * m + j + 1] = -two * r3 * e.h_mat.get(i, j) + r2 * e.dh_drho_mat.get(i, j);
            for k in 0..n {
                dg[(k + 1) * m * m + (i + 1) * m + j + 1] = r2 * e.dh_dy_mats[k].get(i, j);
            }
        }
    }
    let mut gam = vec![T::zero(); m * m * m];
    let half = c::<T>(0.5);
    for cc in 0..m {
        for a in 0..m {
            for b in 0..m {
                let mut s = T::zero();
                for d in 0..m {
                    let gi = ginv[cc * m + d];
                    if gi != T::zero() {
                        s = s + gi * (dg[a * m * m + d * m + b] + dg[b * m * m + d * m + a] - dg[d * m * m + a * m + b]);
                    }
                }
                gam[cc * m * m + a * m + b] = half * s;
            }
        }
    }
    gam
}

/// Symmetrized covariant derivative `Dq` of a rank-0 or rank-1 field.
pub fn sym_derivative<T: Real>(
    family: &BoundaryMetricFamily<T>,
    q: &SymmetricTensorField<T>,
) -> Result<SymmetricTensorField<T>> {
    if q.dim != family.dim {
        return Err(AhxError::OutOfRange("tensor dimension does not match the family".into()));
    }
    let n = q.dim;
    let m = n + 1;
    let qq = q.clone();
    match q.rank {
        0 => Ok(SymmetricTensorField {
            rank: 1,
            dim: n,
            weight: q.weight - 1,
            comps: Arc::new(move |rho, y| {
                let (dr, dy) = qq.derivatives(rho, y);
                let mut v = vec![dr[0]];
                v.extend(dy.iter().map(|d| d[0]));
                v
            }),
            derivs: None,
        }),
        1 => {
            let fam = family.clone();
            Ok(SymmetricTensorField {
                rank: 2,
                dim: n,
                weight: q.weight - 1,
                comps: Arc::new(move |rho, y| {
                    let val = qq.components(rho, y);
                    let (dr, dy) = qq.derivatives(rho, y);
                    // ∂_a q_b
                    let d = |a: usize, b: usize| if a == 0 { dr[b] } else { dy[a - 1][b] };
                    let gam = match fam.eval_unchecked(rho, y) {
                        Ok(e) => christoffel(&e, rho),
                        Err(_) => return vec![T::nan(); m * m],
                    };
                    let half = c::<T>(0.5);
                    let mut out = vec![T::zero(); m * m];
                    for a in 0..m {
                        for b in 0..m {
                            let mut s = half * (d(a, b) + d(b, a));
                            for cc in 0..m {
                                s = s - gam[cc * m * m + a * m + b] * val[cc];
                            }
                            out[a * m + b] = s;
                        }
                    }
                    out
                }),
                derivs: None,
            })
        }
        r => Err(AhxError::Unsupported(format!("D of a rank-{r} tensor"))),
    }
}

/// Cut-off equal to 1 for `ρ ≤ lo`, 0 for `ρ ≥ hi`, smooth in between. Returns `(χ, χ′)`.
pub fn smooth_step<T: Real>(rho: T, lo: T, hi: T) -> (T, T) {
    if rho <= lo {
        return (T::one(), T::zero());
    }
    if rho >= hi {
        return (T::zero(), T::zero());
    }
    let w = hi - lo;
    let s = (rho - lo) / w;
    let psi = |t: T| (-(t.recip())).exp();
    let dpsi = |t: T| psi(t) / (t * t);
    let (a, b) = (psi(T::one() - s), psi(s));
    let den = a + b;
    let val = a / den;
    let dval = (-dpsi(T::one() - s) * b - a * dpsi(s)) / (den * den);
    (val, dval / w)
}

/// Collar cut-off used by [`gauge_normalize`].
pub const GAUGE_CUTOFF: (f64, f64) = (0.3, 0.45);
/// Outer edge of the collar grid on which the gauge residual is measured.
pub const GAUGE_COLLAR: f64 = 0.25;
const GAUGE_NODES: usize = 24;

/// Output of [`gauge_normalize`].
#[derive(Clone, Debug)]
pub struct GaugeResult<T> {
    pub q: SymmetricTensorField<T>,
    /// `max |ι_{∂_ρ}(f − Dq)|` on the collar grid.
    pub residual: T,
}

/// Fourth-order central difference in `y` of a scalar map.
fn dy4<T: Real, F: Fn(T) -> T>(f: F, y: T) -> T {
    let h = c::<T>(1e-3) * (T::one() + y.abs());
    let (f1, f2) = (f(y + h) - f(y - h), f(y + h + h) - f(y - h - h));
    (c::<T>(8.0) * f1 - f2) / (c::<T>(12.0) * h)
}

/// Finds `q` of rank `m − 1` with `ι_{∂_ρ}(f − Dq) = 0` on `{ρ ≤ 0.3}` (one boundary dimension).
///
/// `q` is built from the explicit radial integrals, multiplied by a cut-off, and
/// carries exact ρ-derivatives. Fails if the collar residual exceeds `tol`.
pub fn gauge_normalize<T: Real>(
    family: &BoundaryMetricFamily<T>,
    f: &SymmetricTensorField<T>,
    tol: T,
) -> Result<GaugeResult<T>> {
    if family.dim != 1 || f.dim != 1 {
        return Err(AhxError::Unsupported("gauge normalization is implemented for one boundary dimension".into()));
    }
    f.check_admissible()?;
    let (lo, hi) = (c::<T>(GAUGE_CUTOFF.0), c::<T>(GAUGE_CUTOFF.1));
    let (gx, gw) = quad::gauss_legendre(GAUGE_NODES);
    let nodes: Arc<Vec<(T, T)>> = Arc::new(gx.iter().zip(&gw).map(|(&x, &w)| (c::<T>(0.5 * (x + 1.0)), c::<T>(0.5 * w))).collect());
    let q = match f.rank {
        1 => {
            // q = χ ∫₀^ρ f_ρ ds
            let ff = f.clone();
            let nd = nodes.clone();
            let big_q = Arc::new(move |rho: T, y: T| {
                nd.iter().fold(T::zero(), |s, &(x, w)| s + w * rho * ff.components(rho * x, &[y])[0])
            });
            let (bq, bq2) = (big_q.clone(), big_q.clone());
            let ff2 = f.clone();
            SymmetricTensorField::scalar(1, f.weight + 1, move |rho, y: &[T]| smooth_step(rho, lo, hi).0 * bq(rho, y[0]))
                .with_derivatives(move |rho, y| {
                    let (ch, dch) = smooth_step(rho, lo, hi);
                    let qv = bq2(rho, y[0]);
                    let dr = dch * qv + ch * ff2.components(rho, y)[0];
                    let dy = ch * dy4(|t| bq2(rho, t), y[0]);
                    (vec![dr], vec![vec![dy]])
                })
        }
        2 => {
            // Q₀ = ρ⁻¹∫₀^ρ s f_ρρ ds,  Q₁ = (h/ρ²)∫₀^ρ s²(2f_ρy − ∂_yQ₀)/h ds.
            // `q0` holds ρQ₀.
            let ff = f.clone();
            let nd = nodes.clone();
            let q0 = Arc::new(move |rho: T, y: T| {
                nd.iter().fold(T::zero(), |s, &(x, w)| {
                    let t = rho * x;
                    s + w * rho * t * ff.components(t, &[y])[0]
                })
            });
            let q0y = {
                let q0 = q0.clone();
                Arc::new(move |rho: T, y: T| dy4(|u| q0(rho, u), y))
            };
            let fam = family.clone();
            let ff = f.clone();
            let nd = nodes.clone();
            let q0y_in = q0y.clone();
            let inner = Arc::new(move |rho: T, y: T| {
                nd.iter().fold(T::zero(), |s, &(x, w)| {
                    let t = rho * x;
                    let h = fam.parts(t, &[y]).h.get(0, 0);
                    let src = c::<T>(2.0) * ff.components(t, &[y])[1] - q0y_in(t, y) / t;
                    s + w * rho * t * t * src / h
                })
            });
            let fam = family.clone();
            let big1 = {
                let inner = inner.clone();
                let fam = fam.clone();
                Arc::new(move |rho: T, y: T| fam.parts(rho, &[y]).h.get(0, 0) / (rho * rho) * inner(rho, y))
            };
            let (q0c, big1c) = (q0.clone(), big1.clone());
            let comps = move |rho: T, y: &[T]| {
                let ch = smooth_step(rho, lo, hi).0;
                vec![ch * q0c(rho, y[0]) / rho, ch * big1c(rho, y[0])]
            };
            let ff2 = f.clone();
            let derivs = move |rho: T, y: &[T]| {
                let (ch, dch) = smooth_step(rho, lo, hi);
                let p = fam.parts(rho, y);
                let (h, hr) = (p.h.get(0, 0), p.drho.get(0, 0));
                let a0 = q0(rho, y[0]) / rho;
                let a1 = big1(rho, y[0]);
                let fv = ff2.components(rho, y);
                let da0 = -a0 / rho + fv[0];
                let a0y = q0y(rho, y[0]) / rho;
                let da1 = (hr / h - c::<T>(2.0) / rho) * a1 + c::<T>(2.0) * fv[1] - a0y;
                let a1y = dy4(|u| big1(rho, u), y[0]);
                (vec![dch * a0 + ch * da0, dch * a1 + ch * da1], vec![vec![ch * a0y, ch * a1y]])
            };
            SymmetricTensorField::new(1, 1, f.weight + 1, comps)?.with_derivatives(derivs)
        }
        _ => return Err(AhxError::OutOfRange("gauge normalization needs rank 1 or 2".into())),
    };
    let dq = sym_derivative(family, &q)?;
    let collar = c::<T>(GAUGE_COLLAR);
    let mut residual = T::zero();
    for i in 1..=10 {
        let rho = collar * c(i as f64 / 10.0);
        for k in 0..8 {
            let y = [c::<T>(k as f64 * 0.785398163397448)];
            let fv = f.components(rho, &y);
            let dv = dq.components(rho, &y);
            // ι_{∂_ρ} picks the dρ entry of a one-form and the first row of a 2-tensor.
            let row = if f.rank == 1 { 1 } else { 2 };
            for a in 0..row {
                residual = residual.max((fv[a] - dv[a]).abs());
            }
        }
    }
    if !(residual <= tol) {
        return Err(AhxError::ResidualTooLarge { what: "gauge collar residual".into(), residual: to_f64(residual), tol: to_f64(tol) });
    }
    Ok(GaugeResult { q, residual })
}

/// Product quadrature on `∂₋S*M` and on a window of `S*M`, for one boundary
/// dimension with a periodic boundary coordinate.
#[derive(Clone, Debug)]
pub struct QuadratureMeasure<T> {
    /// `(y, η, weight)` for the measure `|dη ∧ dy|`.
    pub boundary: Vec<(T, T, T)>,
    /// `(ρ, y, θ, weight)`; weights include the Liouville density `√h/ρ²`.
    pub interior: Vec<(T, T, T, T)>,
    pub eta_max: T,
    pub rho_window: (T, T),
}

/// Mesh parameters for [`QuadratureMeasure::build`].
#[derive(Clone, Copy, Debug)]
pub struct MeshSpec {
    pub eta_max: f64,
    pub eta_panels: usize,
    pub eta_order: usize,
    pub boundary_y: usize,
    pub rho_window: (f64, f64),
    pub rho_panels: usize,
    pub rho_order: usize,
    pub interior_y: usize,
    pub interior_theta: usize,
}

/// Default truncation `|η| ≤ 20` of the boundary rule.
pub const ETA_MAX_DEFAULT: f64 = 20.0;

impl Default for MeshSpec {
    fn default() -> Self {
        MeshSpec {
            eta_max: ETA_MAX_DEFAULT,
            eta_panels: 40,
            eta_order: 4,
            boundary_y: 64,
            rho_window: (0.1, 1.9),
            rho_panels: 12,
            rho_order: 4,
            interior_y: 64,
            interior_theta: 64,
        }
    }
}

impl<T: Real> QuadratureMeasure<T> {
    /// Composite Gauss in `η` and `ρ`, trapezoid in the periodic `y` and fiber angle.
    pub fn build(family: &BoundaryMetricFamily<T>, m: &MeshSpec) -> Result<Self> {
        if family.dim != 1 || !family.is_periodic(0) {
            return Err(AhxError::Unsupported("phase-space quadrature needs one periodic boundary coordinate".into()));
        }
        let two_pi = c::<T>(std::f64::consts::TAU);
        let emax = c::<T>(m.eta_max);
        let eta = quad::composite_gauss(m.eta_panels, m.eta_order, -emax, emax);
        let hy = two_pi / c(m.boundary_y as f64);
        let mut boundary = Vec::with_capacity(eta.len() * m.boundary_y);
        for j in 0..m.boundary_y {
            let y = hy * c(j as f64);
            for &(e, w) in &eta {
                boundary.push((y, e, w * hy));
            }
        }
        let (ra, rb) = (c::<T>(m.rho_window.0), c::<T>(m.rho_window.1));
        let rho = quad::composite_gauss(m.rho_panels, m.rho_order, ra, rb);
        let hyi = two_pi / c(m.interior_y as f64);
        let ht = two_pi / c(m.interior_theta as f64);
        let mut interior = Vec::with_capacity(rho.len() * m.interior_y * m.interior_theta);
        for &(r, wr) in &rho {
            for j in 0..m.interior_y {
                let y = hyi * c(j as f64);
                let h = family.parts(r, &[y]).h.get(0, 0);
                let dens = h.sqrt() / (r * r);
                for k in 0..m.interior_theta {
                    interior.push((r, y, ht * c(k as f64), wr * hyi * ht * dens));
                }
            }
        }
        Ok(QuadratureMeasure { boundary, interior, eta_max: emax, rho_window: (ra, rb) })
    }
}

/// Phase point `ξ̄₀ = cos θ`, `η = √h sin θ / ρ` of the unit cosphere at `(ρ, y)`.
pub fn angle_state<T: Real>(family: &BoundaryMetricFamily<T>, rho: T, y: T, theta: T) -> BPhasePoint<T> {
    let h = family.parts(rho, &[y]).h.get(0, 0);
    BPhasePoint { rho, y: vec![y], xi_bar0: theta.cos(), eta: vec![h.sqrt() * theta.sin() / rho] }
}

/// Fiber angle of a unit phase point (inverse of [`angle_state`]).
pub fn fiber_angle<T: Real>(family: &BoundaryMetricFamily<T>, s: &BPhasePoint<T>) -> T {
    let h = family.parts(s.rho, &s.y).h.get(0, 0);
    (s.rho * s.eta[0] / h.sqrt()).atan2(s.xi_bar0)
}

/// Both sides of the Santaló identity.
#[derive(Clone, Copy, Debug)]
pub struct SantaloReport<T> {
    pub lhs: T,
    pub rhs: T,
    pub relative_gap: T,
}

const LEAK_TOL: f64 = 1e-10;

fn window_leakage<T: Real, F: Fn(&BPhasePoint<T>) -> T>(family: &BoundaryMetricFamily<T>, f: &F, m: &QuadratureMeasure<T>) -> T {
    let mut worst = T::zero();
    for &r in &[m.rho_window.0, m.rho_window.1] {
        for j in 0..64 {
            let y = c::<T>(std::f64::consts::TAU * j as f64 / 64.0);
            for k in 0..64 {
                let th = c::<T>(std::f64::consts::TAU * k as f64 / 64.0);
                worst = worst.max(f(&angle_state(family, r, y, th)).abs());
            }
        }
    }
    worst
}

/// Transforms of a phase-space function at every boundary node (parallel).
fn boundary_transforms<T: Real, F: Fn(&BPhasePoint<T>) -> T + Sync>(
    family: &BoundaryMetricFamily<T>,
    f: &F,
    nodes: &[(T, T, T)],
    tol: T,
) -> Result<Vec<T>> {
    let opts = TraceOptions::with_tol(tol.min(c(1e-10)));
    nodes
        .par_iter()
        .map(|&(y, eta, _)| {
            let tr = trace_geodesic(family, &BoundaryCovector::incoming1(y, eta), &opts)?;
            Ok(xray_phase(&tr, f, tol))
        })
        .collect()
}

fn edge_leakage<T: Real, F: Fn(&BPhasePoint<T>) -> T + Sync>(
    family: &BoundaryMetricFamily<T>,
    f: &F,
    m: &QuadratureMeasure<T>,
    tol: T,
) -> Result<T> {
    let edges: Vec<(T, T, T)> = (0..32)
        .flat_map(|j| {
            let y = c::<T>(std::f64::consts::TAU * j as f64 / 32.0);
            [(y, m.eta_max, T::one()), (y, -m.eta_max, T::one())]
        })
        .collect();
    let v = boundary_transforms(family, f, &edges, tol)?;
    Ok(v.into_iter().fold(T::zero(), |a, b| a.max(b.abs())))
}

/// `∫_{S*M} f |μ|` against `∫_{∂₋S*M} If |μ_∂|`.
///
/// Fails with [`AhxError::SupportLeakage`] if `f` is visible on the edges of the
/// interior window or `If` on the truncation edges `|η| = η_max`.
pub fn santalo_check<T: Real, F: Fn(&BPhasePoint<T>) -> T + Sync>(
    family: &BoundaryMetricFamily<T>,
    f: &F,
    measure: &QuadratureMeasure<T>,
    tol: T,
) -> Result<SantaloReport<T>> {
    let leak = window_leakage(family, f, measure).max(edge_leakage(family, f, measure, tol)?);
    if leak > c(LEAK_TOL) {
        return Err(AhxError::SupportLeakage(to_f64(leak)));
    }
    let lhs = measure
        .interior
        .iter()
        .fold(T::zero(), |s, &(r, y, th, w)| s + w * f(&angle_state(family, r, y, th)));
    let tr = boundary_transforms(family, f, &measure.boundary, tol)?;
    let rhs = measure.boundary.iter().zip(&tr).fold(T::zero(), |s, (&(_, _, w), &v)| s + w * v);
    let gap = (lhs - rhs).abs() / lhs.abs().max(T::min_positive_value());
    Ok(SantaloReport { lhs, rhs, relative_gap: gap })
}

/// Both sides of `⟨If, ω⟩_{∂₋} = ⟨f, ω∘B₋⟩_{S*M}`.
#[derive(Clone, Copy, Debug)]
pub struct AdjointReport<T> {
    pub boundary_side: T,
    pub interior_side: T,
    pub relative_gap: T,
}

/// Adjointness of `I` and the extension `ω ↦ ω∘B₋`; `B₋` is found by tracing
/// backwards from every interior node where `f` is non-negligible.
pub fn adjointness_check<T, F, W>(
    family: &BoundaryMetricFamily<T>,
    f: &F,
    omega: &W,
    measure: &QuadratureMeasure<T>,
    tol: T,
) -> Result<AdjointReport<T>>
where
    T: Real,
    F: Fn(&BPhasePoint<T>) -> T + Sync,
    W: Fn(&BoundaryCovector<T>) -> T + Sync,
{
    let tr = boundary_transforms(family, f, &measure.boundary, tol)?;
    let boundary_side = measure
        .boundary
        .iter()
        .zip(&tr)
        .fold(T::zero(), |s, (&(y, eta, w), &v)| s + w * v * omega(&BoundaryCovector::incoming1(y, eta)));
    let fmax = measure
        .interior
        .iter()
        .fold(T::zero(), |m, &(r, y, th, _)| m.max(f(&angle_state(family, r, y, th)).abs()));
    let cut = fmax * c(1e-16);
    let opts = TraceOptions::with_tol(tol.min(c(1e-10)));
    let parts: Result<Vec<T>> = measure
        .interior
        .par_iter()
        .map(|&(r, y, th, w)| {
            let s = angle_state(family, r, y, th);
            let fv = f(&s);
            if fv.abs() <= cut {
                return Ok(T::zero());
            }
            let orbit = integrate_orbit(family, &s, true, &opts)?;
            Ok(w * fv * omega(&orbit.boundary_end()))
        })
        .collect();
    let interior_side = parts?.into_iter().fold(T::zero(), |a, b| a + b);
    let gap = (boundary_side - interior_side).abs() / boundary_side.abs().max(T::min_positive_value());
    Ok(AdjointReport { boundary_side, interior_side, relative_gap: gap })
}

/// Direction of a resolvent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Zero-energy resolvents, normalized so that `−X R_± f = f − f∘B_±`:
/// `R₊f(z) = ∫₀^∞ (f(φ_t z) − f(B₊z)) dt` and
/// `R₋f(z) = −∫_{−∞}^0 (f(φ_t z) − f(B₋z)) dt`, both evaluated in the rescaled time.
pub fn resolvent_zero<T: Real, F: Fn(&BPhasePoint<T>) -> T>(
    family: &BoundaryMetricFamily<T>,
    f: &F,
    z: &BPhasePoint<T>,
    direction: Direction,
    tol: T,
) -> Result<T> {
    if !(z.rho > T::zero()) {
        return Err(AhxError::OutOfRange("resolvent needs an interior state".into()));
    }
    let backward = direction == Direction::Backward;
    let orbit = integrate_orbit(family, z, backward, &TraceOptions::with_tol(tol.min(c(1e-10))))?;
    let end = if backward { orbit.end.reversed() } else { orbit.end.clone() };
    let f_end = f(&end);
    let (abs, rel) = quad_tols(tol);
    let v = quad::integrate(
        |tau| {
            let s = orbit.state_forward(tau);
            (f(&s) - f_end) / s.rho
        },
        T::zero(),
        orbit.tau_end,
        &orbit.step_breaks(),
        abs,
        rel,
        4000,
    )
    .value;
    Ok(if backward { -v } else { v })
}
