//! Boundary metric families `h_ρ` defining `g = (dρ² + h_ρ)/ρ²`, and the
//! pointwise geometric data derived from them.

use crate::error::{AhxError, Result};
use crate::linalg::Mat;
use crate::scalar::{c, to_f64, wrap_angle, wrap_diff, Real};
use serde::{Deserialize, Serialize};

/// `p(y) = Σ_k cos_k·cos(ky) + sin_k·sin(ky)`, `k = 0, 1, …`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TrigPoly<T> {
    pub cos: Vec<T>,
    pub sin: Vec<T>,
}

impl<T: Real> TrigPoly<T> {
    pub fn zero() -> Self {
        TrigPoly { cos: vec![], sin: vec![] }
    }

    pub fn constant(v: T) -> Self {
        TrigPoly { cos: vec![v], sin: vec![] }
    }

    /// `amp·cos(k y)`.
    pub fn cosine(k: usize, amp: T) -> Self {
        let mut cos = vec![T::zero(); k + 1];
        cos[k] = amp;
        TrigPoly { cos, sin: vec![] }
    }

    pub fn sine(k: usize, amp: T) -> Self {
        let mut sin = vec![T::zero(); k + 1];
        sin[k] = amp;
        TrigPoly { cos: vec![], sin }
    }

    pub fn from_f64(cos: &[f64], sin: &[f64]) -> Self {
        TrigPoly { cos: cos.iter().map(|&x| c(x)).collect(), sin: sin.iter().map(|&x| c(x)).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.cos.iter().chain(&self.sin).all(|&x| x == T::zero())
    }

    /// Value and first derivative at `y`.
    pub fn eval(&self, y: T) -> (T, T) {
        let mut v = T::zero();
        let mut d = T::zero();
        for (k, &a) in self.cos.iter().enumerate() {
            if a != T::zero() {
                let kk = c::<T>(k as f64);
                v = v + a * (kk * y).cos();
                d = d - a * kk * (kk * y).sin();
            }
        }
        for (k, &a) in self.sin.iter().enumerate() {
            if a != T::zero() {
                let kk = c::<T>(k as f64);
                v = v + a * (kk * y).sin();
                d = d + a * kk * (kk * y).cos();
            }
        }
        (v, d)
    }

    pub fn scaled(&self, s: T) -> Self {
        TrigPoly {
            cos: self.cos.iter().map(|&x| x * s).collect(),
            sin: self.sin.iter().map(|&x| x * s).collect(),
        }
    }
}

/// Kind of one boundary coordinate.
#[derive(Clone, Debug, PartialEq)]
pub enum Coord<T> {
    /// Angle, reduced mod 2π on output.
    Periodic,
    /// Real line, optionally restricted to `[lo, hi]`.
    Affine { lo: Option<T>, hi: Option<T> },
}

/// The concrete family formulas.
#[derive(Clone, Debug, PartialEq)]
pub enum FamilyKind<T> {
    /// `h = dy²` on the affine chart (upper half-plane).
    HalfPlane,
    /// `h = (1 − ρ²/4)² dy²`, periodic (hyperbolic disc).
    DiscNormal,
    /// `h = exp(2(ρ a(y) + ρ² b(y))) dy²`, periodic.
    Perturbed { a: TrigPoly<T>, b: TrigPoly<T> },
    /// `h = diag(h_A(ρ, y¹), h_B(ρ, y²))` from two one-dimensional families.
    Product(Box<FamilyKind<T>>, Box<FamilyKind<T>>),
    /// `h = h_base · (1 + s ρ^power c(y¹))`.
    Deformed { base: Box<FamilyKind<T>>, s: T, profile: TrigPoly<T>, power: i32 },
    /// `h = h_base · (1 + amplitude ψ(ρ) c(y¹))` with `ψ` a smooth bump supported in `(lo, hi)`.
    InteriorBump { base: Box<FamilyKind<T>>, amplitude: T, lo: T, hi: T, profile: TrigPoly<T> },
    /// Truncated Taylor model `h = Σ_k ρ^k/k! (t_k0 + t_k1 u + t_k2 u²/2)` with `u = y − y0`.
    Jet { y0: T, terms: Vec<[T; 3]> },
}

/// `h_ρ`, `∂_ρ h_ρ` and `∂_{y^k} h_ρ` at one point.
#[derive(Clone, Debug)]
pub struct Parts<T> {
    pub h: Mat<T>,
    pub drho: Mat<T>,
    pub dy: Vec<Mat<T>>,
}

/// Scalar profile `(H, H_ρ, H_y)` of a one-dimensional family.
fn scalar_profile<T: Real>(kind: &FamilyKind<T>, rho: T, y: T) -> (T, T, T) {
    match kind {
        FamilyKind::HalfPlane => (T::one(), T::zero(), T::zero()),
        FamilyKind::DiscNormal => {
            let f = T::one() - rho * rho * c(0.25);
            (f * f, -rho * f, T::zero())
        }
        FamilyKind::Perturbed { a, b } => {
            let (av, ad) = a.eval(y);
            let (bv, bd) = b.eval(y);
            let two = c::<T>(2.0);
            let hv = (two * (rho * av + rho * rho * bv)).exp();
            (hv, two * (av + two * rho * bv) * hv, two * (rho * ad + rho * rho * bd) * hv)
        }
        FamilyKind::Deformed { base, s, profile, power } => {
            let (h, hr, hy) = scalar_profile(base, rho, y);
            let (cv, cd) = profile.eval(y);
            let rp = rho.powi(*power);
            let f = T::one() + *s * rp * cv;
            let fr = if *power == 0 { T::zero() } else { *s * c::<T>(*power as f64) * rho.powi(power - 1) * cv };
            let fy = *s * rp * cd;
            (h * f, hr * f + h * fr, hy * f + h * fy)
        }
        FamilyKind::InteriorBump { base, amplitude, lo, hi, profile } => {
            let (h, hr, hy) = scalar_profile(base, rho, y);
            let (cv, cd) = profile.eval(y);
            let (psi, dpsi) = bump(rho, *lo, *hi);
            let f = T::one() + *amplitude * psi * cv;
            (h * f, hr * f + h * *amplitude * dpsi * cv, hy * f + h * *amplitude * psi * cd)
        }
        FamilyKind::Jet { y0, terms } => {
            let u = wrap_diff(y - *y0);
            let mut hv = T::zero();
            let mut hr = T::zero();
            let mut hy = T::zero();
            let mut fact = T::one();
            for (k, t) in terms.iter().enumerate() {
                if k > 0 {
                    fact = fact * c(k as f64);
                }
                let coef = t[0] + t[1] * u + t[2] * u * u * c(0.5);
                let dcoef = t[1] + t[2] * u;
                hv = hv + rho.powi(k as i32) / fact * coef;
                hy = hy + rho.powi(k as i32) / fact * dcoef;
                if k > 0 {
                    hr = hr + rho.powi(k as i32 - 1) / (fact / c(k as f64)) * coef;
                }
            }
            (hv, hr, hy)
        }
        FamilyKind::Product(..) => unreachable!("product families are matrix-valued"),
    }
}

/// Smooth bump equal to 1 at the midpoint of `(lo, hi)` and vanishing to all orders at the ends.
fn bump<T: Real>(rho: T, lo: T, hi: T) -> (T, T) {
    if rho <= lo || rho >= hi {
        return (T::zero(), T::zero());
    }
    let q = (rho - lo) * (hi - rho);
    let w = ((hi - lo) * c(0.5)).powi(2);
    let psi = (T::one() - w / q).exp();
    let dq = hi + lo - rho - rho;
    (psi, psi * w / (q * q) * dq)
}

fn kind_dim<T>(kind: &FamilyKind<T>) -> usize {
    match kind {
        FamilyKind::Product(a, b) => kind_dim(a) + kind_dim(b),
        FamilyKind::Deformed { base, .. } | FamilyKind::InteriorBump { base, .. } => kind_dim(base),
        _ => 1,
    }
}

fn kind_parts<T: Real>(kind: &FamilyKind<T>, rho: T, y: &[T]) -> Parts<T> {
    match kind {
        FamilyKind::Product(a, b) => {
            let pa = kind_parts(a, rho, &y[..kind_dim(a)]);
            let pb = kind_parts(b, rho, &y[kind_dim(a)..]);
            let (na, nb) = (pa.h.n, pb.h.n);
            let n = na + nb;
            let block = |ma: &Mat<T>, mb: &Mat<T>| {
                let mut m = Mat::zeros(n);
                for i in 0..na {
                    for j in 0..na {
                        m.set(i, j, ma.get(i, j));
                    }
                }
                for i in 0..nb {
                    for j in 0..nb {
                        m.set(na + i, na + j, mb.get(i, j));
                    }
                }
                m
            };
            let mut dy = Vec::with_capacity(n);
            for d in &pa.dy {
                dy.push(block(d, &Mat::zeros(nb)));
            }
            for d in &pb.dy {
                dy.push(block(&Mat::zeros(na), d));
            }
            Parts { h: block(&pa.h, &pb.h), drho: block(&pa.drho, &pb.drho), dy }
        }
        FamilyKind::Deformed { base, .. } | FamilyKind::InteriorBump { base, .. } if kind_dim(base) > 1 => {
            // Scalar conformal factor applied to a matrix-valued base.
            let p = kind_parts(base, rho, y);
            let unit = FamilyKind::HalfPlane;
            let wrapped = match kind {
                FamilyKind::Deformed { s, profile, power, .. } => FamilyKind::Deformed {
                    base: Box::new(unit),
                    s: *s,
                    profile: profile.clone(),
                    power: *power,
                },
                FamilyKind::InteriorBump { amplitude, lo, hi, profile, .. } => FamilyKind::InteriorBump {
                    base: Box::new(unit),
                    amplitude: *amplitude,
                    lo: *lo,
                    hi: *hi,
                    profile: profile.clone(),
                },
                _ => unreachable!(),
            };
            let (f, fr, fy) = scalar_profile(&wrapped, rho, y[0]);
            let mut dy: Vec<Mat<T>> = p.dy.iter().map(|d| d.scale(f)).collect();
            dy[0] = dy[0].add(&p.h.scale(fy));
            Parts { h: p.h.scale(f), drho: p.drho.scale(f).add(&p.h.scale(fr)), dy }
        }
        _ => {
            let (h, hr, hy) = scalar_profile(kind, rho, y[0]);
            Parts { h: Mat::scalar(h), drho: Mat::scalar(hr), dy: vec![Mat::scalar(hy)] }
        }
    }
}

fn kind_chart<T: Real>(kind: &FamilyKind<T>) -> Vec<Coord<T>> {
    match kind {
        FamilyKind::HalfPlane => vec![Coord::Affine { lo: None, hi: None }],
        FamilyKind::Product(a, b) => {
            let mut v = kind_chart(a);
            v.extend(kind_chart(b));
            v
        }
        FamilyKind::Deformed { base, .. } | FamilyKind::InteriorBump { base, .. } => kind_chart(base),
        _ => vec![Coord::Periodic],
    }
}

/// A validated normal-form family `h_ρ`, immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryMetricFamily<T> {
    pub kind: FamilyKind<T>,
    pub dim: usize,
    pub chart: Vec<Coord<T>>,
    pub rho_max: T,
}

/// Pointwise metric data at `(ρ, y)`.
#[derive(Clone, Debug)]
pub struct MetricEval<T> {
    pub h_mat: Mat<T>,
    pub h_inv: Mat<T>,
    pub dh_drho_mat: Mat<T>,
    pub dh_dy_mats: Vec<Mat<T>>,
}

impl<T: Real> MetricEval<T> {
    /// `|η|²_{h_ρ} = h^{ij} η_i η_j`.
    pub fn eta_normsq(&self, eta: &[T]) -> T {
        self.h_inv.bilinear(eta, eta)
    }

    /// `η^♯ = h^{ij} η_j`.
    pub fn sharp(&self, eta: &[T]) -> Vec<T> {
        self.h_inv.mul_vec(eta)
    }

    /// `v^♭ = h_{ij} v^j`.
    pub fn flat(&self, v: &[T]) -> Vec<T> {
        self.h_mat.mul_vec(v)
    }

    /// `∂_ρ (h^{ij}) η_i η_j = −(η^♯)ᵀ ∂_ρ h η^♯`.
    pub fn drho_normsq(&self, eta: &[T]) -> T {
        let s = self.sharp(eta);
        -self.dh_drho_mat.bilinear(&s, &s)
    }

    /// `∂_{y^k} (h^{ij}) η_i η_j`.
    pub fn dy_normsq(&self, eta: &[T], k: usize) -> T {
        let s = self.sharp(eta);
        -self.dh_dy_mats[k].bilinear(&s, &s)
    }
}

impl<T: Real> BoundaryMetricFamily<T> {
    /// Builds and validates a family (positive definiteness on a sample grid).
    pub fn new(kind: FamilyKind<T>, rho_max: T) -> Result<Self> {
        if !(rho_max > T::zero()) {
            return Err(AhxError::InvalidFamily(format!("rho_max must be positive, got {rho_max}")));
        }
        let fam = BoundaryMetricFamily { dim: kind_dim(&kind), chart: kind_chart(&kind), kind, rho_max };
        for (rho, y) in fam.validation_points() {
            let p = fam.parts(rho, &y);
            if p.h.asymmetry() > T::zero() || !p.h.is_positive_definite() {
                return Err(AhxError::InvalidFamily(format!(
                    "h is not positive definite at rho = {rho}, y = {y:?}"
                )));
            }
        }
        Ok(fam)
    }

    /// Replaces the bounds of an affine coordinate.
    pub fn with_affine_bounds(mut self, k: usize, lo: T, hi: T) -> Result<Self> {
        match self.chart.get_mut(k) {
            Some(Coord::Affine { lo: l, hi: h }) => {
                *l = Some(lo);
                *h = Some(hi);
                Ok(self)
            }
            _ => Err(AhxError::InvalidFamily(format!("coordinate {k} is not affine"))),
        }
    }

    pub fn is_periodic(&self, k: usize) -> bool {
        matches!(self.chart[k], Coord::Periodic)
    }

    /// Sample points used for validation: a ρ-grid on `[0, ρ_max]` times a y-grid.
    pub fn validation_points(&self) -> Vec<(T, Vec<T>)> {
        let nr = 9;
        let ny = if self.dim == 1 { 16 } else { 8 };
        let local = match &self.kind {
            FamilyKind::Jet { y0, .. } => Some(*y0),
            _ => None,
        };
        let axis = |k: usize| -> Vec<T> {
            (0..ny)
                .map(|i| {
                    let s = c::<T>(i as f64 / ny as f64);
                    if let Some(y0) = local {
                        y0 + (s - c(0.5)) * c(0.5)
                    } else {
                        match &self.chart[k] {
                            Coord::Periodic => s * T::PI() * c(2.0),
                            Coord::Affine { lo: Some(l), hi: Some(h) } => *l + (*h - *l) * s,
                            Coord::Affine { .. } => (s - c(0.5)) * c(8.0),
                        }
                    }
                })
                .collect()
        };
        let mut ys: Vec<Vec<T>> = vec![vec![]];
        for k in 0..self.dim {
            let ax = axis(k);
            ys = ys
                .into_iter()
                .flat_map(|p| {
                    ax.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        let mut out = Vec::new();
        for i in 0..nr {
            let rho = self.rho_max * c(i as f64 / (nr - 1) as f64);
            for y in &ys {
                out.push((rho, y.clone()));
            }
        }
        out
    }

    /// Raw formulas; valid for any real ρ where the family's expression is defined.
    pub fn parts(&self, rho: T, y: &[T]) -> Parts<T> {
        kind_parts(&self.kind, rho, y)
    }

    /// Metric data without range checks (used inside integrators).
    pub fn eval_unchecked(&self, rho: T, y: &[T]) -> Result<MetricEval<T>> {
        let p = self.parts(rho, y);
        let h_inv = p.h.inverse().ok_or(AhxError::SingularMetric { rho: to_f64(rho) })?;
        Ok(MetricEval { h_mat: p.h, h_inv, dh_drho_mat: p.drho, dh_dy_mats: p.dy })
    }

    /// Checks `0 ≤ ρ ≤ ρ_max` and chart membership.
    pub fn check_point(&self, rho: T, y: &[T]) -> Result<()> {
        if y.len() != self.dim {
            return Err(AhxError::OutOfRange(format!("expected {} boundary coordinates", self.dim)));
        }
        if !(rho >= T::zero() && rho <= self.rho_max) {
            return Err(AhxError::OutOfRange(format!("rho = {rho} outside [0, {}]", self.rho_max)));
        }
        if !self.in_chart(y) {
            return Err(AhxError::OutOfRange(format!("y = {y:?} outside the chart")));
        }
        Ok(())
    }

    pub fn in_chart(&self, y: &[T]) -> bool {
        y.iter().zip(&self.chart).all(|(&v, ch)| match ch {
            Coord::Periodic => v.is_finite(),
            Coord::Affine { lo, hi } => {
                v.is_finite() && lo.map_or(true, |l| v >= l) && hi.map_or(true, |h| v <= h)
            }
        })
    }

    /// Reduces periodic coordinates into `[0, 2π)`.
    pub fn reduce_y(&self, y: &mut [T]) {
        for (v, ch) in y.iter_mut().zip(&self.chart) {
            if matches!(ch, Coord::Periodic) {
                *v = wrap_angle(*v);
            }
        }
    }

    /// Coordinate difference `b − a`, wrapped into `(−π, π]` for periodic coordinates.
    pub fn y_diff(&self, a: &[T], b: &[T]) -> Vec<T> {
        a.iter()
            .zip(b)
            .zip(&self.chart)
            .map(|((&x, &z), ch)| match ch {
                Coord::Periodic => wrap_diff(z - x),
                Coord::Affine { .. } => z - x,
            })
            .collect()
    }

    /// ρ-value of a polar singularity of the chart (the disc centre), if any.
    pub fn pole(&self) -> Option<T> {
        match &self.kind {
            FamilyKind::DiscNormal => Some(c(2.0)),
            _ => None,
        }
    }

    /// Whether the family is invariant under all translations in y (η is conserved).
    pub fn is_translation_invariant(&self) -> bool {
        match &self.kind {
            FamilyKind::HalfPlane | FamilyKind::DiscNormal => true,
            FamilyKind::Perturbed { a, b } => {
                a.cos.iter().skip(1).chain(&a.sin).chain(b.cos.iter().skip(1)).chain(&b.sin).all(|&x| x == T::zero())
            }
            _ => false,
        }
    }

    /// Maximum relative mismatch between the supplied derivatives and central
    /// differences of `h` (step `1e-6` scaled by the coordinate size).
    pub fn derivative_mismatch(&self, rho: T, y: &[T]) -> T {
        let p = self.parts(rho, y);
        let scale = p.h.max_abs().max(T::epsilon());
        let st = |x: T| c::<T>(1e-6) * (T::one() + x.abs());
        let hr = st(rho);
        let fd = self.parts(rho + hr, y).h.sub(&self.parts(rho - hr, y).h).scale((hr + hr).recip());
        let mut worst = fd.sub(&p.drho).max_abs() / scale.max(p.drho.max_abs());
        for k in 0..self.dim {
            let hk = st(y[k]);
            let mut yp = y.to_vec();
            let mut ym = y.to_vec();
            yp[k] = yp[k] + hk;
            ym[k] = ym[k] - hk;
            let fd = self.parts(rho, &yp).h.sub(&self.parts(rho, &ym).h).scale((hk + hk).recip());
            worst = worst.max(fd.sub(&p.dy[k]).max_abs() / scale.max(p.dy[k].max_abs()));
        }
        worst
    }
}

/// Range-checked metric evaluation.
pub fn eval_metric<T: Real>(family: &BoundaryMetricFamily<T>, rho: T, y: &[T]) -> Result<MetricEval<T>> {
    family.check_point(rho, y)?;
    family.eval_unchecked(rho, y)
}

/// Step of the central difference used for `∂²_ρ h`.
pub const CURVATURE_FD_STEP: f64 = 1e-5;

/// Gauss curvature of `g` for `n = 1`, without the range check on ρ_max.
pub fn gauss_curvature_unchecked<T: Real>(family: &BoundaryMetricFamily<T>, rho: T, y: T) -> T {
    let yy = [y];
    let p = family.parts(rho, &yy);
    let s = c::<T>(CURVATURE_FD_STEP);
    let hrr = (family.parts(rho + s, &yy).drho.a[0] - family.parts(rho - s, &yy).drho.a[0]) / (s + s);
    let h = p.h.a[0];
    let hr = p.drho.a[0];
    let r2 = rho * rho;
    -r2 * hrr / (h + h) + r2 * hr * hr / (c::<T>(4.0) * h * h) + rho * hr / (h + h) - T::one()
}

/// Gauss curvature `K` of `g = (dρ² + H dy²)/ρ²` at an interior point (`n = 1`).
pub fn gauss_curvature<T: Real>(family: &BoundaryMetricFamily<T>, rho: T, y: T) -> Result<T> {
    if family.dim != 1 {
        return Err(AhxError::Unsupported("Gauss curvature needs a one-dimensional boundary".into()));
    }
    if !(rho > T::zero()) {
        return Err(AhxError::OutOfRange("curvature is defined only for rho > 0".into()));
    }
    family.check_point(rho, &[y])?;
    Ok(gauss_curvature_unchecked(family, rho, y))
}

/// JSON metric specification `{"family": …, "params": {…}, "rho_max": …}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub family: String,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub rho_max: Option<f64>,
}

pub const DEFAULT_RHO_MAX: f64 = 0.5;

fn param_list(p: &serde_json::Value, key: &str) -> Result<Vec<f64>> {
    match p.get(key) {
        None | Some(serde_json::Value::Null) => Ok(vec![]),
        Some(serde_json::Value::Array(a)) => a
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| AhxError::InvalidFamily(format!("{key}: expected numbers"))))
            .collect(),
        Some(v) => v
            .as_f64()
            .map(|x| vec![x])
            .ok_or_else(|| AhxError::InvalidFamily(format!("{key}: expected a number list"))),
    }
}

fn param_f64(p: &serde_json::Value, key: &str, default: f64) -> Result<f64> {
    match p.get(key) {
        None | Some(serde_json::Value::Null) => Ok(default),
        Some(v) => v.as_f64().ok_or_else(|| AhxError::InvalidFamily(format!("{key}: expected a number"))),
    }
}

fn trig_param<T: Real>(p: &serde_json::Value, name: &str) -> Result<TrigPoly<T>> {
    Ok(TrigPoly::from_f64(&param_list(p, &format!("{name}_cos"))?, &param_list(p, &format!("{name}_sin"))?))
}

fn kind_from_spec<T: Real>(spec: &MetricSpec) -> Result<FamilyKind<T>> {
    let p = &spec.params;
    Ok(match spec.family.as_str() {
        "half-plane" => FamilyKind::HalfPlane,
        "disc-normal" => FamilyKind::DiscNormal,
        "perturbed" => FamilyKind::Perturbed { a: trig_param(p, "a")?, b: trig_param(p, "b")? },
        "product" => {
            let f: Vec<MetricSpec> = serde_json::from_value(p.get("factors").cloned().unwrap_or_default())
                .map_err(|e| AhxError::InvalidFamily(format!("product factors: {e}")))?;
            if f.len() != 2 {
                return Err(AhxError::InvalidFamily("product needs exactly two factors".into()));
            }
            let a = kind_from_spec::<T>(&f[0])?;
            let b = kind_from_spec::<T>(&f[1])?;
            if kind_dim(&a) != 1 || kind_dim(&b) != 1 {
                return Err(AhxError::InvalidFamily("product factors must be one-dimensional".into()));
            }
            FamilyKind::Product(Box::new(a), Box::new(b))
        }
        "deformed" => {
            let base: MetricSpec = serde_json::from_value(p.get("base").cloned().unwrap_or_default())
                .map_err(|e| AhxError::InvalidFamily(format!("deformed base: {e}")))?;
            FamilyKind::Deformed {
                base: Box::new(kind_from_spec(&base)?),
                s: c(param_f64(p, "s", 0.0)?),
                profile: trig_param(p, "c")?,
                power: param_f64(p, "power", 4.0)? as i32,
            }
        }
        other => return Err(AhxError::InvalidFamily(format!("unknown family '{other}'"))),
    })
}

/// Builds a validated family from a specification document.
pub fn make_family<T: Real>(spec: &MetricSpec) -> Result<BoundaryMetricFamily<T>> {
    let kind = kind_from_spec(spec)?;
    let rho_max = spec.rho_max.unwrap_or(DEFAULT_RHO_MAX);
    let mut fam = BoundaryMetricFamily::new(kind, c(rho_max))?;
    if let Some(b) = spec.params.get("y_bounds") {
        let v: Vec<f64> = serde_json::from_value(b.clone())
            .map_err(|e| AhxError::InvalidFamily(format!("y_bounds: {e}")))?;
        if v.len() != 2 || !(v[0] < v[1]) {
            return Err(AhxError::InvalidFamily("y_bounds must be [lo, hi] with lo < hi".into()));
        }
        fam = fam.with_affine_bounds(0, c(v[0]), c(v[1]))?;
    }
    Ok(fam)
}

/// Named fixtures used across tests and examples.
pub mod fixtures {
    use super::*;

    pub fn half_plane<T: Real>() -> BoundaryMetricFamily<T> {
        BoundaryMetricFamily::new(FamilyKind::HalfPlane, c(DEFAULT_RHO_MAX)).expect("valid fixture")
    }

    pub fn disc<T: Real>() -> BoundaryMetricFamily<T> {
        BoundaryMetricFamily::new(FamilyKind::DiscNormal, c(DEFAULT_RHO_MAX)).expect("valid fixture")
    }

    /// `a = a1·cos y`, `b = b0` (constant).
    pub fn perturbed<T: Real>(a1: f64, b0: f64) -> BoundaryMetricFamily<T> {
        BoundaryMetricFamily::new(
            FamilyKind::Perturbed { a: TrigPoly::cosine(1, c(a1)), b: TrigPoly::constant(c(b0)) },
            c(DEFAULT_RHO_MAX),
        )
        .expect("valid fixture")
    }

    /// Rotationally symmetric family with a band of positive curvature:
    /// `a ≡ a0`, `b ≡ −b0`.
    pub fn positive_bump<T: Real>(a0: f64, b0: f64) -> BoundaryMetricFamily<T> {
        BoundaryMetricFamily::new(
            FamilyKind::Perturbed { a: TrigPoly::constant(c(a0)), b: TrigPoly::constant(c(-b0)) },
            c(DEFAULT_RHO_MAX),
        )
        .expect("valid fixture")
    }

    /// Hyperbolic 3-space in the upper half-space model (`h = I₂`).
    pub fn half_space<T: Real>() -> BoundaryMetricFamily<T> {
        BoundaryMetricFamily::new(
            FamilyKind::Product(Box::new(FamilyKind::HalfPlane), Box::new(FamilyKind::HalfPlane)),
            c(DEFAULT_RHO_MAX),
        )
        .expect("valid fixture")
    }

    /// `h_ρ · (1 + s ρ⁴ c(y))`.
    pub fn deformed<T: Real>(base: &BoundaryMetricFamily<T>, s: T, profile: TrigPoly<T>) -> BoundaryMetricFamily<T> {
        BoundaryMetricFamily::new(
            FamilyKind::Deformed { base: Box::new(base.kind.clone()), s, profile, power: 4 },
            base.rho_max,
        )
        .expect("small deformation stays positive")
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixture_values() {
        let hp = half_plane::<f64>();
        let e = eval_metric(&hp, 0.3, &[1.7]).unwrap();
        assert_eq!(e.h_mat.a[0], 1.0);
        assert_eq!(e.h_inv.a[0], 1.0);
        assert_eq!(e.dh_drho_mat.a[0], 0.0);

        let d = disc::<f64>();
        assert!((eval_metric(&d, 0.2, &[0.4]).unwrap().h_mat.a[0] - 0.9801).abs() < 1e-15);
        assert_eq!(eval_metric(&d, 0.0, &[2.0]).unwrap().h_mat.a[0], 1.0);

        let p = perturbed::<f64>(0.1, 0.0);
        assert!((eval_metric(&p, 0.0, &[0.0]).unwrap().dh_drho_mat.a[0] - 0.2).abs() < 1e-15);
        assert!((eval_metric(&p, 0.1, &[0.0]).unwrap().h_mat.a[0] - 0.02f64.exp()).abs() < 1e-15);
        assert!((0.02f64.exp() - 1.020201).abs() < 1e-6);
    }

    #[test]
    fn range_errors() {
        let d = disc::<f64>();
        assert!(eval_metric(&d, 0.6, &[0.0]).is_err());
        assert!(eval_metric(&d, -0.1, &[0.0]).is_err());
        assert!(BoundaryMetricFamily::<f64>::new(FamilyKind::HalfPlane, 0.0).is_err());
        let hp = half_plane::<f64>().with_affine_bounds(0, -1.0, 1.0).unwrap();
        assert!(eval_metric(&hp, 0.1, &[2.0]).is_err());
    }

    #[test]
    fn rejects_non_positive_family() {
        let k = FamilyKind::Jet { y0: 0.0, terms: vec![[-1.0, 0.0, 0.0]] };
        assert!(BoundaryMetricFamily::new(k, 0.5).is_err());
    }

    #[test]
    fn curvature_of_exact_fixtures() {
        let hp = half_plane::<f64>();
        let d = disc::<f64>();
        for &(r, y) in &[(0.05, 0.0), (0.3, 1.0), (0.45, 4.0)] {
            assert!((gauss_curvature(&hp, r, y).unwrap() + 1.0).abs() < 1e-6);
            assert!((gauss_curvature(&d, r, y).unwrap() + 1.0).abs() < 1e-6);
        }
        assert!(gauss_curvature(&d, 0.0, 0.0).is_err());
    }

    #[test]
    fn curvature_tends_to_minus_one_linearly() {
        let p = perturbed::<f64>(0.1, 0.0);
        let mut ratios = vec![];
        for k in 1..6 {
            let r = 0.2 / 2f64.powi(k);
            let k1 = gauss_curvature(&p, r, 0.0).unwrap();
            ratios.push((k1 + 1.0).abs() / r);
        }
        let cmax = ratios.iter().cloned().fold(0.0, f64::max);
        assert!(cmax < 1.0, "{ratios:?}");
        // The ratio settles to a constant (first-order approach).
        assert!((ratios[4] - ratios[3]).abs() < 0.05 * ratios[3]);
    }

    #[test]
    fn spec_parsing() {
        let s: MetricSpec = serde_json::from_str(
            r#"{"family":"perturbed","params":{"a_cos":[0,0.1],"b_cos":[0.05]},"rho_max":0.4}"#,
        )
        .unwrap();
        let f = make_family::<f64>(&s).unwrap();
        assert_eq!(f.rho_max, 0.4);
        assert_eq!(f.kind, perturbed::<f64>(0.1, 0.05).kind);
        let s: MetricSpec = serde_json::from_str(
            r#"{"family":"product","params":{"factors":[{"family":"half-plane"},{"family":"half-plane"}]}}"#,
        )
        .unwrap();
        let f = make_family::<f64>(&s).unwrap();
        assert_eq!(f.dim, 2);
        assert_eq!(f.rho_max, DEFAULT_RHO_MAX);
        let bad: MetricSpec = serde_json::from_str(r#"{"family":"torus"}"#).unwrap();
        assert!(make_family::<f64>(&bad).is_err());
        let bad: MetricSpec = serde_json::from_str(r#"{"family":"half-plane","rho_max":-1}"#).unwrap();
        assert!(make_family::<f64>(&bad).is_err());
    }

    #[test]
    fn single_precision_family() {
        let d = disc::<f32>();
        let e = eval_metric(&d, 0.2f32, &[0.4f32]).unwrap();
        assert!((e.h_mat.a[0] - 0.9801).abs() < 1e-6);
    }

    fn families() -> Vec<BoundaryMetricFamily<f64>> {
        let pert = BoundaryMetricFamily::new(
            FamilyKind::Perturbed {
                a: TrigPoly::from_f64(&[0.02, 0.1, -0.03], &[0.0, 0.05]),
                b: TrigPoly::from_f64(&[0.05], &[0.0, 0.0, 0.02]),
            },
            0.5,
        )
        .unwrap();
        let prod = BoundaryMetricFamily::new(
            FamilyKind::Product(Box::new(pert.kind.clone()), Box::new(FamilyKind::DiscNormal)),
            0.5,
        )
        .unwrap();
        let bump = BoundaryMetricFamily::new(
            FamilyKind::InteriorBump {
                base: Box::new(FamilyKind::DiscNormal),
                amplitude: 0.1,
                lo: 0.3,
                hi: 0.45,
                profile: TrigPoly::cosine(1, 1.0),
            },
            0.5,
        )
        .unwrap();
        let jet = BoundaryMetricFamily::new(
            FamilyKind::Jet { y0: 0.3, terms: vec![[1.0, 0.1, 0.05], [0.2, -0.1, 0.0], [0.24, 0.0, 0.0]] },
            0.3,
        )
        .unwrap();
        vec![
            half_plane(),
            disc(),
            pert.clone(),
            prod.clone(),
            deformed(&pert, 0.3, TrigPoly::cosine(2, 0.5)),
            deformed(&prod, 0.3, TrigPoly::cosine(1, 0.5)),
            bump,
            jet,
            half_space(),
        ]
    }

    proptest! {
        #[test]
        fn metric_invariants(fi in 0usize..9, rs in 0.0f64..1.0, y1 in -3.0f64..3.0, y2 in -3.0f64..3.0) {
            let fams = families();
            let f = &fams[fi];
            let rho = rs * f.rho_max.min(0.45);
            let y: Vec<f64> = [y1, y2][..f.dim].iter().map(|&v| match &f.kind {
                FamilyKind::Jet { y0, .. } => y0 + 0.1 * v,
                _ => v,
            }).collect();
            let e = f.eval_unchecked(rho, &y).unwrap();
            prop_assert_eq!(e.h_mat.asymmetry(), 0.0);
            prop_assert!(e.h_mat.is_positive_definite());
            let id = e.h_mat.mul(&e.h_inv).sub(&Mat::identity(f.dim)).max_abs();
            prop_assert!(id < 1e-12);
            prop_assert!(f.derivative_mismatch(rho, &y) < 1e-6);
        }
    }
}
