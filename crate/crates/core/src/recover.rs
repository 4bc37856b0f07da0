//! Recovery of the boundary jet `h₀, ∂_ρh|₀, ∂²_ρh|₀` from renormalized
//! lengths of short geodesics `L(y₀, ω₀/δ)`.
//!
//! Two routes are provided. The asymptotic route reads `h₀` off the constant
//! term of `L − 2 log 2δ` and `∂_ρh|₀` off its slope in `δ`; the fit route
//! adjusts a truncated Taylor model until forward-simulated lengths match the
//! samples. This module works in `f64`.

use crate::error::{AhxError, Result};
use crate::flow::{delta_max, trace_geodesic, BoundaryCovector, TraceOptions};
use crate::linalg::Mat;
use crate::metric::{BoundaryMetricFamily, FamilyKind};
use crate::renorm::renormalized_length;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Geometric `δ` grid `0.2, 0.1, …, 0.003125`.
pub fn default_deltas() -> Vec<f64> {
    (0..7).map(|k| 0.2 / f64::powi(2.0, k)).collect()
}

/// Smallest relative singular value accepted in polarization and fitting.
const RANK_TOL: f64 = 1e-10;

/// Renormalized lengths `L(y₀, ω/δ)` on a grid of directions and `δ`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LengthSampleSet {
    pub y0: Vec<f64>,
    /// Raw covectors `ω₀` (not normalized).
    pub directions: Vec<Vec<f64>>,
    /// Strictly decreasing.
    pub deltas: Vec<f64>,
    /// `lengths[i][k] = L(y₀, directions[i]/deltas[k])`.
    pub lengths: Vec<Vec<f64>>,
    /// Amplitude of the uniform noise added to every length (0 for exact data).
    pub noise: f64,
    pub seed: u64,
}

impl LengthSampleSet {
    pub fn dim(&self) -> usize {
        self.y0.len()
    }

    fn validate(&self) -> Result<()> {
        if self.deltas.len() < 3 {
            return Err(AhxError::InsufficientSamples("at least three values of delta are needed".into()));
        }
        if self.deltas.windows(2).any(|w| !(w[1] < w[0])) || !(self.deltas[self.deltas.len() - 1] > 0.0) {
            return Err(AhxError::OutOfRange("deltas must be positive and strictly decreasing".into()));
        }
        let n = self.dim();
        let need = n * (n + 1) / 2;
        if self.directions.len() < need {
            return Err(AhxError::InsufficientSamples(format!("{need} directions needed for n = {n}")));
        }
        if self.lengths.len() != self.directions.len() || self.lengths.iter().any(|r| r.len() != self.deltas.len()) {
            return Err(AhxError::InsufficientSamples("length table is incomplete".into()));
        }
        Ok(())
    }
}

/// Options for synthesizing samples.
#[derive(Clone, Debug)]
pub struct SynthesisOptions {
    pub trace: TraceOptions<f64>,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions { trace: TraceOptions::with_tol(1e-12), noise: 0.0, seed: 0 }
    }
}

/// Forward model: traces every short geodesic and records its renormalized length.
pub fn synthesize_samples(
    family: &BoundaryMetricFamily<f64>,
    y0: &[f64],
    directions: &[Vec<f64>],
    deltas: &[f64],
    opts: &SynthesisOptions,
) -> Result<LengthSampleSet> {
    if y0.len() != family.dim || directions.iter().any(|d| d.len() != family.dim) {
        return Err(AhxError::OutOfRange(format!("expected {} boundary coordinates", family.dim)));
    }
    if !(opts.noise >= 0.0) {
        return Err(AhxError::OutOfRange("noise amplitude must be non-negative".into()));
    }
    for w in directions {
        let e = family.eval_unchecked(0.0, y0)?;
        let norm = e.eta_normsq(w).sqrt();
        let dmax = delta_max(family, y0, w)?;
        // Short-geodesic regime is stated for unit directions: δ|ω| ≤ δ_max.
        if let Some(&d) = deltas.iter().find(|&&d| d / norm > dmax + 1e-12) {
            return Err(AhxError::OutOfRange(format!("delta = {d} exceeds delta_max = {dmax} for direction {w:?}")));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..directions.len()).flat_map(|i| (0..deltas.len()).map(move |k| (i, k))).collect();
    let values: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let eta: Vec<f64> = directions[i].iter().map(|w| w / deltas[k]).collect();
            let traj = trace_geodesic(family, &BoundaryCovector::incoming(y0.to_vec(), eta), &opts.trace)?;
            Ok(renormalized_length(&traj)?.length)
        })
        .collect();
    let mut lengths = vec![vec![0.0; deltas.len()]; directions.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for ((i, k), v) in jobs.into_iter().zip(values) {
        let noise = if opts.noise > 0.0 { rng.gen_range(-opts.noise..=opts.noise) } else { 0.0 };
        lengths[i][k] = v? + noise;
    }
    Ok(LengthSampleSet {
        y0: y0.to_vec(),
        directions: directions.to_vec(),
        deltas: deltas.to_vec(),
        lengths,
        noise: opts.noise,
        seed: opts.seed,
    })
}

/// Weighted least-squares polynomial fit `Σ c_j δ^j` (degree 2).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolyFit {
    pub coeffs: Vec<f64>,
    /// Standard errors from the weighted normal equations.
    pub std_errors: Vec<f64>,
    /// Largest absolute residual.
    pub max_residual: f64,
}

/// Fits `c₀ + c₁δ + c₂δ²` with residuals scaled by `δ⁻³`, the size of the
/// first neglected term, so small `δ` dominate the extrapolation to 0.
pub fn fit_quadratic(deltas: &[f64], values: &[f64]) -> Result<PolyFit> {
    let m = deltas.len();
    if m < 3 {
        return Err(AhxError::InsufficientSamples("quadratic fit needs three points".into()));
    }
    let a = DMatrix::from_fn(m, 3, |i, j| deltas[i].powi(j as i32) / deltas[i].powi(3));
    let b = DVector::from_fn(m, |i, _| values[i] / deltas[i].powi(3));
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() < RANK_TOL * smax {
        return Err(AhxError::FitFailure("delta grid does not determine a quadratic".into()));
    }
    let c = svd.solve(&b, RANK_TOL * smax).map_err(|e| AhxError::FitFailure(e.to_string()))?;
    let r = &a * &c - &b;
    let dof = (m as f64 - 3.0).max(1.0);
    let s2 = r.norm_squared() / dof;
    let cov = (a.transpose() * &a).try_inverse().ok_or_else(|| AhxError::FitFailure("singular normal equations".into()))?;
    let max_residual = (0..m).map(|i| (r[i] * deltas[i].powi(3)).abs()).fold(0.0, f64::max);
    Ok(PolyFit {
        coeffs: c.iter().copied().collect(),
        std_errors: (0..3).map(|j| (s2 * cov[(j, j)]).sqrt()).collect(),
        max_residual,
    })
}

/// Solves `Σ_{i≤j} M_ij (2 − δ_ij) ω_i ω_j = q` for symmetric `M` in the least-squares sense.
fn polarize(directions: &[Vec<f64>], q: &[f64]) -> Result<Mat<f64>> {
    let n = directions[0].len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let a = DMatrix::from_fn(directions.len(), pairs.len(), |r, p| {
        let (i, j) = pairs[p];
        let w = &directions[r];
        if i == j {
            w[i] * w[i]
        } else {
            2.0 * w[i] * w[j]
        }
    });
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-6 * smax) {
        return Err(AhxError::FitFailure(format!(
            "polarization is ill-conditioned (singular values {smin:e} / {smax:e}); directions too clustered"
        )));
    }
    let x = svd
        .solve(&DVector::from_column_slice(q), RANK_TOL * smax)
        .map_err(|e| AhxError::FitFailure(e.to_string()))?;
    let mut m = Mat::zeros(n);
    for (p, &(i, j)) in pairs.iter().enumerate() {
        m.set(i, j, x[p]);
        m.set(j, i, x[p]);
    }
    Ok(m)
}

fn mat_rows(m: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.n).map(|i| (0..m.n).map(|j| m.get(i, j)).collect()).collect()
}

fn rows_mat(r: &[Vec<f64>]) -> Mat<f64> {
    let n = r.len();
    Mat { n, a: r.iter().flatten().copied().collect() }
}

/// Output of [`recover_h0`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct H0Estimate {
    pub y0: Vec<f64>,
    /// Recovered `|ω₀|_{h₀}` per direction.
    pub norms: Vec<f64>,
    /// Standard error of each norm.
    pub norm_errors: Vec<f64>,
    pub h0: Vec<Vec<f64>>,
    /// Dual metric `h₀⁻¹` assembled by polarization.
    pub h0_inv: Vec<Vec<f64>>,
    pub fits: Vec<PolyFit>,
}

impl H0Estimate {
    pub fn h0_mat(&self) -> Mat<f64> {
        rows_mat(&self.h0)
    }

    pub fn h0_inv_mat(&self) -> Mat<f64> {
        rows_mat(&self.h0_inv)
    }
}

/// `|ω₀|_{h₀} = e^{−c₀/2}` from the constant term of `L − 2 log 2δ`; `h₀` by polarization.
pub fn recover_h0(samples: &LengthSampleSet) -> Result<H0Estimate> {
    samples.validate()?;
    let mut fits = Vec::new();
    let mut norms = Vec::new();
    let mut norm_errors = Vec::new();
    let mut q = Vec::new();
    for row in &samples.lengths {
        let vals: Vec<f64> = row.iter().zip(&samples.deltas).map(|(l, d)| l - 2.0 * (2.0 * d).ln()).collect();
        let fit = fit_quadratic(&samples.deltas, &vals)?;
        let nrm = (-fit.coeffs[0] / 2.0).exp();
        norms.push(nrm);
        norm_errors.push(0.5 * nrm * fit.std_errors[0]);
        q.push(nrm * nrm);
        fits.push(fit);
    }
    let h_inv = polarize(&samples.directions, &q)?;
    if !h_inv.is_positive_definite() {
        return Err(AhxError::FitFailure("recovered quadratic form is not positive definite".into()));
    }
    let h0 = h_inv.inverse().ok_or_else(|| AhxError::FitFailure("recovered dual metric is singular".into()))?;
    Ok(H0Estimate { y0: samples.y0.clone(), norms, norm_errors, h0: mat_rows(&h0), h0_inv: mat_rows(&h_inv), fits })
}

/// `∂_{y^k} h₀⁻¹` at a point, one matrix per boundary coordinate.
#[derive(Clone, Debug)]
pub struct TangentialDerivatives {
    pub dh0_inv: Vec<Mat<f64>>,
}

impl TangentialDerivatives {
    /// Central differences of recovered dual metrics at `y₀ ∓ step·e_k`.
    pub fn from_neighbours(minus: &[H0Estimate], plus: &[H0Estimate], step: f64) -> Result<Self> {
        if minus.len() != plus.len() || minus.is_empty() || !(step > 0.0) {
            return Err(AhxError::InsufficientSamples("one neighbour pair per boundary coordinate is needed".into()));
        }
        let dh0_inv = minus
            .iter()
            .zip(plus)
            .map(|(m, p)| p.h0_inv_mat().sub(&m.h0_inv_mat()).scale(0.5 / step))
            .collect();
        Ok(TangentialDerivatives { dh0_inv })
    }
}

/// First-jet values per direction with the terms that enter them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FirstJetEstimate {
    pub y0: Vec<f64>,
    /// `F̂'(0)` for each unit direction.
    pub slopes: Vec<f64>,
    /// `∂_ρ h^{ij} ω̂_i ω̂_j` for each unit direction.
    pub dual_values: Vec<f64>,
    /// `−(ω̂^♯)^k ∂_k h^{ij} ω̂_i ω̂_j`.
    pub tangential_terms: Vec<f64>,
    /// `−h^{ij} ω(π)'_i ω̂_j`.
    pub endpoint_terms: Vec<f64>,
    pub drho_h_inv: Vec<Vec<f64>>,
    pub drho_h: Vec<Vec<f64>>,
    /// Propagated standard error of each dual value.
    pub errors: Vec<f64>,
}

/// `∂_ρh(0, y₀)` from the slope of `F(δ) = L − 2 log 2δ + 2 log|ω₀|_{h₀}`.
///
/// For a unit covector `ω̂` and `δ̂ = δ|ω₀|⁻¹`,
/// `F̂'(0) = −(ω̂^♯)^k ∂_k h^{ij}(ω̂, ω̂) − h^{ij}(ω(π)', ω̂) − (π/2) ∂_ρ h^{ij}(ω̂, ω̂)`
/// with `ω(π)'_i = −∂_i h^{jk}(ω̂, ω̂)` from the linearized frozen-metric transport.
/// Here `h^{ij}` is the dual metric; the values are polarized into `∂_ρ h⁻¹` and
/// converted with `∂_ρ h = −h₀ (∂_ρ h⁻¹) h₀`.
pub fn recover_first_jet(samples: &LengthSampleSet, h0: &H0Estimate, tangential: &TangentialDerivatives) -> Result<FirstJetEstimate> {
    samples.validate()?;
    let n = samples.dim();
    if tangential.dh0_inv.len() != n {
        return Err(AhxError::InsufficientSamples(format!("tangential derivatives needed in {n} coordinates")));
    }
    let g_inv = h0.h0_inv_mat();
    let mut out = FirstJetEstimate {
        y0: samples.y0.clone(),
        slopes: vec![],
        dual_values: vec![],
        tangential_terms: vec![],
        endpoint_terms: vec![],
        drho_h_inv: vec![],
        drho_h: vec![],
        errors: vec![],
    };
    let mut units = Vec::new();
    for (w, row) in samples.directions.iter().zip(&samples.lengths) {
        let norm = g_inv.bilinear(w, w).sqrt();
        let vals: Vec<f64> =
            row.iter().zip(&samples.deltas).map(|(l, d)| l - 2.0 * (2.0 * d).ln() + 2.0 * norm.ln()).collect();
        let fit = fit_quadratic(&samples.deltas, &vals)?;
        let slope = norm * fit.coeffs[1];
        let wh: Vec<f64> = w.iter().map(|x| x / norm).collect();
        let sharp = g_inv.mul_vec(&wh);
        let dq: Vec<f64> = tangential.dh0_inv.iter().map(|d| d.bilinear(&wh, &wh)).collect();
        let tangential_term = -sharp.iter().zip(&dq).map(|(s, d)| s * d).sum::<f64>();
        // ∫₀^π sin θ dθ = 2 in the linearized transport of ω.
        let omega_prime: Vec<f64> = dq.iter().map(|d| -0.5 * d * 2.0).collect();
        let endpoint_term = -g_inv.bilinear(&omega_prime, &wh);
        let value = -(2.0 / PI) * (slope - tangential_term - endpoint_term);
        out.slopes.push(slope);
        out.tangential_terms.push(tangential_term);
        out.endpoint_terms.push(endpoint_term);
        out.dual_values.push(value);
        out.errors.push((2.0 / PI) * norm * fit.std_errors[1]);
        units.push(wh);
    }
    let d_inv = polarize(&units, &out.dual_values)?;
    let h = h0.h0_mat();
    let d = h.mul(&d_inv).mul(&h).scale(-1.0);
    out.drho_h_inv = mat_rows(&d_inv);
    out.drho_h = mat_rows(&d);
    Ok(out)
}

/// Recovered jet at one boundary point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JetEstimate {
    pub y0: Vec<f64>,
    pub h0: Vec<Vec<f64>>,
    pub drho_h: Option<Vec<Vec<f64>>>,
    pub d2rho_h: Option<Vec<Vec<f64>>>,
    /// Standard errors of the reported coefficients, in the same order.
    pub uncertainties: Vec<f64>,
    pub fit_residuals: Vec<f64>,
    /// Highest `k` with `∂_ρ^k h|₀` recovered.
    pub order: usize,
    pub method: String,
}

/// Everything the asymptotic route produced at one point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsymptoticRecovery {
    pub jet: JetEstimate,
    pub first_jet: FirstJetEstimate,
    pub h0: H0Estimate,
    pub samples: LengthSampleSet,
}

/// Asymptotic route at `y₀`: samples at `y₀` and at `y₀ ± step·e_k` for the
/// tangential derivatives.
pub fn recover_asymptotic_at(
    family: &BoundaryMetricFamily<f64>,
    y0: &[f64],
    directions: &[Vec<f64>],
    deltas: &[f64],
    step: f64,
    opts: &SynthesisOptions,
) -> Result<AsymptoticRecovery> {
    let n = family.dim;
    let centre = synthesize_samples(family, y0, directions, deltas, opts)?;
    let h0 = recover_h0(&centre)?;
    let mut minus = Vec::new();
    let mut plus = Vec::new();
    for k in 0..n {
        for (sign, dst) in [(-1.0, &mut minus), (1.0, &mut plus)] {
            let mut y = y0.to_vec();
            y[k] += sign * step;
            let o = SynthesisOptions { seed: opts.seed.wrapping_add(1 + 2 * k as u64 + (sign > 0.0) as u64), ..opts.clone() };
            dst.push(recover_h0(&synthesize_samples(family, &y, directions, deltas, &o)?)?);
        }
    }
    let tang = TangentialDerivatives::from_neighbours(&minus, &plus, step)?;
    let first = recover_first_jet(&centre, &h0, &tang)?;
    let mut unc: Vec<f64> = h0.norm_errors.clone();
    unc.extend(first.errors.iter().copied());
    let residuals = h0.fits.iter().map(|f| f.max_residual).collect();
    Ok(AsymptoticRecovery {
        jet: JetEstimate {
            y0: y0.to_vec(),
            h0: h0.h0.clone(),
            drho_h: Some(first.drho_h.clone()),
            d2rho_h: None,
            uncertainties: unc,
            fit_residuals: residuals,
            order: 1,
            method: "asymptotic".into(),
        },
        first_jet: first,
        h0,
        samples: centre,
    })
}

/// Controls for the Levenberg–Marquardt fit.
#[derive(Clone, Debug)]
pub struct FitOptions {
    pub max_iters: usize,
    /// Stop when the relative decrease of the misfit falls below this.
    pub ftol: f64,
    /// Relative finite-difference step for the Jacobian.
    pub fd_step: f64,
    pub trace: TraceOptions<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iters: 40, ftol: 1e-12, fd_step: 1e-6, trace: TraceOptions::with_tol(1e-12) }
    }
}

/// Truncated Taylor model `h = Σ_{k≤k_max} ρ^k/k! h_k` with constant coefficients.
fn taylor_model(y0: f64, params: &[f64]) -> Result<BoundaryMetricFamily<f64>> {
    let terms = params.iter().map(|&p| [p, 0.0, 0.0]).collect();
    BoundaryMetricFamily::new(FamilyKind::Jet { y0, terms }, 0.5)
}

fn model_lengths(samples: &LengthSampleSet, params: &[f64], trace: &TraceOptions<f64>) -> Result<Vec<f64>> {
    let fam = taylor_model(samples.y0[0], params)?;
    let jobs: Vec<(usize, usize)> =
        (0..samples.directions.len()).flat_map(|i| (0..samples.deltas.len()).map(move |k| (i, k))).collect();
    jobs.par_iter()
        .map(|&(i, k)| {
            let eta = vec![samples.directions[i][0] / samples.deltas[k]];
            let traj = trace_geodesic(&fam, &BoundaryCovector::incoming(samples.y0.clone(), eta), trace)?;
            Ok(renormalized_length(&traj)?.length)
        })
        .collect()
}

fn data(samples: &LengthSampleSet) -> Vec<f64> {
    samples.lengths.iter().flatten().copied().collect()
}

/// Fit route (`n = 1`): Levenberg–Marquardt over `(h₀, ∂_ρh, …, ∂_ρ^{k_max}h)`
/// of a truncated Taylor model, minimizing the misfit of simulated lengths.
pub fn recover_jet_fit(samples: &LengthSampleSet, k_max: usize, opts: &FitOptions) -> Result<JetEstimate> {
    samples.validate()?;
    if samples.dim() != 1 {
        return Err(AhxError::Unsupported("the fit route is implemented for n = 1".into()));
    }
    if !(1..=2).contains(&k_max) {
        return Err(AhxError::OutOfRange("k_max must be 1 or 2".into()));
    }
    let obs = data(samples);
    let m = obs.len();
    let p = k_max + 1;
    if m < p {
        return Err(AhxError::InsufficientSamples("more samples than parameters are needed".into()));
    }
    // Leading-order start: h₀ from the smallest δ, higher coefficients zero.
    let kmin = samples.deltas.len() - 1;
    let h0_start: f64 = samples
        .directions
        .iter()
        .zip(&samples.lengths)
        .map(|(w, r)| w[0] * w[0] * (r[kmin] - 2.0 * (2.0 * samples.deltas[kmin]).ln()).exp())
        .sum::<f64>()
        / samples.directions.len() as f64;
    let mut x = vec![0.0; p];
    x[0] = h0_start;
    let residual = |x: &[f64]| -> Result<DVector<f64>> {
        let l = model_lengths(samples, x, &opts.trace)?;
        Ok(DVector::from_iterator(m, l.iter().zip(&obs).map(|(a, b)| a - b)))
    };
    let mut r = residual(&x)?;
    let mut cost = r.norm_squared();
    let mut mu = 1e-3;
    let mut converged = false;
    let mut jac = DMatrix::zeros(m, p);
    for _ in 0..opts.max_iters {
        for j in 0..p {
            let h = opts.fd_step * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let col = (residual(&xp)? - residual(&xm)?) / (2.0 * h);
            jac.set_column(j, &col);
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut accepted = false;
        for _ in 0..20 {
            let mut a = jtj.clone();
            for j in 0..p {
                a[(j, j)] += mu * jtj[(j, j)].max(1e-30);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    mu *= 10.0;
                    continue;
                }
            };
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rn = match residual(&xn) {
                Ok(v) => v,
                Err(_) => {
                    mu *= 10.0;
                    continue;
                }
            };
            let cn = rn.norm_squared();
            if cn < cost {
                let rel = (cost - cn) / cost.max(1e-300);
                x = xn;
                r = rn;
                cost = cn;
                mu = (mu / 10.0).max(1e-12);
                accepted = true;
                if rel < opts.ftol || cost < 1e-26 * m as f64 {
                    converged = true;
                }
                break;
            }
            mu *= 10.0;
        }
        if converged || !accepted {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(AhxError::FitFailure(format!("Levenberg-Marquardt did not converge (misfit {:e})", cost.sqrt())));
    }
    // Identifiability: singular values of the column-scaled Jacobian.
    let scale: Vec<f64> = (0..p).map(|j| jac.column(j).norm().max(1e-300)).collect();
    let js = DMatrix::from_fn(m, p, |i, j| jac[(i, j)] / scale[j]);
    let svd = js.svd(false, true);
    let smax = svd.singular_values.max();
    let vt = svd.v_t.as_ref().expect("requested");
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s < 1e-8 * smax {
            let dir: Vec<f64> = (0..p).map(|j| vt[(k, j)]).collect();
            return Err(AhxError::FitFailure(format!("rank-deficient Jacobian; unresolved parameter direction {dir:?}")));
        }
    }
    let dof = (m as f64 - p as f64).max(1.0);
    let s2 = cost / dof;
    let cov = (jac.transpose() * &jac).try_inverse().unwrap_or_else(|| DMatrix::from_element(p, p, f64::NAN));
    Ok(JetEstimate {
        y0: samples.y0.clone(),
        h0: vec![vec![x[0]]],
        drho_h: Some(vec![vec![x[1]]]),
        d2rho_h: if k_max >= 2 { Some(vec![vec![x[2]]]) } else { None },
        uncertainties: (0..p).map(|j| (s2 * cov[(j, j)]).sqrt()).collect(),
        fit_residuals: r.iter().copied().collect(),
        order: k_max,
        method: "fit".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::fixtures::{disc, half_plane, perturbed};
    use crate::metric::TrigPoly;

    fn dirs() -> Vec<Vec<f64>> {
        vec![vec![1.0], vec![-1.0]]
    }

    fn exact(a1: f64, b0: f64, y: f64) -> (f64, f64, f64) {
        let a = a1 * y.cos();
        (1.0, 2.0 * a, 4.0 * a * a + 4.0 * b0)
    }

    #[test]
    fn half_plane_norms_are_exact() {
        let s = synthesize_samples(&half_plane(), &[0.0], &dirs(), &default_deltas(), &SynthesisOptions::default()).unwrap();
        let e = recover_h0(&s).unwrap();
        for n in &e.norms {
            assert!((n - 1.0).abs() < 1e-8, "{n}");
        }
        assert!((e.h0[0][0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn norm_is_homogeneous_in_the_covector() {
        let f = perturbed(0.1, 0.05);
        let ds = default_deltas();
        let o = SynthesisOptions::default();
        let s1 = synthesize_samples(&f, &[0.4], &[vec![1.0]; 1], &ds, &o).unwrap();
        let s2 = synthesize_samples(&f, &[0.4], &[vec![2.0]; 1], &ds, &o).unwrap();
        let n1 = recover_h0(&s1).unwrap().norms[0];
        let n2 = recover_h0(&s2).unwrap().norms[0];
        // Different effective δ, so only equal up to the extrapolation error.
        assert!((n2 / n1 - 2.0).abs() < 1e-7, "{n1} {n2}");
    }

    #[test]
    fn perturbed_h0_is_one() {
        let f = perturbed(0.1, 0.05);
        let ds = default_deltas();
        for k in 0..8 {
            let y = k as f64 * PI / 4.0;
            let s = synthesize_samples(&f, &[y], &dirs(), &ds, &SynthesisOptions::default()).unwrap();
            let e = recover_h0(&s).unwrap();
            assert!((e.h0[0][0] - 1.0).abs() < 1e-4, "y = {y}: {}", e.h0[0][0]);
        }
    }

    #[test]
    fn first_jet_of_perturbed_family() {
        let f = perturbed(0.1, 0.05);
        for y in [0.0, PI / 2.0, PI] {
            let jet = recover_asymptotic_at(&f, &[y], &dirs(), &default_deltas(), 0.05, &SynthesisOptions::default()).unwrap().jet;
            let want = exact(0.1, 0.05, y).1;
            let got = jet.drho_h.unwrap()[0][0];
            assert!((got - want).abs() < 5e-3, "y = {y}: {got} vs {want}");
        }
    }

    #[test]
    fn first_jet_vanishes_on_the_disc() {
        let jet =
            recover_asymptotic_at(&disc(), &[0.7], &dirs(), &default_deltas(), 0.05, &SynthesisOptions::default()).unwrap().jet;
        assert!(jet.drho_h.unwrap()[0][0].abs() < 1e-5);
    }

    #[test]
    fn first_jet_ignores_interior_changes() {
        let base = perturbed(0.1, 0.05);
        let bumped = BoundaryMetricFamily::new(
            FamilyKind::InteriorBump {
                base: Box::new(base.kind.clone()),
                amplitude: 0.2,
                lo: 0.3,
                hi: 0.45,
                profile: TrigPoly::constant(1.0),
            },
            base.rho_max,
        )
        .unwrap();
        let ds = default_deltas();
        let o = SynthesisOptions::default();
        let a = recover_asymptotic_at(&base, &[1.0], &dirs(), &ds, 0.05, &o).unwrap().jet;
        let b = recover_asymptotic_at(&bumped, &[1.0], &dirs(), &ds, 0.05, &o).unwrap().jet;
        assert!((a.h0[0][0] - b.h0[0][0]).abs() < 1e-8);
        assert!((a.drho_h.unwrap()[0][0] - b.drho_h.unwrap()[0][0]).abs() < 1e-8);
    }

    #[test]
    fn extrapolation_error_shrinks_with_finer_grid() {
        let f = perturbed(0.1, 0.05);
        let ds = default_deltas();
        let full = synthesize_samples(&f, &[0.0], &[vec![1.0]], &ds, &SynthesisOptions::default()).unwrap();
        let mut coarse = full.clone();
        coarse.deltas.pop();
        coarse.lengths[0].pop();
        let e_full = (recover_h0(&full).unwrap().h0[0][0] - 1.0).abs();
        let e_coarse = (recover_h0(&coarse).unwrap().h0[0][0] - 1.0).abs();
        assert!(e_coarse >= 2.0 * e_full, "{e_coarse} {e_full}");
    }

    #[test]
    fn noisy_samples_stay_close() {
        let f = perturbed(0.1, 0.05);
        let o = SynthesisOptions { noise: 1e-6, seed: 7, ..Default::default() };
        let s = synthesize_samples(&f, &[0.0], &dirs(), &default_deltas(), &o).unwrap();
        let e = recover_h0(&s).unwrap();
        assert!((e.h0[0][0] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn clustered_directions_are_rejected() {
        let f = crate::metric::fixtures::half_space();
        let d = vec![vec![1.0, 0.0], vec![1.0, 1e-9], vec![1.0, -1e-9]];
        let s = synthesize_samples(&f, &[0.0, 0.0], &d, &default_deltas(), &SynthesisOptions::default()).unwrap();
        assert!(matches!(recover_h0(&s), Err(AhxError::FitFailure(_))));
    }

    #[test]
    fn half_space_recovers_identity() {
        let f = crate::metric::fixtures::half_space();
        let d = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let s = synthesize_samples(&f, &[0.0, 0.0], &d, &default_deltas(), &SynthesisOptions::default()).unwrap();
        let e = recover_h0(&s).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((e.h0[i][j] - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn oversized_delta_is_rejected() {
        let r = synthesize_samples(&half_plane(), &[0.0], &dirs(), &[5.0, 1.0, 0.5], &SynthesisOptions::default());
        assert!(matches!(r, Err(AhxError::OutOfRange(_))));
    }

    #[test]
    fn fit_route_on_half_plane() {
        let s = synthesize_samples(&half_plane(), &[0.0], &dirs(), &default_deltas(), &SynthesisOptions::default()).unwrap();
        let e = recover_jet_fit(&s, 2, &FitOptions::default()).unwrap();
        assert!((e.h0[0][0] - 1.0).abs() < 1e-8);
        assert!(e.drho_h.as_ref().unwrap()[0][0].abs() < 1e-6);
        assert!(e.d2rho_h.as_ref().unwrap()[0][0].abs() < 1e-4);
        assert!(e.fit_residuals.iter().all(|r| r.abs() < 1e-10));
    }

    #[test]
    fn fit_route_on_perturbed_family_agrees_with_asymptotic_route() {
        let f = perturbed(0.1, 0.05);
        for y in [0.0, PI / 2.0, PI] {
            let s = synthesize_samples(&f, &[y], &dirs(), &default_deltas(), &SynthesisOptions::default()).unwrap();
            let e = recover_jet_fit(&s, 2, &FitOptions::default()).unwrap();
            let (h0, h1, h2) = exact(0.1, 0.05, y);
            let d1 = e.drho_h.unwrap()[0][0];
            assert!((e.h0[0][0] - h0).abs() < 1e-4);
            assert!((d1 - h1).abs() < 1e-3, "y = {y}: {d1}");
            assert!((e.d2rho_h.unwrap()[0][0] - h2).abs() < 5e-2);
            let jet = recover_asymptotic_at(&f, &[y], &dirs(), &default_deltas(), 0.05, &SynthesisOptions::default()).unwrap().jet;
            assert!((jet.drho_h.unwrap()[0][0] - d1).abs() < 1e-3);
        }
    }

    #[test]
    fn fit_route_rejects_two_dimensions() {
        let f = crate::metric::fixtures::half_space();
        let d = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let s = synthesize_samples(&f, &[0.0, 0.0], &d, &default_deltas(), &SynthesisOptions::default()).unwrap();
        assert!(matches!(recover_jet_fit(&s, 2, &FitOptions::default()), Err(AhxError::Unsupported(_))));
    }
}
