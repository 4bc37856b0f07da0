//! Dormand–Prince 5(4) integrator with continuous (dense) output.
//!
//! The integrator is exposed as a stepper: every call to [`Dopri5::step`]
//! advances by one accepted step and returns a [`DenseStep`] that can be
//! evaluated anywhere inside the step. Callers own event handling and may
//! overwrite the state between steps (e.g. to project onto a constraint).

use crate::scalar::{c, Real};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("maximum number of steps ({0}) exceeded")]
    TooManySteps(usize),
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
}

/// Per-component error control: `|err_i| ≤ atol_i + rtol_i·|y_i|`.
#[derive(Clone, Debug)]
pub struct Tolerances<T> {
    pub rtol: Vec<T>,
    pub atol: Vec<T>,
}

impl<T: Real> Tolerances<T> {
    pub fn uniform(dim: usize, rtol: T, atol: T) -> Self {
        Tolerances { rtol: vec![rtol; dim], atol: vec![atol; dim] }
    }
}

/// One accepted step with its interpolation coefficients.
#[derive(Clone, Debug)]
pub struct DenseStep<T> {
    pub t0: T,
    pub h: T,
    r: [Vec<T>; 5],
}

impl<T: Real> DenseStep<T> {
    pub fn t1(&self) -> T {
        self.t0 + self.h
    }

    pub fn y0(&self) -> &[T] {
        &self.r[0]
    }

    pub fn y1(&self) -> Vec<T> {
        self.r[0].iter().zip(&self.r[1]).map(|(&a, &b)| a + b).collect()
    }

    #[inline]
    pub fn component(&self, t: T, i: usize) -> T {
        let th = (t - self.t0) / self.h;
        let th1 = T::one() - th;
        let r = &self.r;
        r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])))
    }

    pub fn eval(&self, t: T) -> Vec<T> {
        (0..self.r[0].len()).map(|i| self.component(t, i)).collect()
    }

    /// Multiplies the listed components of the interpolant by `s`.
    pub fn scale_components(&mut self, idx: &[usize], s: T) {
        for r in self.r.iter_mut() {
            for &i in idx {
                r[i] = r[i] * s;
            }
        }
    }

    /// Rebases the interpolant so that its right end matches `y_end`
    /// (used after a constraint projection at step end).
    pub fn set_end(&mut self, y_end: &[T]) {
        for i in 0..y_end.len() {
            let old = self.r[0][i] + self.r[1][i];
            let d = y_end[i] - old;
            // Linear correction in θ keeps the left end unchanged.
            self.r[1][i] = self.r[1][i] + d;
        }
    }
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const C2: f64 = 0.2;
const C3: f64 = 0.3;
const C4: f64 = 0.8;
const C5: f64 = 8.0 / 9.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Adaptive Dormand–Prince stepper for `y' = f(t, y)`.
pub struct Dopri5<T: Real, F> {
    f: F,
    t: T,
    y: Vec<T>,
    k1: Vec<T>,
    h: T,
    dir: T,
    tol: Tolerances<T>,
    pub h_max: T,
    pub max_steps: usize,
    steps: usize,
    pub rejected: usize,
}

impl<T: Real, F: FnMut(T, &[T], &mut [T])> Dopri5<T, F> {
    /// `h0` of zero selects an initial step automatically; its sign (or
    /// `forward`) fixes the integration direction.
    pub fn new(mut f: F, t0: T, y0: Vec<T>, h0: T, forward: bool, tol: Tolerances<T>) -> Self {
        let mut k1 = vec![T::zero(); y0.len()];
        f(t0, &y0, &mut k1);
        let dir = if forward { T::one() } else { -T::one() };
        let mut s = Dopri5 {
            f,
            t: t0,
            y: y0,
            k1,
            h: h0.abs(),
            dir,
            tol,
            h_max: T::infinity(),
            max_steps: 200_000,
            steps: 0,
            rejected: 0,
        };
        if s.h == T::zero() {
            s.h = s.initial_step();
        }
        s
    }

    pub fn t(&self) -> T {
        self.t
    }

    pub fn y(&self) -> &[T] {
        &self.y
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Replaces the current state (the derivative cache is refreshed).
    pub fn set_state(&mut self, y: Vec<T>) {
        self.y = y;
        (self.f)(self.t, &self.y, &mut self.k1);
    }

    fn sk(&self, i: usize, y: &[T]) -> T {
        self.tol.atol[i] + self.tol.rtol[i] * y[i].abs()
    }

    fn initial_step(&mut self) -> T {
        let n = self.y.len();
        let mut d0 = T::zero();
        let mut d1 = T::zero();
        for i in 0..n {
            let sk = self.sk(i, &self.y);
            d0 = d0 + (self.y[i] / sk).powi(2);
            d1 = d1 + (self.k1[i] / sk).powi(2);
        }
        let nn = c::<T>(n as f64);
        d0 = (d0 / nn).sqrt();
        d1 = (d1 / nn).sqrt();
        let mut h = if d0 < c(1e-5) || d1 < c(1e-5) { c(1e-6) } else { c::<T>(0.01) * d0 / d1 };
        h = h.min(self.h_max);
        let y1: Vec<T> = (0..n).map(|i| self.y[i] + self.dir * h * self.k1[i]).collect();
        let mut f1 = vec![T::zero(); n];
        (self.f)(self.t + self.dir * h, &y1, &mut f1);
        let mut d2 = T::zero();
        for i in 0..n {
            d2 = d2 + ((f1[i] - self.k1[i]) / self.sk(i, &self.y)).powi(2);
        }
        d2 = (d2 / nn).sqrt() / h;
        let dm = d1.max(d2);
        let h1 = if dm <= c(1e-15) {
            (h * c(1e-3)).max(c(1e-6))
        } else {
            (c::<T>(0.01) / dm).powf(c(0.2))
        };
        let h = (h * c(100.0)).min(h1).min(self.h_max);
        if h.is_finite() && h > T::zero() {
            h
        } else {
            c(1e-6)
        }
    }

    /// Advances one accepted step.
    pub fn step(&mut self) -> Result<DenseStep<T>, OdeError> {
        let n = self.y.len();
        let mut facmax = c::<T>(10.0);
        let mut k2 = vec![T::zero(); n];
        let mut k3 = vec![T::zero(); n];
        let mut k4 = vec![T::zero(); n];
        let mut k5 = vec![T::zero(); n];
        let mut k6 = vec![T::zero(); n];
        let mut k7 = vec![T::zero(); n];
        let mut yt = vec![T::zero(); n];
        let mut y1 = vec![T::zero(); n];
        loop {
            if self.steps >= self.max_steps {
                return Err(OdeError::TooManySteps(self.max_steps));
            }
            self.steps += 1;
            let h = self.h.min(self.h_max) * self.dir;
            if self.h.abs() <= self.t.abs().max(T::one()) * T::epsilon() * c(4.0) {
                return Err(OdeError::StepUnderflow { t: self.t.to_f64().unwrap_or(f64::NAN) });
            }
            let t = self.t;
            let y = &self.y;
            let k1 = &self.k1;
            for i in 0..n {
                yt[i] = y[i] + h * c::<T>(A21) * k1[i];
            }
            (self.f)(t + c::<T>(C2) * h, &yt, &mut k2);
            for i in 0..n {
                yt[i] = y[i] + h * (c::<T>(A31) * k1[i] + c::<T>(A32) * k2[i]);
            }
            (self.f)(t + c::<T>(C3) * h, &yt, &mut k3);
            for i in 0..n {
                yt[i] = y[i] + h * (c::<T>(A41) * k1[i] + c::<T>(A42) * k2[i] + c::<T>(A43) * k3[i]);
            }
            (self.f)(t + c::<T>(C4) * h, &yt, &mut k4);
            for i in 0..n {
                yt[i] = y[i]
                    + h * (c::<T>(A51) * k1[i]
                        + c::<T>(A52) * k2[i]
                        + c::<T>(A53) * k3[i]
                        + c::<T>(A54) * k4[i]);
            }
            (self.f)(t + c::<T>(C5) * h, &yt, &mut k5);
            for i in 0..n {
                yt[i] = y[i]
                    + h * (c::<T>(A61) * k1[i]
                        + c::<T>(A62) * k2[i]
                        + c::<T>(A63) * k3[i]
                        + c::<T>(A64) * k4[i]
                        + c::<T>(A65) * k5[i]);
            }
            (self.f)(t + h, &yt, &mut k6);
            for i in 0..n {
                y1[i] = y[i]
                    + h * (c::<T>(A71) * k1[i]
                        + c::<T>(A73) * k3[i]
                        + c::<T>(A74) * k4[i]
                        + c::<T>(A75) * k5[i]
                        + c::<T>(A76) * k6[i]);
            }
            (self.f)(t + h, &y1, &mut k7);
            let mut err = T::zero();
            let mut finite = true;
            for i in 0..n {
                let e = h
                    * (c::<T>(E1) * k1[i]
                        + c::<T>(E3) * k3[i]
                        + c::<T>(E4) * k4[i]
                        + c::<T>(E5) * k5[i]
                        + c::<T>(E6) * k6[i]
                        + c::<T>(E7) * k7[i]);
                let sk = self.tol.atol[i] + self.tol.rtol[i] * y[i].abs().max(y1[i].abs());
                err = err + (e / sk).powi(2);
                if !y1[i].is_finite() || !k7[i].is_finite() {
                    finite = false;
                }
            }
            err = (err / c::<T>(n as f64)).sqrt();
            if !finite || !err.is_finite() {
                self.h = h.abs() * c(0.25);
                facmax = T::one();
                self.rejected += 1;
                continue;
            }
            let fac = if err == T::zero() {
                facmax
            } else {
                (c::<T>(0.9) * err.powf(c(-0.2))).min(facmax).max(c(0.2))
            };
            if err <= T::one() {
                let mut r4 = vec![T::zero(); n];
                let mut r1 = vec![T::zero(); n];
                let mut r2 = vec![T::zero(); n];
                let mut r3 = vec![T::zero(); n];
                for i in 0..n {
                    let ydiff = y1[i] - y[i];
                    let bspl = h * k1[i] - ydiff;
                    r1[i] = ydiff;
                    r2[i] = bspl;
                    r3[i] = ydiff - h * k7[i] - bspl;
                    r4[i] = h
                        * (c::<T>(D1) * k1[i]
                            + c::<T>(D3) * k3[i]
                            + c::<T>(D4) * k4[i]
                            + c::<T>(D5) * k5[i]
                            + c::<T>(D6) * k6[i]
                            + c::<T>(D7) * k7[i]);
                }
                let rec = DenseStep { t0: t, h, r: [self.y.clone(), r1, r2, r3, r4] };
                self.t = t + h;
                self.y.copy_from_slice(&y1);
                self.k1.copy_from_slice(&k7);
                self.h = h.abs() * fac;
                return Ok(rec);
            }
            self.rejected += 1;
            self.h = h.abs() * fac.min(T::one());
            facmax = T::one();
        }
    }
}

/// Integrates from `t0` to `t1` and returns the final state (no dense output kept).
pub fn integrate_to<T: Real, F: FnMut(T, &[T], &mut [T])>(
    f: F,
    t0: T,
    y0: Vec<T>,
    t1: T,
    tol: Tolerances<T>,
) -> Result<Vec<T>, OdeError> {
    if t1 == t0 {
        return Ok(y0);
    }
    let mut s = Dopri5::new(f, t0, y0, T::zero(), t1 > t0, tol);
    loop {
        let remaining = (t1 - s.t()).abs();
        s.h_max = remaining;
        let st = s.step()?;
        if (st.t1() - t1).abs() <= t1.abs().max(T::one()) * T::epsilon() * c(8.0) || s.h_max == T::zero() {
            return Ok(st.eval(t1));
        }
        let overshoot = if t1 > t0 { st.t1() > t1 } else { st.t1() < t1 };
        if overshoot {
            return Ok(st.eval(t1));
        }
    }
}
