//! Quadrature rules: adaptive Gauss–Kronrod (7/15) and fixed Gauss–Legendre.

use crate::scalar::{c, Real};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// Result of an adaptive integration.
#[derive(Clone, Copy, Debug)]
pub struct QuadResult<T> {
    pub value: T,
    pub error: T,
    pub intervals: usize,
}

fn gk15<T: Real, F: FnMut(T) -> T>(f: &mut F, a: T, b: T) -> (T, T) {
    let half = (b - a) * c(0.5);
    let mid = (a + b) * c(0.5);
    let fc = f(mid);
    let mut rk = fc * c(WGK[7]);
    let mut rg = fc * c(WG[3]);
    for j in 0..7 {
        let x = half * c(XGK[j]);
        let s = f(mid - x) + f(mid + x);
        rk = rk + s * c(WGK[j]);
        if j % 2 == 1 {
            rg = rg + s * c(WG[j / 2]);
        }
    }
    (rk * half, ((rk - rg) * half).abs())
}

struct Seg<T> {
    a: T,
    b: T,
    val: T,
    err: T,
}

impl<T: Real> PartialEq for Seg<T> {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl<T: Real> Eq for Seg<T> {}
impl<T: Real> PartialOrd for Seg<T> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl<T: Real> Ord for Seg<T> {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.partial_cmp(&o.err).unwrap_or(Ordering::Equal)
    }
}

/// Globally adaptive G7/K15 integration over `[a, b]` split at `breaks`.
///
/// Stops when the summed error estimate falls below `max(abs_tol, rel_tol·|I|)`
/// or after `max_intervals` subdivisions.
pub fn integrate<T: Real, F: FnMut(T) -> T>(
    mut f: F,
    a: T,
    b: T,
    breaks: &[T],
    abs_tol: T,
    rel_tol: T,
    max_intervals: usize,
) -> QuadResult<T> {
    let mut pts = vec![a];
    for &p in breaks {
        if p > a && p < b {
            pts.push(p);
        }
    }
    pts.push(b);
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap_or(Ordering::Equal));
    let mut heap = BinaryHeap::new();
    let mut total = T::zero();
    let mut err = T::zero();
    for w in pts.windows(2) {
        let (v, e) = gk15(&mut f, w[0], w[1]);
        total = total + v;
        err = err + e;
        heap.push(Seg { a: w[0], b: w[1], val: v, err: e });
    }
    let mut count = heap.len();
    while err > abs_tol.max(rel_tol * total.abs()) && count < max_intervals {
        let s = match heap.pop() {
            Some(s) => s,
            None => break,
        };
        let m = (s.a + s.b) * c(0.5);
        if !(m > s.a && m < s.b) {
            heap.push(s);
            break;
        }
        let (v1, e1) = gk15(&mut f, s.a, m);
        let (v2, e2) = gk15(&mut f, m, s.b);
        total = total - s.val + v1 + v2;
        err = err - s.err + e1 + e2;
        heap.push(Seg { a: s.a, b: m, val: v1, err: e1 });
        heap.push(Seg { a: m, b: s.b, val: v2, err: e2 });
        count += 1;
    }
    // Re-sum to shed accumulated cancellation in the running totals.
    let mut v = T::zero();
    let mut e = T::zero();
    for s in heap.iter() {
        v = v + s.val;
        e = e + s.err;
    }
    QuadResult { value: v, error: e, intervals: count }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on<T: Real>(n: usize, a: T, b: T) -> Vec<(T, T)> {
    let (x, w) = gauss_legendre(n);
    let half = (b - a) * c(0.5);
    let mid = (a + b) * c(0.5);
    x.iter().zip(&w).map(|(&xi, &wi)| (mid + half * c(xi), half * c(wi))).collect()
}

/// Composite rule: `panels` equal panels on `[a, b]`, each with an `order`-point Gauss rule.
pub fn composite_gauss<T: Real>(panels: usize, order: usize, a: T, b: T) -> Vec<(T, T)> {
    let h = (b - a) / c(panels as f64);
    (0..panels)
        .flat_map(|p| {
            let lo = a + h * c(p as f64);
            gauss_legendre_on(order, lo, lo + h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_exactness() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for p in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(p as i32)).sum();
                let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let r = integrate(|x: f64| x.sqrt().recip(), 0.0, 1.0, &[], 1e-12, 1e-12, 2000);
        assert!((r.value - 2.0).abs() < 1e-9, "{:?}", r);
        let r = integrate(|x: f64| x.sin(), 0.0, std::f64::consts::PI, &[1.0], 1e-14, 1e-14, 100);
        assert!((r.value - 2.0).abs() < 1e-14);
    }

    #[test]
    fn composite_rule() {
        let r: f64 = composite_gauss::<f64>(20, 3, 0.0, 2.0).iter().map(|(x, w)| w * x.exp()).sum();
        assert!((r - (2.0f64.exp() - 1.0)).abs() < 1e-10);
    }
}
