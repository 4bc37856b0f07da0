//! Dense helpers for the tiny row-major matrices (n ≤ 3 or so) that appear in
//! metric evaluation.

use crate::scalar::Real;

/// Row-major square matrix of side `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    pub n: usize,
    pub a: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(n: usize) -> Self {
        Mat { n, a: vec![T::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.a[i * n + i] = T::one();
        }
        m
    }

    pub fn diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &x) in d.iter().enumerate() {
            m.a[i * d.len() + i] = x;
        }
        m
    }

    pub fn scalar(x: T) -> Self {
        Mat { n: 1, a: vec![x] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.a[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.a[i * self.n + j] = v;
    }

    pub fn scale(&self, s: T) -> Self {
        Mat { n: self.n, a: self.a.iter().map(|&x| x * s).collect() }
    }

    pub fn add(&self, o: &Self) -> Self {
        Mat { n: self.n, a: self.a.iter().zip(&o.a).map(|(&x, &y)| x + y).collect() }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Mat { n: self.n, a: self.a.iter().zip(&o.a).map(|(&x, &y)| x - y).collect() }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let n = self.n;
        let mut r = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.get(i, k);
                for j in 0..n {
                    r.a[i * n + j] = r.a[i * n + j] + aik * o.get(k, j);
                }
            }
        }
        r
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut r = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                r.set(j, i, self.get(i, j));
            }
        }
        r
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| (0..self.n).fold(T::zero(), |acc, j| acc + self.get(i, j) * v[j]))
            .collect()
    }

    /// `vᵀ A w`.
    pub fn bilinear(&self, v: &[T], w: &[T]) -> T {
        let mut s = T::zero();
        for i in 0..self.n {
            for j in 0..self.n {
                s = s + v[i] * self.get(i, j) * w[j];
            }
        }
        s
    }

    pub fn max_abs(&self) -> T {
        self.a.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn asymmetry(&self) -> T {
        self.sub(&self.transpose()).max_abs()
    }

    /// Inverse by Gauss–Jordan with partial pivoting; `None` if singular.
    pub fn inverse(&self) -> Option<Self> {
        let n = self.n;
        if n == 1 {
            let x = self.a[0];
            return if x == T::zero() || !x.is_finite() { None } else { Some(Self::scalar(x.recip())) };
        }
        let mut m = self.clone();
        let mut inv = Self::identity(n);
        let scale = self.max_abs();
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if m.get(r, col).abs() > m.get(piv, col).abs() {
                    piv = r;
                }
            }
            let p = m.get(piv, col);
            if !(p.abs() > scale * T::epsilon()) {
                return None;
            }
            if piv != col {
                for j in 0..n {
                    m.a.swap(piv * n + j, col * n + j);
                    inv.a.swap(piv * n + j, col * n + j);
                }
            }
            let pinv = p.recip();
            for j in 0..n {
                m.a[col * n + j] = m.a[col * n + j] * pinv;
                inv.a[col * n + j] = inv.a[col * n + j] * pinv;
            }
            for r in 0..n {
                if r != col {
                    let f = m.get(r, col);
                    if f != T::zero() {
                        for j in 0..n {
                            m.a[r * n + j] = m.a[r * n + j] - f * m.a[col * n + j];
                            inv.a[r * n + j] = inv.a[r * n + j] - f * inv.a[col * n + j];
                        }
                    }
                }
            }
        }
        Some(inv)
    }

    /// Cholesky factorization succeeds iff the (symmetric) matrix is positive definite.
    pub fn is_positive_definite(&self) -> bool {
        let n = self.n;
        let mut l = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s = s - l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > T::zero()) {
                        return false;
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        true
    }
}

/// Solves `A x = b` for a small dense system (row-major `a`, side `n`).
pub fn solve<T: Real>(a: &[T], b: &[T], n: usize) -> Option<Vec<T>> {
    let m = Mat { n, a: a.to_vec() };
    m.inverse().map(|inv| inv.mul_vec(b))
}
