//! Householder QR for small, tall, column-major least-squares problems.

/// Relative tolerance on |R_kk| used to declare a column dependent.
pub(crate) const RANK_TOLERANCE: f64 = 1e-10;

/// Compact Householder factorization `A = QR` of an `n x p` column-major
/// matrix. Reflectors are stored below (and on) the diagonal, R strictly
/// above it with its diagonal kept separately.
#[derive(Debug, Clone)]
pub(crate) struct Qr {
    n: usize,
    p: usize,
    a: Vec<f64>,
    tau: Vec<f64>,
    rdiag: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Qr {
    /// Factors `a` (length `n * p`, column `j` at `a[j*n..(j+1)*n]`).
    pub(crate) fn factor(mut a: Vec<f64>, n: usize, p: usize) -> Self {
        debug_assert_eq!(a.len(), n * p);
        debug_assert!(n >= p);
        let mut tau = vec![0.0; p];
        let mut rdiag = vec![0.0; p];
        for k in 0..p {
            let (head, tail) = a.split_at_mut((k + 1) * n);
            let v = &mut head[k * n + k..];
            let norm = dot(v, v).sqrt();
            if norm == 0.0 {
                continue;
            }
            let alpha = if v[0] > 0.0 { -norm } else { norm };
            v[0] -= alpha;
            let vtv = dot(v, v);
            if vtv == 0.0 {
                rdiag[k] = alpha;
                continue;
            }
            let t = 2.0 / vtv;
            tau[k] = t;
            rdiag[k] = alpha;
            for col in tail.chunks_exact_mut(n) {
                let target = &mut col[k..];
                let s = t * dot(v, target);
                if s != 0.0 {
                    for (x, vi) in target.iter_mut().zip(v.iter()) {
                        *x -= s * vi;
                    }
                }
            }
        }
        Qr { n, p, a, tau, rdiag }
    }

    /// First column whose diagonal entry is negligible relative to the largest.
    pub(crate) fn deficient_column(&self) -> Option<usize> {
        let largest = self.rdiag.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        if largest == 0.0 {
            return if self.p > 0 { Some(0) } else { None };
        }
        self.rdiag
            .iter()
            .position(|r| r.abs() <= RANK_TOLERANCE * largest)
    }

    /// Applies `Q^T` to `y` in place.
    pub(crate) fn apply_qt(&self, y: &mut [f64]) {
        debug_assert_eq!(y.len(), self.n);
        for k in 0..self.p {
            let t = self.tau[k];
            if t == 0.0 {
                continue;
            }
            let v = &self.a[k * self.n + k..(k + 1) * self.n];
            let target = &mut y[k..];
            let s = t * dot(v, target);
            for (x, vi) in target.iter_mut().zip(v) {
                *x -= s * vi;
            }
        }
    }

    #[inline]
    fn r(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.rdiag[i]
        } else {
            self.a[j * self.n + i]
        }
    }

    /// Solves `R x = b` for the leading `p` entries of `b`.
    pub(crate) fn back_substitute(&self, b: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut x = b[..p].to_vec();
        for i in (0..p).rev() {
            let s = (i + 1..p).fold(x[i], |s, j| s - self.r(i, j) * x[j]);
            x[i] = s / self.rdiag[i];
        }
        x
    }

    /// Least-squares coefficients for response `y`.
    pub(crate) fn solve(&self, y: &[f64]) -> Vec<f64> {
        let mut qty = y.to_vec();
        self.apply_qt(&mut qty);
        self.back_substitute(&qty)
    }

    /// `(R^T R)^{-1} = R^{-1} R^{-T}`, row-major `p x p`.
    pub(crate) fn unscaled_covariance(&self) -> Vec<f64> {
        let p = self.p;
        // Upper-triangular inverse, column by column.
        let mut rinv = vec![0.0; p * p];
        for j in 0..p {
            rinv[j * p + j] = 1.0 / self.rdiag[j];
            for i in (0..j).rev() {
                let mut s = 0.0;
                for k in i + 1..=j {
                    s += self.r(i, k) * rinv[k * p + j];
                }
                rinv[i * p + j] = -s / self.rdiag[i];
            }
        }
        let mut cov = vec![0.0; p * p];
        for i in 0..p {
            for j in i..p {
                let start = j;
                let s: f64 = (start..p).map(|k| rinv[i * p + k] * rinv[j * p + k]).sum();
                cov[i * p + j] = s;
                cov[j * p + i] = s;
            }
        }
        cov
    }
}

/// Least-squares solve that does not require `n > p` (used for tiny
/// marginal-structural-model fits). Returns `None` when rank deficient.
pub(crate) fn lstsq(columns: Vec<f64>, n: usize, p: usize, y: &[f64]) -> Option<Vec<f64>> {
    if n < p {
        return None;
    }
    let qr = Qr::factor(columns, n, p);
    if qr.deficient_column().is_some() {
        return None;
    }
    Some(qr.solve(y))
}
