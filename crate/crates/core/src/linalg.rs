//! Small dense linear algebra used by the Newton solver.
//!
//! The inner problems are desk-scale (tens of variables), so a dense
//! symmetric matrix with an in-place Cholesky factorization is all we need.

use crate::real::Real;

/// Dense symmetric matrix, full row-major storage.
#[derive(Debug, Clone)]
pub struct SymMatrix<R: Real> {
    n: usize,
    data: Vec<R>,
}

impl<R: Real> SymMatrix<R> {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![R::zero(); n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> R {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: R) {
        self.data[i * self.n + j] = self.data[i * self.n + j] + v;
        if i != j {
            self.data[j * self.n + i] = self.data[j * self.n + i] + v;
        }
    }

    /// Adds `w * v vᵀ` (symmetric rank-one update).
    pub fn add_outer(&mut self, w: R, v: &[R]) {
        debug_assert_eq!(v.len(), self.n);
        for i in 0..self.n {
            if v[i] == R::zero() {
                continue;
            }
            let wi = w * v[i];
            for j in 0..self.n {
                self.data[i * self.n + j] = self.data[i * self.n + j] + wi * v[j];
            }
        }
    }

    pub fn add_diag(&mut self, d: R) {
        for i in 0..self.n {
            self.data[i * self.n + i] = self.data[i * self.n + i] + d;
        }
    }

    pub fn matvec(&self, x: &[R]) -> Vec<R> {
        let mut y = vec![R::zero(); self.n];
        for i in 0..self.n {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            y[i] = row.iter().zip(x).map(|(&a, &b)| a * b).sum();
        }
        y
    }

    pub fn max_asymmetry(&self) -> R {
        let mut worst = R::zero();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                let d = (self.get(i, j) - self.get(j, i)).abs();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }

    /// Solves `A x = b` via Cholesky. Returns `None` when the matrix is not
    /// positive definite (caller adds damping and retries).
    pub fn cholesky_solve(&self, b: &[R]) -> Option<Vec<R>> {
        let n = self.n;
        let mut l = self.data.clone();
        for j in 0..n {
            let mut d = l[j * n + j];
            for k in 0..j {
                d = d - l[j * n + k] * l[j * n + k];
            }
            if d <= R::zero() || !d.is_finite() {
                return None;
            }
            let dj = d.sqrt();
            l[j * n + j] = dj;
            for i in (j + 1)..n {
                let mut s = l[i * n + j];
                for k in 0..j {
                    s = s - l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / dj;
            }
        }
        // forward then backward substitution
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let lik = l[i * n + k];
                y[i] = y[i] - lik * y[k];
            }
            y[i] = y[i] / l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let lki = l[k * n + i];
                y[i] = y[i] - lki * y[k];
            }
            y[i] = y[i] / l[i * n + i];
        }
        Some(y)
    }
}

pub fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm2<R: Real>(a: &[R]) -> R {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_spd_system() {
        // A = Lᵀ L with L = [[2,0],[1,3]] → A = [[4,2],[2,10]]
        let mut a = SymMatrix::<f64>::zeros(2);
        a.add(0, 0, 4.0);
        a.add(0, 1, 2.0);
        a.add(1, 1, 10.0);
        let x = a.cholesky_solve(&[8.0, 26.0]).unwrap();
        let r = a.matvec(&x);
        assert!((r[0] - 8.0).abs() < 1e-12 && (r[1] - 26.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = SymMatrix::<f64>::zeros(2);
        a.add(0, 0, 1.0);
        a.add(1, 1, -1.0);
        assert!(a.cholesky_solve(&[1.0, 1.0]).is_none());
    }

    #[test]
    fn rank_one_update_matches_direct() {
        let mut a = SymMatrix::<f64>::zeros(3);
        let v = [1.0, -2.0, 0.5];
        a.add_outer(2.0, &v);
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.get(i, j) - 2.0 * v[i] * v[j]).abs() < 1e-15);
            }
        }
        assert_eq!(a.max_asymmetry(), 0.0);
    }
}
