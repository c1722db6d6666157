//! Small dense operators acting on a few modes of a register.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Operator on the modes `labels` (in that order), each truncated at `n_max`.
///
/// Local basis index follows the same most-significant-first convention as
/// [`super::ModeRegister`].
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOperator<T: Real> {
    labels: Vec<String>,
    n_max: usize,
    dim: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> LocalOperator<T> {
    fn zeros(labels: &[&str], n_max: usize) -> Self {
        let dim = (n_max + 1).pow(labels.len() as u32);
        Self {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            n_max,
            dim,
            data: vec![Complex::new(T::zero(), T::zero()); dim * dim],
        }
    }

    pub fn identity(labels: &[&str], n_max: usize) -> Self {
        Self::diagonal(labels, n_max, |_| T::one())
    }

    /// Diagonal operator with entries `f(occupations)`.
    pub fn diagonal<F: Fn(&[usize]) -> T>(labels: &[&str], n_max: usize, f: F) -> Self {
        let mut op = Self::zeros(labels, n_max);
        for i in 0..op.dim {
            let d = op.digits(i);
            op.data[i * op.dim + i] = Complex::new(f(&d), T::zero());
        }
        op
    }

    pub fn from_matrix(labels: &[&str], n_max: usize, data: Vec<Complex<T>>) -> Result<Self> {
        let mut op = Self::zeros(labels, n_max);
        if data.len() != op.data.len() {
            return Err(Error::InvalidRegister(format!(
                "local operator needs {} entries, got {}",
                op.data.len(),
                data.len()
            )));
        }
        op.data = data;
        Ok(op)
    }

    /// Two-mode mixing unitary `exp(theta (e^{i phi} b^dag a - e^{-i phi} a^dag b))`.
    ///
    /// A photon in `a` leaves as `cos(theta)|a> + e^{i phi} sin(theta)|b>`. The
    /// generator is built in the truncated space, so the result is exactly
    /// unitary and conserves `n_a + n_b`; sectors with `n_a + n_b <= n_max`
    /// are untouched by the truncation.
    pub fn beam_splitter(a: &str, b: &str, n_max: usize, theta: T, phi: T) -> Self {
        let d = n_max + 1;
        let mut op = Self::zeros(&[a, b], n_max);
        for total in 0..=2 * n_max {
            // occupations (n_a, total - n_a) inside the truncated square
            let lo = total.saturating_sub(n_max);
            let hi = total.min(n_max);
            let size = hi - lo + 1;
            // K = b^dag a - a^dag b restricted to the sector, basis ordered by n_a
            let mut k = vec![T::zero(); size * size];
            for (col, na) in (lo..=hi).enumerate() {
                let nb = total - na;
                // b^dag a: (na, nb) -> (na - 1, nb + 1)
                if na >= 1 && nb < n_max {
                    let row = col - 1;
                    k[row * size + col] += (T::from_usize_lossy(na) * T::from_usize_lossy(nb + 1)).sqrt();
                }
                // -a^dag b: (na, nb) -> (na + 1, nb - 1)
                if nb >= 1 && na < n_max {
                    let row = col + 1;
                    k[row * size + col] -= (T::from_usize_lossy(nb) * T::from_usize_lossy(na + 1)).sqrt();
                }
            }
            for x in k.iter_mut() {
                *x *= theta;
            }
            let u = expm_real(&k, size);
            for (r, na_r) in (lo..=hi).enumerate() {
                let nb_r = total - na_r;
                for (c, na_c) in (lo..=hi).enumerate() {
                    let nb_c = total - na_c;
                    let phase = phi * (T::from_usize_lossy(nb_r) - T::from_usize_lossy(nb_c));
                    let val = Complex::from_polar(u[r * size + c], phase);
                    op.data[(na_r * d + nb_r) * op.dim + (na_c * d + nb_c)] = val;
                }
            }
        }
        op
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex<T> {
        self.data[row * self.dim + col]
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn digits(&self, index: usize) -> Vec<usize> {
        let d = self.n_max + 1;
        let k = self.labels.len();
        (0..k)
            .map(|m| (index / d.pow((k - 1 - m) as u32)) % d)
            .collect()
    }

    pub fn adjoint(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.dim {
            for c in 0..self.dim {
                out.data[r * self.dim + c] = self.data[c * self.dim + r].conj();
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "local operator dimension mismatch");
        let n = self.dim;
        let mut out = self.clone();
        for r in 0..n {
            for c in 0..n {
                let mut acc = Complex::new(T::zero(), T::zero());
                for k in 0..n {
                    acc += self.data[r * n + k] * rhs.data[k * n + c];
                }
                out.data[r * n + c] = acc;
            }
        }
        out
    }

    /// `u^dag self u`.
    pub fn conjugate_by(&self, u: &Self) -> Self {
        u.adjoint().matmul(self).matmul(u)
    }

    /// Largest `|(u^dag u)_ij - delta_ij|`.
    pub fn unitarity_defect(&self) -> T {
        let p = self.adjoint().matmul(self);
        let mut worst = T::zero();
        for r in 0..self.dim {
            for c in 0..self.dim {
                let target = if r == c { T::one() } else { T::zero() };
                worst = worst.max((p.data[r * self.dim + c] - Complex::new(target, T::zero())).norm());
            }
        }
        worst
    }
}

/// Matrix exponential of a small real matrix by scaling and squaring.
pub(crate) fn expm_real<T: Real>(m: &[T], n: usize) -> Vec<T> {
    let norm = (0..n)
        .map(|r| (0..n).map(|c| m[r * n + c].abs()).sum::<T>())
        .fold(T::zero(), T::max);
    let mut squarings = 0u32;
    let mut scale = T::one();
    while norm * scale > T::lit(0.25) {
        scale = scale * T::lit(0.5);
        squarings += 1;
    }
    let a: Vec<T> = m.iter().map(|x| *x * scale).collect();
    let mul = |x: &[T], y: &[T]| -> Vec<T> {
        let mut out = vec![T::zero(); n * n];
        for r in 0..n {
            for k in 0..n {
                let xv = x[r * n + k];
                if xv == T::zero() {
                    continue;
                }
                for c in 0..n {
                    out[r * n + c] += xv * y[k * n + c];
                }
            }
        }
        out
    };
    let mut result = vec![T::zero(); n * n];
    let mut term = vec![T::zero(); n * n];
    for i in 0..n {
        result[i * n + i] = T::one();
        term[i * n + i] = T::one();
    }
    for k in 1..=24usize {
        term = mul(&term, &a);
        let inv = T::one() / T::from_usize_lossy(k);
        for x in term.iter_mut() {
            *x *= inv;
        }
        for (r, t) in result.iter_mut().zip(&term) {
            *r += *t;
        }
    }
    for _ in 0..squarings {
        result = mul(&result, &result);
    }
    result
}
