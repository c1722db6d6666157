//! Density operators over a register of truncated bosonic modes.
//!
//! Basis states are photon-number products `|n_0 n_1 ... n_{M-1}>` with every
//! `n_m <= n_max`. The first mode is the most significant digit of the flat
//! basis index, so a register `["a", "b"]` with `n_max = 2` orders its basis as
//! `|00>, |01>, |02>, |10>, ...`.

mod channels;
mod detection;
mod local;

pub use detection::{patterns_from_silence, ClickTable};
pub use local::LocalOperator;

use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Ordered, uniquely-labelled set of modes sharing one photon-number cutoff.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeRegister {
    modes: Vec<String>,
    n_max: usize,
}

impl ModeRegister {
    pub fn new<S: AsRef<str>>(labels: &[S], n_max: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidRegister("register needs at least one mode".into()));
        }
        if n_max < 1 {
            return Err(Error::InvalidRegister("n_max must be at least 1".into()));
        }
        let mut modes: Vec<String> = Vec::with_capacity(labels.len());
        for l in labels {
            let l = l.as_ref();
            if modes.iter().any(|m| m == l) {
                return Err(Error::DuplicateMode(l.to_string()));
            }
            modes.push(l.to_string());
        }
        let dim = (n_max + 1)
            .checked_pow(modes.len() as u32)
            .ok_or_else(|| Error::InvalidRegister("dimension overflows usize".into()))?;
        if dim > 1 << 16 {
            return Err(Error::InvalidRegister(format!(
                "dimension {dim} too large for a dense density operator"
            )));
        }
        Ok(Self { modes, n_max })
    }

    pub fn modes(&self) -> &[String] {
        &self.modes
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Levels per mode, `n_max + 1`.
    pub fn levels(&self) -> usize {
        self.n_max + 1
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.levels().pow(self.modes.len() as u32)
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m == label)
            .ok_or_else(|| Error::UnknownMode(label.to_string()))
    }

    /// Flat-index stride of mode position `m`.
    pub fn stride(&self, m: usize) -> usize {
        self.levels().pow((self.modes.len() - 1 - m) as u32)
    }

    /// Photon number of mode position `m` in basis state `index`.
    #[inline]
    pub fn digit(&self, index: usize, m: usize) -> usize {
        (index / self.stride(m)) % self.levels()
    }

    /// Flat index of the product state with the given occupations.
    pub fn index_from_digits(&self, digits: &[usize]) -> usize {
        debug_assert_eq!(digits.len(), self.modes.len());
        digits.iter().fold(0, |acc, &n| acc * self.levels() + n)
    }

    pub fn digits(&self, index: usize) -> Vec<usize> {
        (0..self.modes.len()).map(|m| self.digit(index, m)).collect()
    }

    fn with_modes(&self, modes: Vec<String>) -> Self {
        Self {
            modes,
            n_max: self.n_max,
        }
    }
}

/// Density operator in the photon-number product basis of a [`ModeRegister`].
///
/// States are immutable: every operation returns a new state.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState<T: Real> {
    register: ModeRegister,
    /// Row-major `dim x dim` matrix.
    data: Vec<Complex<T>>,
    trace_cache: T,
}

impl<T: Real> QuantumState<T> {
    fn from_parts(register: ModeRegister, data: Vec<Complex<T>>) -> Self {
        let dim = register.dim();
        debug_assert_eq!(data.len(), dim * dim);
        let trace_cache = (0..dim).map(|i| data[i * dim + i].re).sum();
        Self {
            register,
            data,
            trace_cache,
        }
    }

    /// Pure vacuum `|0...0><0...0|`.
    pub fn vacuum(register: &ModeRegister) -> Self {
        let dim = register.dim();
        let mut data = vec![Complex::new(T::zero(), T::zero()); dim * dim];
        data[0] = Complex::new(T::one(), T::zero());
        Self::from_parts(register.clone(), data)
    }

    /// `|psi><psi|` for a (not necessarily normalized) amplitude vector.
    pub fn from_pure(register: &ModeRegister, amplitudes: &[Complex<T>]) -> Result<Self> {
        let dim = register.dim();
        if amplitudes.len() != dim {
            return Err(Error::InvalidRegister(format!(
                "expected {dim} amplitudes, got {}",
                amplitudes.len()
            )));
        }
        let mut data = vec![Complex::new(T::zero(), T::zero()); dim * dim];
        data.par_chunks_mut(dim).enumerate().for_each(|(r, row)| {
            for (c, x) in row.iter_mut().enumerate() {
                *x = amplitudes[r] * amplitudes[c].conj();
            }
        });
        Ok(Self::from_parts(register.clone(), data))
    }

    /// Wraps a row-major matrix. Hermiticity is not enforced here.
    pub fn from_matrix(register: &ModeRegister, data: Vec<Complex<T>>) -> Result<Self> {
        let dim = register.dim();
        if data.len() != dim * dim {
            return Err(Error::InvalidRegister(format!(
                "expected {} matrix entries, got {}",
                dim * dim,
                data.len()
            )));
        }
        Ok(Self::from_parts(register.clone(), data))
    }

    pub fn register(&self) -> &ModeRegister {
        &self.register
    }

    pub fn dim(&self) -> usize {
        self.register.dim()
    }

    pub fn matrix(&self) -> &[Complex<T>] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex<T> {
        self.data[row * self.dim() + col]
    }

    pub fn trace(&self) -> T {
        self.trace_cache
    }

    pub fn diagonal(&self) -> Vec<T> {
        let dim = self.dim();
        (0..dim).map(|i| self.data[i * dim + i].re).collect()
    }

    /// Rescales to unit trace. A zero-trace state is returned unchanged.
    pub fn normalize(&self) -> Self {
        let tr = self.trace_cache;
        if tr == T::zero() {
            return self.clone();
        }
        let inv = T::one() / tr;
        let data = self.data.par_iter().map(|x| *x * inv).collect();
        Self::from_parts(self.register.clone(), data)
    }

    /// Probability that at least one mode sits at the truncation level `n_max`.
    pub fn leaked_population(&self) -> T {
        let n_max = self.register.n_max();
        let m = self.register.len();
        self.diagonal()
            .iter()
            .enumerate()
            .filter(|(i, _)| (0..m).any(|k| self.register.digit(*i, k) == n_max))
            .map(|(_, p)| *p)
            .sum()
    }

    /// Marginal photon-number distribution `P(n)` of one mode.
    pub fn photon_distribution(&self, mode: &str) -> Result<Vec<T>> {
        let m = self.register.index_of(mode)?;
        let mut out = vec![T::zero(); self.register.levels()];
        for (i, p) in self.diagonal().into_iter().enumerate() {
            out[self.register.digit(i, m)] += p;
        }
        Ok(out)
    }

    pub fn mean_photon_number(&self, mode: &str) -> Result<T> {
        Ok(self
            .photon_distribution(mode)?
            .into_iter()
            .enumerate()
            .map(|(n, p)| T::from_usize_lossy(n) * p)
            .sum())
    }

    /// Largest `|rho_ij - conj(rho_ji)|` relative to the largest entry.
    pub fn hermiticity_defect(&self) -> T {
        let dim = self.dim();
        let scale = self
            .data
            .iter()
            .map(|x| x.norm())
            .fold(T::zero(), T::max)
            .max(T::min_positive_value());
        let worst = (0..dim)
            .into_par_iter()
            .map(|r| {
                (r..dim)
                    .map(|c| (self.get(r, c) - self.get(c, r).conj()).norm())
                    .fold(T::zero(), T::max)
            })
            .reduce(T::zero, T::max);
        worst / scale
    }

    /// `<psi|rho|psi> / (<psi|psi> tr rho)`.
    pub fn fidelity_with_pure(&self, amplitudes: &[Complex<T>]) -> Result<T> {
        let dim = self.dim();
        if amplitudes.len() != dim {
            return Err(Error::InvalidRegister(format!(
                "expected {dim} amplitudes, got {}",
                amplitudes.len()
            )));
        }
        let norm: T = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        let mut acc = Complex::new(T::zero(), T::zero());
        for (r, ar) in amplitudes.iter().enumerate() {
            if ar.norm_sqr() == T::zero() {
                continue;
            }
            for (c, ac) in amplitudes.iter().enumerate() {
                acc += ar.conj() * self.get(r, c) * ac;
            }
        }
        Ok(acc.re / (norm * self.trace_cache))
    }

    /// Projects onto the basis states accepted by `keep` (unnormalized `P rho P`).
    pub fn postselect<F>(&self, keep: F) -> Self
    where
        F: Fn(&[usize]) -> bool + Sync,
    {
        let dim = self.dim();
        let mask: Vec<bool> = (0..dim).map(|i| keep(&self.register.digits(i))).collect();
        let mut data = self.data.clone();
        data.par_chunks_mut(dim).enumerate().for_each(|(r, row)| {
            for (c, x) in row.iter_mut().enumerate() {
                if !(mask[r] && mask[c]) {
                    *x = Complex::new(T::zero(), T::zero());
                }
            }
        });
        Self::from_parts(self.register.clone(), data)
    }

    /// Convex combination `w * self + (1 - w) * other` over the same register.
    pub fn mix(&self, other: &Self, weight: T) -> Result<Self> {
        if self.register != other.register {
            return Err(Error::InvalidRegister("mixing states over different registers".into()));
        }
        let w2 = T::one() - weight;
        let data = self
            .data
            .par_iter()
            .zip(other.data.par_iter())
            .map(|(a, b)| *a * weight + *b * w2)
            .collect();
        Ok(Self::from_parts(self.register.clone(), data))
    }

    /// Renames one mode; the basis ordering is unchanged.
    pub fn relabel(&self, from: &str, to: &str) -> Result<Self> {
        let m = self.register.index_of(from)?;
        if from != to && self.register.index_of(to).is_ok() {
            return Err(Error::DuplicateMode(to.to_string()));
        }
        let mut modes = self.register.modes.clone();
        modes[m] = to.to_string();
        Ok(Self {
            register: self.register.with_modes(modes),
            data: self.data.clone(),
            trace_cache: self.trace_cache,
        })
    }

    /// Reorders the register to `order`, which must be a permutation of its labels.
    pub fn permute(&self, order: &[&str]) -> Result<Self> {
        if order.len() != self.register.len() {
            return Err(Error::InvalidRegister(
                "permutation must name every mode exactly once".into(),
            ));
        }
        let old_pos: Vec<usize> = order
            .iter()
            .map(|l| self.register.index_of(l))
            .collect::<Result<_>>()?;
        let new_register = ModeRegister::new(order, self.register.n_max())?;
        let dim = self.dim();
        // new index -> old index
        let map: Vec<usize> = (0..dim)
            .map(|i| {
                let nd = new_register.digits(i);
                let mut od = vec![0; nd.len()];
                for (k, &p) in old_pos.iter().enumerate() {
                    od[p] = nd[k];
                }
                self.register.index_from_digits(&od)
            })
            .collect();
        let mut data = vec![Complex::new(T::zero(), T::zero()); dim * dim];
        data.par_chunks_mut(dim).enumerate().for_each(|(r, row)| {
            let src = map[r] * dim;
            for (c, x) in row.iter_mut().enumerate() {
                *x = self.data[src + map[c]];
            }
        });
        Ok(Self::from_parts(new_register, data))
    }
}
