//! Threshold (click / no-click) detection with dark counts.

use super::QuantumState;
use crate::error::{check_range, Error, Result};
use crate::scalar::Real;

/// Joint click distribution of `k` detectors; bit `j` of a pattern is set when
/// detector `j` clicked.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickTable<T: Real> {
    pub detectors: Vec<String>,
    pub probabilities: Vec<T>,
}

impl<T: Real> ClickTable<T> {
    pub fn get(&self, pattern: usize) -> T {
        self.probabilities[pattern]
    }

    pub fn total(&self) -> T {
        self.probabilities.iter().copied().sum()
    }

    /// Probability that every detector in `mask` clicked (others unconstrained).
    pub fn all_clicked(&self, mask: usize) -> T {
        self.probabilities
            .iter()
            .enumerate()
            .filter(|(p, _)| p & mask == mask)
            .map(|(_, x)| *x)
            .sum()
    }
}

/// Converts no-click probabilities `q[s]` (every detector in `s` silent, others
/// unconstrained) into exact pattern probabilities by inclusion-exclusion.
pub fn patterns_from_silence<T: Real>(q: &[T]) -> Vec<T> {
    let n = q.len();
    debug_assert!(n.is_power_of_two());
    let full = n - 1;
    (0..n)
        .map(|clicked| {
            let silent = full & !clicked;
            let mut acc = T::zero();
            // subsets of `clicked`
            let mut sub = clicked;
            loop {
                let term = q[silent | sub];
                if sub.count_ones() % 2 == 0 {
                    acc += term;
                } else {
                    acc -= term;
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & clicked;
            }
            acc
        })
        .collect()
}

impl<T: Real> QuantumState<T> {
    /// Click distribution of threshold detectors `(mode, dark_prob)`.
    ///
    /// Detector efficiency is expected to be folded in beforehand with
    /// [`QuantumState::loss_channel`]. The no-click element of each detector is
    /// `(1 - dark_prob) |0><0|` on its mode.
    pub fn click_probabilities(&self, detectors: &[(&str, T)]) -> Result<ClickTable<T>> {
        let k = detectors.len();
        if k > 16 {
            return Err(Error::InvalidRegister("at most 16 detectors supported".into()));
        }
        let mut pos = Vec::with_capacity(k);
        for (i, (mode, dark)) in detectors.iter().enumerate() {
            check_range("dark_prob", dark.to_f64_lossy(), 0.0, 1.0, "[0, 1)")?;
            if detectors[..i].iter().any(|(m, _)| m == mode) {
                return Err(Error::DuplicateMode(mode.to_string()));
            }
            pos.push(self.register.index_of(mode)?);
        }
        let n = 1usize << k;
        // weight of each exact vacuum mask
        let mut vac = vec![T::zero(); n];
        for (i, p) in self.diagonal().into_iter().enumerate() {
            let mask = pos
                .iter()
                .enumerate()
                .filter(|(_, &m)| self.register.digit(i, m) == 0)
                .fold(0usize, |acc, (j, _)| acc | (1 << j));
            vac[mask] += p;
        }
        // superset sums: sum over masks containing s
        for j in 0..k {
            for s in 0..n {
                if s & (1 << j) == 0 {
                    let add = vac[s | (1 << j)];
                    vac[s] += add;
                }
            }
        }
        let q: Vec<T> = (0..n)
            .map(|s| {
                let dark: T = (0..k)
                    .filter(|j| s & (1 << j) != 0)
                    .map(|j| T::one() - detectors[j].1)
                    .fold(T::one(), |a, b| a * b);
                dark * vac[s]
            })
            .collect();
        Ok(ClickTable {
            detectors: detectors.iter().map(|(m, _)| m.to_string()).collect(),
            probabilities: patterns_from_silence(&q),
        })
    }
}
