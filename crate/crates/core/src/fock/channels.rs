//! Channels and reductions on [`QuantumState`].

use num_complex::Complex;
use rayon::prelude::*;

use super::{LocalOperator, ModeRegister, QuantumState};
use crate::error::{check_range, Error, Result};
use crate::scalar::Real;

/// Index bookkeeping for a subset of modes: `full = base + offset[local]`.
struct Split {
    /// Full index with the subset's digits zeroed, for every full index.
    base: Vec<usize>,
    /// Local index of every full index.
    local: Vec<usize>,
    /// Full-index offset of every local index.
    offset: Vec<usize>,
    /// Full index (subset digits zero) of every index of the remaining modes.
    rest: Vec<usize>,
    rest_modes: Vec<String>,
}

impl Split {
    fn new(register: &ModeRegister, labels: &[String]) -> Result<Self> {
        let pos: Vec<usize> = labels
            .iter()
            .map(|l| register.index_of(l))
            .collect::<Result<_>>()?;
        for (i, p) in pos.iter().enumerate() {
            if pos[..i].contains(p) {
                return Err(Error::IdenticalModes(labels[i].clone()));
            }
        }
        let d = register.levels();
        let k = pos.len();
        let local_dim = d.pow(k as u32);
        let offset: Vec<usize> = (0..local_dim)
            .map(|l| {
                (0..k)
                    .map(|j| ((l / d.pow((k - 1 - j) as u32)) % d) * register.stride(pos[j]))
                    .sum()
            })
            .collect();
        let dim = register.dim();
        let mut base = Vec::with_capacity(dim);
        let mut local = Vec::with_capacity(dim);
        for i in 0..dim {
            let mut b = i;
            let mut l = 0;
            for &p in &pos {
                let n = register.digit(i, p);
                b -= n * register.stride(p);
                l = l * d + n;
            }
            base.push(b);
            local.push(l);
        }
        let rest_pos: Vec<usize> = (0..register.len()).filter(|m| !pos.contains(m)).collect();
        let rest_modes = rest_pos.iter().map(|&m| register.modes()[m].clone()).collect();
        let rest_dim = d.pow(rest_pos.len() as u32);
        let r = rest_pos.len();
        let rest = (0..rest_dim)
            .map(|ri| {
                (0..r)
                    .map(|j| ((ri / d.pow((r - 1 - j) as u32)) % d) * register.stride(rest_pos[j]))
                    .sum()
            })
            .collect();
        Ok(Self {
            base,
            local,
            offset,
            rest,
            rest_modes,
        })
    }
}

fn zero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

impl<T: Real> QuantumState<T> {
    fn map_elements<F>(&self, f: F) -> Self
    where
        F: Fn(usize, usize) -> T + Sync,
    {
        let dim = self.dim();
        let mut data = self.data.clone();
        data.par_chunks_mut(dim).enumerate().for_each(|(r, row)| {
            for (c, x) in row.iter_mut().enumerate() {
                *x = *x * f(r, c);
            }
        });
        Self::from_parts(self.register.clone(), data)
    }

    /// Puts `photon_mode` and `spin_mode` into the normalized pair state
    /// `sqrt(1 - chi) sum_n chi^{n/2} |n, n>`, truncated at `n_max` and renormalized.
    ///
    /// Both modes must be in vacuum; the rest of the register is untouched.
    pub fn two_mode_squeeze(&self, photon_mode: &str, spin_mode: &str, chi: T) -> Result<Self> {
        check_range("chi", chi.to_f64_lossy(), 0.0, 1.0, "[0, 1)")?;
        if chi >= T::one() {
            return Err(Error::OutOfRange {
                name: "chi",
                value: chi.to_f64_lossy(),
                expected: "[0, 1)",
            });
        }
        if photon_mode == spin_mode {
            return Err(Error::IdenticalModes(photon_mode.to_string()));
        }
        let reg = &self.register;
        let a = reg.index_of(photon_mode)?;
        let b = reg.index_of(spin_mode)?;
        let diag = self.diagonal();
        let vac: T = diag
            .iter()
            .enumerate()
            .filter(|(i, _)| reg.digit(*i, a) == 0 && reg.digit(*i, b) == 0)
            .map(|(_, p)| *p)
            .sum();
        if (self.trace() - vac).abs() > T::tol(1e-12) * self.trace().abs().max(T::one()) {
            let bad = if self.photon_distribution(photon_mode)?[0] < self.trace() - T::tol(1e-12) {
                photon_mode
            } else {
                spin_mode
            };
            return Err(Error::NotVacuum(bad.to_string()));
        }
        let levels = reg.levels();
        let mut amp: Vec<T> = (0..levels)
            .map(|n| ((T::one() - chi) * chi.powi(n as i32)).sqrt())
            .collect();
        let norm = amp.iter().map(|x| *x * *x).sum::<T>().sqrt();
        for x in amp.iter_mut() {
            *x = *x / norm;
        }
        let (sa, sb) = (reg.stride(a), reg.stride(b));
        let dim = self.dim();
        let mut data = vec![zero(); dim * dim];
        data.par_chunks_mut(dim).enumerate().for_each(|(r, row)| {
            let (na, nb) = (reg.digit(r, a), reg.digit(r, b));
            if na != nb {
                return;
            }
            let src_r = r - na * (sa + sb);
            for (c, x) in row.iter_mut().enumerate() {
                let (ma, mb) = (reg.digit(c, a), reg.digit(c, b));
                if ma != mb {
                    continue;
                }
                let src_c = c - ma * (sa + sb);
                *x = self.data[src_r * dim + src_c] * (amp[na] * amp[ma]);
            }
        });
        Ok(Self::from_parts(self.register.clone(), data))
    }

    /// Pure-loss channel of transmissivity `eta`, as the exact Kraus sum
    /// (binomial thinning of every photon-number component).
    pub fn loss_channel(&self, mode: &str, eta: T) -> Result<Self> {
        check_range("eta", eta.to_f64_lossy(), 0.0, 1.0, "[0, 1]")?;
        let reg = &self.register;
        let m = reg.index_of(mode)?;
        let levels = reg.levels();
        let stride = reg.stride(m);
        // kraus[k][n] = sqrt(C(n,k) eta^(n-k) (1-eta)^k)
        let mut kraus = vec![vec![T::zero(); levels]; levels];
        for (k, row) in kraus.iter_mut().enumerate() {
            for (n, x) in row.iter_mut().enumerate().skip(k) {
                let binom = binomial::<T>(n, k);
                *x = (binom * eta.powi((n - k) as i32) * (T::one() - eta).powi(k as i32)).sqrt();
            }
        }
        let dim = self.dim();
        let mut data = vec![zero(); dim * dim];
        data.par_chunks_mut(dim).enumerate().for_each(|(r, row)| {
            let nr = reg.digit(r, m);
            for (c, x) in row.iter_mut().enumerate() {
                let nc = reg.digit(c, m);
                let mut acc = zero();
                let kmax = (levels - 1 - nr).min(levels - 1 - nc);
                for k in 0..=kmax {
                    let coef = kraus[k][nr + k] * kraus[k][nc + k];
                    if coef != T::zero() {
                        acc += self.data[(r + k * stride) * dim + c + k * stride] * coef;
                    }
                }
                *x = acc;
            }
        });
        Ok(Self::from_parts(self.register.clone(), data))
    }

    /// Applies a unitary `u` on its modes: `rho -> (u x I) rho (u x I)^dag`.
    pub fn apply_local_unitary(&self, u: &LocalOperator<T>) -> Result<Self> {
        if u.n_max() != self.register.n_max() {
            return Err(Error::InvalidRegister("local operator cutoff differs from register".into()));
        }
        let split = Split::new(&self.register, u.labels())?;
        let dim = self.dim();
        let ldim = u.dim();
        let nz: Vec<Vec<(usize, Complex<T>)>> = (0..ldim)
            .map(|l| {
                (0..ldim)
                    .filter_map(|lp| {
                        let v = u.get(l, lp);
                        (v != zero()).then_some((lp, v))
                    })
                    .collect()
            })
            .collect();
        // left multiply
        let mut x = vec![zero::<T>(); dim * dim];
        x.par_chunks_mut(dim).enumerate().for_each(|(r, row)| {
            let b = split.base[r];
            for &(lp, v) in &nz[split.local[r]] {
                let src = &self.data[(b + split.offset[lp]) * dim..][..dim];
                for (o, s) in row.iter_mut().zip(src) {
                    *o += v * *s;
                }
            }
        });
        // right multiply by u^dag
        let mut y = vec![zero::<T>(); dim * dim];
        y.par_chunks_mut(dim).enumerate().for_each(|(r, row)| {
            let xr = &x[r * dim..][..dim];
            for (c, o) in row.iter_mut().enumerate() {
                let b = split.base[c];
                let mut acc = zero();
                for &(lp, v) in &nz[split.local[c]] {
                    acc += xr[b + split.offset[lp]] * v.conj();
                }
                *o = acc;
            }
        });
        Ok(Self::from_parts(self.register.clone(), y))
    }

    /// Two-mode mixing (wave plate / beam splitter) with angle `theta` and phase `phi`.
    /// See [`LocalOperator::beam_splitter`] for the convention.
    pub fn su2_mix(&self, mode_a: &str, mode_b: &str, theta: T, phi: T) -> Result<Self> {
        if mode_a == mode_b {
            return Err(Error::IdenticalModes(mode_a.to_string()));
        }
        self.register.index_of(mode_a)?;
        self.register.index_of(mode_b)?;
        let u = LocalOperator::beam_splitter(mode_a, mode_b, self.register.n_max(), theta, phi);
        self.apply_local_unitary(&u)
    }

    /// `exp(i phi n)` on one mode: `<n|rho|n'>` picks up `e^{i phi (n - n')}`.
    pub fn phase_shift(&self, mode: &str, phi: T) -> Result<Self> {
        let reg = &self.register;
        let m = reg.index_of(mode)?;
        let levels = reg.levels() as i64;
        let phases: Vec<Complex<T>> = (-(levels - 1)..levels)
            .map(|dn| Complex::from_polar(T::one(), phi * T::lit(dn as f64)))
            .collect();
        let dim = self.dim();
        let mut data = self.data.clone();
        data.par_chunks_mut(dim).enumerate().for_each(|(r, row)| {
            let nr = reg.digit(r, m) as i64;
            for (c, x) in row.iter_mut().enumerate() {
                let dn = nr - reg.digit(c, m) as i64;
                *x = *x * phases[(dn + levels - 1) as usize];
            }
        });
        Ok(Self::from_parts(self.register.clone(), data))
    }

    /// Phase-diffusion channel: coherence between `n` and `n'` scaled by `(1 - kappa)^|n - n'|`.
    pub fn dephase(&self, mode: &str, kappa: T) -> Result<Self> {
        check_range("kappa", kappa.to_f64_lossy(), 0.0, 1.0, "[0, 1]")?;
        let reg = &self.register;
        let m = reg.index_of(mode)?;
        let keep = T::one() - kappa;
        let factors: Vec<T> = (0..reg.levels()).map(|k| keep.powi(k as i32)).collect();
        Ok(self.map_elements(|r, c| {
            let dn = reg.digit(r, m).abs_diff(reg.digit(c, m));
            factors[dn]
        }))
    }

    /// Part of the state whose coherence order over `modes`, the summed
    /// `|n - n'|` of those modes, equals `order`. Dephasing every listed mode
    /// by `kappa` yields `sum_k (1 - kappa)^k component(k)`.
    pub fn coherence_component(&self, modes: &[&str], order: usize) -> Result<Self> {
        let reg = &self.register;
        let idx: Vec<usize> = modes.iter().map(|m| reg.index_of(m)).collect::<Result<_>>()?;
        Ok(self.map_elements(|r, c| {
            let k: usize = idx.iter().map(|&m| reg.digit(r, m).abs_diff(reg.digit(c, m))).sum();
            if k == order {
                T::one()
            } else {
                T::zero()
            }
        }))
    }

    /// Average of [`Self::phase_shift`] over a zero-mean Gaussian phase of std-dev `sigma`:
    /// coherence between `n` and `n'` scaled by `exp(-sigma^2 (n - n')^2 / 2)`.
    pub fn phase_diffusion(&self, mode: &str, sigma: T) -> Result<Self> {
        check_range("sigma", sigma.to_f64_lossy(), 0.0, f64::INFINITY, "[0, inf)")?;
        let reg = &self.register;
        let m = reg.index_of(mode)?;
        let factors: Vec<T> = (0..reg.levels())
            .map(|k| {
                let k = T::from_usize_lossy(k);
                (-(sigma * sigma * k * k) / T::lit(2.0)).exp()
            })
            .collect();
        Ok(self.map_elements(|r, c| factors[reg.digit(r, m).abs_diff(reg.digit(c, m))]))
    }

    /// `Tr_{modes}[rho (I x op)]`: an operator on the remaining modes.
    ///
    /// With `op = I` this is the partial trace over `op`'s modes.
    pub fn partial_expectation(&self, op: &LocalOperator<T>) -> Result<Self> {
        if op.n_max() != self.register.n_max() {
            return Err(Error::InvalidRegister("local operator cutoff differs from register".into()));
        }
        let split = Split::new(&self.register, op.labels())?;
        if split.rest_modes.is_empty() {
            return Err(Error::InvalidRegister(
                "partial expectation would leave no modes; use expectation()".into(),
            ));
        }
        let new_reg = ModeRegister::new(&split.rest_modes, self.register.n_max())?;
        let nz = nonzero_transposed(op);
        let dim = self.dim();
        let rdim = new_reg.dim();
        let mut data = vec![zero(); rdim * rdim];
        data.par_chunks_mut(rdim).enumerate().for_each(|(rr, row)| {
            let fr = split.rest[rr];
            for (rc, o) in row.iter_mut().enumerate() {
                let fc = split.rest[rc];
                let mut acc = zero();
                for &(l, lp, v) in &nz {
                    acc += self.data[(fr + split.offset[l]) * dim + fc + split.offset[lp]] * v;
                }
                *o = acc;
            }
        });
        Ok(Self::from_parts(new_reg, data))
    }

    /// `Tr[rho (op x I)]`.
    pub fn expectation(&self, op: &LocalOperator<T>) -> Result<Complex<T>> {
        if op.n_max() != self.register.n_max() {
            return Err(Error::InvalidRegister("local operator cutoff differs from register".into()));
        }
        let split = Split::new(&self.register, op.labels())?;
        let nz = nonzero_transposed(op);
        let dim = self.dim();
        Ok(split
            .rest
            .par_iter()
            .map(|&f| {
                let mut acc = zero();
                for &(l, lp, v) in &nz {
                    acc += self.data[(f + split.offset[l]) * dim + f + split.offset[lp]] * v;
                }
                acc
            })
            .reduce(zero, |a, b| a + b))
    }

    /// Reduced state on `keep`, in register order.
    pub fn partial_trace<S: AsRef<str>>(&self, keep: &[S]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::InvalidRegister("partial trace must keep at least one mode".into()));
        }
        for (i, k) in keep.iter().enumerate() {
            self.register.index_of(k.as_ref())?;
            if keep[..i].iter().any(|p| p.as_ref() == k.as_ref()) {
                return Err(Error::DuplicateMode(k.as_ref().to_string()));
            }
        }
        let traced: Vec<&str> = self
            .register
            .modes()
            .iter()
            .filter(|m| !keep.iter().any(|k| k.as_ref() == m.as_str()))
            .map(String::as_str)
            .collect();
        if traced.is_empty() {
            return Ok(self.clone());
        }
        let id = LocalOperator::identity(&traced, self.register.n_max());
        self.partial_expectation(&id)
    }
}

/// Nonzero entries as `(l, l', op[l', l])` so that `sum rho[l,l'] op[l',l]` is a trace.
fn nonzero_transposed<T: Real>(op: &LocalOperator<T>) -> Vec<(usize, usize, Complex<T>)> {
    let n = op.dim();
    let mut out = Vec::new();
    for l in 0..n {
        for lp in 0..n {
            let v = op.get(lp, l);
            if v != zero() {
                out.push((l, lp, v));
            }
        }
    }
    out
}

fn binomial<T: Real>(n: usize, k: usize) -> T {
    (0..k).fold(T::one(), |acc, i| {
        acc * T::from_usize_lossy(n - i) / T::from_usize_lossy(i + 1)
    })
}
