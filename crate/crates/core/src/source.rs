//! The experiment chain: write excitation of two spatial arms, polarization
//! encoding on the first beam splitter, storage, retrieval onto the second
//! beam splitter, and the two polarization analyzers. Also wavevector mode
//! matching between write, read, anti-Stokes and Stokes fields.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::fock::{patterns_from_silence, ClickTable, LocalOperator, ModeRegister, QuantumState};
use crate::scalar::Real;

pub const AS_H: &str = "AS_H";
pub const AS_V: &str = "AS_V";
pub const SPIN_L: &str = "spin_L";
pub const SPIN_R: &str = "spin_R";
pub const S_H: &str = "S_H";
pub const S_V: &str = "S_V";

/// Detector order of every analyzer click table.
pub const DETECTORS: [&str; 4] = ["AS+", "AS-", "S+", "S-"];
pub const AS_PLUS: usize = 1 << 0;
pub const AS_MINUS: usize = 1 << 1;
pub const S_PLUS: usize = 1 << 2;
pub const S_MINUS: usize = 1 << 3;

pub const DEFAULT_N_MAX: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceParams<T> {
    pub chi_l: T,
    pub chi_r: T,
    /// Anti-Stokes path phase difference before the first beam splitter (rad).
    pub phi1: T,
    /// Stokes path phase difference before the second beam splitter (rad).
    pub phi2: T,
    /// Std-dev of the residual interferometer phase noise (rad).
    pub phase_jitter_sigma: T,
    /// Amplitude overlap of the two anti-Stokes spatial modes, 1 = perfect.
    pub mode_overlap: T,
}

impl<T: Real> SourceParams<T> {
    pub fn symmetric(chi: T) -> Self {
        Self {
            chi_l: chi,
            chi_r: chi,
            phi1: T::zero(),
            phi2: T::zero(),
            phase_jitter_sigma: T::zero(),
            mode_overlap: T::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_range("chi_L", self.chi_l.to_f64_lossy(), 0.0, 1.0 - f64::EPSILON, "[0, 1)")?;
        check_range("chi_R", self.chi_r.to_f64_lossy(), 0.0, 1.0 - f64::EPSILON, "[0, 1)")?;
        check_range("mode_overlap", self.mode_overlap.to_f64_lossy(), 0.0, 1.0, "[0, 1]")?;
        check_range(
            "phase_jitter_sigma",
            self.phase_jitter_sigma.to_f64_lossy(),
            0.0,
            f64::INFINITY,
            ">= 0",
        )?;
        check_range("phi1", self.phi1.to_f64_lossy(), f64::MIN, f64::MAX, "finite")?;
        check_range("phi2", self.phi2.to_f64_lossy(), f64::MIN, f64::MAX, "finite")?;
        Ok(())
    }

    pub fn mean_chi(&self) -> T {
        (self.chi_l + self.chi_r) / T::lit(2.0)
    }

    /// Interference contrast left by mode overlap and phase jitter.
    pub fn intrinsic_visibility(&self) -> T {
        let s = self.phase_jitter_sigma;
        self.mode_overlap * (-(s * s) / T::lit(2.0)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayShape {
    Gaussian,
    Exponential,
}

impl DecayShape {
    /// Survival factor at `tau / time_constant`.
    pub fn survival<T: Real>(self, x: T) -> T {
        match self {
            DecayShape::Gaussian => (-(x * x)).exp(),
            DecayShape::Exponential => (-x).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryParams<T> {
    /// Intrinsic retrieval efficiency as storage time goes to zero.
    pub eta_r0: T,
    pub shape: DecayShape,
    /// Retrieval-efficiency decay constant (µs).
    pub t_us: T,
    /// Spin-coherence decay constant (µs).
    pub dephase_t_us: T,
}

impl<T: Real> MemoryParams<T> {
    pub fn validate(&self) -> Result<()> {
        check_range("eta_r0", self.eta_r0.to_f64_lossy(), 0.0, 1.0, "[0, 1]")?;
        check_range("T_us", self.t_us.to_f64_lossy(), f64::MIN_POSITIVE, f64::INFINITY, "> 0")?;
        check_range(
            "dephase_T_us",
            self.dephase_t_us.to_f64_lossy(),
            f64::MIN_POSITIVE,
            f64::INFINITY,
            "> 0",
        )?;
        Ok(())
    }

    /// `eta_r(tau)`, non-increasing with `eta_r(0) = eta_r0`.
    pub fn retrieval_efficiency(&self, tau_us: T) -> T {
        self.eta_r0 * self.shape.survival(tau_us / self.t_us)
    }

    /// Dephasing strength `kappa(tau)` applied to each spin mode.
    pub fn dephasing(&self, tau_us: T) -> T {
        T::one() - self.shape.survival(tau_us / self.dephase_t_us)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams<T> {
    /// Total anti-Stokes detection efficiency.
    pub eta_as: T,
    /// Total Stokes channel efficiency, memory decay excluded.
    pub eta_s: T,
    /// Per-gate dark-click probability of every detector.
    pub dark_prob: T,
    /// Uncorrelated Stokes-channel background per unit excitation probability:
    /// each Stokes detector sees an extra click probability `ratio * mean chi`.
    pub stokes_noise_ratio: T,
}

impl<T: Real> DetectorParams<T> {
    pub fn ideal() -> Self {
        Self {
            eta_as: T::one(),
            eta_s: T::one(),
            dark_prob: T::zero(),
            stokes_noise_ratio: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_range("eta_AS", self.eta_as.to_f64_lossy(), 0.0, 1.0, "[0, 1]")?;
        check_range("eta_S", self.eta_s.to_f64_lossy(), 0.0, 1.0, "[0, 1]")?;
        check_range("dark_prob", self.dark_prob.to_f64_lossy(), 0.0, 1.0 - f64::EPSILON, "[0, 1)")?;
        check_range(
            "stokes_noise_ratio",
            self.stokes_noise_ratio.to_f64_lossy(),
            0.0,
            f64::INFINITY,
            ">= 0",
        )?;
        Ok(())
    }

    /// Background click probability of each Stokes detector.
    pub fn stokes_background(&self, mean_chi: T) -> Result<T> {
        let b = self.stokes_noise_ratio * mean_chi;
        if b >= T::one() {
            return Err(Error::Infeasible(format!(
                "Stokes background probability {} >= 1",
                b.to_f64_lossy()
            )));
        }
        Ok(b)
    }
}

/// Full configuration of one source + memory + detection chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainParams<T> {
    pub source: SourceParams<T>,
    pub memory: MemoryParams<T>,
    pub detector: DetectorParams<T>,
    pub n_max: usize,
}

impl<T: Real> ChainParams<T> {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.memory.validate()?;
        self.detector.validate()?;
        if self.n_max < 1 {
            return Err(Error::OutOfRange {
                name: "n_max",
                value: self.n_max as f64,
                expected: ">= 1",
            });
        }
        self.detector.stokes_background(self.source.mean_chi())?;
        Ok(())
    }

    /// Overall Stokes retrieval probability per stored excitation, `eta_r(tau) eta_S`.
    pub fn overall_retrieval(&self, tau_us: T) -> T {
        self.memory.retrieval_efficiency(tau_us) * self.detector.eta_s
    }

    pub fn stokes_background(&self) -> Result<T> {
        self.detector.stokes_background(self.source.mean_chi())
    }

    /// Photonic state after storage for `tau_us` and retrieval.
    pub fn photon_state(&self, tau_us: T) -> Result<QuantumState<T>> {
        self.validate()?;
        let atom = build_atom_photon_state(&self.source, self.n_max)?;
        let stored = store(&atom, tau_us, &self.memory)?;
        retrieve(&stored, tau_us, self.source.phi2, &self.memory, &self.detector)
    }

    pub fn analyzer(&self, state: &QuantumState<T>, theta_as: T, theta_s: T) -> Result<ClickTable<T>> {
        analyzer_probabilities(state, theta_as, theta_s, &self.detector, self.stokes_background()?)
    }
}

/// Atom-photon state over `[AS_H, AS_V, spin_L, spin_R]`.
///
/// Arm L pairs `AS_H` with `spin_L`, arm R pairs `AS_V` with `spin_R`; `phi1`
/// rides on the V path. Imperfect overlap mixes in a copy whose inter-arm
/// coherence is removed; jitter is a Gaussian average of the V-path phase.
pub fn build_atom_photon_state<T: Real>(src: &SourceParams<T>, n_max: usize) -> Result<QuantumState<T>> {
    src.validate()?;
    let register = ModeRegister::new(&[AS_H, AS_V, SPIN_L, SPIN_R], n_max)?;
    let mut state = QuantumState::vacuum(&register)
        .two_mode_squeeze(AS_H, SPIN_L, src.chi_l)?
        .two_mode_squeeze(AS_V, SPIN_R, src.chi_r)?
        .phase_shift(AS_V, src.phi1)?;
    if src.phase_jitter_sigma > T::zero() {
        state = state.phase_diffusion(AS_V, src.phase_jitter_sigma)?;
    }
    if src.mode_overlap < T::one() {
        let incoherent = state.dephase(AS_V, T::one())?;
        state = state.mix(&incoherent, src.mode_overlap)?;
    }
    Ok(state)
}

/// Storage for `tau_us`: both spin modes dephase with `kappa(tau)`.
pub fn store<T: Real>(state: &QuantumState<T>, tau_us: T, mem: &MemoryParams<T>) -> Result<QuantumState<T>> {
    check_range("tau", tau_us.to_f64_lossy(), 0.0, f64::INFINITY, ">= 0")?;
    mem.validate()?;
    let kappa = mem.dephasing(tau_us);
    if kappa == T::zero() {
        return Ok(state.clone());
    }
    state.dephase(SPIN_L, kappa)?.dephase(SPIN_R, kappa)
}

/// Read-out: `spin_L -> S_V`, `spin_R -> S_H`, each through loss `eta_r(tau) eta_S`,
/// `phi2` on `S_H`. Result is ordered `[AS_H, AS_V, S_H, S_V]`.
pub fn retrieve<T: Real>(
    state: &QuantumState<T>,
    tau_us: T,
    phi2: T,
    mem: &MemoryParams<T>,
    det: &DetectorParams<T>,
) -> Result<QuantumState<T>> {
    check_range("tau", tau_us.to_f64_lossy(), 0.0, f64::INFINITY, ">= 0")?;
    let eta = mem.retrieval_efficiency(tau_us) * det.eta_s;
    if eta > T::one() || eta < T::zero() || eta.is_nan() {
        return Err(Error::Infeasible(format!(
            "retrieval efficiency product {} outside [0, 1]",
            eta.to_f64_lossy()
        )));
    }
    state
        .relabel(SPIN_L, S_V)?
        .relabel(SPIN_R, S_H)?
        .loss_channel(S_V, eta)?
        .loss_channel(S_H, eta)?
        .phase_shift(S_H, phi2)?
        .permute(&[AS_H, AS_V, S_H, S_V])
}

/// Joint click distribution of the detectors `[AS+, AS-, S+, S-]` for analyzer
/// basis angles `theta_as`, `theta_s`.
///
/// Each analyzer is `su2_mix(H, V, theta, 0)`, with `+` on the H output. The
/// anti-Stokes outputs then pass loss `eta_AS`; every detector has dark
/// probability `dark_prob` and the Stokes detectors an extra independent
/// background `stokes_background`. Evaluated in the Heisenberg picture:
/// each no-click element is pulled back through loss and mixing and
/// contracted with the state.
pub fn analyzer_probabilities<T: Real>(
    state: &QuantumState<T>,
    theta_as: T,
    theta_s: T,
    det: &DetectorParams<T>,
    stokes_background: T,
) -> Result<ClickTable<T>> {
    det.validate()?;
    check_range("stokes_background", stokes_background.to_f64_lossy(), 0.0, 1.0 - f64::EPSILON, "[0, 1)")?;
    let reg = state.register();
    for m in [AS_H, AS_V, S_H, S_V] {
        reg.index_of(m)?;
    }
    if reg.len() != 4 {
        return Err(Error::InvalidRegister(
            "analyzer expects exactly the modes AS_H, AS_V, S_H, S_V".into(),
        ));
    }
    let n_max = reg.n_max();
    let as_silent = T::one() - det.dark_prob;
    let s_silent = (T::one() - det.dark_prob) * (T::one() - stokes_background);
    let as_keep = T::one() - det.eta_as;

    let u_as = LocalOperator::beam_splitter(AS_H, AS_V, n_max, theta_as, T::zero());
    let u_s = LocalOperator::beam_splitter(S_H, S_V, n_max, theta_s, T::zero());
    // subset bit 0 = "+" output silent, bit 1 = "-" output silent
    let silent_op = |labels: [&str; 2], subset: usize, per_photon: T, base: T, u: &LocalOperator<T>| {
        LocalOperator::diagonal(&labels, n_max, |d| {
            let mut v = T::one();
            for (j, n) in d.iter().enumerate() {
                if subset & (1 << j) != 0 {
                    v *= base * per_photon.powi(*n as i32);
                }
            }
            v
        })
        .conjugate_by(u)
    };
    let mut silence = vec![T::zero(); 16];
    for s_subset in 0..4usize {
        let b = silent_op([S_H, S_V], s_subset, T::zero(), s_silent, &u_s);
        let reduced = state.partial_expectation(&b)?;
        for as_subset in 0..4usize {
            let a = silent_op([AS_H, AS_V], as_subset, as_keep, as_silent, &u_as);
            silence[as_subset | (s_subset << 2)] = reduced.expectation(&a)?.re;
        }
    }
    Ok(ClickTable {
        detectors: DETECTORS.iter().map(|s| s.to_string()).collect(),
        probabilities: patterns_from_silence(&silence),
    })
}

/// Same distribution as [`analyzer_probabilities`], computed by explicitly
/// mixing, attenuating and detecting the state. Much slower; kept as a check.
pub fn analyzer_probabilities_explicit<T: Real>(
    state: &QuantumState<T>,
    theta_as: T,
    theta_s: T,
    det: &DetectorParams<T>,
    stokes_background: T,
) -> Result<ClickTable<T>> {
    let out = state
        .su2_mix(AS_H, AS_V, theta_as, T::zero())?
        .su2_mix(S_H, S_V, theta_s, T::zero())?
        .loss_channel(AS_H, det.eta_as)?
        .loss_channel(AS_V, det.eta_as)?;
    let s_dark = T::one() - (T::one() - det.dark_prob) * (T::one() - stokes_background);
    let mut t = out.click_probabilities(&[
        (AS_H, det.dark_prob),
        (AS_V, det.dark_prob),
        (S_H, s_dark),
        (S_V, s_dark),
    ])?;
    t.detectors = DETECTORS.iter().map(|s| s.to_string()).collect();
    Ok(t)
}

/// Per-detector anti-Stokes singles rate, averaged over `AS+` and `AS-`.
pub fn anti_stokes_rate<T: Real>(table: &ClickTable<T>) -> T {
    (table.all_clicked(AS_PLUS) + table.all_clicked(AS_MINUS)) / T::lit(2.0)
}

/// Normalized coincidence `P(a and b) / (P(a) P(b))` between two detector bits.
pub fn cross_correlation<T: Real>(table: &ClickTable<T>, a: usize, b: usize) -> Result<T> {
    let pa = table.all_clicked(a);
    let pb = table.all_clicked(b);
    if pa <= T::zero() || pb <= T::zero() {
        return Err(Error::Undefined("zero singles probability".into()));
    }
    Ok(table.all_clicked(a | b) / (pa * pb))
}

/// Excitation probability per arm giving per-detector anti-Stokes rate `p_as`
/// when both arms are equally excited.
///
/// Equal-temperature thermal marginals stay thermal under any analyzer
/// rotation, so each anti-Stokes detector sees mean photon number
/// `eta_AS chi / (1 - chi)` and clicks with `1 - (1 - dark) / (1 + eta_AS nbar)`.
pub fn chi_for_detection_rate<T: Real>(p_as: T, eta_as: T, dark: T) -> Result<T> {
    if eta_as <= T::zero() {
        return Err(Error::OutOfRange {
            name: "eta_AS",
            value: eta_as.to_f64_lossy(),
            expected: "> 0",
        });
    }
    if p_as < dark || p_as >= T::one() {
        return Err(Error::Infeasible(format!(
            "detection rate {} not reachable with dark probability {}",
            p_as.to_f64_lossy(),
            dark.to_f64_lossy()
        )));
    }
    let nbar = ((T::one() - dark) / (T::one() - p_as) - T::one()) / eta_as;
    Ok(nbar / (T::one() + nbar))
}

/// Inverse of [`chi_for_detection_rate`].
pub fn detection_rate_for_chi<T: Real>(chi: T, eta_as: T, dark: T) -> T {
    let nbar = chi / (T::one() - chi);
    T::one() - (T::one() - dark) / (T::one() + eta_as * nbar)
}

/// g² of a mode-matched pair (`AS_H` with the Stokes photon retrieved from `spin_L`),
/// read at analyzer angles (0, 0) from detectors `AS+` and `S-`.
///
/// The two arms are independent and a zero-angle analyzer sends each arm to
/// its own detectors, so this is evaluated on arm L alone.
pub fn matched_pair_g2<T: Real>(chain: &ChainParams<T>, tau_us: T) -> Result<T> {
    chain.validate()?;
    let register = ModeRegister::new(&[AS_H, S_V], chain.n_max)?;
    let eta = chain.overall_retrieval(tau_us);
    let state = QuantumState::vacuum(&register)
        .two_mode_squeeze(AS_H, S_V, chain.source.chi_l)?
        .loss_channel(AS_H, chain.detector.eta_as)?
        .loss_channel(S_V, eta)?;
    let dark = chain.detector.dark_prob;
    let b = chain.stokes_background()?;
    let s_dark = T::one() - (T::one() - dark) * (T::one() - b);
    let t = state.click_probabilities(&[(AS_H, dark), (S_V, s_dark)])?;
    cross_correlation(&t, 1, 2)
}

/// g² of the unmatched pair `AS_V` (arm R) against the Stokes photon of arm L,
/// from the full four-mode state at analyzer angles (0, 0).
pub fn crosstalk_g2<T: Real>(chain: &ChainParams<T>, tau_us: T) -> Result<T> {
    let state = chain.photon_state(tau_us)?;
    let t = chain.analyzer(&state, T::zero(), T::zero())?;
    cross_correlation(&t, AS_MINUS, S_MINUS)
}

/// Matched-pair g² from the full four-mode state (`AS+` with `S-` at zero angles).
pub fn matched_pair_g2_full<T: Real>(chain: &ChainParams<T>, tau_us: T) -> Result<T> {
    let state = chain.photon_state(tau_us)?;
    let t = chain.analyzer(&state, T::zero(), T::zero())?;
    cross_correlation(&t, AS_PLUS, S_MINUS)
}

/// Amplitudes of `(|H>_AS |V>_S + e^{i phase} |V>_AS |H>_S) / sqrt 2` over a
/// four-mode photonic register.
pub fn ideal_photon_pair<T: Real>(register: &ModeRegister, phase: T) -> Result<Vec<Complex<T>>> {
    let pos: Vec<usize> = [AS_H, AS_V, S_H, S_V]
        .iter()
        .map(|m| register.index_of(m))
        .collect::<Result<_>>()?;
    let mut amps = vec![Complex::new(T::zero(), T::zero()); register.dim()];
    let h = T::FRAC_1_SQRT_2();
    let mut d = vec![0; register.len()];
    d[pos[0]] = 1;
    d[pos[3]] = 1;
    amps[register.index_from_digits(&d)] = Complex::new(h, T::zero());
    let mut d = vec![0; register.len()];
    d[pos[1]] = 1;
    d[pos[2]] = 1;
    amps[register.index_from_digits(&d)] = Complex::from_polar(h, phase);
    Ok(amps)
}

/// Unit wavevector directions of the write, read and two anti-Stokes beams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams<T> {
    pub k_w: [T; 3],
    pub k_r: [T; 3],
    pub k_as_l: [T; 3],
    pub k_as_r: [T; 3],
    /// Common wavenumber magnitude (rad/m).
    pub wavenumber: T,
}

impl<T: Real> GeometryParams<T> {
    /// Write along +z, read counter-propagating, anti-Stokes collected at
    /// `±angle_rad` from the write beam in the x-z plane.
    pub fn counter_propagating(angle_rad: T, wavenumber: T) -> Self {
        let (s, c) = angle_rad.sin_cos();
        Self {
            k_w: [T::zero(), T::zero(), T::one()],
            k_r: [T::zero(), T::zero(), -T::one()],
            k_as_l: [s, T::zero(), c],
            k_as_r: [-s, T::zero(), c],
            wavenumber,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let names = ["k_W", "k_R", "k_AS_L", "k_AS_R"];
        for (v, name) in [self.k_w, self.k_r, self.k_as_l, self.k_as_r].iter().zip(names) {
            let n = norm(v).to_f64_lossy();
            if !((n - 1.0).abs() <= 1e-12) {
                return Err(Error::OutOfRange {
                    name,
                    value: n,
                    expected: "unit norm within 1e-12",
                });
            }
        }
        check_range("wavenumber", self.wavenumber.to_f64_lossy(), f64::MIN_POSITIVE, f64::INFINITY, "> 0")?;
        Ok(())
    }
}

/// Phase-matching prediction for one spatial arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmMatch<T> {
    /// `k_R + k_W - k_AS` in units of the common wavenumber.
    pub k_s: [T; 3],
    /// Angle between the predicted Stokes direction and `-k_AS` (rad).
    pub mismatch_angle: T,
    /// `|k̂_S + k̂_AS|`.
    pub residual: T,
    /// `residual < 1e-3`.
    pub counter_propagating: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeMatch<T> {
    pub left: ArmMatch<T>,
    pub right: ArmMatch<T>,
}

pub const COUNTER_PROPAGATION_TOLERANCE: f64 = 1e-3;

/// Stokes wavevectors implied by momentum conservation for both arms.
pub fn mode_match<T: Real>(geo: &GeometryParams<T>) -> Result<ModeMatch<T>> {
    geo.validate()?;
    let arm = |k_as: [T; 3]| {
        let k_s: [T; 3] = std::array::from_fn(|i| geo.k_r[i] + geo.k_w[i] - k_as[i]);
        let ns = norm(&k_s);
        let unit: [T; 3] = std::array::from_fn(|i| k_s[i] / ns);
        let sum: [T; 3] = std::array::from_fn(|i| unit[i] + k_as[i]);
        let residual = norm(&sum);
        // angle between unit and -k_as: 2 atan2(|u + k_as|, |u - k_as|)
        let diff: [T; 3] = std::array::from_fn(|i| unit[i] - k_as[i]);
        let mismatch_angle = T::lit(2.0) * residual.atan2(norm(&diff));
        ArmMatch {
            k_s,
            mismatch_angle,
            residual,
            counter_propagating: residual < T::lit(COUNTER_PROPAGATION_TOLERANCE),
        }
    };
    Ok(ModeMatch {
        left: arm(geo.k_as_l),
        right: arm(geo.k_as_r),
    })
}

fn norm<T: Real>(v: &[T; 3]) -> T {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}
