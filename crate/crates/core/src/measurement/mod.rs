//! Estimators with first-order Poisson errors: g², visibility, correlation E,
//! CHSH S, violation significance and fringe visibility, plus the closed-form
//! relations linking them.

use num_traits::Num;
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::fock::ClickTable;
use crate::scalar::Real;
use crate::source::{AS_MINUS, AS_PLUS, S_MINUS, S_PLUS};

/// A value with its standard error. `std_err == 0` marks an analytic value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate<T> {
    pub value: T,
    pub std_err: T,
    pub n_effective: u64,
}

impl<T: Real> Estimate<T> {
    pub fn new(value: T, std_err: T, n_effective: u64) -> Self {
        Self {
            value,
            std_err,
            n_effective,
        }
    }

    pub fn exact(value: T) -> Self {
        Self::new(value, T::zero(), 0)
    }

    pub fn is_analytic(&self) -> bool {
        self.std_err == T::zero()
    }
}

/// Patterns `pp, pm, mp, mm` with exactly one click per side. Gates with both
/// detectors of a side firing are left out of correlation and fringe counts,
/// so the four bins partition the coincidences.
pub const COINCIDENCE_PATTERNS: [usize; 4] = [0b0101, 0b1001, 0b0110, 0b1010];

/// Detection events at one analyzer setting, histogrammed by click pattern.
/// Bit order of a pattern: AS+, AS-, S+, S-.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingCounts {
    pub setting_id: u32,
    /// Analyzer basis angles (rad).
    pub theta_as: f64,
    pub theta_s: f64,
    pub trials: u64,
    pub patterns: [u64; 16],
}

impl SettingCounts {
    pub fn new(setting_id: u32, theta_as: f64, theta_s: f64) -> Self {
        Self {
            setting_id,
            theta_as,
            theta_s,
            trials: 0,
            patterns: [0; 16],
        }
    }

    /// Trials in which every detector of `mask` clicked.
    pub fn all_clicked(&self, mask: usize) -> u64 {
        self.patterns
            .iter()
            .enumerate()
            .filter(|(p, _)| p & mask == mask)
            .map(|(_, n)| *n)
            .sum()
    }

    pub fn singles(&self, bit: usize) -> u64 {
        self.all_clicked(1 << bit)
    }

    /// `[N_pp, N_pm, N_mp, N_mm]`, first sign anti-Stokes, second Stokes:
    /// gates in which exactly one detector fired on each side.
    pub fn coincidences(&self) -> [u64; 4] {
        COINCIDENCE_PATTERNS.map(|p| self.patterns[p])
    }

    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.patterns.iter().sum();
        if total > self.trials {
            return Err(Error::MalformedDistribution(format!(
                "setting {}: {} recorded patterns exceed {} trials",
                self.setting_id, total, self.trials
            )));
        }
        Ok(())
    }

    /// Folds in the silent trials that a sparse record stream omits.
    pub fn fill_silent(&mut self) {
        let clicked: u64 = self.patterns[1..].iter().sum();
        self.patterns[0] = self.trials.saturating_sub(clicked);
    }
}

/// Counts for a list of analyzer settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CountsTable {
    pub settings: Vec<SettingCounts>,
}

impl CountsTable {
    pub fn get(&self, setting_id: u32) -> Option<&SettingCounts> {
        self.settings.iter().find(|s| s.setting_id == setting_id)
    }

    pub fn validate(&self) -> Result<()> {
        self.settings.iter().try_for_each(SettingCounts::validate)
    }
}

/// `g² = (joint / n) / ((a / n)(b / n))`, errors from independent Poisson counts.
pub fn g2_estimator<T: Real>(joint: u64, singles_as: u64, singles_s: u64, trials: u64) -> Result<Estimate<T>> {
    if trials == 0 {
        return Err(Error::InsufficientData("zero trials".into()));
    }
    if singles_as == 0 || singles_s == 0 {
        return Err(Error::Undefined("zero singles count".into()));
    }
    if joint > singles_as.min(singles_s) || singles_as.max(singles_s) > trials {
        return Err(Error::MalformedDistribution(
            "coincidences must not exceed singles, nor singles trials".into(),
        ));
    }
    let j = T::from_u64(joint).unwrap();
    let a = T::from_u64(singles_as).unwrap();
    let b = T::from_u64(singles_s).unwrap();
    let n = T::from_u64(trials).unwrap();
    let scale = n / (a * b);
    let value = j * scale;
    // an empty coincidence bin still carries an uncertainty of one count
    let rel = (T::one() / a + T::one() / b).sqrt();
    let std_err = if joint == 0 {
        scale
    } else {
        value * (T::one() / j + rel * rel).sqrt()
    };
    Ok(Estimate::new(value, std_err, joint))
}

/// `V = (g² - 1) / (g² + 1)`.
pub fn visibility_from_g2<T: Real>(g2: Estimate<T>) -> Result<Estimate<T>> {
    check_range("g2", g2.value.to_f64_lossy(), 0.0, f64::INFINITY, ">= 0")?;
    let one = T::one();
    let d = g2.value + one;
    Ok(Estimate::new(
        (g2.value - one) / d,
        T::lit(2.0) * g2.std_err / (d * d),
        g2.n_effective,
    ))
}

/// Inverse of [`visibility_from_g2`], `g² = (1 + V) / (1 - V)`.
pub fn g2_from_visibility<T: Real>(v: Estimate<T>) -> Result<Estimate<T>> {
    check_range("V", v.value.to_f64_lossy(), -1.0, 1.0 - f64::EPSILON, "[-1, 1)")?;
    let d = T::one() - v.value;
    Ok(Estimate::new(
        (T::one() + v.value) / d,
        T::lit(2.0) * v.std_err / (d * d),
        v.n_effective,
    ))
}

/// Small-excitation visibility `1 - 2 p_AS / eta_AS`, clamped to [-1, 1].
pub fn predicted_visibility<T: Real>(p_as: T, eta_as: T) -> Result<T> {
    if !(eta_as > T::zero()) || eta_as > T::one() {
        return Err(Error::OutOfRange {
            name: "eta_AS",
            value: eta_as.to_f64_lossy(),
            expected: "(0, 1]",
        });
    }
    check_range("p_AS", p_as.to_f64_lossy(), 0.0, eta_as.to_f64_lossy(), "[0, eta_AS]")?;
    let v = T::one() - T::lit(2.0) * p_as / eta_as;
    Ok(v.max(-T::one()).min(T::one()))
}

/// Detection rate at which [`predicted_visibility`] reaches `v`.
pub fn pas_for_visibility<T: Real>(v: T, eta_as: T) -> T {
    (T::one() - v) * eta_as / T::lit(2.0)
}

/// `E = (N_pp + N_mm - N_pm - N_mp) / N` with binomial error `sqrt((1 - E²) / N)`.
pub fn correlation_e<T: Real>(counts: &SettingCounts) -> Result<Estimate<T>> {
    let [pp, pm, mp, mm] = counts.coincidences();
    let total = pp + pm + mp + mm;
    if total == 0 {
        return Err(Error::Undefined(format!(
            "no coincidences at setting {}",
            counts.setting_id
        )));
    }
    let n = T::from_u64(total).unwrap();
    let e = (T::from_u64(pp + mm).unwrap() - T::from_u64(pm + mp).unwrap()) / n;
    let var = ((T::one() - e * e) / n).max(T::zero());
    Ok(Estimate::new(e, var.sqrt(), total))
}

/// Correlation E from exact pattern probabilities.
pub fn correlation_e_analytic<T: Real>(table: &ClickTable<T>) -> Result<T> {
    let c = COINCIDENCE_PATTERNS.map(|p| table.get(p));
    let total = c[0] + c[1] + c[2] + c[3];
    if !(total > T::zero()) {
        return Err(Error::Undefined("zero coincidence probability".into()));
    }
    Ok((c[0] + c[3] - c[1] - c[2]) / total)
}

/// Correlation of unconditioned `±1` outcomes over every trial: a side reads
/// `-1` when its minus detector clicks alone and `+1` otherwise. Unlike
/// [`correlation_e_analytic`] nothing is post-selected, so CHSH combinations
/// of these are bounded by `2 sqrt 2` for any state.
pub fn correlation_e_unconditioned<T: Real>(table: &ClickTable<T>) -> T {
    let side = |p: usize, plus: usize, minus: usize| if p & (plus | minus) == minus { -1 } else { 1 };
    (0..16).fold(T::zero(), |acc, p| {
        let s = side(p, AS_PLUS, AS_MINUS) * side(p, S_PLUS, S_MINUS);
        acc + T::from_i8(s).unwrap() * table.get(p)
    })
}

/// Signs applied to `(E11, E12, E21, E22)` before taking `|sum|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChshSigns(pub [i8; 4]);

/// The four Bell settings `(theta_AS, theta_S)` in basis-angle degrees.
pub const BELL_SETTINGS_DEG: [(f64, f64); 4] = [(0.0, 22.5), (0.0, -22.5), (45.0, 22.5), (45.0, -22.5)];

/// With `+` on the H output of each analyzer, the ideal pair state gives
/// `E(a, b) = -cos 2(a + b)`. At [`BELL_SETTINGS_DEG`] the combination
/// `E11 - E12 - E21 - E22` cancels to zero; the single relative minus that
/// maximizes `|S|` sits on `E21`, giving `2 sqrt 2`.
pub const CHSH_SIGNS: ChshSigns = ChshSigns([1, 1, -1, 1]);

/// `E11 - E12 - E21 - E22`, which vanishes at these settings.
pub const CHSH_SIGNS_ALL_MINUS: ChshSigns = ChshSigns([1, -1, -1, -1]);

impl ChshSigns {
    /// The four assignments carrying exactly one minus sign.
    pub fn one_minus() -> [ChshSigns; 4] {
        std::array::from_fn(|k| {
            let mut s = [1i8; 4];
            s[k] = -1;
            ChshSigns(s)
        })
    }

    pub fn combine<T: Real>(&self, e: [T; 4]) -> T {
        e.iter()
            .zip(self.0)
            .fold(T::zero(), |acc, (x, s)| acc + T::from_i8(s).unwrap() * *x)
            .abs()
    }
}

/// `S = |sum_k s_k E_k|` with quadrature error.
pub fn chsh_s<T: Real>(e: [Estimate<T>; 4], signs: ChshSigns) -> Estimate<T> {
    let value = signs.combine(e.map(|x| x.value));
    let var = e.iter().fold(T::zero(), |acc, x| acc + x.std_err * x.std_err);
    let n = e.iter().map(|x| x.n_effective).sum();
    Estimate::new(value, var.sqrt(), n)
}

/// Standard deviations above the local-realistic bound, `(S - 2) / sigma`.
///
/// Generic over any ordered field so quoted decimal figures can be checked
/// in exact rational arithmetic as well as in floating point.
pub fn violation_significance<T>(s: Estimate<T>) -> Result<T>
where
    T: Num + PartialOrd + Clone,
{
    if !(s.std_err > T::zero()) {
        return Err(Error::Undefined("significance needs a positive standard error".into()));
    }
    let two = T::one() + T::one();
    Ok((s.value - two) / s.std_err)
}

/// One fringe sample: analyzer angle (rad), observed rate and its variance.
/// A zero variance means an unweighted (analytic) point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringePoint<T> {
    pub theta: T,
    pub value: T,
    pub variance: T,
}

/// Fits `a + b cos 2θ + c sin 2θ` by (weighted) least squares and reports
/// `V = sqrt(b² + c²) / a`, i.e. `(max - min) / (max + min)` of the fit.
pub fn fringe_visibility<T: Real>(points: &[FringePoint<T>]) -> Result<Estimate<T>> {
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "fringe fit needs >= 4 points, got {}",
            points.len()
        )));
    }
    let (lo, hi) = points.iter().fold((T::infinity(), T::neg_infinity()), |(l, h), p| {
        (l.min(p.theta), h.max(p.theta))
    });
    if hi - lo < T::FRAC_PI_2() - T::tol(1e-12) {
        return Err(Error::InsufficientData("fringe scan spans less than half a period".into()));
    }
    if points.iter().all(|p| p.value == T::zero()) {
        return Err(Error::Degenerate("fringe scan has no counts".into()));
    }
    let weighted = points.iter().all(|p| p.variance > T::zero());
    let mut m = [[T::zero(); 3]; 3];
    let mut r = [T::zero(); 3];
    for p in points {
        let w = if weighted { T::one() / p.variance } else { T::one() };
        let (s, c) = (T::lit(2.0) * p.theta).sin_cos();
        let f = [T::one(), c, s];
        for i in 0..3 {
            r[i] += w * f[i] * p.value;
            for j in 0..3 {
                m[i][j] += w * f[i] * f[j];
            }
        }
    }
    let inv = invert3(m).ok_or_else(|| Error::Degenerate("fringe design matrix is singular".into()))?;
    let coef: [T; 3] = std::array::from_fn(|i| (0..3).fold(T::zero(), |acc, j| acc + inv[i][j] * r[j]));
    let (a, b, c) = (coef[0], coef[1], coef[2]);
    if !(a > T::zero()) {
        return Err(Error::Degenerate("fitted fringe offset is not positive".into()));
    }
    let amp = (b * b + c * c).sqrt();
    let v = amp / a;
    let n = points.len() as u64;
    if !weighted {
        return Ok(Estimate::new(v, T::zero(), n));
    }
    // gradient of V w.r.t. (a, b, c), propagated through the fit covariance
    let g = if amp > T::zero() {
        [-v / a, b / (amp * a), c / (amp * a)]
    } else {
        [T::zero(), T::one() / a, T::zero()]
    };
    let mut var = T::zero();
    for i in 0..3 {
        for j in 0..3 {
            var += g[i] * inv[i][j] * g[j];
        }
    }
    Ok(Estimate::new(v, var.max(T::zero()).sqrt(), n))
}

/// Fringe of the exclusive coincidences between detector bits `as_bit` and
/// `s_bit` across the settings of a scan, weighted by Poisson variance.
pub fn fringe_from_counts(table: &CountsTable, as_bit: usize, s_bit: usize) -> Result<Estimate<f64>> {
    let pattern = (1 << as_bit) | (1 << s_bit);
    let points: Vec<FringePoint<f64>> = table
        .settings
        .iter()
        .map(|s| {
            let n = s.patterns[pattern] as f64;
            let trials = s.trials.max(1) as f64;
            FringePoint {
                theta: s.theta_s,
                value: n / trials,
                variance: n.max(1.0) / (trials * trials),
            }
        })
        .collect();
    fringe_visibility(&points)
}

fn invert3<T: Real>(m: [[T; 3]; 3]) -> Option<[[T; 3]; 3]> {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    let det = m[0][0] * adj[0][0] + m[0][1] * adj[1][0] + m[0][2] * adj[2][0];
    let scale = m.iter().flatten().fold(T::zero(), |acc, x| acc.max(x.abs()));
    if !(det.abs() > T::tol(1e-14) * scale * scale * scale) {
        return None;
    }
    Some(adj.map(|row| row.map(|x| x / det)))
}
