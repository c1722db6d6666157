//! Reproductions of the visibility, Bell and memory-decay figures, the
//! calibration of the memory and noise model against quoted endpoint values,
//! and the estimator pipeline shared by in-process runs and stored records.
//!
//! In analytic mode every value is exact and its `std_err` is the standard
//! error expected from `trials` gates per setting; sampled mode draws the
//! gates and reports the estimators' own errors.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::fock::{ClickTable, QuantumState};
use crate::measurement::{
    chsh_s, correlation_e, correlation_e_analytic, fringe_visibility, g2_estimator, violation_significance,
    visibility_from_g2, CountsTable, Estimate, COINCIDENCE_PATTERNS, FringePoint, SettingCounts, BELL_SETTINGS_DEG, CHSH_SIGNS,
};
use crate::montecarlo::{count_trials, RngSpec};
use crate::scalar::Real;
use crate::source::{
    analyzer_probabilities, build_atom_photon_state, chi_for_detection_rate, matched_pair_g2,
    retrieve, ChainParams, DecayShape, DetectorParams, MemoryParams, SourceParams, AS_MINUS, AS_PLUS, S_H, S_MINUS,
    S_PLUS, S_V,
};

mod calibrate;
pub use calibrate::{calibrate, Anchor, Anchors, Calibration, Residual};

/// `g²` below which the visibility `(g² - 1)/(g² + 1)` drops under `1/sqrt 2`.
pub const G2_BELL_THRESHOLD: f64 = 3.0 + 2.0 * SQRT_2;

/// Analyzer scan used for fringe visibility: `theta_AS = 45°`, `theta_S = k π / n`.
pub const FRINGE_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Analytic,
    Sampled,
}

/// How a result was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub mode: Mode,
    /// Master seed; `None` in analytic mode.
    pub seed: Option<u64>,
    pub trials_per_setting: u64,
}

/// Everything an experiment run needs besides its grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub mode: Mode,
    pub trials: u64,
    pub seed: u64,
}

impl RunSpec {
    pub fn analytic(trials: u64) -> Self {
        Self {
            mode: Mode::Analytic,
            trials,
            seed: 0,
        }
    }

    pub fn sampled(trials: u64, seed: u64) -> Self {
        Self {
            mode: Mode::Sampled,
            trials,
            seed,
        }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            mode: self.mode,
            seed: (self.mode == Mode::Sampled).then_some(self.seed),
            trials_per_setting: self.trials,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::OutOfRange {
                name: "trials",
                value: 0.0,
                expected: ">= 1",
            });
        }
        Ok(())
    }
}

/// Weighted straight-line fit `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit<T> {
    pub slope: T,
    pub intercept: T,
    /// Covariance of `(slope, intercept)`.
    pub covariance: [[T; 2]; 2],
    pub chi2: T,
    pub dof: usize,
}

impl<T: Real> LinearFit<T> {
    pub fn slope_err(&self) -> T {
        self.covariance[0][0].sqrt()
    }

    pub fn intercept_err(&self) -> T {
        self.covariance[1][1].sqrt()
    }

    pub fn eval(&self, x: T) -> T {
        self.intercept + self.slope * x
    }
}

/// Closed-form weighted least squares over `(x, y, sigma_y)` points.
pub fn fit_linear_weighted<T: Real>(points: &[(T, T, T)]) -> Result<LinearFit<T>> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "linear fit needs >= 2 points, got {}",
            points.len()
        )));
    }
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    for &(x, y, e) in points {
        if !(e > T::zero()) || !e.is_finite() {
            return Err(Error::OutOfRange {
                name: "sigma",
                value: e.to_f64_lossy(),
                expected: "> 0",
            });
        }
        let w = T::one() / (e * e);
        s += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let delta = s * sxx - sx * sx;
    if !(delta > T::tol(1e-13) * s * sxx) {
        return Err(Error::Degenerate("all fit abscissae coincide".into()));
    }
    let slope = (s * sxy - sx * sy) / delta;
    let intercept = (sxx * sy - sx * sxy) / delta;
    let chi2 = points.iter().fold(T::zero(), |acc, &(x, y, e)| {
        let r = (y - intercept - slope * x) / e;
        acc + r * r
    });
    Ok(LinearFit {
        slope,
        intercept,
        covariance: [[s / delta, -sx / delta], [-sx / delta, sxx / delta]],
        chi2,
        dof: points.len() - 2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Visibility,
    Bell,
    Decay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub x: f64,
    /// Per-arm excitation probability used at this point.
    pub chi: f64,
    pub estimates: BTreeMap<String, Estimate<f64>>,
    /// Bell scans: `S > 2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub above_classical: Option<bool>,
    /// Bell scans: `S - 2 >= 2 sigma`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub significant: Option<bool>,
}

impl SweepPoint {
    pub fn get(&self, name: &str) -> Option<&Estimate<f64>> {
        self.estimates.get(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kind: SweepKind,
    /// Name of the independent variable (`p_AS` or `tau_us`).
    pub variable: String,
    pub points: Vec<SweepPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<LinearFit<f64>>,
    /// Visibility: `p_AS` where V falls to `1/sqrt 2`. Decay: storage time where
    /// the matched `g²` falls below `3 + 2 sqrt 2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crossing: Option<f64>,
    pub provenance: Provenance,
}

impl SweepResult {
    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.x).collect()
    }

    pub fn series(&self, name: &str) -> Vec<Estimate<f64>> {
        self.points
            .iter()
            .map(|p| p.estimates.get(name).copied().unwrap_or(Estimate::exact(f64::NAN)))
            .collect()
    }
}

fn check_grid(grid: &[f64], name: &'static str, lo: f64, hi: f64) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Degenerate("empty grid".into()));
    }
    for &x in grid {
        check_range(name, x, lo, hi, "inside the sweep domain")?;
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Degenerate("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `n` evenly spaced points from `start` to `stop` inclusive.
pub fn linear_grid(start: f64, stop: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..steps)
            .map(|k| start + (stop - start) * k as f64 / (steps - 1) as f64)
            .collect(),
    }
}

/// Storage-time grid, 0.5 µs to 23 µs in 2.5 µs steps.
pub fn default_tau_grid() -> Vec<f64> {
    (0..10).map(|k| 0.5 + 2.5 * k as f64).collect()
}

/// Detection-rate grid, 1e-3 to 2e-2.
pub fn default_pas_grid() -> Vec<f64> {
    linear_grid(1e-3, 2e-2, 20)
}

pub fn bell_settings_rad() -> Vec<(f64, f64)> {
    BELL_SETTINGS_DEG
        .iter()
        .map(|(a, s)| (a.to_radians(), s.to_radians()))
        .collect()
}

pub fn fringe_settings_rad() -> Vec<(f64, f64)> {
    (0..FRINGE_POINTS)
        .map(|k| (FRAC_PI_4, k as f64 * PI / FRINGE_POINTS as f64))
        .collect()
}

/// One analyzer setting's data: sampled counts, or exact probabilities with
/// the gate count used to predict errors.
#[derive(Debug, Clone, Copy)]
pub enum SettingData<'a> {
    Counts(&'a SettingCounts),
    Exact {
        theta_as: f64,
        theta_s: f64,
        table: &'a ClickTable<f64>,
        trials: u64,
    },
}

impl SettingData<'_> {
    fn angles(&self) -> (f64, f64) {
        match self {
            SettingData::Counts(c) => (c.theta_as, c.theta_s),
            SettingData::Exact { theta_as, theta_s, .. } => (*theta_as, *theta_s),
        }
    }

    fn trials(&self) -> u64 {
        match self {
            SettingData::Counts(c) => c.trials,
            SettingData::Exact { trials, .. } => *trials,
        }
    }

    /// Probability (or frequency) that every detector in `mask` clicked.
    fn rate(&self, mask: usize) -> f64 {
        match self {
            SettingData::Counts(c) => c.all_clicked(mask) as f64 / c.trials.max(1) as f64,
            SettingData::Exact { table, .. } => table.all_clicked(mask),
        }
    }

    /// Probability (or frequency) of exactly `pattern`.
    fn pattern_rate(&self, pattern: usize) -> f64 {
        match self {
            SettingData::Counts(c) => c.patterns[pattern] as f64 / c.trials.max(1) as f64,
            SettingData::Exact { table, .. } => table.get(pattern),
        }
    }

    fn correlation(&self) -> Result<Estimate<f64>> {
        match self {
            SettingData::Counts(c) => correlation_e(c),
            SettingData::Exact { table, trials, .. } => {
                let e = correlation_e_analytic(table)?;
                let coinc: f64 = COINCIDENCE_PATTERNS.iter().map(|p| table.get(*p)).sum();
                let n = coinc * *trials as f64;
                Ok(Estimate::new(e, ((1.0 - e * e).max(0.0) / n).sqrt(), n.round() as u64))
            }
        }
    }

    fn g2(&self, a: usize, b: usize) -> Result<Estimate<f64>> {
        match self {
            SettingData::Counts(c) => g2_estimator(c.all_clicked(a | b), c.all_clicked(a), c.all_clicked(b), c.trials),
            SettingData::Exact { table, trials, .. } => {
                let (pa, pb, pj) = (table.all_clicked(a), table.all_clicked(b), table.all_clicked(a | b));
                if !(pa > 0.0 && pb > 0.0) {
                    return Err(Error::Undefined("zero singles probability".into()));
                }
                let n = *trials as f64;
                let g = pj / (pa * pb);
                let err = g * (1.0 / (pj * n) + 1.0 / (pa * n) + 1.0 / (pb * n)).sqrt();
                Ok(Estimate::new(g, err, (pj * n).round() as u64))
            }
        }
    }

    /// Heralded, background-subtracted retrieval `(P(S|AS) - P(S)) / (1 - P(S))`.
    fn heralded_retrieval(&self, herald: usize, stokes: usize) -> Result<Estimate<f64>> {
        let ph = self.rate(herald);
        if !(ph > 0.0) {
            return Err(Error::Undefined("no heralding clicks".into()));
        }
        let cond = self.rate(herald | stokes) / ph;
        let ps = self.rate(stokes);
        let eta = (cond - ps) / (1.0 - ps);
        let nh = ph * self.trials() as f64;
        let err = (cond * (1.0 - cond) / nh).max(0.0).sqrt() / (1.0 - ps);
        Ok(Estimate::new(eta, err, nh.round() as u64))
    }
}

fn noted<T>(notes: &mut Vec<String>, what: &str, r: Result<T>) -> Option<T> {
    r.map_err(|e| notes.push(format!("{what}: {e}"))).ok()
}

fn close(a: f64, b: f64) -> bool {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d) < 1e-9
}

/// Estimates recoverable from a set of settings. Fields are `None` when the
/// required settings are absent or the estimate is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    /// Per-detector anti-Stokes singles rate, averaged over all settings.
    pub p_as: Estimate<f64>,
    pub correlations: Vec<SettingCorrelation>,
    pub g2_matched: Option<Estimate<f64>>,
    pub g2_unmatched: Option<Estimate<f64>>,
    pub visibility_from_g2: Option<Estimate<f64>>,
    pub eta_retrieve: Option<Estimate<f64>>,
    pub fringe_visibility: Option<Estimate<f64>>,
    pub chsh_s: Option<Estimate<f64>>,
    pub sigma_violation: Option<f64>,
    /// Reasons estimates are missing.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingCorrelation {
    pub setting_id: u32,
    pub theta_as_deg: f64,
    pub theta_s_deg: f64,
    pub e: Option<Estimate<f64>>,
}

/// Applies every estimator the settings allow. `(0°, 0°)` yields g² and
/// heralded retrieval; the four Bell settings yield S; at least four
/// `theta_AS = 45°` settings yield the fringe visibility.
pub fn analyze(settings: &[(u32, SettingData<'_>)]) -> Analysis {
    let mut notes = Vec::new();
    let total: f64 = settings.iter().map(|(_, s)| s.trials() as f64).sum();
    let p_as_num: f64 = settings
        .iter()
        .map(|(_, s)| (s.rate(AS_PLUS) + s.rate(AS_MINUS)) / 2.0 * s.trials() as f64)
        .sum();
    let p = if total > 0.0 { p_as_num / total } else { 0.0 };
    let p_as = Estimate::new(p, (p * (1.0 - p) / (2.0 * total.max(1.0))).sqrt(), (2.0 * total) as u64);

    let correlations = settings
        .iter()
        .map(|(id, s)| {
            let (a, b) = s.angles();
            SettingCorrelation {
                setting_id: *id,
                theta_as_deg: a.to_degrees(),
                theta_s_deg: b.to_degrees(),
                e: s.correlation().ok(),
            }
        })
        .collect();

    let zero = settings.iter().find(|(_, s)| {
        let (a, b) = s.angles();
        close(a, 0.0) && close(b, 0.0)
    });
    let (mut g2_matched, mut g2_unmatched, mut eta_retrieve) = (None, None, None);
    match zero {
        Some((_, s)) => {
            g2_matched = noted(&mut notes, "g2", s.g2(AS_PLUS, S_MINUS));
            g2_unmatched = noted(&mut notes, "g2_unmatched", s.g2(AS_MINUS, S_MINUS));
            eta_retrieve = noted(&mut notes, "eta_retrieve", s.heralded_retrieval(AS_PLUS, S_MINUS));
        }
        None => notes.push("g2: no (0, 0) setting".into()),
    }
    let visibility_from_g2 = g2_matched.and_then(|g| visibility_from_g2(g).ok());

    let bell: Option<Vec<Estimate<f64>>> = bell_settings_rad()
        .iter()
        .map(|&(a, b)| {
            settings
                .iter()
                .find(|(_, s)| {
                    let (x, y) = s.angles();
                    close(x, a) && close(y, b)
                })
                .and_then(|(_, s)| s.correlation().ok())
        })
        .collect();
    let chsh = match bell {
        Some(e) => Some(chsh_s([e[0], e[1], e[2], e[3]], CHSH_SIGNS)),
        None => {
            notes.push("S: Bell settings missing or without coincidences".into());
            None
        }
    };
    let sigma_violation = chsh.and_then(|s| violation_significance(s).ok());

    let fringe: Vec<FringePoint<f64>> = settings
        .iter()
        .filter(|(_, s)| close(s.angles().0, FRAC_PI_4))
        .map(|(_, s)| {
            let n = s.trials().max(1) as f64;
            let r = s.pattern_rate(AS_PLUS | S_PLUS);
            FringePoint {
                theta: s.angles().1,
                value: r,
                variance: (r * n).max(1.0) / (n * n),
            }
        })
        .collect();
    let fringe_visibility = if fringe.len() >= 4 {
        noted(&mut notes, "fringe", fringe_visibility(&fringe))
    } else {
        notes.push("fringe: fewer than 4 settings at theta_AS = 45°".into());
        None
    };

    Analysis {
        p_as,
        correlations,
        g2_matched,
        g2_unmatched,
        visibility_from_g2,
        eta_retrieve,
        fringe_visibility,
        chsh_s: chsh,
        sigma_violation,
        notes,
    }
}

pub fn analyze_counts(table: &CountsTable) -> Analysis {
    let data: Vec<(u32, SettingData<'_>)> = table
        .settings
        .iter()
        .map(|s| (s.setting_id, SettingData::Counts(s)))
        .collect();
    analyze(&data)
}

/// Exact click tables for `settings` from one photonic state.
pub fn analytic_tables(chain: &ChainParams<f64>, state: &QuantumState<f64>, settings: &[(f64, f64)]) -> Result<Vec<ClickTable<f64>>> {
    settings.iter().map(|&(a, s)| chain.analyzer(state, a, s)).collect()
}

/// Data at `settings`, either exact or sampled under the determinism contract
/// (setting ids follow list order).
pub fn measure(
    chain: &ChainParams<f64>,
    state: &QuantumState<f64>,
    settings: &[(f64, f64)],
    run: &RunSpec,
) -> Result<Measured> {
    run.validate()?;
    let tables = analytic_tables(chain, state, settings)?;
    let counts = match run.mode {
        Mode::Analytic => None,
        Mode::Sampled => {
            let rng = RngSpec::new(run.seed);
            let settings = tables
                .iter()
                .zip(settings)
                .enumerate()
                .map(|(id, (t, &(a, s)))| count_trials(&t.probabilities, run.trials, id as u32, a, s, &rng))
                .collect::<Result<_>>()?;
            Some(CountsTable { settings })
        }
    };
    Ok(Measured {
        settings: settings.to_vec(),
        tables,
        counts,
        trials: run.trials,
    })
}

/// Output of [`measure`].
#[derive(Debug, Clone)]
pub struct Measured {
    pub settings: Vec<(f64, f64)>,
    pub tables: Vec<ClickTable<f64>>,
    pub counts: Option<CountsTable>,
    pub trials: u64,
}

impl Measured {
    pub fn analysis(&self) -> Analysis {
        match &self.counts {
            Some(c) => analyze_counts(c),
            None => {
                let data: Vec<(u32, SettingData<'_>)> = self
                    .tables
                    .iter()
                    .zip(&self.settings)
                    .enumerate()
                    .map(|(id, (t, &(a, s)))| {
                        (
                            id as u32,
                            SettingData::Exact {
                                theta_as: a,
                                theta_s: s,
                                table: t,
                                trials: self.trials,
                            },
                        )
                    })
                    .collect();
                analyze(&data)
            }
        }
    }
}

/// Chain with both arms excited so each anti-Stokes detector clicks with `p_as`.
pub fn chain_at_rate(chain: &ChainParams<f64>, p_as: f64) -> Result<ChainParams<f64>> {
    let chi = chi_for_detection_rate(p_as, chain.detector.eta_as, chain.detector.dark_prob)?;
    let mut out = *chain;
    out.source.chi_l = chi;
    out.source.chi_r = chi;
    out.validate()?;
    Ok(out)
}

/// Fringe visibility against the anti-Stokes detection rate at storage
/// time `tau_us`. The straight-line fit uses the small-excitation points
/// (`chi <= 0.05`, where the linear law applies); the `1/sqrt 2` crossing is
/// interpolated on the full curve.
pub fn sweep_visibility_vs_pas(chain: &ChainParams<f64>, tau_us: f64, grid: &[f64], run: &RunSpec) -> Result<SweepResult> {
    check_grid(grid, "p_AS", f64::MIN_POSITIVE, chain.detector.eta_as)?;
    let settings = fringe_settings_rad();
    let mut points = Vec::with_capacity(grid.len());
    for &p in grid {
        let ch = chain_at_rate(chain, p)?;
        let state = ch.photon_state(tau_us)?;
        let m = measure(&ch, &state, &settings, run)?;
        let a = m.analysis();
        let v = a
            .fringe_visibility
            .ok_or_else(|| Error::Degenerate(format!("no fringe at p_AS = {p}: {:?}", a.notes)))?;
        let mut estimates = BTreeMap::new();
        estimates.insert("V".to_string(), v);
        estimates.insert("p_AS".to_string(), a.p_as);
        points.push(SweepPoint {
            x: p,
            chi: ch.source.chi_l,
            estimates,
            above_classical: None,
            significant: None,
        });
    }
    let fit_points: Vec<(f64, f64, f64)> = points
        .iter()
        .filter(|pt| pt.chi <= SMALL_EXCITATION)
        .map(|pt| {
            let v = pt.estimates["V"];
            (pt.x, v.value, v.std_err.max(1e-12))
        })
        .collect();
    let fit = fit_linear_weighted(&fit_points).ok();
    let crossing = first_crossing(&points, "V", FRAC_1_SQRT_2);
    Ok(SweepResult {
        kind: SweepKind::Visibility,
        variable: "p_AS".into(),
        points,
        fit,
        crossing,
        provenance: run.provenance(),
    })
}

/// Excitation probability up to which the linear visibility law is fitted.
pub const SMALL_EXCITATION: f64 = 0.05;

fn first_crossing(points: &[SweepPoint], name: &str, level: f64) -> Option<f64> {
    points.windows(2).find_map(|w| {
        let (y0, y1) = (w[0].estimates[name].value, w[1].estimates[name].value);
        (y0 >= level && y1 < level).then(|| w[0].x + (y0 - level) / (y0 - y1) * (w[1].x - w[0].x))
    })
}

/// CHSH S at the four settings for each storage time.
pub fn scan_bell_vs_tau(chain: &ChainParams<f64>, grid: &[f64], settings: &[(f64, f64)], run: &RunSpec) -> Result<SweepResult> {
    check_grid(grid, "tau", 0.0, f64::INFINITY)?;
    if settings.len() != 4 {
        return Err(Error::InvalidRegister("a CHSH scan needs exactly four settings".into()));
    }
    chain.validate()?;
    let mut points = Vec::with_capacity(grid.len());
    for &tau in grid {
        let state = chain.photon_state(tau)?;
        let m = measure(chain, &state, settings, run)?;
        let a = m.analysis();
        let e: Vec<Estimate<f64>> = (0..4)
            .map(|k| {
                a.correlations[k]
                    .e
                    .ok_or_else(|| Error::Undefined(format!("no coincidences at setting {k}, tau = {tau}")))
            })
            .collect::<Result<_>>()?;
        let s = chsh_s([e[0], e[1], e[2], e[3]], CHSH_SIGNS);
        let mut estimates = BTreeMap::new();
        estimates.insert("S".to_string(), s);
        for (k, e) in e.iter().enumerate() {
            estimates.insert(format!("E{}{}", k / 2 + 1, k % 2 + 1), *e);
        }
        let sig = violation_significance(s).ok();
        points.push(SweepPoint {
            x: tau,
            chi: chain.source.chi_l,
            estimates,
            above_classical: Some(s.value > 2.0),
            significant: Some(sig.is_some_and(|z| z >= 2.0)),
        });
    }
    Ok(SweepResult {
        kind: SweepKind::Bell,
        variable: "tau_us".into(),
        points,
        fit: None,
        crossing: None,
        provenance: run.provenance(),
    })
}

/// Overall retrieval efficiency and matched g² against storage time at
/// the chain's fixed excitation. Analytic mode reports the model efficiency
/// `eta_r(tau) eta_S`; sampled mode the heralded estimator at `(0°, 0°)`.
pub fn scan_retrieval_g2_vs_tau(chain: &ChainParams<f64>, grid: &[f64], run: &RunSpec) -> Result<SweepResult> {
    check_grid(grid, "tau", 0.0, f64::INFINITY)?;
    chain.validate()?;
    run.validate()?;
    let mut points = Vec::with_capacity(grid.len());
    for &tau in grid {
        let (eta, g2) = match run.mode {
            Mode::Analytic => analytic_decay_point(chain, tau, run.trials)?,
            Mode::Sampled => {
                let state = chain.photon_state(tau)?;
                let m = measure(chain, &state, &[(0.0, 0.0)], run)?;
                let a = m.analysis();
                let undefined = |what: &str| Error::Undefined(format!("{what} at tau = {tau}: {:?}", a.notes));
                (
                    a.eta_retrieve.ok_or_else(|| undefined("retrieval"))?,
                    a.g2_matched.ok_or_else(|| undefined("g2"))?,
                )
            }
        };
        let mut estimates = BTreeMap::new();
        estimates.insert("eta_retrieve".to_string(), eta);
        estimates.insert("g2".to_string(), g2);
        points.push(SweepPoint {
            x: tau,
            chi: chain.source.chi_l,
            estimates,
            above_classical: None,
            significant: None,
        });
    }
    let crossing = g2_threshold_crossing(chain, G2_BELL_THRESHOLD, 0.0, 200.0).ok().flatten();
    Ok(SweepResult {
        kind: SweepKind::Decay,
        variable: "tau_us".into(),
        points,
        fit: None,
        crossing,
        provenance: run.provenance(),
    })
}

/// Model retrieval efficiency and matched g² with the errors expected from
/// `trials` gates (reduced one-arm model, no four-mode state needed).
fn analytic_decay_point(chain: &ChainParams<f64>, tau: f64, trials: u64) -> Result<(Estimate<f64>, Estimate<f64>)> {
    let eta = chain.overall_retrieval(tau);
    let chi = chain.source.chi_l;
    let n = trials as f64;
    let p_as = crate::source::detection_rate_for_chi(chi, chain.detector.eta_as, chain.detector.dark_prob);
    let heralds = p_as * n;
    let eta_err = (eta * (1.0 - eta) / heralds).sqrt();
    let g2 = matched_pair_g2(chain, tau)?;
    let b = chain.stokes_background()?;
    let p_s = 1.0 - (1.0 - chain.detector.dark_prob) * (1.0 - b) * (1.0 - chi) / (1.0 - chi * (1.0 - eta));
    let joint = g2 * p_as * p_s;
    let g2_err = g2 * (1.0 / (joint * n) + 1.0 / heralds + 1.0 / (p_s * n)).sqrt();
    Ok((
        Estimate::new(eta, eta_err, heralds.round() as u64),
        Estimate::new(g2, g2_err, (joint * n).round() as u64),
    ))
}

/// First storage time in `[lo, hi]` where the matched g² falls below `level`,
/// by bisection on the monotone model. `None` if it never does.
pub fn g2_threshold_crossing(chain: &ChainParams<f64>, level: f64, lo: f64, hi: f64) -> Result<Option<f64>> {
    let f = |t: f64| matched_pair_g2(chain, t).map(|g| g - level);
    if f(lo)? < 0.0 {
        return Ok(Some(lo));
    }
    if f(hi)? >= 0.0 {
        return Ok(None);
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        if f(m)? >= 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(Some(0.5 * (a + b)))
}

/// Exact CHSH S at `settings` from a photonic state.
pub fn analytic_chsh(chain: &ChainParams<f64>, state: &QuantumState<f64>, settings: &[(f64, f64)]) -> Result<f64> {
    let e: Vec<f64> = analytic_tables(chain, state, settings)?
        .iter()
        .map(correlation_e_analytic)
        .collect::<Result<_>>()?;
    Ok(CHSH_SIGNS.combine([e[0], e[1], e[2], e[3]]))
}

/// Photonic state at storage time `tau_us` with spin dephasing left out; the
/// dephasing of the two Stokes modes can be applied afterwards, since it
/// commutes with relabeling, loss and phase shifts.
pub(crate) fn undephased_photon_state(chain: &ChainParams<f64>, tau_us: f64) -> Result<QuantumState<f64>> {
    let atom = build_atom_photon_state(&chain.source, chain.n_max)?;
    retrieve(&atom, tau_us, chain.source.phi2, &chain.memory, &chain.detector)
}

/// Bell-setting click tables of an undephased photonic state, split by Stokes
/// coherence order so that dephasing both Stokes modes by `kappa` is a
/// polynomial in `1 - kappa` over the components.
pub(crate) struct DephasingExpansion {
    /// `tables[k][setting]` pattern probabilities of component `k`.
    tables: Vec<Vec<Vec<f64>>>,
}

impl DephasingExpansion {
    pub(crate) fn new(det: &DetectorParams<f64>, b: f64, state: &QuantumState<f64>) -> Result<Self> {
        let max_order = 2 * state.register().n_max();
        let settings = bell_settings_rad();
        let tables = (0..=max_order)
            .map(|k| {
                let part = state.coherence_component(&[S_H, S_V], k)?;
                settings
                    .iter()
                    .map(|&(a, t)| Ok(analyzer_probabilities(&part, a, t, det, b)?.probabilities))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self { tables })
    }

    /// CHSH S after dephasing both Stokes modes by `kappa`.
    pub(crate) fn chsh(&self, kappa: f64) -> Result<f64> {
        let keep = 1.0 - kappa;
        let e: Vec<f64> = (0..4)
            .map(|s| {
                let mut probabilities = vec![0.0; 16];
                let mut w = 1.0;
                for comp in &self.tables {
                    for (p, q) in probabilities.iter_mut().zip(&comp[s]) {
                        *p += w * q;
                    }
                    w *= keep;
                }
                correlation_e_analytic(&ClickTable {
                    detectors: Vec::new(),
                    probabilities,
                })
            })
            .collect::<Result<_>>()?;
        Ok(CHSH_SIGNS.combine([e[0], e[1], e[2], e[3]]))
    }
}

/// Default chain shipped with the tool: the reference operating point with the
/// calibrated memory and noise model.
pub fn reference_chain() -> ChainParams<f64> {
    let eta_as = 0.08;
    ChainParams {
        source: SourceParams {
            mode_overlap: 0.95,
            ..SourceParams::symmetric(chi_for_detection_rate(2e-3, eta_as, 0.0).expect("valid operating point"))
        },
        memory: MemoryParams {
            eta_r0: REFERENCE_ETA_R0,
            shape: DecayShape::Gaussian,
            t_us: REFERENCE_T_US,
            dephase_t_us: REFERENCE_DEPHASE_T_US,
        },
        detector: DetectorParams {
            eta_as,
            eta_s: REFERENCE_ETA_S,
            dark_prob: 0.0,
            stokes_noise_ratio: REFERENCE_STOKES_NOISE_RATIO,
        },
        n_max: crate::source::DEFAULT_N_MAX,
    }
}

// Output of `calibrate(&Anchors::reference())`, frozen; a test keeps them in sync.
pub const REFERENCE_ETA_S: f64 = 0.25;
pub const REFERENCE_ETA_R0: f64 = 0.48849783325534896;
pub const REFERENCE_T_US: f64 = 15.658446672585605;
pub const REFERENCE_DEPHASE_T_US: f64 = 96.3785936057051;
pub const REFERENCE_STOKES_NOISE_RATIO: f64 = 0.08183967048951693;
