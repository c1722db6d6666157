//! Fitting the memory and noise model to quoted endpoint values.

use serde::{Deserialize, Serialize};

use super::{fit_linear_weighted, undephased_photon_state, DephasingExpansion};
use crate::error::{check_range, Error, Result};
use crate::source::{
    chi_for_detection_rate, matched_pair_g2, ChainParams, DecayShape, DetectorParams, MemoryParams, SourceParams,
    DEFAULT_N_MAX,
};

/// A quoted value at one storage time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchor {
    pub tau_us: f64,
    pub value: f64,
    pub err: f64,
}

/// Endpoint values and the fixed operating point they were taken at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchors {
    pub schema: u32,
    /// Per-detector anti-Stokes detection rate held during the measurements.
    pub p_as: f64,
    pub eta_as: f64,
    /// Stokes channel efficiency outside the memory; fixes the split of the
    /// fitted overall retrieval into `eta_r0 * eta_S`.
    pub eta_s: f64,
    #[serde(default)]
    pub dark_prob: f64,
    #[serde(default = "default_shape")]
    pub shape: DecayShape,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// Fringe visibility as the detection rate goes to zero.
    pub visibility_intercept: f64,
    /// Overall Stokes retrieval efficiency `eta_r(tau) eta_S`.
    pub retrieval: Vec<Anchor>,
    pub g2: Vec<Anchor>,
    pub bell: Vec<Anchor>,
}

fn default_shape() -> DecayShape {
    DecayShape::Gaussian
}

fn default_n_max() -> usize {
    DEFAULT_N_MAX
}

impl Anchors {
    /// The quoted values of the reference experiment.
    pub fn reference() -> Self {
        let a = |tau_us, value, err| Anchor { tau_us, value, err };
        Self {
            schema: 1,
            p_as: 2e-3,
            eta_as: 0.08,
            eta_s: 0.25,
            dark_prob: 0.0,
            shape: DecayShape::Gaussian,
            n_max: DEFAULT_N_MAX,
            visibility_intercept: 0.95,
            retrieval: vec![a(0.5, 0.122, 0.004), a(20.5, 0.022, 0.001)],
            g2: vec![a(0.5, 38.0, 1.0), a(20.5, 9.8, 0.7)],
            bell: vec![a(0.5, 2.60, 0.03), a(20.5, 2.17, 0.07)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != 1 {
            return Err(Error::OutOfRange {
                name: "schema",
                value: self.schema as f64,
                expected: "1",
            });
        }
        check_range("eta_AS", self.eta_as, f64::MIN_POSITIVE, 1.0, "(0, 1]")?;
        check_range("eta_S", self.eta_s, f64::MIN_POSITIVE, 1.0, "(0, 1]")?;
        check_range("dark_prob", self.dark_prob, 0.0, 1.0 - f64::EPSILON, "[0, 1)")?;
        check_range("p_AS", self.p_as, f64::MIN_POSITIVE, self.eta_as, "(0, eta_AS]")?;
        check_range("visibility_intercept", self.visibility_intercept, f64::MIN_POSITIVE, 1.0, "(0, 1]")?;
        let need = |list: &[Anchor], n: usize, what: &str| -> Result<()> {
            if list.len() < n {
                return Err(Error::InsufficientData(format!(
                    "{what}: need >= {n} anchors, got {}",
                    list.len()
                )));
            }
            for a in list {
                check_range("anchor tau_us", a.tau_us, 0.0, f64::INFINITY, ">= 0")?;
                check_range("anchor err", a.err, f64::MIN_POSITIVE, f64::INFINITY, "> 0")?;
                check_range("anchor value", a.value, f64::MIN_POSITIVE, f64::INFINITY, "> 0")?;
            }
            Ok(())
        };
        need(&self.retrieval, 2, "retrieval")?;
        need(&self.g2, 2, "g2")?;
        need(&self.bell, 1, "bell")?;
        Ok(())
    }
}

/// Model value against an anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub quantity: String,
    pub tau_us: f64,
    pub target: f64,
    pub err: f64,
    pub model: f64,
    /// `(model - target) / err`.
    pub pull: f64,
}

impl Residual {
    fn new(quantity: &str, a: &Anchor, model: f64) -> Self {
        Self {
            quantity: quantity.into(),
            tau_us: a.tau_us,
            target: a.value,
            err: a.err,
            model,
            pull: (model - a.value) / a.err,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Per-arm excitation probability giving the anchored detection rate.
    pub chi: f64,
    pub memory: MemoryParams<f64>,
    pub eta_as: f64,
    pub eta_s: f64,
    pub dark_prob: f64,
    /// Fitted `eta_r0 * eta_S`.
    pub retrieval_product: f64,
    /// Stokes background per unit excitation probability.
    pub stokes_noise_ratio: f64,
    /// Resulting Stokes background click probability at `chi`.
    pub stokes_background: f64,
    /// Intrinsic visibility (overlap and phase jitter lumped into the overlap).
    pub v0: f64,
    pub n_max: usize,
    pub residuals: Vec<Residual>,
}

impl Calibration {
    pub fn chain(&self) -> ChainParams<f64> {
        ChainParams {
            source: SourceParams {
                mode_overlap: self.v0,
                ..SourceParams::symmetric(self.chi)
            },
            memory: self.memory,
            detector: DetectorParams {
                eta_as: self.eta_as,
                eta_s: self.eta_s,
                dark_prob: self.dark_prob,
                stokes_noise_ratio: self.stokes_noise_ratio,
            },
            n_max: self.n_max,
        }
    }
}

/// Upper limit on fitted spin-coherence times (µs), standing in for "no dephasing".
pub const DEPHASE_T_CAP_US: f64 = 1e6;

/// Fits, in order:
/// 1. `chi` from the detection rate;
/// 2. the retrieval decay constant and `eta_r0 eta_S` by weighted least
///    squares of `ln eta` against `tau²` (gaussian) or `tau` (exponential);
/// 3. the Stokes noise ratio by bisection so the matched g² meets the
///    longest-storage g² anchor, where the background matters most;
/// 4. the spin-coherence time by golden-section weighted least squares on the
///    Bell anchors.
///
/// `V0` is taken directly from the visibility intercept.
pub fn calibrate(anchors: &Anchors) -> Result<Calibration> {
    anchors.validate()?;
    let chi = chi_for_detection_rate(anchors.p_as, anchors.eta_as, anchors.dark_prob)?;
    if chi <= 0.0 {
        return Err(Error::Infeasible("detection rate is fully explained by dark counts".into()));
    }

    let gaussian = anchors.shape == DecayShape::Gaussian;
    let lin: Vec<(f64, f64, f64)> = anchors
        .retrieval
        .iter()
        .map(|a| {
            let x = if gaussian { a.tau_us * a.tau_us } else { a.tau_us };
            (x, a.value.ln(), a.err / a.value)
        })
        .collect();
    let fit = fit_linear_weighted(&lin).map_err(|e| match e {
        Error::Degenerate(_) => Error::Infeasible("retrieval anchors share one storage time".into()),
        other => other,
    })?;
    if !(fit.slope < 0.0) {
        return Err(Error::Infeasible(
            "retrieval anchors do not decrease with storage time".into(),
        ));
    }
    let t_us = if gaussian { (-1.0 / fit.slope).sqrt() } else { -1.0 / fit.slope };
    let product = fit.intercept.exp();
    if product > 1.0 {
        return Err(Error::Infeasible(format!("fitted retrieval product {product} exceeds 1")));
    }
    let eta_r0 = product / anchors.eta_s;
    if eta_r0 > 1.0 {
        return Err(Error::Infeasible(format!(
            "eta_r0 = {eta_r0} > 1 for eta_S = {}; raise eta_S",
            anchors.eta_s
        )));
    }

    let mut cal = Calibration {
        chi,
        memory: MemoryParams {
            eta_r0,
            shape: anchors.shape,
            t_us,
            dephase_t_us: DEPHASE_T_CAP_US,
        },
        eta_as: anchors.eta_as,
        eta_s: anchors.eta_s,
        dark_prob: anchors.dark_prob,
        retrieval_product: product,
        stokes_noise_ratio: 0.0,
        stokes_background: 0.0,
        v0: anchors.visibility_intercept,
        n_max: anchors.n_max,
        residuals: Vec::new(),
    };

    let g2_anchor = *anchors
        .g2
        .iter()
        .max_by(|a, b| a.tau_us.total_cmp(&b.tau_us))
        .expect("validated non-empty");
    let g2_at = |ratio: f64| {
        let mut ch = cal.chain();
        ch.detector.stokes_noise_ratio = ratio;
        matched_pair_g2(&ch, g2_anchor.tau_us)
    };
    let noiseless = g2_at(0.0)?;
    if noiseless < g2_anchor.value {
        return Err(Error::Infeasible(format!(
            "g2 anchor {} at {} us exceeds the noiseless model value {noiseless}",
            g2_anchor.value, g2_anchor.tau_us
        )));
    }
    let (mut lo, mut hi) = (0.0, (1.0 - 1e-9) / chi);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if g2_at(mid)? > g2_anchor.value {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    cal.stokes_noise_ratio = 0.5 * (lo + hi);
    cal.stokes_background = cal.stokes_noise_ratio * chi;

    let bell_model = fit_dephasing(&mut cal, &anchors.bell)?;

    let ch = cal.chain();
    let mut residuals: Vec<Residual> = anchors
        .retrieval
        .iter()
        .map(|a| Residual::new("eta_retrieve", a, ch.overall_retrieval(a.tau_us)))
        .collect();
    for a in &anchors.g2 {
        residuals.push(Residual::new("g2", a, matched_pair_g2(&ch, a.tau_us)?));
    }
    for (a, s) in anchors.bell.iter().zip(bell_model) {
        residuals.push(Residual::new("S", a, s));
    }
    cal.residuals = residuals;
    Ok(cal)
}

/// Golden-section search over the dephasing rate `1/T_d²` (gaussian) or
/// `1/T_d` (exponential), minimizing the weighted squared S residuals.
/// Returns the model S at each anchor.
fn fit_dephasing(cal: &mut Calibration, bell: &[Anchor]) -> Result<Vec<f64>> {
    let ch = cal.chain();
    let b = ch.stokes_background()?;
    let gaussian = cal.memory.shape == DecayShape::Gaussian;
    let expansions: Vec<DephasingExpansion> = bell
        .iter()
        .map(|a| DephasingExpansion::new(&ch.detector, b, &undephased_photon_state(&ch, a.tau_us)?))
        .collect::<Result<_>>()?;
    let kappa = |rate: f64, tau: f64| {
        if gaussian {
            1.0 - (-rate * tau * tau).exp()
        } else {
            1.0 - (-rate * tau).exp()
        }
    };
    let cost = |rate: f64| -> Result<f64> {
        bell.iter().zip(&expansions).try_fold(0.0, |acc, (a, x)| {
            let model = x.chsh(kappa(rate, a.tau_us))?;
            let r = (model - a.value) / a.err;
            Ok(acc + r * r)
        })
    };
    let tau_max = bell.iter().map(|a| a.tau_us).fold(0.0, f64::max).max(1e-3);
    // rate at which the longest anchor is already fully dephased
    let hi_rate = if gaussian { 20.0 / (tau_max * tau_max) } else { 20.0 / tau_max };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut bnd) = (0.0, hi_rate);
    let mut c = bnd - inv_phi * (bnd - a);
    let mut d = a + inv_phi * (bnd - a);
    let (mut fc, mut fd) = (cost(c)?, cost(d)?);
    for _ in 0..60 {
        if fc <= fd {
            bnd = d;
            d = c;
            fd = fc;
            c = bnd - inv_phi * (bnd - a);
            fc = cost(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (bnd - a);
            fd = cost(d)?;
        }
        if bnd - a < 1e-12 * hi_rate {
            break;
        }
    }
    let mut rate = 0.5 * (a + bnd);
    if cost(0.0)? <= cost(rate)? {
        rate = 0.0;
    }
    let t = if rate <= 0.0 {
        DEPHASE_T_CAP_US
    } else if gaussian {
        (1.0 / rate).sqrt()
    } else {
        1.0 / rate
    };
    cal.memory.dephase_t_us = t.min(DEPHASE_T_CAP_US);
    bell.iter()
        .zip(&expansions)
        .map(|(a, x)| x.chsh(cal.memory.dephasing(a.tau_us)))
        .collect()
}
