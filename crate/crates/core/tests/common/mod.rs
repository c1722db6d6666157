//! Randomized chain configurations shared by the property and acceptance suites.

#![allow(dead_code)]

use std::f64::consts::PI;

use apsim::montecarlo::RngSpec;
use apsim::source::{ChainParams, DecayShape, DetectorParams, MemoryParams, SourceParams};

/// Counter-based uniform stream over one setting id of an [`RngSpec`].
pub struct Draws {
    rng: RngSpec,
    stream: u32,
    next: u64,
}

impl Draws {
    pub fn new(seed: u64, stream: u32) -> Self {
        Self {
            rng: RngSpec::new(seed),
            stream,
            next: 0,
        }
    }

    pub fn unit(&mut self) -> f64 {
        self.next += 1;
        self.rng.uniform(self.stream, self.next)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn angle(&mut self) -> f64 {
        self.range(-PI, PI)
    }
}

/// Any valid chain: every knob drawn over its physical range, detection
/// efficiencies in `[0.01, eta_max]`, truncation 2 or 3. Returns the chain
/// and a storage time.
pub fn random_chain(d: &mut Draws, eta_max: f64) -> (ChainParams<f64>, f64) {
    let chain = ChainParams {
        source: SourceParams {
            chi_l: d.range(0.0, 0.3),
            chi_r: d.range(0.0, 0.3),
            phi1: d.angle(),
            phi2: d.angle(),
            phase_jitter_sigma: d.range(0.0, 1.0),
            mode_overlap: d.unit(),
        },
        memory: MemoryParams {
            eta_r0: d.unit(),
            shape: if d.unit() < 0.5 {
                DecayShape::Gaussian
            } else {
                DecayShape::Exponential
            },
            t_us: d.range(1.0, 100.0),
            dephase_t_us: d.range(1.0, 1000.0),
        },
        detector: DetectorParams {
            eta_as: d.range(0.01, eta_max),
            eta_s: d.range(0.01, eta_max),
            dark_prob: d.range(0.0, 0.01),
            stokes_noise_ratio: d.unit(),
        },
        n_max: if d.unit() < 0.5 { 2 } else { 3 },
    };
    let tau = d.range(0.0, 30.0);
    (chain, tau)
}

/// A noiseless, perfectly overlapping chain at zero storage time with
/// efficiencies near `eta_max`: the corner where CHSH values are largest.
pub fn clean_chain(d: &mut Draws, eta_max: f64) -> (ChainParams<f64>, f64) {
    let (mut chain, _) = random_chain(d, eta_max);
    chain.source.phi1 = 0.0;
    chain.source.phi2 = 0.0;
    chain.source.phase_jitter_sigma = 0.0;
    chain.source.mode_overlap = 1.0;
    chain.memory.eta_r0 = 1.0;
    chain.memory.dephase_t_us = 1e6;
    chain.detector.dark_prob = 0.0;
    chain.detector.stokes_noise_ratio = 0.0;
    chain.detector.eta_as = eta_max * d.range(0.7, 1.0);
    chain.detector.eta_s = eta_max * d.range(0.7, 1.0);
    (chain, 0.0)
}

/// CHSH settings `(a1, b1), (a1, b2), (a2, b1), (a2, b2)`: uniformly random,
/// or (`near_optimal`) the Bell settings perturbed by up to 0.05 rad.
pub fn random_settings(d: &mut Draws, near_optimal: bool) -> [(f64, f64); 4] {
    let [a1, a2, b1, b2] = if near_optimal {
        [0.0, PI / 4.0, PI / 8.0, -PI / 8.0].map(|x| x + d.range(-0.05, 0.05))
    } else {
        std::array::from_fn(|_| d.angle())
    };
    [(a1, b1), (a1, b2), (a2, b1), (a2, b2)]
}
