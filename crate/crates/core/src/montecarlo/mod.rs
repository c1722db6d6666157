//! Seeded click sampling from analytic pattern distributions.
//!
//! Every trial owns a fixed position in a ChaCha8 keystream: the master seed
//! selects the key, the setting id the stream, and trial `i` reads the 64-bit
//! word pair starting at word `2 i`. Draws are therefore a pure function of
//! `(master_seed, setting_id, trial_index)`, whatever the chunking or thread count.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::{CountsTable, SettingCounts};
use crate::source::ChainParams;

const CHUNK: u64 = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSpec {
    pub master_seed: u64,
}

impl RngSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    fn positioned(&self, setting_id: u32, trial_index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(setting_id as u64);
        rng.set_word_pos(trial_index as u128 * 2);
        rng
    }

    /// Uniform draw in [0, 1) owned by one trial.
    pub fn uniform(&self, setting_id: u32, trial_index: u64) -> f64 {
        to_unit(self.positioned(setting_id, trial_index).next_u64())
    }

    /// Draws of trials `start .. start + len`, identical to calling [`Self::uniform`] on each.
    fn block(&self, setting_id: u32, start: u64, len: u64) -> impl Iterator<Item = f64> {
        let mut rng = self.positioned(setting_id, start);
        (0..len).map(move |_| to_unit(rng.next_u64()))
    }
}

fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub trial_index: u64,
    pub setting_id: u32,
    /// Bits: AS+, AS-, S+, S-.
    pub pattern: u8,
}

/// Cumulative table for inverse-CDF lookup over the 16 patterns.
#[derive(Debug, Clone)]
struct Sampler {
    cdf: [f64; 16],
}

impl Sampler {
    fn new(dist: &[f64]) -> Result<Self> {
        if dist.len() != 16 {
            return Err(Error::MalformedDistribution(format!(
                "expected 16 pattern probabilities, got {}",
                dist.len()
            )));
        }
        if let Some(p) = dist.iter().find(|p| !(**p >= -1e-12)) {
            return Err(Error::MalformedDistribution(format!("negative probability {p}")));
        }
        let total: f64 = dist.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::MalformedDistribution(format!(
                "probabilities sum to {total}, expected 1 within 1e-9"
            )));
        }
        let mut cdf = [0.0; 16];
        let mut acc = 0.0;
        for (c, p) in cdf.iter_mut().zip(dist) {
            acc += p.max(0.0) / total;
            *c = acc;
        }
        // the last non-empty pattern absorbs rounding so every draw lands somewhere
        let last = dist.iter().rposition(|p| *p > 0.0).unwrap_or(0);
        for c in cdf.iter_mut().skip(last) {
            *c = f64::INFINITY;
        }
        Ok(Self { cdf })
    }

    fn pattern(&self, u: f64) -> u8 {
        self.cdf.iter().position(|c| u < *c).unwrap_or(15) as u8
    }
}

fn chunks(n: u64) -> impl IndexedParallelIterator<Item = (u64, u64)> {
    let count = usize::try_from(n.div_ceil(CHUNK)).expect("trial count fits the address space");
    (0..count).into_par_iter().map(move |k| {
        let start = k as u64 * CHUNK;
        (start, CHUNK.min(n - start))
    })
}

/// All `n` trial records of one setting, ordered by trial index.
pub fn sample_trials(dist: &[f64], n: u64, setting_id: u32, rng: &RngSpec) -> Result<Vec<ClickRecord>> {
    sample_filtered(dist, n, setting_id, rng, |_| true)
}

/// Only the trials in which at least one detector clicked.
pub fn sample_clicks(dist: &[f64], n: u64, setting_id: u32, rng: &RngSpec) -> Result<Vec<ClickRecord>> {
    sample_filtered(dist, n, setting_id, rng, |p| p != 0)
}

fn sample_filtered<F>(dist: &[f64], n: u64, setting_id: u32, rng: &RngSpec, keep: F) -> Result<Vec<ClickRecord>>
where
    F: Fn(u8) -> bool + Sync,
{
    let sampler = Sampler::new(dist)?;
    let parts: Vec<Vec<ClickRecord>> = chunks(n)
        .map(|(start, len)| {
            rng.block(setting_id, start, len)
                .enumerate()
                .filter_map(|(i, u)| {
                    let pattern = sampler.pattern(u);
                    keep(pattern).then_some(ClickRecord {
                        trial_index: start + i as u64,
                        setting_id,
                        pattern,
                    })
                })
                .collect()
        })
        .collect();
    Ok(parts.concat())
}

/// Pattern histogram of `n` trials; equal to histogramming [`sample_trials`].
pub fn count_trials(
    dist: &[f64],
    n: u64,
    setting_id: u32,
    theta_as: f64,
    theta_s: f64,
    rng: &RngSpec,
) -> Result<SettingCounts> {
    let sampler = Sampler::new(dist)?;
    let patterns = chunks(n)
        .map(|(start, len)| {
            let mut h = [0u64; 16];
            for u in rng.block(setting_id, start, len) {
                h[sampler.pattern(u) as usize] += 1;
            }
            h
        })
        .reduce(
            || [0u64; 16],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(SettingCounts {
        setting_id,
        theta_as,
        theta_s,
        trials: n,
        patterns,
    })
}

/// Histograms click records into per-setting counts. `settings` supplies
/// `(setting_id, theta_AS, theta_S, trials)`; records whose pattern is 0 may
/// be absent, the silent bin is rebuilt from the trial total.
pub fn tabulate(records: &[ClickRecord], settings: &[(u32, f64, f64, u64)]) -> Result<CountsTable> {
    let mut table = CountsTable {
        settings: settings
            .iter()
            .map(|&(id, a, s, n)| SettingCounts {
                trials: n,
                ..SettingCounts::new(id, a, s)
            })
            .collect(),
    };
    for r in records {
        let slot = table
            .settings
            .iter_mut()
            .find(|s| s.setting_id == r.setting_id)
            .ok_or_else(|| Error::MalformedDistribution(format!("record for unknown setting {}", r.setting_id)))?;
        if r.pattern > 15 {
            return Err(Error::MalformedDistribution(format!("pattern {} outside 0..16", r.pattern)));
        }
        if r.trial_index >= slot.trials {
            return Err(Error::MalformedDistribution(format!(
                "trial index {} beyond {} trials of setting {}",
                r.trial_index, slot.trials, r.setting_id
            )));
        }
        slot.patterns[r.pattern as usize] += 1;
    }
    for s in &mut table.settings {
        s.fill_silent();
        s.validate()?;
    }
    Ok(table)
}

/// Samples `n_per_setting` trials at each analyzer setting `(theta_AS, theta_S)`
/// (rad) after storage time `tau_us`. Setting ids follow list order.
pub fn run_experiment(
    chain: &ChainParams<f64>,
    tau_us: f64,
    settings: &[(f64, f64)],
    n_per_setting: u64,
    rng: &RngSpec,
) -> Result<CountsTable> {
    let state = chain.photon_state(tau_us)?;
    let settings = settings
        .iter()
        .enumerate()
        .map(|(id, &(a, s))| {
            let dist = chain.analyzer(&state, a, s)?;
            count_trials(&dist.probabilities, n_per_setting, id as u32, a, s, rng)
        })
        .collect::<Result<_>>()?;
    Ok(CountsTable { settings })
}

#[cfg(test)]
mod tests;
