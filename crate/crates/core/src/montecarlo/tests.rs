use super::*;
use crate::measurement::{chsh_s, correlation_e, correlation_e_analytic, BELL_SETTINGS_DEG, CHSH_SIGNS};
use crate::source::{anti_stokes_rate, DecayShape, DetectorParams, MemoryParams, SourceParams};

fn uniform4() -> Vec<f64> {
    let mut d = vec![0.0; 16];
    for p in [0, 3, 5, 15] {
        d[p] = 0.25;
    }
    d
}

fn reference_chain() -> ChainParams<f64> {
    ChainParams {
        source: SourceParams::symmetric(0.025),
        memory: MemoryParams {
            eta_r0: 0.4888,
            shape: DecayShape::Gaussian,
            t_us: 15.66,
            dephase_t_us: 230.0,
        },
        detector: DetectorParams {
            eta_as: 0.08,
            eta_s: 0.25,
            dark_prob: 0.0,
            stokes_noise_ratio: 0.08,
        },
        n_max: 6,
    }
}

#[test]
fn empty_and_point_mass() {
    let rng = RngSpec::new(1);
    assert!(sample_trials(&uniform4(), 0, 0, &rng).unwrap().is_empty());
    let mut d = vec![0.0; 16];
    d[9] = 1.0;
    let recs = sample_trials(&d, 1000, 2, &rng).unwrap();
    assert_eq!(recs.len(), 1000);
    assert!(recs.iter().all(|r| r.pattern == 9 && r.setting_id == 2));
    assert!(recs.iter().enumerate().all(|(i, r)| r.trial_index == i as u64));
}

#[test]
fn malformed_distributions_rejected() {
    let rng = RngSpec::new(1);
    assert!(matches!(sample_trials(&[1.0; 4], 1, 0, &rng), Err(Error::MalformedDistribution(_))));
    let mut d = uniform4();
    d[0] = 0.3;
    assert!(sample_trials(&d, 1, 0, &rng).is_err());
    let mut d = uniform4();
    d[0] = -0.05;
    d[1] = 0.05;
    assert!(sample_trials(&d, 1, 0, &rng).is_err());
}

#[test]
fn uniform_patterns_within_binomial_band() {
    let n = 1_000_000u64;
    let c = count_trials(&uniform4(), n, 0, 0.0, 0.0, &RngSpec::new(2024)).unwrap();
    let sigma = (0.25f64 * 0.75 / n as f64).sqrt();
    for p in [0, 3, 5, 15] {
        let f = c.patterns[p] as f64 / n as f64;
        assert!((f - 0.25).abs() < 5.0 * sigma, "pattern {p}: {f}");
    }
    assert_eq!(c.patterns.iter().sum::<u64>(), n);
}

#[test]
fn draws_are_per_trial_and_layout_independent() {
    let rng = RngSpec::new(99);
    let d = uniform4();
    let n = 3 * CHUNK + 17;
    let recs = sample_trials(&d, n, 4, &rng).unwrap();
    let sampler = Sampler::new(&d).unwrap();
    for i in [0, 1, CHUNK - 1, CHUNK, 2 * CHUNK + 5, n - 1] {
        assert_eq!(recs[i as usize].pattern, sampler.pattern(rng.uniform(4, i)));
    }
    let counts = count_trials(&d, n, 4, 0.0, 0.0, &rng).unwrap();
    let mut h = [0u64; 16];
    recs.iter().for_each(|r| h[r.pattern as usize] += 1);
    assert_eq!(h, counts.patterns);
    // a different thread pool gives the same stream
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let single = pool.install(|| sample_trials(&d, n, 4, &rng).unwrap());
    assert_eq!(single, recs);
    assert_ne!(sample_trials(&d, 64, 4, &RngSpec::new(100)).unwrap(), recs[..64].to_vec());
    assert_ne!(sample_trials(&d, 64, 5, &rng).unwrap(), recs[..64].to_vec());
}

#[test]
fn sparse_records_tabulate_to_full_counts() {
    let rng = RngSpec::new(5);
    let mut d = vec![0.0; 16];
    d[0] = 0.9;
    d[5] = 0.06;
    d[10] = 0.04;
    let clicks = sample_clicks(&d, 50_000, 1, &rng).unwrap();
    assert!(clicks.iter().all(|r| r.pattern != 0));
    let table = tabulate(&clicks, &[(1, 0.1, 0.2, 50_000)]).unwrap();
    let direct = count_trials(&d, 50_000, 1, 0.1, 0.2, &rng).unwrap();
    assert_eq!(table.settings[0], direct);
    let bad = [ClickRecord {
        trial_index: 0,
        setting_id: 7,
        pattern: 1,
    }];
    assert!(tabulate(&bad, &[(1, 0.0, 0.0, 10)]).is_err());
}

#[test]
fn experiment_is_deterministic_and_matches_operating_point() {
    let ch = reference_chain();
    let settings: Vec<(f64, f64)> = BELL_SETTINGS_DEG
        .iter()
        .map(|(a, s)| (a.to_radians(), s.to_radians()))
        .collect();
    let n = 1_000_000;
    let a = run_experiment(&ch, 0.5, &settings, n, &RngSpec::new(11)).unwrap();
    let b = run_experiment(&ch, 0.5, &settings, n, &RngSpec::new(11)).unwrap();
    assert_eq!(a, b);

    let state = ch.photon_state(0.5).unwrap();
    let mut analytic = [0.0; 4];
    let mut sampled = [crate::measurement::Estimate::exact(0.0); 4];
    for (k, s) in a.settings.iter().enumerate() {
        let t = ch.analyzer(&state, s.theta_as, s.theta_s).unwrap();
        let p = anti_stokes_rate(&t);
        let f = (s.singles(0) + s.singles(1)) as f64 / (2 * n) as f64;
        let sigma = (p * (1.0 - p) / (2 * n) as f64).sqrt();
        assert!((f - p).abs() < 5.0 * sigma, "{f} vs {p}");
        assert!((p / 2e-3 - 1.0).abs() < 0.05);
        analytic[k] = correlation_e_analytic(&t).unwrap();
        sampled[k] = correlation_e(s).unwrap();
    }
    let s_mc = chsh_s(sampled, CHSH_SIGNS);
    let s_an = CHSH_SIGNS.combine(analytic);
    assert!((s_mc.value - s_an).abs() < 3.0 * s_mc.std_err, "{s_mc:?} vs {s_an}");
}
