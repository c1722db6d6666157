//! `apsim`: simulate, sweep, analyze stored clicks, calibrate.
//!
//! Exit codes: 0 success, 2 input error, 3 physically infeasible parameters.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use apsim::config::{
    counts_from_files, fmt_f64, load_anchors, parse_grid, write_records, write_settings, InputError, RunConfig,
    SettingRow,
};
use apsim::experiments::{
    analyze_counts, bell_settings_rad, calibrate, default_pas_grid, default_tau_grid, measure, scan_bell_vs_tau,
    scan_retrieval_g2_vs_tau, sweep_visibility_vs_pas, Analysis, Mode, SweepResult, FRINGE_POINTS,
};
use apsim::measurement::{violation_significance, BELL_SETTINGS_DEG};
use apsim::montecarlo::{sample_clicks, tabulate, RngSpec};
use apsim::source::mode_match;
use apsim::Error;

#[derive(Parser)]
#[command(name = "apsim", version, about = "Dual-mode atom-photon entanglement source simulator")]
struct Cli {
    /// Run configuration (flat TOML, `schema = 1`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set eta_AS=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Gates per analyzer setting.
    #[arg(long, global = true)]
    trials: Option<u64>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Analytic,
    Sampled,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    /// Fringe visibility against the anti-Stokes detection rate.
    Visibility,
    /// CHSH S against storage time.
    Bell,
    /// Retrieval efficiency and g² against storage time.
    Decay,
}

#[derive(Subcommand)]
enum Command {
    /// One chain evaluation; prints a JSON summary. Sampled mode also writes
    /// `records.csv` and `settings.csv` to the output directory.
    Simulate,
    /// Writes `<kind>.csv` and `<kind>.json` to the output directory.
    Sweep {
        #[arg(value_enum)]
        kind: SweepArg,
        /// `start:stop:steps`; p_AS for visibility, storage time (µs) otherwise.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Applies every estimator to stored click records.
    Analyze {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        settings: PathBuf,
    },
    /// Fits the memory and noise model to an anchors file.
    Calibrate {
        anchors: PathBuf,
        /// Also write the calibrated run configuration here.
        #[arg(long)]
        config_out: Option<PathBuf>,
    },
}

enum Failure {
    Input(String),
    Infeasible(String),
}

impl From<InputError> for Failure {
    fn from(e: InputError) -> Self {
        if e.is_infeasible() {
            Failure::Infeasible(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Infeasible(_) => Failure::Infeasible(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Infeasible(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Simulate => simulate(&load_config(cli)?),
        Command::Sweep { kind, grid } => sweep(&load_config(cli)?, *kind, grid.as_deref()),
        Command::Analyze { records, settings } => analyze(records, settings),
        Command::Calibrate { anchors, config_out } => cmd_calibrate(anchors, config_out.as_deref()),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut overrides = cli.set.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(t) = cli.trials {
        overrides.push(format!("trials={t}"));
    }
    if let Some(m) = cli.mode {
        let m = match m {
            ModeArg::Analytic => "analytic",
            ModeArg::Sampled => "sampled",
        };
        overrides.push(format!("mode=\"{m}\""));
    }
    let mut cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

fn metadata() -> serde_json::Value {
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    json!({
        "tool": "apsim",
        "version": env!("CARGO_PKG_VERSION"),
        "timestamp_unix": ts,
    })
}

fn print_json<T: Serialize>(value: &T) -> Outcome {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Failure::Input(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), Failure> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok((path, BufWriter::new(f)))
}

/// Bell settings, the `(0°, 0°)` correlation setting, then the fringe scan.
fn simulate_settings() -> Vec<(f64, f64)> {
    let mut deg: Vec<(f64, f64)> = BELL_SETTINGS_DEG.to_vec();
    deg.push((0.0, 0.0));
    deg.extend((0..FRINGE_POINTS).map(|k| (45.0, 180.0 * k as f64 / FRINGE_POINTS as f64)));
    deg
}

fn simulate(cfg: &RunConfig) -> Outcome {
    let chain = cfg.chain();
    let geometry = mode_match(&cfg.geometry())?;
    let state = chain.photon_state(cfg.tau_us)?;
    let deg = simulate_settings();
    let rad: Vec<(f64, f64)> = deg.iter().map(|(a, s)| (a.to_radians(), s.to_radians())).collect();
    let run = cfg.run_spec();
    let measured = measure(&chain, &state, &rad, &apsim::experiments::RunSpec::analytic(run.trials))?;

    let mut outputs = serde_json::Map::new();
    let analysis: Analysis = match cfg.mode {
        Mode::Analytic => measured.analysis(),
        Mode::Sampled => {
            let rng = RngSpec::new(cfg.seed);
            let mut records = Vec::new();
            for (id, t) in measured.tables.iter().enumerate() {
                records.extend(sample_clicks(&t.probabilities, cfg.trials, id as u32, &rng)?);
            }
            let rows: Vec<SettingRow> = deg
                .iter()
                .enumerate()
                .map(|(id, &(a, s))| SettingRow {
                    setting_id: id as u32,
                    theta_as_deg: a,
                    theta_s_deg: s,
                    trials: cfg.trials,
                })
                .collect();
            let (rp, mut w) = create(&cfg.out_dir, "records.csv")?;
            write_records(&mut w, &records)?;
            w.flush()?;
            let (sp, mut w) = create(&cfg.out_dir, "settings.csv")?;
            write_settings(&mut w, &rows)?;
            w.flush()?;
            outputs.insert("records".into(), json!(rp));
            outputs.insert("settings".into(), json!(sp));
            let spec: Vec<(u32, f64, f64, u64)> = rows
                .iter()
                .map(|r| {
                    let (a, s) = r.radians();
                    (r.setting_id, a, s, r.trials)
                })
                .collect();
            analyze_counts(&tabulate(&records, &spec)?)
        }
    };

    let summary = json!({
        "metadata": metadata(),
        "config": cfg,
        "provenance": run.provenance(),
        "results": {
            "p_AS": analysis.p_as,
            "g2": analysis.g2_matched,
            "g2_undefined": analysis.g2_matched.is_none(),
            "g2_unmatched": analysis.g2_unmatched,
            "V": analysis.fringe_visibility,
            "V_from_g2": analysis.visibility_from_g2,
            "S": analysis.chsh_s,
            "sigma_violation": analysis.sigma_violation,
            "eta_retrieve": analysis.eta_retrieve,
            "leaked_population": state.leaked_population(),
            "stokes_background": chain.stokes_background()?,
            "mode_match": geometry,
        },
        "analysis": analysis,
        "outputs": outputs,
    });
    print_json(&summary)
}

fn sweep(cfg: &RunConfig, kind: SweepArg, grid: Option<&str>) -> Outcome {
    let chain = cfg.chain();
    let run = cfg.run_spec();
    let grid = match grid {
        Some(g) => parse_grid(g)?,
        None => match kind {
            SweepArg::Visibility => default_pas_grid(),
            _ => default_tau_grid(),
        },
    };
    let (name, result, header): (&str, SweepResult, &[&str]) = match kind {
        SweepArg::Visibility => (
            "visibility",
            sweep_visibility_vs_pas(&chain, cfg.tau_us, &grid, &run)?,
            &["p_AS", "V", "V_err"],
        ),
        SweepArg::Bell => (
            "bell",
            scan_bell_vs_tau(&chain, &grid, &bell_settings_rad(), &run)?,
            &["tau_us", "S", "S_err", "sigma_violation"],
        ),
        SweepArg::Decay => (
            "decay",
            scan_retrieval_g2_vs_tau(&chain, &grid, &run)?,
            &["tau_us", "eta_retrieve", "eta_err", "g2", "g2_err"],
        ),
    };

    let (csv_path, w) = create(&cfg.out_dir, &format!("{name}.csv"))?;
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(header)?;
    for pt in &result.points {
        let mut row = vec![fmt_f64(pt.x)];
        match kind {
            SweepArg::Visibility => {
                let v = pt.estimates["V"];
                row.extend([fmt_f64(v.value), fmt_f64(v.std_err)]);
            }
            SweepArg::Bell => {
                let s = pt.estimates["S"];
                let sig = violation_significance(s).map(fmt_f64).unwrap_or_default();
                row.extend([fmt_f64(s.value), fmt_f64(s.std_err), sig]);
            }
            SweepArg::Decay => {
                let (e, g) = (pt.estimates["eta_retrieve"], pt.estimates["g2"]);
                row.extend([fmt_f64(e.value), fmt_f64(e.std_err), fmt_f64(g.value), fmt_f64(g.std_err)]);
            }
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;

    let summary = json!({
        "metadata": metadata(),
        "config": cfg,
        "csv": csv_path,
        "result": result,
    });
    let (_, mut w) = create(&cfg.out_dir, &format!("{name}.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary).map_err(|e| Failure::Input(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    print_json(&summary)
}

fn analyze(records: &Path, settings: &Path) -> Outcome {
    let counts = counts_from_files(records, settings)?;
    let analysis = analyze_counts(&counts);
    print_json(&json!({
        "metadata": metadata(),
        "analysis": analysis,
    }))
}

fn cmd_calibrate(anchors: &Path, config_out: Option<&Path>) -> Outcome {
    let anchors = load_anchors(anchors)?;
    let cal = calibrate(&anchors)?;
    if let Some(path) = config_out {
        let cfg = RunConfig::from_parts(&cal.chain(), &RunConfig::default().geometry());
        fs::write(path, cfg.to_toml()).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    }
    print_json(&json!({
        "metadata": metadata(),
        "calibration": cal,
    }))
}
