//! Run configuration, anchor files and the CSV formats read and written by
//! the `apsim` binary.
//!
//! A run configuration is a flat TOML table. `schema = 1` is mandatory, every
//! other key falls back to the reference operating point, and unknown keys
//! are rejected.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error};
use crate::experiments::{reference_chain, Anchors, Mode, RunSpec};
use crate::measurement::CountsTable;
use crate::montecarlo::{tabulate, ClickRecord};
use crate::source::{ChainParams, DecayShape, DetectorParams, GeometryParams, MemoryParams, SourceParams};

pub const SCHEMA: u32 = 1;

/// Anti-Stokes collection angle of the reference geometry (degrees).
pub const REFERENCE_AS_ANGLE_DEG: f64 = 3.0;
/// Wavenumber of the 795 nm D1 line (rad/m).
pub const REFERENCE_WAVENUMBER: f64 = 2.0 * PI / 795e-9;

/// Why an input file or override could not be used. [`Self::is_infeasible`]
/// separates physics failures from input errors.
#[derive(Debug)]
pub enum InputError {
    Io { path: PathBuf, source: std::io::Error },
    Parse(String),
    Invalid(Error),
}

impl InputError {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, InputError::Invalid(Error::Infeasible(_)))
    }
}

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            InputError::Parse(m) => f.write_str(m),
            InputError::Invalid(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for InputError {}

impl From<Error> for InputError {
    fn from(e: Error) -> Self {
        InputError::Invalid(e)
    }
}

fn read_text(path: &Path) -> Result<String, InputError> {
    let mut s = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|source| InputError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema: u32,
    #[serde(rename = "chi_L")]
    pub chi_l: f64,
    #[serde(rename = "chi_R")]
    pub chi_r: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub phase_jitter_sigma: f64,
    pub mode_overlap: f64,
    pub eta_r0: f64,
    pub shape: DecayShape,
    #[serde(rename = "T_us")]
    pub t_us: f64,
    #[serde(rename = "dephase_T_us")]
    pub dephase_t_us: f64,
    #[serde(rename = "eta_AS")]
    pub eta_as: f64,
    #[serde(rename = "eta_S")]
    pub eta_s: f64,
    pub dark_prob: f64,
    pub stokes_noise_ratio: f64,
    #[serde(rename = "k_W")]
    pub k_w: [f64; 3],
    #[serde(rename = "k_R")]
    pub k_r: [f64; 3],
    #[serde(rename = "k_AS_L")]
    pub k_as_l: [f64; 3],
    #[serde(rename = "k_AS_R")]
    pub k_as_r: [f64; 3],
    pub wavenumber: f64,
    pub n_max: usize,
    pub mode: Mode,
    /// Gates per analyzer setting.
    pub trials: u64,
    pub seed: u64,
    /// Storage time of single-point runs and of the visibility sweep (µs).
    pub tau_us: f64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_parts(
            &reference_chain(),
            &GeometryParams::counter_propagating(REFERENCE_AS_ANGLE_DEG.to_radians(), REFERENCE_WAVENUMBER),
        )
    }
}

impl RunConfig {
    pub fn from_parts(chain: &ChainParams<f64>, geo: &GeometryParams<f64>) -> Self {
        let (s, m, d) = (chain.source, chain.memory, chain.detector);
        Self {
            schema: SCHEMA,
            chi_l: s.chi_l,
            chi_r: s.chi_r,
            phi1: s.phi1,
            phi2: s.phi2,
            phase_jitter_sigma: s.phase_jitter_sigma,
            mode_overlap: s.mode_overlap,
            eta_r0: m.eta_r0,
            shape: m.shape,
            t_us: m.t_us,
            dephase_t_us: m.dephase_t_us,
            eta_as: d.eta_as,
            eta_s: d.eta_s,
            dark_prob: d.dark_prob,
            stokes_noise_ratio: d.stokes_noise_ratio,
            k_w: geo.k_w,
            k_r: geo.k_r,
            k_as_l: geo.k_as_l,
            k_as_r: geo.k_as_r,
            wavenumber: geo.wavenumber,
            n_max: chain.n_max,
            mode: Mode::Analytic,
            trials: 1_000_000,
            seed: 1,
            tau_us: 0.5,
            out_dir: PathBuf::from("out"),
        }
    }

    /// Parses a config file and applies `key=value` overrides, then validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, InputError> {
        let mut table = match path {
            Some(p) => read_text(p)?
                .parse::<toml::Table>()
                .map_err(|e| InputError::Parse(format!("{}: {e}", p.display())))?,
            None => {
                let mut t = toml::Table::new();
                t.insert("schema".into(), toml::Value::Integer(SCHEMA as i64));
                t
            }
        };
        for o in overrides {
            let (key, value) = parse_override(o)?;
            table.insert(key, value);
        }
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self, InputError> {
        if !table.contains_key("schema") {
            return Err(InputError::Parse("missing key `schema`".into()));
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let key = e.path().to_string();
            let msg = e.into_inner().message().to_string();
            InputError::Parse(if key == "." { msg } else { format!("{key}: {msg}") })
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::OutOfRange {
                name: "schema",
                value: self.schema as f64,
                expected: "1",
            });
        }
        check_range("trials", self.trials as f64, 1.0, f64::INFINITY, ">= 1")?;
        check_range("tau_us", self.tau_us, 0.0, f64::MAX, ">= 0")?;
        self.geometry().validate()?;
        self.chain().validate()
    }

    pub fn chain(&self) -> ChainParams<f64> {
        ChainParams {
            source: SourceParams {
                chi_l: self.chi_l,
                chi_r: self.chi_r,
                phi1: self.phi1,
                phi2: self.phi2,
                phase_jitter_sigma: self.phase_jitter_sigma,
                mode_overlap: self.mode_overlap,
            },
            memory: MemoryParams {
                eta_r0: self.eta_r0,
                shape: self.shape,
                t_us: self.t_us,
                dephase_t_us: self.dephase_t_us,
            },
            detector: DetectorParams {
                eta_as: self.eta_as,
                eta_s: self.eta_s,
                dark_prob: self.dark_prob,
                stokes_noise_ratio: self.stokes_noise_ratio,
            },
            n_max: self.n_max,
        }
    }

    pub fn geometry(&self) -> GeometryParams<f64> {
        GeometryParams {
            k_w: self.k_w,
            k_r: self.k_r,
            k_as_l: self.k_as_l,
            k_as_r: self.k_as_r,
            wavenumber: self.wavenumber,
        }
    }

    pub fn run_spec(&self) -> RunSpec {
        RunSpec {
            mode: self.mode,
            trials: self.trials,
            seed: self.seed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// `key=value`, the value read as a TOML literal and otherwise as a bare string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value), InputError> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| InputError::Parse(format!("override `{s}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(InputError::Parse(format!("override `{s}` has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

pub fn load_anchors(path: &Path) -> Result<Anchors, InputError> {
    let a: Anchors = toml::from_str(&read_text(path)?)
        .map_err(|e| InputError::Parse(format!("{}: {}", path.display(), e.message())))?;
    a.validate()?;
    Ok(a)
}

/// One row of a settings file: analyzer angles in basis-angle degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingRow {
    pub setting_id: u32,
    #[serde(rename = "theta_AS_deg")]
    pub theta_as_deg: f64,
    #[serde(rename = "theta_S_deg")]
    pub theta_s_deg: f64,
    pub trials: u64,
}

impl SettingRow {
    pub fn radians(&self) -> (f64, f64) {
        (self.theta_as_deg.to_radians(), self.theta_s_deg.to_radians())
    }
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path, header: &[&str]) -> Result<Vec<T>, InputError> {
    let text = read_text(path)?;
    if text.trim().is_empty() {
        return Err(InputError::Parse(format!("{}: empty file", path.display())));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let found: Vec<String> = rdr
        .headers()
        .map_err(|e| InputError::Parse(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(InputError::Parse(format!(
            "{}: line 1: header {found:?}, expected {header:?}",
            path.display()
        )));
    }
    rdr.deserialize()
        .map(|row| {
            row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                InputError::Parse(format!("{}: line {line}: {e}", path.display()))
            })
        })
        .collect()
}

pub const RECORDS_HEADER: [&str; 3] = ["trial_index", "setting_id", "pattern"];
pub const SETTINGS_HEADER: [&str; 4] = ["setting_id", "theta_AS_deg", "theta_S_deg", "trials"];

pub fn read_records(path: &Path) -> Result<Vec<ClickRecord>, InputError> {
    read_csv(path, &RECORDS_HEADER)
}

pub fn read_settings(path: &Path) -> Result<Vec<SettingRow>, InputError> {
    let rows: Vec<SettingRow> = read_csv(path, &SETTINGS_HEADER)?;
    if rows.is_empty() {
        return Err(InputError::Parse(format!("{}: no settings", path.display())));
    }
    Ok(rows)
}

/// Counts assembled from stored records and their settings map.
pub fn counts_from_files(records: &Path, settings: &Path) -> Result<CountsTable, InputError> {
    let rows = read_settings(settings)?;
    let recs = read_records(records)?;
    let settings: Vec<(u32, f64, f64, u64)> = rows
        .iter()
        .map(|r| {
            let (a, s) = r.radians();
            (r.setting_id, a, s, r.trials)
        })
        .collect();
    tabulate(&recs, &settings).map_err(|e| InputError::Parse(format!("{}: {e}", records.display())))
}

pub fn write_records<W: Write>(w: W, records: &[ClickRecord]) -> csv::Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(RECORDS_HEADER)?;
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_settings<W: Write>(w: W, rows: &[SettingRow]) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SETTINGS_HEADER)?;
    for r in rows {
        wtr.write_record([
            r.setting_id.to_string(),
            fmt_f64(r.theta_as_deg),
            fmt_f64(r.theta_s_deg),
            r.trials.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Parses `start:stop:steps`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, InputError> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || InputError::Parse(format!("grid `{s}` is not start:stop:steps"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let stop: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if steps == 0 || !start.is_finite() || !stop.is_finite() || (steps > 1 && stop <= start) {
        return Err(bad());
    }
    Ok(crate::experiments::linear_grid(start, stop, steps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_validates() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back = RunConfig::from_table(c.to_toml().parse().unwrap()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.chain(), reference_chain());
    }

    #[test]
    fn overrides_are_typed() {
        let c = RunConfig::load(None, &["eta_AS=0.1".into(), "shape=exponential".into(), "seed = 9".into()]).unwrap();
        assert_eq!(c.eta_as, 0.1);
        assert_eq!(c.shape, DecayShape::Exponential);
        assert_eq!(c.seed, 9);
        let c = RunConfig::load(None, &["mode=\"sampled\"".into()]).unwrap();
        assert_eq!(c.mode, Mode::Sampled);
    }

    #[test]
    fn rejects_out_of_range_and_unknown_keys() {
        let e = RunConfig::load(None, &["eta_AS=1.5".into()]).unwrap_err();
        assert!(e.to_string().contains("eta_AS out of range"), "{e}");
        assert!(!e.is_infeasible());
        let e = RunConfig::load(None, &["colour=3".into()]).unwrap_err();
        assert!(e.to_string().contains("colour"), "{e}");
        let e = RunConfig::load(None, &["eta_AS=\"x\"".into()]).unwrap_err();
        assert!(e.to_string().contains("eta_AS") || e.to_string().contains("float"), "{e}");
        assert!(RunConfig::load(None, &["novalue".into()]).is_err());
        let e = RunConfig::load(None, &["k_W=[1.0, 1.0, 0.0]".into()]).unwrap_err();
        assert!(e.to_string().contains("k_W"), "{e}");
    }

    #[test]
    fn schema_is_required() {
        let t: toml::Table = "eta_AS = 0.1".parse().unwrap();
        assert!(RunConfig::from_table(t).unwrap_err().to_string().contains("schema"));
        let t: toml::Table = "schema = 2".parse().unwrap();
        assert!(RunConfig::from_table(t).is_err());
    }

    #[test]
    fn overwhelming_background_is_infeasible() {
        let e = RunConfig::load(None, &["stokes_noise_ratio=100.0".into()]).unwrap_err();
        assert!(e.is_infeasible(), "{e}");
    }

    #[test]
    fn grids_parse() {
        assert_eq!(parse_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("2e-3:2e-3:1").unwrap(), vec![2e-3]);
        for bad in ["1:0:3", "0:1", "a:1:2", "0:1:0"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn float_format_is_lossless() {
        for x in [0.1, 1.0 / 3.0, 2.4437927663732818e-2, 1e-300, 22.5] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn csv_files_round_trip_and_report_lines() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            ClickRecord { trial_index: 0, setting_id: 0, pattern: 5 },
            ClickRecord { trial_index: 3, setting_id: 1, pattern: 10 },
        ];
        let rows = vec![
            SettingRow { setting_id: 0, theta_as_deg: 0.0, theta_s_deg: 22.5, trials: 4 },
            SettingRow { setting_id: 1, theta_as_deg: 45.0, theta_s_deg: -22.5, trials: 4 },
        ];
        let rp = dir.path().join("r.csv");
        let sp = dir.path().join("s.csv");
        write_records(std::fs::File::create(&rp).unwrap(), &recs).unwrap();
        write_settings(std::fs::File::create(&sp).unwrap(), &rows).unwrap();
        assert_eq!(read_records(&rp).unwrap(), recs);
        assert_eq!(read_settings(&sp).unwrap(), rows);
        let t = counts_from_files(&rp, &sp).unwrap();
        assert_eq!(t.settings[0].patterns[0], 3);

        std::fs::write(&rp, "trial_index,setting_id,pattern\n0,0,5\n1,0,x\n").unwrap();
        let e = read_records(&rp).unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        std::fs::write(&rp, "").unwrap();
        assert!(read_records(&rp).unwrap_err().to_string().contains("empty"));
        std::fs::write(&rp, "a,b,c\n").unwrap();
        assert!(read_records(&rp).unwrap_err().to_string().contains("line 1"));
    }
}
