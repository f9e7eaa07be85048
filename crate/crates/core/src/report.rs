//! CSV emission with 9 significant digits and run manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::error::{Error, Result};
use crate::scenario::RNG_ALGORITHM;
use crate::trainer::{TrainingCurve, CURVE_COLUMNS};

/// Formats like C's `%.9g`.
pub fn fmt_g9(x: f64) -> String {
    const P: i32 = 9;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (P - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// A CSV table with a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Csv {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_text(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn curve_csv(curve: &TrainingCurve) -> Csv {
    let mut csv = Csv::new(&CURVE_COLUMNS);
    for r in &curve.rows {
        csv.push(vec![
            r.epoch.to_string(),
            r.env_steps.to_string(),
            fmt_g9(r.mean_reward),
            fmt_g9(r.mean_utility),
            fmt_g9(r.feasible_fraction),
            fmt_g9(r.actor_loss),
            fmt_g9(r.critic_loss),
        ]);
    }
    csv
}

/// Parses a curve CSV written by [`curve_csv`].
pub fn read_curve(path: &Path) -> Result<TrainingCurve> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let bad = |line: usize, msg: String| Error::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    if lines.next() != Some(CURVE_COLUMNS.join(",").as_str()) {
        return Err(bad(1, "unexpected curve header".into()));
    }
    let mut curve = TrainingCurve::default();
    for (i, l) in lines.enumerate() {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != CURVE_COLUMNS.len() {
            return Err(bad(
                i + 2,
                format!("expected {} fields", CURVE_COLUMNS.len()),
            ));
        }
        let num = |k: usize| {
            f[k].parse::<f64>()
                .map_err(|_| bad(i + 2, format!("bad number {:?}", f[k])))
        };
        let int = |k: usize| {
            f[k].parse::<usize>()
                .map_err(|_| bad(i + 2, format!("bad integer {:?}", f[k])))
        };
        curve.rows.push(crate::trainer::CurveRow {
            epoch: int(0)?,
            env_steps: int(1)?,
            mean_reward: num(2)?,
            mean_utility: num(3)?,
            feasible_fraction: num(4)?,
            actor_loss: num(5)?,
            critic_loss: num(6)?,
        });
    }
    Ok(curve)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(fs::read(path)?)))
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Provenance record written next to a run's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub rng: String,
    pub preset: String,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// `(file name, sha256)` for each emitted file, in emission order.
    pub checksums: Vec<(String, String)>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, seed: u64, started_unix: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config_hash: cfg.hash(),
            seed,
            rng: RNG_ALGORITHM.to_string(),
            preset: cfg.preset.as_str().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix,
            finished_unix: started_unix,
            checksums: Vec::new(),
        }
    }

    /// Records checksums of `files` inside `dir`.
    pub fn add_files(&mut self, dir: &Path, files: &[&str]) -> Result<()> {
        for f in files {
            self.checksums
                .push((f.to_string(), sha256_file(&dir.join(f))?));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "command = {}\nconfig_hash = {}\nseed = {}\nrng = {}\npreset = {}\nversion = {}\nstarted_unix = {}\nfinished_unix = {}\n",
            self.command,
            self.config_hash,
            self.seed,
            self.rng,
            self.preset,
            self.version,
            self.started_unix,
            self.finished_unix
        );
        for (f, h) in &self.checksums {
            s.push_str(&format!("sha256.{f} = {h}\n"));
        }
        s
    }

    /// Stamps the finish time and writes `manifest.txt` atomically.
    pub fn finish(mut self, dir: &Path) -> Result<Self> {
        self.finished_unix = unix_now().max(self.started_unix);
        write_atomic(&dir.join(MANIFEST_FILE), self.to_text().as_bytes())?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g9_matches_printf() {
        let cases = [
            (1.0, "1"),
            (0.1, "0.1"),
            (1.0 / 3.0, "0.333333333"),
            (2.0 / 3.0, "0.666666667"),
            (123456789.0, "123456789"),
            (1234567890.0, "1.23456789e+09"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (-2.5, "-2.5"),
            (29.6, "29.6"),
            (1e100, "1e+100"),
            (0.0, "0"),
            (999999999.5, "1e+09"),
        ];
        for (x, want) in cases {
            assert_eq!(fmt_g9(x), want, "{x}");
        }
        assert_eq!(fmt_g9(f64::NAN), "nan");
        assert_eq!(fmt_g9(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn curve_roundtrip() {
        let curve = TrainingCurve {
            rows: vec![crate::trainer::CurveRow {
                epoch: 1,
                env_steps: 100,
                mean_reward: 12.5,
                mean_utility: 1.0 / 3.0,
                feasible_fraction: 0.75,
                actor_loss: f64::NAN,
                critic_loss: 2.0,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("curve.csv");
        curve_csv(&curve).write(&p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(
            "epoch,env_steps,mean_reward,mean_utility,feasible_fraction,actor_loss,critic_loss\n"
        ));
        let back = read_curve(&p).unwrap();
        assert_eq!(back.rows[0].mean_reward, 12.5);
        assert!(back.rows[0].actor_loss.is_nan());
        assert!((back.rows[0].mean_utility - 1.0 / 3.0).abs() < 1e-9);
    }
}
