//! Per-trial records, their CSV form and the feasibility re-check.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::bsum::Scheme;
use crate::channel::{channel, AntennaArray, PathSet, Position, GEOMETRY_TOL};
use crate::covertness::{min_detection_error, warden_received_power};
use crate::error::{Error, Result};
use crate::wmmse::Beamformer;

/// Relative slack on the power and covertness caps when re-checking a record.
pub const VERIFY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub scheme: Scheme,
    pub sweep_value: f64,
    pub trial_index: usize,
    /// Seed of the channel realization shared by every scheme.
    pub seed: u64,
    /// Seed of the random initial layout.
    pub init_seed: u64,
    pub scenario_hash: String,
    pub sum_rate: f64,
    pub warden_power: f64,
    pub detection_error: f64,
    pub iterations: usize,
    pub flagged: bool,
    pub diagnostic: String,
    /// Kept out of `records.csv` so reruns are byte-identical.
    pub wall_time: f64,
    pub wavelength: f64,
    pub region_size: f64,
    pub min_spacing: f64,
    pub max_power: f64,
    pub p_th: f64,
    pub warden_noise_power: f64,
    pub noise_uncertainty: f64,
    pub covertness_level: f64,
    pub positions: Vec<Position>,
    pub beamformer: Beamformer,
    pub warden_paths: PathSet,
}

const HEADER: [&str; 24] = [
    "scheme",
    "sweep_value",
    "trial_index",
    "seed",
    "init_seed",
    "scenario_hash",
    "sum_rate",
    "warden_power",
    "detection_error",
    "iterations",
    "flagged",
    "diagnostic",
    "wavelength",
    "region_size",
    "min_spacing",
    "max_power",
    "p_th",
    "warden_noise_power",
    "noise_uncertainty",
    "covertness_level",
    "positions",
    "beamformer",
    "warden_angles",
    "warden_responses",
];

fn join<T>(items: &[T], f: impl Fn(&T, &mut String)) -> String {
    let mut out = String::new();
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        f(item, &mut out);
    }
    out
}

fn pairs(field: &str, name: &str) -> Result<Vec<(f64, f64)>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .map(|item| {
            let mut parts = item.split(' ');
            let a = parts.next().and_then(|s| s.parse().ok());
            let b = parts.next().and_then(|s| s.parse().ok());
            match (a, b, parts.next()) {
                (Some(a), Some(b), None) => Ok((a, b)),
                _ => Err(Error::Format(format!("bad {name} entry {item:?}"))),
            }
        })
        .collect()
}

impl TrialRecord {
    fn to_row(&self) -> Vec<String> {
        let w = &self.beamformer.0;
        let entries: Vec<Complex64> = w.iter().copied().collect();
        vec![
            self.scheme.name().to_string(),
            self.sweep_value.to_string(),
            self.trial_index.to_string(),
            self.seed.to_string(),
            self.init_seed.to_string(),
            self.scenario_hash.clone(),
            self.sum_rate.to_string(),
            self.warden_power.to_string(),
            self.detection_error.to_string(),
            self.iterations.to_string(),
            self.flagged.to_string(),
            self.diagnostic.clone(),
            self.wavelength.to_string(),
            self.region_size.to_string(),
            self.min_spacing.to_string(),
            self.max_power.to_string(),
            self.p_th.to_string(),
            self.warden_noise_power.to_string(),
            self.noise_uncertainty.to_string(),
            self.covertness_level.to_string(),
            join(&self.positions, |p, s| {
                let _ = write!(s, "{} {}", p.x, p.y);
            }),
            join(&entries, |z, s| {
                let _ = write!(s, "{} {}", z.re, z.im);
            }),
            join(&self.warden_paths.angles, |a, s| {
                let _ = write!(s, "{} {}", a.0, a.1);
            }),
            join(&self.warden_paths.responses, |z, s| {
                let _ = write!(s, "{} {}", z.re, z.im);
            }),
        ]
    }

    fn from_row(row: &csv::StringRecord) -> Result<Self> {
        if row.len() != HEADER.len() {
            return Err(Error::Format(format!(
                "expected {} fields, found {}",
                HEADER.len(),
                row.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse()
                .map_err(|_| Error::Format(format!("{}: not a number: {:?}", HEADER[i], &row[i])))
        };
        let int = |i: usize| -> Result<u64> {
            row[i]
                .parse()
                .map_err(|_| Error::Format(format!("{}: not an integer: {:?}", HEADER[i], &row[i])))
        };
        let positions: Vec<Position> = pairs(&row[20], "position")?
            .into_iter()
            .map(|(x, y)| Position::new(x, y))
            .collect();
        let entries: Vec<Complex64> = pairs(&row[21], "beamformer")?
            .into_iter()
            .map(|(re, im)| Complex64::new(re, im))
            .collect();
        let n = positions.len();
        let beamformer = if entries.is_empty() {
            Beamformer::zeros(n, 0)
        } else if n > 0 && entries.len().is_multiple_of(n) {
            Beamformer(DMatrix::from_column_slice(n, entries.len() / n, &entries))
        } else {
            return Err(Error::Format(format!(
                "{} beamformer entries for {n} antennas",
                entries.len()
            )));
        };
        let angles = pairs(&row[22], "warden angle")?;
        let responses: Vec<Complex64> = pairs(&row[23], "warden response")?
            .into_iter()
            .map(|(re, im)| Complex64::new(re, im))
            .collect();
        if angles.len() != responses.len() {
            return Err(Error::Format("warden angles and responses differ in length".into()));
        }
        Ok(TrialRecord {
            scheme: row[0].parse()?,
            sweep_value: num(1)?,
            trial_index: int(2)? as usize,
            seed: int(3)?,
            init_seed: int(4)?,
            scenario_hash: row[5].to_string(),
            sum_rate: num(6)?,
            warden_power: num(7)?,
            detection_error: num(8)?,
            iterations: int(9)? as usize,
            flagged: row[10]
                .parse()
                .map_err(|_| Error::Format(format!("flagged: {:?}", &row[10])))?,
            diagnostic: row[11].to_string(),
            wall_time: 0.0,
            wavelength: num(12)?,
            region_size: num(13)?,
            min_spacing: num(14)?,
            max_power: num(15)?,
            p_th: num(16)?,
            warden_noise_power: num(17)?,
            noise_uncertainty: num(18)?,
            covertness_level: num(19)?,
            positions,
            beamformer,
            warden_paths: PathSet::new(0, angles, responses),
        })
    }

    /// Whether the record carries a solution (failed solves do not).
    pub fn has_solution(&self) -> bool {
        self.beamformer.users() > 0
    }

    /// Re-evaluates power, placement, warden power and detection error from
    /// the stored solution. Returns every violated check.
    pub fn verify(&self) -> std::result::Result<(), Vec<String>> {
        let mut problems = Vec::new();
        if !self.has_solution() {
            return Err(vec![format!("no solution stored ({})", self.diagnostic)]);
        }
        let w = &self.beamformer;
        if w.antennas() != self.positions.len() {
            problems.push("beamformer rows differ from antenna count".to_string());
        }
        if !w.is_finite() {
            problems.push("beamformer has non-finite entries".to_string());
        }
        let power = w.total_power();
        if power > self.max_power * (1.0 + VERIFY_TOL) {
            problems.push(format!("transmit power {power:e} exceeds {:e}", self.max_power));
        }
        let array = AntennaArray::new(self.positions.clone());
        for p in &array.positions {
            if !p.in_region(self.region_size) {
                problems.push(format!("antenna ({}, {}) outside region", p.x, p.y));
            }
        }
        let spacing = array.min_pairwise_distance();
        if spacing < self.min_spacing - GEOMETRY_TOL {
            problems.push(format!("antennas {spacing} m apart, minimum {}", self.min_spacing));
        }
        if problems.is_empty() {
            let h0 = channel(&array, &self.warden_paths, self.wavelength);
            let warden = warden_received_power(&h0, w);
            if warden > self.p_th * (1.0 + VERIFY_TOL) {
                problems.push(format!("warden power {warden:e} exceeds {:e}", self.p_th));
            }
            if (warden - self.warden_power).abs() > 1e-9 * self.p_th.max(warden) {
                problems.push(format!(
                    "stored warden power {:e} differs from {warden:e}",
                    self.warden_power
                ));
            }
            match min_detection_error(warden, self.warden_noise_power, self.noise_uncertainty) {
                Ok(xi) if xi < 1.0 - self.covertness_level - 1e-6 => {
                    problems.push(format!("detection error {xi} below {}", 1.0 - self.covertness_level));
                }
                Ok(_) => {}
                Err(e) => problems.push(e.to_string()),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }
}

pub fn write_records<W: Write>(out: W, records: &[TrialRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(HEADER)?;
    for r in records {
        writer.write_record(r.to_row())?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<TrialRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::Format("unexpected header row".into()));
    }
    reader.records().map(|row| TrialRecord::from_row(&row?)).collect()
}

pub fn read_records_file(path: &Path) -> Result<Vec<TrialRecord>> {
    read_records(File::open(path)?)
}

/// Wall times keyed by (scheme, sweep value, trial).
pub fn write_timings<W: Write>(out: W, records: &[TrialRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["scheme", "sweep_value", "trial_index", "wall_time"])?;
    for r in records {
        writer.write_record([
            r.scheme.name().to_string(),
            r.sweep_value.to_string(),
            r.trial_index.to_string(),
            r.wall_time.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Fills `wall_time` from a timings file written alongside the records.
pub fn attach_timings<R: Read>(input: R, records: &mut [TrialRecord]) -> Result<()> {
    let mut reader = csv::Reader::from_reader(input);
    for row in reader.records() {
        let row = row?;
        if row.len() != 4 {
            return Err(Error::Format("timings row needs 4 fields".into()));
        }
        let scheme: Scheme = row[0].parse()?;
        let value: f64 = row[1].parse().map_err(|_| Error::Format("timing sweep value".into()))?;
        let trial: usize = row[2].parse().map_err(|_| Error::Format("timing trial".into()))?;
        let time: f64 = row[3].parse().map_err(|_| Error::Format("timing value".into()))?;
        if let Some(r) = records
            .iter_mut()
            .find(|r| r.scheme == scheme && r.sweep_value == value && r.trial_index == trial)
        {
            r.wall_time = time;
        }
    }
    Ok(())
}
