//! Flat `key = value` experiment files.
//!
//! ```text
//! # power sweep at the default geometry
//! sweep = power
//! sweep_values = -10, 0, 10
//! schemes = MA-PDA, FPA-PDA
//! trials = 20
//! max_power_dbm = 10
//! ```
//!
//! Powers take a `_dbm` or `_w` suffix, lengths a `_m` or `_wavelengths`
//! suffix. Unknown and repeated keys are errors.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bsum::{Scheme, SolverConfig};
use crate::channel::{dbm_to_watts, SystemConfig};
use crate::error::{Error, Result};

pub const DEFAULT_TRIALS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepKind {
    /// Maximum transmit power in dBm.
    Power,
    Antennas,
    /// Maximum AoD error in radians.
    AodError,
    /// Region side in wavelengths.
    Region,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Power => "power",
            SweepKind::Antennas => "antennas",
            SweepKind::AodError => "aod_error",
            SweepKind::Region => "region",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepKind::Power => (-4..=4).map(|i| 5.0 * i as f64).collect(),
            SweepKind::Antennas => vec![2.0, 4.0, 6.0, 8.0],
            SweepKind::AodError => vec![0.0, 0.05, 0.1, 0.2, 0.4],
            SweepKind::Region => vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        }
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "power" => Ok(SweepKind::Power),
            "antennas" => Ok(SweepKind::Antennas),
            "aod_error" => Ok(SweepKind::AodError),
            "region" => Ok(SweepKind::Region),
            other => Err(Error::InvalidConfig(format!("unknown sweep {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub kind: SweepKind,
    pub values: Vec<f64>,
}

impl Sweep {
    /// The system configuration at one sweep point. AoD errors leave it unchanged.
    pub fn apply(&self, base: &SystemConfig, value: f64) -> SystemConfig {
        let mut cfg = base.clone();
        match self.kind {
            SweepKind::Power => cfg.max_power = dbm_to_watts(value),
            SweepKind::Antennas => cfg.antennas = value as usize,
            SweepKind::Region => cfg.region_size = value * base.wavelength,
            SweepKind::AodError => {}
        }
        cfg
    }

    pub fn aod_error(&self, value: f64) -> f64 {
        if self.kind == SweepKind::AodError {
            value
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub base: SystemConfig,
    pub solver: SolverConfig,
    pub sweep: Sweep,
    pub schemes: Vec<Scheme>,
    pub trials: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(base: SystemConfig, sweep: Sweep, schemes: Vec<Scheme>) -> Self {
        ExperimentConfig {
            base,
            solver: SolverConfig::default(),
            sweep,
            schemes,
            trials: DEFAULT_TRIALS,
            seed: 0,
            output_dir: PathBuf::from("results"),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Entries::parse(text)?;
        let cfg = build(&mut entries)?;
        if let Some(key) = entries.remaining().next() {
            return Err(Error::InvalidConfig(format!("unknown key {key:?}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidConfig("no schemes selected".into()));
        }
        let values = &self.sweep.values;
        if values.is_empty() {
            return Err(Error::InvalidConfig("sweep has no values".into()));
        }
        if values.iter().any(|v| !v.is_finite()) || values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "sweep values must be finite and strictly increasing".into(),
            ));
        }
        match self.sweep.kind {
            SweepKind::Antennas if values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) => {
                return Err(Error::InvalidConfig("antenna counts must be positive integers".into()));
            }
            SweepKind::AodError if values[0] < 0.0 => {
                return Err(Error::InvalidConfig("AoD errors must be non-negative".into()));
            }
            _ => {}
        }
        if !(self.solver.es_grid_step > 0.0) {
            return Err(Error::InvalidConfig("ES grid step must be positive".into()));
        }
        if !(self.solver.pda.penalty_init > 0.0 && self.solver.pda.penalty_growth >= 1.0) {
            return Err(Error::InvalidConfig(
                "PDA penalty must be positive and non-decreasing".into(),
            ));
        }
        for &v in values {
            self.sweep.apply(&self.base, v).validate()?;
        }
        Ok(())
    }
}

struct Entries {
    map: HashMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", idx + 1)))?;
            let key = key.trim().to_string();
            if map.insert(key.clone(), (idx + 1, value.trim().to_string())).is_some() {
                return Err(Error::InvalidConfig(format!("line {}: repeated key {key:?}", idx + 1)));
            }
        }
        Ok(Entries { map })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::InvalidConfig(format!("line {line}: cannot parse {key} = {v:?}"))),
        }
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|item| item.trim().parse::<T>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| Error::InvalidConfig(format!("line {line}: cannot parse list {key} = {v:?}"))),
        }
    }

    /// A power given either as `<stem>_dbm` or `<stem>_w`.
    fn power(&mut self, stem: &str) -> Result<Option<f64>> {
        let dbm = self.get::<f64>(&format!("{stem}_dbm"))?;
        let watts = self.get::<f64>(&format!("{stem}_w"))?;
        match (dbm, watts) {
            (Some(_), Some(_)) => Err(Error::InvalidConfig(format!("{stem} given in both dBm and W"))),
            (Some(d), None) => Ok(Some(dbm_to_watts(d))),
            (None, w) => Ok(w),
        }
    }

    /// A length given either as `<stem>_m` or `<stem>_wavelengths`.
    fn length(&mut self, stem: &str, wavelength: f64) -> Result<Option<f64>> {
        let metres = self.get::<f64>(&format!("{stem}_m"))?;
        let waves = self.get::<f64>(&format!("{stem}_wavelengths"))?;
        match (metres, waves) {
            (Some(_), Some(_)) => Err(Error::InvalidConfig(format!(
                "{stem} given in both metres and wavelengths"
            ))),
            (Some(m), None) => Ok(Some(m)),
            (None, w) => Ok(w.map(|w| w * wavelength)),
        }
    }

    fn remaining(&self) -> impl Iterator<Item = &String> {
        let mut keys: Vec<_> = self.map.keys().collect();
        keys.sort();
        keys.into_iter()
    }
}

fn build(e: &mut Entries) -> Result<ExperimentConfig> {
    let mut base = SystemConfig::defaults();
    if let Some(v) = e.get("wavelength_m")? {
        base.wavelength = v;
        // Geometry defaults scale with the wavelength.
        base.region_size = 3.0 * v;
        base.min_spacing = v / 2.0;
    }
    if let Some(v) = e.get("users")? {
        base.users = v;
    }
    if let Some(v) = e.get("antennas")? {
        base.antennas = v;
    }
    let paths: Option<Vec<usize>> = e.list("paths")?;
    base.paths_per_receiver = match paths {
        None => vec![4; base.users + 1],
        Some(p) if p.len() == 1 => vec![p[0]; base.users + 1],
        Some(p) => p,
    };
    if let Some(v) = e.length("region_size", base.wavelength)? {
        base.region_size = v;
    }
    if let Some(v) = e.length("min_spacing", base.wavelength)? {
        base.min_spacing = v;
    }
    if let Some(v) = e.power("noise_power")? {
        base.noise_power = v;
    }
    if let Some(v) = e.power("warden_noise_power")? {
        base.warden_noise_power = v;
    }
    if let Some(v) = e.power("max_power")? {
        base.max_power = v;
    }
    if let Some(v) = e.get("noise_uncertainty")? {
        base.noise_uncertainty = v;
    }
    if let Some(v) = e.get("covertness_level")? {
        base.covertness_level = v;
    }
    if let Some(v) = e.get("path_gain")? {
        base.path_gain = v;
    }

    let mut solver = SolverConfig::default();
    if let Some(v) = e.get("max_outer_iters")? {
        solver.max_outer_iters = v;
    }
    if let Some(v) = e.get("rate_tol")? {
        solver.rate_tol = v;
    }
    if let Some(v) = e.get("pda_penalty_init")? {
        solver.pda.penalty_init = v;
    }
    if let Some(v) = e.get("pda_penalty_growth")? {
        solver.pda.penalty_growth = v;
    }
    if let Some(v) = e.get("pda_max_iters")? {
        solver.pda.max_iters = v;
    }
    if let Some(v) = e.get("pda_objective_tol")? {
        solver.pda.objective_tol = v;
    }
    if let Some(v) = e.get("es_grid_step_wavelengths")? {
        solver.es_grid_step = v;
    }
    if let Some(v) = e.get("fpa_layout")? {
        solver.fpa_layout = v;
    }
    if let Some(v) = e.get("surrogate")? {
        solver.surrogate = v;
    }

    let kind: SweepKind = e
        .get("sweep")?
        .ok_or_else(|| Error::InvalidConfig("missing key \"sweep\"".into()))?;
    let values = e.list("sweep_values")?.unwrap_or_else(|| kind.default_values());
    let schemes = e.list("schemes")?.unwrap_or_else(|| Scheme::ALL.to_vec());

    Ok(ExperimentConfig {
        base,
        solver,
        sweep: Sweep { kind, values },
        schemes,
        trials: e.get("trials")?.unwrap_or(DEFAULT_TRIALS),
        seed: e.get("seed")?.unwrap_or(0),
        output_dir: e
            .get::<String>("output_dir")?
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("results")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = ExperimentConfig::parse("sweep = power\n").unwrap();
        assert_eq!(cfg.trials, 50);
        assert_eq!(cfg.sweep.values.len(), 9);
        assert_eq!(cfg.sweep.values[0], -20.0);
        assert_eq!(cfg.schemes.len(), 5);
        assert_eq!(cfg.base, SystemConfig::defaults());
    }

    #[test]
    fn units_and_comments() {
        let text = "
            # comment line
            sweep = region   # trailing comment
            sweep_values = 1, 2.5
            max_power_w = 0.5
            noise_power_dbm = -80
            min_spacing_m = 0.04
            schemes = MA-PDA, fpa-zf
            paths = 2
            surrogate = merged
        ";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.base.max_power, 0.5);
        assert_relative_eq!(cfg.base.noise_power, 1e-11, max_relative = 1e-12);
        assert_eq!(cfg.base.min_spacing, 0.04);
        assert_eq!(cfg.schemes, vec![Scheme::MaPda, Scheme::FpaZf]);
        assert_eq!(cfg.base.paths_per_receiver, vec![2, 2, 2]);
        assert_eq!(cfg.solver.surrogate, crate::sca::SurrogateForm::Merged);
        let point = cfg.sweep.apply(&cfg.base, 2.5);
        assert_relative_eq!(point.region_size, 0.25, max_relative = 1e-12);
    }

    #[test]
    fn rejects_bad_files() {
        for text in [
            "sweep = power\nbogus = 1\n",
            "sweep = power\ntrials = 0\n",
            "sweep = power\nsweep_values = 10, 0\n",
            "sweep = power\nsweep = power\n",
            "sweep = power\nmax_power_dbm = 1\nmax_power_w = 1\n",
            "sweep = antennas\nsweep_values = 1.5\n",
            "sweep = sideways\n",
            "trials = 3\n",
            "sweep = power\nnoise_uncertainty = 1\n",
            "sweep power\n",
            "sweep = power\nsurrogate = tight\n",
        ] {
            assert!(ExperimentConfig::parse(text).is_err(), "{text:?} should fail");
        }
    }
}
