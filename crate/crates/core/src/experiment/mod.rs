//! Seeded Monte-Carlo sweeps over the solver and its baselines.
//!
//! Every (sweep value, trial) pair draws one channel realization from a seed
//! that depends only on the base seed and the trial index, so all schemes and
//! all sweep values see the same paths. Results are sorted by scheme, sweep
//! value and trial before they are written, whatever order workers finish in.

mod config;
mod records;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::bsum::{run_scheme, Scheme, SolverState};
use crate::channel::{sample_scenario, PathSet, Scenario};
use crate::covertness::{covert_power_budget, min_detection_error, warden_received_power};
use crate::error::{Error, Result};
use crate::wmmse::{sum_rate, Beamformer};

pub use config::{ExperimentConfig, Sweep, SweepKind, DEFAULT_TRIALS};
pub use records::{
    attach_timings, read_records, read_records_file, write_records, write_timings, TrialRecord, VERIFY_TOL,
};

/// Environment variable that sets the worker count when no flag is given.
pub const THREADS_ENV: &str = "COVERT_MA_THREADS";

/// Streams of randomness drawn for one trial.
const STREAM_INIT: u64 = 1;
const STREAM_AOD: u64 = 2;

/// SplitMix64 mixing of (base seed, trial, stream).
pub fn derive_seed(base: u64, trial: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(trial.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hex digest of every receiver's angles and responses.
pub fn scenario_hash(scenario: &Scenario) -> String {
    let mut hasher = Sha256::new();
    for paths in std::iter::once(&scenario.warden).chain(&scenario.users) {
        hasher.update((paths.receiver_id as u64).to_le_bytes());
        for (&(theta, phi), g) in paths.angles.iter().zip(&paths.responses) {
            for v in [theta, phi, g.re, g.im] {
                hasher.update(v.to_le_bytes());
            }
        }
    }
    hasher.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Perturbs every elevation and azimuth by `max_error * u`, `u ~ U[-1, 1]`,
/// clamped to `[0, pi]`. The same seed gives the same `u` for any
/// `max_error`, so errors of different size are nested.
pub fn apply_aod_error(paths: &PathSet, max_error: f64, seed: u64) -> PathSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angles = paths
        .angles
        .iter()
        .map(|&(theta, phi)| {
            let dt: f64 = rng.random_range(-1.0..=1.0);
            let dp: f64 = rng.random_range(-1.0..=1.0);
            (
                (theta + max_error * dt).clamp(0.0, PI),
                (phi + max_error * dp).clamp(0.0, PI),
            )
        })
        .collect();
    PathSet::new(paths.receiver_id, angles, paths.responses.clone())
}

/// The channel realization of one trial at one sweep point, and the copy the
/// optimizer sees (user angles perturbed for the AoD sweep; the warden's
/// geometry is assumed known).
pub fn trial_scenarios(cfg: &ExperimentConfig, value: f64, trial: usize) -> Result<(Scenario, Scenario, u64)> {
    let seed = derive_seed(cfg.seed, trial as u64, 0);
    let point = cfg.sweep.apply(&cfg.base, value);
    let truth = Scenario::from_paths(point, sample_scenario(&cfg.base, seed))?;
    let error = cfg.sweep.aod_error(value);
    let mut seen = truth.clone();
    if error > 0.0 {
        for (k, paths) in seen.users.iter_mut().enumerate() {
            let stream = derive_seed(cfg.seed, trial as u64, STREAM_AOD + k as u64 * 16);
            *paths = apply_aod_error(paths, error, stream);
        }
    }
    Ok((truth, seen, seed))
}

fn record_for(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    value: f64,
    trial: usize,
    truth: &Scenario,
    seen: &Scenario,
    seed: u64,
) -> TrialRecord {
    let init_seed = derive_seed(cfg.seed, trial as u64, STREAM_INIT);
    let point = &truth.config;
    let p_th = covert_power_budget(
        point.warden_noise_power,
        point.noise_uncertainty,
        point.covertness_level,
    )
    .p_th;
    let start = Instant::now();
    let outcome = run_scheme(scheme, seen, &cfg.solver, init_seed);
    let wall_time = start.elapsed().as_secs_f64();
    let mut record = TrialRecord {
        scheme,
        sweep_value: value,
        trial_index: trial,
        seed,
        init_seed,
        scenario_hash: scenario_hash(truth),
        sum_rate: f64::NAN,
        warden_power: f64::NAN,
        detection_error: f64::NAN,
        iterations: 0,
        flagged: true,
        diagnostic: String::new(),
        wall_time,
        wavelength: point.wavelength,
        region_size: point.region_size,
        min_spacing: point.min_spacing,
        max_power: point.max_power,
        p_th,
        warden_noise_power: point.warden_noise_power,
        noise_uncertainty: point.noise_uncertainty,
        covertness_level: point.covertness_level,
        positions: Vec::new(),
        beamformer: Beamformer::zeros(0, 0),
        warden_paths: truth.warden.clone(),
    };
    match outcome {
        Ok(state) => fill_from_state(&mut record, &state, truth),
        Err(e) => record.diagnostic = e.to_string(),
    }
    record
}

fn fill_from_state(record: &mut TrialRecord, state: &SolverState, truth: &Scenario) {
    let channels = truth.channels(&state.array);
    let cfg = &truth.config;
    record.sum_rate = sum_rate(&state.beamformer, &channels.users, cfg.noise_power);
    record.warden_power = warden_received_power(&channels.warden, &state.beamformer);
    record.detection_error =
        min_detection_error(record.warden_power, cfg.warden_noise_power, cfg.noise_uncertainty).unwrap_or(f64::NAN);
    record.iterations = state.iteration;
    record.flagged = state.flagged;
    record.diagnostic = state.diagnostic.clone().unwrap_or_default();
    record.positions = state.array.positions.clone();
    record.beamformer = state.beamformer.clone();
}

/// Worker count: explicit request, then the environment, then all cores.
pub fn resolve_threads(requested: Option<usize>) -> Result<usize> {
    if let Some(n) = requested {
        return if n > 0 {
            Ok(n)
        } else {
            Err(Error::InvalidConfig("thread count must be positive".into()))
        };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::InvalidConfig(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs every (sweep value, trial) on a pool of `threads` workers.
pub fn run_sweep(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let items: Vec<(f64, usize)> = cfg
        .sweep
        .values
        .iter()
        .flat_map(|&v| (0..cfg.trials).map(move |t| (v, t)))
        .collect();
    let batches = pool.install(|| {
        items
            .par_iter()
            .map(|&(value, trial)| {
                let (truth, seen, seed) = trial_scenarios(cfg, value, trial)?;
                Ok(cfg
                    .schemes
                    .iter()
                    .map(|&s| record_for(cfg, s, value, trial, &truth, &seen, seed))
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut records: Vec<TrialRecord> = batches.into_iter().flatten().collect();
    sort_canonical(&mut records);
    Ok(records)
}

pub fn sort_canonical(records: &mut [TrialRecord]) {
    records.sort_by(|a, b| {
        a.scheme
            .cmp(&b.scheme)
            .then(a.sweep_value.total_cmp(&b.sweep_value))
            .then(a.trial_index.cmp(&b.trial_index))
    });
}

/// Sum-rate statistics of one scheme at one sweep value. `std` is the
/// population standard deviation (divides by the count).
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub sweep_value: f64,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    /// Mean of `rate - reference rate` over trials both schemes completed.
    pub paired_diff: Option<f64>,
}

/// Scheme that paired differences are taken against.
pub const REFERENCE_SCHEME: Scheme = Scheme::MaPda;

/// `rate(a) - rate(b)` for every trial both schemes completed at `value`.
pub fn paired_differences(records: &[TrialRecord], a: Scheme, b: Scheme, value: f64) -> Vec<f64> {
    let by_trial = |s: Scheme| -> BTreeMap<usize, &TrialRecord> {
        records
            .iter()
            .filter(|r| r.scheme == s && r.sweep_value == value && r.sum_rate.is_finite())
            .map(|r| (r.trial_index, r))
            .collect()
    };
    let rb = by_trial(b);
    by_trial(a)
        .into_iter()
        .filter_map(|(t, ra)| rb.get(&t).map(|rb| ra.sum_rate - rb.sum_rate))
        .collect()
}

pub fn aggregate(records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Scheme, u64), Vec<f64>> = BTreeMap::new();
    let mut values: BTreeMap<u64, f64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.sum_rate.is_finite()) {
        // Order-preserving key for finite floats.
        let key = ordered_key(r.sweep_value);
        values.insert(key, r.sweep_value);
        groups.entry((r.scheme, key)).or_default().push(r.sum_rate);
    }
    let has_reference = records.iter().any(|r| r.scheme == REFERENCE_SCHEME);
    groups
        .into_iter()
        .map(|((scheme, key), rates)| {
            let value = values[&key];
            let count = rates.len();
            let mean = rates.iter().sum::<f64>() / count as f64;
            let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / count as f64;
            let paired_diff = (has_reference && scheme != REFERENCE_SCHEME)
                .then(|| paired_differences(records, scheme, REFERENCE_SCHEME, value))
                .filter(|d| !d.is_empty())
                .map(|d| d.iter().sum::<f64>() / d.len() as f64);
            SummaryRow {
                scheme,
                sweep_value: value,
                count,
                mean,
                std: var.sqrt(),
                min: rates.iter().copied().fold(f64::INFINITY, f64::min),
                max: rates.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                paired_diff,
            }
        })
        .collect()
}

fn ordered_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record([
        "scheme",
        "sweep_value",
        "count",
        "mean",
        "std",
        "min",
        "max",
        "paired_diff_vs_ma_pda",
    ])?;
    for r in rows {
        writer.write_record([
            r.scheme.name().to_string(),
            r.sweep_value.to_string(),
            r.count.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            r.min.to_string(),
            r.max.to_string(),
            r.paired_diff.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes `records.csv`, `timings.csv`, `summary.csv` and one
/// `curve_<scheme>.dat` per scheme into `dir`.
pub fn write_outputs(dir: &Path, sweep: SweepKind, records: &[TrialRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_records(BufWriter::new(File::create(dir.join("records.csv"))?), records)?;
    write_timings(BufWriter::new(File::create(dir.join("timings.csv"))?), records)?;
    let summary = aggregate(records);
    write_summary(BufWriter::new(File::create(dir.join("summary.csv"))?), &summary)?;
    let mut schemes: Vec<Scheme> = summary.iter().map(|r| r.scheme).collect();
    schemes.dedup();
    for scheme in schemes {
        let mut out = BufWriter::new(File::create(dir.join(format!("curve_{}.dat", scheme.name())))?);
        writeln!(out, "# {} mean_sum_rate", sweep.name())?;
        for row in summary.iter().filter(|r| r.scheme == scheme) {
            writeln!(out, "{} {}", row.sweep_value, row.mean)?;
        }
        out.flush()?;
    }
    Ok(())
}

/// Reads `records.csv` and, if present, the neighbouring `timings.csv`.
pub fn read_outputs(dir: &Path) -> Result<Vec<TrialRecord>> {
    let mut records = read_records_file(&dir.join("records.csv"))?;
    let timings = dir.join("timings.csv");
    if timings.exists() {
        attach_timings(File::open(timings)?, &mut records)?;
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::SystemConfig;

    fn fake(scheme: Scheme, trial: usize, rate: f64) -> TrialRecord {
        let cfg = SystemConfig::defaults();
        TrialRecord {
            scheme,
            sweep_value: 10.0,
            trial_index: trial,
            seed: 1,
            init_seed: 2,
            scenario_hash: "ab".into(),
            sum_rate: rate,
            warden_power: 0.0,
            detection_error: 1.0,
            iterations: 1,
            flagged: false,
            diagnostic: String::new(),
            wall_time: 0.0,
            wavelength: cfg.wavelength,
            region_size: cfg.region_size,
            min_spacing: cfg.min_spacing,
            max_power: cfg.max_power,
            p_th: 1e-14,
            warden_noise_power: cfg.warden_noise_power,
            noise_uncertainty: cfg.noise_uncertainty,
            covertness_level: cfg.covertness_level,
            positions: Vec::new(),
            beamformer: Beamformer::zeros(0, 0),
            warden_paths: PathSet::new(0, Vec::new(), Vec::new()),
        }
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate(&[fake(Scheme::FpaZf, 0, 2.5)]);
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].mean, one[0].std, one[0].count), (2.5, 0.0, 1));

        let equal = aggregate(&[fake(Scheme::FpaZf, 0, 4.0), fake(Scheme::FpaZf, 1, 4.0)]);
        assert_eq!(equal[0].std, 0.0);

        let spread = aggregate(&[fake(Scheme::FpaZf, 0, 1.0), fake(Scheme::FpaZf, 1, 3.0)]);
        assert_eq!(spread[0].mean, 2.0);
        // Population convention: sqrt(((1-2)^2 + (3-2)^2) / 2) = 1.
        assert_eq!(spread[0].std, 1.0);
    }

    #[test]
    fn paired_difference_against_reference() {
        let records = vec![
            fake(Scheme::MaPda, 0, 5.0),
            fake(Scheme::MaPda, 1, 6.0),
            fake(Scheme::FpaPda, 0, 4.0),
            fake(Scheme::FpaPda, 1, 4.5),
        ];
        let rows = aggregate(&records);
        let fpa = rows.iter().find(|r| r.scheme == Scheme::FpaPda).unwrap();
        assert_eq!(fpa.paired_diff, Some(-1.25));
        assert_eq!(
            paired_differences(&records, Scheme::MaPda, Scheme::FpaPda, 10.0),
            vec![1.0, 1.5]
        );
    }

    #[test]
    fn seeds_are_distinct_per_stream() {
        let a = derive_seed(7, 3, 0);
        assert_ne!(a, derive_seed(7, 3, 1));
        assert_ne!(a, derive_seed(7, 4, 0));
        assert_ne!(a, derive_seed(8, 3, 0));
        assert_eq!(a, derive_seed(7, 3, 0));
    }

    #[test]
    fn zero_aod_error_is_identity() {
        let cfg = SystemConfig::defaults();
        let paths = sample_scenario(&cfg, 4).remove(1);
        assert_eq!(apply_aod_error(&paths, 0.0, 9), paths);
        let moved = apply_aod_error(&paths, 0.3, 9);
        assert_ne!(moved, paths);
        assert!(moved
            .angles
            .iter()
            .all(|&(t, p)| (0.0..=PI).contains(&t) && (0.0..=PI).contains(&p)));
    }
}
