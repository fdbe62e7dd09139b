//! Outer block-successive loop and the comparison schemes.
//!
//! Every outer iteration refreshes `phi` then `beta`, updates the beamformer
//! and then moves the antennas one at a time. Each block step lowers the
//! WMMSE surrogate, so the recorded sum rate is non-decreasing.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{AntennaArray, ChannelVector, Position, Scenario, SystemConfig};
use crate::covertness::{covert_power_budget, warden_received_power};
use crate::error::{Error, Result};
use crate::pda::{block_objective, build_block_data, run_pda, PdaConfig};
use crate::sca::{grid_search_antenna, sca_update_antenna, AntennaBlock, SurrogateForm};
use crate::wmmse::{sum_rate, update_auxiliary, AuxiliaryState, Beamformer};

/// Attempts allowed when drawing a random initial layout.
pub const INIT_ATTEMPTS: usize = 100_000;
/// Relative slack on the covertness cap when accepting a moved antenna.
const ACCEPT_TOL: f64 = 1e-9;

/// Geometry of the fixed-position reference array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FpaLayout {
    /// Near-square grid, row-major, centred in the region.
    #[default]
    Planar,
    /// A single row through the centre of the region.
    Linear,
}

impl FromStr for FpaLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "planar" | "upa" => Ok(FpaLayout::Planar),
            "linear" | "ula" => Ok(FpaLayout::Linear),
            other => Err(Error::InvalidConfig(format!("unknown FPA layout {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    /// Sum-rate increase (bits/s/Hz) at or below which the loop stops.
    pub rate_tol: f64,
    pub pda: PdaConfig,
    /// Lattice spacing of the exhaustive position search, in wavelengths.
    pub es_grid_step: f64,
    pub fpa_layout: FpaLayout,
    pub surrogate: SurrogateForm,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_outer_iters: 100,
            rate_tol: 1e-3,
            pda: PdaConfig::default(),
            es_grid_step: 0.05,
            fpa_layout: FpaLayout::Planar,
            surrogate: SurrogateForm::PerTerm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub beamformer: Beamformer,
    pub array: AntennaArray,
    pub aux: AuxiliaryState,
    /// Sum rate after initialization and after every outer iteration.
    pub sum_rate_trace: Vec<f64>,
    pub iteration: usize,
    /// Set when a subproblem was infeasible, ZF needed regularization, or a
    /// block failed.
    pub flagged: bool,
    pub diagnostic: Option<String>,
}

impl SolverState {
    pub fn sum_rate(&self) -> f64 {
        *self.sum_rate_trace.last().unwrap_or(&0.0)
    }
}

/// The five compared schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    MaPda,
    EsPda,
    MaZf,
    FpaPda,
    FpaZf,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::MaPda,
        Scheme::EsPda,
        Scheme::MaZf,
        Scheme::FpaPda,
        Scheme::FpaZf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::MaPda => "MA-PDA",
            Scheme::EsPda => "ES-PDA",
            Scheme::MaZf => "MA-ZF",
            Scheme::FpaPda => "FPA-PDA",
            Scheme::FpaZf => "FPA-ZF",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|scheme| scheme.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme {s:?}")))
    }
}

/// Draws one candidate layout: N i.i.d. uniform points in the region.
pub fn draw_layout<R: Rng>(cfg: &SystemConfig, rng: &mut R) -> AntennaArray {
    let a = cfg.region_size;
    AntennaArray::new(
        (0..cfg.antennas)
            .map(|_| Position::new(rng.random_range(0.0..=a), rng.random_range(0.0..=a)))
            .collect(),
    )
}

/// Uniform random layout with every pair at least `d_min` apart, together
/// with the number of draws it took.
pub fn init_positions_counted(cfg: &SystemConfig, seed: u64) -> Result<(AntennaArray, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 1..=INIT_ATTEMPTS {
        let array = draw_layout(cfg, &mut rng);
        if array.min_pairwise_distance() >= cfg.min_spacing {
            return Ok((array, attempt));
        }
    }
    Err(Error::Packing {
        count: cfg.antennas,
        spacing: cfg.min_spacing,
        region: cfg.region_size,
        attempts: INIT_ATTEMPTS,
    })
}

pub fn init_positions(cfg: &SystemConfig, seed: u64) -> Result<AntennaArray> {
    init_positions_counted(cfg, seed).map(|(array, _)| array)
}

/// Fixed reference layout at half-wavelength spacing (or `d_min` if larger).
pub fn fpa_layout(cfg: &SystemConfig, layout: FpaLayout) -> Result<AntennaArray> {
    let n = cfg.antennas;
    let spacing = (cfg.wavelength / 2.0).max(cfg.min_spacing);
    let (cols, rows) = match layout {
        FpaLayout::Planar => {
            let cols = (n as f64).sqrt().ceil() as usize;
            (cols, n.div_ceil(cols))
        }
        FpaLayout::Linear => (n, 1),
    };
    let width = (cols - 1) as f64 * spacing;
    let height = (rows - 1) as f64 * spacing;
    if width > cfg.region_size || height > cfg.region_size {
        return Err(Error::InvalidConfig(format!(
            "fixed {cols}x{rows} array at {spacing} m does not fit a {} m region",
            cfg.region_size
        )));
    }
    let x0 = (cfg.region_size - width) / 2.0;
    let y0 = (cfg.region_size - height) / 2.0;
    Ok(AntennaArray::new(
        (0..n)
            .map(|i| Position::new(x0 + (i % cols) as f64 * spacing, y0 + (i / cols) as f64 * spacing))
            .collect(),
    ))
}

/// A zero-forcing beamformer and whether regularization was needed.
#[derive(Debug, Clone, PartialEq)]
pub struct ZfBeamformer {
    pub beamformer: Beamformer,
    pub regularized: bool,
}

/// `H (H^H H)^-1`, unit columns scaled to `p_max / K` each, then scaled down
/// uniformly until the warden receives at most `p_th`.
pub fn init_zf(users: &[ChannelVector], p_max: f64, h0: &ChannelVector, p_th: f64) -> ZfBeamformer {
    let n = h0.len();
    let k = users.len();
    let h = DMatrix::from_fn(n, k, |row, col| users[col].0[row]);
    let gram = h.adjoint() * &h;
    let trace: f64 = (0..k).map(|i| gram[(i, i)].re).sum();
    let well_posed = gram.clone().cholesky().and_then(|chol| {
        let diag_ratio = (0..k)
            .map(|i| chol.l_dirty()[(i, i)].re.powi(2))
            .fold(f64::INFINITY, f64::min)
            / (trace / k as f64);
        (diag_ratio > 1e-12).then_some(chol)
    });
    let (w, regularized) = match well_posed {
        Some(chol) => (&h * chol.inverse(), false),
        None => {
            let mut reg = gram;
            let eps = 1e-12 * trace.max(f64::MIN_POSITIVE) / k as f64;
            for i in 0..k {
                reg[(i, i)] += Complex64::new(eps, 0.0);
            }
            let inv = reg
                .cholesky()
                .map(|c| c.inverse())
                .unwrap_or_else(|| DMatrix::zeros(k, k));
            (&h * inv, true)
        }
    };
    let per_user = (p_max / k as f64).sqrt();
    let mut w = w;
    for mut col in w.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 && norm.is_finite() {
            col *= Complex64::new(per_user / norm, 0.0);
        } else {
            col.fill(Complex64::new(0.0, 0.0));
        }
    }
    let mut w = Beamformer(w);
    let warden = warden_received_power(h0, &w);
    if warden > p_th {
        w = Beamformer(&w.0 * Complex64::new((p_th / warden).sqrt(), 0.0));
    }
    ZfBeamformer {
        beamformer: w,
        regularized,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BeamMode {
    Pda,
    Zf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PositionMode {
    Sca,
    Grid(f64),
    Fixed,
}

struct Loop<'a> {
    scenario: &'a Scenario,
    cfg: &'a SolverConfig,
    p_th: f64,
    beam: BeamMode,
    positions: PositionMode,
}

impl Loop<'_> {
    fn rate(&self, w: &Beamformer, array: &AntennaArray) -> f64 {
        sum_rate(
            w,
            &self.scenario.channels(array).users,
            self.scenario.config.noise_power,
        )
    }

    fn zf(&self, array: &AntennaArray) -> ZfBeamformer {
        let ch = self.scenario.channels(array);
        init_zf(&ch.users, self.scenario.config.max_power, &ch.warden, self.p_th)
    }

    fn beam_block(&self, w: &Beamformer, aux: &AuxiliaryState, array: &AntennaArray) -> Result<(Beamformer, bool)> {
        match self.beam {
            BeamMode::Zf => {
                let zf = self.zf(array);
                Ok((zf.beamformer, zf.regularized))
            }
            BeamMode::Pda => {
                let ch = self.scenario.channels(array);
                let data = build_block_data(aux, &ch.users, &ch.warden);
                let out = run_pda(&data, w, self.scenario.config.max_power, self.p_th, &self.cfg.pda)?;
                let prev = block_objective(&data, w);
                let next = block_objective(&data, &out.beamformer);
                // The previous beamformer is feasible, so never accept a worse one.
                if next <= prev || !w.is_finite() {
                    Ok((out.beamformer, false))
                } else {
                    Ok((w.clone(), false))
                }
            }
        }
    }

    fn position_block(&self, w: &Beamformer, aux: &AuxiliaryState, array: &mut AntennaArray) -> Result<bool> {
        let mut flagged = false;
        for n in 0..array.len() {
            let block = AntennaBlock::new(n, w, aux, self.scenario, array);
            let current = array.positions[n];
            let candidate = match self.positions {
                PositionMode::Fixed => return Ok(false),
                PositionMode::Grid(step) => grid_search_antenna(&block, current, step, self.p_th),
                PositionMode::Sca => {
                    let update = sca_update_antenna(n, w, aux, self.scenario, array, self.p_th, self.cfg.surrogate)?;
                    flagged |= update.flagged;
                    update.position
                }
            };
            let feasible =
                block.placement_ok(candidate) && block.warden_power(candidate) <= self.p_th * (1.0 + ACCEPT_TOL);
            if feasible && block.objective(candidate) <= block.objective(current) {
                array.positions[n] = candidate;
            }
        }
        Ok(flagged)
    }

    fn run(&self, array: AntennaArray) -> Result<SolverState> {
        let cfg = &self.scenario.config;
        let users = cfg.users;
        let zf = self.zf(&array);
        let mut state = SolverState {
            sum_rate_trace: vec![self.rate(&zf.beamformer, &array)],
            beamformer: zf.beamformer,
            array,
            aux: AuxiliaryState::degenerate(users),
            iteration: 0,
            flagged: zf.regularized,
            diagnostic: zf.regularized.then(|| "zero-forcing needed regularization".to_string()),
        };

        for m in 1..=self.cfg.max_outer_iters {
            let channels = self.scenario.channels(&state.array);
            let aux = match update_auxiliary(&state.beamformer, &channels.users, cfg.noise_power) {
                Ok(aux) => aux,
                Err(e) => {
                    state.diagnostic = Some(format!("iteration {m}: {e}"));
                    state.flagged = true;
                    break;
                }
            };
            let step = self
                .beam_block(&state.beamformer, &aux, &state.array)
                .and_then(|(w, reg)| {
                    let mut array = state.array.clone();
                    let moved = self.position_block(&w, &aux, &mut array)?;
                    Ok((w, array, reg || moved))
                });
            let (w, array, flagged) = match step {
                Ok(v) => v,
                Err(e) => {
                    state.diagnostic = Some(format!("iteration {m}: {e}"));
                    state.flagged = true;
                    break;
                }
            };
            let rate = self.rate(&w, &array);
            let prev = state.sum_rate();
            if self.beam == BeamMode::Zf && rate < prev {
                // Zero-forcing steps are not monotone; keep the better layout.
                state.aux = aux;
                break;
            }
            state.beamformer = w;
            state.array = array;
            state.aux = aux;
            state.iteration = m;
            state.flagged |= flagged;
            if flagged && state.diagnostic.is_none() {
                state.diagnostic = Some(format!("iteration {m}: infeasible position subproblem"));
            }
            state.sum_rate_trace.push(rate);
            if rate - prev <= self.cfg.rate_tol {
                break;
            }
        }
        Ok(state)
    }
}

fn covert_budget(cfg: &SystemConfig) -> f64 {
    covert_power_budget(cfg.warden_noise_power, cfg.noise_uncertainty, cfg.covertness_level).p_th
}

fn run_loop(
    scenario: &Scenario,
    cfg: &SolverConfig,
    beam: BeamMode,
    positions: PositionMode,
    array: AntennaArray,
) -> Result<SolverState> {
    Loop {
        scenario,
        cfg,
        p_th: covert_budget(&scenario.config),
        beam,
        positions,
    }
    .run(array)
}

/// Joint beamforming and antenna placement from a random feasible layout.
pub fn run_bsum(scenario: &Scenario, cfg: &SolverConfig, seed: u64) -> Result<SolverState> {
    let array = init_positions(&scenario.config, seed)?;
    run_loop(scenario, cfg, BeamMode::Pda, PositionMode::Sca, array)
}

/// The same loop from a given layout.
pub fn run_bsum_from(scenario: &Scenario, cfg: &SolverConfig, array: AntennaArray) -> Result<SolverState> {
    run_loop(scenario, cfg, BeamMode::Pda, PositionMode::Sca, array)
}

/// Beamforming only, on the fixed reference layout.
pub fn run_fpa(scenario: &Scenario, cfg: &SolverConfig) -> Result<SolverState> {
    let array = fpa_layout(&scenario.config, cfg.fpa_layout)?;
    run_loop(scenario, cfg, BeamMode::Pda, PositionMode::Fixed, array)
}

/// Per-antenna lattice search with spacing `grid_step` (metres) in place of SCA.
pub fn run_exhaustive_positions(
    scenario: &Scenario,
    cfg: &SolverConfig,
    grid_step: f64,
    seed: u64,
) -> Result<SolverState> {
    if !(grid_step > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "grid step must be positive, got {grid_step}"
        )));
    }
    let array = init_positions(&scenario.config, seed)?;
    run_loop(scenario, cfg, BeamMode::Pda, PositionMode::Grid(grid_step), array)
}

pub fn run_exhaustive_from(
    scenario: &Scenario,
    cfg: &SolverConfig,
    grid_step: f64,
    array: AntennaArray,
) -> Result<SolverState> {
    if !(grid_step > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "grid step must be positive, got {grid_step}"
        )));
    }
    run_loop(scenario, cfg, BeamMode::Pda, PositionMode::Grid(grid_step), array)
}

/// Zero-forcing beamforming with SCA antenna placement.
pub fn run_ma_zf(scenario: &Scenario, cfg: &SolverConfig, seed: u64) -> Result<SolverState> {
    let array = init_positions(&scenario.config, seed)?;
    run_loop(scenario, cfg, BeamMode::Zf, PositionMode::Sca, array)
}

/// Zero-forcing on the fixed reference layout.
pub fn run_fpa_zf(scenario: &Scenario, cfg: &SolverConfig) -> Result<SolverState> {
    let array = fpa_layout(&scenario.config, cfg.fpa_layout)?;
    run_loop(scenario, cfg, BeamMode::Zf, PositionMode::Fixed, array)
}

/// Dispatches one scheme; `seed` drives the random initial layout.
pub fn run_scheme(scheme: Scheme, scenario: &Scenario, cfg: &SolverConfig, seed: u64) -> Result<SolverState> {
    match scheme {
        Scheme::MaPda => run_bsum(scenario, cfg, seed),
        Scheme::EsPda => run_exhaustive_positions(scenario, cfg, cfg.es_grid_step * scenario.config.wavelength, seed),
        Scheme::MaZf => run_ma_zf(scenario, cfg, seed),
        Scheme::FpaPda => run_fpa(scenario, cfg),
        Scheme::FpaZf => run_fpa_zf(scenario, cfg),
    }
}
