//! Monte-Carlo experiments: seeded frame simulation, parameter sweeps,
//! the adaptive pilot experiment, and CSV/JSON export.
//!
//! Every frame draws its channel, symbols and noise from a seed derived from
//! `(master_seed, frame index, grid point)`, and all requested algorithms
//! are evaluated on that same realization. Frames may run in parallel;
//! per-frame results are collected in frame order and summed sequentially,
//! so results do not depend on scheduling.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{run_adaptive, AdaptiveConfig, AdaptiveState};
use crate::detection::{compute_ser, genie_align, qpsk_detect, SerEstimate, SymbolStreams};
use crate::equalizers::{
    apply_bank, blind_mre_subspace, estimate_r, mmse_equalizer, pilot_normal_ops, sb_mre, zf_equalizer, EqMode,
    EqualizerBank, MreQuadratic,
};
use crate::error::{Error, Result};
use crate::model::{
    build_stacked_channel, draw_channel, generate_frame, noise_variance_from_snr, simulate_reception, StackedChannel,
    SystemConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "ZF")]
    Zf,
    #[serde(rename = "MMSE")]
    Mmse,
    #[serde(rename = "BMRE")]
    Bmre,
    #[serde(rename = "BMRE_RC")]
    BmreRc,
    #[serde(rename = "SBMRE")]
    Sbmre,
    #[serde(rename = "SBMRE_RC")]
    SbmreRc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Zf,
        Algorithm::Mmse,
        Algorithm::Bmre,
        Algorithm::BmreRc,
        Algorithm::Sbmre,
        Algorithm::SbmreRc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Zf => "ZF",
            Algorithm::Mmse => "MMSE",
            Algorithm::Bmre => "BMRE",
            Algorithm::BmreRc => "BMRE_RC",
            Algorithm::Sbmre => "SBMRE",
            Algorithm::SbmreRc => "SBMRE_RC",
        }
    }

    pub fn is_blind(self) -> bool {
        matches!(self, Algorithm::Bmre | Algorithm::BmreRc)
    }

    pub fn uses_pilots(self) -> bool {
        matches!(self, Algorithm::Sbmre | Algorithm::SbmreRc)
    }

    fn mode(self) -> Option<EqMode> {
        match self {
            Algorithm::Bmre | Algorithm::Sbmre => Some(EqMode::Full),
            Algorithm::BmreRc | Algorithm::SbmreRc => Some(EqMode::Reduced),
            Algorithm::Zf | Algorithm::Mmse => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

/// Parses a comma separated algorithm list such as `ZF,MMSE,SBMRE`.
pub fn parse_algorithms(list: &str) -> Result<Vec<Algorithm>> {
    let mut out = Vec::new();
    for part in list.split(',').filter(|p| !p.trim().is_empty()) {
        let a: Algorithm = part.parse()?;
        if !out.contains(&a) {
            out.push(a);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Sweep {
    Snr(Vec<f64>),
    Pilots(Vec<usize>),
    Lambda(Vec<f64>),
}

impl Sweep {
    pub fn len(&self) -> usize {
        match self {
            Sweep::Snr(v) | Sweep::Lambda(v) => v.len(),
            Sweep::Pilots(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Values of the swept parameters at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub snr_db: f64,
    pub num_pilots: usize,
    pub lambda: f64,
}

impl GridPoint {
    pub fn of(cfg: &SystemConfig) -> Self {
        Self {
            snr_db: cfg.snr_db,
            num_pilots: cfg.num_pilots,
            lambda: cfg.lambda,
        }
    }

    pub fn apply(&self, base: &SystemConfig) -> SystemConfig {
        SystemConfig {
            snr_db: self.snr_db,
            num_pilots: self.num_pilots,
            lambda: self.lambda,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub base: SystemConfig,
    pub algorithms: Vec<Algorithm>,
    pub frames: usize,
    pub sweep: Option<Sweep>,
    pub master_seed: u64,
    /// Simulate with σ² = 0 regardless of `snr_db`.
    #[serde(default)]
    pub noise_free: bool,
}

impl ExperimentSpec {
    pub fn new(base: SystemConfig, algorithms: Vec<Algorithm>, frames: usize, master_seed: u64) -> Self {
        Self {
            base,
            algorithms,
            frames,
            sweep: None,
            master_seed,
            noise_free: false,
        }
    }

    pub fn with_sweep(mut self, sweep: Sweep) -> Self {
        self.sweep = Some(sweep);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms requested".into()));
        }
        if self.frames == 0 {
            return Err(Error::Config("frames must be >= 1".into()));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.is_empty() {
                return Err(Error::Config("sweep axis is empty".into()));
            }
        }
        for p in self.grid() {
            let cfg = p.apply(&self.base);
            cfg.validate()?;
            if cfg.num_pilots >= cfg.frame_len {
                return Err(Error::Config(format!(
                    "N_p = {} leaves no data symbols in a frame of {}",
                    cfg.num_pilots, cfg.frame_len
                )));
            }
        }
        Ok(())
    }

    /// Grid points in sweep order; the base point alone without a sweep.
    pub fn grid(&self) -> Vec<GridPoint> {
        let base = GridPoint::of(&self.base);
        match &self.sweep {
            None => vec![base],
            Some(Sweep::Snr(v)) => v.iter().map(|&snr_db| GridPoint { snr_db, ..base }).collect(),
            Some(Sweep::Pilots(v)) => v.iter().map(|&num_pilots| GridPoint { num_pilots, ..base }).collect(),
            Some(Sweep::Lambda(v)) => v.iter().map(|&lambda| GridPoint { lambda, ..base }).collect(),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of frame `frame` at `point`.
pub fn frame_seed(master_seed: u64, frame: usize, point: &GridPoint) -> u64 {
    [
        frame as u64,
        point.snr_db.to_bits(),
        point.num_pilots as u64,
        point.lambda.to_bits(),
    ]
    .into_iter()
    .fold(splitmix64(master_seed), |h, v| splitmix64(h ^ v))
}

/// Data-symbol region `[N_p, N_s)` used for SER.
pub fn data_region(cfg: &SystemConfig) -> Range<usize> {
    cfg.num_pilots.max(cfg.window - 1)..cfg.frame_len
}

/// Cached intermediate results shared by the algorithms of one frame.
struct FrameWork<'a> {
    cfg: &'a SystemConfig,
    rx: crate::model::ReceivedWindows,
    frame: crate::model::Frame,
    channel: crate::model::ChannelSet,
    stacked: Option<StackedChannel>,
    r_full: Option<MreQuadratic>,
    r_reduced: Option<MreQuadratic>,
}

impl FrameWork<'_> {
    fn stacked(&mut self) -> Result<&StackedChannel> {
        if self.stacked.is_none() {
            self.stacked = Some(build_stacked_channel(&self.channel, self.cfg.window)?);
        }
        Ok(self.stacked.as_ref().unwrap())
    }

    fn quadratic(&mut self, mode: EqMode) -> Result<&MreQuadratic> {
        let slot = match mode {
            EqMode::Full => &mut self.r_full,
            EqMode::Reduced => &mut self.r_reduced,
        };
        if slot.is_none() {
            *slot = Some(estimate_r(&self.rx, self.cfg, mode)?);
        }
        Ok(slot.as_ref().unwrap())
    }

    fn bank(&mut self, algo: Algorithm) -> Result<EqualizerBank> {
        match algo {
            Algorithm::Zf => zf_equalizer(self.stacked()?),
            Algorithm::Mmse => {
                let sigma2 = self.rx.sigma2();
                mmse_equalizer(self.stacked()?, sigma2)
            }
            Algorithm::Bmre | Algorithm::BmreRc => {
                let cfg = self.cfg;
                blind_mre_subspace(self.quadratic(algo.mode().unwrap())?, cfg)
            }
            Algorithm::Sbmre | Algorithm::SbmreRc => {
                let mode = algo.mode().unwrap();
                let cfg = self.cfg;
                let ops = pilot_normal_ops(&self.rx, &self.frame, cfg, mode)?;
                let r = self.quadratic(mode)?;
                Ok(sb_mre(&ops, r, cfg.lambda, cfg)?.bank)
            }
        }
    }
}

/// Simulates one frame and evaluates every algorithm on it, in order.
pub fn simulate_frame(
    cfg: &SystemConfig,
    algorithms: &[Algorithm],
    seed: u64,
    noise_free: bool,
) -> Result<Vec<SerEstimate>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channel = draw_channel(cfg, &mut rng)?;
    let frame = generate_frame(cfg, &mut rng)?;
    let sigma2 = if noise_free { 0.0 } else { noise_variance_from_snr(cfg) };
    let rx = simulate_reception(&channel, &frame, cfg.window, sigma2, &mut rng)?;
    let truth = SymbolStreams::from_frame(&frame);
    let region = data_region(cfg);
    let mut work = FrameWork {
        cfg,
        rx,
        frame,
        channel,
        stacked: None,
        r_full: None,
        r_reduced: None,
    };
    algorithms
        .iter()
        .map(|&algo| {
            let bank = work.bank(algo)?;
            let mut est = apply_bank(&bank, &work.rx, 0)?;
            if algo.is_blind() {
                est = genie_align(&est, &truth, region.clone())?.aligned;
            }
            compute_ser(&qpsk_detect(&est), &truth, region.clone())
        })
        .collect()
}

/// Error/symbol counts of one algorithm at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub frames: u64,
    pub symbols: u64,
    pub errors: u64,
    /// Sum and sum of squares of per-frame SER, for frame-level spread.
    pub frame_ser_sum: f64,
    pub frame_ser_sq_sum: f64,
}

impl Tally {
    pub fn add(&mut self, e: &SerEstimate) {
        self.frames += 1;
        self.symbols += e.total;
        self.errors += e.errors;
        let s = e.ser();
        self.frame_ser_sum += s;
        self.frame_ser_sq_sum += s * s;
    }

    pub fn ser(&self) -> f64 {
        self.errors as f64 / self.symbols as f64
    }

    /// SER with zero errors floored at `1/symbols`.
    pub fn ser_floored(&self) -> f64 {
        self.errors.max(1) as f64 / self.symbols as f64
    }

    pub fn estimate(&self) -> Result<SerEstimate> {
        SerEstimate::new(self.errors, self.symbols)
    }

    /// Standard error of the SER estimate treating frames as the
    /// independent unit (channel draws dominate the spread).
    pub fn std_error(&self) -> f64 {
        let n = self.frames as f64;
        if self.frames < 2 {
            return f64::INFINITY;
        }
        let mean = self.frame_ser_sum / n;
        let var = ((self.frame_ser_sq_sum - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub point: GridPoint,
    pub tallies: Vec<(Algorithm, Tally)>,
}

impl PointResult {
    pub fn tally(&self, algo: Algorithm) -> Option<&Tally> {
        self.tallies.iter().find(|(a, _)| *a == algo).map(|(_, t)| t)
    }
}

/// Runs `spec.frames` frames at `point`.
pub fn run_frames(spec: &ExperimentSpec, point: &GridPoint) -> Result<PointResult> {
    let cfg = point.apply(&spec.base);
    cfg.validate()?;
    if spec.algorithms.is_empty() {
        return Err(Error::Config("no algorithms requested".into()));
    }
    let per_frame: Vec<Vec<SerEstimate>> = (0..spec.frames)
        .into_par_iter()
        .map(|f| {
            let seed = frame_seed(spec.master_seed, f, point);
            simulate_frame(&cfg, &spec.algorithms, seed, spec.noise_free).map_err(|e| Error::Frame {
                frame: f,
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut tallies: Vec<(Algorithm, Tally)> = spec.algorithms.iter().map(|&a| (a, Tally::default())).collect();
    for frame in &per_frame {
        for ((_, tally), est) in tallies.iter_mut().zip(frame) {
            tally.add(est);
        }
    }
    Ok(PointResult { point: *point, tallies })
}

/// One exported result line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algo: Algorithm,
    pub snr_db: f64,
    pub np: usize,
    pub lambda: f64,
    pub frames: u64,
    pub symbols: u64,
    pub errors: u64,
    pub ser: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub master_seed: u64,
    pub frames_per_point: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub metadata: Metadata,
    pub rows: Vec<ResultRow>,
    #[serde(skip)]
    pub points: Vec<PointResult>,
}

impl ExperimentResult {
    pub fn row(&self, algo: Algorithm, point_index: usize) -> Option<&ResultRow> {
        let per_point = self.rows.len() / self.points.len().max(1);
        self.rows
            .iter()
            .skip(point_index * per_point)
            .take(per_point)
            .find(|r| r.algo == algo)
    }
}

pub fn run_sweep(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let started = Instant::now();
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for point in spec.grid() {
        let res = run_frames(spec, &point)?;
        for (algo, tally) in &res.tallies {
            rows.push(ResultRow {
                algo: *algo,
                snr_db: point.snr_db,
                np: point.num_pilots,
                lambda: point.lambda,
                frames: tally.frames,
                symbols: tally.symbols,
                errors: tally.errors,
                ser: tally.ser_floored(),
            });
        }
        points.push(res);
    }
    Ok(ExperimentResult {
        metadata: Metadata {
            master_seed: spec.master_seed,
            frames_per_point: spec.frames,
            wall_time_s: started.elapsed().as_secs_f64(),
        },
        rows,
        points,
    })
}

/// One line of an adaptive trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub np: usize,
    pub ser: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveTrace {
    pub rows: Vec<TraceRow>,
    pub converged: bool,
    pub final_state: AdaptiveState,
}

impl From<AdaptiveState> for AdaptiveTrace {
    fn from(state: AdaptiveState) -> Self {
        Self {
            rows: state
                .history
                .iter()
                .map(|h| TraceRow {
                    iter: h.iter,
                    np: h.np,
                    ser: h.ser,
                    loss: h.loss,
                })
                .collect(),
            converged: state.converged,
            final_state: state,
        }
    }
}

fn check_adaptive_spec(spec: &ExperimentSpec, acfg: &AdaptiveConfig) -> Result<()> {
    spec.base.validate()?;
    acfg.validate()?;
    if spec.sweep.is_some() {
        return Err(Error::Config(
            "the adaptive experiment runs at a single grid point".into(),
        ));
    }
    if spec.algorithms.len() != 1 {
        return Err(Error::Config(format!(
            "the adaptive experiment needs exactly one algorithm, got {}",
            spec.algorithms.len()
        )));
    }
    if acfg.np_min < spec.base.window || acfg.np_max >= spec.base.frame_len {
        return Err(Error::Config(format!(
            "pilot bounds [{}, {}] must lie in [N, N_s) = [{}, {})",
            acfg.np_min, acfg.np_max, spec.base.window, spec.base.frame_len
        )));
    }
    if spec.frames == 0 {
        return Err(Error::Config("frames must be >= 1".into()));
    }
    Ok(())
}

/// Adaptive loop with a caller-supplied SER oracle.
pub fn run_adaptive_experiment_with(
    spec: &ExperimentSpec,
    acfg: &AdaptiveConfig,
    oracle: impl FnMut(usize) -> Result<f64>,
) -> Result<AdaptiveTrace> {
    check_adaptive_spec(spec, acfg)?;
    Ok(run_adaptive(oracle, acfg)?.into())
}

/// Adaptive loop where each iteration measures the SER with
/// `spec.frames` Monte-Carlo frames at the current pilot count.
pub fn run_adaptive_experiment(spec: &ExperimentSpec, acfg: &AdaptiveConfig) -> Result<AdaptiveTrace> {
    run_adaptive_experiment_with(spec, acfg, |np| {
        let point = GridPoint {
            num_pilots: np,
            ..GridPoint::of(&spec.base)
        };
        let res = run_frames(spec, &point)?;
        Ok(res.tallies[0].1.ser_floored())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(Error::Config(format!("unknown format {other:?}, expected csv or json"))),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_owned(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |e| Error::Format {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

/// Result rows as CSV text, header `algo,snr_db,np,lambda,frames,symbols,errors,ser`.
pub fn rows_to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format {
        path: "<memory>".into(),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render(result: &ExperimentResult, format: ExportFormat) -> Result<String> {
    match format {
        ExportFormat::Csv => {
            if result.rows.is_empty() {
                return Ok("algo,snr_db,np,lambda,frames,symbols,errors,ser\n".into());
            }
            rows_to_csv(&result.rows)
        }
        ExportFormat::Json => serde_json::to_string_pretty(result)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| Error::Format {
                path: "<memory>".into(),
                message: e.to_string(),
            }),
    }
}

pub fn export(result: &ExperimentResult, path: &Path, format: ExportFormat) -> Result<()> {
    let text = render(result, format)?;
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn render_trace(trace: &AdaptiveTrace, format: ExportFormat) -> Result<String> {
    match format {
        ExportFormat::Csv => {
            if trace.rows.is_empty() {
                return Ok("iter,np,ser,loss\n".into());
            }
            rows_to_csv(&trace.rows)
        }
        ExportFormat::Json => serde_json::to_string_pretty(trace)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| Error::Format {
                path: "<memory>".into(),
                message: e.to_string(),
            }),
    }
}

pub fn export_trace(trace: &AdaptiveTrace, path: &Path, format: ExportFormat) -> Result<()> {
    let text = render_trace(trace, format)?;
    std::fs::write(path, text).map_err(io_err(path))
}

/// Reads result rows back from an exported CSV file.
pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err(path))
}

pub fn read_json(path: &Path) -> Result<ExperimentResult> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_owned(),
        message: e.to_string(),
    })
}
