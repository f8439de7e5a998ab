//! MIMO system model: random FIR channels, QPSK frames with a pilot prefix
//! and the stacked observation windows `x(n)`.
//!
//! Window layout is receiver-major and time-descending inside each receiver:
//! row `l·N + k` of `x(n)` holds the scalar sample `x⁽ˡ⁾(n − k)`.

use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::detection::QPSK;
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};

/// Scenario parameters.
///
/// Field names in JSON follow the usual symbols: `T`, `L`, `M`, `N`, `N_s`,
/// `N_p`, `snr_db`, `lambda`, `sigma_h2`, `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "T")]
    pub num_tx: usize,
    #[serde(rename = "L")]
    pub num_rx: usize,
    /// Channel order; each link has `channel_order + 1` taps.
    #[serde(rename = "M")]
    pub channel_order: usize,
    /// Equalizer taps per receiver.
    #[serde(rename = "N")]
    pub window: usize,
    #[serde(rename = "N_s")]
    pub frame_len: usize,
    #[serde(rename = "N_p")]
    pub num_pilots: usize,
    pub snr_db: f64,
    /// Weight of the blind criterion in the semi-blind cost.
    pub lambda: f64,
    #[serde(default = "default_sigma_h2")]
    pub sigma_h2: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_sigma_h2() -> f64 {
    1.0
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl SystemConfig {
    /// The reference scenario: 2×4 MIMO, M = 3, N = 10, 256-symbol frames
    /// with 32 pilots and λ = 0.1, at 10 dB.
    pub fn reference() -> Self {
        Self {
            num_tx: 2,
            num_rx: 4,
            channel_order: 3,
            window: 10,
            frame_len: 256,
            num_pilots: 32,
            snr_db: 10.0,
            lambda: 0.1,
            sigma_h2: 1.0,
            seed: 0,
        }
    }

    /// `K = M + N`, the number of symbols per transmitter seen by one window.
    pub fn k(&self) -> usize {
        self.channel_order + self.window
    }

    /// Length `L·N` of an observation window.
    pub fn window_len(&self) -> usize {
        self.num_rx * self.window
    }

    /// Full check for an experiment, including `L·N >= K·T` so that the
    /// stacked channel can be left-invertible.
    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        if self.window_len() < self.k() * self.num_tx {
            return Err(Error::Config(format!(
                "L·N = {} must be >= K·T = {} for the stacked channel to be left-invertible",
                self.window_len(),
                self.k() * self.num_tx
            )));
        }
        Ok(())
    }

    /// Dimension and range checks only. Enough for building channels,
    /// frames and the equalizer quadratic forms.
    pub fn validate_shape(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_tx < 1 || self.num_rx < 1 || self.window < 1 {
            return fail(format!(
                "T, L and N must be >= 1 (got T={}, L={}, N={})",
                self.num_tx, self.num_rx, self.window
            ));
        }
        if self.num_pilots < self.window || self.num_pilots > self.frame_len {
            return fail(format!(
                "need N <= N_p <= N_s, got N={}, N_p={}, N_s={}",
                self.window, self.num_pilots, self.frame_len
            ));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return fail(format!("snr_db must be a number or +inf, got {}", self.snr_db));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return fail(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.sigma_h2 > 0.0) || !self.sigma_h2.is_finite() {
            return fail(format!("sigma_h2 must be finite and > 0, got {}", self.sigma_h2));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Draws one `CN(0, variance)` sample.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Taps `h⁽ˡ⁾_{t,m}` of every transmitter/receiver link.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    num_tx: usize,
    num_rx: usize,
    order: usize,
    taps: Vec<Complex64>,
}

impl ChannelSet {
    pub fn from_fn(
        num_tx: usize,
        num_rx: usize,
        order: usize,
        mut f: impl FnMut(usize, usize, usize) -> Complex64,
    ) -> Self {
        let mut taps = Vec::with_capacity(num_tx * num_rx * (order + 1));
        for t in 0..num_tx {
            for l in 0..num_rx {
                for m in 0..=order {
                    taps.push(f(t, l, m));
                }
            }
        }
        Self {
            num_tx,
            num_rx,
            order,
            taps,
        }
    }

    pub fn num_tx(&self) -> usize {
        self.num_tx
    }

    pub fn num_rx(&self) -> usize {
        self.num_rx
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn tap(&self, t: usize, l: usize, m: usize) -> Complex64 {
        self.taps[(t * self.num_rx + l) * (self.order + 1) + m]
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }
}

pub fn draw_channel<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<ChannelSet> {
    cfg.validate_shape()?;
    Ok(ChannelSet::from_fn(
        cfg.num_tx,
        cfg.num_rx,
        cfg.channel_order,
        |_, _, _| complex_gaussian(rng, cfg.sigma_h2),
    ))
}

/// Block-Toeplitz convolution matrices `H_t` (`L·N × K`) and their
/// concatenation `H = [H_0 … H_{T−1}]`.
#[derive(Debug, Clone)]
pub struct StackedChannel {
    pub per_tx: Vec<CMatrix>,
    pub full: CMatrix,
}

impl StackedChannel {
    pub fn num_tx(&self) -> usize {
        self.per_tx.len()
    }

    /// Symbols per transmitter covered by one window.
    pub fn k(&self) -> usize {
        self.per_tx[0].ncols()
    }
}

pub fn build_stacked_channel(ch: &ChannelSet, window: usize) -> Result<StackedChannel> {
    if window == 0 {
        return Err(Error::Config("window length N must be >= 1".into()));
    }
    let k = ch.order + window;
    let rows = ch.num_rx * window;
    let per_tx: Vec<CMatrix> = (0..ch.num_tx)
        .map(|t| {
            let mut h = CMatrix::zeros(rows, k);
            for l in 0..ch.num_rx {
                for r in 0..window {
                    for m in 0..=ch.order {
                        h[(l * window + r, r + m)] = ch.tap(t, l, m);
                    }
                }
            }
            h
        })
        .collect();
    let mut full = CMatrix::zeros(rows, k * ch.num_tx);
    for (t, h) in per_tx.iter().enumerate() {
        full.columns_mut(t * k, k).copy_from(h);
    }
    Ok(StackedChannel { per_tx, full })
}

/// Transmitted QPSK streams; the first `num_pilots` symbols of every stream
/// are known to the receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    symbols: Vec<Vec<Complex64>>,
    num_pilots: usize,
}

impl Frame {
    pub fn new(symbols: Vec<Vec<Complex64>>, num_pilots: usize) -> Result<Self> {
        let len = symbols.first().map_or(0, Vec::len);
        if symbols.is_empty() || len == 0 || symbols.iter().any(|s| s.len() != len) {
            return Err(Error::Dimension(
                "frame streams must be non-empty and equally long".into(),
            ));
        }
        if num_pilots > len {
            return Err(Error::Dimension(format!(
                "{num_pilots} pilots exceed frame length {len}"
            )));
        }
        Ok(Self { symbols, num_pilots })
    }

    pub fn num_tx(&self) -> usize {
        self.symbols.len()
    }

    pub fn len(&self) -> usize {
        self.symbols[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_pilots(&self) -> usize {
        self.num_pilots
    }

    pub fn stream(&self, t: usize) -> &[Complex64] {
        &self.symbols[t]
    }

    pub fn streams(&self) -> &[Vec<Complex64>] {
        &self.symbols
    }

    /// `s_t(n)`, zero before the start of the frame.
    pub fn symbol(&self, t: usize, n: isize) -> Complex64 {
        if n < 0 {
            Complex64::new(0.0, 0.0)
        } else {
            self.symbols[t][n as usize]
        }
    }

    /// `s_t(n) = [s_t(n), s_t(n−1), …, s_t(n−K+1)]ᵀ`.
    pub fn stacked(&self, t: usize, n: usize, k: usize) -> CVector {
        CVector::from_fn(k, |j, _| self.symbol(t, n as isize - j as isize))
    }
}

pub fn generate_frame<R: Rng + ?Sized>(cfg: &SystemConfig, rng: &mut R) -> Result<Frame> {
    cfg.validate_shape()?;
    let symbols = (0..cfg.num_tx)
        .map(|_| {
            (0..cfg.frame_len)
                .map(|_| QPSK[rng.random_range(0..QPSK.len())])
                .collect()
        })
        .collect();
    Frame::new(symbols, cfg.num_pilots)
}

/// Per-sample noise variance `σ² = T·(M+1)·σ_H² / 10^(snr_db/10)`, i.e. the
/// average received signal power per scalar sample over the noise power.
pub fn noise_variance_from_snr(cfg: &SystemConfig) -> f64 {
    let signal = (cfg.num_tx * (cfg.channel_order + 1)) as f64 * cfg.sigma_h2;
    signal / 10f64.powf(cfg.snr_db / 10.0)
}

/// Received scalar streams and the matrix of stacked windows.
#[derive(Debug, Clone)]
pub struct ReceivedWindows {
    window: usize,
    streams: Vec<Vec<Complex64>>,
    windows: CMatrix,
    sigma2: f64,
}

impl ReceivedWindows {
    /// Builds windows from per-receiver scalar streams.
    pub fn from_streams(streams: Vec<Vec<Complex64>>, window: usize, sigma2: f64) -> Result<Self> {
        let len = streams.first().map_or(0, Vec::len);
        if streams.is_empty() || streams.iter().any(|s| s.len() != len) {
            return Err(Error::Dimension(
                "receiver streams must be non-empty and equally long".into(),
            ));
        }
        if window == 0 || len < window {
            return Err(Error::InsufficientData(format!(
                "{len} samples cannot fill a window of {window}"
            )));
        }
        let num_rx = streams.len();
        let cols = len - window + 1;
        let mut windows = CMatrix::zeros(num_rx * window, cols);
        for c in 0..cols {
            let n = c + window - 1;
            for (l, s) in streams.iter().enumerate() {
                for k in 0..window {
                    windows[(l * window + k, c)] = s[n - k];
                }
            }
        }
        Ok(Self {
            window,
            streams,
            windows,
            sigma2,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn num_rx(&self) -> usize {
        self.streams.len()
    }

    /// Number of scalar samples per receiver (`N_s`).
    pub fn frame_len(&self) -> usize {
        self.streams[0].len()
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Index `n` of the first available window, `N − 1`.
    pub fn first_index(&self) -> usize {
        self.window - 1
    }

    /// Index of the last available window, `N_s − 1`.
    pub fn last_index(&self) -> usize {
        self.frame_len() - 1
    }

    pub fn sample(&self, l: usize, n: usize) -> Complex64 {
        self.streams[l][n]
    }

    pub fn streams(&self) -> &[Vec<Complex64>] {
        &self.streams
    }

    /// All windows as columns; column `c` is `x(N − 1 + c)`.
    pub fn matrix(&self) -> &CMatrix {
        &self.windows
    }

    /// `x(n)` for `n` in `[N−1, N_s−1]`.
    pub fn x(&self, n: usize) -> nalgebra::DVectorView<'_, Complex64> {
        assert!(
            n >= self.first_index() && n <= self.last_index(),
            "window index {n} outside [{}, {}]",
            self.first_index(),
            self.last_index()
        );
        self.windows.column(n - self.first_index())
    }

    /// Columns `x(from) … x(to)` inclusive.
    pub fn range(&self, from: usize, to: usize) -> nalgebra::DMatrixView<'_, Complex64> {
        assert!(from >= self.first_index() && to <= self.last_index() && from <= to);
        self.windows.columns(from - self.first_index(), to - from + 1)
    }
}

/// Passes `frame` through the channel and adds white complex Gaussian noise
/// with variance `sigma2` to every scalar sample.
pub fn simulate_reception<R: Rng + ?Sized>(
    ch: &ChannelSet,
    frame: &Frame,
    window: usize,
    sigma2: f64,
    rng: &mut R,
) -> Result<ReceivedWindows> {
    if frame.num_tx() != ch.num_tx {
        return Err(Error::Dimension(format!(
            "frame has {} streams but channel has {} transmitters",
            frame.num_tx(),
            ch.num_tx
        )));
    }
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::Domain(format!(
            "noise variance must be finite and >= 0, got {sigma2}"
        )));
    }
    let len = frame.len();
    let streams = (0..ch.num_rx)
        .map(|l| {
            (0..len)
                .map(|n| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for t in 0..ch.num_tx {
                        for m in 0..=ch.order {
                            acc += ch.tap(t, l, m) * frame.symbol(t, n as isize - m as isize);
                        }
                    }
                    if sigma2 > 0.0 {
                        acc += complex_gaussian(rng, sigma2);
                    }
                    acc
                })
                .collect()
        })
        .collect();
    ReceivedWindows::from_streams(streams, window, sigma2)
}
