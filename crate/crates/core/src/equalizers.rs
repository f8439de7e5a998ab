//! Mutually referenced equalizers.
//!
//! An equalizer bank holds, for every transmitter `t` and delay `i`, an
//! `L·N`-tap filter `g_{t,i}` with `g_{t,i}ᴴ x(n) ≈ s_t(n − i)`. The blind
//! criterion penalizes disagreement between equalizers of neighbouring
//! delays, `g_{t,i}ᴴ x(n) = g_{t,i+1}ᴴ x(n+1)`; in reduced mode only delays
//! `0` and `K−1` are kept and compared at lag `K−1`.
//!
//! Two stackings of the bank into one vector are in use:
//!
//! * delay-major, block `i·T + t` holds `g_{t,i}`. This is the native layout
//!   of the constraint rows `U(n)` and of `R̂`.
//! * transmitter-major, block `t·D + i` holds `g_{t,i}`. This is `vec(Ḡ)`
//!   with `Ḡ = [G_0 … G_{T−1}]` and is the layout used for solving.
//!
//! The blind quadratic form never couples different transmitters, and every
//! transmitter sees the same observations, so in transmitter-major layout
//! `R̂ = I_T ⊗ R_core` with `R_core` block tridiagonal in the delays. The
//! solvers work on `R_core` directly; [`MreQuadratic::rhat`] materializes the
//! full delay-major matrix when it is needed.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::detection::SymbolStreams;
use crate::error::{Error, Result};
use crate::linalg::{gram, mul_adjoint, solve_hpd_many, BlockTridiagonal, CMatrix, CVector};
use crate::model::{Frame, ReceivedWindows, StackedChannel, SystemConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EqMode {
    /// All delays `0 … K−1`.
    Full,
    /// Delays `0` and `K−1` only.
    Reduced,
}

impl EqMode {
    pub fn num_delays(self, k: usize) -> usize {
        match self {
            EqMode::Full => k,
            EqMode::Reduced => 2,
        }
    }

    pub fn delays(self, k: usize) -> Vec<usize> {
        match self {
            EqMode::Full => (0..k).collect(),
            EqMode::Reduced => vec![0, k - 1],
        }
    }

    /// Time lag between the two windows compared by one constraint row.
    pub fn lag(self, k: usize) -> usize {
        match self {
            EqMode::Full => 1,
            EqMode::Reduced => k - 1,
        }
    }

    /// Position of `delay` within the bank, if the mode keeps it.
    pub fn slot_of_delay(self, k: usize, delay: usize) -> Option<usize> {
        match self {
            EqMode::Full => (delay < k).then_some(delay),
            EqMode::Reduced if delay == 0 => Some(0),
            EqMode::Reduced if delay == k - 1 => Some(1),
            EqMode::Reduced => None,
        }
    }

    fn check(self, k: usize) -> Result<()> {
        if k < 2 {
            return Err(Error::Config(format!(
                "mutually referenced equalizers need K >= 2, got K = {k}"
            )));
        }
        Ok(())
    }
}

/// Index maps between the two stackings of a bank into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub window_len: usize,
    pub num_delays: usize,
    pub num_tx: usize,
}

impl Layout {
    pub fn new(cfg: &SystemConfig, mode: EqMode) -> Self {
        Self {
            window_len: cfg.window_len(),
            num_delays: mode.num_delays(cfg.k()),
            num_tx: cfg.num_tx,
        }
    }

    pub fn dim(&self) -> usize {
        self.window_len * self.num_delays * self.num_tx
    }

    pub fn delay_major_offset(&self, t: usize, slot: usize) -> usize {
        (slot * self.num_tx + t) * self.window_len
    }

    pub fn tx_major_offset(&self, t: usize, slot: usize) -> usize {
        (t * self.num_delays + slot) * self.window_len
    }

    fn remap(&self, v: &CVector, from: impl Fn(usize, usize) -> usize, to: impl Fn(usize, usize) -> usize) -> CVector {
        assert_eq!(v.len(), self.dim(), "vector does not match layout");
        let mut out = CVector::zeros(self.dim());
        for t in 0..self.num_tx {
            for s in 0..self.num_delays {
                let (a, b) = (from(t, s), to(t, s));
                out.rows_mut(b, self.window_len).copy_from(&v.rows(a, self.window_len));
            }
        }
        out
    }

    pub fn delay_major_to_tx_major(&self, v: &CVector) -> CVector {
        self.remap(
            v,
            |t, s| self.delay_major_offset(t, s),
            |t, s| self.tx_major_offset(t, s),
        )
    }

    pub fn tx_major_to_delay_major(&self, v: &CVector) -> CVector {
        self.remap(
            v,
            |t, s| self.tx_major_offset(t, s),
            |t, s| self.delay_major_offset(t, s),
        )
    }

    /// Permutation matrix `P` with `P · g_delay_major = g_tx_major`.
    pub fn permutation(&self) -> CMatrix {
        let n = self.dim();
        let mut p = CMatrix::zeros(n, n);
        for t in 0..self.num_tx {
            for s in 0..self.num_delays {
                let (a, b) = (self.delay_major_offset(t, s), self.tx_major_offset(t, s));
                for r in 0..self.window_len {
                    p[(b + r, a + r)] = Complex64::new(1.0, 0.0);
                }
            }
        }
        p
    }
}

/// Equalizers stored as the columns of an `L·N × D·T` matrix in
/// transmitter-major order: column `t·D + slot` is `g_{t, delays[slot]}`.
#[derive(Debug, Clone)]
pub struct EqualizerBank {
    mode: EqMode,
    num_tx: usize,
    k: usize,
    g: CMatrix,
}

impl EqualizerBank {
    pub fn new(mode: EqMode, num_tx: usize, k: usize, g: CMatrix) -> Result<Self> {
        if k == 0 || (mode == EqMode::Reduced && k < 2) {
            return Err(Error::Config(format!("a {mode:?} bank cannot have K = {k}")));
        }
        let d = mode.num_delays(k);
        if g.ncols() != d * num_tx || g.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "bank with {} columns does not hold {d} delays for {num_tx} transmitters",
                g.ncols()
            )));
        }
        crate::linalg::ensure_finite(&g, "equalizer bank")?;
        Ok(Self { mode, num_tx, k, g })
    }

    /// Reshapes a transmitter-major vector into a bank.
    pub fn from_tx_major(layout: &Layout, mode: EqMode, k: usize, v: &CVector) -> Result<Self> {
        if v.len() != layout.dim() {
            return Err(Error::Dimension(format!(
                "vector of length {} does not match layout dimension {}",
                v.len(),
                layout.dim()
            )));
        }
        let g = CMatrix::from_column_slice(layout.window_len, layout.num_delays * layout.num_tx, v.as_slice());
        Self::new(mode, layout.num_tx, k, g)
    }

    pub fn mode(&self) -> EqMode {
        self.mode
    }

    pub fn num_tx(&self) -> usize {
        self.num_tx
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_delays(&self) -> usize {
        self.mode.num_delays(self.k)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.g
    }

    /// `vec(Ḡ)`, the transmitter-major stacking.
    pub fn to_tx_major(&self) -> CVector {
        CVector::from_column_slice(self.g.as_slice())
    }

    /// `g_{t, delay}`.
    pub fn equalizer(&self, t: usize, delay: usize) -> Result<CVector> {
        let slot = self
            .mode
            .slot_of_delay(self.k, delay)
            .ok_or_else(|| Error::Config(format!("delay {delay} is not held by a {:?} bank", self.mode)))?;
        if t >= self.num_tx {
            return Err(Error::Dimension(format!("transmitter {t} out of range")));
        }
        Ok(self.g.column(t * self.num_delays() + slot).into_owned())
    }
}

/// Constraint rows `U(n)` for one window pair, over the delay-major layout.
///
/// Full mode compares `x_a = x(n)` with `x_b = x(n+1)` and yields
/// `T·(K−1)` rows; row `i·T + t` carries `x_aᴴ` in block `(i, t)` and
/// `−x_bᴴ` in block `(i+1, t)`. Reduced mode compares `x(n)` with
/// `x(n+K−1)` and yields `T` rows.
pub fn mre_constraint_rows(x_a: &CVector, x_b: &CVector, cfg: &SystemConfig, mode: EqMode) -> Result<CMatrix> {
    let k = cfg.k();
    mode.check(k)?;
    let ln = cfg.window_len();
    if x_a.len() != ln || x_b.len() != ln {
        return Err(Error::Dimension(format!(
            "windows must have length {ln}, got {} and {}",
            x_a.len(),
            x_b.len()
        )));
    }
    let layout = Layout::new(cfg, mode);
    let t_count = cfg.num_tx;
    let pairs = layout.num_delays - 1;
    let mut u = CMatrix::zeros(pairs * t_count, layout.dim());
    for i in 0..pairs {
        for t in 0..t_count {
            let row = i * t_count + t;
            let a = layout.delay_major_offset(t, i);
            let b = layout.delay_major_offset(t, i + 1);
            for r in 0..ln {
                u[(row, a + r)] = x_a[r].conj();
                u[(row, b + r)] = -x_b[r].conj();
            }
        }
    }
    Ok(u)
}

/// Sample estimate of the blind quadratic form `R̂ = mean_n U(n)ᴴ U(n)`.
#[derive(Debug, Clone)]
pub struct MreQuadratic {
    mode: EqMode,
    layout: Layout,
    core: BlockTridiagonal,
    sample_count: usize,
}

impl MreQuadratic {
    pub fn mode(&self) -> EqMode {
        self.mode
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Number of window pairs averaged.
    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Size of `R̂`, `L·N·D·T`.
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// Per-transmitter block `R_core` (`L·N·D` square).
    pub fn core(&self) -> &BlockTridiagonal {
        &self.core
    }

    /// `R̂` in transmitter-major layout, `I_T ⊗ R_core`.
    pub fn tx_major(&self) -> CMatrix {
        let c = self.core.to_dense();
        let b = c.nrows();
        let mut out = CMatrix::zeros(self.dim(), self.dim());
        for t in 0..self.layout.num_tx {
            out.view_mut((t * b, t * b), (b, b)).copy_from(&c);
        }
        out
    }

    /// `R̂` in the delay-major layout of the constraint rows.
    pub fn rhat(&self) -> CMatrix {
        let p = self.layout.permutation();
        p.adjoint() * self.tx_major() * p
    }
}

/// Averages `U(n)ᴴU(n)` over every window pair available in `rx`.
///
/// Full mode uses pairs `(n, n+1)` for `n ∈ [N−1, N_s−2]`; reduced mode uses
/// `(n, n+K−1)` for `n ∈ [N−1, N_s−K]`. Pilot and data windows alike are
/// used.
pub fn estimate_r(rx: &ReceivedWindows, cfg: &SystemConfig, mode: EqMode) -> Result<MreQuadratic> {
    let k = cfg.k();
    mode.check(k)?;
    let ln = cfg.window_len();
    if rx.matrix().nrows() != ln {
        return Err(Error::Dimension(format!(
            "windows have length {} but the configuration implies {ln}",
            rx.matrix().nrows()
        )));
    }
    let lag = mode.lag(k);
    let cols = rx.matrix().ncols();
    if cols <= lag {
        return Err(Error::InsufficientData(format!(
            "{cols} windows hold no pair at lag {lag}"
        )));
    }
    let pairs = cols - lag;
    let w = rx.matrix();
    let scale = 1.0 / pairs as f64;
    // Both autocorrelations share the windows lag..pairs.
    let (r_aa, r_bb) = if lag < pairs {
        let shared = gram(w.columns(lag, pairs - lag));
        (&shared + gram(w.columns(0, lag)), shared + gram(w.columns(pairs, lag)))
    } else {
        (gram(w.columns(0, pairs)), gram(w.columns(lag, pairs)))
    };
    let r_aa = r_aa.scale(scale);
    let r_bb = r_bb.scale(scale);
    let r_ab = mul_adjoint(w.columns(0, pairs), w.columns(lag, pairs)).scale(scale);

    let d = mode.num_delays(k);
    let diag = (0..d)
        .map(|i| match i {
            0 => r_aa.clone(),
            i if i == d - 1 => r_bb.clone(),
            _ => &r_aa + &r_bb,
        })
        .collect();
    let upper = (0..d - 1).map(|_| -&r_ab).collect();
    Ok(MreQuadratic {
        mode,
        layout: Layout::new(cfg, mode),
        core: BlockTridiagonal::new(diag, upper)?,
        sample_count: pairs,
    })
}

/// Blind solution under the unit-norm constraint.
#[derive(Debug, Clone)]
pub struct BlindMre {
    /// Unit-norm minimizer of `gᴴ R̂ g`, delay-major.
    pub g: CVector,
    /// The attained minimum, the smallest eigenvalue of `R̂`.
    pub value: f64,
    pub bank: EqualizerBank,
}

/// Smallest eigenvector of `R̂`.
///
/// The minimizer is taken from the smallest eigenvector of `R_core` placed
/// in the slot of transmitter 0; every eigenvalue of `R̂` has multiplicity
/// `T`, so this is one valid choice within the eigenspace.
pub fn blind_mre(r: &MreQuadratic, cfg: &SystemConfig) -> Result<BlindMre> {
    check_layout(&r.layout, cfg, r.mode)?;
    let (values, vectors) = r.core.lowest_eigenpairs(1)?;
    let layout = r.layout;
    let mut tx_major = CVector::zeros(layout.dim());
    let b = layout.window_len * layout.num_delays;
    tx_major.rows_mut(0, b).copy_from(&vectors.column(0));
    let bank = EqualizerBank::from_tx_major(&layout, r.mode, cfg.k(), &tx_major)?;
    Ok(BlindMre {
        g: layout.tx_major_to_delay_major(&tx_major),
        value: values[0],
        bank,
    })
}

/// Blind bank spanning the `T`-dimensional solution space: slot `t` holds
/// the `t`-th smallest eigenvector of `R_core`.
///
/// Each slot's delay-0 output is an unknown mixture of the `T` sources; the
/// mixture is removed by alignment at evaluation time.
pub fn blind_mre_subspace(r: &MreQuadratic, cfg: &SystemConfig) -> Result<EqualizerBank> {
    check_layout(&r.layout, cfg, r.mode)?;
    let layout = r.layout;
    let (_, vectors) = r.core.lowest_eigenpairs(layout.num_tx)?;
    let b = layout.window_len * layout.num_delays;
    let mut tx_major = CVector::zeros(layout.dim());
    for t in 0..layout.num_tx {
        tx_major.rows_mut(t * b, b).copy_from(&vectors.column(t));
    }
    EqualizerBank::from_tx_major(&layout, r.mode, cfg.k(), &tx_major)
}

fn check_layout(layout: &Layout, cfg: &SystemConfig, mode: EqMode) -> Result<()> {
    if *layout != Layout::new(cfg, mode) {
        return Err(Error::Dimension(
            "quadratic form was built for a different configuration".into(),
        ));
    }
    Ok(())
}

/// Normal-equation terms of the pilot least-squares fit.
///
/// `AᴴA = I_{D·T} ⊗ X̃X̃ᴴ` is kept as its single repeated block.
#[derive(Debug, Clone)]
pub struct PilotNormalOps {
    mode: EqMode,
    layout: Layout,
    /// `X̃X̃ᴴ` summed over the pilot windows `x(N−1) … x(N_p−1)`.
    gram: CMatrix,
    /// `Aᴴs̄ = vec(X̃ S̃ᴴ)`, transmitter-major.
    ahs: CVector,
    pilot_windows: usize,
}

impl PilotNormalOps {
    pub fn mode(&self) -> EqMode {
        self.mode
    }

    pub fn gram(&self) -> &CMatrix {
        &self.gram
    }

    pub fn ahs(&self) -> &CVector {
        &self.ahs
    }

    pub fn pilot_windows(&self) -> usize {
        self.pilot_windows
    }

    /// Dense `AᴴA`.
    pub fn aha(&self) -> CMatrix {
        let n = self.layout.dim();
        let b = self.layout.window_len;
        let mut out = CMatrix::zeros(n, n);
        for j in 0..n / b {
            out.view_mut((j * b, j * b), (b, b)).copy_from(&self.gram);
        }
        out
    }
}

pub fn pilot_normal_ops(
    rx: &ReceivedWindows,
    frame: &Frame,
    cfg: &SystemConfig,
    mode: EqMode,
) -> Result<PilotNormalOps> {
    let k = cfg.k();
    mode.check(k)?;
    let np = frame.num_pilots();
    if np < cfg.window {
        return Err(Error::Config(format!(
            "pilot least squares needs N_p >= N, got N_p = {np}, N = {}",
            cfg.window
        )));
    }
    if frame.num_tx() != cfg.num_tx || rx.matrix().nrows() != cfg.window_len() {
        return Err(Error::Dimension(
            "frame or windows do not match the configuration".into(),
        ));
    }
    let first = rx.first_index();
    let x = rx.range(first, np - 1);
    let gram = gram(x);
    let layout = Layout::new(cfg, mode);
    let mut ahs = CVector::zeros(layout.dim());
    for t in 0..cfg.num_tx {
        for (slot, delay) in mode.delays(k).into_iter().enumerate() {
            let reference = CVector::from_fn(x.ncols(), |c, _| {
                frame.symbol(t, (first + c) as isize - delay as isize).conj()
            });
            ahs.rows_mut(layout.tx_major_offset(t, slot), layout.window_len)
                .copy_from(&(x * reference));
        }
    }
    Ok(PilotNormalOps {
        mode,
        layout,
        gram,
        ahs,
        pilot_windows: x.ncols(),
    })
}

#[derive(Debug, Clone)]
pub struct SbMreSolution {
    pub bank: EqualizerBank,
    /// True when the automatic ridge was needed to factorize.
    pub regularized: bool,
}

/// Closed-form semi-blind solution `g = (AᴴA + λ·N_R·R̂)⁻¹ Aᴴs̄`.
///
/// `AᴴA` sums over the pilot windows, so the blind term is weighted as a sum
/// too: `N_R·R̂ = Σ_n UᴴU` over the `N_R` window pairs.
///
/// Solved per transmitter on `I_D ⊗ X̃X̃ᴴ + λ·N_R·R_core`, which is the
/// transmitter-major system restricted to one diagonal block.
pub fn sb_mre(ops: &PilotNormalOps, r: &MreQuadratic, lambda: f64, cfg: &SystemConfig) -> Result<SbMreSolution> {
    if ops.mode != r.mode || ops.layout != r.layout {
        return Err(Error::Dimension(
            "pilot terms and blind form disagree on mode or shape".into(),
        ));
    }
    check_layout(&r.layout, cfg, r.mode)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let layout = r.layout;
    let weight = lambda * r.sample_count as f64;
    let system = r.core.scaled_plus_block_diag(weight, &ops.gram)?;
    let chol = system.factor(0.0)?;
    let b = layout.window_len * layout.num_delays;
    let rhs = CMatrix::from_fn(b, layout.num_tx, |i, t| ops.ahs[t * b + i]);
    let x = chol.solve(&rhs);
    let g = CVector::from_column_slice(x.as_slice());
    Ok(SbMreSolution {
        bank: EqualizerBank::from_tx_major(&layout, r.mode, cfg.k(), &g)?,
        regularized: chol.regularized(),
    })
}

/// `H (HᴴH + shift·I)⁻¹` as a full bank.
fn regularized_inverse(h: &StackedChannel, shift: f64) -> Result<EqualizerBank> {
    let full = &h.full;
    let mut gram = full.adjoint() * full;
    for i in 0..gram.nrows() {
        gram[(i, i)].re += shift;
    }
    let sol = solve_hpd_many(&gram, &full.adjoint(), 0.0)?;
    if sol.regularized {
        return Err(Error::Numerical("stacked channel matrix is rank deficient".into()));
    }
    EqualizerBank::new(EqMode::Full, h.num_tx(), h.k(), sol.x.adjoint())
}

/// Zero-forcing bank `Ḡ = H (HᴴH)⁻¹`, so that `ḠᴴH = I`.
pub fn zf_equalizer(h: &StackedChannel) -> Result<EqualizerBank> {
    if h.full.nrows() < h.full.ncols() {
        return Err(Error::Numerical(format!(
            "stacked channel is {}x{} and has no left inverse",
            h.full.nrows(),
            h.full.ncols()
        )));
    }
    regularized_inverse(h, 0.0)
}

/// MMSE bank `Ḡ = (HHᴴ + σ²I)⁻¹ H` for unit-power symbols, computed as
/// `H (HᴴH + σ²I)⁻¹`.
pub fn mmse_equalizer(h: &StackedChannel, sigma2: f64) -> Result<EqualizerBank> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::Domain(format!(
            "noise variance must be finite and >= 0, got {sigma2}"
        )));
    }
    if sigma2 == 0.0 {
        return zf_equalizer(h);
    }
    regularized_inverse(h, sigma2)
}

/// Runs the delay-`delay` equalizers over every window and re-indexes the
/// output so that entry `n` estimates `s_t(n)`: `ŝ_t(n) = g_{t,delay}ᴴ x(n + delay)`.
pub fn apply_bank(bank: &EqualizerBank, rx: &ReceivedWindows, delay: usize) -> Result<SymbolStreams> {
    let slot = bank
        .mode
        .slot_of_delay(bank.k, delay)
        .ok_or_else(|| Error::Config(format!("delay {delay} is not held by a {:?} bank", bank.mode)))?;
    if bank.g.nrows() != rx.matrix().nrows() {
        return Err(Error::Dimension(format!(
            "equalizers have {} taps but windows have {}",
            bank.g.nrows(),
            rx.matrix().nrows()
        )));
    }
    let d = bank.num_delays();
    let first = rx.first_index();
    let skip = delay.saturating_sub(first);
    let cols = rx.matrix().ncols();
    if skip >= cols {
        return Err(Error::InsufficientData(format!("no window left for delay {delay}")));
    }
    let windows = rx.matrix().columns(skip, cols - skip);
    let data = (0..bank.num_tx)
        .map(|t| {
            let g = bank.g.column(t * d + slot);
            (g.adjoint() * windows).iter().copied().collect()
        })
        .collect();
    SymbolStreams::new(first + skip - delay, data)
}
