//! Independent reference implementations used as test oracles. Nothing here
//! calls into the solvers under test.

#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sbmre::model::{complex_gaussian, ChannelSet, Frame, SystemConfig};

pub type M = DMatrix<Complex64>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> M {
    let mut r = rng(seed);
    M::from_fn(rows, cols, |_, _| complex_gaussian(&mut r, 1.0))
}

pub fn max_abs_diff(a: &M, b: &M) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn max_abs(a: &M) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Gaussian elimination with partial pivoting, `A X = B`.
pub fn gauss_solve(a: &M, b: &M) -> M {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(b.nrows(), n);
    let m = b.ncols();
    let mut aug: Vec<Vec<Complex64>> = (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)]).chain((0..m).map(|j| b[(i, j)])).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[x][col].norm().partial_cmp(&aug[y][col].norm()).unwrap())
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        assert!(p.norm() > 1e-300, "singular system");
        for row in col + 1..n {
            let f = aug[row][col] / p;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in col..n + m {
                let v = aug[col][j];
                aug[row][j] -= f * v;
            }
        }
    }
    let mut x = M::zeros(n, m);
    for j in 0..m {
        for i in (0..n).rev() {
            let mut acc = aug[i][n + j];
            for k in i + 1..n {
                acc -= aug[i][k] * x[(k, j)];
            }
            x[(i, j)] = acc / aug[i][i];
        }
    }
    x
}

/// All eigenpairs of a Hermitian matrix by shifted inverse iteration with
/// deflation, ascending.
pub fn inverse_iteration_eigen(a: &M, iterations: usize) -> Vec<(f64, Vec<Complex64>)> {
    let n = a.nrows();
    // Gershgorin lower bound, so that A − μI is positive definite.
    let mu = (0..n)
        .map(|i| a[(i, i)].re - (0..n).filter(|&j| j != i).map(|j| a[(i, j)].norm()).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        - 1.0;
    let shifted = M::from_fn(n, n, |i, j| if i == j { a[(i, j)] - mu } else { a[(i, j)] });
    let mut found: Vec<(f64, Vec<Complex64>)> = Vec::new();
    let mut r = rng(12345);
    for _ in 0..n {
        let mut v = M::from_fn(n, 1, |_, _| complex_gaussian(&mut r, 1.0));
        for _ in 0..iterations {
            for (_, u) in &found {
                let dot: Complex64 = (0..n).map(|i| u[i].conj() * v[(i, 0)]).sum();
                for i in 0..n {
                    v[(i, 0)] -= dot * u[i];
                }
            }
            v = gauss_solve(&shifted, &v);
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            v /= Complex64::new(norm, 0.0);
        }
        let av = a * &v;
        let value: Complex64 = (0..n).map(|i| v[(i, 0)].conj() * av[(i, 0)]).sum();
        found.push((value.re, v.iter().copied().collect()));
    }
    found.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    found
}

/// Receiver streams by direct time-domain convolution, no noise.
pub fn convolve(ch: &ChannelSet, frame: &Frame) -> Vec<Vec<Complex64>> {
    (0..ch.num_rx())
        .map(|l| {
            (0..frame.len())
                .map(|n| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for t in 0..ch.num_tx() {
                        for m in 0..=ch.order() {
                            if n >= m {
                                acc += ch.tap(t, l, m) * frame.stream(t)[n - m];
                            }
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// `x(n)` assembled from scalar streams: row `l·N + k` is `x⁽ˡ⁾(n − k)`.
pub fn window(streams: &[Vec<Complex64>], n: usize, n_taps: usize) -> M {
    let l_count = streams.len();
    M::from_fn(l_count * n_taps, 1, |r, _| streams[r / n_taps][n - r % n_taps])
}

/// `s̄(n) = [s_0(n) … s_0(n−K+1), …, s_{T−1}(n) … s_{T−1}(n−K+1)]ᵀ` with a
/// zero prefix.
pub fn stacked_symbols(frame: &Frame, n: usize, k: usize) -> M {
    let t_count = frame.num_tx();
    M::from_fn(t_count * k, 1, |r, _| {
        let (t, i) = (r / k, r % k);
        if n >= i {
            frame.stream(t)[n - i]
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

pub fn identity(n: usize) -> M {
    M::identity(n, n)
}

/// `[I_a | 0_{a×b}]`.
pub fn left_selector(a: usize, b: usize) -> M {
    M::from_fn(a, a + b, |i, j| {
        if i == j {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// `[0_{a×b} | I_a]`.
pub fn right_selector(a: usize, b: usize) -> M {
    M::from_fn(a, a + b, |i, j| {
        if j == i + b {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Literal blind quadratic form, delay-major:
/// `(1/N_R) Σ_n UᴴU` with
/// `U = [I | 0] ⊗ x(n)ᴴ − [0 | I] ⊗ x(n+lag)ᴴ`, selectors of size
/// `(D−1)·T × D·T`.
pub fn naive_rhat(streams: &[Vec<Complex64>], cfg: &SystemConfig, delays: usize, lag: usize) -> M {
    let n_taps = cfg.window;
    let t = cfg.num_tx;
    let rows = (delays - 1) * t;
    let e1 = left_selector(rows, t);
    let e2 = right_selector(rows, t);
    let first = n_taps - 1;
    let last = streams[0].len() - 1 - lag;
    let dim = cfg.window_len() * delays * t;
    let mut acc = M::zeros(dim, dim);
    for n in first..=last {
        let xa = window(streams, n, n_taps).adjoint();
        let xb = window(streams, n + lag, n_taps).adjoint();
        let u = e1.kronecker(&xa) - e2.kronecker(&xb);
        acc += u.adjoint() * u;
    }
    acc / Complex64::new((last - first + 1) as f64, 0.0)
}

/// Pilot matrices `X̃ = [x(N−1) … x(N_p−1)]` and `S̃ᴴ`, whose row `n` is
/// `s̄(n)ᴴ`: column `t·D + slot` holds `s_t(n − delay_slot)*`.
pub fn pilot_matrices(streams: &[Vec<Complex64>], frame: &Frame, cfg: &SystemConfig, delays: &[usize]) -> (M, M) {
    let n_taps = cfg.window;
    let first = n_taps - 1;
    let p = frame.num_pilots() - first;
    let mut x = M::zeros(cfg.window_len(), p);
    for c in 0..p {
        x.set_column(c, &window(streams, first + c, n_taps).column(0));
    }
    let d = delays.len();
    let s_h = M::from_fn(p, cfg.num_tx * d, |row, col| {
        let (t, slot) = (col / d, col % d);
        frame.symbol(t, (first + row) as isize - delays[slot] as isize).conj()
    });
    (x, s_h)
}

/// A small configuration used by the structural oracles.
pub fn toy(
    num_tx: usize,
    num_rx: usize,
    order: usize,
    window: usize,
    frame_len: usize,
    num_pilots: usize,
) -> SystemConfig {
    SystemConfig {
        num_tx,
        num_rx,
        channel_order: order,
        window,
        frame_len,
        num_pilots,
        snr_db: 10.0,
        lambda: 0.1,
        sigma_h2: 1.0,
        seed: 0,
    }
}
