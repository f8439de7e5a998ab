mod common;

use common::*;
use num_complex::Complex64;

use sbmre::equalizers::{
    apply_bank, estimate_r, mmse_equalizer, mre_constraint_rows, pilot_normal_ops, sb_mre, zf_equalizer, EqMode, Layout,
};
use sbmre::linalg::{hermitian_eigen, least_squares, solve_hpd, solve_hpd_many, BlockTridiagonal, CVector};
use sbmre::model::{
    build_stacked_channel, complex_gaussian, draw_channel, generate_frame, simulate_reception, ChannelSet,
    ReceivedWindows, SystemConfig,
};

#[test]
fn eigen_matches_inverse_iteration() {
    let b = random_matrix(6, 6, 7);
    let a = (&b + b.adjoint()) * Complex64::new(0.5, 0.0);
    let (values, vectors) = hermitian_eigen(&a).unwrap();
    let oracle = inverse_iteration_eigen(&a, 3000);
    for (j, (value, vector)) in oracle.iter().enumerate() {
        assert!(
            (values[j] - value).abs() < 1e-8,
            "eigenvalue {j}: {} vs {value}",
            values[j]
        );
        let overlap: Complex64 = (0..6).map(|i| vectors[(i, j)].conj() * vector[i]).sum();
        assert!(
            (overlap.norm() - 1.0).abs() < 1e-8,
            "eigenvector {j} overlap {}",
            overlap.norm()
        );
    }
}

#[test]
fn eigen_of_known_spectrum() {
    let q = random_matrix(7, 7, 21).qr().q();
    let spectrum = [-3.0, -1.5, 0.25, 1.0, 2.0, 4.5, 9.0];
    let d = M::from_diagonal(&CVector::from_iterator(
        7,
        spectrum.iter().map(|&v| Complex64::new(v, 0.0)),
    ));
    let a = &q * d * q.adjoint();
    let (values, _) = hermitian_eigen(&a).unwrap();
    for (got, want) in values.iter().zip(spectrum) {
        assert!((got - want).abs() < 1e-10);
    }
}

#[test]
fn block_tridiagonal_lowest_eigenpairs_match_dense() {
    let blocks = 5;
    let size = 4;
    let diag = (0..blocks)
        .map(|i| {
            let b = random_matrix(size, size, 100 + i as u64);
            b.adjoint() * &b + identity(size) * Complex64::new(2.0, 0.0)
        })
        .collect();
    // Small coupling keeps the matrix positive definite.
    let upper = (0..blocks - 1)
        .map(|i| random_matrix(size, size, 200 + i as u64) * Complex64::new(0.2, 0.0))
        .collect();
    let bt = BlockTridiagonal::new(diag, upper).unwrap();
    let dense = bt.to_dense();
    let oracle = inverse_iteration_eigen(&dense, 4000);
    let (values, vectors) = bt.lowest_eigenpairs(3).unwrap();
    for j in 0..3 {
        assert!((values[j] - oracle[j].0).abs() < 1e-8 * (1.0 + oracle[j].0.abs()));
        let overlap: Complex64 = (0..dense.nrows())
            .map(|i| vectors[(i, j)].conj() * oracle[j].1[i])
            .sum();
        assert!((overlap.norm() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn hpd_solve_matches_gaussian_elimination() {
    let a = random_matrix(8, 8, 5);
    let m = a.adjoint() * &a + identity(8);
    let b = random_matrix(8, 1, 6);
    let sol = solve_hpd(&m, &CVector::from_column_slice(b.as_slice()), 0.0).unwrap();
    assert!(!sol.regularized);
    let oracle = gauss_solve(&m, &b);
    let got = M::from_column_slice(8, 1, sol.x.as_slice());
    assert!(max_abs_diff(&got, &oracle) < 1e-8);

    let bs = random_matrix(8, 3, 9);
    let many = solve_hpd_many(&m, &bs, 0.0).unwrap();
    assert!(max_abs_diff(&many.x, &gauss_solve(&m, &bs)) < 1e-8);
}

#[test]
fn least_squares_matches_normal_equations() {
    let a = random_matrix(10, 4, 3);
    let b = random_matrix(10, 2, 4);
    let sol = least_squares(&a, &b).unwrap();
    let oracle = gauss_solve(&(a.adjoint() * &a), &(a.adjoint() * &b));
    assert!(max_abs_diff(&sol.x, &oracle) < 1e-10);
    // Residual is orthogonal to the range of a.
    let r = &b - &a * &sol.x;
    assert!(max_abs(&(a.adjoint() * r)) < 1e-10);
}

#[test]
fn block_cholesky_matches_dense_elimination() {
    let blocks = 6;
    let size = 3;
    let diag = (0..blocks)
        .map(|i| {
            let b = random_matrix(size, size, 300 + i as u64);
            b.adjoint() * &b + identity(size) * Complex64::new(3.0, 0.0)
        })
        .collect();
    let upper = (0..blocks - 1)
        .map(|i| random_matrix(size, size, 400 + i as u64) * Complex64::new(0.5, 0.0))
        .collect();
    let bt = BlockTridiagonal::new(diag, upper).unwrap();
    let rhs = random_matrix(blocks * size, 2, 500);
    let chol = bt.factor(0.0).unwrap();
    assert!(!chol.regularized());
    assert!(max_abs_diff(&chol.solve(&rhs), &gauss_solve(&bt.to_dense(), &rhs)) < 1e-10);
}

#[test]
fn channel_taps_have_unit_variance() {
    let cfg = SystemConfig {
        num_tx: 25,
        num_rx: 25,
        channel_order: 159,
        ..SystemConfig::reference()
    };
    let ch = draw_channel(&cfg, &mut rng(1)).unwrap();
    let taps = ch.taps();
    assert_eq!(taps.len(), 100_000);
    let var = taps.iter().map(|z| z.norm_sqr()).sum::<f64>() / taps.len() as f64;
    assert!((var - 1.0).abs() < 0.05, "tap variance {var}");
}

#[test]
fn stacked_channel_matches_convolution() {
    let cfg = SystemConfig::reference();
    let mut r = rng(11);
    let ch = draw_channel(&cfg, &mut r).unwrap();
    let frame = generate_frame(&cfg, &mut r).unwrap();
    let h = build_stacked_channel(&ch, cfg.window).unwrap();
    let streams = convolve(&ch, &frame);
    let rx = simulate_reception(&ch, &frame, cfg.window, 0.0, &mut r).unwrap();
    for n in cfg.window - 1..cfg.frame_len {
        let oracle = window(&streams, n, cfg.window);
        let product = &h.full * stacked_symbols(&frame, n, cfg.k());
        assert!(max_abs_diff(&product, &oracle) < 1e-12, "H s(n) at n = {n}");
        let got = M::from_column_slice(cfg.window_len(), 1, rx.x(n).as_slice());
        assert!(max_abs_diff(&got, &oracle) < 1e-12, "x(n) at n = {n}");
    }
}

#[test]
fn banded_toeplitz_structure() {
    let cfg = SystemConfig::reference();
    let ch = draw_channel(&cfg, &mut rng(2)).unwrap();
    let h = build_stacked_channel(&ch, cfg.window).unwrap();
    for t in 0..cfg.num_tx {
        let ht = &h.per_tx[t];
        assert_eq!(ht.shape(), (cfg.window_len(), cfg.k()));
        for l in 0..cfg.num_rx {
            for r in 0..cfg.window {
                for c in 0..cfg.k() {
                    let want = if c >= r && c - r <= cfg.channel_order {
                        ch.tap(t, l, c - r)
                    } else {
                        Complex64::new(0.0, 0.0)
                    };
                    assert_eq!(ht[(l * cfg.window + r, c)], want);
                }
            }
        }
    }
}

#[test]
fn noise_power_matches_variance() {
    let cfg = SystemConfig {
        frame_len: 25_000,
        ..SystemConfig::reference()
    };
    let silent = ChannelSet::from_fn(cfg.num_tx, cfg.num_rx, cfg.channel_order, |_, _, _| {
        Complex64::new(0.0, 0.0)
    });
    let mut r = rng(3);
    let frame = generate_frame(&cfg, &mut r).unwrap();
    let rx = simulate_reception(&silent, &frame, cfg.window, 4.0, &mut r).unwrap();
    let samples: Vec<Complex64> = rx.streams().iter().flatten().copied().collect();
    assert_eq!(samples.len(), 100_000);
    let power = samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / samples.len() as f64;
    assert!((power - 4.0).abs() < 0.2, "noise power {power}");
}

#[test]
fn symbol_frequencies_are_uniform() {
    let cfg = SystemConfig {
        num_tx: 4,
        frame_len: 25_000,
        num_rx: 10,
        ..SystemConfig::reference()
    };
    let frame = generate_frame(&cfg, &mut rng(4)).unwrap();
    let mut counts = [0usize; 4];
    for t in 0..cfg.num_tx {
        for &s in frame.stream(t) {
            let idx = sbmre::detection::QPSK
                .iter()
                .position(|&q| q == s)
                .expect("symbol outside the alphabet");
            counts[idx] += 1;
        }
    }
    let n = 100_000.0;
    let sigma = (n * 0.25 * 0.75f64).sqrt();
    for c in counts {
        assert!((c as f64 - n / 4.0).abs() < 3.0 * sigma, "counts {counts:?}");
    }
}

/// Literal Kronecker constructions of `R̂`, `AᴴA` and `Aᴴs̄` against the
/// structured builders.
fn check_structured_builders(cfg: &SystemConfig, seed: u64) {
    let mut r = rng(seed);
    let ch = draw_channel(cfg, &mut r).unwrap();
    let frame = generate_frame(cfg, &mut r).unwrap();
    let rx = simulate_reception(&ch, &frame, cfg.window, 0.3, &mut r).unwrap();
    let streams = rx.streams().to_vec();
    let k = cfg.k();
    for mode in [EqMode::Full, EqMode::Reduced] {
        let d = mode.num_delays(k);
        let rq = estimate_r(&rx, cfg, mode).unwrap();
        let naive = naive_rhat(&streams, cfg, d, mode.lag(k));
        let scale = max_abs(&naive).max(1.0);
        assert!(max_abs_diff(&rq.rhat(), &naive) <= 1e-12 * scale, "{mode:?} R̂");

        let ops = pilot_normal_ops(&rx, &frame, cfg, mode).unwrap();
        let (x, s_h) = pilot_matrices(&streams, &frame, cfg, &mode.delays(k));
        let a = identity(d * cfg.num_tx).kronecker(&x.adjoint());
        let aha = a.adjoint() * &a;
        let s_bar = M::from_column_slice(s_h.len(), 1, s_h.as_slice());
        let ahs = a.adjoint() * s_bar;
        let scale = max_abs(&aha).max(1.0);
        assert!(max_abs_diff(&ops.aha(), &aha) <= 1e-12 * scale, "{mode:?} AᴴA");
        let got = M::from_column_slice(ahs.nrows(), 1, ops.ahs().as_slice());
        assert!(
            max_abs_diff(&got, &ahs) <= 1e-12 * max_abs(&ahs).max(1.0),
            "{mode:?} Aᴴs"
        );
    }
}

#[test]
fn structured_builders_match_kronecker_scalar_toy() {
    check_structured_builders(&toy(1, 1, 1, 2, 16, 6), 31);
}

#[test]
fn structured_builders_match_kronecker_mimo_toy() {
    check_structured_builders(&toy(2, 2, 1, 3, 24, 9), 32);
}

#[test]
fn constraint_rows_annihilate_true_equalizers() {
    let cfg = SystemConfig::reference();
    let mut r = rng(12);
    let ch = draw_channel(&cfg, &mut r).unwrap();
    let frame = generate_frame(&cfg, &mut r).unwrap();
    let rx = simulate_reception(&ch, &frame, cfg.window, 0.0, &mut r).unwrap();
    let zf = zf_equalizer(&build_stacked_channel(&ch, cfg.window).unwrap()).unwrap();
    let k = cfg.k();
    for mode in [EqMode::Full, EqMode::Reduced] {
        let layout = Layout::new(&cfg, mode);
        // ZF columns for the delays the mode keeps, transmitter-major.
        let mut tx_major = CVector::zeros(layout.dim());
        for t in 0..cfg.num_tx {
            for (slot, delay) in mode.delays(k).into_iter().enumerate() {
                tx_major
                    .rows_mut(layout.tx_major_offset(t, slot), cfg.window_len())
                    .copy_from(&zf.matrix().column(t * k + delay));
            }
        }
        let g = layout.tx_major_to_delay_major(&tx_major);
        let lag = mode.lag(k);
        for n in cfg.window - 1..cfg.frame_len - lag {
            let xa: CVector = rx.x(n).into_owned();
            let xb: CVector = rx.x(n + lag).into_owned();
            let u = mre_constraint_rows(&xa, &xb, &cfg, mode).unwrap();
            let res = (&u * &g).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(res < 1e-10, "{mode:?} residual {res} at n = {n}");
        }
    }
}

#[test]
fn noise_free_rhat_has_null_space() {
    let cfg = SystemConfig::reference();
    let mut r = rng(13);
    let ch = draw_channel(&cfg, &mut r).unwrap();
    let frame = generate_frame(&cfg, &mut r).unwrap();
    let rx = simulate_reception(&ch, &frame, cfg.window, 0.0, &mut r).unwrap();
    let rq = estimate_r(&rx, &cfg, EqMode::Full).unwrap();
    let (values, _) = hermitian_eigen(&rq.core().to_dense()).unwrap();
    let largest = *values.last().unwrap();
    assert!(values[0] <= 1e-10 * largest, "{} vs {largest}", values[0]);
}

#[test]
fn zf_delays_follow_symbol_shift() {
    let cfg = SystemConfig::reference();
    let mut r = rng(14);
    let ch = draw_channel(&cfg, &mut r).unwrap();
    let frame = generate_frame(&cfg, &mut r).unwrap();
    let rx = simulate_reception(&ch, &frame, cfg.window, 0.0, &mut r).unwrap();
    let bank = zf_equalizer(&build_stacked_channel(&ch, cfg.window).unwrap()).unwrap();
    for delay in 0..cfg.k() {
        let est = apply_bank(&bank, &rx, delay).unwrap();
        for t in 0..cfg.num_tx {
            for n in est.start()..est.end() {
                let err = (est.get(t, n) - frame.stream(t)[n]).norm();
                assert!(err < 1e-10, "delay {delay}, t {t}, n {n}: {err}");
            }
        }
        // Window n carries s(n − delay).
        let window_n = cfg.window - 1 + delay;
        let g = bank.equalizer(0, delay).unwrap();
        let out = (g.adjoint() * rx.x(window_n))[(0, 0)];
        assert!((out - frame.stream(0)[window_n - delay]).norm() < 1e-10);
    }
}

#[test]
fn mmse_matches_direct_formula() {
    let cfg = SystemConfig::reference();
    let ch = draw_channel(&cfg, &mut rng(15)).unwrap();
    let h = build_stacked_channel(&ch, cfg.window).unwrap();
    let sigma2 = 0.37;
    let bank = mmse_equalizer(&h, sigma2).unwrap();
    let hh = &h.full * h.full.adjoint() + identity(cfg.window_len()) * Complex64::new(sigma2, 0.0);
    let oracle = gauss_solve(&hh, &h.full);
    assert!(max_abs_diff(bank.matrix(), &oracle) < 1e-9);
    let zf = mmse_equalizer(&h, 0.0).unwrap();
    assert!(max_abs_diff(&(zf.matrix().adjoint() * &h.full), &identity(cfg.k() * cfg.num_tx)) < 1e-9);
}

#[test]
fn mmse_error_does_not_exceed_zf() {
    let cfg = SystemConfig {
        snr_db: 5.0,
        ..SystemConfig::reference()
    };
    let sigma2 = sbmre::model::noise_variance_from_snr(&cfg);
    let (mut mse_zf, mut mse_mmse) = (0.0, 0.0);
    for seed in 0..100 {
        let mut r = rng(1000 + seed);
        let ch = draw_channel(&cfg, &mut r).unwrap();
        let frame = generate_frame(&cfg, &mut r).unwrap();
        let rx = simulate_reception(&ch, &frame, cfg.window, sigma2, &mut r).unwrap();
        let h = build_stacked_channel(&ch, cfg.window).unwrap();
        for (bank, acc) in [
            (zf_equalizer(&h).unwrap(), &mut mse_zf),
            (mmse_equalizer(&h, sigma2).unwrap(), &mut mse_mmse),
        ] {
            let est = apply_bank(&bank, &rx, 0).unwrap();
            for t in 0..cfg.num_tx {
                for n in cfg.num_pilots..cfg.frame_len {
                    *acc += (est.get(t, n) - frame.stream(t)[n]).norm_sqr();
                }
            }
        }
    }
    assert!(mse_mmse <= mse_zf, "MMSE {mse_mmse} vs ZF {mse_zf}");
}

#[test]
fn semi_blind_without_blind_term_is_pilot_least_squares() {
    let cfg = SystemConfig {
        num_pilots: 60,
        ..SystemConfig::reference()
    };
    let mut r = rng(16);
    let ch = draw_channel(&cfg, &mut r).unwrap();
    let frame = generate_frame(&cfg, &mut r).unwrap();
    let rx = simulate_reception(&ch, &frame, cfg.window, 0.2, &mut r).unwrap();
    let streams = rx.streams().to_vec();
    for mode in [EqMode::Full, EqMode::Reduced] {
        let ops = pilot_normal_ops(&rx, &frame, &cfg, mode).unwrap();
        let rq = estimate_r(&rx, &cfg, mode).unwrap();
        let sol = sb_mre(&ops, &rq, 0.0, &cfg).unwrap();
        let (x, s_h) = pilot_matrices(&streams, &frame, &cfg, &mode.delays(cfg.k()));
        let ls = least_squares(&x.adjoint(), &s_h).unwrap();
        assert!(
            max_abs_diff(sol.bank.matrix(), &ls.x) < 1e-8 * max_abs(&ls.x),
            "{mode:?}"
        );
    }
}

#[test]
fn semi_blind_inverts_channel_exactly_without_noise() {
    let cfg = SystemConfig {
        num_pilots: 64,
        ..SystemConfig::reference()
    };
    let mut r = rng(17);
    let ch = draw_channel(&cfg, &mut r).unwrap();
    let frame = generate_frame(&cfg, &mut r).unwrap();
    let rx = simulate_reception(&ch, &frame, cfg.window, 0.0, &mut r).unwrap();
    let ops = pilot_normal_ops(&rx, &frame, &cfg, EqMode::Full).unwrap();
    let rq = estimate_r(&rx, &cfg, EqMode::Full).unwrap();
    let sol = sb_mre(&ops, &rq, 0.0, &cfg).unwrap();
    let h = build_stacked_channel(&ch, cfg.window).unwrap();
    let prod = sol.bank.matrix().adjoint() * &h.full;
    assert!(max_abs_diff(&prod, &identity(cfg.k() * cfg.num_tx)) < 1e-8);
}

#[test]
fn semi_blind_matches_dense_permuted_solve() {
    let cfg = toy(2, 2, 1, 3, 30, 8);
    let mut r = rng(18);
    let ch = draw_channel(&cfg, &mut r).unwrap();
    let frame = generate_frame(&cfg, &mut r).unwrap();
    let rx = simulate_reception(&ch, &frame, cfg.window, 0.1, &mut r).unwrap();
    let streams = rx.streams().to_vec();
    let k = cfg.k();
    for mode in [EqMode::Full, EqMode::Reduced] {
        let d = mode.num_delays(k);
        let layout = Layout::new(&cfg, mode);
        let ops = pilot_normal_ops(&rx, &frame, &cfg, mode).unwrap();
        let rq = estimate_r(&rx, &cfg, mode).unwrap();
        let lambda = 0.7;
        let sol = sb_mre(&ops, &rq, lambda, &cfg).unwrap();

        // Literal system in transmitter-major layout.
        let rhat = naive_rhat(&streams, &cfg, d, mode.lag(k));
        let p = layout.permutation();
        let (x, s_h) = pilot_matrices(&streams, &frame, &cfg, &mode.delays(k));
        let a = identity(d * cfg.num_tx).kronecker(&x.adjoint());
        let weight = Complex64::new(lambda * rq.sample_count() as f64, 0.0);
        let system = a.adjoint() * &a + &p * rhat * p.adjoint() * weight;
        let rhs = a.adjoint() * M::from_column_slice(s_h.len(), 1, s_h.as_slice());
        let g = gauss_solve(&system, &rhs);
        let got = M::from_column_slice(layout.dim(), 1, sol.bank.to_tx_major().as_slice());
        assert!(max_abs_diff(&got, &g) < 1e-9 * max_abs(&g), "{mode:?}");
    }
}

#[test]
fn windows_from_streams_follow_row_convention() {
    let mut r = rng(19);
    let streams: Vec<Vec<Complex64>> = (0..3)
        .map(|_| (0..20).map(|_| complex_gaussian(&mut r, 1.0)).collect())
        .collect();
    let rx = ReceivedWindows::from_streams(streams.clone(), 4, 0.0).unwrap();
    assert_eq!(rx.matrix().ncols(), 20 - 4 + 1);
    for n in 3..20 {
        for (l, stream) in streams.iter().enumerate() {
            for k in 0..4 {
                assert_eq!(rx.x(n)[l * 4 + k], stream[n - k]);
            }
        }
    }
}
