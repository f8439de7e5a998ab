//! QPSK decisions, blind ambiguity removal and symbol error counting.

use std::f64::consts::FRAC_1_SQRT_2;
use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{least_squares, CMatrix};
use crate::model::Frame;

/// Unit-energy QPSK alphabet `(±1 ± j)/√2`.
pub const QPSK: [Complex64; 4] = [
    Complex64::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    Complex64::new(-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    Complex64::new(-FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
    Complex64::new(FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
];

/// T symbol streams addressed by absolute time index `n`, covering
/// `start .. start + len`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolStreams {
    start: usize,
    data: Vec<Vec<Complex64>>,
}

impl SymbolStreams {
    pub fn new(start: usize, data: Vec<Vec<Complex64>>) -> Result<Self> {
        let len = data.first().map_or(0, Vec::len);
        if data.is_empty() || data.iter().any(|s| s.len() != len) {
            return Err(Error::Dimension("streams must be non-empty and equally long".into()));
        }
        Ok(Self { start, data })
    }

    pub fn from_frame(frame: &Frame) -> Self {
        Self {
            start: 0,
            data: frame.streams().to_vec(),
        }
    }

    pub fn num_streams(&self) -> usize {
        self.data.len()
    }

    pub fn start(&self) -> usize {
        self.start
    }

    /// One past the last covered index.
    pub fn end(&self) -> usize {
        self.start + self.data[0].len()
    }

    pub fn covers(&self, region: &Range<usize>) -> bool {
        region.start >= self.start && region.end <= self.end()
    }

    pub fn get(&self, t: usize, n: usize) -> Complex64 {
        self.data[t][n - self.start]
    }

    pub fn stream(&self, t: usize) -> &[Complex64] {
        &self.data[t]
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            start: self.start,
            data: self.data.iter().map(|s| s.iter().map(|&z| f(z)).collect()).collect(),
        }
    }

    /// Reorders streams: output stream `i` is input stream `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            start: self.start,
            data: perm.iter().map(|&p| self.data[p].clone()).collect(),
        }
    }
}

/// Nearest QPSK point. Zero components are resolved toward `+`.
pub fn qpsk_decide(z: Complex64) -> Complex64 {
    let re = if z.re >= 0.0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
    let im = if z.im >= 0.0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
    Complex64::new(re, im)
}

pub fn qpsk_detect(streams: &SymbolStreams) -> SymbolStreams {
    streams.map(qpsk_decide)
}

fn check_region(streams: &SymbolStreams, truth: &SymbolStreams, region: &Range<usize>) -> Result<()> {
    if region.is_empty() {
        return Err(Error::InsufficientData("empty evaluation region".into()));
    }
    if streams.num_streams() != truth.num_streams() {
        return Err(Error::Dimension(format!(
            "{} estimated streams vs {} reference streams",
            streams.num_streams(),
            truth.num_streams()
        )));
    }
    if !streams.covers(region) || !truth.covers(region) {
        return Err(Error::Dimension(format!(
            "region {region:?} is not covered by the streams ({}..{} and {}..{})",
            streams.start(),
            streams.end(),
            truth.start(),
            truth.end()
        )));
    }
    Ok(())
}

/// Output of [`genie_align`].
#[derive(Debug, Clone)]
pub struct Alignment {
    pub aligned: SymbolStreams,
    /// `T×T` mixing matrix applied to the estimates.
    pub mixing: CMatrix,
}

/// Resolves the `T×T` linear ambiguity of blind estimates by a least-squares
/// fit of `C·ŝ(n)` to the true symbols over `region`. Evaluation only.
pub fn genie_align(streams: &SymbolStreams, truth: &SymbolStreams, region: Range<usize>) -> Result<Alignment> {
    check_region(streams, truth, &region)?;
    let t = streams.num_streams();
    if region.len() < t {
        return Err(Error::InsufficientData(format!(
            "alignment region of {} samples cannot fit {t} streams",
            region.len()
        )));
    }
    let rows = region.len();
    let a = CMatrix::from_fn(rows, t, |r, c| streams.get(c, region.start + r));
    let b = CMatrix::from_fn(rows, t, |r, c| truth.get(c, region.start + r));
    let sol = least_squares(&a, &b)?;
    if sol.regularized {
        return Err(Error::Numerical(
            "blind streams are linearly dependent; cannot align".into(),
        ));
    }
    let mixing = sol.x.transpose();
    let data = (0..t)
        .map(|i| {
            (0..streams.data[0].len())
                .map(|j| (0..t).map(|c| mixing[(i, c)] * streams.data[c][j]).sum())
                .collect()
        })
        .collect();
    Ok(Alignment {
        aligned: SymbolStreams {
            start: streams.start,
            data,
        },
        mixing,
    })
}

/// Symbol error count over a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerEstimate {
    pub errors: u64,
    pub total: u64,
}

impl SerEstimate {
    pub fn new(errors: u64, total: u64) -> Result<Self> {
        if total == 0 || errors > total {
            return Err(Error::Domain(format!("invalid SER tally {errors}/{total}")));
        }
        Ok(Self { errors, total })
    }

    /// Raw `errors / total`.
    pub fn ser(&self) -> f64 {
        self.errors as f64 / self.total as f64
    }

    /// SER with zero errors replaced by `1/total`, so that it can be
    /// log-transformed.
    pub fn ser_floored(&self) -> f64 {
        self.errors.max(1) as f64 / self.total as f64
    }
}

pub fn compute_ser(detected: &SymbolStreams, truth: &SymbolStreams, region: Range<usize>) -> Result<SerEstimate> {
    check_region(detected, truth, &region)?;
    let mut errors = 0u64;
    for t in 0..detected.num_streams() {
        for n in region.clone() {
            if detected.get(t, n) != truth.get(t, n) {
                errors += 1;
            }
        }
    }
    SerEstimate::new(errors, (detected.num_streams() * region.len()) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c64;

    fn streams(data: Vec<Vec<Complex64>>) -> SymbolStreams {
        SymbolStreams::new(0, data).unwrap()
    }

    #[test]
    fn nearest_point() {
        let s = FRAC_1_SQRT_2;
        assert_eq!(qpsk_decide(c64(0.9, 0.8)), c64(s, s));
        assert_eq!(qpsk_decide(c64(-0.1, 2.0)), c64(-s, s));
        assert_eq!(qpsk_decide(c64(0.0, 0.0)), c64(s, s));
        for p in QPSK {
            assert_eq!(qpsk_decide(p), p);
        }
    }

    #[test]
    fn ser_counts() {
        let truth = streams(vec![vec![QPSK[0]; 100]]);
        let mut det = truth.clone();
        assert_eq!(compute_ser(&det, &truth, 0..100).unwrap().errors, 0);
        det.data[0][17] = QPSK[2];
        let e = compute_ser(&det, &truth, 0..100).unwrap();
        assert_eq!(e.errors, 1);
        assert!((e.ser() - 0.01).abs() < 1e-15);
        assert!(compute_ser(&det, &truth, 5..5).is_err());
        assert!(compute_ser(&det, &truth, 0..101).is_err());
    }

    #[test]
    fn ser_floor() {
        let e = SerEstimate::new(0, 448).unwrap();
        assert_eq!(e.ser(), 0.0);
        assert!((e.ser_floored() - 1.0 / 448.0).abs() < 1e-18);
        assert!(SerEstimate::new(3, 2).is_err());
        assert!(SerEstimate::new(0, 0).is_err());
    }

    fn qpsk_sequence(len: usize, seed: u64) -> Vec<Complex64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| QPSK[rng.random_range(0..4)]).collect()
    }

    #[test]
    fn align_identity_and_scalar() {
        let truth = streams(vec![qpsk_sequence(50, 0), qpsk_sequence(50, 1)]);
        let al = genie_align(&truth, &truth, 0..50).unwrap();
        assert!((al.mixing.clone() - CMatrix::identity(2, 2)).norm() < 1e-10);

        let a = c64(0.3, -1.7);
        let scaled = truth.map(|z| z * a);
        let al = genie_align(&scaled, &truth, 0..50).unwrap();
        let expected = CMatrix::identity(2, 2).scale(1.0) * (c64(1.0, 0.0) / a);
        assert!((al.mixing - expected).norm() < 1e-10);
    }

    #[test]
    fn align_rejects_dependent_streams() {
        let s = qpsk_sequence(40, 2);
        let est = streams(vec![s.clone(), s.iter().map(|z| z * 2.0).collect()]);
        let truth = streams(vec![qpsk_sequence(40, 0), qpsk_sequence(40, 1)]);
        assert!(genie_align(&est, &truth, 0..40).is_err());
    }
}
