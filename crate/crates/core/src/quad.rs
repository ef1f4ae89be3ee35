//! Adaptive one-dimensional quadrature and Gauss-Legendre node generation.
//!
//! The adaptive driver is a global-heap Gauss-Kronrod 7/15 scheme: the
//! segment with the largest error estimate is bisected until the summed
//! error meets the tolerance or the evaluation budget runs out. Higher
//! dimensional integrals in this crate are built by nesting these drivers
//! or by tensor Gauss-Legendre rules with order escalation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BinaryHeap;

use crate::error::{CoreError, Result};

/// Tolerance and budget contract for a numerical integration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub relative_tolerance: f64,
    pub absolute_tolerance: f64,
    pub max_evaluations: u64,
    /// Where a smooth unbounded factor must be truncated, cut at this many
    /// standard deviations (or characteristic widths).
    pub truncation_radius: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            relative_tolerance: 1e-8,
            absolute_tolerance: 1e-14,
            max_evaluations: 20_000_000,
            truncation_radius: 8.0,
        }
    }
}

impl QuadratureSpec {
    pub fn with_tolerance(rel: f64, abs: f64) -> Self {
        QuadratureSpec {
            relative_tolerance: rel,
            absolute_tolerance: abs,
            ..Default::default()
        }
    }

    /// Spec for an inner integral of a nested integration, tightened so the
    /// inner error does not dominate the outer estimate.
    pub fn inner(&self) -> Self {
        QuadratureSpec {
            relative_tolerance: (self.relative_tolerance * 0.1).max(1e-13),
            absolute_tolerance: self.absolute_tolerance * 0.1,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.relative_tolerance > 0.0 && self.relative_tolerance.is_finite()) {
            return Err(CoreError::invalid("relative_tolerance must be positive"));
        }
        if !(self.absolute_tolerance >= 0.0 && self.absolute_tolerance.is_finite()) {
            return Err(CoreError::invalid("absolute_tolerance must be >= 0"));
        }
        if self.max_evaluations == 0 {
            return Err(CoreError::invalid("max_evaluations must be positive"));
        }
        if !(self.truncation_radius > 0.0) {
            return Err(CoreError::invalid("truncation_radius must be positive"));
        }
        Ok(())
    }
}

/// Converged integral value with an error bound and the evaluation count.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadResult {
    pub value: f64,
    pub err_bound: f64,
    pub evaluations: u64,
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1], positive half.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_2,
    0.949_107_912_342_758_524_5,
    0.864_864_423_359_769_072_8,
    0.741_531_185_599_394_439_9,
    0.586_087_235_467_691_130_3,
    0.405_845_151_377_397_166_9,
    0.207_784_955_007_898_467_6,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_96,
    0.063_092_092_629_978_553_29,
    0.104_790_010_322_250_183_8,
    0.140_653_259_715_525_918_7,
    0.169_004_726_639_267_902_8,
    0.190_350_578_064_785_409_9,
    0.204_432_940_075_298_892_4,
    0.209_482_141_084_727_828_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_3,
    0.279_705_391_489_276_667_9,
    0.381_830_050_505_118_944_9,
    0.417_959_183_673_469_387_8,
];

trait QuadValue: Copy {
    fn zero() -> Self;
    fn add(self, other: Self) -> Self;
    fn scale(self, s: f64) -> Self;
    fn norm(self) -> f64;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn add(self, other: Self) -> Self {
        self + other
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn norm(self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn add(self, other: Self) -> Self {
        self + other
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn norm(self) -> f64 {
        num_complex::ComplexFloat::abs(self)
    }
}

/// One Gauss-Kronrod 7/15 pass over [a, b]: returns (kronrod, |kronrod - gauss|).
fn gk15<V: QuadValue>(f: &mut impl FnMut(f64) -> V, a: f64, b: f64) -> (V, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut resk = V::zero();
    let mut resg = V::zero();
    for i in 0..8 {
        if XGK[i] == 0.0 {
            let v = f(mid);
            resk = resk.add(v.scale(WGK[i]));
            resg = resg.add(v.scale(WG[3]));
        } else {
            let lo = f(mid - half * XGK[i]);
            let hi = f(mid + half * XGK[i]);
            let pair = lo.add(hi);
            resk = resk.add(pair.scale(WGK[i]));
            if i % 2 == 1 {
                resg = resg.add(pair.scale(WG[i / 2]));
            }
        }
    }
    let err = resk.add(resg.scale(-1.0)).norm() * half.abs();
    (resk.scale(half), err)
}

struct Segment<V> {
    err: f64,
    a: f64,
    b: f64,
    value: V,
}

impl<V> PartialEq for Segment<V> {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl<V> Eq for Segment<V> {}
impl<V> PartialOrd for Segment<V> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<V> Ord for Segment<V> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn adaptive<V: QuadValue>(
    mut f: impl FnMut(f64) -> V,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
) -> std::result::Result<(V, f64, u64), (V, f64, u64)> {
    let mut evals: u64 = 0;
    let mut heap: BinaryHeap<Segment<V>> = BinaryHeap::new();
    let (v, e) = gk15(&mut f, a, b);
    evals += 15;
    heap.push(Segment {
        err: e,
        a,
        b,
        value: v,
    });
    let mut total_err = e;
    let mut total_val = v;
    loop {
        let tol = spec
            .absolute_tolerance
            .max(spec.relative_tolerance * total_val.norm());
        if total_err <= tol {
            return Ok((total_val, total_err, evals));
        }
        if evals + 30 > spec.max_evaluations {
            return Err((total_val, total_err, evals));
        }
        let worst = heap.pop().expect("heap cannot be empty");
        let mid = 0.5 * (worst.a + worst.b);
        if !(worst.a < mid && mid < worst.b) {
            // Interval at floating-point resolution; accept as is.
            heap.push(Segment {
                err: 0.0,
                ..worst
            });
            total_err = heap.iter().map(|s| s.err).sum();
            continue;
        }
        let (v1, e1) = gk15(&mut f, worst.a, mid);
        let (v2, e2) = gk15(&mut f, mid, worst.b);
        evals += 30;
        total_val = total_val.add(worst.value.scale(-1.0)).add(v1).add(v2);
        total_err += e1 + e2 - worst.err;
        heap.push(Segment {
            err: e1,
            a: worst.a,
            b: mid,
            value: v1,
        });
        heap.push(Segment {
            err: e2,
            a: mid,
            b: worst.b,
            value: v2,
        });
        // Guard against drift in the incrementally tracked error.
        if evals % (15 * 1024) == 0 {
            total_err = heap.iter().map(|s| s.err).sum();
        }
    }
}

/// Adaptive integral of a real integrand over [a, b].
pub fn adaptive_1d(
    f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            err_bound: 0.0,
            evaluations: 0,
        });
    }
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(CoreError::invalid(format!(
            "integration bounds must be finite with a < b, got [{a}, {b}]"
        )));
    }
    match adaptive(f, a, b, spec) {
        Ok((value, err_bound, evaluations)) => Ok(QuadResult {
            value,
            err_bound,
            evaluations,
        }),
        Err((best, err_bound, evaluations)) => Err(CoreError::QuadratureFailure {
            best,
            err_bound,
            evaluations,
        }),
    }
}

/// Adaptive integral of a complex integrand over [a, b].
pub fn adaptive_1d_complex(
    f: impl FnMut(f64) -> Complex64,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
) -> Result<(Complex64, f64, u64)> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(CoreError::invalid(format!(
            "integration bounds must be finite with a < b, got [{a}, {b}]"
        )));
    }
    match adaptive(f, a, b, spec) {
        Ok(out) => Ok(out),
        Err((best, err_bound, evaluations)) => Err(CoreError::QuadratureFailure {
            best: num_complex::ComplexFloat::abs(best),
            err_bound,
            evaluations,
        }),
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence. Exact for polynomials of degree 2n - 1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Gauss-Legendre nodes and weights mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|t| t * half).collect(),
    )
}
