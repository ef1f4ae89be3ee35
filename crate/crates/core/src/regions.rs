//! Angle regions of backward chains and their weighted volumes.
//!
//! A backward chain with angles `alpha_1..alpha_n` starting at beam
//! distance `r_0` ends at `r_n = r_0 / (cos a_1 ... cos a_n)`. The chain can
//! carry boundary data only when `c <= r_n <= R`; the set of such angle
//! tuples is `W`. `W` splits by the early radius `r_k`, `k = floor(beta*n) + 1`:
//!
//! * `W1`: `r_k < c/D` — the first `k` legs stay deep inside the beam ball,
//!   which forces small return rates and geometric decay of the chain
//!   weight;
//! * `W2 = W \ W1` — the weight is not small, but the region itself is.
//!
//! The weighted volume is `∫ Π sin(alpha_i) d(alpha)`; in the coordinates
//! `x_i = cos(alpha_i)` it is a plain Lebesgue volume, and in
//! `y_i = -log(x_i)` the region becomes a slab between two simplices, which
//! yields the closed-form bounds implemented here. A Monte Carlo oracle in
//! the `x` coordinates cross-checks every bound.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{CoreError, Result};
use crate::geometry::ProblemParams;
use crate::stats::{parallel_mc, McEstimate, MultiAccum};

/// Maximum chain length supported by the samplers (stack buffers).
pub const MAX_CHAIN: usize = 64;

/// Parameters fixing the regions for one chain length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionParams {
    /// Beam distance of the chain anchor.
    pub r0: f64,
    /// Beam speed (copied from [`ProblemParams`]).
    pub c: f64,
    /// Support radius (copied from [`ProblemParams`]).
    pub r_support: f64,
    /// Chain length.
    pub n: usize,
    /// Fraction of the chain checked by the early-radius split.
    pub beta: f64,
    /// Split threshold divisor; `W1` requires `r_k < c/d_split`.
    pub d_split: f64,
    /// Split index `floor(beta*n) + 1`; always `<= n`.
    pub k: usize,
}

impl RegionParams {
    pub fn new(r0: f64, n: usize, beta: f64, d_split: f64, params: &ProblemParams) -> Result<Self> {
        if !(r0 > 0.0 && r0.is_finite()) {
            return Err(CoreError::invalid("r0 must be positive and finite"));
        }
        if n == 0 || n > MAX_CHAIN {
            return Err(CoreError::invalid(format!(
                "chain length must be in 1..={MAX_CHAIN}, got {n}"
            )));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(CoreError::invalid("beta must lie in (0,1)"));
        }
        if !(d_split > 1.0 && d_split.is_finite()) {
            return Err(CoreError::invalid("split divisor must exceed 1"));
        }
        let k = (beta * n as f64).floor() as usize + 1;
        debug_assert!(k <= n, "beta < 1 forces k <= n");
        Ok(RegionParams {
            r0,
            c: params.c,
            r_support: params.support_radius,
            n,
            beta,
            d_split,
            k,
        })
    }

    /// Radius after the first `j` legs, `r_0 / (cos a_1 .. cos a_j)`.
    fn radius_after(&self, alphas: &[f64], j: usize) -> f64 {
        let mut prod = 1.0;
        for &a in &alphas[..j] {
            prod *= a.cos();
        }
        self.r0 / prod
    }

    /// Final radius lands in the supported shell `[c, R]`.
    pub fn in_w(&self, alphas: &[f64]) -> bool {
        debug_assert_eq!(alphas.len(), self.n);
        let rn = self.radius_after(alphas, alphas.len());
        self.c <= rn && rn <= self.r_support
    }

    /// In `W` with the early radius still deep inside: `r_k < c/D`.
    /// The boundary `r_k = c/D` belongs to `W2`.
    pub fn in_w1(&self, alphas: &[f64]) -> bool {
        self.in_w(alphas) && self.radius_after(alphas, self.k) < self.c / self.d_split
    }

    /// In `W` but not in `W1`.
    pub fn in_w2(&self, alphas: &[f64]) -> bool {
        self.in_w(alphas) && !(self.radius_after(alphas, self.k) < self.c / self.d_split)
    }
}

/// Closed-form bound on the weighted volume of `W`:
/// `(1/n!) (r0/c) log^n(R/r0)`. Valid for any `r0 < c`; gated at the
/// deep-singularity regime `r0 <= c/2` where it is used.
pub fn vol_w_weighted_bound(rp: &RegionParams) -> Result<f64> {
    if !(rp.r0 <= rp.c / 2.0) {
        return Err(CoreError::invalid(format!(
            "bound requires r0 <= c/2, got r0 = {}, c = {}",
            rp.r0, rp.c
        )));
    }
    let log_span = (rp.r_support / rp.r0).ln();
    Ok(((rp.r0 / rp.c).ln() + rp.n as f64 * log_span.ln() - ln_gamma(rp.n as f64 + 1.0)).exp())
}

/// Exact volume of the slab between the simplices of sides `log(R/r0)` and
/// `log(c/r0)`: `(1/n!) (log^n(R/r0) - log^n(c/r0))`. Requires `r0 < c`.
///
/// This is the plain (unweighted) volume of the region
/// `{y_i >= 0, log(c/r0) <= sum y_i <= log(R/r0)}`; the weighted volume of
/// `W` equals its integral against the Jacobian `exp(-sum y_i)`.
pub fn vol_simplex_difference_exact(rp: &RegionParams) -> Result<f64> {
    if !(rp.r0 < rp.c) {
        return Err(CoreError::invalid("requires r0 < c"));
    }
    let t_outer = (rp.r_support / rp.r0).ln();
    let t_inner = (rp.c / rp.r0).ln();
    let n = rp.n as f64;
    let lead = (n * t_outer.ln() - ln_gamma(n + 1.0)).exp();
    Ok(lead * (1.0 - (t_inner / t_outer).powi(rp.n as i32)))
}

/// Binomial-sum bound on the weighted volume of `W2`:
///
/// ```text
/// (1/n!) (r0/c) Σ_{j=1}^{k} C(n, k-j) log^{n-k+j}(RD/c) log^{k-j}((c/D)/r0)
/// ```
///
/// Requires `r0 < c/(2D)` so that both logarithms are positive.
pub fn vol_w2_bound(rp: &RegionParams) -> Result<f64> {
    if !(rp.r0 < rp.c / (2.0 * rp.d_split)) {
        return Err(CoreError::invalid(format!(
            "bound requires r0 < c/(2D), got r0 = {}, c/(2D) = {}",
            rp.r0,
            rp.c / (2.0 * rp.d_split)
        )));
    }
    let u = (rp.r_support * rp.d_split / rp.c).ln();
    let v = (rp.c / (rp.d_split * rp.r0)).ln();
    debug_assert!(u > 0.0 && v > 0.0);
    let n = rp.n as f64;
    let log_r0_over_c = (rp.r0 / rp.c).ln();
    let mut sum = 0.0;
    for j in 1..=rp.k {
        let s = (rp.k - j) as f64; // exponent of the inner log
        let log_term = -ln_gamma(s + 1.0) - ln_gamma(n - s + 1.0) + (n - s) * u.ln()
            + s * v.ln()
            + log_r0_over_c;
        sum += log_term.exp();
    }
    Ok(sum)
}

/// Monte Carlo estimate of the weighted volume
/// `∫_{region} Π sin(alpha_i) d(alpha)` over `[0, pi/2)^n`.
///
/// Sampling draws `cos(alpha_i)` uniformly on `(0, 1]`, which carries
/// exactly the `sin` weight, so the estimate is the acceptance fraction of
/// `predicate`. Deterministic in `master_seed`, independent of threading.
pub fn mc_weighted_volume<P>(predicate: P, rp: &RegionParams, samples: u64, master_seed: u64) -> McEstimate
where
    P: Fn(&[f64]) -> bool + Sync,
{
    assert!(samples >= 1_000, "need at least 1000 samples");
    let n = rp.n;
    let accum: MultiAccum<1> = parallel_mc(master_seed, samples, |rng| {
        let mut alphas = [0.0f64; MAX_CHAIN];
        for a in alphas.iter_mut().take(n) {
            *a = rng.next_f64_open_left().acos();
        }
        [if predicate(&alphas[..n]) { 1.0 } else { 0.0 }]
    });
    accum.estimate(0)
}

/// One-stream split estimate of the weighted volumes of `W`, `W1`, `W2`.
/// The indicator channels partition, so `sum(W) = sum(W1) + sum(W2)`
/// exactly (integer counts).
pub fn mc_region_split(rp: &RegionParams, samples: u64, master_seed: u64) -> MultiAccum<3> {
    assert!(samples >= 1_000, "need at least 1000 samples");
    let n = rp.n;
    parallel_mc(master_seed, samples, |rng| {
        let mut alphas = [0.0f64; MAX_CHAIN];
        for a in alphas.iter_mut().take(n) {
            *a = rng.next_f64_open_left().acos();
        }
        let slice = &alphas[..n];
        if !rp.in_w(slice) {
            return [0.0, 0.0, 0.0];
        }
        let deep = rp.radius_after(slice, rp.k) < rp.c / rp.d_split;
        if deep {
            [1.0, 1.0, 0.0]
        } else {
            [1.0, 0.0, 1.0]
        }
    })
}

/// Monte Carlo oracle for [`vol_simplex_difference_exact`]: uniform box
/// sampling of the `y` coordinates. Every accepted sample satisfies the
/// Jacobian bound `exp(-sum y_i) <= r0/c`, which is asserted.
pub fn mc_simplex_difference(rp: &RegionParams, samples: u64, master_seed: u64) -> Result<McEstimate> {
    if !(rp.r0 < rp.c) {
        return Err(CoreError::invalid("requires r0 < c"));
    }
    assert!(samples >= 1_000, "need at least 1000 samples");
    let n = rp.n;
    let hi = (rp.r_support / rp.r0).ln();
    let lo = (rp.c / rp.r0).ln();
    let jacobian_cap = rp.r0 / rp.c;
    let box_volume = hi.powi(n as i32);
    let accum: MultiAccum<1> = parallel_mc(master_seed, samples, |rng| {
        let mut total = 0.0;
        for _ in 0..n {
            total += rng.uniform(0.0, hi);
        }
        if lo <= total && total <= hi {
            assert!((-total).exp() <= jacobian_cap * (1.0 + 1e-12));
            [1.0]
        } else {
            [0.0]
        }
    });
    let raw = accum.estimate(0);
    Ok(McEstimate {
        value: raw.value * box_volume,
        stderr: raw.stderr * box_volume,
        samples: raw.samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_3;

    fn params(c: f64, r: f64) -> ProblemParams {
        ProblemParams::new(c, r, 1.0, 1.0).unwrap()
    }

    fn rp(r0: f64, n: usize, beta: f64, d: f64, c: f64, r: f64) -> RegionParams {
        RegionParams::new(r0, n, beta, d, &params(c, r)).unwrap()
    }

    #[test]
    fn w_membership_examples() {
        let rp1 = rp(1.0, 1, 0.25, 3.0, 1.0, 2.0);
        assert!(rp1.in_w(&[0.0])); // r_n = c exactly
        let rp2 = rp(0.5, 1, 0.25, 3.0, 1.0, 2.0);
        assert!(!rp2.in_w(&[0.0])); // r_n = c/2 < c
        assert!(rp2.in_w(&[FRAC_PI_3])); // cos = 1/2 lifts r_n to c
        let rp3 = rp(2.5, 1, 0.25, 3.0, 1.0, 2.0);
        assert!(!rp3.in_w(&[0.0])); // r0 beyond R; only grows
    }

    #[test]
    fn split_index_formula() {
        assert_eq!(rp(0.1, 1, 0.25, 3.0, 1.0, 2.0).k, 1);
        assert_eq!(rp(0.1, 4, 0.25, 3.0, 1.0, 2.0).k, 2);
        assert_eq!(rp(0.1, 8, 0.25, 3.0, 1.0, 2.0).k, 3);
        assert_eq!(rp(0.1, 3, 0.7, 3.0, 1.0, 2.0).k, 3);
        for n in 1..=20 {
            for beta in [0.1, 0.25, 0.5, 0.9, 0.99] {
                assert!(rp(0.1, n, beta, 3.0, 1.0, 2.0).k <= n);
            }
        }
    }

    #[test]
    fn partition_of_w() {
        let rp = rp(0.08, 4, 0.25, 3.0, 1.0, 2.0);
        let mut rng = crate::rng::CounterRng::new(11, 0);
        let mut seen_w1 = 0;
        let mut seen_w2 = 0;
        for _ in 0..20_000 {
            let alphas: Vec<f64> = (0..4).map(|_| rng.next_f64_open_left().acos()).collect();
            let w = rp.in_w(&alphas);
            let w1 = rp.in_w1(&alphas);
            let w2 = rp.in_w2(&alphas);
            assert_eq!(w, w1 || w2);
            assert!(!(w1 && w2));
            seen_w1 += w1 as u64;
            seen_w2 += w2 as u64;
        }
        assert!(seen_w1 > 0 && seen_w2 > 0, "split never exercised");
    }

    #[test]
    fn boundary_radius_goes_to_w2() {
        // With alpha_1 = 0 the early radius equals r0 bitwise; set r0 = c/D.
        let rp = rp(0.5, 2, 0.25, 2.0, 1.0, 2.0);
        assert_eq!(rp.k, 1);
        let alphas = [0.0, (0.45f64).acos()]; // r_2 = 0.5/0.45 within [c, R]
        assert!(rp.in_w(&alphas));
        assert!(!rp.in_w1(&alphas));
        assert!(rp.in_w2(&alphas));
        // Strictly inside the threshold lands in W1.
        let rp_deep = super::RegionParams { r0: 0.5 * (1.0 - 1e-9), ..rp };
        assert!(rp_deep.in_w1(&[0.0, (0.45f64 * (1.0 - 1e-9)).acos()]));
    }

    #[test]
    fn w_bound_examples() {
        let r = rp(0.5, 1, 0.25, 3.0, 1.0, 2.0);
        assert_relative_eq!(vol_w_weighted_bound(&r).unwrap(), 0.5 * 4.0f64.ln(), max_relative = 1e-12);
        // Exact n=1 weighted volume: cos(alpha) must land in [r0/R, r0/c].
        let exact = 0.5 / 1.0 - 0.5 / 2.0;
        assert!(exact <= vol_w_weighted_bound(&r).unwrap());
        // Monotone in R.
        let wider = rp(0.5, 1, 0.25, 3.0, 1.0, 3.0);
        assert!(vol_w_weighted_bound(&wider).unwrap() > vol_w_weighted_bound(&r).unwrap());
        // Precondition r0 < c/2.
        assert!(vol_w_weighted_bound(&rp(0.6, 1, 0.25, 3.0, 1.0, 2.0)).is_err());
    }

    #[test]
    fn simplex_difference_examples() {
        let r1 = rp(0.5, 1, 0.25, 3.0, 1.0, 2.0);
        assert_relative_eq!(
            vol_simplex_difference_exact(&r1).unwrap(),
            2.0f64.ln(),
            max_relative = 1e-12
        );
        let r3 = rp(0.25, 3, 0.25, 3.0, 1.0, std::f64::consts::E);
        let t_outer = 1.0 + 4.0f64.ln();
        let t_inner = 4.0f64.ln();
        assert_relative_eq!(
            vol_simplex_difference_exact(&r3).unwrap(),
            (t_outer.powi(3) - t_inner.powi(3)) / 6.0,
            max_relative = 1e-12
        );
        let degenerate = rp(0.5, 2, 0.25, 3.0, 1.0, 1.0 + 1e-9);
        assert!(vol_simplex_difference_exact(&degenerate).unwrap() < 1e-8);
    }

    #[test]
    fn simplex_difference_matches_mc() {
        let r3 = rp(0.25, 3, 0.25, 3.0, 1.0, std::f64::consts::E);
        let exact = vol_simplex_difference_exact(&r3).unwrap();
        let mc = mc_simplex_difference(&r3, 1_000_000, 42).unwrap();
        assert!(
            (mc.value - exact).abs() <= 3.0 * mc.stderr,
            "mc {} +- {} vs exact {exact}",
            mc.value,
            mc.stderr
        );
    }

    #[test]
    fn w2_bound_collapses_at_k_equals_one() {
        let r = rp(0.05, 2, 0.25, 3.0, 1.0, 2.0);
        assert_eq!(r.k, 1);
        let u = (2.0 * 3.0 / 1.0f64).ln();
        assert_relative_eq!(
            vol_w2_bound(&r).unwrap(),
            0.5 * 0.05 * u * u,
            max_relative = 1e-12
        );
    }

    #[test]
    fn w2_bound_telescopes_at_k_equals_n() {
        let r = rp(0.02, 3, 0.7, 3.0, 1.0, 2.0);
        assert_eq!(r.k, 3);
        let span = (2.0 / 0.02f64).ln();
        let inner = (1.0 / (3.0 * 0.02f64)).ln();
        let expected = (0.02 / 1.0) * (span.powi(3) - inner.powi(3)) / 6.0;
        assert_relative_eq!(vol_w2_bound(&r).unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn w2_bound_requires_positive_logs() {
        assert!(vol_w2_bound(&rp(0.2, 2, 0.25, 3.0, 1.0, 2.0)).is_err());
    }

    #[test]
    fn mc_trivial_predicates() {
        let r = rp(0.5, 2, 0.25, 3.0, 1.0, 2.0);
        let all = mc_weighted_volume(|_| true, &r, 10_000, 7);
        assert_eq!(all.value, 1.0);
        assert_eq!(all.stderr, 0.0);
        let beyond = rp(2.5, 2, 0.25, 3.0, 1.0, 2.0);
        let none = mc_weighted_volume(|a| beyond.in_w(a), &beyond, 10_000, 7);
        assert_eq!(none.value, 0.0);
    }

    #[test]
    fn mc_matches_exact_single_step_volume() {
        let r = rp(0.5, 1, 0.25, 3.0, 1.0, 2.0);
        let est = mc_weighted_volume(|a| r.in_w(a), &r, 1_000_000, 13);
        let exact = 0.25;
        assert!((est.value - exact).abs() <= 3.0 * est.stderr);
    }

    #[test]
    fn mc_split_is_an_exact_partition() {
        let r = rp(0.08, 3, 0.25, 3.0, 1.0, 2.0);
        let split = mc_region_split(&r, 200_000, 99);
        assert_eq!(split.sum(0), split.sum(1) + split.sum(2));
        let again = mc_region_split(&r, 200_000, 99);
        assert_eq!(split.sum(0).to_bits(), again.sum(0).to_bits());
    }

    #[test]
    fn mc_w_below_closed_form_bound() {
        for n in 1..=6 {
            let r = rp(0.3, n, 0.25, 3.0, 1.0, 2.0);
            let est = mc_weighted_volume(|a| r.in_w(a), &r, 200_000, 17);
            let bound = vol_w_weighted_bound(&r).unwrap();
            assert!(
                est.value <= bound + 3.0 * est.stderr,
                "n={n}: {} vs bound {bound}",
                est.value
            );
        }
    }

    #[test]
    fn mc_w2_below_binomial_bound() {
        for n in [2, 3, 4] {
            let r = rp(0.1, n, 0.25, 3.0, 1.0, 2.0);
            let est = mc_weighted_volume(|a| r.in_w2(a), &r, 400_000, 23);
            let bound = vol_w2_bound(&r).unwrap();
            assert!(
                est.value <= bound + 3.0 * est.stderr,
                "n={n}: {} vs bound {bound}",
                est.value
            );
        }
    }

    #[test]
    fn invalid_region_params() {
        let p = params(1.0, 2.0);
        assert!(RegionParams::new(0.0, 2, 0.25, 3.0, &p).is_err());
        assert!(RegionParams::new(0.1, 0, 0.25, 3.0, &p).is_err());
        assert!(RegionParams::new(0.1, 2, 1.0, 3.0, &p).is_err());
        assert!(RegionParams::new(0.1, 2, 0.25, 1.0, &p).is_err());
        assert!(RegionParams::new(0.1, 100, 0.25, 3.0, &p).is_err());
    }
}
