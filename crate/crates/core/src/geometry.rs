//! Velocity-space geometry for a gas of hard spheres against a cold beam.
//!
//! The background is monokinetic at velocity `(-c, 0, 0)`: every collision
//! partner moves with the beam. A collision with impact direction `n`
//! exchanges the momentum component along `n`, so post-collision velocities
//! never move away from the beam point; `|xi' - beam| <= |xi - beam|`, with
//! equality exactly when `n` is perpendicular to `xi - beam`.
//!
//! Conventions used throughout the crate:
//! * component 1 (`x`) is the wall normal; the wall sits at depth 0 and the
//!   gas fills depth > 0,
//! * the influence plane of a velocity `xi` is the plane through `xi`
//!   perpendicular to `xi - beam`; every one-collision precursor of `xi`
//!   lies on it,
//! * backward chains grow by polar angle `alpha in [0, pi/2)` and azimuth
//!   `phi in [0, 2*pi)` on the current influence plane, with radii
//!   `r_i = r_{i-1} / cos(alpha_i)`.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{CoreError, Result};
use crate::rng::CounterRng;

/// Absolute tolerance for unit-vector and orthonormality checks.
pub const UNIT_TOLERANCE: f64 = 1e-12;

/// A velocity in R^3. Component `x` is normal to the wall.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Velocity3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Velocity3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Velocity3 { x, y, z }
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Self) -> Self {
        Velocity3 {
            x: self.y * other.z - self.z * other.y,
            y: self.z * other.x - self.x * other.z,
            z: self.x * other.y - self.y * other.x,
        }
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn normalized(self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(CoreError::degenerate("cannot normalize a zero vector"));
        }
        Ok(self * (1.0 / n))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn as_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Velocity3::new(a[0], a[1], a[2])
    }
}

impl Add for Velocity3 {
    type Output = Velocity3;
    fn add(self, o: Velocity3) -> Velocity3 {
        Velocity3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Velocity3 {
    type Output = Velocity3;
    fn sub(self, o: Velocity3) -> Velocity3 {
        Velocity3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Velocity3 {
    type Output = Velocity3;
    fn mul(self, s: f64) -> Velocity3 {
        Velocity3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Velocity3 {
    type Output = Velocity3;
    fn neg(self) -> Velocity3 {
        Velocity3::new(-self.x, -self.y, -self.z)
    }
}

/// Problem-wide physical parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    /// Beam speed; the background moves at `(-c, 0, 0)`.
    pub c: f64,
    /// Radius of the ball around the beam velocity that carries the
    /// outgoing boundary distribution.
    pub support_radius: f64,
    /// Uniform bound on the outgoing boundary density.
    pub density_bound: f64,
    /// Multiplies the collision rate; return statistics are invariant
    /// under it because only path lengths rescale.
    pub rate_multiplier: f64,
}

impl ProblemParams {
    pub fn new(c: f64, support_radius: f64, density_bound: f64, rate_multiplier: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(CoreError::invalid("beam speed c must be positive and finite"));
        }
        if !(support_radius > c && support_radius.is_finite()) {
            return Err(CoreError::invalid("support radius must exceed the beam speed c"));
        }
        if !(density_bound > 0.0 && density_bound.is_finite()) {
            return Err(CoreError::invalid("density bound must be positive and finite"));
        }
        if !(rate_multiplier > 0.0 && rate_multiplier.is_finite()) {
            return Err(CoreError::invalid("rate multiplier must be positive and finite"));
        }
        Ok(ProblemParams {
            c,
            support_radius,
            density_bound,
            rate_multiplier,
        })
    }

    /// The background beam velocity `(-c, 0, 0)`.
    pub fn beam(&self) -> Velocity3 {
        Velocity3::new(-self.c, 0.0, 0.0)
    }

    /// Distance from `xi` to the beam velocity.
    pub fn beam_distance(&self, xi: Velocity3) -> f64 {
        (xi - self.beam()).norm()
    }
}

/// Hard-sphere collision against a beam particle: exchange the momentum
/// component along the unit impact direction `n`.
pub fn collide(xi: Velocity3, n: Velocity3, params: &ProblemParams) -> Result<Velocity3> {
    if (n.norm() - 1.0).abs() > UNIT_TOLERANCE {
        return Err(CoreError::invalid(format!(
            "impact direction must be unit length, |n| = {}",
            n.norm()
        )));
    }
    let rel = xi - params.beam();
    Ok(xi - n * rel.dot(n))
}

/// Sample an impact direction for a particle at `xi` hit by a beam
/// particle. The half-sphere `{n : (xi - beam) . n > 0}` carries density
/// proportional to `(xi - beam) . n`, i.e. `mu = u . n` has density `2 mu`
/// on (0, 1]; the azimuth is uniform.
pub fn sample_scatter_normal(
    xi: Velocity3,
    params: &ProblemParams,
    rng: &mut CounterRng,
) -> Result<Velocity3> {
    let chart = make_plane_chart(xi, params)?;
    let mu = rng.next_f64_open_left().sqrt();
    let psi = rng.next_f64() * std::f64::consts::TAU;
    let s = (1.0 - mu * mu).max(0.0).sqrt();
    Ok(chart.normal * mu + (chart.t1 * psi.cos() + chart.t2 * psi.sin()) * s)
}

/// Orthonormal frame of the influence plane of `base`: `normal` points from
/// the beam to `base`, and `(t1, t2, normal)` is right-handed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlaneChart {
    pub base: Velocity3,
    pub normal: Velocity3,
    pub t1: Velocity3,
    pub t2: Velocity3,
}

impl PlaneChart {
    /// Orthonormality and handedness residual; 0 for an exact frame.
    pub fn frame_residual(&self) -> f64 {
        let mut r: f64 = 0.0;
        r = r.max((self.normal.norm() - 1.0).abs());
        r = r.max((self.t1.norm() - 1.0).abs());
        r = r.max((self.t2.norm() - 1.0).abs());
        r = r.max(self.normal.dot(self.t1).abs());
        r = r.max(self.normal.dot(self.t2).abs());
        r = r.max(self.t1.dot(self.t2).abs());
        r = r.max((self.t1.cross(self.t2) - self.normal).norm());
        r
    }
}

/// Deterministic orthonormal tangent pair for a unit `normal`: cross the
/// coordinate axis least aligned with the normal against it, normalize,
/// and complete the right-handed frame.
pub fn orthonormal_tangents(normal: Velocity3) -> (Velocity3, Velocity3) {
    let ax = normal.x.abs();
    let ay = normal.y.abs();
    let az = normal.z.abs();
    let axis = if ax <= ay && ax <= az {
        Velocity3::new(1.0, 0.0, 0.0)
    } else if ay <= az {
        Velocity3::new(0.0, 1.0, 0.0)
    } else {
        Velocity3::new(0.0, 0.0, 1.0)
    };
    let t1_raw = axis.cross(normal);
    let t1 = t1_raw * (1.0 / t1_raw.norm());
    (t1, normal.cross(t1))
}

/// Build the influence-plane chart at `xi`. The tangent basis is a pure
/// function of `xi` via [`orthonormal_tangents`].
pub fn make_plane_chart(xi: Velocity3, params: &ProblemParams) -> Result<PlaneChart> {
    let rel = xi - params.beam();
    let r = rel.norm();
    if r == 0.0 {
        return Err(CoreError::degenerate(
            "velocity coincides with the beam; the influence plane is undefined",
        ));
    }
    let normal = rel * (1.0 / r);
    let (t1, t2) = orthonormal_tangents(normal);
    Ok(PlaneChart {
        base: xi,
        normal,
        t1,
        t2,
    })
}

/// Point of the influence plane at polar radius `l >= 0` and azimuth `phi`.
pub fn plane_point(chart: &PlaneChart, l: f64, phi: f64) -> Result<Velocity3> {
    if !(l >= 0.0) || !l.is_finite() {
        return Err(CoreError::invalid(format!("plane radius must be >= 0, got {l}")));
    }
    Ok(chart.base + (chart.t1 * phi.cos() + chart.t2 * phi.sin()) * l)
}

/// Angles and radii of a backward collision chain anchored at `xi0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathChart {
    pub xi0: Velocity3,
    pub alphas: Vec<f64>,
    pub phis: Vec<f64>,
    /// `radii[i] = |xi_i - beam|`, starting at `radii[0] = r_0`.
    pub radii: Vec<f64>,
}

/// A backward chain: the chart plus the precursor velocities `xi_1..xi_n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackwardChain {
    pub chart: PathChart,
    pub velocities: Vec<Velocity3>,
}

const ALPHA_LIMIT: f64 = std::f64::consts::FRAC_PI_2 - 1e-12;

/// Construct the backward chain from a returning velocity `xi0` through
/// `n = alphas.len()` collisions. Step `i` places `xi_i` on the influence
/// plane of `xi_{i-1}` at distance `l_i = r_{i-1} tan(alpha_i)` and azimuth
/// `phi_i`, which gives `r_i = r_{i-1} / cos(alpha_i)`.
pub fn chain_construct(
    xi0: Velocity3,
    alphas: &[f64],
    phis: &[f64],
    params: &ProblemParams,
) -> Result<BackwardChain> {
    if alphas.len() != phis.len() {
        return Err(CoreError::invalid("alphas and phis must have equal length"));
    }
    if xi0.x >= 0.0 {
        return Err(CoreError::invalid(
            "chain anchor must be a returning velocity (negative wall-normal component)",
        ));
    }
    let r0 = params.beam_distance(xi0);
    if r0 == 0.0 {
        return Err(CoreError::degenerate("chain anchor coincides with the beam"));
    }
    let mut radii = Vec::with_capacity(alphas.len() + 1);
    radii.push(r0);
    let mut velocities = Vec::with_capacity(alphas.len());
    let mut current = xi0;
    let mut r_prev = r0;
    for (&alpha, &phi) in alphas.iter().zip(phis) {
        if !(0.0..=ALPHA_LIMIT).contains(&alpha) {
            return Err(CoreError::invalid(format!(
                "chain angle must lie in [0, pi/2), got {alpha}"
            )));
        }
        let (xi_next, r_next) = chain_step(current, r_prev, alpha.cos(), alpha.sin(), phi.cos(), phi.sin(), params);
        radii.push(r_next);
        velocities.push(xi_next);
        current = xi_next;
        r_prev = r_next;
    }
    Ok(BackwardChain {
        chart: PathChart {
            xi0,
            alphas: alphas.to_vec(),
            phis: phis.to_vec(),
            radii,
        },
        velocities,
    })
}

/// One backward step with precomputed trigonometry. Hot path of the series
/// Monte Carlo; requires `cos_a > 0` and `|xi - beam| = r_prev > 0`.
#[inline]
pub fn chain_step(
    xi: Velocity3,
    r_prev: f64,
    cos_a: f64,
    sin_a: f64,
    cos_phi: f64,
    sin_phi: f64,
    params: &ProblemParams,
) -> (Velocity3, f64) {
    let normal = (xi - params.beam()) * (1.0 / r_prev);
    let ax = normal.x.abs();
    let ay = normal.y.abs();
    let az = normal.z.abs();
    let axis = if ax <= ay && ax <= az {
        Velocity3::new(1.0, 0.0, 0.0)
    } else if ay <= az {
        Velocity3::new(0.0, 1.0, 0.0)
    } else {
        Velocity3::new(0.0, 0.0, 1.0)
    };
    let t1_raw = axis.cross(normal);
    let t1 = t1_raw * (1.0 / t1_raw.norm());
    let t2 = normal.cross(t1);
    let l = r_prev * sin_a / cos_a;
    let xi_next = xi + (t1 * cos_phi + t2 * sin_phi) * l;
    (xi_next, r_prev / cos_a)
}
