//! Hard-sphere gain operator in three equivalent representations, plus the
//! plane-integral operator that arises when the background measure collapses
//! onto a single beam velocity.
//!
//! The gain term of the hard-sphere collision operator is
//!
//! ```text
//! Q+(f, g)(xi) = ∫∫_{S+} f(xi') g(xi_*') |(xi - xi_*) . n| dn dxi_*,
//! xi'   = xi   - ((xi - xi_*) . n) n,
//! xi_*' = xi_* + ((xi - xi_*) . n) n,
//! ```
//!
//! with `S+` the hemisphere where `(xi - xi_*) . n > 0`. Three evaluators
//! are provided and cross-check each other:
//!
//! * [`gain_direct`] — the definition above, integrated as written;
//! * [`gain_carleman`] — the change of variables to post-collisional
//!   velocities, where the inner integral runs over the plane through the
//!   evaluation point perpendicular to `xi1 - xi0`, with weight
//!   `1 / |xi1 - xi0|`;
//! * [`gain_mollified`] — the evaluation smeared by a Gaussian mollifier of
//!   variance `epsilon`, which converges to the Carleman value as
//!   `epsilon -> 0`.
//!
//! [`k_apply`] evaluates the specialization of the Carleman form to a
//! monokinetic background: a single plane integral divided by the distance
//! to the background velocity.

use std::fmt;
use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::geometry::{orthonormal_tangents, ProblemParams, Velocity3};
use crate::quad::{adaptive_1d, gauss_legendre_on, QuadratureSpec};

/// Number of standard deviations at which Gaussian test densities are
/// truncated; the discarded mass is below 1e-14 of the total.
pub const GAUSSIAN_CUTOFF_SIGMAS: f64 = 8.0;

/// A compactly supported (or truncated) non-negative test density on
/// velocity space.
///
/// `evaluate` returns zero outside the closed ball of radius
/// `support_radius` around `support_center`; the integrators use that ball
/// to bound their integration domains.
#[derive(Clone)]
pub struct TestDistribution {
    body: Arc<dyn Fn(Velocity3) -> f64 + Send + Sync>,
    support_center: Velocity3,
    support_radius: f64,
    description: String,
}

impl fmt::Debug for TestDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestDistribution")
            .field("description", &self.description)
            .field("support_center", &self.support_center)
            .field("support_radius", &self.support_radius)
            .finish()
    }
}

impl TestDistribution {
    /// Wrap an arbitrary density with an explicit support ball.
    pub fn new(
        body: impl Fn(Velocity3) -> f64 + Send + Sync + 'static,
        support_center: Velocity3,
        support_radius: f64,
        description: impl Into<String>,
    ) -> Result<Self> {
        if !support_radius.is_finite() || support_radius < 0.0 {
            return Err(CoreError::invalid(
                "support radius must be finite and non-negative",
            ));
        }
        if !support_center.is_finite() {
            return Err(CoreError::invalid("support center must be finite"));
        }
        Ok(Self {
            body: Arc::new(body),
            support_center,
            support_radius,
            description: description.into(),
        })
    }

    /// Isotropic Gaussian of unit mass with standard deviation `width` per
    /// component, truncated at [`GAUSSIAN_CUTOFF_SIGMAS`] deviations.
    pub fn gaussian(center: Velocity3, width: f64) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(CoreError::invalid("gaussian width must be positive"));
        }
        let norm = (2.0 * std::f64::consts::PI * width * width).powf(-1.5);
        let inv_two_var = 1.0 / (2.0 * width * width);
        Self::new(
            move |xi: Velocity3| {
                let d2 = (xi - center).norm_squared();
                norm * (-d2 * inv_two_var).exp()
            },
            center,
            GAUSSIAN_CUTOFF_SIGMAS * width,
            format!("gauss(({},{},{}),{})", center.x, center.y, center.z, width),
        )
    }

    /// Centered Maxwellian with temperature `theta`:
    /// `(2 pi theta)^(-3/2) exp(-|xi|^2 / (2 theta))`.
    pub fn maxwellian(theta: f64) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(CoreError::invalid("temperature must be positive"));
        }
        let mut d = Self::gaussian(Velocity3::new(0.0, 0.0, 0.0), theta.sqrt())?;
        d.description = format!("maxwellian({theta})");
        Ok(d)
    }

    /// Indicator of the closed ball of radius `radius` around `center`.
    pub fn ball_indicator(center: Velocity3, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(CoreError::invalid("ball radius must be positive"));
        }
        let r2 = radius * radius;
        Self::new(
            move |xi: Velocity3| {
                if (xi - center).norm_squared() <= r2 {
                    1.0
                } else {
                    0.0
                }
            },
            center,
            radius,
            format!("disk({radius})"),
        )
    }

    /// Outgoing shell density for the half-space problem: value `m0` on
    /// `{xi.x > 0, inner < |xi - beam| < outer}` with `beam = (-inner,0,0)`,
    /// zero elsewhere.
    pub fn shell_cap(inner: f64, outer: f64, m0: f64) -> Result<Self> {
        if !(inner > 0.0) || !(outer > inner) || !outer.is_finite() {
            return Err(CoreError::invalid(
                "shell radii must satisfy 0 < inner < outer < inf",
            ));
        }
        if !(m0 > 0.0) || !m0.is_finite() {
            return Err(CoreError::invalid("shell amplitude must be positive"));
        }
        let beam = Velocity3::new(-inner, 0.0, 0.0);
        Self::new(
            move |xi: Velocity3| {
                if xi.x <= 0.0 {
                    return 0.0;
                }
                let r = (xi - beam).norm();
                if r > inner && r < outer {
                    m0
                } else {
                    0.0
                }
            },
            beam,
            outer,
            format!("shellcap({inner},{outer})"),
        )
    }

    /// The zero density (empty support).
    pub fn zero() -> Self {
        Self {
            body: Arc::new(|_| 0.0),
            support_center: Velocity3::new(0.0, 0.0, 0.0),
            support_radius: 0.0,
            description: "zero".to_owned(),
        }
    }

    /// Evaluate the density, enforcing the support truncation.
    pub fn evaluate(&self, xi: Velocity3) -> f64 {
        let d2 = (xi - self.support_center).norm_squared();
        if d2 > self.support_radius * self.support_radius {
            0.0
        } else {
            (self.body)(xi)
        }
    }

    /// Center of the support ball.
    pub fn support_center(&self) -> Velocity3 {
        self.support_center
    }

    /// Radius of the support ball.
    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    /// Human-readable catalog tag.
    pub fn description(&self) -> &str {
        &self.description
    }

    /// Pointwise scaled copy (same support).
    pub fn scaled(&self, factor: f64) -> Self {
        let inner = self.clone();
        Self {
            body: Arc::new(move |xi| factor * inner.evaluate(xi)),
            support_center: self.support_center,
            support_radius: self.support_radius,
            description: format!("{}*{}", factor, self.description),
        }
    }
}

/// Parse a catalog tag into a test density. Recognized forms:
/// `gauss((x,y,z),w)`, `disk(r)` (ball indicator centered at the origin),
/// `shellcap(c,R)` (unit amplitude), `maxwellian(theta)`, `zero`.
pub fn parse_catalog(tag: &str) -> Result<TestDistribution> {
    let tag = tag.trim();
    if tag == "zero" {
        return Ok(TestDistribution::zero());
    }
    let (head, rest) = tag
        .split_once('(')
        .ok_or_else(|| CoreError::invalid(format!("unrecognized density tag `{tag}`")))?;
    let args = rest
        .strip_suffix(')')
        .ok_or_else(|| CoreError::invalid(format!("unbalanced parentheses in `{tag}`")))?;
    let parse_f = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| CoreError::invalid(format!("bad number `{s}` in `{tag}`")))
    };
    match head.trim() {
        "gauss" => {
            let inner = args
                .strip_prefix('(')
                .and_then(|a| a.split_once(')'))
                .ok_or_else(|| {
                    CoreError::invalid(format!("gauss expects `gauss((x,y,z),w)`, got `{tag}`"))
                })?;
            let coords: Vec<&str> = inner.0.split(',').collect();
            if coords.len() != 3 {
                return Err(CoreError::invalid(format!(
                    "gauss center needs 3 coordinates in `{tag}`"
                )));
            }
            let center =
                Velocity3::new(parse_f(coords[0])?, parse_f(coords[1])?, parse_f(coords[2])?);
            let width = parse_f(inner.1.trim_start_matches(','))?;
            TestDistribution::gaussian(center, width)
        }
        "disk" => TestDistribution::ball_indicator(Velocity3::new(0.0, 0.0, 0.0), parse_f(args)?),
        "shellcap" => {
            let (c_str, r_str) = args.split_once(',').ok_or_else(|| {
                CoreError::invalid(format!("shellcap expects `shellcap(c,R)`, got `{tag}`"))
            })?;
            TestDistribution::shell_cap(parse_f(c_str)?, parse_f(r_str)?, 1.0)
        }
        "maxwellian" => TestDistribution::maxwellian(parse_f(args)?),
        other => Err(CoreError::invalid(format!(
            "unrecognized density `{other}` in `{tag}`"
        ))),
    }
}

/// Collision frequency against the monokinetic background:
/// `rate_multiplier * pi * |xi - beam|`.
pub fn collision_frequency(xi: Velocity3, params: &ProblemParams) -> f64 {
    params.rate_multiplier * std::f64::consts::PI * params.beam_distance(xi)
}

/// Integrate `f` over the plane through `base` with (not necessarily unit)
/// normal `normal`, in polar coordinates on the plane; the radial extent is
/// bounded by the distance from `base` to the support ball of `f`.
fn integrate_plane(
    f: &TestDistribution,
    base: Velocity3,
    normal: Velocity3,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let n = normal.norm();
    if n == 0.0 {
        return Err(CoreError::degenerate("plane normal must be nonzero"));
    }
    let unit = normal * (1.0 / n);
    let (t1, t2) = orthonormal_tangents(unit);
    let l_max = (f.support_center() - base).norm() + f.support_radius();
    if l_max == 0.0 {
        return Ok(0.0);
    }
    let inner_spec = quad.inner();
    let radial = adaptive_1d(
        |l| {
            let ring = adaptive_1d(
                |phi| {
                    let p = base + (t1 * phi.cos() + t2 * phi.sin()) * l;
                    f.evaluate(p)
                },
                0.0,
                std::f64::consts::TAU,
                &inner_spec,
            )
            .map(|r| r.value)
            .unwrap_or(0.0);
            ring * l
        },
        0.0,
        l_max,
        quad,
    )?;
    Ok(radial.value)
}

/// Apply the monokinetic-background gain operator to `f` at `xi0`: the
/// integral of `f` over the plane through `xi0` perpendicular to
/// `xi0 - beam`, divided by `|xi0 - beam|`.
pub fn k_apply(
    f: &TestDistribution,
    xi0: Velocity3,
    params: &ProblemParams,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let rel = xi0 - params.beam();
    let r0 = rel.norm();
    if r0 == 0.0 {
        return Err(CoreError::degenerate(
            "evaluation point coincides with the beam; the influence plane is undefined",
        ));
    }
    Ok(integrate_plane(f, xi0, rel, quad)? / r0)
}

/// Escalate a family of tensor rules until two successive levels agree to
/// the requested tolerance. Returns `(value, error_estimate, evaluations)`,
/// or a quadrature failure carrying the best estimate.
fn escalate(
    orders: &[usize],
    quad: &QuadratureSpec,
    mut eval: impl FnMut(usize) -> Result<(f64, u64)>,
) -> Result<(f64, f64, u64)> {
    let mut prev: Option<f64> = None;
    let mut total_evals = 0u64;
    let mut best = 0.0;
    let mut err = f64::INFINITY;
    for &order in orders {
        let (value, evals) = eval(order)?;
        total_evals += evals;
        if let Some(p) = prev {
            err = (value - p).abs();
            best = value;
            let target = quad
                .absolute_tolerance
                .max(quad.relative_tolerance * value.abs());
            if err <= target {
                return Ok((value, err, total_evals));
            }
        } else {
            best = value;
        }
        prev = Some(value);
        if total_evals > quad.max_evaluations {
            break;
        }
    }
    Err(CoreError::QuadratureFailure {
        best,
        err_bound: err,
        evaluations: total_evals,
    })
}

/// Whether the circle of radius `ring_radius` around `ring_center`, lying
/// in the plane perpendicular to the unit `axis`, misses the closed ball
/// `(center, radius)` entirely.
#[inline]
fn ring_misses_ball(
    ring_center: Velocity3,
    ring_radius: f64,
    axis: Velocity3,
    center: Velocity3,
    radius: f64,
) -> bool {
    let dc = center - ring_center;
    let z = dc.dot(axis);
    let rho = (dc.norm_squared() - z * z).max(0.0).sqrt();
    let dr = rho - ring_radius;
    z * z + dr * dr > radius * radius
}

/// Direct evaluation of the hard-sphere gain term `Q+(f, g)(xi)`.
///
/// The pre-collisional partner `xi_*` ranges over the momentum-conservation
/// ball `|xi_* - (c_f + c_g - xi)| <= r_f + r_g` (outside it one of the two
/// post-collisional velocities must leave its support), on a tensor grid
/// refined by escalation. The impact direction is parameterized over the
/// constrained half-sphere by `mu = u . n` in `(0, 1]` and an azimuth
/// (`u` the unit vector along `xi - xi_*`), both integrated adaptively:
/// the supports sweep across the angular variables, so fixed-order rules
/// converge poorly there. Two geometric facts prune the work: both
/// post-collisional velocities lie on the sphere with diameter
/// `[xi_*, xi]`, and at fixed `mu` each sweeps a circle.
pub fn gain_direct(
    f: &TestDistribution,
    g: &TestDistribution,
    xi: Velocity3,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let center = f.support_center() + g.support_center() - xi;
    let half = f.support_radius() + g.support_radius();
    if half == 0.0 {
        return Ok(0.0);
    }
    let cf = f.support_center();
    let rf = f.support_radius();
    let cg = g.support_center();
    let rg = g.support_radius();
    let mut mu_spec = quad.inner();
    // The angular quadratures sit inside every grid node of the escalation;
    // their own error must stay well below the level-to-level differences
    // the escalation uses to detect convergence.
    mu_spec.relative_tolerance = (quad.relative_tolerance * 0.05).max(1e-13);
    let mut psi_spec = mu_spec.inner();
    psi_spec.relative_tolerance = (quad.relative_tolerance * 0.005).max(1e-13);
    let (value, _err, _evals) = escalate(&[12, 18, 26, 34, 42, 52, 64, 76], quad, |order| {
        let (nodes, weights) = gauss_legendre_on(order, -half, half);
        let mut total = 0.0;
        let evals = std::cell::Cell::new(0u64);
        for (ix, &dx) in nodes.iter().enumerate() {
            for (iy, &dy) in nodes.iter().enumerate() {
                let wxy = weights[ix] * weights[iy];
                for (iz, &dz) in nodes.iter().enumerate() {
                    let xi_star = center + Velocity3::new(dx, dy, dz);
                    let rel = xi - xi_star;
                    let dist = rel.norm();
                    if dist == 0.0 {
                        continue;
                    }
                    // Post-collisional velocities lie on the sphere with
                    // diameter [xi_star, xi]; skip partners whose sphere
                    // misses either support ball.
                    let mid = (xi + xi_star) * 0.5;
                    let srad = 0.5 * dist;
                    let df = (cf - mid).norm();
                    if df > srad + rf || srad > df + rf {
                        continue;
                    }
                    let dg = (cg - mid).norm();
                    if dg > srad + rg || srad > dg + rg {
                        continue;
                    }
                    let u = rel * (1.0 / dist);
                    let (t1, t2) = orthonormal_tangents(u);
                    let mut angular_failure: Option<CoreError> = None;
                    let mu_int = adaptive_1d(
                        |mu| {
                            let s = (1.0 - mu * mu).max(0.0).sqrt();
                            let kappa = dist * mu;
                            let along = u * (kappa * mu);
                            let ring_r = kappa * s;
                            if ring_misses_ball(xi - along, ring_r, u, cf, rf)
                                || ring_misses_ball(xi_star + along, ring_r, u, cg, rg)
                            {
                                return 0.0;
                            }
                            match adaptive_1d(
                                |psi| {
                                    let (sp, cp) = psi.sin_cos();
                                    let shift = along + (t1 * cp + t2 * sp) * ring_r;
                                    let fv = f.evaluate(xi - shift);
                                    if fv == 0.0 {
                                        return 0.0;
                                    }
                                    fv * g.evaluate(xi_star + shift)
                                },
                                0.0,
                                std::f64::consts::TAU,
                                &psi_spec,
                            ) {
                                Ok(r) => {
                                    evals.set(evals.get() + r.evaluations);
                                    kappa * r.value
                                }
                                Err(e) => {
                                    angular_failure.get_or_insert(e);
                                    0.0
                                }
                            }
                        },
                        0.0,
                        1.0,
                        &mu_spec,
                    )?;
                    if let Some(e) = angular_failure {
                        return Err(e);
                    }
                    evals.set(evals.get() + mu_int.evaluations);
                    total += wxy * weights[iz] * mu_int.value;
                }
            }
        }
        Ok((total, evals.get()))
    })?;
    Ok(value)
}

/// Carleman-form evaluation of `Q+(f, g)(xi0)`.
///
/// In post-collisional variables the gain term reads
/// `∫ g(xi1) / |xi1 - xi0| ∫_{L} f dxi1`, with `L` the plane through `xi0`
/// perpendicular to `xi1 - xi0`. Writing `xi1 = xi0 + rho w` with `w` on
/// the unit sphere factorizes the integral: the plane integral depends on
/// the direction `w` alone, while the radial factor
/// `∫ rho g(xi0 + rho w) drho` runs over the chord of the support ball
/// of `g`, so directions outside the polar cap subtended by that ball drop
/// out entirely.
pub fn gain_carleman(
    f: &TestDistribution,
    g: &TestDistribution,
    xi0: Velocity3,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let to_g = g.support_center() - xi0;
    let d = to_g.norm();
    let rg = g.support_radius();
    if d == 0.0 && rg == 0.0 {
        return Err(CoreError::SingularConfiguration(
            "second density is concentrated at the evaluation point; \
             the 1/|xi1 - xi0| weight diverges"
                .to_owned(),
        ));
    }
    if rg == 0.0 || f.support_radius() == 0.0 {
        return Ok(0.0);
    }
    let axis = if d > 0.0 {
        to_g * (1.0 / d)
    } else {
        Velocity3::new(0.0, 0.0, 1.0)
    };
    let (e1, e2) = orthonormal_tangents(axis);
    // Directions outside this polar cap miss the support of g entirely.
    let gamma_max = if d > rg {
        (rg / d).asin()
    } else {
        std::f64::consts::PI
    };
    let inner_spec = quad.inner();
    let (value, _err, _evals) = escalate(&[6, 10, 16, 24, 32], quad, |order| {
        let (g_nodes, g_weights) = gauss_legendre_on(order, 0.0, gamma_max);
        let (chi_nodes, chi_weights) = gauss_legendre_on(2 * order, 0.0, std::f64::consts::TAU);
        let mut total = 0.0;
        let mut evals = 0u64;
        for (ig, &gamma) in g_nodes.iter().enumerate() {
            let (sg, cg) = gamma.sin_cos();
            // Chord of the support ball of g along a ray at polar angle gamma.
            let disc = rg * rg - d * d * sg * sg;
            if disc <= 0.0 {
                continue;
            }
            let root = disc.sqrt();
            let rho_lo = (d * cg - root).max(0.0);
            let rho_hi = d * cg + root;
            if rho_hi <= rho_lo {
                continue;
            }
            let w_gamma = g_weights[ig] * sg;
            for (ic, &chi) in chi_nodes.iter().enumerate() {
                let (schi, cchi) = chi.sin_cos();
                let w = axis * cg + (e1 * cchi + e2 * schi) * sg;
                let radial = adaptive_1d(
                    |rho| rho * g.evaluate(xi0 + w * rho),
                    rho_lo,
                    rho_hi,
                    &inner_spec,
                )?;
                evals += radial.evaluations;
                if radial.value == 0.0 {
                    continue;
                }
                let plane = integrate_plane(f, xi0, w, &inner_spec)?;
                total += w_gamma * chi_weights[ic] * radial.value * plane;
            }
        }
        Ok((total, evals))
    })?;
    Ok(value)
}

/// Smeared evaluation of the gain term at `xi0` with mollifier variance
/// `epsilon`, together with the reflected-exponential correction term
/// (returned separately as the second component).
///
/// Averaging the gain term against a Gaussian mollifier centered at `xi0`
/// collapses, after integrating the mollifier over the sphere with midpoint
/// `z = (xi + xi_*)/2` and radius `s = |xi - xi_*|/2`, onto the kernel
///
/// ```text
/// k_eps = [exp(-(d-s)^2 / 2 eps) - exp(-(d+s)^2 / 2 eps)] / (2 d sqrt(2 pi eps)),
/// d = |z - xi0|,
/// ```
///
/// so the smeared gain is `∫∫ f(xi) g(xi_*) k_eps dxi dxi_*`. The first
/// exponential carries the Carleman limit; the reflected one vanishes as
/// `epsilon -> 0`. The main value is computed with the numerically stable
/// bracket `exp(-(d-s)^2/2eps) (1 - exp(-2 d s / eps))`, which already
/// includes the correction; the correction alone is re-integrated at fixed
/// moderate order for reporting.
///
/// Coordinates: `xi_*` on a tensor grid over the support box of `g`; for
/// each `xi_*`, the `xi` integral uses Cartesian coordinates `(p1, p2)` on
/// the influence plane through `xi0` perpendicular to `v = xi_* - xi0`,
/// plus a height `h` across the plane. The `h` integral is adaptive because
/// the kernel concentrates in a band of width `O(sqrt(eps))` around the
/// plane; the in-plane integrand is as smooth as `f` itself.
pub fn gain_mollified_split(
    f: &TestDistribution,
    g: &TestDistribution,
    xi0: Velocity3,
    epsilon: f64,
    quad: &QuadratureSpec,
) -> Result<(f64, f64)> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(CoreError::invalid("mollifier variance must be positive"));
    }
    if f.support_radius() == 0.0 || g.support_radius() == 0.0 {
        return Ok((0.0, 0.0));
    }
    let inv_sqrt = 1.0 / (2.0 * std::f64::consts::PI * epsilon).sqrt();
    let reach = (f.support_center() - xi0).norm() + f.support_radius();
    let inner_spec = quad.inner();
    let to_f = f.support_center() - xi0;
    let rf = f.support_radius();
    let (value, _err, _evals) = escalate(&[8, 12, 18, 26], quad, |order| {
        let gc = g.support_center();
        let gr = g.support_radius();
        let (s_nodes, s_weights) = gauss_legendre_on(order, -gr, gr);
        let (p_nodes, p_weights) = gauss_legendre_on(order, -reach, reach);
        let mut main = 0.0;
        let mut evals = 0u64;
        for (ix, &dx) in s_nodes.iter().enumerate() {
            for (iy, &dy) in s_nodes.iter().enumerate() {
                for (iz, &dz) in s_nodes.iter().enumerate() {
                    let xi_star = gc + Velocity3::new(dx, dy, dz);
                    let gv = g.evaluate(xi_star);
                    if gv == 0.0 {
                        continue;
                    }
                    let w_star = s_weights[ix] * s_weights[iy] * s_weights[iz] * gv;
                    let v = xi_star - xi0;
                    let vnorm = v.norm();
                    if vnorm == 0.0 {
                        continue;
                    }
                    let vhat = v * (1.0 / vnorm);
                    let (b1, b2) = orthonormal_tangents(vhat);
                    // Plane coordinates of the center of f, and its height
                    // above the plane, for support pruning per column.
                    let y_par = to_f.dot(vhat);
                    let y1 = to_f.dot(b1);
                    let y2 = to_f.dot(b2);
                    let h_slack = (y_par.abs() - reach).max(0.0);
                    for (ia, &pa) in p_nodes.iter().enumerate() {
                        let da = pa - y1;
                        for (ib, &pb) in p_nodes.iter().enumerate() {
                            let db = pb - y2;
                            if da * da + db * db + h_slack * h_slack > rf * rf {
                                continue;
                            }
                            let perp = b1 * pa + b2 * pb;
                            let plane_r2 = pa * pa + pb * pb;
                            let w_col = p_weights[ia] * p_weights[ib] * w_star;
                            let h_int = adaptive_1d(
                                |h| {
                                    let fv = f.evaluate(xi0 + perp + vhat * h);
                                    if fv == 0.0 {
                                        return 0.0;
                                    }
                                    let dq =
                                        0.5 * (plane_r2 + (h + vnorm) * (h + vnorm)).sqrt();
                                    if dq < 1e-300 {
                                        return 0.0;
                                    }
                                    let sq =
                                        0.5 * (plane_r2 + (h - vnorm) * (h - vnorm)).sqrt();
                                    let diff = dq - sq;
                                    fv * inv_sqrt / (2.0 * dq)
                                        * (-(diff * diff) / (2.0 * epsilon)).exp()
                                        * (1.0 - (-2.0 * dq * sq / epsilon).exp())
                                },
                                -reach,
                                reach,
                                &inner_spec,
                            )?;
                            evals += h_int.evaluations;
                            main += w_col * h_int.value;
                        }
                    }
                }
            }
        }
        Ok((main, evals))
    })?;
    let second = mollified_second_term(f, g, xi0, epsilon)?;
    Ok((value, second))
}

/// The reflected-exponential correction term of the mollified kernel alone,
/// at fixed moderate quadrature order (it is diagnostics, not a limit).
fn mollified_second_term(
    f: &TestDistribution,
    g: &TestDistribution,
    xi0: Velocity3,
    epsilon: f64,
) -> Result<f64> {
    let inv_sqrt = 1.0 / (2.0 * std::f64::consts::PI * epsilon).sqrt();
    let gc = g.support_center();
    let gr = g.support_radius();
    let reach = (f.support_center() - xi0).norm() + f.support_radius();
    if reach == 0.0 || gr == 0.0 {
        return Ok(0.0);
    }
    let order = 12;
    let (s_nodes, s_weights) = gauss_legendre_on(order, -gr, gr);
    let (p_nodes, p_weights) = gauss_legendre_on(order, -reach, reach);
    let inner_spec = QuadratureSpec::with_tolerance(1e-6, 1e-300);
    let to_f = f.support_center() - xi0;
    let rf = f.support_radius();
    let mut second = 0.0;
    for (ix, &dx) in s_nodes.iter().enumerate() {
        for (iy, &dy) in s_nodes.iter().enumerate() {
            for (iz, &dz) in s_nodes.iter().enumerate() {
                let xi_star = gc + Velocity3::new(dx, dy, dz);
                let gv = g.evaluate(xi_star);
                if gv == 0.0 {
                    continue;
                }
                let w_star = s_weights[ix] * s_weights[iy] * s_weights[iz] * gv;
                let v = xi_star - xi0;
                let vnorm = v.norm();
                if vnorm == 0.0 {
                    continue;
                }
                let vhat = v * (1.0 / vnorm);
                let (b1, b2) = orthonormal_tangents(vhat);
                let y_par = to_f.dot(vhat);
                let y1 = to_f.dot(b1);
                let y2 = to_f.dot(b2);
                let h_slack = (y_par.abs() - reach).max(0.0);
                for (ia, &pa) in p_nodes.iter().enumerate() {
                    let da = pa - y1;
                    for (ib, &pb) in p_nodes.iter().enumerate() {
                        let db = pb - y2;
                        if da * da + db * db + h_slack * h_slack > rf * rf {
                            continue;
                        }
                        let perp = b1 * pa + b2 * pb;
                        let plane_r2 = pa * pa + pb * pb;
                        let w_col = p_weights[ia] * p_weights[ib] * w_star;
                        let h_int = adaptive_1d(
                            |h| {
                                let fv = f.evaluate(xi0 + perp + vhat * h);
                                if fv == 0.0 {
                                    return 0.0;
                                }
                                let dq = 0.5 * (plane_r2 + (h + vnorm) * (h + vnorm)).sqrt();
                                if dq < 1e-300 {
                                    return 0.0;
                                }
                                let sq = 0.5 * (plane_r2 + (h - vnorm) * (h - vnorm)).sqrt();
                                let sum = dq + sq;
                                fv * inv_sqrt / (2.0 * dq)
                                    * (-(sum * sum) / (2.0 * epsilon)).exp()
                            },
                            -reach,
                            reach,
                            &inner_spec,
                        )?;
                        second += w_col * h_int.value;
                    }
                }
            }
        }
    }
    Ok(second)
}

/// Mollified gain evaluation; see [`gain_mollified_split`].
pub fn gain_mollified(
    f: &TestDistribution,
    g: &TestDistribution,
    xi0: Velocity3,
    epsilon: f64,
    quad: &QuadratureSpec,
) -> Result<f64> {
    gain_mollified_split(f, g, xi0, epsilon, quad).map(|(v, _)| v)
}

/// `∫ M_theta(xi_*) |xi - xi_*| dxi_*` for the centered Maxwellian, reduced
/// to a single radial integral:
/// `(2 pi / (3 |xi|)) ∫ m(s) s ((|xi| + s)^3 - ||xi| - s|^3) ds`.
pub fn maxwellian_relative_speed_moment(
    theta: f64,
    speed: f64,
    quad: &QuadratureSpec,
) -> Result<f64> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(CoreError::invalid("temperature must be positive"));
    }
    if speed < 0.0 || !speed.is_finite() {
        return Err(CoreError::invalid("speed must be non-negative"));
    }
    let width = theta.sqrt();
    let norm = (2.0 * std::f64::consts::PI * theta).powf(-1.5);
    let upper = quad.truncation_radius * width + speed;
    if speed < 1e-12 {
        // Limit |xi| -> 0: the angular factor degenerates to 2 s.
        let r = adaptive_1d(
            |s| norm * (-s * s / (2.0 * theta)).exp() * s * s * s,
            0.0,
            upper,
            quad,
        )?;
        return Ok(4.0 * std::f64::consts::PI * r.value);
    }
    let r = adaptive_1d(
        |s| {
            let m = norm * (-s * s / (2.0 * theta)).exp();
            let plus = (speed + s).powi(3);
            let minus = (speed - s).abs().powi(3);
            m * s * (plus - minus)
        },
        0.0,
        upper,
        quad,
    )?;
    Ok(2.0 * std::f64::consts::PI / (3.0 * speed) * r.value)
}

/// Right-hand side of the Maxwellian fixed-point identity
/// `Q+(M, M)(xi) = pi M(xi) ∫ M(xi_*) |xi - xi_*| dxi_*`, which follows
/// from `Q+(M, M) = Q-(M, M)` at equilibrium together with
/// `∫_{S+} |(xi - xi_*) . n| dn = pi |xi - xi_*|`.
pub fn maxwellian_gain_reference(theta: f64, xi: Velocity3, quad: &QuadratureSpec) -> Result<f64> {
    let m = TestDistribution::maxwellian(theta)?;
    let moment = maxwellian_relative_speed_moment(theta, xi.norm(), quad)?;
    Ok(std::f64::consts::PI * m.evaluate(xi) * moment)
}
