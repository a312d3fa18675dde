//! Coordinate systems and symplectic transforms: Cartesian, polar, Delaunay
//! elements of a Kepler arc, and the Hill rescaling near the small primary.

use crate::error::{Error, Result};

/// Planar Cartesian state in the uniformly rotating frame, in units with the
/// Sun-Jupiter distance 1 and mean motion 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatingState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl RotatingState {
    pub fn new(x: f64, y: f64, vx: f64, vy: f64) -> Self {
        Self { x, y, vx, vy }
    }

    /// Distance to the large primary at (−μ, 0).
    pub fn r1(&self, mu: f64) -> f64 {
        ((self.x + mu) * (self.x + mu) + self.y * self.y).sqrt()
    }

    /// Distance to the small primary at (1−μ, 0).
    pub fn r2(&self, mu: f64) -> f64 {
        ((self.x + mu - 1.0) * (self.x + mu - 1.0) + self.y * self.y).sqrt()
    }
}

/// Action-angle elements (L, ℓ, G, g) of an elliptic Kepler arc.
///
/// Invariants: L > 0, |G| ≤ L, angles in (−π, π].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelaunayElements {
    pub l_action: f64,
    pub ell: f64,
    pub g_action: f64,
    pub g_angle: f64,
}

impl DelaunayElements {
    pub fn new(l_action: f64, ell: f64, g_action: f64, g_angle: f64) -> Self {
        Self { l_action, ell, g_action, g_angle }
    }

    pub fn eccentricity(&self) -> f64 {
        let ratio = self.g_action / self.l_action;
        (1.0 - ratio * ratio).max(0.0).sqrt()
    }

    pub fn semimajor(&self, m: f64, k: f64) -> f64 {
        self.l_action * self.l_action / (m * k)
    }
}

/// Polar canonical coordinates (r, θ) with conjugate momenta (R, Θ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarState {
    pub r: f64,
    pub theta: f64,
    pub rad_mom: f64,
    pub ang_mom: f64,
}

/// State and Jacobi constant in Hill units centered on the small primary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HillState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub jh: f64,
}

/// Reduce an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

const KEPLER_TOL: f64 = 1e-13;
const KEPLER_MAX_ITERS: usize = 50;

/// Solve the Kepler equation u − e sin u = ℓ for the eccentric anomaly u.
///
/// Newton from u₀ = ℓ + e sin ℓ, bisection fallback. The result is continuous
/// in ℓ: u − ℓ is 2π-periodic, so the solve is done on the reduced anomaly and
/// the multiple of 2π is restored afterwards.
pub fn solve_kepler(ell: f64, e: f64) -> Result<f64> {
    use std::f64::consts::PI;
    if !(0.0..1.0).contains(&e) || !ell.is_finite() {
        return Err(Error::Domain(format!("solve_kepler: e={e}, ell={ell}")));
    }
    let ell_red = wrap_angle(ell);
    let offset = ell - ell_red;

    let mut u = ell_red + e * ell_red.sin();
    for _ in 0..KEPLER_MAX_ITERS {
        let f = u - e * u.sin() - ell_red;
        if f.abs() < KEPLER_TOL {
            return Ok(u + offset);
        }
        u -= f / (1.0 - e * u.cos());
    }

    // bisection on the bracket [ell−e, ell+e]
    let mut lo = ell_red - e;
    let mut hi = ell_red + e;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = mid - e * mid.sin() - ell_red;
        if f.abs() < KEPLER_TOL {
            return Ok(mid + offset);
        }
        if f < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < KEPLER_TOL / 4.0 {
            break;
        }
    }
    let u = 0.5 * (lo + hi);
    if (u - e * u.sin() - ell_red).abs() < 10.0 * KEPLER_TOL {
        Ok(u + offset)
    } else {
        let _ = PI;
        Err(Error::KeplerNoConvergence { ell, e })
    }
}

/// Map Delaunay elements to the Cartesian (position, momentum) pair of a body
/// of mass `m` in a Kepler field of gravitational parameter `k`.
pub fn delaunay_to_cartesian(
    el: &DelaunayElements,
    m: f64,
    k: f64,
) -> Result<([f64; 2], [f64; 2])> {
    if el.l_action <= 0.0 || el.g_action.abs() > el.l_action * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "delaunay_to_cartesian: L={}, G={}",
            el.l_action, el.g_action
        )));
    }
    let (ll, gg) = (el.l_action, el.g_action);
    let a = ll * ll / (m * k);
    let e = el.eccentricity();
    let u = solve_kepler(el.ell, e)?;
    let (su, cu) = u.sin_cos();
    let denom = 1.0 - e * cu;

    // perihelion-frame conic, then rotation by the argument of perihelion g
    let q1 = a * (cu - e);
    let q2 = (ll * gg / (m * k)) * su;
    let p1 = -(m * k / ll) * su / denom;
    let p2 = (m * k / (ll * ll)) * gg * cu / denom;

    let (sg, cg) = el.g_angle.sin_cos();
    let q = [cg * q1 - sg * q2, sg * q1 + cg * q2];
    let p = [cg * p1 - sg * p2, sg * p1 + cg * p2];
    Ok((q, p))
}

/// Inverse of [`delaunay_to_cartesian`] on elliptic states.
///
/// For (near-)circular arcs the perihelion is undefined; the convention is
/// g := 0, so ℓ absorbs the polar angle.
pub fn cartesian_to_delaunay(q: [f64; 2], p: [f64; 2], m: f64, k: f64) -> Result<DelaunayElements> {
    let r = (q[0] * q[0] + q[1] * q[1]).sqrt();
    if r == 0.0 {
        return Err(Error::Domain("cartesian_to_delaunay: q at origin".into()));
    }
    let energy = (p[0] * p[0] + p[1] * p[1]) / (2.0 * m) - k / r;
    if energy >= 0.0 {
        return Err(Error::Domain(format!(
            "cartesian_to_delaunay: non-elliptic arc, two-body energy {energy}"
        )));
    }
    let a = -k / (2.0 * energy);
    let ll = (m * k * a).sqrt();
    let gg = q[0] * p[1] - q[1] * p[0];

    // eccentricity vector points to perihelion
    let ev = [
        gg * p[1] / (m * k) - q[0] / r,
        -gg * p[0] / (m * k) - q[1] / r,
    ];
    let e = (ev[0] * ev[0] + ev[1] * ev[1]).sqrt();
    let g_angle = if e < 1e-12 { 0.0 } else { ev[1].atan2(ev[0]) };

    let (sg, cg) = g_angle.sin_cos();
    let q1 = cg * q[0] + sg * q[1];
    let q2 = -sg * q[0] + cg * q[1];
    let cu = q1 / a + e;
    let su = q2 * m * k / (ll * gg);
    let u = su.atan2(cu);
    let ell = wrap_angle(u - e * u.sin());

    Ok(DelaunayElements { l_action: ll, ell, g_action: gg, g_angle })
}

/// Cartesian (q, p) to polar canonical coordinates. Θ = q × p.
pub fn cartesian_to_polar(q: [f64; 2], p: [f64; 2]) -> Result<PolarState> {
    let r = (q[0] * q[0] + q[1] * q[1]).sqrt();
    if r == 0.0 {
        return Err(Error::Domain("cartesian_to_polar: q at origin".into()));
    }
    Ok(PolarState {
        r,
        theta: q[1].atan2(q[0]),
        rad_mom: (q[0] * p[0] + q[1] * p[1]) / r,
        ang_mom: q[0] * p[1] - q[1] * p[0],
    })
}

/// Inverse of [`cartesian_to_polar`].
pub fn polar_to_cartesian(s: &PolarState) -> Result<([f64; 2], [f64; 2])> {
    if s.r <= 0.0 {
        return Err(Error::Domain(format!("polar_to_cartesian: r={}", s.r)));
    }
    let (st, ct) = s.theta.sin_cos();
    let q = [s.r * ct, s.r * st];
    let p = [
        s.rad_mom * ct - (s.ang_mom / s.r) * st,
        s.rad_mom * st + (s.ang_mom / s.r) * ct,
    ];
    Ok((q, p))
}

/// Rescale a rotating-frame state into Hill units centered on the small
/// primary: x = X μ^{1/3} + μ − 1, lengths and velocities scaled by μ^{1/3},
/// J_H = μ^{−2/3}(J − 3(1−μ)).
pub fn hill_rescale(s: &RotatingState, mu: f64, jacobi: f64) -> Result<HillState> {
    if mu <= 0.0 {
        return Err(Error::Domain(format!("hill_rescale: mu={mu}")));
    }
    let c = mu.powf(1.0 / 3.0);
    Ok(HillState {
        x: (s.x - mu + 1.0) / c,
        y: s.y / c,
        vx: s.vx / c,
        vy: s.vy / c,
        jh: (jacobi - 3.0 * (1.0 - mu)) / (c * c),
    })
}

/// Inverse of [`hill_rescale`]; returns the rotating-frame state and the
/// Jacobi constant.
pub fn hill_unrescale(hs: &HillState, mu: f64) -> Result<(RotatingState, f64)> {
    if mu <= 0.0 {
        return Err(Error::Domain(format!("hill_unrescale: mu={mu}")));
    }
    let c = mu.powf(1.0 / 3.0);
    Ok((
        RotatingState { x: hs.x * c + mu - 1.0, y: hs.y * c, vx: hs.vx * c, vy: hs.vy * c },
        hs.jh * c * c + 3.0 * (1.0 - mu),
    ))
}
