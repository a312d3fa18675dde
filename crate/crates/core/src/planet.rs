//! The large resonant symmetric periodic orbit of the planet in the RPC3BP,
//! selected by the resonance ratio ε = k/m, plus the secular perihelion-drift
//! integral and Delaunay drift diagnostics.

use nalgebra::{Matrix2, Vector2};

use crate::coords::{cartesian_to_delaunay, DelaunayElements, RotatingState};
use crate::dynamics::{integrate_trajectory, to_momenta, Rpc3bpParams};
use crate::error::{Error, Result};
use crate::ode::{IntegratorConfig, Solution};

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// Resonance selection: the planet makes k revolutions while the primaries
/// make m, with ε = k/m.
#[derive(Debug, Clone, Copy)]
pub struct ResonanceSpec {
    pub m: u64,
    pub k: u64,
    pub e_target: f64,
}

impl ResonanceSpec {
    pub fn new(m: u64, k: u64, e_target: f64) -> Result<Self> {
        if m == 0 || k == 0 || gcd(m, k) != 1 {
            return Err(Error::Domain(format!("resonance m={m}, k={k} must be coprime positive")));
        }
        if !(e_target > 0.0 && e_target < 0.5) {
            return Err(Error::Domain(format!("e_target={e_target} outside (0, 1/2)")));
        }
        Ok(Self { m, k, e_target })
    }

    pub fn epsilon(&self) -> f64 {
        self.k as f64 / self.m as f64
    }
}

/// The corrected periodic planet orbit with a dense trajectory over one
/// period.
#[derive(Debug, Clone)]
pub struct PlanetOrbit {
    pub spec: ResonanceSpec,
    pub mu: f64,
    /// Elements of the initial condition (ℓ₀ = π, g₀ = −π pinned).
    pub elements0: DelaunayElements,
    pub initial_state: RotatingState,
    /// Corrected period T_μ, close to but different from 2πm.
    pub period: f64,
    trajectory: Solution<4>,
}

impl PlanetOrbit {
    /// Rotating-frame state at time t, extended periodically.
    pub fn state_at(&self, t: f64) -> RotatingState {
        let tt = t.rem_euclid(self.period);
        crate::dynamics::vec_to_state(&self.trajectory.sample(tt))
    }

    /// State at planet phase ν₁ ∈ [0, 2π): t = ν₁ T_μ / (2π).
    pub fn state_at_phase(&self, nu1: f64) -> RotatingState {
        self.state_at(nu1.rem_euclid(2.0 * std::f64::consts::PI) / (2.0 * std::f64::consts::PI)
            * self.period)
    }

    /// Origin-centered Delaunay elements of the state at time t.
    pub fn elements_at(&self, t: f64) -> Result<DelaunayElements> {
        let s = self.state_at(t);
        let [px, py] = to_momenta(&s);
        cartesian_to_delaunay([s.x, s.y], [px, py], 1.0, 1.0)
    }

    /// |T_μ − 2πm|.
    pub fn period_gap(&self) -> f64 {
        (self.period - 2.0 * std::f64::consts::PI * self.spec.m as f64).abs()
    }

    /// Max |L(t)−L(0)| and |G(t)−G(0)| over one period on a sample grid.
    pub fn delaunay_drift(&self, n_samples: usize) -> Result<(f64, f64)> {
        let e0 = self.elements_at(0.0)?;
        let mut dl = 0.0f64;
        let mut dg = 0.0f64;
        for i in 1..n_samples {
            let e = self.elements_at(self.period * i as f64 / n_samples as f64)?;
            dl = dl.max((e.l_action - e0.l_action).abs());
            dg = dg.max((e.g_action - e0.g_action).abs());
        }
        Ok((dl, dg))
    }

    /// Minimum distance to the origin over one period on a sample grid.
    pub fn min_radius(&self, n_samples: usize) -> f64 {
        let mut r = f64::INFINITY;
        for i in 0..n_samples {
            let s = self.state_at(self.period * i as f64 / n_samples as f64);
            r = r.min((s.x * s.x + s.y * s.y).sqrt());
        }
        r
    }
}

/// Double-Kepler resonant guess: L = ε^{−1/3}, G = L√(1−e²), ℓ₀ = π,
/// g₀ = −π, T = 2πm.
pub fn kepler_resonant_guess(spec: &ResonanceSpec) -> (DelaunayElements, f64) {
    let ll = spec.epsilon().powf(-1.0 / 3.0);
    let gg = ll * (1.0 - spec.e_target * spec.e_target).sqrt();
    let el = DelaunayElements::new(ll, std::f64::consts::PI, gg, -std::f64::consts::PI);
    (el, 2.0 * std::f64::consts::PI * spec.m as f64)
}

/// Rotating-frame state of the apohelion-on-positive-x configuration
/// (u = π rotated by g = −π): perpendicular crossing by construction.
fn apohelion_state(ll: f64, gg: f64) -> RotatingState {
    let a = ll * ll;
    let e = (1.0 - (gg / ll) * (gg / ll)).max(0.0).sqrt();
    let x = a * (1.0 + e);
    let py = gg / (ll * ll * (1.0 + e));
    // velocities from momenta: vx = px + y, vy = py − x
    RotatingState::new(x, 0.0, 0.0, py - x)
}

fn planet_cfg() -> IntegratorConfig {
    IntegratorConfig::with_tols(1e-12, 1e-12)
}

/// Residuals (y, ẋ) of the fixed-time half-period crossing for unknowns
/// (L₀, T) at fixed G₀.
fn half_residual(ll: f64, t_full: f64, gg: f64, p: &Rpc3bpParams) -> Result<Vector2<f64>> {
    let s0 = apohelion_state(ll, gg);
    let sol = integrate_trajectory(&s0, 0.0, t_full / 2.0, p, &planet_cfg(), &[])?;
    let e = sol.y_end();
    Ok(Vector2::new(e[1], e[2]))
}

/// Correct the resonant guess into a periodic orbit of the RPC3BP by Newton
/// shooting on (L₀, T) with the boundary conditions y(T/2) = 0, ẋ(T/2) = 0.
/// Bad eccentricities (no convergence) are retried with e_target + 0.01.
pub fn correct_planet_orbit(spec: &ResonanceSpec, mu: f64) -> Result<PlanetOrbit> {
    let p = Rpc3bpParams::new(mu)?;
    let mut last_err = None;
    for retry in 0..3 {
        let e_try = spec.e_target + 0.01 * retry as f64;
        let spec_try = ResonanceSpec { e_target: e_try, ..*spec };
        match correct_with_e(&spec_try, &p) {
            Ok(mut orbit) => {
                orbit.spec = *spec;
                return Ok(orbit);
            }
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::CorrectionFailure("planet orbit".into())))
}

fn correct_with_e(spec: &ResonanceSpec, p: &Rpc3bpParams) -> Result<PlanetOrbit> {
    let (el0, t0) = kepler_resonant_guess(spec);
    let gg = el0.g_action;
    let mut ll = el0.l_action;
    let mut t = t0;
    let mut converged = false;
    for _ in 0..30 {
        let r = half_residual(ll, t, gg, p)?;
        if r[0].abs() < 1e-11 && r[1].abs() < 1e-11 {
            converged = true;
            break;
        }
        let dl = 1e-7 * ll;
        let dt = 1e-7 * t;
        let rl = half_residual(ll + dl, t, gg, p)?;
        let rt = half_residual(ll, t + dt, gg, p)?;
        let jac = Matrix2::new(
            (rl[0] - r[0]) / dl,
            (rt[0] - r[0]) / dt,
            (rl[1] - r[1]) / dl,
            (rt[1] - r[1]) / dt,
        );
        let delta = jac
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::CorrectionFailure("singular planet shooting Jacobian".into()))?;
        ll -= delta[0];
        t -= delta[1];
        if !(ll > 0.0) || !(t > 0.0) {
            return Err(Error::CorrectionFailure("planet shooting left the domain".into()));
        }
    }
    if !converged {
        return Err(Error::CorrectionFailure(format!(
            "planet shooting stalled at m={}, k={}, e={}",
            spec.m, spec.k, spec.e_target
        )));
    }
    let s0 = apohelion_state(ll, gg);
    let trajectory = integrate_trajectory(&s0, 0.0, t, p, &planet_cfg(), &[])?;
    Ok(PlanetOrbit {
        spec: *spec,
        mu: p.mu,
        elements0: DelaunayElements::new(ll, std::f64::consts::PI, gg, -std::f64::consts::PI),
        initial_state: s0,
        period: t,
        trajectory,
    })
}

/// Averaged perihelion-drift integral
/// (3/2) L^{−3} (∂e/∂G) ∫₀^{2π} (e − cos u)(1 − e cos u)^{−4} du
/// with ∂e/∂G = −G/(L²e), by periodic trapezoid quadrature.
pub fn secular_g_integral(e: f64, ll: f64, gg: f64) -> Result<f64> {
    secular_g_integral_n(e, ll, gg, 1024)
}

/// Quadrature-node-count variant, for convergence studies.
pub fn secular_g_integral_n(e: f64, ll: f64, gg: f64, n: usize) -> Result<f64> {
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::Domain(format!(
            "secular_g_integral: e={e} (∂e/∂G is singular at e=0)"
        )));
    }
    let mut integral = 0.0;
    for i in 0..n {
        let u = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        integral += (e - u.cos()) * (1.0 - e * u.cos()).powi(-4);
    }
    integral *= 2.0 * std::f64::consts::PI / n as f64;
    let de_dg = -gg / (ll * ll * e);
    Ok(1.5 * ll.powi(-3) * de_dg * integral)
}

/// Magnitude of the tidal-force remainder: gradient of
/// −μ(1/|q−q_J| − 1/r − q·q_J/r³) with the monopole and dipole removed,
/// evaluated by central differences. Scales like μ/r⁴.
pub fn tidal_gradient(q: [f64; 2], q_j: [f64; 2], mu: f64) -> f64 {
    let phi = |q: [f64; 2]| {
        let r = (q[0] * q[0] + q[1] * q[1]).sqrt();
        let dx = q[0] - q_j[0];
        let dy = q[1] - q_j[1];
        let rj = (dx * dx + dy * dy).sqrt();
        -mu * (1.0 / rj - 1.0 / r - (q[0] * q_j[0] + q[1] * q_j[1]) / (r * r * r))
    };
    let eps = 1e-5 * (q[0] * q[0] + q[1] * q[1]).sqrt().max(1.0);
    let gx = (phi([q[0] + eps, q[1]]) - phi([q[0] - eps, q[1]])) / (2.0 * eps);
    let gy = (phi([q[0], q[1] + eps]) - phi([q[0], q[1] - eps])) / (2.0 * eps);
    (gx * gx + gy * gy).sqrt()
}
