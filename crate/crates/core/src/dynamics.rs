//! Rotating-frame vector field of the restricted planar circular three-body
//! problem, the Jacobi integral, variational (state-transition) equations,
//! and integration helpers used by every downstream module.
//!
//! The state carries velocities (x, y, ẋ, ẏ). Momentum form, needed for the
//! symplectic checks and the Hamiltonian, uses p_x = ẋ − y, p_y = ẏ + x.

use nalgebra::{Matrix4, SVector, Vector4};

use crate::coords::RotatingState;
use crate::error::{Error, Result};
use crate::ode::{
    integrate, CrossingDirection, EventFn, IntegratorConfig, Solution, StopReason,
};

/// Mass ratio of the small primary; the primaries sit at (−μ, 0) and (1−μ, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rpc3bpParams {
    pub mu: f64,
}

impl Rpc3bpParams {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu <= 0.5) {
            return Err(Error::Domain(format!("mass ratio mu={mu} outside (0, 1/2]")));
        }
        Ok(Self { mu })
    }
}

/// Abort radius around each primary.
pub const COLLISION_RADIUS: f64 = 1e-6;

/// Effective potential Ω and its first two derivative tensors at (x, y).
#[derive(Debug, Clone, Copy)]
pub struct Potential {
    pub omega: f64,
    pub grad: [f64; 2],
    /// [[Ωxx, Ωxy], [Ωxy, Ωyy]]
    pub hess: [[f64; 2]; 2],
}

/// Ω = (x²+y²)/2 + (1−μ)/r₁ + μ/r₂ + μ(1−μ)/2, with analytic gradient and
/// Hessian.
pub fn effective_potential(x: f64, y: f64, p: &Rpc3bpParams) -> Result<Potential> {
    let mu = p.mu;
    let d1x = x + mu;
    let d2x = x + mu - 1.0;
    let r1sq = d1x * d1x + y * y;
    let r2sq = d2x * d2x + y * y;
    if r1sq == 0.0 || r2sq == 0.0 {
        return Err(Error::Singularity { r1: r1sq.sqrt(), r2: r2sq.sqrt() });
    }
    let r1 = r1sq.sqrt();
    let r2 = r2sq.sqrt();
    let (m1, m2) = (1.0 - mu, mu);
    let ir13 = 1.0 / (r1sq * r1);
    let ir23 = 1.0 / (r2sq * r2);
    let ir15 = ir13 / r1sq;
    let ir25 = ir23 / r2sq;

    let omega = 0.5 * (x * x + y * y) + m1 / r1 + m2 / r2 + 0.5 * m1 * m2;
    let ox = x - m1 * d1x * ir13 - m2 * d2x * ir23;
    let oy = y - m1 * y * ir13 - m2 * y * ir23;
    let oxx = 1.0 - m1 * ir13 + 3.0 * m1 * d1x * d1x * ir15 - m2 * ir23
        + 3.0 * m2 * d2x * d2x * ir25;
    let oyy =
        1.0 - m1 * ir13 + 3.0 * m1 * y * y * ir15 - m2 * ir23 + 3.0 * m2 * y * y * ir25;
    let oxy = 3.0 * m1 * d1x * y * ir15 + 3.0 * m2 * d2x * y * ir25;

    Ok(Potential { omega, grad: [ox, oy], hess: [[oxx, oxy], [oxy, oyy]] })
}

/// Right-hand side (ẋ, ẏ, 2ẏ + Ω_x, −2ẋ + Ω_y).
pub fn vector_field(s: &RotatingState, p: &Rpc3bpParams) -> Result<[f64; 4]> {
    let pot = effective_potential(s.x, s.y, p)?;
    Ok([s.vx, s.vy, 2.0 * s.vy + pot.grad[0], -2.0 * s.vx + pot.grad[1]])
}

/// Jacobi integral J = 2Ω − (ẋ² + ẏ²). The family energy is h = −J/2.
pub fn jacobi_constant(s: &RotatingState, p: &Rpc3bpParams) -> Result<f64> {
    let pot = effective_potential(s.x, s.y, p)?;
    Ok(2.0 * pot.omega - s.vx * s.vx - s.vy * s.vy)
}

/// Momenta conjugate to (x, y) in the rotating frame.
pub fn to_momenta(s: &RotatingState) -> [f64; 2] {
    [s.vx - s.y, s.vy + s.x]
}

/// Rotating-frame Hamiltonian ½|p|² − (x p_y − y p_x) − (1−μ)/r₁ − μ/r₂.
///
/// Relation to the Jacobi integral: H = −J/2 + μ(1−μ)/2 (the constant term
/// of Ω is not part of H).
pub fn rotating_hamiltonian(s: &RotatingState, p: &Rpc3bpParams) -> Result<f64> {
    let r1 = s.r1(p.mu);
    let r2 = s.r2(p.mu);
    if r1 == 0.0 || r2 == 0.0 {
        return Err(Error::Singularity { r1, r2 });
    }
    let [px, py] = to_momenta(s);
    Ok(0.5 * (px * px + py * py) - (s.x * py - s.y * px) - (1.0 - p.mu) / r1 - p.mu / r2)
}

pub fn state_to_vec(s: &RotatingState) -> Vector4<f64> {
    Vector4::new(s.x, s.y, s.vx, s.vy)
}

pub fn vec_to_state(v: &Vector4<f64>) -> RotatingState {
    RotatingState { x: v[0], y: v[1], vx: v[2], vy: v[3] }
}

fn rhs4(v: &Vector4<f64>, p: &Rpc3bpParams) -> Vector4<f64> {
    // the collision guard events keep r1, r2 away from 0, so the unwrap here
    // is only reachable through an exactly-zero distance
    let mu = p.mu;
    let d1x = v[0] + mu;
    let d2x = v[0] + mu - 1.0;
    let y = v[1];
    let r1sq = d1x * d1x + y * y;
    let r2sq = d2x * d2x + y * y;
    let ir13 = 1.0 / (r1sq * r1sq.sqrt());
    let ir23 = 1.0 / (r2sq * r2sq.sqrt());
    let ox = v[0] - (1.0 - mu) * d1x * ir13 - mu * d2x * ir23;
    let oy = y - (1.0 - mu) * y * ir13 - mu * y * ir23;
    Vector4::new(v[2], v[3], 2.0 * v[3] + ox, -2.0 * v[2] + oy)
}

/// Jacobian of the vector field, used by the variational equations.
pub fn field_jacobian(x: f64, y: f64, p: &Rpc3bpParams) -> Result<Matrix4<f64>> {
    let pot = effective_potential(x, y, p)?;
    let [[oxx, oxy], [_, oyy]] = pot.hess;
    Ok(Matrix4::new(
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0, //
        oxx, oxy, 0.0, 2.0, //
        oxy, oyy, -2.0, 0.0,
    ))
}

fn run_guarded<const N: usize>(
    f: &dyn Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
    t0: f64,
    tf: f64,
    z0: SVector<f64, N>,
    p: &Rpc3bpParams,
    cfg: &IntegratorConfig,
    events: &[EventFn<'_, N>],
) -> Result<Solution<N>> {
    let mu = p.mu;
    let g1 = move |_t: f64, z: &SVector<f64, N>| {
        let (dx, dy) = (z[0] + mu, z[1]);
        (dx * dx + dy * dy).sqrt() - COLLISION_RADIUS
    };
    let g2 = move |_t: f64, z: &SVector<f64, N>| {
        let (dx, dy) = (z[0] + mu - 1.0, z[1]);
        (dx * dx + dy * dy).sqrt() - COLLISION_RADIUS
    };
    let n_user = events.len();
    let mut all: Vec<EventFn<'_, N>> = Vec::with_capacity(n_user + 2);
    for ev in events {
        all.push(EventFn { g: ev.g, direction: ev.direction, stop_after_hits: ev.stop_after_hits });
    }
    all.push(EventFn { g: &g1, direction: CrossingDirection::Negative, stop_after_hits: 1 });
    all.push(EventFn { g: &g2, direction: CrossingDirection::Negative, stop_after_hits: 1 });

    let mut sol = integrate(f, t0, tf, z0, cfg, &all)?;
    if sol.stop == StopReason::Event {
        if let Some(hit) = sol.events.last() {
            if hit.event_index >= n_user {
                let s = RotatingState { x: hit.y[0], y: hit.y[1], vx: 0.0, vy: 0.0 };
                return Err(Error::Singularity { r1: s.r1(mu), r2: s.r2(mu) });
            }
        }
    }
    // hide the guard events from the caller
    sol.events.retain(|hit| hit.event_index < n_user);
    Ok(sol)
}

/// Integrate the flow from `s0` over [t0, tf] with optional section events.
/// A collision guard around each primary terminates with a singularity error.
pub fn integrate_trajectory(
    s0: &RotatingState,
    t0: f64,
    tf: f64,
    p: &Rpc3bpParams,
    cfg: &IntegratorConfig,
    events: &[EventFn<'_, 4>],
) -> Result<Solution<4>> {
    let pp = *p;
    let f = move |_t: f64, v: &Vector4<f64>| rhs4(v, &pp);
    run_guarded(&f, t0, tf, state_to_vec(s0), p, cfg, events)
}

/// Flatten (state, Φ) into the 20-dimensional variational state; Φ is stored
/// row-major in components 4..20, initialized to the identity.
pub fn stm_initial(s0: &RotatingState) -> SVector<f64, 20> {
    let mut z = SVector::<f64, 20>::zeros();
    z[0] = s0.x;
    z[1] = s0.y;
    z[2] = s0.vx;
    z[3] = s0.vy;
    for i in 0..4 {
        z[4 + 5 * i] = 1.0;
    }
    z
}

pub fn stm_state(z: &SVector<f64, 20>) -> RotatingState {
    RotatingState { x: z[0], y: z[1], vx: z[2], vy: z[3] }
}

pub fn stm_matrix(z: &SVector<f64, 20>) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| z[4 + 4 * i + j])
}

fn rhs20(z: &SVector<f64, 20>, p: &Rpc3bpParams) -> SVector<f64, 20> {
    let v = Vector4::new(z[0], z[1], z[2], z[3]);
    let dv = rhs4(&v, p);
    let a = match field_jacobian(z[0], z[1], p) {
        Ok(m) => m,
        Err(_) => Matrix4::zeros(),
    };
    let phi = stm_matrix(z);
    let dphi = a * phi;
    let mut dz = SVector::<f64, 20>::zeros();
    for i in 0..4 {
        dz[i] = dv[i];
        for j in 0..4 {
            dz[4 + 4 * i + j] = dphi[(i, j)];
        }
    }
    dz
}

/// Integrate the flow together with the state-transition matrix Φ(t, t0).
pub fn integrate_with_stm(
    s0: &RotatingState,
    t0: f64,
    tf: f64,
    p: &Rpc3bpParams,
    cfg: &IntegratorConfig,
    events: &[EventFn<'_, 20>],
) -> Result<Solution<20>> {
    let pp = *p;
    let f = move |_t: f64, z: &SVector<f64, 20>| rhs20(z, &pp);
    run_guarded(&f, t0, tf, stm_initial(s0), p, cfg, events)
}

/// Write a trajectory as CSV with columns t, x, y, vx, vy, J at the accepted
/// step points.
pub fn write_trajectory_csv<W: std::io::Write>(
    w: &mut W,
    sol: &Solution<4>,
    p: &Rpc3bpParams,
) -> Result<()> {
    writeln!(w, "t,x,y,vx,vy,J")?;
    for (t, v) in sol.ts.iter().zip(sol.ys.iter()) {
        let s = vec_to_state(v);
        let j = jacobi_constant(&s, p)?;
        writeln!(w, "{:e},{:e},{:e},{:e},{:e},{:e}", t, s.x, s.y, s.vx, s.vy, j)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(mu: f64) -> Rpc3bpParams {
        Rpc3bpParams::new(mu).unwrap()
    }

    #[test]
    fn potential_hand_value() {
        // mu = 0.25 at (0.5, 0): r1 = 0.75, r2 = 0.25,
        // omega = 0.125 + 1 + 1 + 0.09375
        let pot = effective_potential(0.5, 0.0, &params(0.25)).unwrap();
        assert!((pot.omega - 2.21875).abs() < 1e-15, "omega={}", pot.omega);
    }

    #[test]
    fn potential_derivatives_match_finite_differences() {
        let p = params(0.0009537);
        let pts = [(0.5, 0.3), (0.9, 0.1), (-0.4, 0.7), (1.3, -0.2), (0.2, -0.9)];
        let eps = 1e-6;
        for &(x, y) in &pts {
            let c = effective_potential(x, y, &p).unwrap();
            let fx = (effective_potential(x + eps, y, &p).unwrap().omega
                - effective_potential(x - eps, y, &p).unwrap().omega)
                / (2.0 * eps);
            let fy = (effective_potential(x, y + eps, &p).unwrap().omega
                - effective_potential(x, y - eps, &p).unwrap().omega)
                / (2.0 * eps);
            assert!((c.grad[0] - fx).abs() < 1e-6 * fx.abs().max(1.0));
            assert!((c.grad[1] - fy).abs() < 1e-6 * fy.abs().max(1.0));
            let gxx = (effective_potential(x + eps, y, &p).unwrap().grad[0]
                - effective_potential(x - eps, y, &p).unwrap().grad[0])
                / (2.0 * eps);
            let gxy = (effective_potential(x, y + eps, &p).unwrap().grad[0]
                - effective_potential(x, y - eps, &p).unwrap().grad[0])
                / (2.0 * eps);
            let gyy = (effective_potential(x, y + eps, &p).unwrap().grad[1]
                - effective_potential(x, y - eps, &p).unwrap().grad[1])
                / (2.0 * eps);
            assert!((c.hess[0][0] - gxx).abs() < 1e-5 * gxx.abs().max(1.0));
            assert!((c.hess[0][1] - gxy).abs() < 1e-5 * gxy.abs().max(1.0));
            assert!((c.hess[1][1] - gyy).abs() < 1e-5 * gyy.abs().max(1.0));
            assert_eq!(c.hess[0][1], c.hess[1][0]);
        }
    }

    #[test]
    fn jacobi_gradient_orthogonal_to_field() {
        let p = params(0.0009537);
        let states = [
            RotatingState::new(0.9, 0.1, 0.0, 0.2),
            RotatingState::new(0.5, 0.5, 0.1, -0.2),
            RotatingState::new(-0.3, 0.8, -0.4, 0.1),
        ];
        let eps = 1e-7;
        for s in &states {
            let f = vector_field(s, &p).unwrap();
            let j = |s: &RotatingState| jacobi_constant(s, &p).unwrap();
            let grad = [
                (j(&RotatingState { x: s.x + eps, ..*s }) - j(&RotatingState { x: s.x - eps, ..*s }))
                    / (2.0 * eps),
                (j(&RotatingState { y: s.y + eps, ..*s }) - j(&RotatingState { y: s.y - eps, ..*s }))
                    / (2.0 * eps),
                (j(&RotatingState { vx: s.vx + eps, ..*s })
                    - j(&RotatingState { vx: s.vx - eps, ..*s }))
                    / (2.0 * eps),
                (j(&RotatingState { vy: s.vy + eps, ..*s })
                    - j(&RotatingState { vy: s.vy - eps, ..*s }))
                    / (2.0 * eps),
            ];
            let dot: f64 = grad.iter().zip(f.iter()).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-6, "dot={dot}");
        }
    }

    #[test]
    fn jacobi_velocity_scaling() {
        let p = params(0.1);
        let s = RotatingState::new(0.4, 0.3, 0.2, -0.1);
        let s2 = RotatingState::new(0.4, 0.3, 0.4, -0.2);
        let j1 = jacobi_constant(&s, &p).unwrap();
        let j2 = jacobi_constant(&s2, &p).unwrap();
        let v2 = s.vx * s.vx + s.vy * s.vy;
        assert!((j1 - j2 - 3.0 * v2).abs() < 1e-14);
    }

    #[test]
    fn hamiltonian_offset_from_jacobi() {
        let p = params(0.0009537);
        let s = RotatingState::new(0.9, 0.1, 0.05, 0.2);
        let j = jacobi_constant(&s, &p).unwrap();
        let h = rotating_hamiltonian(&s, &p).unwrap();
        assert!((h - (-j / 2.0 + p.mu * (1.0 - p.mu) / 2.0)).abs() < 1e-14);
    }

    #[test]
    fn jacobi_conserved_long_time() {
        let p = params(0.01);
        let s0 = RotatingState::new(0.5, 0.5, 0.1, -0.2);
        let cfg = IntegratorConfig::with_tols(1e-13, 1e-13);
        let sol = integrate_trajectory(&s0, 0.0, 100.0, &p, &cfg, &[]).unwrap();
        let j0 = jacobi_constant(&s0, &p).unwrap();
        let mut worst = 0.0f64;
        let mut rmin = f64::INFINITY;
        for v in &sol.ys {
            let s = vec_to_state(v);
            let j = jacobi_constant(&s, &p).unwrap();
            worst = worst.max((j - j0).abs());
            rmin = rmin.min(s.r1(p.mu).min(s.r2(p.mu)));
        }
        assert!(worst < 1e-10, "Jacobi drift {worst}, min primary distance {rmin}");
    }

    #[test]
    fn field_matches_trajectory_finite_difference() {
        let p = params(0.0009537);
        let s0 = RotatingState::new(0.9, 0.1, 0.0, 0.2);
        let cfg = IntegratorConfig::with_tols(1e-13, 1e-13);
        let sol = integrate_trajectory(&s0, 0.0, 0.2, &p, &cfg, &[]).unwrap();
        let t = 0.1;
        let h = 1e-3;
        let f = vector_field(&vec_to_state(&sol.sample(t)), &p).unwrap();
        for i in 0..4 {
            // 4th-order central difference on the dense output
            let d = (-sol.sample(t + 2.0 * h)[i] + 8.0 * sol.sample(t + h)[i]
                - 8.0 * sol.sample(t - h)[i]
                + sol.sample(t - 2.0 * h)[i])
                / (12.0 * h);
            assert!((f[i] - d).abs() < 1e-9, "component {i}: {} vs {}", f[i], d);
        }
    }

    #[test]
    fn equilibrium_stays_fixed() {
        // L1 for mu = 0.01 by bisection of the collinear equation
        let p = params(0.01);
        let eq = |x: f64| {
            effective_potential(x, 0.0, &p).unwrap().grad[0]
        };
        let (mut lo, mut hi) = (0.5, 1.0 - p.mu - 1e-6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if eq(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let xl1 = 0.5 * (lo + hi);
        assert!(eq(xl1).abs() < 1e-11);
        let s0 = RotatingState::new(xl1, 0.0, 0.0, 0.0);
        let cfg = IntegratorConfig::with_tols(1e-12, 1e-12);
        // the saddle amplifies the O(1e-16) seed defect by e^{lambda t}, so
        // the horizon is limited to a few units in double precision
        let sol = integrate_trajectory(&s0, 0.0, 3.0, &p, &cfg, &[]).unwrap();
        let e = sol.y_end();
        assert!((e[0] - xl1).abs() < 1e-12 && e[1].abs() < 1e-12, "drifted to {e:?}");
    }

    #[test]
    fn time_reversibility() {
        let p = params(0.0009537);
        let s0 = RotatingState::new(0.9, 0.1, 0.0, 0.2);
        let cfg = IntegratorConfig::with_tols(1e-13, 1e-13);
        let fwd = integrate_trajectory(&s0, 0.0, 5.0, &p, &cfg, &[]).unwrap();
        let e = vec_to_state(fwd.y_end());
        // reflect and flow again: should land on the reflection of s0
        let mirrored = RotatingState::new(e.x, -e.y, -e.vx, e.vy);
        let back = integrate_trajectory(&mirrored, 0.0, 5.0, &p, &cfg, &[]).unwrap();
        let b = vec_to_state(back.y_end());
        assert!((b.x - s0.x).abs() < 2e-9);
        assert!((b.y + s0.y).abs() < 2e-9);
        assert!((b.vx + s0.vx).abs() < 2e-9);
        assert!((b.vy - s0.vy).abs() < 2e-9);
    }

    #[test]
    fn stm_symplectic_and_unimodular() {
        let p = params(0.01);
        let s0 = RotatingState::new(0.5, 0.5, 0.1, -0.2);
        let cfg = IntegratorConfig::with_tols(1e-13, 1e-13);
        let sol = integrate_with_stm(&s0, 0.0, 3.0, &p, &cfg, &[]).unwrap();
        let phi = stm_matrix(sol.y_end());
        assert!((phi.determinant() - 1.0).abs() < 1e-8, "det={}", phi.determinant());

        // convert to momentum coordinates: (x, y, px, py) = c * (x, y, vx, vy)
        let c = Matrix4::new(
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, -1.0, 1.0, 0.0, //
            1.0, 0.0, 0.0, 1.0,
        );
        let phi_m = c * phi * c.try_inverse().unwrap();
        let om = Matrix4::new(
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            -1.0, 0.0, 0.0, 0.0, //
            0.0, -1.0, 0.0, 0.0,
        );
        let resid = phi_m.transpose() * om * phi_m - om;
        assert!(resid.abs().max() < 1e-8, "symplectic residual {}", resid.abs().max());
    }

    #[test]
    fn section_event_located() {
        let p = params(0.0009537);
        let s0 = RotatingState::new(0.9, 0.1, 0.0, 0.2);
        let cfg = IntegratorConfig::with_tols(1e-12, 1e-12);
        let g = |_t: f64, z: &Vector4<f64>| z[1];
        let ev = EventFn { g: &g, direction: CrossingDirection::Any, stop_after_hits: 1 };
        let sol = integrate_trajectory(&s0, 0.0, 20.0, &p, &cfg, &[ev]).unwrap();
        assert_eq!(sol.stop, StopReason::Event);
        assert!(sol.events[0].y[1].abs() < 1e-12, "y={}", sol.events[0].y[1]);
    }

    #[test]
    fn collision_detected() {
        let p = params(0.01);
        // radial fall from 1e-3 above the large primary
        let s0 = RotatingState::new(-0.01 + 1e-3, 0.0, -1.0, 0.0);
        let cfg = IntegratorConfig::with_tols(1e-12, 1e-12);
        let out = integrate_trajectory(&s0, 0.0, 1.0, &p, &cfg, &[]);
        match out {
            Err(Error::Singularity { r1, .. }) => assert!(r1 < 2e-6, "r1={r1}"),
            other => panic!("expected singularity, got {other:?}"),
        }
    }

    #[test]
    fn csv_columns() {
        let p = params(0.01);
        let s0 = RotatingState::new(0.5, 0.5, 0.1, -0.2);
        let cfg = IntegratorConfig::with_tols(1e-10, 1e-10);
        let sol = integrate_trajectory(&s0, 0.0, 0.5, &p, &cfg, &[]).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &sol, &p).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x,y,vx,vy,J\n"));
        assert!(text.lines().count() == sol.ts.len() + 1);
    }
}
