//! Lyapunov periodic orbits around L1/L2: seeding from the center
//! linearization, symmetric differential correction, continuation in
//! amplitude to build energy families (cylinders), and monodromy/Floquet
//! data.

use nalgebra::{Matrix2, Matrix4, SVector, Vector2, Vector4};

use crate::coords::RotatingState;
use crate::dynamics::{
    effective_potential, integrate_with_stm, jacobi_constant, stm_matrix, stm_state,
    vector_field, Rpc3bpParams,
};
use crate::equilibria::{LagrangePoint, Linearization, PointId};
use crate::error::{Error, Result};
use crate::ode::{CrossingDirection, EventFn, IntegratorConfig, StopReason};

/// A corrected periodic orbit with its initial condition on the symmetric
/// section y = 0, ẋ = 0.
#[derive(Debug, Clone)]
pub struct LyapunovOrbit {
    pub point: PointId,
    pub initial_state: RotatingState,
    pub period: f64,
    /// Energy h = −J/2.
    pub energy: f64,
    pub monodromy: Matrix4<f64>,
    /// Largest Floquet multiplier Λ > 1.
    pub floquet_lambda: f64,
    /// Unit eigenvector of the monodromy for Λ, at the initial state.
    pub unstable_eigvec: Vector4<f64>,
    /// x-excursion from the equilibrium.
    pub amplitude: f64,
}

impl LyapunovOrbit {
    /// Hyperbolic splitting rate log Λ / T.
    pub fn lambda_split(&self) -> f64 {
        self.floquet_lambda.ln() / self.period
    }

    pub fn jacobi(&self) -> f64 {
        -2.0 * self.energy
    }
}

/// One-parameter family of Lyapunov orbits over an energy interval.
#[derive(Debug, Clone)]
pub struct Cylinder {
    pub point: PointId,
    pub params: Rpc3bpParams,
    /// Orbits with strictly monotone energies.
    pub family: Vec<LyapunovOrbit>,
}

impl Cylinder {
    pub fn h_min(&self) -> f64 {
        self.family.first().map(|o| o.energy).unwrap_or(f64::NAN)
    }

    pub fn h_max(&self) -> f64 {
        self.family.last().map(|o| o.energy).unwrap_or(f64::NAN)
    }
}

fn correction_cfg() -> IntegratorConfig {
    IntegratorConfig::with_tols(1e-13, 1e-13)
}

/// Initial state on the linear center ellipse at its y = 0, ẋ = 0 phase,
/// with period guess 2π/κ.
///
/// The center eigenvector at a collinear point has a real part of the form
/// (1, 0, 0, w₄), which already satisfies the symmetric-crossing conditions.
pub fn seed_orbit(
    lin: &Linearization,
    lp: &LagrangePoint,
    amplitude: f64,
) -> (RotatingState, f64) {
    let w = &lin.w_center_re;
    let scale = amplitude / w[0];
    let s = RotatingState::new(lp.x + w[0] * scale, 0.0, 0.0, w[3] * scale);
    (s, 2.0 * std::f64::consts::PI / lin.kappa)
}

/// First y = 0 crossing of the flow-with-STM from a symmetric initial state.
fn half_crossing(
    s0: &RotatingState,
    p: &Rpc3bpParams,
    t_max: f64,
) -> Result<(f64, SVector<f64, 20>)> {
    let g = |_t: f64, z: &SVector<f64, 20>| z[1];
    let ev = EventFn { g: &g, direction: CrossingDirection::Any, stop_after_hits: 1 };
    let sol = integrate_with_stm(s0, 0.0, t_max, p, &correction_cfg(), &[ev])?;
    if sol.stop != StopReason::Event {
        return Err(Error::CorrectionFailure(format!(
            "no y=0 return within t={t_max} from x0={}",
            s0.x
        )));
    }
    let hit = &sol.events[0];
    Ok((hit.t, hit.y))
}

/// Sensitivity of the crossing residual ẋ(t*) to initial-condition changes,
/// accounting for the variation of the crossing time t*(s₀).
fn crossing_derivative(
    z: &SVector<f64, 20>,
    p: &Rpc3bpParams,
    col: usize,
) -> Result<f64> {
    let s = stm_state(z);
    let f = vector_field(&s, p)?;
    let phi = stm_matrix(z);
    if f[1].abs() < 1e-14 {
        return Err(Error::CorrectionFailure("tangential section crossing".into()));
    }
    Ok(phi[(2, col)] - f[2] / f[1] * phi[(1, col)])
}

/// Symmetric differential correction: hold x₀ (y₀ = ẋ₀ = 0), Newton on ẏ₀
/// until the first y = 0 crossing is perpendicular.
pub fn correct_orbit(
    seed: &RotatingState,
    period_guess: f64,
    lp: &LagrangePoint,
) -> Result<LyapunovOrbit> {
    let p = &lp.params;
    let mut vy0 = seed.vy;
    let t_max = 3.0 * period_guess.max(1.0);
    let mut t_half = 0.0;
    let mut converged = false;
    for _ in 0..50 {
        let s0 = RotatingState::new(seed.x, 0.0, 0.0, vy0);
        let (th, z) = half_crossing(&s0, p, t_max)?;
        t_half = th;
        let resid = z[2];
        if resid.abs() < 1e-12 {
            converged = true;
            break;
        }
        let d = crossing_derivative(&z, p, 3)?;
        if d.abs() < 1e-14 {
            return Err(Error::CorrectionFailure("singular correction derivative".into()));
        }
        vy0 -= resid / d;
    }
    if !converged {
        return Err(Error::CorrectionFailure(format!(
            "perpendicular-crossing Newton did not converge at x0={}",
            seed.x
        )));
    }
    finish_orbit(RotatingState::new(seed.x, 0.0, 0.0, vy0), 2.0 * t_half, lp)
}

/// Monodromy, Floquet data, and energy for a converged initial condition.
fn finish_orbit(s0: RotatingState, period: f64, lp: &LagrangePoint) -> Result<LyapunovOrbit> {
    let p = &lp.params;
    let sol = integrate_with_stm(&s0, 0.0, period, p, &correction_cfg(), &[])?;
    let m = stm_matrix(sol.y_end());
    let eigs = m.complex_eigenvalues();
    let mut lambda = 0.0f64;
    for e in eigs.iter() {
        if e.im.abs() < 1e-6 * e.re.abs().max(1.0) {
            lambda = lambda.max(e.re);
        }
    }
    if lambda <= 1.0 {
        return Err(Error::Numerical(format!("monodromy not hyperbolic, max multiplier {lambda}")));
    }
    // eigenvector for Lambda as the null direction of (M - Lambda I)
    let shifted = m - Matrix4::identity() * lambda;
    let svd = shifted.svd(true, true);
    let vt = svd.v_t.ok_or_else(|| Error::Numerical("SVD failed".into()))?;
    let mut v = Vector4::from_fn(|i, _| vt[(3, i)]);
    v /= v.norm();
    for i in 0..4 {
        if v[i] != 0.0 {
            if v[i] < 0.0 {
                v = -v;
            }
            break;
        }
    }
    let j = jacobi_constant(&s0, p)?;
    Ok(LyapunovOrbit {
        point: lp.which,
        initial_state: s0,
        period,
        energy: -j / 2.0,
        monodromy: m,
        floquet_lambda: lambda,
        unstable_eigvec: v,
        amplitude: (s0.x - lp.x).abs(),
    })
}

/// Maximum return error |φ_T(s₀) − s₀|_∞ of a stored orbit.
pub fn return_error(orbit: &LyapunovOrbit, p: &Rpc3bpParams) -> Result<f64> {
    let sol = crate::dynamics::integrate_trajectory(
        &orbit.initial_state,
        0.0,
        orbit.period,
        p,
        &correction_cfg(),
        &[],
    )?;
    let e = sol.y_end();
    let s0 = &orbit.initial_state;
    Ok((e[0] - s0.x)
        .abs()
        .max((e[1] - s0.y).abs())
        .max((e[2] - s0.vx).abs())
        .max((e[3] - s0.vy).abs()))
}

/// Continue the family outward in amplitude from the linear regime until the
/// energy passes `h_max` (h = −J/2 grows with amplitude). Adaptive amplitude
/// step; a partial family plus a stall error is returned if the step
/// underflows.
pub fn continue_family(
    lp: &LagrangePoint,
    lin: &Linearization,
    h_max: f64,
    max_orbits: usize,
) -> Result<Cylinder> {
    let side = 1.0f64; // excursion toward the large primary for L1; sign-free for data
    let gap = lp.gap_to_secondary();
    let mut amplitude = 1e-4 * gap.max(1e-3);
    let mut step = amplitude;
    let (seed0, t_guess) = seed_orbit(lin, lp, side * amplitude);
    let mut prev = correct_orbit(&seed0, t_guess, lp)?;
    let mut family = vec![prev.clone()];

    while prev.energy < h_max && family.len() < max_orbits {
        let mut ok = false;
        while !ok {
            let a_next = amplitude + step;
            // secant extrapolation of vy0 from the last two orbits
            let vy_guess = if family.len() >= 2 {
                let a = &family[family.len() - 2];
                let b = &family[family.len() - 1];
                let da = (b.initial_state.x - a.initial_state.x).abs();
                if da > 0.0 {
                    b.initial_state.vy
                        + (b.initial_state.vy - a.initial_state.vy) / da * step
                } else {
                    b.initial_state.vy
                }
            } else {
                prev.initial_state.vy
            };
            let seed = RotatingState::new(lp.x + side * a_next, 0.0, 0.0, vy_guess);
            match correct_orbit(&seed, prev.period, lp) {
                Ok(orbit) => {
                    if orbit.energy <= prev.energy {
                        return Err(Error::ContinuationStall(format!(
                            "energy not monotone at amplitude {a_next}"
                        )));
                    }
                    amplitude = a_next;
                    step = (step * 1.6).min(0.05 * gap);
                    prev = orbit.clone();
                    family.push(orbit);
                    ok = true;
                }
                Err(_) => {
                    step *= 0.5;
                    if step < 1e-12 * gap {
                        return Err(Error::ContinuationStall(format!(
                            "amplitude step underflow near {amplitude}"
                        )));
                    }
                }
            }
        }
    }
    Ok(Cylinder { point: lp.which, params: lp.params, family })
}

/// Orbit at a prescribed energy: linear interpolation inside the family
/// bracket, then a two-unknown Newton polish on (x₀, ẏ₀) targeting a
/// perpendicular crossing at Jacobi constant −2h.
pub fn orbit_at_energy(cyl: &Cylinder, h: f64, lp: &LagrangePoint) -> Result<LyapunovOrbit> {
    let fam = &cyl.family;
    if fam.is_empty() || h < fam[0].energy - 1e-12 || h > fam[fam.len() - 1].energy + 1e-12 {
        return Err(Error::Domain(format!(
            "energy {h} outside family range [{}, {}]",
            cyl.h_min(),
            cyl.h_max()
        )));
    }
    let idx = fam.partition_point(|o| o.energy < h).min(fam.len() - 1).max(1);
    let (a, b) = (&fam[idx - 1], &fam[idx]);
    let w = if (b.energy - a.energy).abs() > 0.0 {
        ((h - a.energy) / (b.energy - a.energy)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let lerp = |u: f64, v: f64| u + w * (v - u);
    let mut x0 = lerp(a.initial_state.x, b.initial_state.x);
    let mut vy0 = lerp(a.initial_state.vy, b.initial_state.vy);
    let t_guess = lerp(a.period, b.period);
    let j_target = -2.0 * h;
    let p = &lp.params;

    let mut t_half = t_guess / 2.0;
    let mut converged = false;
    for _ in 0..50 {
        let s0 = RotatingState::new(x0, 0.0, 0.0, vy0);
        let (th, z) = half_crossing(&s0, p, 3.0 * t_guess)?;
        t_half = th;
        let r1 = z[2];
        let r2 = jacobi_constant(&s0, p)? - j_target;
        if r1.abs() < 1e-12 && r2.abs() < 1e-12 {
            converged = true;
            break;
        }
        let d11 = crossing_derivative(&z, p, 0)?;
        let d12 = crossing_derivative(&z, p, 3)?;
        let pot = effective_potential(x0, 0.0, p)?;
        let d21 = 2.0 * pot.grad[0];
        let d22 = -2.0 * vy0;
        let jac = Matrix2::new(d11, d12, d21, d22);
        let rhs = Vector2::new(r1, r2);
        let delta = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::CorrectionFailure("singular 2x2 polish".into()))?;
        x0 -= delta[0];
        vy0 -= delta[1];
    }
    if !converged {
        return Err(Error::CorrectionFailure(format!("energy polish failed at h={h}")));
    }
    finish_orbit(RotatingState::new(x0, 0.0, 0.0, vy0), 2.0 * t_half, lp)
}
