//! Globalized stable/unstable manifolds of Lyapunov orbits, Poincaré section
//! curves, heteroclinic intersection detection with transversality measures,
//! and the Hill-limit connection criterion.

use nalgebra::{Matrix2, Matrix4, SVector, Vector2, Vector4};

use crate::coords::RotatingState;
use crate::dynamics::{
    integrate_trajectory, integrate_with_stm, stm_matrix, vec_to_state, Rpc3bpParams,
};
use crate::error::{Error, Result};
use crate::lyapunov::LyapunovOrbit;
use crate::ode::{CrossingDirection, EventFn, IntegratorConfig, StopReason};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifoldKind {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }
}

/// Poincaré section x = const with an ẋ-sign selector (0 accepts both).
#[derive(Debug, Clone, Copy)]
pub struct Section {
    pub x: f64,
    pub vx_sign: f64,
}

/// Section hit of one manifold fiber.
#[derive(Debug, Clone, Copy)]
pub struct FiberHit {
    pub t: f64,
    pub state: RotatingState,
}

/// One fiber: seed at a given orbit phase, integrated to the section.
#[derive(Debug, Clone)]
pub struct Fiber {
    pub phase: f64,
    pub seed: RotatingState,
    /// None: section not reached or fiber excluded (collision).
    pub hit: Option<FiberHit>,
}

/// Discretized manifold branch of one Lyapunov orbit.
#[derive(Debug, Clone)]
pub struct ManifoldBranch {
    pub orbit: LyapunovOrbit,
    pub params: Rpc3bpParams,
    pub kind: ManifoldKind,
    pub side: Side,
    pub d0: f64,
    pub section: Section,
    pub t_max: f64,
    pub fibers: Vec<Fiber>,
}

/// Ordered section curve in the (y, ẏ) plane with source phases.
#[derive(Debug, Clone)]
pub struct SectionCurve {
    pub section: Section,
    pub jacobi: f64,
    /// (phase, y, ẏ)
    pub points: Vec<(f64, f64, f64)>,
}

/// A refined intersection of an unstable and a stable section curve.
#[derive(Debug, Clone)]
pub struct HeteroclinicConnection {
    pub from: crate::equilibria::PointId,
    pub to: crate::equilibria::PointId,
    /// (y, ẏ) on the section.
    pub point: (f64, f64),
    pub phase_unstable: f64,
    pub phase_stable: f64,
    pub crossing_angle: f64,
    pub residual: f64,
    pub transversal: bool,
}

fn fiber_cfg() -> IntegratorConfig {
    IntegratorConfig::with_tols(1e-12, 1e-12)
}

/// Monodromy eigenvector for the requested manifold kind (multiplier Λ for
/// unstable, 1/Λ for stable), unit norm.
fn branch_eigvec(orbit: &LyapunovOrbit, kind: ManifoldKind) -> Result<Vector4<f64>> {
    match kind {
        ManifoldKind::Unstable => Ok(orbit.unstable_eigvec),
        ManifoldKind::Stable => {
            let lam_inv = 1.0 / orbit.floquet_lambda;
            let shifted = orbit.monodromy - Matrix4::identity() * lam_inv;
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
            Ok(v)
        }
    }
}

/// Seed point of a fiber: orbit state at `phase` displaced by d0 along the
/// STM-transported branch eigenvector.
fn fiber_seed(
    orbit: &LyapunovOrbit,
    p: &Rpc3bpParams,
    kind: ManifoldKind,
    side: Side,
    d0: f64,
    phase: f64,
) -> Result<RotatingState> {
    let v0 = branch_eigvec(orbit, kind)?;
    let (s, v) = if phase == 0.0 {
        (orbit.initial_state, v0)
    } else {
        let sol = integrate_with_stm(&orbit.initial_state, 0.0, phase, p, &fiber_cfg(), &[])?;
        let z = sol.y_end();
        let v = stm_matrix(z) * v0;
        (crate::dynamics::stm_state(z), v)
    };
    let v = v / v.norm();
    let d = side.sign() * d0;
    Ok(RotatingState::new(s.x + d * v[0], s.y + d * v[1], s.vx + d * v[2], s.vy + d * v[3]))
}

/// Integrate one seed to the section; unstable forward, stable backward.
/// The ẋ-sign selector picks the crossing direction of x − x_section along
/// physical time.
fn seed_to_section(
    seed: &RotatingState,
    p: &Rpc3bpParams,
    kind: ManifoldKind,
    section: &Section,
    t_max: f64,
) -> Result<Option<FiberHit>> {
    let xs = section.x;
    let g = move |_t: f64, z: &SVector<f64, 4>| z[0] - xs;
    let backward = kind == ManifoldKind::Stable;
    // direction of the sign change of g along the integration variable
    let dir = if section.vx_sign > 0.0 {
        if backward {
            CrossingDirection::Negative
        } else {
            CrossingDirection::Positive
        }
    } else if section.vx_sign < 0.0 {
        if backward {
            CrossingDirection::Positive
        } else {
            CrossingDirection::Negative
        }
    } else {
        CrossingDirection::Any
    };
    let ev = EventFn { g: &g, direction: dir, stop_after_hits: 1 };
    let tf = if backward { -t_max } else { t_max };
    match integrate_trajectory(seed, 0.0, tf, p, &fiber_cfg(), &[ev]) {
        Ok(sol) => {
            if sol.stop == StopReason::Event {
                let hit = &sol.events[0];
                Ok(Some(FiberHit { t: hit.t, state: vec_to_state(&hit.y) }))
            } else {
                Ok(None)
            }
        }
        Err(Error::Singularity { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Globalize one manifold branch over a uniform phase grid.
pub fn globalize(
    orbit: &LyapunovOrbit,
    p: &Rpc3bpParams,
    kind: ManifoldKind,
    side: Side,
    d0: f64,
    section: Section,
    t_max: f64,
    n_phases: usize,
) -> Result<ManifoldBranch> {
    let mut fibers = Vec::with_capacity(n_phases);
    for j in 0..n_phases {
        let phase = orbit.period * j as f64 / n_phases as f64;
        let seed = fiber_seed(orbit, p, kind, side, d0, phase)?;
        let hit = seed_to_section(&seed, p, kind, &section, t_max)?;
        fibers.push(Fiber { phase, seed, hit });
    }
    Ok(ManifoldBranch {
        orbit: orbit.clone(),
        params: *p,
        kind,
        side,
        d0,
        section,
        t_max,
        fibers,
    })
}

/// Collect the section hits of a branch into an ordered curve.
pub fn section_cut(branch: &ManifoldBranch) -> SectionCurve {
    let points = branch
        .fibers
        .iter()
        .filter_map(|f| f.hit.as_ref().map(|h| (f.phase, h.state.y, h.state.vy)))
        .collect();
    SectionCurve { section: branch.section, jacobi: branch.orbit.jacobi(), points }
}

/// Proper intersections of two planar polylines; returns (segment index in a,
/// segment index in b, intersection point).
pub fn polyline_intersections(
    a: &[(f64, f64)],
    b: &[(f64, f64)],
) -> Vec<(usize, usize, (f64, f64))> {
    let mut out = Vec::new();
    for i in 0..a.len().saturating_sub(1) {
        let (p1, p2) = (a[i], a[i + 1]);
        for j in 0..b.len().saturating_sub(1) {
            let (q1, q2) = (b[j], b[j + 1]);
            let r = (p2.0 - p1.0, p2.1 - p1.1);
            let s = (q2.0 - q1.0, q2.1 - q1.1);
            let denom = r.0 * s.1 - r.1 * s.0;
            if denom == 0.0 {
                continue;
            }
            let dq = (q1.0 - p1.0, q1.1 - p1.1);
            let t = (dq.0 * s.1 - dq.1 * s.0) / denom;
            let u = (dq.0 * r.1 - dq.1 * r.0) / denom;
            // half-open so an intersection at a shared vertex counts once
            if (0.0..1.0).contains(&t) && (0.0..1.0).contains(&u) {
                out.push((i, j, (p1.0 + t * r.0, p1.1 + t * r.1)));
            }
        }
    }
    out
}

fn hit_yvy(branch: &ManifoldBranch, phase: f64) -> Result<(f64, f64)> {
    let t = branch.orbit.period;
    let ph = phase.rem_euclid(t);
    let seed = fiber_seed(&branch.orbit, &branch.params, branch.kind, branch.side, branch.d0, ph)?;
    match seed_to_section(&seed, &branch.params, branch.kind, &branch.section, branch.t_max)? {
        Some(h) => Ok((h.state.y, h.state.vy)),
        None => Err(Error::Numerical(format!("fiber at phase {ph} misses the section"))),
    }
}

/// Intersect the section cuts of an unstable and a stable branch and refine
/// each crossing by Newton in the two fiber phases. `floor` is the
/// transversality threshold in radians.
pub fn find_heteroclinics(
    unstable: &ManifoldBranch,
    stable: &ManifoldBranch,
    floor: f64,
) -> Result<Vec<HeteroclinicConnection>> {
    let mut cu = section_cut(unstable);
    let mut cs = section_cut(stable);
    // close the loops: the curve is periodic in the orbit phase
    if let Some(&first) = cu.points.first() {
        cu.points.push((first.0 + unstable.orbit.period, first.1, first.2));
    }
    if let Some(&first) = cs.points.first() {
        cs.points.push((first.0 + stable.orbit.period, first.1, first.2));
    }
    let au: Vec<(f64, f64)> = cu.points.iter().map(|p| (p.1, p.2)).collect();
    let bs: Vec<(f64, f64)> = cs.points.iter().map(|p| (p.1, p.2)).collect();
    let raw = polyline_intersections(&au, &bs);

    let mut out = Vec::new();
    'raw: for (i, j, _) in raw {
        let mut pu = cu.points[i].0;
        let mut ps = cs.points[j].0;
        // phase steps toward the neighboring grid point
        let dpu = (cu.points[i + 1].0 - cu.points[i].0).abs().max(1e-6);
        let dps = (cs.points[j + 1].0 - cs.points[j].0).abs().max(1e-6);
        let mut resid = f64::INFINITY;
        let mut point = (f64::NAN, f64::NAN);
        let mut jac = Matrix2::zeros();
        let fd_u = 1e-4 * dpu;
        let fd_s = 1e-4 * dps;
        let mut converged = false;
        for _ in 0..30 {
            // a fiber drifting off the section during refinement abandons
            // this candidate, it is not fatal for the search
            let (Ok(hu), Ok(hs)) = (hit_yvy(unstable, pu), hit_yvy(stable, ps)) else {
                continue 'raw;
            };
            let f = Vector2::new(hu.0 - hs.0, hu.1 - hs.1);
            resid = f.norm();
            point = (0.5 * (hu.0 + hs.0), 0.5 * (hu.1 + hs.1));
            if resid < 1e-8 {
                converged = true;
                break;
            }
            let (Ok(hup), Ok(hsp)) = (hit_yvy(unstable, pu + fd_u), hit_yvy(stable, ps + fd_s))
            else {
                continue 'raw;
            };
            jac = Matrix2::new(
                (hup.0 - hu.0) / fd_u,
                -(hsp.0 - hs.0) / fd_s,
                (hup.1 - hu.1) / fd_u,
                -(hsp.1 - hs.1) / fd_s,
            );
            let Some(delta) = jac.lu().solve(&f) else { break };
            // damp steps that would leave the bracketing cells entirely
            let cap_u = 2.0 * dpu;
            let cap_s = 2.0 * dps;
            pu -= delta[0].clamp(-cap_u, cap_u);
            ps -= delta[1].clamp(-cap_s, cap_s);
        }
        if !converged {
            continue;
        }
        // crossing angle from the two curve tangents
        let (Ok(hu), Ok(hs)) = (hit_yvy(unstable, pu), hit_yvy(stable, ps)) else {
            continue 'raw;
        };
        let (Ok(hup), Ok(hsp)) = (hit_yvy(unstable, pu + fd_u), hit_yvy(stable, ps + fd_s))
        else {
            continue 'raw;
        };
        let tu = Vector2::new((hup.0 - hu.0) / fd_u, (hup.1 - hu.1) / fd_u);
        let ts = Vector2::new((hsp.0 - hs.0) / fd_s, (hsp.1 - hs.1) / fd_s);
        let cross = (tu[0] * ts[1] - tu[1] * ts[0]).abs();
        let dot = (tu.dot(&ts)).abs();
        let angle = cross.atan2(dot);
        let _ = jac;
        // several raw grid crossings may converge to the same connection
        let dup = out.iter().any(|c: &HeteroclinicConnection| {
            (c.point.0 - point.0).abs() < 1e-6 && (c.point.1 - point.1).abs() < 1e-6
        });
        if dup {
            continue;
        }
        out.push(HeteroclinicConnection {
            from: unstable.orbit.point,
            to: stable.orbit.point,
            point,
            phase_unstable: pu.rem_euclid(unstable.orbit.period),
            phase_stable: ps.rem_euclid(stable.orbit.period),
            crossing_angle: angle,
            residual: resid,
            transversal: angle > floor,
        });
    }
    Ok(out)
}

/// Hill-limit connection criterion (1/2)|J_H|^{−3/2} > 1/18; returns the
/// boolean and the margin (1/2)|J_H|^{−3/2} − 1/18.
pub fn hill_criterion(jh: f64) -> Result<(bool, f64)> {
    if jh == 0.0 {
        return Err(Error::Domain("hill_criterion: J_H = 0".into()));
    }
    let margin = 0.5 * jh.abs().powf(-1.5) - 1.0 / 18.0;
    // the boundary |J_H| = 9^{2/3} counts as closed; absorb rounding of powf
    Ok((margin > 1e-14, margin))
}
