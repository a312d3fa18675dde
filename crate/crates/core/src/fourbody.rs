//! Quasi-periodically perturbed asteroid dynamics: the perturbation scalar
//! and its frozen averages along Lyapunov orbits, the nondegeneracy
//! diagnostic, the averaged energy-growth ODE, and the direct diffusion
//! simulation with energy traces.

use crate::coords::{cartesian_to_delaunay, RotatingState};
use crate::dynamics::{
    effective_potential, integrate_trajectory, jacobi_constant, state_to_vec, to_momenta,
    vec_to_state, Rpc3bpParams, COLLISION_RADIUS,
};
use crate::equilibria::{find_collinear_points, LagrangePoint, PointId};
use crate::error::{Error, Result};
use crate::lyapunov::{orbit_at_energy, Cylinder, LyapunovOrbit};
use crate::manifolds::{
    find_heteroclinics, globalize, section_cut, ManifoldKind, Section, Side,
};
use crate::ode::{integrate, IntegratorConfig, Solution};
use crate::planet::PlanetOrbit;
use nalgebra::SVector;
use std::f64::consts::PI;

const TAU: f64 = 2.0 * PI;

/// Below this angular frequency the second torus angle is treated as frozen.
pub const NU2_FREQ_FLOOR: f64 = 1e-12;

/// Masses, the stored resonant planet orbit, and the angular-velocity
/// modulation model of the non-uniformly rotating frame.
#[derive(Debug, Clone)]
pub struct FourBodyParams {
    pub params: Rpc3bpParams,
    /// Planet mass δ; δ = 0 selects the unperturbed baseline.
    pub delta: f64,
    /// Cap constant in the admissibility bound δ ≤ c_δ ε³.
    pub c_delta: f64,
    pub planet: PlanetOrbit,
    /// Angular-momentum offset constant c in θ̇ = (δ/α)(c − G_P).
    pub c: f64,
    /// Couple the asteroid to the planet with δ² instead of δ in the
    /// −δ/r_AP term (sensitivity study; the primary positions keep δ).
    pub delta_squared_coupling: bool,
}

impl FourBodyParams {
    pub fn new(planet: PlanetOrbit, delta: f64, c: f64) -> Result<Self> {
        let params = Rpc3bpParams::new(planet.mu)?;
        let p = Self {
            params,
            delta,
            c_delta: 1.0,
            planet,
            c,
            delta_squared_coupling: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_cap(mut self, c_delta: f64) -> Result<Self> {
        self.c_delta = c_delta;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0) {
            return Err(Error::Domain(format!("planet mass {} negative", self.delta)));
        }
        let cap = self.c_delta * self.epsilon().powi(3) * (1.0 + 1e-9);
        if self.delta > cap {
            return Err(Error::Domain(format!(
                "planet mass {} exceeds admissible cap {cap}",
                self.delta
            )));
        }
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        self.planet.spec.epsilon()
    }

    /// Mean of G_P over one ν₁ period (periodic trapezoid on n nodes).
    /// With c set to this value θ̇ oscillates around zero, so the
    /// modulated frame stays aligned with the uniformly rotating one on
    /// average. The offset does not change ∂f̄/∂ν₁, only the gauge.
    pub fn mean_planet_ang_mom(&self, n: usize) -> f64 {
        (0..n).map(|j| self.planet_ang_mom(TAU * j as f64 / n as f64)).sum::<f64>() / n as f64
    }

    /// Same model with a different angular-momentum offset constant c.
    pub fn with_gauge(&self, c: f64) -> Self {
        Self { c, ..self.clone() }
    }

    /// Rotating-frame winding number m − k of the planet per ν₁ period.
    /// Frozen averages carry Fourier content up to this wavenumber in ν₁,
    /// so ν grids must resolve it.
    pub fn winding(&self) -> usize {
        (self.planet.spec.m - self.planet.spec.k) as usize
    }

    /// α = μ(1−μ).
    pub fn alpha(&self) -> f64 {
        self.params.mu * (1.0 - self.params.mu)
    }

    /// Planet angular momentum G_P = q_P × p_P at phase ν₁.
    pub fn planet_ang_mom(&self, nu1: f64) -> f64 {
        let s = self.planet.state_at_phase(nu1);
        let [px, py] = to_momenta(&s);
        s.x * py - s.y * px
    }

    /// Frame angular-velocity modulation θ̇(ν₁) = (δ/α)(c − G_P(ν₁)).
    pub fn theta_dot(&self, nu1: f64) -> f64 {
        self.delta / self.alpha() * (self.c - self.planet_ang_mom(nu1))
    }

    /// dθ̇/dν₁ through the gravity torque on the planet,
    /// dG_P/dt = x Ω_y − y Ω_x.
    pub fn theta_dot_deriv(&self, nu1: f64) -> Result<f64> {
        let s = self.planet.state_at_phase(nu1);
        let pot = effective_potential(s.x, s.y, &self.params)?;
        let torque = s.x * pot.grad[1] - s.y * pot.grad[0];
        let dgdnu = self.planet.period / TAU * torque;
        Ok(-self.delta / self.alpha() * dgdnu)
    }

    /// δ or δ² in the asteroid–planet coupling term.
    pub fn coupling_delta(&self) -> f64 {
        if self.delta_squared_coupling {
            self.delta * self.delta
        } else {
            self.delta
        }
    }

    /// Frequency of the slow frame angle ν₂ = θ/ε at phase ν₁.
    pub fn nu2_frequency(&self, nu1: f64) -> f64 {
        self.theta_dot(nu1) / self.epsilon()
    }
}

/// Point on the frozen 2-torus. ν₁ is the planet phase; ν₂ tracks the slow
/// frame rotation and is dynamically degenerate at leading order (the
/// perturbation does not depend on it once the radial corrections are
/// dropped), so it is carried for bookkeeping only.
#[derive(Debug, Clone, Copy)]
pub struct FrozenPhase {
    pub nu1: f64,
    pub nu2: f64,
}

impl FrozenPhase {
    pub fn new(nu1: f64, nu2: f64) -> Self {
        Self { nu1: nu1.rem_euclid(TAU), nu2: nu2.rem_euclid(TAU) }
    }
}

/// Primary and planet positions plus the frame modulation at a frozen phase.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    q_p: [f64; 2],
    q_s: [f64; 2],
    q_j: [f64; 2],
    theta_dot: f64,
}

impl FourBodyParams {
    fn geometry(&self, nu1: f64) -> Geometry {
        let mu = self.params.mu;
        let sp = self.planet.state_at_phase(nu1);
        let q_p = [sp.x, sp.y];
        // Mass-center bookkeeping shifts both primaries by −δ q_P.
        let q_s = [-mu - self.delta * q_p[0], -self.delta * q_p[1]];
        let q_j = [1.0 - mu - self.delta * q_p[0], -self.delta * q_p[1]];
        Geometry { q_p, q_s, q_j, theta_dot: self.theta_dot(nu1) }
    }

    /// dq_P/dν₁ from the stored orbit's velocity.
    fn planet_dpos(&self, nu1: f64) -> [f64; 2] {
        let sp = self.planet.state_at_phase(nu1);
        let scale = self.planet.period / TAU;
        [scale * sp.vx, scale * sp.vy]
    }
}

fn norm2(d: [f64; 2]) -> f64 {
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Perturbation scalar
/// f = −θ̇ q_A×p_A + (1−μ)(1/r₁ − 1/r_AS) + μ(1/r₂ − 1/r_AJ) − δ/r_AP
/// with p_A the rotating-frame momenta of the unperturbed asteroid.
pub fn perturbation_f(s: &RotatingState, nu: &FrozenPhase, p: &FourBodyParams) -> Result<f64> {
    Ok(perturbation_f_dnu(s, nu, p)?.0)
}

/// The perturbation and its analytic ∂/∂ν₁ at a fixed asteroid state, by the
/// chain rule through the stored planet orbit.
pub fn perturbation_f_dnu(
    s: &RotatingState,
    nu: &FrozenPhase,
    p: &FourBodyParams,
) -> Result<(f64, f64)> {
    let mu = p.params.mu;
    let g = p.geometry(nu.nu1);
    let q_a = [s.x, s.y];
    let [px, py] = to_momenta(s);
    let ang_mom = s.x * py - s.y * px;

    let r1 = s.r1(mu);
    let r2 = s.r2(mu);
    let d_as = sub(q_a, g.q_s);
    let d_aj = sub(q_a, g.q_j);
    let d_ap = sub(q_a, g.q_p);
    let r_as = norm2(d_as);
    let r_aj = norm2(d_aj);
    let r_ap = norm2(d_ap);
    let rmin = r1.min(r2).min(r_as).min(r_aj).min(r_ap);
    if rmin < COLLISION_RADIUS {
        return Err(Error::Singularity { r1: r1.min(r_as).min(r_ap), r2: r2.min(r_aj) });
    }

    let dc = p.coupling_delta();
    let f = -g.theta_dot * ang_mom
        + (1.0 - mu) * (1.0 / r1 - 1.0 / r_as)
        + mu * (1.0 / r2 - 1.0 / r_aj)
        - dc / r_ap;

    let qp_dot = p.planet_dpos(nu.nu1);
    let td_deriv = p.theta_dot_deriv(nu.nu1)?;
    let df = -td_deriv * ang_mom
        + (1.0 - mu) * p.delta * dot(d_as, qp_dot) / (r_as * r_as * r_as)
        + mu * p.delta * dot(d_aj, qp_dot) / (r_aj * r_aj * r_aj)
        - dc * dot(d_ap, qp_dot) / (r_ap * r_ap * r_ap);
    Ok((f, df))
}

/// Frozen-system Hamiltonian in Cartesian form, with the canonical momenta
/// p̃ = v + (1+θ̇)(−y, x) of the modulated frame:
/// H = ½p̃² − (1+θ̇) q×p̃ − (1−μ)/r_AS − μ/r_AJ − δ/r_AP.
pub fn hamiltonian_a_rot(
    s: &RotatingState,
    nu: &FrozenPhase,
    p: &FourBodyParams,
) -> Result<f64> {
    let mu = p.params.mu;
    let g = p.geometry(nu.nu1);
    let w = 1.0 + g.theta_dot;
    let ptx = s.vx - w * s.y;
    let pty = s.vy + w * s.x;
    let d_as = sub([s.x, s.y], g.q_s);
    let d_aj = sub([s.x, s.y], g.q_j);
    let d_ap = sub([s.x, s.y], g.q_p);
    let (r_as, r_aj, r_ap) = (norm2(d_as), norm2(d_aj), norm2(d_ap));
    if r_as.min(r_aj).min(r_ap) < COLLISION_RADIUS {
        return Err(Error::Singularity { r1: r_as.min(r_ap), r2: r_aj });
    }
    Ok(0.5 * (ptx * ptx + pty * pty) - w * (s.x * pty - s.y * ptx)
        - (1.0 - mu) / r_as
        - mu / r_aj
        - p.coupling_delta() / r_ap)
}

/// The same energy assembled through Delaunay elements of the origin-centered
/// Kepler part: −1/(2L²) − G + ΔH + f, with
/// ΔH = 1/r − (1−μ)/r₁ − μ/r₂ and the residual f written on the same
/// canonical momenta.
pub fn hamiltonian_a_rot_delaunay(
    s: &RotatingState,
    nu: &FrozenPhase,
    p: &FourBodyParams,
) -> Result<f64> {
    let mu = p.params.mu;
    let g = p.geometry(nu.nu1);
    let w = 1.0 + g.theta_dot;
    let pt = [s.vx - w * s.y, s.vy + w * s.x];
    let el = cartesian_to_delaunay([s.x, s.y], pt, 1.0, 1.0)?;
    let r = norm2([s.x, s.y]);
    let r1 = s.r1(mu);
    let r2 = s.r2(mu);
    let d_as = sub([s.x, s.y], g.q_s);
    let d_aj = sub([s.x, s.y], g.q_j);
    let d_ap = sub([s.x, s.y], g.q_p);
    let (r_as, r_aj, r_ap) = (norm2(d_as), norm2(d_aj), norm2(d_ap));
    if r.min(r1).min(r2).min(r_as).min(r_aj).min(r_ap) < COLLISION_RADIUS {
        return Err(Error::Singularity { r1: r1.min(r_as), r2: r2.min(r_aj) });
    }
    let delta_h = 1.0 / r - (1.0 - mu) / r1 - mu / r2;
    let ang_mom = s.x * pt[1] - s.y * pt[0];
    let f = -g.theta_dot * ang_mom
        + (1.0 - mu) * (1.0 / r1 - 1.0 / r_as)
        + mu * (1.0 / r2 - 1.0 / r_aj)
        - p.coupling_delta() / r_ap;
    Ok(-1.0 / (2.0 * el.l_action * el.l_action) - el.g_action + delta_h + f)
}

/// Velocity-form field of the frozen system at fixed ν (θ̈ = 0):
/// v̇ = 2(1+θ̇) v^⊥ + (1+θ̇)² q − ∇V.
fn frozen_field(z: &SVector<f64, 4>, g: &Geometry, mu: f64, dc: f64) -> Result<SVector<f64, 4>> {
    let q = [z[0], z[1]];
    let w = 1.0 + g.theta_dot;
    let d_as = sub(q, g.q_s);
    let d_aj = sub(q, g.q_j);
    let d_ap = sub(q, g.q_p);
    let (r_as, r_aj, r_ap) = (norm2(d_as), norm2(d_aj), norm2(d_ap));
    if r_as.min(r_aj).min(r_ap) < COLLISION_RADIUS {
        return Err(Error::Singularity { r1: r_as.min(r_ap), r2: r_aj });
    }
    let c_s = (1.0 - mu) / (r_as * r_as * r_as);
    let c_j = mu / (r_aj * r_aj * r_aj);
    let c_p = dc / (r_ap * r_ap * r_ap);
    let gx = c_s * d_as[0] + c_j * d_aj[0] + c_p * d_ap[0];
    let gy = c_s * d_as[1] + c_j * d_aj[1] + c_p * d_ap[1];
    Ok(SVector::<f64, 4>::new(
        z[2],
        z[3],
        2.0 * w * z[3] + w * w * z[0] - gx,
        -2.0 * w * z[2] + w * w * z[1] - gy,
    ))
}

/// Integrate the frozen system at fixed ν. H_{A,rot}(•, ν) is a first
/// integral of this flow.
pub fn integrate_frozen(
    s0: &RotatingState,
    t0: f64,
    tf: f64,
    nu: &FrozenPhase,
    p: &FourBodyParams,
    cfg: &IntegratorConfig,
) -> Result<Solution<4>> {
    let g = p.geometry(nu.nu1);
    let mu = p.params.mu;
    let dc = p.coupling_delta();
    let err = std::cell::RefCell::new(None);
    let f = |_t: f64, z: &SVector<f64, 4>| match frozen_field(z, &g, mu, dc) {
        Ok(v) => v,
        Err(e) => {
            *err.borrow_mut() = Some(e);
            SVector::<f64, 4>::zeros()
        }
    };
    let sol = integrate(&f, t0, tf, state_to_vec(s0), cfg, &[])?;
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    Ok(sol)
}

/// Uniform-time samples of a Lyapunov orbit over one period (closed curve,
/// endpoint excluded).
#[derive(Debug, Clone)]
pub struct SampledOrbit {
    pub period: f64,
    pub energy: f64,
    pub states: Vec<RotatingState>,
}

pub fn sample_orbit(orbit: &LyapunovOrbit, p: &Rpc3bpParams, n: usize) -> Result<SampledOrbit> {
    let cfg = IntegratorConfig::with_tols(1e-12, 1e-12);
    let sol = integrate_trajectory(&orbit.initial_state, 0.0, orbit.period, p, &cfg, &[])?;
    let states = (0..n)
        .map(|j| vec_to_state(&sol.sample(orbit.period * j as f64 / n as f64)))
        .collect();
    Ok(SampledOrbit { period: orbit.period, energy: orbit.energy, states })
}

impl SampledOrbit {
    /// Mean velocity over one period; zero for a periodic orbit.
    pub fn mean_velocity(&self) -> [f64; 2] {
        let n = self.states.len() as f64;
        let (mut vx, mut vy) = (0.0, 0.0);
        for s in &self.states {
            vx += s.vx;
            vy += s.vy;
        }
        [vx / n, vy / n]
    }

    /// Mean angular momentum (q_A − a) × p_A about a point a on the x-axis.
    pub fn angular_momentum_about(&self, x0: f64) -> f64 {
        let n = self.states.len() as f64;
        let mut w = 0.0;
        for s in &self.states {
            let [px, py] = to_momenta(s);
            w += (s.x - x0) * py - s.y * px;
        }
        w / n
    }

    /// Mean of d/|d|³ over the orbit, d = q_A − (x0, 0).
    fn mean_cubed_field(&self, x0: f64) -> [f64; 2] {
        let n = self.states.len() as f64;
        let (mut bx, mut by) = (0.0, 0.0);
        for s in &self.states {
            let d = [s.x - x0, s.y];
            let r = norm2(d);
            let r3 = r * r * r;
            bx += d[0] / r3;
            by += d[1] / r3;
        }
        [bx / n, by / n]
    }

    /// Nearest stored sample to a phase-space point, with the squared
    /// 4-distance.
    fn nearest(&self, z: &SVector<f64, 4>) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for (i, s) in self.states.iter().enumerate() {
            let d = (s.x - z[0]).powi(2)
                + (s.y - z[1]).powi(2)
                + (s.vx - z[2]).powi(2)
                + (s.vy - z[3]).powi(2);
            if d < best.1 {
                best = (i, d);
            }
        }
        (best.0, best.1.sqrt())
    }
}

/// Period average of the perturbation along one Lyapunov orbit at frozen ν,
/// with the ν-derivative taken under the integral.
#[derive(Debug, Clone, Copy)]
pub struct FrozenAverage {
    pub f_bar: f64,
    pub df_dnu: f64,
}

pub fn frozen_average_sampled(
    so: &SampledOrbit,
    nu: &FrozenPhase,
    p: &FourBodyParams,
) -> Result<FrozenAverage> {
    let n = so.states.len() as f64;
    let (mut fb, mut db) = (0.0, 0.0);
    for s in &so.states {
        let (f, df) = perturbation_f_dnu(s, nu, p)?;
        fb += f;
        db += df;
    }
    Ok(FrozenAverage { f_bar: fb / n, df_dnu: db / n })
}

/// Convenience wrapper sampling the orbit at 256 nodes (periodic trapezoid;
/// spectrally accurate on the smooth closed orbit).
pub fn frozen_average(
    orbit: &LyapunovOrbit,
    nu: &FrozenPhase,
    p: &FourBodyParams,
) -> Result<FrozenAverage> {
    let so = sample_orbit(orbit, &p.params, 256)?;
    frozen_average_sampled(&so, nu, p)
}

/// ν-grid diagnostic of f̄₁ − f̄₂ with the leading-order decomposition
/// δ⟨u, q_P(ν)⟩, u built from the averaged inverse-square fields about the
/// two primaries.
#[derive(Debug, Clone)]
pub struct NondegeneracyReport {
    pub nu_grid: Vec<f64>,
    /// f̄₁ − f̄₂ on the grid.
    pub diff: Vec<f64>,
    /// max − min of `diff`.
    pub variation: f64,
    /// Estimated quadrature/interpolation floor for `variation`.
    pub floor: f64,
    pub degenerate: bool,
    /// Mean angular momenta about L₁ and L₂ of the respective orbits.
    pub omega: [f64; 2],
    /// Mean full angular momenta q_A × p_A of the two orbits.
    pub mean_ang_mom: [f64; 2],
    /// Averaged sun-direction fields d₁/r₁³ of the two orbits.
    pub bracket_sun: [[f64; 2]; 2],
    /// Averaged secondary-direction fields d₂/r₂³ of the two orbits.
    pub bracket_jup: [[f64; 2]; 2],
    /// u = (1−μ)(B₁ˢ − B₂ˢ) + μ(B₁ᴶ − B₂ᴶ).
    pub u: [f64; 2],
    /// δ⟨u, q_P(ν)⟩ on the grid.
    pub leading: Vec<f64>,
    /// max|fluct(diff) − fluct(leading)| / max|fluct(leading)|, fluctuating
    /// parts (means removed: an additive constant cannot break
    /// non-constancy).
    pub leading_residual: f64,
}

pub fn nondegeneracy_from_orbits(
    so1: &SampledOrbit,
    so2: &SampledOrbit,
    p: &FourBodyParams,
    n_nu: usize,
) -> Result<NondegeneracyReport> {
    let mu = p.params.mu;
    let (lp1, lp2) = find_collinear_points(&p.params);
    let nu_grid: Vec<f64> = (0..n_nu).map(|i| TAU * i as f64 / n_nu as f64).collect();
    let mut diff = Vec::with_capacity(n_nu);
    let mut leading = Vec::with_capacity(n_nu);

    let b_sun = [so1.mean_cubed_field(-mu), so2.mean_cubed_field(-mu)];
    let b_jup = [so1.mean_cubed_field(1.0 - mu), so2.mean_cubed_field(1.0 - mu)];
    let u = [
        (1.0 - mu) * (b_sun[0][0] - b_sun[1][0]) + mu * (b_jup[0][0] - b_jup[1][0]),
        (1.0 - mu) * (b_sun[0][1] - b_sun[1][1]) + mu * (b_jup[0][1] - b_jup[1][1]),
    ];

    for &nu1 in &nu_grid {
        let ph = FrozenPhase::new(nu1, 0.0);
        let a1 = frozen_average_sampled(so1, &ph, p)?;
        let a2 = frozen_average_sampled(so2, &ph, p)?;
        diff.push(a1.f_bar - a2.f_bar);
        let sp = p.planet.state_at_phase(nu1);
        leading.push(p.delta * (u[0] * sp.x + u[1] * sp.y));
    }

    let maxd = diff.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mind = diff.iter().cloned().fold(f64::INFINITY, f64::min);
    let variation = maxd - mind;

    // Quadrature floor: self-convergence of f̄₁ − f̄₂ under node halving.
    let ph0 = FrozenPhase::new(0.0, 0.0);
    let half1 = SampledOrbit {
        period: so1.period,
        energy: so1.energy,
        states: so1.states.iter().step_by(2).cloned().collect(),
    };
    let half2 = SampledOrbit {
        period: so2.period,
        energy: so2.energy,
        states: so2.states.iter().step_by(2).cloned().collect(),
    };
    let full = frozen_average_sampled(so1, &ph0, p)?.f_bar
        - frozen_average_sampled(so2, &ph0, p)?.f_bar;
    let coarse = frozen_average_sampled(&half1, &ph0, p)?.f_bar
        - frozen_average_sampled(&half2, &ph0, p)?.f_bar;
    let floor = 4.0 * (full - coarse).abs() + 1e-15;

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let dm = mean(&diff);
    let lm = mean(&leading);
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for i in 0..n_nu {
        num = num.max(((diff[i] - dm) - (leading[i] - lm)).abs());
        den = den.max((leading[i] - lm).abs());
    }
    let leading_residual = if den > 0.0 { num / den } else { f64::INFINITY };

    Ok(NondegeneracyReport {
        nu_grid,
        diff,
        variation,
        floor,
        degenerate: variation <= 10.0 * floor,
        omega: [so1.angular_momentum_about(lp1.x), so2.angular_momentum_about(lp2.x)],
        mean_ang_mom: [so1.angular_momentum_about(0.0), so2.angular_momentum_about(0.0)],
        bracket_sun: b_sun,
        bracket_jup: b_jup,
        u,
        leading,
        leading_residual,
    })
}

fn lp_for<'a>(
    cyl: &Cylinder,
    l1: &'a LagrangePoint,
    l2: &'a LagrangePoint,
) -> &'a LagrangePoint {
    match cyl.point {
        PointId::L1 => l1,
        PointId::L2 => l2,
    }
}

/// Nondegeneracy at energy h on two continued cylinders.
pub fn nondegeneracy_diagnostic(
    cyl1: &Cylinder,
    cyl2: &Cylinder,
    h: f64,
    p: &FourBodyParams,
    n_nu: usize,
) -> Result<NondegeneracyReport> {
    let (l1, l2) = find_collinear_points(&p.params);
    let o1 = orbit_at_energy(cyl1, h, lp_for(cyl1, &l1, &l2))?;
    let o2 = orbit_at_energy(cyl2, h, lp_for(cyl2, &l1, &l2))?;
    let so1 = sample_orbit(&o1, &p.params, 256)?;
    let so2 = sample_orbit(&o2, &p.params, 256)?;
    nondegeneracy_from_orbits(&so1, &so2, p, n_nu)
}

/// Bilinear table of v(h, ν) = ∂f̄/∂ν on one cylinder.
#[derive(Debug, Clone)]
pub struct GtlTable {
    pub h_grid: Vec<f64>,
    pub nu_grid: Vec<f64>,
    /// Row-major, v[i * nu_grid.len() + j] at (h_grid[i], nu_grid[j]).
    pub v: Vec<f64>,
}

impl GtlTable {
    /// Bilinear interpolation; h clamped to the table range, ν periodic.
    pub fn eval(&self, h: f64, nu: f64) -> f64 {
        let nh = self.h_grid.len();
        let nn = self.nu_grid.len();
        let hc = h.clamp(self.h_grid[0], self.h_grid[nh - 1]);
        let i = self.h_grid.partition_point(|&g| g < hc).clamp(1, nh - 1);
        let (h0, h1) = (self.h_grid[i - 1], self.h_grid[i]);
        let wh = if h1 > h0 { (hc - h0) / (h1 - h0) } else { 0.0 };
        let x = nu.rem_euclid(TAU) / TAU * nn as f64;
        let j = x.floor() as usize % nn;
        let wn = x - x.floor();
        let j1 = (j + 1) % nn;
        let row = |i: usize, j: usize| self.v[i * nn + j];
        let lo = row(i - 1, j) * (1.0 - wn) + row(i - 1, j1) * wn;
        let hi = row(i, j) * (1.0 - wn) + row(i, j1) * wn;
        lo * (1.0 - wh) + hi * wh
    }
}

/// Precompute v(h, ν) on the family orbits of a cylinder with energies in
/// [h_lo, h_hi].
pub fn build_v_table(
    cyl: &Cylinder,
    p: &FourBodyParams,
    h_lo: f64,
    h_hi: f64,
    n_nu: usize,
    n_nodes: usize,
) -> Result<GtlTable> {
    let nu_grid: Vec<f64> = (0..n_nu).map(|j| TAU * j as f64 / n_nu as f64).collect();
    let mut h_grid = Vec::new();
    let mut v = Vec::new();
    for orbit in &cyl.family {
        if orbit.energy < h_lo || orbit.energy > h_hi {
            continue;
        }
        let so = sample_orbit(orbit, &p.params, n_nodes)?;
        h_grid.push(orbit.energy);
        for &nu1 in &nu_grid {
            v.push(frozen_average_sampled(&so, &FrozenPhase::new(nu1, 0.0), p)?.df_dnu);
        }
    }
    if h_grid.len() < 2 {
        return Err(Error::Domain(format!(
            "fewer than two family orbits in the energy window [{h_lo}, {h_hi}]"
        )));
    }
    Ok(GtlTable { h_grid, nu_grid, v })
}

/// Solution of the averaged energy ODE dh/dν = max{v₁, v₂} − σβ₀.
#[derive(Debug, Clone)]
pub struct GtlSolution {
    pub nus: Vec<f64>,
    pub hs: Vec<f64>,
    /// Index (1 or 2) of the active selector branch at each node.
    pub active: Vec<u8>,
    /// ν values where the selector switched branches.
    pub switches: Vec<f64>,
    pub stalled: bool,
    pub reached_top: bool,
}

/// Integrate the averaged ODE by RK4 in ν from h0 until h ≥ h_plus, stall,
/// or the ν budget runs out.
pub fn gtl_energy_ode(
    v1: &GtlTable,
    v2: &GtlTable,
    h0: f64,
    h_plus: f64,
    sigma: f64,
    beta0: f64,
    nu_max: f64,
    dnu: f64,
) -> GtlSolution {
    let rhs = |h: f64, nu: f64| (v1.eval(h, nu).max(v2.eval(h, nu))) - sigma * beta0;
    let branch = |h: f64, nu: f64| if v1.eval(h, nu) >= v2.eval(h, nu) { 1u8 } else { 2u8 };
    let mut nus = vec![0.0];
    let mut hs = vec![h0];
    let mut active = vec![branch(h0, 0.0)];
    let mut switches = Vec::new();
    let (mut nu, mut h) = (0.0, h0);
    let mut best = h0;
    let mut last_progress = 0.0;
    let mut stalled = false;
    let mut reached_top = false;
    while nu < nu_max - 1e-12 {
        let step = dnu.min(nu_max - nu);
        let k1 = rhs(h, nu);
        let k2 = rhs(h + 0.5 * step * k1, nu + 0.5 * step);
        let k3 = rhs(h + 0.5 * step * k2, nu + 0.5 * step);
        let k4 = rhs(h + step * k3, nu + step);
        h += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        nu += step;
        let b = branch(h, nu);
        if b != *active.last().unwrap() {
            switches.push(nu);
        }
        nus.push(nu);
        hs.push(h);
        active.push(b);
        if h > best + 1e-15 {
            best = h;
            last_progress = nu;
        }
        if h >= h_plus {
            reached_top = true;
            break;
        }
        if nu - last_progress > 2.0 * TAU {
            stalled = true;
            break;
        }
    }
    GtlSolution { nus, hs, active, switches, stalled, reached_top }
}

/// Jump and guidance knobs for the direct simulation.
#[derive(Debug, Clone, Copy)]
pub struct JumpPolicy {
    /// Relative excess of the rival branch's v required before a jump.
    pub hysteresis: f64,
    /// Phase-space distance beyond which shadowing is declared lost.
    pub tube_radius: f64,
    /// Guide-orbit sample count.
    pub n_nodes: usize,
    /// Re-solve the guide orbit when |h − h_guide| exceeds this.
    pub refresh_tol: f64,
    /// Projection (and trace sample) count per guide period. The Lyapunov
    /// orbits are strongly unstable (λT ≈ 8), so projecting only once per
    /// period lets the trajectory leave the tube.
    pub substeps: usize,
}

impl Default for JumpPolicy {
    fn default() -> Self {
        Self {
            hysteresis: 0.10,
            tube_radius: 0.05,
            n_nodes: 128,
            refresh_tol: 1e-5,
            substeps: 8,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TraceSample {
    pub t: f64,
    pub h: f64,
    pub segment: u32,
    pub nu1: f64,
    pub nu2: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct JumpEvent {
    pub t: f64,
    pub from: PointId,
    pub to: PointId,
}

/// Energy history of a diffusion run.
#[derive(Debug, Clone)]
pub struct EnergyTrace {
    pub samples: Vec<TraceSample>,
    pub jumps: Vec<JumpEvent>,
    pub projections: usize,
    /// Shadowing-loss diagnostic if the run was cut short.
    pub truncated: Option<String>,
}

impl EnergyTrace {
    pub fn delta_h(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.h - a.h,
            _ => 0.0,
        }
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Least-squares slope of h against t.
    pub fn linear_slope(&self) -> f64 {
        let n = self.samples.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let tm = self.samples.iter().map(|s| s.t).sum::<f64>() / n;
        let hm = self.samples.iter().map(|s| s.h).sum::<f64>() / n;
        let (mut num, mut den) = (0.0, 0.0);
        for s in &self.samples {
            num += (s.t - tm) * (s.h - hm);
            den += (s.t - tm) * (s.t - tm);
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

/// Precomputed heteroclinic transfer states at a grid of frozen energies.
#[derive(Debug, Clone)]
pub struct ConnectionLibrary {
    /// (h, state) for jumps from the first cylinder to the second.
    pub to_second: Vec<(f64, RotatingState)>,
    /// (h, state) for jumps from the second cylinder to the first.
    pub to_first: Vec<(f64, RotatingState)>,
}

/// Section state from a connection point (y, ẏ) at Jacobi constant j.
fn connection_state(
    point: (f64, f64),
    j: f64,
    section: Section,
    p: &Rpc3bpParams,
) -> Result<RotatingState> {
    let pot = effective_potential(section.x, point.0, p)?;
    let v2 = 2.0 * pot.omega - j;
    let vx2 = v2 - point.1 * point.1;
    if vx2 < 0.0 {
        return Err(Error::Domain(format!(
            "connection point outside the energy shell (vx² = {vx2})"
        )));
    }
    Ok(RotatingState::new(section.x, point.0, section.vx_sign * vx2.sqrt(), point.1))
}

fn best_connection(
    ou: &LyapunovOrbit,
    os: &LyapunovOrbit,
    p: &Rpc3bpParams,
    section: Section,
) -> Result<Option<RotatingState>> {
    let mut best: Option<(f64, RotatingState)> = None;
    for su in [Side::Plus, Side::Minus] {
        for ss in [Side::Plus, Side::Minus] {
            let bu = globalize(ou, p, ManifoldKind::Unstable, su, 1e-6, section, 25.0, 40)?;
            let bs = globalize(os, p, ManifoldKind::Stable, ss, 1e-6, section, 25.0, 40)?;
            if section_cut(&bu).points.len() < 3 || section_cut(&bs).points.len() < 3 {
                continue;
            }
            for c in find_heteroclinics(&bu, &bs, 1e-3)? {
                let st = connection_state(c.point, ou.jacobi(), section, p)?;
                if best.as_ref().map_or(true, |(a, _)| c.crossing_angle > *a) {
                    best = Some((c.crossing_angle, st));
                }
            }
        }
        if best.is_some() {
            break;
        }
    }
    Ok(best.map(|(_, s)| s))
}

/// Build transfer states in both directions at the given frozen energies.
/// Energies where no transversal connection is found are skipped.
pub fn build_connection_library(
    cyl1: &Cylinder,
    cyl2: &Cylinder,
    p: &Rpc3bpParams,
    energies: &[f64],
) -> Result<ConnectionLibrary> {
    let (l1, l2) = find_collinear_points(p);
    let section = Section { x: 1.0 - p.mu, vx_sign: 1.0 };
    let mut lib = ConnectionLibrary { to_second: Vec::new(), to_first: Vec::new() };
    for &h in energies {
        let o1 = orbit_at_energy(cyl1, h, lp_for(cyl1, &l1, &l2))?;
        let o2 = orbit_at_energy(cyl2, h, lp_for(cyl2, &l1, &l2))?;
        if let Some(s) = best_connection(&o1, &o2, p, section)? {
            lib.to_second.push((h, s));
        }
        if let Some(s) = best_connection(&o2, &o1, p, section)? {
            lib.to_first.push((h, s));
        }
    }
    Ok(lib)
}

/// Rescale the velocity of a state so that its Jacobi constant becomes j,
/// keeping the position and velocity direction.
fn match_energy(s: &RotatingState, j: f64, p: &Rpc3bpParams) -> Result<RotatingState> {
    let pot = effective_potential(s.x, s.y, p)?;
    let v2 = 2.0 * pot.omega - j;
    let cur = s.vx * s.vx + s.vy * s.vy;
    if v2 <= 0.0 || cur <= 0.0 {
        return Err(Error::Domain("state cannot reach the requested energy shell".into()));
    }
    let scale = (v2 / cur).sqrt();
    Ok(RotatingState::new(s.x, s.y, s.vx * scale, s.vy * scale))
}

/// Rescale the speed of a state so its modulated-frame Hamiltonian becomes
/// a, keeping position and velocity direction. The kinetic term is the only
/// speed-dependent one, so the shift is applied to ½v² directly.
fn match_frozen_energy(
    s: &RotatingState,
    a: f64,
    nu: &FrozenPhase,
    p: &FourBodyParams,
) -> Result<RotatingState> {
    let h0 = hamiltonian_a_rot(s, nu, p)?;
    let cur = s.vx * s.vx + s.vy * s.vy;
    let v2 = cur + 2.0 * (a - h0);
    if v2 <= 0.0 || cur <= 0.0 {
        return Err(Error::Domain("state cannot reach the requested energy shell".into()));
    }
    let scale = (v2 / cur).sqrt();
    Ok(RotatingState::new(s.x, s.y, s.vx * scale, s.vy * scale))
}

/// Full nonautonomous field in (x, y, vx, vy, θ) with ν₁(t) from the planet
/// phase and θ̈ from the torque on the planet.
fn nonautonomous_field(
    t: f64,
    z: &SVector<f64, 5>,
    p: &FourBodyParams,
) -> Result<SVector<f64, 5>> {
    let nu1 = TAU * t / p.planet.period;
    let g = p.geometry(nu1);
    let zz = SVector::<f64, 4>::new(z[0], z[1], z[2], z[3]);
    let base = frozen_field(&zz, &g, p.params.mu, p.coupling_delta())?;
    // θ̈ = dθ̇/dν₁ · dν₁/dt.
    let tdd = p.theta_dot_deriv(nu1)? * TAU / p.planet.period;
    Ok(SVector::<f64, 5>::new(
        base[0],
        base[1],
        base[2] + tdd * z[1],
        base[3] - tdd * z[0],
        g.theta_dot,
    ))
}

/// Guided follow-and-jump simulation of the full nonautonomous system.
/// The asteroid is re-projected onto the followed cylinder several times
/// per guide period (energy-preserving velocity rescale), and transferred
/// through a precomputed heteroclinic state when the rival branch's
/// averaged drift wins by the hysteresis margin for two guide periods.
/// Without a library, jumps relocate to the target orbit at the matched
/// energy.
pub fn simulate_diffusion(
    p: &FourBodyParams,
    cyl1: &Cylinder,
    cyl2: &Cylinder,
    lib: Option<&ConnectionLibrary>,
    h0: f64,
    policy: &JumpPolicy,
    budget: f64,
) -> Result<EnergyTrace> {
    let pp = p.params;
    let (l1, l2) = find_collinear_points(&pp);
    let cyls = [cyl1, cyl2];
    let h_lo = cyl1.h_min().max(cyl2.h_min());
    let h_hi = cyl1.h_max().min(cyl2.h_max());
    if !(h_lo <= h0 && h0 <= h_hi) {
        return Err(Error::Domain(format!(
            "h0 = {h0} outside the common family range [{h_lo}, {h_hi}]"
        )));
    }
    let n_nu = (8 * p.winding()).max(64);
    let tables = [
        build_v_table(cyl1, p, h_lo - 1e-12, h_hi + 1e-12, n_nu, 96)?,
        build_v_table(cyl2, p, h_lo - 1e-12, h_hi + 1e-12, n_nu, 96)?,
    ];

    let cfg = IntegratorConfig::with_tols(1e-12, 1e-12);
    let mut following = 0usize;
    let mut guide = {
        let o = orbit_at_energy(cyls[0], h0, lp_for(cyls[0], &l1, &l2))?;
        sample_orbit(&o, &pp, policy.n_nodes)?
    };
    let mut state = guide.states[0];
    let mut theta = 0.0;
    let mut t = 0.0;
    let mut segment = 0u32;
    let mut excess_since: Option<f64> = None;
    let mut trace = EnergyTrace {
        samples: Vec::new(),
        jumps: Vec::new(),
        projections: 0,
        truncated: None,
    };
    let nu_of = |t: f64| TAU * t / p.planet.period;
    // Trace energy is the unperturbed rotating-frame energy −J/2, the same
    // scale that labels the family orbits; the modulated-frame Hamiltonian
    // differs from it by a bounded oscillation.
    let push = |trace: &mut EnergyTrace, t: f64, st: &RotatingState, theta: f64, seg: u32| {
        let nu1 = nu_of(t).rem_euclid(TAU);
        let nu2 = (theta / p.epsilon()).rem_euclid(TAU);
        let h = jacobi_constant(st, &pp).map(|j| -j / 2.0).unwrap_or(f64::NAN);
        trace.samples.push(TraceSample { t, h, segment: seg, nu1, nu2 });
    };
    push(&mut trace, 0.0, &state, theta, segment);
    // Running mean of −J/2 over the last guide period; the raw value
    // oscillates with the orbit phase, the mean tracks the slow drift.
    let mut recent = std::collections::VecDeque::from(vec![h0]);

    while t < budget {
        // A fraction of a guide period of the full nonautonomous flow.
        let chunk = (guide.period / policy.substeps as f64).min(budget - t).max(1e-6);
        let err = std::cell::RefCell::new(None);
        let field = |tt: f64, z: &SVector<f64, 5>| match nonautonomous_field(tt, z, p) {
            Ok(v) => v,
            Err(e) => {
                *err.borrow_mut() = Some(e);
                SVector::<f64, 5>::zeros()
            }
        };
        let z0 = SVector::<f64, 5>::new(state.x, state.y, state.vx, state.vy, theta);
        let sol = integrate(&field, t, t + chunk, z0, &cfg, &[])?;
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        let ze = *sol.y_end();
        t += chunk;
        theta = ze[4];
        state = RotatingState::new(ze[0], ze[1], ze[2], ze[3]);
        push(&mut trace, t, &state, theta, segment);

        // Guidance: smooth the energy over one guide period, check the
        // tube, re-project with the instantaneous Jacobi constant kept.
        let j = jacobi_constant(&state, &pp)?;
        recent.push_back(-j / 2.0);
        while recent.len() > policy.substeps {
            recent.pop_front();
        }
        let h = recent.iter().sum::<f64>() / recent.len() as f64;
        if h >= h_hi {
            break; // top of the common family range reached
        }
        let hc = h.clamp(h_lo, h_hi);
        if (hc - guide.energy).abs() > policy.refresh_tol {
            let o = orbit_at_energy(cyls[following], hc, lp_for(cyls[following], &l1, &l2))?;
            guide = sample_orbit(&o, &pp, policy.n_nodes)?;
        }
        let z4 = state_to_vec(&state);
        let (idx, dist) = guide.nearest(&z4);
        if dist > policy.tube_radius {
            trace.truncated = Some(format!(
                "shadowing lost at t = {t}: distance {dist} to the guide orbit exceeds \
                 the tube radius {}",
                policy.tube_radius
            ));
            break;
        }
        // Project at the instantaneous Jacobi constant so the projection
        // never adds or removes energy; the smoothed h only picks the
        // guide orbit and the table row.
        state = match_energy(&guide.states[idx], j, &pp)?;
        trace.projections += 1;

        // Jump decision with hysteresis.
        let nu1 = nu_of(t);
        let v_f = tables[following].eval(hc, nu1);
        let v_o = tables[1 - following].eval(hc, nu1);
        if v_o > v_f + policy.hysteresis * v_f.abs().max(1e-18) {
            if excess_since.is_none() {
                excess_since = Some(t);
            }
        } else {
            excess_since = None;
        }
        // The rival must keep winning for a dwell time that is a small
        // fraction of the period T_P/(m − k) of the fast ν oscillation in
        // v: any longer and the switch lags the oscillation so badly that
        // the max-branch gain is lost.
        let dwell = p.planet.period / (16.0 * p.winding() as f64);
        if excess_since.map_or(false, |t0| t - t0 >= dwell) {
            let target = 1 - following;
            let conns = lib.map(|l| if target == 1 { &l.to_second } else { &l.to_first });
            // The transfer conserves the modulated-frame Hamiltonian, as a
            // real heteroclinic excursion would; the Jacobi constant then
            // picks up the f̄ gap between the branches, which is exactly the
            // energy the max-branch switching pockets. A connection library
            // supplies the arrival phase (the heteroclinic section point
            // itself is mid-transit, outside any shadowing tube); the
            // landing point is always on the target orbit.
            let phase = FrozenPhase::new(nu1, theta / p.epsilon());
            let a = hamiltonian_a_rot(&state, &phase, p)?;
            let o = orbit_at_energy(cyls[target], hc, lp_for(cyls[target], &l1, &l2))?;
            let so = sample_orbit(&o, &pp, policy.n_nodes)?;
            let refpt = match conns {
                Some(list) if !list.is_empty() => {
                    let (_, s) = list
                        .iter()
                        .min_by(|a, b| {
                            (a.0 - hc).abs().partial_cmp(&(b.0 - hc).abs()).unwrap()
                        })
                        .unwrap();
                    *s
                }
                _ => state,
            };
            let (k, _) = so.nearest(&state_to_vec(&refpt));
            state = match_frozen_energy(&so.states[k], a, &phase, p)?;
            trace.jumps.push(JumpEvent {
                t,
                from: cyls[following].point,
                to: cyls[target].point,
            });
            following = target;
            segment += 1;
            excess_since = None;
            guide = so;
        }
    }

    for w in trace.samples.windows(2) {
        debug_assert!(w[1].t > w[0].t);
    }
    if trace.samples.iter().any(|s| !s.h.is_finite()) {
        return Err(Error::Numerical("non-finite energy in the trace".into()));
    }
    Ok(trace)
}
