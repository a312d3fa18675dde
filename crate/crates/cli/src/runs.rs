//! Command implementations: each computes with the core library, writes
//! fingerprinted artifacts, and prints a short key = value summary.

use crate::config::RunConfig;
use crate::store::{fingerprint, fmt_f64, ArtifactStore};
use rp4bp::coords::RotatingState;
use rp4bp::dynamics::Rpc3bpParams;
use rp4bp::equilibria::{find_collinear_points, linearize, LagrangePoint, PointId};
use rp4bp::fourbody::{
    build_connection_library, build_v_table, gtl_energy_ode, nondegeneracy_diagnostic,
    simulate_diffusion, EnergyTrace, FourBodyParams, GtlSolution, JumpPolicy,
};
use rp4bp::lyapunov::{continue_family, correct_orbit, orbit_at_energy, Cylinder};
use rp4bp::manifolds::{
    find_heteroclinics, globalize, hill_criterion, section_cut, HeteroclinicConnection,
    ManifoldKind, Section, SectionCurve, Side,
};
use rp4bp::planet::{correct_planet_orbit, PlanetOrbit, ResonanceSpec};
use rp4bp::{Error, Result};

pub struct Ctx {
    pub cfg: RunConfig,
    pub store: ArtifactStore,
    pub threads: usize,
    pub tol_rel: f64,
    pub tol_abs: f64,
}

impl Ctx {
    fn mu(&self) -> Result<f64> {
        self.cfg.require_f64("global", "mu")
    }

    fn params(&self) -> Result<Rpc3bpParams> {
        Rpc3bpParams::new(self.mu()?)
    }
}

fn parse_point(s: &str) -> Result<PointId> {
    match s {
        "L1" | "l1" => Ok(PointId::L1),
        "L2" | "l2" => Ok(PointId::L2),
        _ => Err(Error::Domain(format!("point must be L1 or L2, got {s:?}"))),
    }
}

fn lp_of<'a>(point: PointId, l1: &'a LagrangePoint, l2: &'a LagrangePoint) -> &'a LagrangePoint {
    match point {
        PointId::L1 => l1,
        PointId::L2 => l2,
    }
}

// ---------------------------------------------------------------- lagrange

pub fn cmd_lagrange(ctx: &Ctx) -> Result<()> {
    let p = ctx.params()?;
    let (l1, l2) = find_collinear_points(&p);
    let mut body = String::from("point,x,critical_jacobi,lambda,kappa\n");
    for lp in [&l1, &l2] {
        let lin = linearize(lp)?;
        body.push_str(&format!(
            "{:?},{},{},{},{}\n",
            lp.which,
            fmt_f64(lp.x),
            fmt_f64(lp.critical_jacobi),
            fmt_f64(lin.lambda),
            fmt_f64(lin.kappa)
        ));
        println!(
            "{:?}: x = {} lambda = {} kappa = {}",
            lp.which,
            fmt_f64(lp.x),
            fmt_f64(lin.lambda),
            fmt_f64(lin.kappa)
        );
    }
    let fp = fingerprint(&format!("lagrange|mu={}", fmt_f64(p.mu)));
    ctx.store.write("reports/lagrange.csv", &fp, &body)?;
    Ok(())
}

// ---------------------------------------------------------------- families

struct FamilySpec {
    mu: f64,
    point: PointId,
    h_max: f64,
    max_orbits: usize,
}

fn family_fp(ctx: &Ctx, s: &FamilySpec) -> String {
    fingerprint(&format!(
        "family|mu={}|point={:?}|h_max={}|max_orbits={}|tol_rel={}|tol_abs={}",
        fmt_f64(s.mu),
        s.point,
        fmt_f64(s.h_max),
        s.max_orbits,
        fmt_f64(ctx.tol_rel),
        fmt_f64(ctx.tol_abs)
    ))
}

fn family_rel(point: PointId) -> String {
    format!("families/family_{point:?}.csv")
}

fn compute_family(s: &FamilySpec) -> Result<Cylinder> {
    let p = Rpc3bpParams::new(s.mu)?;
    let (l1, l2) = find_collinear_points(&p);
    let lp = lp_of(s.point, &l1, &l2);
    let lin = linearize(lp)?;
    continue_family(lp, &lin, s.h_max, s.max_orbits)
}

fn family_body(ctx: &Ctx, s: &FamilySpec, cyl: &Cylinder) -> String {
    let mut body = format!(
        "# mu = {} point = {:?} tol_rel = {} tol_abs = {}\nh,x0,vy0,T,Lambda\n",
        fmt_f64(s.mu),
        s.point,
        fmt_f64(ctx.tol_rel),
        fmt_f64(ctx.tol_abs)
    );
    for o in &cyl.family {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(o.energy),
            fmt_f64(o.initial_state.x),
            fmt_f64(o.initial_state.vy),
            fmt_f64(o.period),
            fmt_f64(o.floquet_lambda)
        ));
    }
    body
}

/// Rebuild a cylinder from persisted (h, x0, vy0, T) rows by re-running the
/// differential correction from each stored seed.
fn family_from_body(s: &FamilySpec, body: &str) -> Result<Cylinder> {
    let p = Rpc3bpParams::new(s.mu)?;
    let (l1, l2) = find_collinear_points(&p);
    let lp = lp_of(s.point, &l1, &l2);
    let mut family = Vec::new();
    for line in body.lines().skip(2) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::Domain(format!("bad family row {line:?}")));
        }
        let x0: f64 = cols[1].parse().map_err(|_| Error::Domain("bad family row".into()))?;
        let vy0: f64 = cols[2].parse().map_err(|_| Error::Domain("bad family row".into()))?;
        let t: f64 = cols[3].parse().map_err(|_| Error::Domain("bad family row".into()))?;
        let seed = RotatingState::new(x0, 0.0, 0.0, vy0);
        family.push(correct_orbit(&seed, t, lp)?);
    }
    if family.is_empty() {
        return Err(Error::Domain("persisted family is empty".into()));
    }
    Ok(Cylinder { point: s.point, params: p, family })
}

fn load_or_build_family(ctx: &Ctx, s: &FamilySpec) -> Result<Cylinder> {
    let rel = family_rel(s.point);
    let fp = family_fp(ctx, s);
    if ctx.store.exists(&rel) {
        let body = ctx.store.load(&rel, &fp)?;
        return family_from_body(s, &body);
    }
    let cyl = compute_family(s)?;
    ctx.store.write(&rel, &fp, &family_body(ctx, s, &cyl))?;
    emit_cylinder_plot(ctx, &rel, &fp, &cyl)?;
    Ok(cyl)
}

fn family_spec(ctx: &Ctx, point: PointId) -> Result<FamilySpec> {
    let mu = ctx.mu()?;
    let p = Rpc3bpParams::new(mu)?;
    let (l1, l2) = find_collinear_points(&p);
    let lp = lp_of(point, &l1, &l2);
    let h_crit = -lp.critical_jacobi / 2.0;
    // Continue far enough for every consumer: an explicit family target,
    // the section-level commands' Jacobi constants, and the fourbody window.
    let h_window = ctx.cfg.f64("fourbody", "h_window", 1e-5)?;
    let mut h_max = h_crit + h_window;
    for (sec, key) in [("family", "j_target"), ("heteroclinic", "j"), ("manifold", "j")] {
        if ctx.cfg.get(sec, key).is_some() {
            h_max = h_max.max(-ctx.cfg.require_f64(sec, key)? / 2.0 + 1e-5);
        }
    }
    let max_orbits = ctx.cfg.u64("family", "max_orbits", 400)? as usize;
    Ok(FamilySpec { mu, point, h_max, max_orbits })
}

/// Build the L1 and L2 families, concurrently when allowed.
fn both_families(ctx: &Ctx) -> Result<(Cylinder, Cylinder)> {
    let s1 = family_spec(ctx, PointId::L1)?;
    let s2 = family_spec(ctx, PointId::L2)?;
    if ctx.threads >= 2 && !ctx.store.exists(&family_rel(PointId::L1)) {
        let (r1, r2) = std::thread::scope(|sc| {
            let h1 = sc.spawn(|| compute_family(&s1));
            let h2 = sc.spawn(|| compute_family(&s2));
            (h1.join(), h2.join())
        });
        let unwind = |e: std::boxed::Box<dyn std::any::Any + Send>| {
            Error::Numerical(format!("family worker panicked: {e:?}"))
        };
        let c1 = r1.map_err(unwind)??;
        let c2 = r2.map_err(unwind)??;
        ctx.store.write(&family_rel(PointId::L1), &family_fp(ctx, &s1), &family_body(ctx, &s1, &c1))?;
        ctx.store.write(&family_rel(PointId::L2), &family_fp(ctx, &s2), &family_body(ctx, &s2, &c2))?;
        emit_cylinder_plot(ctx, &family_rel(PointId::L1), &family_fp(ctx, &s1), &c1)?;
        emit_cylinder_plot(ctx, &family_rel(PointId::L2), &family_fp(ctx, &s2), &c2)?;
        Ok((c1, c2))
    } else {
        Ok((load_or_build_family(ctx, &s1)?, load_or_build_family(ctx, &s2)?))
    }
}

pub fn cmd_family(ctx: &Ctx) -> Result<()> {
    let point = parse_point(&ctx.cfg.str("family", "point", "L1"))?;
    let s = family_spec(ctx, point)?;
    let cyl = load_or_build_family(ctx, &s)?;
    println!(
        "family {point:?}: {} orbits, h in [{}, {}]",
        cyl.family.len(),
        fmt_f64(cyl.h_min()),
        fmt_f64(cyl.h_max())
    );
    Ok(())
}

// ---------------------------------------------------------------- manifolds

fn section_of(p: &Rpc3bpParams) -> Section {
    Section { x: 1.0 - p.mu, vx_sign: 1.0 }
}

fn curve_body(curve: &SectionCurve) -> String {
    let mut body = format!("# jacobi = {}\nphase,y,vy\n", fmt_f64(curve.jacobi));
    for (ph, y, vy) in &curve.points {
        body.push_str(&format!("{},{},{}\n", fmt_f64(*ph), fmt_f64(*y), fmt_f64(*vy)));
    }
    body
}

pub fn cmd_manifold(ctx: &Ctx) -> Result<()> {
    let p = ctx.params()?;
    let (l1, l2) = find_collinear_points(&p);
    let point = parse_point(&ctx.cfg.str("manifold", "point", "L1"))?;
    let kind = match ctx.cfg.str("manifold", "kind", "unstable").as_str() {
        "stable" => ManifoldKind::Stable,
        "unstable" => ManifoldKind::Unstable,
        k => return Err(Error::Domain(format!("kind must be stable or unstable, got {k:?}"))),
    };
    let side = match ctx.cfg.str("manifold", "side", "plus").as_str() {
        "plus" => Side::Plus,
        "minus" => Side::Minus,
        s => return Err(Error::Domain(format!("side must be plus or minus, got {s:?}"))),
    };
    let j = ctx.cfg.require_f64("manifold", "j")?;
    let d0 = ctx.cfg.f64("manifold", "d0", 1e-6)?;
    let t_max = ctx.cfg.f64("manifold", "t_max", 25.0)?;
    let n_phases = ctx.cfg.u64("manifold", "n_phases", 40)? as usize;

    let s = family_spec(ctx, point)?;
    let cyl = load_or_build_family(ctx, &s)?;
    let orbit = orbit_at_energy(&cyl, -j / 2.0, lp_of(point, &l1, &l2))?;
    let branch = globalize(&orbit, &p, kind, side, d0, section_of(&p), t_max, n_phases)?;
    let curve = section_cut(&branch);
    let rel = format!("manifolds/curve_{point:?}_{kind:?}_{side:?}.csv");
    let fp = fingerprint(&format!(
        "manifold|mu={}|point={point:?}|kind={kind:?}|side={side:?}|j={}|d0={}|t_max={}|n={n_phases}",
        fmt_f64(p.mu),
        fmt_f64(j),
        fmt_f64(d0),
        fmt_f64(t_max)
    ));
    ctx.store.write(&rel, &fp, &curve_body(&curve))?;
    emit_curve_plot(ctx, &rel, &fp, &curve)?;
    println!("section hits = {}", curve.points.len());
    Ok(())
}

// ------------------------------------------------------------ heteroclinics

/// Connections from `ou`'s unstable manifold to `os`'s stable manifold,
/// scanning the side combinations until one yields intersections.
fn connections_between(
    ou: &rp4bp::lyapunov::LyapunovOrbit,
    os: &rp4bp::lyapunov::LyapunovOrbit,
    p: &Rpc3bpParams,
    d0: f64,
    t_max: f64,
    n_phases: usize,
    floor: f64,
) -> Result<Vec<HeteroclinicConnection>> {
    for su in [Side::Plus, Side::Minus] {
        for ss in [Side::Plus, Side::Minus] {
            let bu = globalize(ou, p, ManifoldKind::Unstable, su, d0, section_of(p), t_max, n_phases)?;
            let bs = globalize(os, p, ManifoldKind::Stable, ss, d0, section_of(p), t_max, n_phases)?;
            if section_cut(&bu).points.len() < 3 || section_cut(&bs).points.len() < 3 {
                continue;
            }
            let conns = find_heteroclinics(&bu, &bs, floor)?;
            if !conns.is_empty() {
                return Ok(conns);
            }
        }
    }
    Ok(Vec::new())
}

pub fn cmd_heteroclinic(ctx: &Ctx) -> Result<Vec<HeteroclinicConnection>> {
    let p = ctx.params()?;
    let (l1, l2) = find_collinear_points(&p);
    let j = ctx.cfg.f64("heteroclinic", "j", 3.03)?;
    let d0 = ctx.cfg.f64("heteroclinic", "d0", 1e-6)?;
    let t_max = ctx.cfg.f64("heteroclinic", "t_max", 25.0)?;
    let n_phases = ctx.cfg.u64("heteroclinic", "n_phases", 40)? as usize;
    let floor = ctx.cfg.f64("heteroclinic", "angle_floor", 1e-3)?;
    let (c1, c2) = both_families(ctx)?;
    let h = -j / 2.0;
    let o1 = orbit_at_energy(&c1, h, &l1)?;
    let o2 = orbit_at_energy(&c2, h, &l2)?;
    let mut all = connections_between(&o1, &o2, &p, d0, t_max, n_phases, floor)?;
    all.extend(connections_between(&o2, &o1, &p, d0, t_max, n_phases, floor)?);

    let mut body =
        String::from("from,to,y,vy,phase_unstable,phase_stable,angle,residual,transversal\n");
    for c in &all {
        body.push_str(&format!(
            "{:?},{:?},{},{},{},{},{},{},{}\n",
            c.from,
            c.to,
            fmt_f64(c.point.0),
            fmt_f64(c.point.1),
            fmt_f64(c.phase_unstable),
            fmt_f64(c.phase_stable),
            fmt_f64(c.crossing_angle),
            fmt_f64(c.residual),
            c.transversal
        ));
        println!(
            "connection {:?} -> {:?}: angle = {} residual = {}",
            c.from,
            c.to,
            fmt_f64(c.crossing_angle),
            fmt_f64(c.residual)
        );
    }
    let fp = fingerprint(&format!(
        "heteroclinic|mu={}|j={}|d0={}|t_max={}|n={n_phases}|floor={}",
        fmt_f64(p.mu),
        fmt_f64(j),
        fmt_f64(d0),
        fmt_f64(t_max),
        fmt_f64(floor)
    ));
    ctx.store.write("reports/heteroclinics.csv", &fp, &body)?;
    Ok(all)
}

// ----------------------------------------------------------------- hill

pub fn cmd_hill_check(ctx: &Ctx) -> Result<()> {
    let p = ctx.params()?;
    let j = ctx.cfg.f64("hill", "j", 3.03)?;
    let jh = (j - 3.0 * (1.0 - p.mu)) / p.mu.powf(2.0 / 3.0);
    let (open, margin) = hill_criterion(jh)?;
    let body = format!(
        "jh,open,margin\n{},{},{}\n",
        fmt_f64(jh),
        open,
        fmt_f64(margin)
    );
    let fp = fingerprint(&format!("hill|mu={}|j={}", fmt_f64(p.mu), fmt_f64(j)));
    ctx.store.write("reports/hill.csv", &fp, &body)?;
    println!("jh = {} open = {open} margin = {}", fmt_f64(jh), fmt_f64(margin));
    Ok(())
}

// ----------------------------------------------------------------- planet

fn planet_of(ctx: &Ctx) -> Result<(ResonanceSpec, PlanetOrbit)> {
    let m = ctx.cfg.u64("planet", "m", 63)?;
    let k = ctx.cfg.u64("planet", "k", 1)?;
    let e = ctx.cfg.f64("planet", "e_target", 0.3)?;
    let spec = ResonanceSpec::new(m, k, e)?;
    let orbit = correct_planet_orbit(&spec, ctx.mu()?)?;
    Ok((spec, orbit))
}

pub fn cmd_planet(ctx: &Ctx) -> Result<()> {
    let (spec, orbit) = planet_of(ctx)?;
    let n = 512;
    let mut body = format!(
        "# m = {} k = {} e_target = {} period = {} gap = {}\nt,x,y,vx,vy\n",
        spec.m,
        spec.k,
        fmt_f64(spec.e_target),
        fmt_f64(orbit.period),
        fmt_f64(orbit.period_gap())
    );
    for i in 0..n {
        let t = orbit.period * i as f64 / n as f64;
        let s = orbit.state_at(t);
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(t),
            fmt_f64(s.x),
            fmt_f64(s.y),
            fmt_f64(s.vx),
            fmt_f64(s.vy)
        ));
    }
    let fp = fingerprint(&format!(
        "planet|mu={}|m={}|k={}|e={}",
        fmt_f64(ctx.mu()?),
        spec.m,
        spec.k,
        fmt_f64(spec.e_target)
    ));
    let rel = format!("planet/planet_m{}_k{}.csv", spec.m, spec.k);
    ctx.store.write(&rel, &fp, &body)?;
    println!(
        "planet period = {} gap = {}",
        fmt_f64(orbit.period),
        fmt_f64(orbit.period_gap())
    );
    Ok(())
}

// --------------------------------------------------------------- fourbody

fn fourbody_of(ctx: &Ctx) -> Result<FourBodyParams> {
    let (spec, orbit) = planet_of(ctx)?;
    let eps = spec.epsilon();
    let delta = ctx.cfg.f64("fourbody", "delta", eps.powi(3))?;
    let c = ctx.cfg.f64("fourbody", "c", 0.0)?;
    let mut p = FourBodyParams::new(orbit, delta, c)?;
    p.delta_squared_coupling = ctx.cfg.bool("fourbody", "delta_squared", false)?;
    Ok(p)
}

fn fourbody_fp(ctx: &Ctx, tag: &str) -> Result<String> {
    Ok(fingerprint(&format!(
        "{tag}|mu={}|m={}|k={}|e={}|delta={}|c={}",
        fmt_f64(ctx.mu()?),
        ctx.cfg.u64("planet", "m", 63)?,
        ctx.cfg.u64("planet", "k", 1)?,
        fmt_f64(ctx.cfg.f64("planet", "e_target", 0.3)?),
        fmt_f64(ctx.cfg.f64("fourbody", "delta", -1.0)?),
        fmt_f64(ctx.cfg.f64("fourbody", "c", 0.0)?)
    )))
}

fn critical_h(p: &Rpc3bpParams) -> (f64, f64) {
    let (l1, l2) = find_collinear_points(p);
    let hc = (-l1.critical_jacobi / 2.0).max(-l2.critical_jacobi / 2.0);
    let top = hc; // larger of the two critical energies
    (hc, top)
}

pub fn cmd_nondegeneracy(ctx: &Ctx) -> Result<f64> {
    let fb = fourbody_of(ctx)?;
    let (hc, _) = critical_h(&fb.params);
    let h = hc + ctx.cfg.f64("fourbody", "h_offset", 5e-6)?;
    let n_nu = ctx.cfg.u64("fourbody", "n_nu", 24)? as usize;
    let (c1, c2) = both_families(ctx)?;
    let rep = nondegeneracy_diagnostic(&c1, &c2, h, &fb, n_nu)?;

    let mut body = String::from("nu,diff,leading\n");
    for i in 0..rep.nu_grid.len() {
        body.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(rep.nu_grid[i]),
            fmt_f64(rep.diff[i]),
            fmt_f64(rep.leading[i])
        ));
    }
    let fp = fourbody_fp(ctx, "nondegeneracy")?;
    ctx.store.write("reports/nondegeneracy.csv", &fp, &body)?;
    let summary = format!(
        "variation = {}\nfloor = {}\ndegenerate = {}\nu_x = {}\nu_y = {}\n\
         omega1 = {}\nomega2 = {}\nleading_residual = {}\n",
        fmt_f64(rep.variation),
        fmt_f64(rep.floor),
        rep.degenerate,
        fmt_f64(rep.u[0]),
        fmt_f64(rep.u[1]),
        fmt_f64(rep.omega[0]),
        fmt_f64(rep.omega[1]),
        fmt_f64(rep.leading_residual)
    );
    ctx.store.write("reports/nondegeneracy_summary.txt", &fp, &summary)?;
    print!("{summary}");
    if rep.degenerate {
        println!("warning: variation is at the numerical floor; no growth expected at this h");
    }
    Ok(rep.variation)
}

pub fn cmd_gtl(ctx: &Ctx) -> Result<GtlSolution> {
    let fb = fourbody_of(ctx)?;
    let (hc, _) = critical_h(&fb.params);
    let sigma = ctx.cfg.f64("gtl", "sigma", 0.0)?;
    let beta0 = ctx.cfg.f64("gtl", "beta0", 1.0)?;
    let nu_max = ctx.cfg.f64("gtl", "nu_max", 2000.0 * std::f64::consts::TAU)?;
    // The frozen average oscillates in ν at the planet's winding number,
    // so both the table grid and the step must resolve that wavenumber.
    let w = fb.winding() as f64;
    let dnu = ctx.cfg.f64("gtl", "dnu", std::f64::consts::TAU / (16.0 * w))?;
    let n_nu = ctx.cfg.u64("gtl", "n_nu", (8 * fb.winding()).max(96) as u64)? as usize;
    let (c1, c2) = both_families(ctx)?;
    // Default window: the common energy range of the two families.
    let h_lo = c1.h_min().max(c2.h_min());
    let h_hi = c1.h_max().min(c2.h_max());
    let h0 = match ctx.cfg.get("gtl", "h0_offset") {
        Some(_) => hc + ctx.cfg.require_f64("gtl", "h0_offset")?,
        None => h_lo + 0.02 * (h_hi - h_lo),
    };
    let h_plus = match ctx.cfg.get("gtl", "h_plus_offset") {
        Some(_) => hc + ctx.cfg.require_f64("gtl", "h_plus_offset")?,
        None => h_hi - 0.01 * (h_hi - h_lo),
    };
    let t1 = build_v_table(&c1, &fb, h_lo, h_hi, n_nu, 96)?;
    let t2 = build_v_table(&c2, &fb, h_lo, h_hi, n_nu, 96)?;
    let sol = gtl_energy_ode(&t1, &t2, h0, h_plus, sigma, beta0, nu_max, dnu);

    let mut body = String::from("nu,h_sigma,active\n");
    for i in 0..sol.nus.len() {
        body.push_str(&format!(
            "{},{},{}\n",
            fmt_f64(sol.nus[i]),
            fmt_f64(sol.hs[i]),
            sol.active[i]
        ));
    }
    let fp = fourbody_fp(ctx, "gtl")?;
    ctx.store.write("traces/gtl_ode.csv", &fp, &body)?;
    println!(
        "gtl: nu_end = {} h_end = {} switches = {} stalled = {} reached_top = {}",
        fmt_f64(*sol.nus.last().unwrap()),
        fmt_f64(*sol.hs.last().unwrap()),
        sol.switches.len(),
        sol.stalled,
        sol.reached_top
    );
    Ok(sol)
}

pub fn cmd_diffuse(ctx: &Ctx) -> Result<EnergyTrace> {
    let fb = fourbody_of(ctx)?;
    // Unless an explicit c is configured, run the simulation in the gauge
    // where θ̇ oscillates around zero; with the default c = 0 the frame
    // modulation has a constant part large enough to defeat the tube
    // shadowing, while ∂f̄/∂ν and all drift rates are gauge independent.
    let fb = if ctx.cfg.get("fourbody", "c").is_none() {
        fb.with_gauge(fb.mean_planet_ang_mom(512))
    } else {
        fb
    };
    let (hc, _) = critical_h(&fb.params);
    let budget = ctx.cfg.f64("diffuse", "budget", 500.0)?;
    let policy = JumpPolicy {
        hysteresis: ctx.cfg.f64("diffuse", "hysteresis", 0.10)?,
        tube_radius: ctx.cfg.f64("diffuse", "tube_radius", 0.05)?,
        refresh_tol: ctx.cfg.f64("diffuse", "refresh_tol", 1e-5)?,
        substeps: ctx.cfg.u64("diffuse", "substeps", 8)? as usize,
        ..JumpPolicy::default()
    };
    let (c1, c2) = both_families(ctx)?;
    let h_lo = c1.h_min().max(c2.h_min());
    let h_hi = c1.h_max().min(c2.h_max());
    let h0 = match ctx.cfg.get("diffuse", "h0_offset") {
        Some(_) => hc + ctx.cfg.require_f64("diffuse", "h0_offset")?,
        None => h_lo + 0.02 * (h_hi - h_lo),
    };
    // The transfer library is optional: without usable connections the jump
    // falls back to matched-energy relocation.
    let lib = if fb.delta > 0.0 {
        let h_mid = 0.5 * (c1.h_min().max(c2.h_min()) + c1.h_max().min(c2.h_max()));
        build_connection_library(&c1, &c2, &fb.params, &[h_mid]).ok()
    } else {
        None
    };
    let trace = simulate_diffusion(&fb, &c1, &c2, lib.as_ref(), h0, &policy, budget)?;

    let mut body = String::from("t,h,segment,nu1,nu2\n");
    for s in &trace.samples {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(s.t),
            fmt_f64(s.h),
            s.segment,
            fmt_f64(s.nu1),
            fmt_f64(s.nu2)
        ));
    }
    let fp = fourbody_fp(ctx, "diffuse")?;
    if trace.truncated.is_some() {
        ctx.store.write_partial("traces/diffusion.csv", &fp, &body)?;
    } else {
        ctx.store.write("traces/diffusion.csv", &fp, &body)?;
        emit_trace_plot(ctx, "traces/diffusion.csv", &fp, &trace)?;
    }
    println!(
        "diffuse: delta_h = {} slope = {} jumps = {} projections = {}",
        fmt_f64(trace.delta_h()),
        fmt_f64(trace.linear_slope()),
        trace.jumps.len(),
        trace.projections
    );
    if let Some(why) = &trace.truncated {
        println!("truncated: {why}");
    }
    Ok(trace)
}

// --------------------------------------------------------------- plot data

fn refresh_plot_index(ctx: &Ctx) -> Result<()> {
    let mut entries = Vec::new();
    for d in crate::store::SUBDIRS {
        let dir = ctx.store.path(d);
        if let Ok(rd) = std::fs::read_dir(&dir) {
            for e in rd.flatten() {
                let name = e.file_name().to_string_lossy().to_string();
                if name.ends_with(".plot") {
                    entries.push(format!("{d}/{name}"));
                }
            }
        }
    }
    entries.sort();
    let fp = fingerprint("plot-index");
    ctx.store.write("reports/plot_index.txt", &fp, &(entries.join("\n") + "\n"))?;
    Ok(())
}

fn emit_trace_plot(ctx: &Ctx, rel: &str, fp: &str, trace: &EnergyTrace) -> Result<()> {
    let mut body = String::from("t h\n");
    for s in &trace.samples {
        body.push_str(&format!("{} {}\n", fmt_f64(s.t), fmt_f64(s.h)));
    }
    ctx.store.write(&format!("{rel}.plot"), fp, &body)?;
    refresh_plot_index(ctx)
}

fn emit_curve_plot(ctx: &Ctx, rel: &str, fp: &str, curve: &SectionCurve) -> Result<()> {
    let mut body = format!("# jacobi = {}\ny vy\n", fmt_f64(curve.jacobi));
    for (_, y, vy) in &curve.points {
        body.push_str(&format!("{} {}\n", fmt_f64(*y), fmt_f64(*vy)));
    }
    ctx.store.write(&format!("{rel}.plot"), fp, &body)?;
    refresh_plot_index(ctx)
}

fn emit_cylinder_plot(ctx: &Ctx, rel: &str, fp: &str, cyl: &Cylinder) -> Result<()> {
    let mut body = String::from("h T Lambda\n");
    for o in &cyl.family {
        body.push_str(&format!(
            "{} {} {}\n",
            fmt_f64(o.energy),
            fmt_f64(o.period),
            fmt_f64(o.floquet_lambda)
        ));
    }
    ctx.store.write(&format!("{rel}.plot"), fp, &body)?;
    refresh_plot_index(ctx)
}

// ---------------------------------------------------------------- pipeline

pub fn cmd_pipeline(ctx: &Ctx) -> Result<()> {
    let mut summary = String::new();
    let result = (|| -> Result<()> {
        let p = ctx.params()?;
        let (l1, l2) = find_collinear_points(&p);
        cmd_lagrange(ctx)?;
        for lp in [&l1, &l2] {
            let lin = linearize(lp)?;
            summary.push_str(&format!(
                "lambda_{:?} = {}\nkappa_{:?} = {}\n",
                lp.which,
                fmt_f64(lin.lambda),
                lp.which,
                fmt_f64(lin.kappa)
            ));
        }
        let (c1, c2) = both_families(ctx)?;
        summary.push_str(&format!(
            "family_L1_orbits = {}\nfamily_L2_orbits = {}\n",
            c1.family.len(),
            c2.family.len()
        ));
        let conns = cmd_heteroclinic(ctx)?;
        for c in &conns {
            summary.push_str(&format!(
                "connection_{:?}_{:?}_angle = {}\n",
                c.from,
                c.to,
                fmt_f64(c.crossing_angle)
            ));
        }
        cmd_planet(ctx)?;
        let variation = cmd_nondegeneracy(ctx)?;
        summary.push_str(&format!("nondegeneracy_variation = {}\n", fmt_f64(variation)));
        let gtl = cmd_gtl(ctx)?;
        let nu_end = *gtl.nus.last().unwrap();
        let dh = gtl.hs.last().unwrap() - gtl.hs[0];
        if nu_end > 0.0 {
            summary.push_str(&format!("gtl_mean_dh_dnu = {}\n", fmt_f64(dh / nu_end)));
        }
        let trace = cmd_diffuse(ctx)?;
        summary.push_str(&format!(
            "diffusion_slope = {}\ndiffusion_delta_h = {}\n",
            fmt_f64(trace.linear_slope()),
            fmt_f64(trace.delta_h())
        ));
        Ok(())
    })();
    let fp = fingerprint(&ctx.cfg.canonical());
    match result {
        Ok(()) => {
            ctx.store.write("reports/summary.txt", &fp, &summary)?;
            print!("{summary}");
            Ok(())
        }
        Err(e) => {
            summary.push_str(&format!("error = {e}\n"));
            ctx.store.write_partial("reports/summary.txt", &fp, &summary)?;
            Err(e)
        }
    }
}
