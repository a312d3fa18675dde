//! Collinear Lagrangian points L1, L2 and their saddle-center linearizations.

use nalgebra::{Complex, Matrix4, Vector4};

use crate::dynamics::{effective_potential, field_jacobian, Rpc3bpParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointId {
    L1,
    L2,
}

/// A collinear equilibrium (y = 0) with its critical Jacobi value 2Ω.
#[derive(Debug, Clone, Copy)]
pub struct LagrangePoint {
    pub which: PointId,
    pub x: f64,
    pub critical_jacobi: f64,
    pub params: Rpc3bpParams,
}

impl LagrangePoint {
    /// Distance to the small primary at (1−μ, 0).
    pub fn gap_to_secondary(&self) -> f64 {
        (self.x - (1.0 - self.params.mu)).abs()
    }
}

/// Saddle x center spectrum {+λ, −λ, +iκ, −iκ} with eigenvectors.
///
/// `u_unstable`, `u_stable` span the hyperbolic directions; the center plane
/// is spanned by the real and imaginary parts of `w_center`. All vectors have
/// unit norm and positive first nonzero component (real part for the center).
#[derive(Debug, Clone)]
pub struct Linearization {
    pub lambda: f64,
    pub kappa: f64,
    pub u_unstable: Vector4<f64>,
    pub u_stable: Vector4<f64>,
    pub w_center_re: Vector4<f64>,
    pub w_center_im: Vector4<f64>,
    /// System matrix of the linearized flow at the point.
    pub a: Matrix4<f64>,
}

fn collinear_residual(x: f64, p: &Rpc3bpParams) -> f64 {
    effective_potential(x, 0.0, p).unwrap().grad[0]
}

fn newton_collinear(seed: f64, bracket: (f64, f64), p: &Rpc3bpParams) -> f64 {
    let mut x = seed;
    for _ in 0..100 {
        let pot = effective_potential(x, 0.0, p).unwrap();
        let (f, df) = (pot.grad[0], pot.hess[0][0]);
        if f.abs() < 1e-14 {
            return x;
        }
        let step = f / df;
        let xn = x - step;
        if xn <= bracket.0 || xn >= bracket.1 {
            break;
        }
        x = xn;
        if step.abs() < 1e-16 {
            return x;
        }
    }
    // guaranteed bracket fallback
    let (mut lo, mut hi) = bracket;
    // orient so that residual(lo) < 0 < residual(hi)
    if collinear_residual(lo, p) > 0.0 {
        std::mem::swap(&mut lo, &mut hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if collinear_residual(mid, p) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Locate L1 (between the primaries) and L2 (beyond the small primary).
/// Newton is seeded with the μ^{1/3} Hill asymptote and falls back to
/// bisection on a sign-change bracket.
pub fn find_collinear_points(p: &Rpc3bpParams) -> (LagrangePoint, LagrangePoint) {
    let mu = p.mu;
    let d = (mu / 3.0).powf(1.0 / 3.0);
    let x1 = newton_collinear(1.0 - mu - d, (-mu + 1e-9, 1.0 - mu - 1e-12), p);
    let x2 = newton_collinear(1.0 - mu + d, (1.0 - mu + 1e-12, 3.0), p);
    let make = |which, x: f64| LagrangePoint {
        which,
        x,
        critical_jacobi: 2.0 * effective_potential(x, 0.0, p).unwrap().omega,
        params: *p,
    };
    (make(PointId::L1, x1), make(PointId::L2, x2))
}

fn normalize_sign(mut v: Vector4<f64>) -> Vector4<f64> {
    v /= v.norm();
    for i in 0..4 {
        if v[i] != 0.0 {
            if v[i] < 0.0 {
                v = -v;
            }
            break;
        }
    }
    v
}

/// Analytic linearization at a collinear point. On the axis Ω_xy = 0 and the
/// characteristic polynomial factors through s = ν²:
/// s² + (4 − Ωxx − Ωyy)s + Ωxx Ωyy = 0, with Ωxx > 0 > Ωyy giving one real
/// and one imaginary pair.
pub fn linearize(lp: &LagrangePoint) -> Result<Linearization> {
    let pot = effective_potential(lp.x, 0.0, &lp.params)?;
    let (oxx, oyy) = (pot.hess[0][0], pot.hess[1][1]);
    let b = 4.0 - oxx - oyy;
    let c = oxx * oyy;
    let disc = b * b - 4.0 * c;
    if disc <= 0.0 || c >= 0.0 {
        return Err(Error::Numerical(format!(
            "linearize: spectrum not saddle-center (Ωxx={oxx}, Ωyy={oyy})"
        )));
    }
    let sq = disc.sqrt();
    let s_plus = (-b + sq) / 2.0;
    let s_minus = (-b - sq) / 2.0;
    let lambda = s_plus.sqrt();
    let kappa = (-s_minus).sqrt();

    // eigenvector for eigenvalue nu: (1, 2nu/(Ωyy−nu²), nu, 2nu²/(Ωyy−nu²))
    let real_vec = |nu: f64| {
        let sig = 2.0 * nu / (oyy - nu * nu);
        normalize_sign(Vector4::new(1.0, sig, nu, sig * nu))
    };
    let u_unstable = real_vec(lambda);
    let u_stable = real_vec(-lambda);

    let nu = Complex::new(0.0, kappa);
    let sig = 2.0 * nu / (Complex::new(oyy, 0.0) - nu * nu);
    let w = [Complex::new(1.0, 0.0), sig, nu, sig * nu];
    let norm: f64 = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let w_center_re = Vector4::new(w[0].re, w[1].re, w[2].re, w[3].re) / norm;
    let w_center_im = Vector4::new(w[0].im, w[1].im, w[2].im, w[3].im) / norm;

    let a = field_jacobian(lp.x, 0.0, &lp.params)?;
    Ok(Linearization { lambda, kappa, u_unstable, u_stable, w_center_re, w_center_im, a })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{integrate, IntegratorConfig};

    fn params(mu: f64) -> Rpc3bpParams {
        Rpc3bpParams::new(mu).unwrap()
    }

    #[test]
    fn residuals_vanish() {
        for &mu in &[1e-8, 1e-6, 1e-4, 0.0009537, 0.01, 0.3, 0.5] {
            let p = params(mu);
            let (l1, l2) = find_collinear_points(&p);
            assert!(collinear_residual(l1.x, &p).abs() < 1e-13, "mu={mu} L1");
            assert!(collinear_residual(l2.x, &p).abs() < 1e-13, "mu={mu} L2");
            assert!(l1.x < 1.0 - mu && l1.x > -mu);
            assert!(l2.x > 1.0 - mu);
        }
    }

    #[test]
    fn degenerate_small_mu_limit() {
        let p = params(1e-12);
        let (l1, l2) = find_collinear_points(&p);
        assert!((l1.x - 1.0).abs() < 1e-3);
        assert!((l2.x - 1.0).abs() < 1e-3);
    }

    #[test]
    fn hill_distance_asymptote() {
        let p = params(1e-6);
        let (l1, l2) = find_collinear_points(&p);
        let third = 3f64.powf(-1.0 / 3.0);
        for lp in [l1, l2] {
            let ratio = lp.gap_to_secondary() / p.mu.powf(1.0 / 3.0);
            assert!((ratio - third).abs() < 0.01, "ratio={ratio}");
        }
    }

    #[test]
    fn asymptote_error_decreases() {
        let third = 3f64.powf(-1.0 / 3.0);
        let mut prev = f64::INFINITY;
        for &mu in &[1e-4, 1e-6, 1e-8, 1e-10] {
            let (l1, _) = find_collinear_points(&params(mu));
            let err = (l1.gap_to_secondary() / mu.powf(1.0 / 3.0) - third).abs();
            assert!(err < prev, "mu={mu}: {err} !< {prev}");
            prev = err;
        }
    }

    #[test]
    fn newton_matches_bisection_oracle() {
        let p = params(0.0009537);
        let (l1, l2) = find_collinear_points(&p);
        let bisect = |mut lo: f64, mut hi: f64| {
            if collinear_residual(lo, &p) > 0.0 {
                std::mem::swap(&mut lo, &mut hi);
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if collinear_residual(mid, &p) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let x1 = bisect(p.mu - 1.0 + 1.5, 1.0 - p.mu - 1e-6);
        let x2 = bisect(1.0 - p.mu + 1e-6, 2.0);
        assert!((l1.x - x1).abs() < 1e-12);
        assert!((l2.x - x2).abs() < 1e-12);
    }

    #[test]
    fn critical_jacobi_ordering_and_limit() {
        for &mu in &[1e-4, 1e-6, 1e-8] {
            let (l1, l2) = find_collinear_points(&params(mu));
            assert!(l1.critical_jacobi > l2.critical_jacobi, "mu={mu}");
            assert!((l1.critical_jacobi - 3.0).abs() < 10.0 * mu.powf(2.0 / 3.0));
        }
    }

    #[test]
    fn spectrum_structure_over_mu_grid() {
        for k in 0..50 {
            let mu = 0.5 * (k as f64 + 1.0) / 50.0;
            let p = params(mu);
            let (l1, l2) = find_collinear_points(&p);
            for lp in [l1, l2] {
                let lin = linearize(&lp).unwrap();
                assert!(lin.lambda > 0.0 && lin.kappa > 0.0, "mu={mu}");
                // eigenvalue equation check for the real pair
                let r = lin.a * lin.u_unstable - lin.u_unstable * lin.lambda;
                assert!(r.norm() < 1e-10, "mu={mu}, resid={}", r.norm());
                let r = lin.a * lin.u_stable + lin.u_stable * lin.lambda;
                assert!(r.norm() < 1e-10);
                // center pair: A(re + i im) = i kappa (re + i im)
                let rr = lin.a * lin.w_center_re + lin.w_center_im * lin.kappa;
                let ri = lin.a * lin.w_center_im - lin.w_center_re * lin.kappa;
                assert!(rr.norm() < 1e-10 && ri.norm() < 1e-10);
            }
        }
    }

    #[test]
    fn matches_finite_difference_eigen_oracle() {
        let p = params(0.0009537);
        let (l1, _) = find_collinear_points(&p);
        let lin = linearize(&l1).unwrap();
        // finite-difference Jacobian of the nonlinear field at the point
        let eps = 1e-6;
        let field = |s: &crate::coords::RotatingState| {
            crate::dynamics::vector_field(s, &p).unwrap()
        };
        let base = crate::coords::RotatingState::new(l1.x, 0.0, 0.0, 0.0);
        let mut a_fd = Matrix4::zeros();
        for j in 0..4 {
            let mut sp = base;
            let mut sm = base;
            match j {
                0 => {
                    sp.x += eps;
                    sm.x -= eps;
                }
                1 => {
                    sp.y += eps;
                    sm.y -= eps;
                }
                2 => {
                    sp.vx += eps;
                    sm.vx -= eps;
                }
                _ => {
                    sp.vy += eps;
                    sm.vy -= eps;
                }
            }
            let (fp, fm) = (field(&sp), field(&sm));
            for i in 0..4 {
                a_fd[(i, j)] = (fp[i] - fm[i]) / (2.0 * eps);
            }
        }
        let eigs = a_fd.complex_eigenvalues();
        let mut best_l = f64::INFINITY;
        let mut best_k = f64::INFINITY;
        for e in eigs.iter() {
            if e.re > 1e-6 {
                best_l = best_l.min((e.re - lin.lambda).abs());
            }
            if e.im > 1e-6 {
                best_k = best_k.min((e.im - lin.kappa).abs());
            }
        }
        assert!(best_l < 1e-5, "lambda gap {best_l}");
        assert!(best_k < 1e-5, "kappa gap {best_k}");
    }

    #[test]
    fn hamiltonian_spectrum_pairs() {
        let (l1, _) = find_collinear_points(&params(0.0009537));
        let lin = linearize(&l1).unwrap();
        let eigs = lin.a.complex_eigenvalues();
        let sum: Complex<f64> = eigs.iter().sum();
        assert!(sum.norm() < 1e-12);
    }

    #[test]
    fn hill_limit_of_exponents() {
        // Hill equilibrium at X = 3^{-1/3}: Hxx = 9, Hyy = -3 give
        // nu^4 + (4-9+3) nu^2 ... s^2 - 2 s - 27 = 0, s = 1 +- 2 sqrt 7
        let lam_h = (1.0 + 2.0 * 7f64.sqrt()).sqrt();
        let kap_h = (2.0 * 7f64.sqrt() - 1.0).sqrt();
        let (l1, _) = find_collinear_points(&params(1e-8));
        let lin = linearize(&l1).unwrap();
        assert!((lin.lambda - lam_h).abs() / lam_h < 0.05, "lambda={}", lin.lambda);
        assert!((lin.kappa - kap_h).abs() / kap_h < 0.05, "kappa={}", lin.kappa);
    }

    #[test]
    fn linear_flow_reconstruction() {
        // flow of the linear system from a1 u1 + a2 u2 + 2 Re(b w1) matches
        // a1 u1 e^{lt} + a2 u2 e^{-lt} + 2 Re(b e^{ikt} w1)
        let (l1, _) = find_collinear_points(&params(0.0009537));
        let lin = linearize(&l1).unwrap();
        let (a1, a2) = (0.3, -0.2);
        let b = Complex::new(0.15, -0.4);
        let z0 = lin.u_unstable * a1
            + lin.u_stable * a2
            + (lin.w_center_re * b.re - lin.w_center_im * b.im) * 2.0;
        let a = lin.a;
        let f = move |_t: f64, z: &Vector4<f64>| a * z;
        let tf = 2.0 * std::f64::consts::PI / lin.kappa;
        let cfg = IntegratorConfig::with_tols(1e-13, 1e-13);
        let sol = integrate(&f, 0.0, tf, z0, &cfg, &[]).unwrap();
        for k in 0..20 {
            let t = tf * k as f64 / 19.0;
            let rot = b * Complex::new(0.0, lin.kappa * t).exp();
            let expect = lin.u_unstable * (a1 * (lin.lambda * t).exp())
                + lin.u_stable * (a2 * (-lin.lambda * t).exp())
                + (lin.w_center_re * rot.re - lin.w_center_im * rot.im) * 2.0;
            let got = sol.sample(t);
            assert!((got - expect).norm() < 1e-10, "t={t}: {}", (got - expect).norm());
        }
    }
}
