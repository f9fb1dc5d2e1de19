//! Ellipsoidal Coulomb friction at the equivalent contact point.
//!
//! The friction impulse maximizes power dissipation subject to the ellipsoid
//! bound `(p_t/e_t)^2 + (p_o/e_o)^2 + (p_r/e_r)^2 <= (mu p_n)^2`. Its
//! Fritz-John conditions reduce to three equality rows coupling the impulses
//! to the slip velocity through the multiplier `sigma`, plus one
//! complementarity pair between `sigma` and the ellipsoid slack.

use crate::math::WrenchBasis;
use nalgebra::{Vector3, Vector6};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrictionError {
    #[error("friction parameter `{0}` must be positive")]
    NonPositive(&'static str),
    #[error("friction coefficient mu must be >= 0")]
    NegativeMu,
}

/// Friction ellipsoid parameters. `e_t`, `e_o` are dimensionless; `e_r`
/// carries meters (it trades a moment against forces).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrictionParams {
    pub mu: f64,
    pub e_t: f64,
    pub e_o: f64,
    pub e_r: f64,
}

impl FrictionParams {
    pub fn new(mu: f64, e_t: f64, e_o: f64, e_r: f64) -> Result<Self, FrictionError> {
        if mu < 0.0 {
            return Err(FrictionError::NegativeMu);
        }
        for (v, name) in [(e_t, "e_t"), (e_o, "e_o"), (e_r, "e_r")] {
            if !(v > 0.0) {
                return Err(FrictionError::NonPositive(name));
            }
        }
        Ok(Self { mu, e_t, e_o, e_r })
    }

    /// Paper-standard defaults: `e_t = e_o = 1`, `e_r = 0.1 m`.
    pub fn with_mu(mu: f64) -> Result<Self, FrictionError> {
        Self::new(mu, 1.0, 1.0, 0.1)
    }
}

/// Tangential/drilling impulses for one contact.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TangentialImpulses {
    pub tangent: f64,
    pub bitangent: f64,
    pub drill: f64,
}

/// The three Fritz-John equality rows, zero at a valid solution:
/// `e_c^2 mu p_n (W_c^T nu) + p_c sigma` for `c` in tangent, bitangent,
/// drilling.
pub fn friction_equalities(
    impulses: &TangentialImpulses,
    normal_impulse: f64,
    sigma: f64,
    nu_next: &Vector6<f64>,
    basis: &WrenchBasis,
    fp: &FrictionParams,
) -> Vector3<f64> {
    let mu_pn = fp.mu * normal_impulse;
    Vector3::new(
        fp.e_t * fp.e_t * mu_pn * basis.tangent.dot(nu_next) + impulses.tangent * sigma,
        fp.e_o * fp.e_o * mu_pn * basis.bitangent.dot(nu_next) + impulses.bitangent * sigma,
        fp.e_r * fp.e_r * mu_pn * basis.drilling.dot(nu_next) + impulses.drill * sigma,
    )
}

/// Friction-ellipsoid slack
/// `zeta = (mu p_n)^2 - (p_t/e_t)^2 - (p_o/e_o)^2 - (p_r/e_r)^2`,
/// nonnegative at a feasible solution and complementary to `sigma`.
pub fn ellipsoid_slack(
    impulses: &TangentialImpulses,
    normal_impulse: f64,
    fp: &FrictionParams,
) -> f64 {
    let mu_pn = fp.mu * normal_impulse;
    mu_pn * mu_pn
        - (impulses.tangent / fp.e_t).powi(2)
        - (impulses.bitangent / fp.e_o).powi(2)
        - (impulses.drill / fp.e_r).powi(2)
}

/// Power fed into the body by the friction impulses; nonpositive at any
/// accepted step by maximum dissipation.
pub fn friction_power(
    impulses: &TangentialImpulses,
    nu_next: &Vector6<f64>,
    basis: &WrenchBasis,
) -> f64 {
    impulses.tangent * basis.tangent.dot(nu_next)
        + impulses.bitangent * basis.bitangent.dot(nu_next)
        + impulses.drill * basis.drilling.dot(nu_next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{stack_velocity, wrench_basis, ContactFrame};
    use approx::assert_abs_diff_eq;

    fn flat_basis() -> WrenchBasis {
        let frame = ContactFrame::from_normal(Vector3::z());
        wrench_basis(
            &frame,
            &Vector3::zeros(),
            &Vector3::new(0.0, 0.0, 0.1),
        )
    }

    #[test]
    fn params_validation() {
        assert!(FrictionParams::new(0.22, 1.0, 1.0, 0.1).is_ok());
        assert!(matches!(
            FrictionParams::new(-0.1, 1.0, 1.0, 0.1),
            Err(FrictionError::NegativeMu)
        ));
        assert!(matches!(
            FrictionParams::new(0.2, 0.0, 1.0, 0.1),
            Err(FrictionError::NonPositive("e_t"))
        ));
    }

    #[test]
    fn sticking_rows_vanish() {
        let fp = FrictionParams::with_mu(0.22).unwrap();
        let basis = flat_basis();
        let r = friction_equalities(
            &TangentialImpulses {
                tangent: 0.4,
                bitangent: -0.2,
                drill: 0.01,
            },
            1.0,
            0.0,
            &Vector6::zeros(),
            &basis,
            &fp,
        );
        assert_abs_diff_eq!(r.norm(), 0.0);
    }

    #[test]
    fn sliding_impulse_opposes_slip() {
        let fp = FrictionParams::with_mu(0.22).unwrap();
        let basis = flat_basis();
        let nu = stack_velocity(&Vector3::new(0.3, 0.0, 0.0), &Vector3::zeros());
        let sigma = 0.3;
        let pn = 0.098;
        // solve row 0 for p_t: e_t^2 mu p_n s + p_t sigma = 0
        let s = basis.tangent.dot(&nu);
        let p_t = -fp.e_t * fp.e_t * fp.mu * pn * s / sigma;
        assert!(p_t < 0.0, "friction impulse opposes +x slip");
        let r = friction_equalities(
            &TangentialImpulses {
                tangent: p_t,
                bitangent: 0.0,
                drill: 0.0,
            },
            pn,
            sigma,
            &nu,
            &basis,
            &fp,
        );
        assert_abs_diff_eq!(r.norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn diagonal_slide_lands_on_friction_circle() {
        // e_t = e_o = 1: impulses align opposite the slip direction with
        // magnitude mu * p_n when sigma matches the slip speed
        let fp = FrictionParams::with_mu(0.22).unwrap();
        let basis = flat_basis();
        let v = Vector3::new(0.3, 0.4, 0.0);
        let nu = stack_velocity(&v, &Vector3::zeros());
        let pn = 0.098;
        let sigma = v.norm();
        let p_t = -fp.mu * pn * basis.tangent.dot(&nu) / sigma;
        let p_o = -fp.mu * pn * basis.bitangent.dot(&nu) / sigma;
        let imp = TangentialImpulses {
            tangent: p_t,
            bitangent: p_o,
            drill: 0.0,
        };
        let r = friction_equalities(&imp, pn, sigma, &nu, &basis, &fp);
        assert_abs_diff_eq!(r.norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ellipsoid_slack(&imp, pn, &fp), 0.0, epsilon = 1e-15);
        // opposite the slip direction
        let dir = Vector3::new(p_t, p_o, 0.0).normalize();
        assert_abs_diff_eq!((dir + v.normalize()).norm(), 0.0, epsilon = 1e-12);
        assert!(friction_power(&imp, &nu, &basis) < 0.0);
    }

    #[test]
    fn slack_cases() {
        let fp = FrictionParams::with_mu(0.5).unwrap();
        let zero = TangentialImpulses::default();
        assert_abs_diff_eq!(ellipsoid_slack(&zero, 2.0, &fp), 1.0);
        // frictionless limit: mu = 0 forces all friction impulses to zero
        let fp0 = FrictionParams::with_mu(0.0).unwrap();
        let nonzero = TangentialImpulses {
            tangent: 0.1,
            ..Default::default()
        };
        assert!(ellipsoid_slack(&nonzero, 5.0, &fp0) < 0.0);
        assert_abs_diff_eq!(ellipsoid_slack(&zero, 5.0, &fp0), 0.0);
    }
}
