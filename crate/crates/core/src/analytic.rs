//! Closed-form traveling fronts and parameter maps.
//!
//! The McKean front `U(z)`, `z = x - c t`, connects the excited state
//! `U(-inf) = 1` to rest `U(+inf) = 0` and crosses the threshold at the
//! origin, `U(0) = alpha`.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("alpha must lie in (0, 1/2), got {0}")]
    Alpha(f64),
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: &'static str },
}

fn check_alpha<T: Scalar>(alpha: T) -> Result<(), AnalyticError> {
    if alpha > T::zero() && alpha < T::lit(0.5) {
        Ok(())
    } else {
        Err(AnalyticError::Alpha(alpha.to_f64().unwrap_or(f64::NAN)))
    }
}

/// Nondimensional front speed of the hyperbolic McKean model,
/// `c = (1 - 2 alpha) / sqrt(mu + (alpha - alpha^2) (mu - 1)^2)`.
pub fn mckean_speed<T: Scalar>(alpha: T, mu: T) -> Result<T, AnalyticError> {
    check_alpha(alpha)?;
    if !(mu >= T::zero()) {
        return Err(AnalyticError::Parameter { name: "mu", reason: "must be non-negative" });
    }
    let one = T::one();
    let a = alpha - alpha * alpha;
    let den = if mu == T::zero() { a } else { mu + a * (mu - one) * (mu - one) };
    Ok((one - alpha - alpha) / den.sqrt())
}

/// Characteristic speed `sqrt(1 / mu)` of the nondimensional hyperbolic
/// model; infinite in the parabolic limit.
pub fn characteristic_speed<T: Scalar>(mu: T) -> T {
    if mu > T::zero() {
        (T::one() / mu).sqrt()
    } else {
        T::infinity()
    }
}

/// Scales between physical and nondimensional variables of the McKean
/// model: time `T = C_m / k`, length `L = sqrt(sigma / (k chi))` and
/// relaxation `mu = tau k / C_m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NondimMap<T> {
    pub time: T,
    pub length: T,
    pub mu: T,
}

impl<T: Scalar> NondimMap<T> {
    pub fn new(sigma: T, k: T, chi: T, c_m: T, tau: T) -> Result<Self, AnalyticError> {
        for (name, v) in [("sigma", sigma), ("k", k), ("chi", chi), ("C_m", c_m)] {
            if !(v > T::zero()) {
                return Err(AnalyticError::Parameter { name, reason: "must be positive" });
            }
        }
        if !(tau >= T::zero()) {
            return Err(AnalyticError::Parameter { name: "tau", reason: "must be non-negative" });
        }
        Ok(Self { time: c_m / k, length: (sigma / (k * chi)).sqrt(), mu: tau * k / c_m })
    }

    /// The identity map (all physical constants one, relaxation `mu`).
    pub fn unit(mu: T) -> Self {
        Self { time: T::one(), length: T::one(), mu }
    }

    pub fn velocity_scale(&self) -> T {
        self.length / self.time
    }
}

/// Dimensional front speed `sqrt(sigma k / (chi C_m^2)) c(alpha, mu)`.
pub fn mckean_speed_dimensional<T: Scalar>(sigma: T, k: T, chi: T, c_m: T, alpha: T, tau: T) -> Result<T, AnalyticError> {
    let map = NondimMap::new(sigma, k, chi, c_m, tau)?;
    Ok(map.velocity_scale() * mckean_speed(alpha, map.mu)?)
}

/// Dimensional characteristic speed `sqrt(sigma / (chi tau C_m))`.
pub fn characteristic_speed_dimensional<T: Scalar>(sigma: T, chi: T, c_m: T, tau: T) -> T {
    if tau > T::zero() {
        (sigma / (chi * tau * c_m)).sqrt()
    } else {
        T::infinity()
    }
}

/// Exact McKean front for given `(alpha, mu)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontSolution<T> {
    pub alpha: T,
    pub mu: T,
    pub c: T,
    /// Decay rate ahead of the front, negative.
    pub lambda_plus: T,
    /// Growth rate behind the front, positive.
    pub lambda_minus: T,
}

impl<T: Scalar> FrontSolution<T> {
    pub fn new(alpha: T, mu: T) -> Result<Self, AnalyticError> {
        let c = mckean_speed(alpha, mu)?;
        let gamma = c * c * mu - T::one();
        let beta = -c * (T::one() + mu);
        let disc = (beta * beta - T::lit(4.0) * gamma).sqrt();
        let two_gamma = gamma + gamma;
        Ok(Self {
            alpha,
            mu,
            c,
            lambda_plus: (-beta + disc) / two_gamma,
            lambda_minus: (-beta - disc) / two_gamma,
        })
    }

    /// `(U(z), U'(z))`.
    pub fn profile(&self, z: T) -> (T, T) {
        if z > T::zero() {
            let e = self.alpha * (self.lambda_plus * z).exp();
            (e, self.lambda_plus * e)
        } else {
            let e = (self.alpha - T::one()) * (self.lambda_minus * z).exp();
            (e + T::one(), self.lambda_minus * e)
        }
    }

    /// Residual of `(c^2 mu - 1) U'' - c (1 + mu) U' + U - H(-z)` at `z != 0`.
    pub fn ode_residual(&self, z: T) -> T {
        let (u, du) = self.profile(z);
        let (lambda, step) = if z > T::zero() { (self.lambda_plus, T::zero()) } else { (self.lambda_minus, T::one()) };
        let d2u = lambda * du;
        (self.c * self.c * self.mu - T::one()) * d2u - self.c * (T::one() + self.mu) * du + u - step
    }

    /// Dimensional `(V, dV/dt)` at position `x` and time `t` for a front
    /// whose threshold crossing sits at `x0` when `t = 0`.
    pub fn dimensional_state(&self, map: &NondimMap<T>, v0: T, v2: T, x0: T, x: T, t: T) -> (T, T) {
        let z = (x - x0) / map.length - self.c * t / map.time;
        let (u, du) = self.profile(z);
        let span = v2 - v0;
        (v0 + span * u, -self.c * du * span / map.time)
    }
}

/// Speed of the parabolic cubic front `(1 - 2 alpha) / sqrt(2)` for
/// `I = V (V - 1) (V - alpha)`.
pub fn cubic_speed<T: Scalar>(alpha: T) -> T {
    (T::one() - alpha - alpha) / T::SQRT_2()
}

/// Parabolic cubic front `U(z) = 1 / (1 + exp(z / sqrt 2))` and `U'`.
pub fn cubic_profile<T: Scalar>(z: T) -> (T, T) {
    let s = z / T::SQRT_2();
    let e = (-s.abs()).exp();
    let u = if s > T::zero() { e / (T::one() + e) } else { T::one() / (T::one() + e) };
    (u, -u * (T::one() - u) / T::SQRT_2())
}

/// Relaxation time `(L_i + L_e) / (R_i + R_e)` and diffusivity
/// `1 / (chi (R_i + R_e))` of the equivalent transmission-line circuit.
pub fn circuit_relaxation_time<T: Scalar>(l_i: T, l_e: T, r_i: T, r_e: T, chi: T) -> Result<(T, T), AnalyticError> {
    let r = r_i + r_e;
    if !(r > T::zero()) {
        return Err(AnalyticError::Parameter { name: "R_i + R_e", reason: "must be positive" });
    }
    if !(l_i >= T::zero() && l_e >= T::zero()) {
        return Err(AnalyticError::Parameter { name: "L", reason: "inductances must be non-negative" });
    }
    if !(chi > T::zero()) {
        return Err(AnalyticError::Parameter { name: "chi", reason: "must be positive" });
    }
    Ok(((l_i + l_e) / r, T::one() / (chi * r)))
}

/// Relaxation time of the monodomain reduction when `D_e = lambda D_i`.
pub fn monodomain_tau<T: Scalar>(tau_i: T, tau_e: T, lambda: T) -> Result<T, AnalyticError> {
    if !(lambda > T::zero()) {
        return Err(AnalyticError::Parameter { name: "lambda", reason: "must be positive" });
    }
    Ok(tau_i + lambda * (tau_e - tau_i) / (lambda + T::one()))
}

/// Factor `lambda / (lambda + 1)` turning `D_i` into the monodomain
/// diffusivity when `D_e = lambda D_i`.
pub fn monodomain_diffusivity_factor<T: Scalar>(lambda: T) -> T {
    lambda / (lambda + T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn speed_examples() {
        assert_relative_eq!(mckean_speed(0.1, 1.0).unwrap(), 0.8, epsilon = 1e-14);
        assert_relative_eq!(mckean_speed(0.1, 0.0).unwrap(), 0.8 / 0.3, epsilon = 1e-14);
        assert!(mckean_speed(0.499_999_9, 2.0).unwrap() < 1e-5);
        assert!(mckean_speed(0.5, 1.0).is_err());
        assert!(mckean_speed(0.0, 1.0).is_err());
        assert!(mckean_speed(0.1, -1.0).is_err());
    }

    #[test]
    fn dimensional_speed() {
        assert_relative_eq!(mckean_speed_dimensional(1.0, 1.0, 1.0, 1.0, 0.1, 0.0).unwrap(), 8.0 / 3.0, epsilon = 1e-14);
        let v = mckean_speed_dimensional(1.0, 1.0, 1.0, 1.0, 0.1, 0.5).unwrap();
        assert!(v < characteristic_speed_dimensional(1.0, 1.0, 1.0, 0.5));
        let v1 = mckean_speed_dimensional(0.3, 2.0, 1.5, 1.2, 0.2, 0.0).unwrap();
        let v4 = mckean_speed_dimensional(1.2, 2.0, 1.5, 1.2, 0.2, 0.0).unwrap();
        assert_relative_eq!(v4, 2.0 * v1, epsilon = 1e-14);
    }

    #[test]
    fn front_roots_parabolic() {
        let f = FrontSolution::<f64>::new(0.1, 0.0).unwrap();
        assert_relative_eq!(f.lambda_plus, -3.0, epsilon = 1e-13);
        assert_relative_eq!(f.lambda_minus, 1.0 / 3.0, epsilon = 1e-13);
        assert_relative_eq!(f.alpha * f.lambda_plus, -0.3, epsilon = 1e-13);
        assert_relative_eq!((f.alpha - 1.0) * f.lambda_minus, -0.3, epsilon = 1e-13);
        assert_relative_eq!(f.profile(0.0).0, 0.1, epsilon = 1e-15);
        assert!(f.profile(60.0).0 < 1e-12);
        assert!((f.profile(-200.0).0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nondim_map() {
        let m = NondimMap::new(4.0, 2.0, 0.5, 1.0, 0.25).unwrap();
        assert_relative_eq!(m.time, 0.5);
        assert_relative_eq!(m.length, 2.0);
        assert_relative_eq!(m.mu, 0.5);
        assert!(NondimMap::new(0.0, 1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn dimensional_state_seeds_q() {
        let f = FrontSolution::new(0.2, 0.5).unwrap();
        let map = NondimMap::unit(0.5);
        let (v, q) = f.dimensional_state(&map, 0.0, 1.0, 3.0, 3.0, 0.0);
        assert_relative_eq!(v, 0.2);
        assert_relative_eq!(q, -f.c * f.alpha * f.lambda_plus);
        // finite-difference in time
        let dt = 1e-7;
        let (va, _) = f.dimensional_state(&map, 0.0, 1.0, 3.0, 2.0, dt);
        let (vb, qb) = f.dimensional_state(&map, 0.0, 1.0, 3.0, 2.0, 0.0);
        assert_relative_eq!((va - vb) / dt, qb, max_relative = 1e-5);
    }

    #[test]
    fn circuit_and_reduction() {
        assert_eq!(circuit_relaxation_time(0.0, 0.0, 1.0, 1.0, 1.0).unwrap().0, 0.0);
        let (tau, d) = circuit_relaxation_time(0.3, 0.5, 1.5, 0.5, 2.0).unwrap();
        assert_relative_eq!(tau, 0.4);
        assert_relative_eq!(d, 0.25);
        assert_eq!(
            circuit_relaxation_time(0.3, 0.5, 1.5, 0.5, 2.0).unwrap(),
            circuit_relaxation_time(0.5, 0.3, 0.5, 1.5, 2.0).unwrap()
        );
        assert!(circuit_relaxation_time(1.0, 1.0, 0.0, 0.0, 1.0).is_err());
        assert_relative_eq!(monodomain_tau(0.8, 0.8, 0.7).unwrap(), 0.8);
        assert_relative_eq!(monodomain_tau(0.8, 0.0, 1.0).unwrap(), 0.4);
        assert_relative_eq!(monodomain_tau(0.0, 0.6, 1.0).unwrap(), 0.3);
    }

    #[test]
    fn cubic_front_solves_its_ode() {
        let alpha = 0.2;
        let c = cubic_speed(alpha);
        for &z in &[-4.0, -1.0, 0.0, 0.5, 3.0] {
            let (u, du) = cubic_profile(z);
            // U'' from U' = -U(1-U)/sqrt2
            let d2u = -(1.0 - 2.0 * u) * du / 2f64.sqrt();
            let r = d2u + c * du - u * (u - 1.0) * (u - alpha);
            assert!(r.abs() < 1e-14, "z={z} r={r}");
        }
    }

    proptest! {
        #[test]
        fn speed_below_characteristic(alpha in 0.001f64..0.499, mu in 0.001f64..50.0) {
            prop_assert!(mckean_speed(alpha, mu).unwrap() < characteristic_speed(mu));
        }

        #[test]
        fn derivative_continuity_and_ode(alpha in 0.01f64..0.49, mu in 0.0f64..10.0, z in 0.01f64..20.0) {
            let f = FrontSolution::new(alpha, mu).unwrap();
            prop_assert!(f.lambda_plus < 0.0 && f.lambda_minus > 0.0);
            prop_assert!((alpha * f.lambda_plus - (alpha - 1.0) * f.lambda_minus).abs() < 1e-12);
            prop_assert!(f.ode_residual(z).abs() < 1e-10);
            prop_assert!(f.ode_residual(-z).abs() < 1e-10);
        }

        #[test]
        fn profile_monotone_in_unit_interval(alpha in 0.01f64..0.49, mu in 0.0f64..10.0, z in -10.0f64..10.0, dz in 0.001f64..1.0) {
            let f = FrontSolution::new(alpha, mu).unwrap();
            let (u, du) = f.profile(z);
            prop_assert!(u > 0.0 && u < 1.0);
            prop_assert!(du < 0.0);
            prop_assert!(f.profile(z + dz).0 <= u);
        }

        #[test]
        fn speed_decreasing_in_alpha(a in 0.01f64..0.48, da in 0.001f64..0.01, mu in 0.0f64..10.0) {
            prop_assert!(mckean_speed(a + da, mu).unwrap() < mckean_speed(a, mu).unwrap());
        }
    }
}
