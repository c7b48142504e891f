//! Membrane reaction terms.
//!
//! Every model exposes the ionic current `I_ion(V, w)`, the gating rate
//! function `g(V, w)` and the partial derivatives needed to form
//! `dI_ion/dt = dI/dV * Q + dI/dw . g` nodally. Evaluations are pure
//! functions of their arguments.
//!
//! Sign convention: a positive `I_ion` is outward and repolarizing, i.e. the
//! potential obeys `C_m dV/dt = -I_ion + ...`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::scalar::Scalar;

/// Upper bound on the number of gating variables of any built-in model.
pub const MAX_STATES: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown ionic model `{0}`")]
    UnknownModel(String),
    #[error("model `{model}` has no parameter `{key}`")]
    UnknownParameter { model: String, key: String },
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: String, reason: String },
}

fn invalid(name: &str, reason: impl Into<String>) -> ModelError {
    ModelError::Parameter { name: name.to_string(), reason: reason.into() }
}

/// Heaviside step. With `eps == 0` this is the sharp step with `H(0) = 1/2`;
/// with `eps > 0` it is the C1 cubic Hermite ramp over `[-eps, eps]`.
pub fn heaviside<T: Scalar>(x: T, eps: T) -> T {
    if eps > T::zero() {
        if x <= -eps {
            T::zero()
        } else if x >= eps {
            T::one()
        } else {
            let s = (x + eps) / (eps + eps);
            s * s * (T::lit(3.0) - T::lit(2.0) * s)
        }
    } else if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        T::zero()
    } else {
        T::lit(0.5)
    }
}

/// Derivative of [`heaviside`]. The Dirac mass of the sharp step is dropped.
pub fn heaviside_derivative<T: Scalar>(x: T, eps: T) -> T {
    if eps > T::zero() && x > -eps && x < eps {
        let s = (x + eps) / (eps + eps);
        T::lit(6.0) * s * (T::one() - s) / (eps + eps)
    } else {
        T::zero()
    }
}

/// Piecewise-linear bistable current
/// `I = k (V - V0) - k (V2 - V0) H((V - V1) / (V2 - V0))`.
///
/// The nondimensional form `I = V - H(V - alpha)` is the special case
/// `k = 1, V0 = 0, V1 = alpha, V2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McKeanParams<T> {
    pub k: T,
    pub v0: T,
    pub v1: T,
    pub v2: T,
}

impl<T: Scalar> McKeanParams<T> {
    pub fn nondimensional(alpha: T) -> Result<Self, ModelError> {
        let p = Self { k: T::one(), v0: T::zero(), v1: alpha, v2: T::one() };
        p.validate()?;
        Ok(p)
    }

    pub fn dimensional(k: T, v0: T, v1: T, v2: T) -> Result<Self, ModelError> {
        let p = Self { k, v0, v1, v2 };
        p.validate()?;
        Ok(p)
    }

    /// Excitability `(V1 - V0) / (V2 - V0)`.
    pub fn alpha(&self) -> T {
        (self.v1 - self.v0) / (self.v2 - self.v0)
    }

    /// Maps a dimensional potential to `(V - V0) / (V2 - V0)`.
    pub fn nondim_potential(&self, v: T) -> T {
        (v - self.v0) / (self.v2 - self.v0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.k > T::zero()) {
            return Err(invalid("k", "must be positive"));
        }
        if !(self.v0 < self.v1 && self.v1 < self.v2) {
            return Err(invalid("V1", "requires V0 < V1 < V2"));
        }
        let a = self.alpha();
        if !(a > T::zero() && a < T::lit(0.5)) {
            return Err(invalid("alpha", format!("must lie in (0, 1/2), got {a}")));
        }
        Ok(())
    }

    fn i_ion(&self, v: T, eps: T) -> T {
        let span = self.v2 - self.v0;
        self.k * (v - self.v0) - self.k * span * heaviside((v - self.v1) / span, eps)
    }

    fn di_dv(&self, v: T, eps: T) -> T {
        let span = self.v2 - self.v0;
        self.k - self.k * heaviside_derivative((v - self.v1) / span, eps)
    }
}

/// Cubic bistable current `I = k V (V - 1) (V - alpha)`. `k = 0` gives a
/// passive membrane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicParams<T> {
    pub k: T,
    pub alpha: T,
}

impl<T: Scalar> CubicParams<T> {
    pub fn new(alpha: T) -> Result<Self, ModelError> {
        let p = Self { k: T::one(), alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.k >= T::zero()) {
            return Err(invalid("k", "must be non-negative"));
        }
        if !(self.alpha > T::zero() && self.alpha < T::one()) {
            return Err(invalid("alpha", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Two-variable Aliev-Panfilov model with recovery variable `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlievPanfilovParams<T> {
    pub k: T,
    pub b: T,
    pub mu1: T,
    pub mu2: T,
    pub eps: T,
    /// Excitation threshold in the current `k V (V - alpha) (V - 1) + r V`.
    pub alpha: T,
}

impl<T: Scalar> Default for AlievPanfilovParams<T> {
    fn default() -> Self {
        Self {
            k: T::lit(8.0),
            b: T::lit(0.1),
            mu1: T::lit(0.12),
            mu2: T::lit(0.3),
            eps: T::lit(0.01),
            alpha: T::lit(0.1),
        }
    }
}

impl<T: Scalar> AlievPanfilovParams<T> {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("k", self.k),
            ("b", self.b),
            ("mu1", self.mu1),
            ("mu2", self.mu2),
            ("eps", self.eps),
            ("alpha", self.alpha),
        ] {
            if !(v > T::zero()) {
                return Err(invalid(name, "must be positive"));
            }
        }
        Ok(())
    }
}

/// Three-variable Fenton-Karma model with gates `v` (fast) and `w` (slow).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FentonKarmaParams<T> {
    pub tau_v_plus: T,
    pub tau_v1_minus: T,
    pub tau_v2_minus: T,
    pub tau_w_plus: T,
    pub tau_w_minus: T,
    pub tau_d: T,
    pub tau_0: T,
    pub tau_r: T,
    pub tau_si: T,
    pub k: T,
    pub v_c_si: T,
    pub v_c: T,
    pub v_v: T,
}

/// The three membrane currents of the Fenton-Karma model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkCurrents<T> {
    /// Fast inward current, `<= 0`.
    pub fast_inward: T,
    /// Slow outward current, `>= 0` for `V >= 0`.
    pub slow_outward: T,
    /// Slow inward current, `<= 0`.
    pub slow_inward: T,
}

impl<T: Scalar> FkCurrents<T> {
    pub fn total(&self) -> T {
        self.fast_inward + self.slow_outward + self.slow_inward
    }
}

impl<T: Scalar> FentonKarmaParams<T> {
    /// Parameter sets 3 to 6 of Fenton et al. (2002).
    pub fn set(n: u8) -> Option<Self> {
        let row: [f64; 13] = match n {
            3 => [3.33, 19.6, 1250.0, 870.0, 41.0, 0.25, 12.5, 33.33, 29.0, 10.0, 0.85, 0.13, 0.04],
            4 => [3.33, 15.6, 5.0, 350.0, 80.0, 0.407, 9.0, 34.0, 26.5, 15.0, 0.45, 0.15, 0.04],
            5 => [3.33, 12.0, 2.0, 1000.0, 100.0, 0.362, 5.0, 33.33, 29.0, 15.0, 0.7, 0.13, 0.04],
            6 => [3.33, 9.0, 8.0, 250.0, 60.0, 0.395, 9.0, 33.33, 29.0, 15.0, 0.5, 0.13, 0.04],
            _ => return None,
        };
        let r = row.map(T::lit);
        Some(Self {
            tau_v_plus: r[0],
            tau_v1_minus: r[1],
            tau_v2_minus: r[2],
            tau_w_plus: r[3],
            tau_w_minus: r[4],
            tau_d: r[5],
            tau_0: r[6],
            tau_r: r[7],
            tau_si: r[8],
            k: r[9],
            v_c_si: r[10],
            v_c: r[11],
            v_v: r[12],
        })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("tau_v_plus", self.tau_v_plus),
            ("tau_v1_minus", self.tau_v1_minus),
            ("tau_v2_minus", self.tau_v2_minus),
            ("tau_w_plus", self.tau_w_plus),
            ("tau_w_minus", self.tau_w_minus),
            ("tau_d", self.tau_d),
            ("tau_0", self.tau_0),
            ("tau_r", self.tau_r),
            ("tau_si", self.tau_si),
            ("k", self.k),
        ] {
            if !(v > T::zero()) {
                return Err(invalid(name, "must be positive"));
            }
        }
        if !(T::zero() < self.v_v && self.v_v < self.v_c && self.v_c < T::one()) {
            return Err(invalid("V_c", "requires 0 < V_v < V_c < 1"));
        }
        Ok(())
    }

    pub fn currents(&self, v: T, gate_v: T, gate_w: T, eps: T) -> FkCurrents<T> {
        let p = heaviside(v - self.v_c, eps);
        let one = T::one();
        let half = T::lit(0.5);
        FkCurrents {
            fast_inward: -gate_v * p * (v - self.v_c) * (one - v) / self.tau_d,
            slow_outward: v * (one - p) / self.tau_0 + p / self.tau_r,
            slow_inward: -half * gate_w * (one + (self.k * (v - self.v_c_si)).tanh()) / self.tau_si,
        }
    }

    fn rates(&self, v: T, gate_v: T, gate_w: T, eps: T) -> (T, T) {
        let one = T::one();
        let p = heaviside(v - self.v_c, eps);
        let q = heaviside(v - self.v_v, eps);
        let tau_v_minus = (one - q) * self.tau_v1_minus + q * self.tau_v2_minus;
        let dv = (one - p) * (one - gate_v) / tau_v_minus - p * gate_v / self.tau_v_plus;
        let dw = (one - p) * (one - gate_w) / self.tau_w_minus - p * gate_w / self.tau_w_plus;
        (dv, dw)
    }

    fn di_dv(&self, v: T, gate_v: T, gate_w: T, eps: T) -> T {
        let one = T::one();
        let p = heaviside(v - self.v_c, eps);
        let dp = heaviside_derivative(v - self.v_c, eps);
        let d_fi = -gate_v / self.tau_d * (dp * (v - self.v_c) * (one - v) + p * ((one - v) - (v - self.v_c)));
        let d_so = (one - p) / self.tau_0 - v * dp / self.tau_0 + dp / self.tau_r;
        let th = (self.k * (v - self.v_c_si)).tanh();
        let d_si = -T::lit(0.5) * gate_w * self.k * (one - th * th) / self.tau_si;
        d_fi + d_so + d_si
    }

    fn di_dw(&self, v: T, eps: T) -> (T, T) {
        let one = T::one();
        let p = heaviside(v - self.v_c, eps);
        let d_gate_v = -p * (v - self.v_c) * (one - v) / self.tau_d;
        let d_gate_w = -T::lit(0.5) * (one + (self.k * (v - self.v_c_si)).tanh()) / self.tau_si;
        (d_gate_v, d_gate_w)
    }
}

/// The reaction models known to the solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelKind<T> {
    McKean(McKeanParams<T>),
    Cubic(CubicParams<T>),
    AlievPanfilov(AlievPanfilovParams<T>),
    FentonKarma(FentonKarmaParams<T>),
}

/// A fully parameterized ionic model together with the width of the
/// Heaviside regularization (`0` for sharp steps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonicModelInstance<T> {
    pub kind: ModelKind<T>,
    pub regularization_eps: T,
}

/// Tissue coefficients listed alongside a parameter set, in the model's own
/// units: membrane capacitance, fiber and cross-fiber conductivity, and
/// surface-to-volume ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueDefaults<T> {
    pub c_m: T,
    pub sigma_f: T,
    pub sigma_s: T,
    pub chi: T,
}

impl<T: Scalar> IonicModelInstance<T> {
    pub fn new(kind: ModelKind<T>) -> Self {
        Self { kind, regularization_eps: T::zero() }
    }

    pub fn mckean(alpha: T) -> Result<Self, ModelError> {
        Ok(Self::new(ModelKind::McKean(McKeanParams::nondimensional(alpha)?)))
    }

    pub fn cubic(alpha: T) -> Result<Self, ModelError> {
        Ok(Self::new(ModelKind::Cubic(CubicParams::new(alpha)?)))
    }

    pub fn aliev_panfilov(params: AlievPanfilovParams<T>) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(Self::new(ModelKind::AlievPanfilov(params)))
    }

    pub fn fenton_karma(set: u8) -> Result<Self, ModelError> {
        let p = FentonKarmaParams::set(set).ok_or_else(|| ModelError::UnknownModel(format!("FK{set}")))?;
        Ok(Self::new(ModelKind::FentonKarma(p)))
    }

    pub fn with_regularization(mut self, eps: T) -> Result<Self, ModelError> {
        if !(eps >= T::zero()) {
            return Err(invalid("regularization_eps", "must be non-negative"));
        }
        self.regularization_eps = eps;
        Ok(self)
    }

    /// Builds a named parameter set (`McKean`, `Cubic`, `AP`, `FK3`..`FK6`)
    /// and applies per-key overrides.
    pub fn from_name(name: &str, overrides: &BTreeMap<String, f64>) -> Result<Self, ModelError> {
        let mut model = match name {
            "McKean" | "mckean" => Self::mckean(T::lit(0.1))?,
            "Cubic" | "cubic" => Self::cubic(T::lit(0.1))?,
            "AP" | "ap" => Self::aliev_panfilov(AlievPanfilovParams::default())?,
            "FK3" | "fk3" => Self::fenton_karma(3)?,
            "FK4" | "fk4" => Self::fenton_karma(4)?,
            "FK5" | "fk5" => Self::fenton_karma(5)?,
            "FK6" | "fk6" => Self::fenton_karma(6)?,
            other => return Err(ModelError::UnknownModel(other.to_string())),
        };
        for (key, &value) in overrides {
            model.set_parameter(key, value)?;
        }
        model.validate()?;
        Ok(model)
    }

    /// Overrides a single parameter by key. Call [`Self::validate`] afterwards.
    pub fn set_parameter(&mut self, key: &str, value: f64) -> Result<(), ModelError> {
        let x = T::lit(value);
        if key == "regularization_eps" {
            self.regularization_eps = x;
            return Ok(());
        }
        let unknown = |model: &str| ModelError::UnknownParameter { model: model.into(), key: key.into() };
        match &mut self.kind {
            ModelKind::McKean(p) => match key {
                "alpha" => p.v1 = p.v0 + x * (p.v2 - p.v0),
                "k" => p.k = x,
                "V0" => p.v0 = x,
                "V1" => p.v1 = x,
                "V2" => p.v2 = x,
                _ => return Err(unknown("McKean")),
            },
            ModelKind::Cubic(p) => match key {
                "alpha" => p.alpha = x,
                "k" => p.k = x,
                _ => return Err(unknown("Cubic")),
            },
            ModelKind::AlievPanfilov(p) => match key {
                "k" => p.k = x,
                "b" => p.b = x,
                "mu1" => p.mu1 = x,
                "mu2" => p.mu2 = x,
                "eps" => p.eps = x,
                "alpha" => p.alpha = x,
                _ => return Err(unknown("AP")),
            },
            ModelKind::FentonKarma(p) => match key {
                "tau_v_plus" => p.tau_v_plus = x,
                "tau_v1_minus" => p.tau_v1_minus = x,
                "tau_v2_minus" => p.tau_v2_minus = x,
                "tau_w_plus" => p.tau_w_plus = x,
                "tau_w_minus" => p.tau_w_minus = x,
                "tau_d" => p.tau_d = x,
                "tau_0" => p.tau_0 = x,
                "tau_r" => p.tau_r = x,
                "tau_si" => p.tau_si = x,
                "k" => p.k = x,
                "V_c_si" => p.v_c_si = x,
                "V_c" => p.v_c = x,
                "V_v" => p.v_v = x,
                _ => return Err(unknown("FK")),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.regularization_eps >= T::zero()) {
            return Err(invalid("regularization_eps", "must be non-negative"));
        }
        match &self.kind {
            ModelKind::McKean(p) => p.validate(),
            ModelKind::Cubic(p) => p.validate(),
            ModelKind::AlievPanfilov(p) => p.validate(),
            ModelKind::FentonKarma(p) => p.validate(),
        }
    }

    /// Table values of capacitance and conductivities that accompany the
    /// named parameter families. `None` for the nondimensional test models.
    pub fn tissue_defaults(&self) -> Option<TissueDefaults<T>> {
        match self.kind {
            ModelKind::AlievPanfilov(_) => Some(TissueDefaults {
                c_m: T::one(),
                sigma_f: T::one(),
                sigma_s: T::lit(0.125),
                chi: T::one(),
            }),
            ModelKind::FentonKarma(_) => Some(TissueDefaults {
                c_m: T::one(),
                sigma_f: T::lit(0.1),
                sigma_s: T::lit(0.0125),
                chi: T::one(),
            }),
            _ => None,
        }
    }

    pub fn n_states(&self) -> usize {
        match self.kind {
            ModelKind::McKean(_) | ModelKind::Cubic(_) => 0,
            ModelKind::AlievPanfilov(_) => 1,
            ModelKind::FentonKarma(_) => 2,
        }
    }

    /// Whether the model has gating variables that need integrating.
    pub fn is_stateless(&self) -> bool {
        self.n_states() == 0
    }

    pub fn rest_potential(&self) -> T {
        match self.kind {
            ModelKind::McKean(p) => p.v0,
            _ => T::zero(),
        }
    }

    /// Fully recovered resting gate values.
    pub fn initial_state(&self, w: &mut [T]) {
        match self.kind {
            ModelKind::McKean(_) | ModelKind::Cubic(_) => {}
            ModelKind::AlievPanfilov(_) => w[0] = T::zero(),
            ModelKind::FentonKarma(_) => {
                w[0] = T::one();
                w[1] = T::one();
            }
        }
    }

    pub fn i_ion(&self, v: T, w: &[T]) -> T {
        let eps = self.regularization_eps;
        match &self.kind {
            ModelKind::McKean(p) => p.i_ion(v, eps),
            ModelKind::Cubic(p) => p.k * v * (v - T::one()) * (v - p.alpha),
            ModelKind::AlievPanfilov(p) => p.k * v * (v - p.alpha) * (v - T::one()) + w[0] * v,
            ModelKind::FentonKarma(p) => p.currents(v, w[0], w[1], eps).total(),
        }
    }

    /// Gate rate function `g(V, w)`, written into `out[..n_states]`.
    pub fn rates(&self, v: T, w: &[T], out: &mut [T]) {
        let eps = self.regularization_eps;
        match &self.kind {
            ModelKind::McKean(_) | ModelKind::Cubic(_) => {}
            ModelKind::AlievPanfilov(p) => {
                let r = w[0];
                out[0] = (p.eps + p.mu1 * r / (p.mu2 + v)) * (-r - p.k * v * (v - p.b - T::one()));
            }
            ModelKind::FentonKarma(p) => {
                let (dv, dw) = p.rates(v, w[0], w[1], eps);
                out[0] = dv;
                out[1] = dw;
            }
        }
    }

    pub fn di_dv(&self, v: T, w: &[T]) -> T {
        let eps = self.regularization_eps;
        match &self.kind {
            ModelKind::McKean(p) => p.di_dv(v, eps),
            ModelKind::Cubic(p) => {
                p.k * (T::lit(3.0) * v * v - T::lit(2.0) * (T::one() + p.alpha) * v + p.alpha)
            }
            ModelKind::AlievPanfilov(p) => {
                p.k * (T::lit(3.0) * v * v - T::lit(2.0) * (T::one() + p.alpha) * v + p.alpha) + w[0]
            }
            ModelKind::FentonKarma(p) => p.di_dv(v, w[0], w[1], eps),
        }
    }

    /// Partial derivatives of `I_ion` with respect to each gate.
    pub fn di_dw(&self, v: T, _w: &[T], out: &mut [T]) {
        let eps = self.regularization_eps;
        match &self.kind {
            ModelKind::McKean(_) | ModelKind::Cubic(_) => {}
            ModelKind::AlievPanfilov(_) => out[0] = v,
            ModelKind::FentonKarma(p) => {
                let (a, b) = p.di_dw(v, eps);
                out[0] = a;
                out[1] = b;
            }
        }
    }

    /// Time derivative of the ionic current by the chain rule,
    /// `dI/dV * q + dI/dw . g(V, w)`, where `q = dV/dt`.
    pub fn di_ion_dt(&self, v: T, q: T, w: &[T]) -> T {
        let n = self.n_states();
        let mut g = [T::zero(); MAX_STATES];
        let mut dw = [T::zero(); MAX_STATES];
        self.rates(v, w, &mut g[..n]);
        self.di_dw(v, w, &mut dw[..n]);
        let gate_part = (0..n).fold(T::zero(), |acc, k| acc + dw[k] * g[k]);
        self.di_dv(v, w) * q + gate_part
    }
}
