use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The trait-evolution model family.
///
/// Names read (trait dynamics)(optimum dynamics)(rate dynamics): `OUBMBM` has
/// an OU trait tracking a Brownian optimum with a Brownian rate of evolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "BM")]
    Bm,
    #[serde(rename = "OU")]
    Ou,
    #[serde(rename = "OUBM")]
    Oubm,
    #[serde(rename = "OUOU")]
    Ouou,
    #[serde(rename = "OUBMBM")]
    Oubmbm,
    #[serde(rename = "OUOUBM")]
    Ououbm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Bm,
        ModelKind::Ou,
        ModelKind::Oubm,
        ModelKind::Ouou,
        ModelKind::Oubmbm,
        ModelKind::Ououbm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Bm => "BM",
            ModelKind::Ou => "OU",
            ModelKind::Oubm => "OUBM",
            ModelKind::Ouou => "OUOU",
            ModelKind::Oubmbm => "OUBMBM",
            ModelKind::Ououbm => "OUOUBM",
        }
    }

    /// The optimum is a random process (linked to the predictor).
    pub fn has_stochastic_optimum(self) -> bool {
        !matches!(self, ModelKind::Bm | ModelKind::Ou)
    }

    /// The optimum mean-reverts (α_θ may be non-zero).
    pub fn has_ou_optimum(self) -> bool {
        matches!(self, ModelKind::Ouou | ModelKind::Ououbm)
    }

    /// The rate of evolution is itself a Brownian motion (τ may be non-zero).
    pub fn has_stochastic_rate(self) -> bool {
        matches!(self, ModelKind::Oubmbm | ModelKind::Ououbm)
    }

    /// The trait is attracted to its optimum (α_y may be non-zero).
    pub fn has_adaptation(self) -> bool {
        self != ModelKind::Bm
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model kind '{s}'")))
    }
}

/// Structural parameters of the joint trait/optimum/rate process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub kind: ModelKind,
    /// Adaptation rate of the trait toward its optimum.
    pub alpha_y: f64,
    /// Mean-reversion rate of the optimum.
    pub alpha_theta: f64,
    /// Initial (or constant) diffusion of the trait.
    pub sigma_y: f64,
    /// Diffusion of the optimum.
    pub sigma_theta: f64,
    /// Diffusion of the rate of evolution.
    pub tau: f64,
}

impl ModelParams {
    /// Strict constructor: every parameter the kind does not use must be zero.
    pub fn new(
        kind: ModelKind,
        alpha_y: f64,
        alpha_theta: f64,
        sigma_y: f64,
        sigma_theta: f64,
        tau: f64,
    ) -> Result<Self> {
        let p = Self { kind, alpha_y, alpha_theta, sigma_y, sigma_theta, tau };
        p.validate()?;
        Ok(p)
    }

    /// Like [`ModelParams::new`] but silently zeroes parameters the kind does not use.
    pub fn forced(
        kind: ModelKind,
        alpha_y: f64,
        alpha_theta: f64,
        sigma_y: f64,
        sigma_theta: f64,
        tau: f64,
    ) -> Result<Self> {
        let keep = |on: bool, v: f64| if on { v } else { 0.0 };
        Self::new(
            kind,
            keep(kind.has_adaptation(), alpha_y),
            keep(kind.has_ou_optimum(), alpha_theta),
            sigma_y,
            keep(kind.has_stochastic_optimum(), sigma_theta),
            keep(kind.has_stochastic_rate(), tau),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alpha_y", self.alpha_y),
            ("alpha_theta", self.alpha_theta),
            ("sigma_y", self.sigma_y),
            ("sigma_theta", self.sigma_theta),
            ("tau", self.tau),
        ];
        for (name, v) in named {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParams(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        let k = self.kind;
        let unused = [
            ("alpha_y", self.alpha_y, k.has_adaptation()),
            ("alpha_theta", self.alpha_theta, k.has_ou_optimum()),
            ("sigma_theta", self.sigma_theta, k.has_stochastic_optimum()),
            ("tau", self.tau, k.has_stochastic_rate()),
        ];
        for (name, v, used) in unused {
            if !used && v != 0.0 {
                return Err(Error::InvalidParams(format!("{name} is not a parameter of {k}")));
            }
        }
        Ok(())
    }
}

/// Deterministic initial state Z₀ = (y₀, θ₀, σ₀) at the root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub y0: f64,
    pub theta0: f64,
    pub sigma0: f64,
}

impl InitialState {
    /// `(0, θ₀, σ_y)`: the root-conditioned default.
    pub fn root(params: &ModelParams, theta0: f64) -> Self {
        Self { y0: 0.0, theta0, sigma0: params.sigma_y }
    }

    pub fn validate(&self) -> Result<()> {
        if self.y0.is_finite() && self.theta0.is_finite() && self.sigma0.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("non-finite initial state {self:?}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_consistency() {
        assert!(ModelParams::new(ModelKind::Ouou, 0.1, 0.1, 0.2, 0.3, 0.0).is_ok());
        assert!(ModelParams::new(ModelKind::Ouou, 0.1, 0.1, 0.2, 0.3, 0.01).is_err());
        assert!(ModelParams::new(ModelKind::Oubm, 0.1, 0.1, 0.2, 0.3, 0.0).is_err());
        assert!(ModelParams::new(ModelKind::Bm, 0.1, 0.0, 0.2, 0.0, 0.0).is_err());
        assert!(ModelParams::new(ModelKind::Ou, 0.1, 0.0, 0.2, 0.3, 0.0).is_err());
        assert!(ModelParams::new(ModelKind::Ououbm, 0.1, 0.1, 0.2, 0.3, -1.0).is_err());
        let p = ModelParams::forced(ModelKind::Oubmbm, 0.1, 0.5, 0.2, 0.3, 0.4).unwrap();
        assert_eq!(p.alpha_theta, 0.0);
        assert_eq!(p.tau, 0.4);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
            assert_eq!(k.name().to_lowercase().parse::<ModelKind>().unwrap(), k);
        }
        assert!("OUX".parse::<ModelKind>().is_err());
    }
}
