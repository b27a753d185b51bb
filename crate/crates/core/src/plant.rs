//! Agent models: the linearized cart-pole, its discretizations and the
//! stochastic step `x⁺ = A x + B u + v`, plus the input disturbance.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{min_eigenvalue_symmetric, psd_factor, zoh_discretize, Matrix, PSD_TOLERANCE};

/// Continuous-time LTI agent `dx/dt = A x + B u + w`, with `w` white noise
/// of spectral density `noise_density`.
#[derive(Debug, Clone)]
pub struct ContinuousModel {
    pub a: Matrix,
    pub b: Matrix,
    pub noise_density: Matrix,
    pub labels: Vec<String>,
}

impl ContinuousModel {
    pub fn new(a: Matrix, b: Matrix, noise_density: Matrix, labels: Vec<String>) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() || b.rows() != n || noise_density.shape() != (n, n) || labels.len() != n {
            return Err(Error::dim(format!(
                "A {:?}, B {:?}, noise {:?}, {} labels",
                a.shape(),
                b.shape(),
                noise_density.shape(),
                labels.len()
            )));
        }
        check_covariance(&noise_density, "noise density")?;
        Ok(Self {
            a,
            b,
            noise_density,
            labels,
        })
    }

    pub fn states(&self) -> usize {
        self.a.rows()
    }

    pub fn inputs(&self) -> usize {
        self.b.cols()
    }

    /// Replaces the process-noise density (state²/s).
    pub fn with_noise_density(mut self, noise_density: Matrix) -> Result<Self> {
        if noise_density.shape() != self.a.shape() {
            return Err(Error::dim("noise density must match the state dimension"));
        }
        check_covariance(&noise_density, "noise density")?;
        self.noise_density = noise_density;
        Ok(self)
    }
}

fn check_covariance(m: &Matrix, name: &str) -> Result<()> {
    if m.asymmetry() > 1e-12 * m.max_abs().max(1.0) {
        return Err(Error::arg(format!("{name} must be symmetric")));
    }
    if m.rows() > 0 && min_eigenvalue_symmetric(m) < -PSD_TOLERANCE {
        return Err(Error::arg(format!("{name} must be positive semidefinite")));
    }
    Ok(())
}

/// Physical parameters of a cart with an inverted point-mass pendulum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPoleParams {
    /// kg
    pub cart_mass: f64,
    /// kg
    pub pole_mass: f64,
    /// Pivot to pole mass, m.
    pub pole_length: f64,
    /// m/s²
    pub gravity: f64,
    /// Viscous cart friction, N·s/m.
    pub cart_friction: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 0.5,
            pole_mass: 0.2,
            pole_length: 0.5,
            gravity: 9.81,
            cart_friction: 0.1,
        }
    }
}

/// Default process-noise density: `1e-4` on both velocity states.
pub fn default_noise_density() -> Matrix {
    Matrix::diag(&[0.0, 1e-4, 0.0, 1e-4])
}

/// Linearization of the cart-pole about the upright equilibrium.
///
/// State `(s, ṡ, θ, θ̇)` with `θ = 0` upright; the single input is the force
/// on the cart.
pub fn cartpole_linear(params: &CartPoleParams) -> Result<ContinuousModel> {
    let CartPoleParams {
        cart_mass: mc,
        pole_mass: mp,
        pole_length: l,
        gravity: g,
        cart_friction: b,
    } = *params;
    if !(mc > 0.0 && mp > 0.0 && l > 0.0) {
        return Err(Error::arg(format!(
            "cart-pole masses and length must be positive (cart {mc}, pole {mp}, length {l})"
        )));
    }
    if !(g >= 0.0) || !(b >= 0.0) {
        return Err(Error::arg("gravity and friction must be non-negative"));
    }
    let a = Matrix::from_rows(&[
        &[0.0, 1.0, 0.0, 0.0],
        &[0.0, -b / mc, -mp * g / mc, 0.0],
        &[0.0, 0.0, 0.0, 1.0],
        &[0.0, b / (mc * l), (mc + mp) * g / (mc * l), 0.0],
    ])?;
    let input = Matrix::column(&[0.0, 1.0 / mc, 0.0, -1.0 / (mc * l)]);
    let labels = ["s", "s_dot", "theta", "theta_dot"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    ContinuousModel::new(a, input, default_noise_density(), labels)
}

/// Sampled agent model. `sigma` is the process-noise covariance per step.
#[derive(Debug, Clone)]
pub struct DiscreteModel {
    pub a: Matrix,
    pub b: Matrix,
    pub sigma: Matrix,
    pub dt: f64,
    noise_factor: Option<Matrix>,
}

impl DiscreteModel {
    pub fn new(a: Matrix, b: Matrix, sigma: Matrix, dt: f64) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() || b.rows() != n || sigma.shape() != (n, n) {
            return Err(Error::dim(format!(
                "A {:?}, B {:?}, Sigma {:?}",
                a.shape(),
                b.shape(),
                sigma.shape()
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::arg(format!("dt must be positive, got {dt}")));
        }
        check_covariance(&sigma, "Sigma")?;
        let noise_factor = if sigma.max_abs() == 0.0 {
            None
        } else {
            Some(psd_factor(&sigma)?)
        };
        Ok(Self {
            a,
            b,
            sigma,
            dt,
            noise_factor,
        })
    }

    pub fn states(&self) -> usize {
        self.a.rows()
    }

    pub fn inputs(&self) -> usize {
        self.b.cols()
    }

    /// Deterministic part of the step, `A x + B u`.
    pub fn drift(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.states() || u.len() != self.inputs() {
            return Err(Error::dim(format!(
                "state has {} entries (want {}), input {} (want {})",
                x.len(),
                self.states(),
                u.len(),
                self.inputs()
            )));
        }
        let ax = self.a.mul_vec(x);
        let bu = self.b.mul_vec(u);
        Ok(ax.iter().zip(&bu).map(|(a, b)| a + b).collect())
    }

    /// `A x + B u + v` with `v ~ N(0, Sigma)`. No draws are taken when
    /// `Sigma = 0`.
    pub fn step<R: Rng + ?Sized>(&self, x: &[f64], u: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mut next = self.drift(x, u)?;
        if let Some(v) = self.sample_noise(rng) {
            for (xi, vi) in next.iter_mut().zip(v) {
                *xi += vi;
            }
        }
        Ok(next)
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<f64>> {
        let factor = self.noise_factor.as_ref()?;
        let z: Vec<f64> = (0..self.states())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Some(factor.mul_vec(&z))
    }
}

/// ZOH discretization with per-step covariance `noise_density · dt`.
pub fn discretize_model(model: &ContinuousModel, dt: f64) -> Result<DiscreteModel> {
    let (a, b) = zoh_discretize(&model.a, &model.b, dt)?;
    DiscreteModel::new(a, b, model.noise_density.scale(dt), dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DisturbanceKind {
    None,
    /// `amplitude · sin(2πt / period)`
    Sine { amplitude: f64, period: f64 },
}

/// Additive offset on one agent's applied input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disturbance {
    pub kind: DisturbanceKind,
    pub target_agent: usize,
}

impl Default for Disturbance {
    fn default() -> Self {
        Self {
            kind: DisturbanceKind::Sine {
                amplitude: 5.0,
                period: 3.6,
            },
            target_agent: 1,
        }
    }
}

impl Disturbance {
    pub fn none() -> Self {
        Self {
            kind: DisturbanceKind::None,
            target_agent: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            DisturbanceKind::Sine { amplitude, period } => {
                if !(period > 0.0) || !period.is_finite() {
                    return Err(Error::arg(format!(
                        "disturbance period must be positive, got {period}"
                    )));
                }
                if !amplitude.is_finite() {
                    return Err(Error::arg("disturbance amplitude must be finite"));
                }
                Ok(())
            }
            DisturbanceKind::None => Ok(()),
        }
    }

    /// Signal value at time `t`, regardless of the target.
    pub fn value(&self, t: f64) -> f64 {
        match self.kind {
            DisturbanceKind::None => 0.0,
            DisturbanceKind::Sine { amplitude, period } => {
                amplitude * (std::f64::consts::TAU * t / period).sin()
            }
        }
    }

    /// Offset applied to `agent`'s input at time `t`.
    pub fn offset_for(&self, agent: usize, t: f64) -> f64 {
        if agent == self.target_agent {
            self.value(t)
        } else {
            0.0
        }
    }
}
