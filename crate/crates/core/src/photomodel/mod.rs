//! BSE image formation: normal angles, the learnable quadrant forward model,
//! shadow masking, the quadrant-consistency regulariser and the classical
//! photometric-stereo baseline.

mod ps;

pub use ps::{integrate_gradients, ps_gradients, ps_reconstruct, GradientMaps, PsOptions};

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::Real;

#[derive(Debug, Error, PartialEq)]
pub enum PhotoError {
    #[error("normal {0:?} faces away from the detector")]
    FacingAway([f64; 3]),
    #[error("gradient integration did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("map sizes disagree: expected {expected} pixels, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("no valid pixel to integrate")]
    NoValidPixels,
    #[error("invalid forward model parameters: {0}")]
    InvalidParams(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    A,
    B,
    C,
    D,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::A, Quadrant::B, Quadrant::C, Quadrant::D];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Azimuth of the quadrant in the image frame.
    pub fn azimuth(self, detector_rotation: f64) -> f64 {
        detector_rotation
            + match self {
                Quadrant::A => 0.0,
                Quadrant::B => PI,
                Quadrant::C => FRAC_PI_2,
                Quadrant::D => 1.5 * PI,
            }
    }

    pub fn name(self) -> &'static str {
        ["A", "B", "C", "D"][self.index()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalAngles {
    pub theta: f64,
    pub phi: f64,
}

impl NormalAngles {
    pub fn to_normal(self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        [st * self.phi.cos(), st * self.phi.sin(), ct]
    }
}

/// Incidence and azimuth angles of a front-facing unit normal (beam along −z).
pub fn normal_to_angles(n: [f64; 3]) -> Result<NormalAngles, PhotoError> {
    if !(n[2] > 0.0) {
        return Err(PhotoError::FacingAway(n));
    }
    let rho = n[0].hypot(n[1]);
    let theta = rho.atan2(n[2]);
    let phi = if rho == 0.0 { 0.0 } else { n[1].atan2(n[0]) };
    Ok(NormalAngles { theta, phi })
}

/// Emission function variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardKind {
    /// `R(θ) = 1 + p1 θ + p2 θ² + p3 θ³ + p4 θ⁴`.
    #[default]
    Polynomial,
    /// `R(θ) = sec θ`; `p` is ignored.
    Secant,
}

/// Quadrant forward model parameters `Φ = {c, d, e, p}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardModelParams {
    pub c: [f64; 4],
    pub d: [f64; 4],
    pub e: [f64; 4],
    pub p: [f64; 4],
    pub detector_rotation: f64,
    #[serde(default)]
    pub kind: ForwardKind,
}

impl ForwardModelParams {
    /// Shared `c`, `d`, zero offset, `R ≡ 1`.
    pub fn lambertian(c: f64, d: f64) -> Self {
        Self {
            c: [c; 4],
            d: [d; 4],
            e: [0.0; 4],
            p: [0.0; 4],
            detector_rotation: 0.0,
            kind: ForwardKind::Polynomial,
        }
    }

    pub fn validate(&self) -> Result<(), PhotoError> {
        let all = self.c.iter().chain(&self.d).chain(&self.e).chain(&self.p);
        if !all.clone().all(|v| v.is_finite()) || !self.detector_rotation.is_finite() {
            return Err(PhotoError::InvalidParams("non-finite entry".into()));
        }
        if self.d.iter().any(|&d| d <= 0.0) {
            return Err(PhotoError::InvalidParams(format!("d must be positive, got {:?}", self.d)));
        }
        Ok(())
    }

    pub fn view(&self) -> PhiView<f64> {
        PhiView {
            c: self.c,
            d: self.d,
            e: self.e,
            p: self.p,
        }
    }

    /// Intensity for quadrant `q` at incidence `theta` and normal azimuth `phi`.
    pub fn intensity_at(&self, q: Quadrant, theta: f64, phi: f64) -> f64 {
        let i = q.index();
        let az = q.azimuth(self.detector_rotation);
        let (st, ct) = theta.sin_cos();
        let r = match self.kind {
            ForwardKind::Polynomial => emission_poly(theta, &self.p),
            ForwardKind::Secant => 1.0 / ct,
        };
        r * (self.d[i] * (az - phi).cos() * st + self.c[i] * ct) + self.e[i]
    }
}

/// Parameter values in whatever scalar type the caller is differentiating.
#[derive(Clone, Copy, Debug)]
pub struct PhiView<S> {
    pub c: [S; 4],
    pub d: [S; 4],
    pub e: [S; 4],
    pub p: [S; 4],
}

fn emission_poly<S: Real>(theta: S, p: &[S; 4]) -> S {
    // Horner: 1 + θ(p1 + θ(p2 + θ(p3 + θ p4)))
    (((p[3] * theta + p[2]) * theta + p[1]) * theta + p[0]) * theta + 1.0
}

/// Forward model for quadrant `q` at normal `n` (need not be unit length).
///
/// `θ` is taken as `atan2(‖(n_x, n_y)‖, n_z)` and `sinθ·cos(φ_q − φ)` as
/// `cos φ_q n_x + sin φ_q n_y` on the normalised vector, which keeps both the
/// value and its derivatives bounded at the pole.
pub fn forward<S: Real>(n: [S; 3], q: Quadrant, phi: &PhiView<S>, rotation: f64, kind: ForwardKind) -> S {
    let len = S::norm(&n);
    let (nx, ny, nz) = (n[0] / len, n[1] / len, n[2] / len);
    let i = q.index();
    let (sa, ca) = q.azimuth(rotation).sin_cos();
    let tilt = nx * ca + ny * sa;
    match kind {
        ForwardKind::Polynomial => {
            let theta = S::norm(&[nx, ny]).atan2(nz);
            emission_poly(theta, &phi.p) * (phi.d[i] * tilt + phi.c[i] * nz) + phi.e[i]
        }
        ForwardKind::Secant => phi.d[i] * tilt / nz + phi.c[i] + phi.e[i],
    }
}

/// Plain-float convenience wrapper around [`forward`].
pub fn bse_forward(n: [f64; 3], q: Quadrant, params: &ForwardModelParams) -> Result<f64, PhotoError> {
    if !(n[2] > 0.0) {
        return Err(PhotoError::FacingAway(n));
    }
    Ok(forward(n, q, &params.view(), params.detector_rotation, params.kind))
}

/// All four quadrant intensities at once.
pub fn bse_forward_all(n: [f64; 3], params: &ForwardModelParams) -> Result<[f64; 4], PhotoError> {
    let mut out = [0.0; 4];
    for q in Quadrant::ALL {
        out[q.index()] = bse_forward(n, q, params)?;
    }
    Ok(out)
}

/// `true` keeps the pixel: `|F − b| < α·d_q` (strict).
pub fn shadow_mask(f_pred: f64, b_obs: f64, q: Quadrant, params: &ForwardModelParams, alpha: f64) -> bool {
    (f_pred - b_obs).abs() < alpha * params.d[q.index()]
}

/// Population variance of four quadrant values.
pub fn variance4<S: Real>(v: &[S; 4]) -> S {
    let mean = S::sum(v) * 0.25;
    let dev: Vec<S> = v.iter().map(|&x| (x - mean) * (x - mean)).collect();
    S::sum(&dev) * 0.25
}

/// `Var(c) + Var(d) + Var(e)`; `p` is shared and not penalised.
pub fn phi_variance<S: Real>(phi: &PhiView<S>) -> S {
    variance4(&phi.c) + variance4(&phi.d) + variance4(&phi.e)
}

pub fn regularize_phi(params: &ForwardModelParams) -> f64 {
    phi_variance(&params.view())
}
