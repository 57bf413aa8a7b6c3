//! Tensor algebra and the two stress-strain laws.

use serde::{Deserialize, Serialize};

use super::FemError;

pub type Mat2 = [[f64; 2]; 2];
pub type Mat3 = [[f64; 3]; 3];

/// `σ21 − σ12`
pub fn asym2d(s: &Mat2) -> f64 {
    s[1][0] - s[0][1]
}

pub fn asym2d_adjoint(r: f64) -> Mat2 {
    [[0.0, -r], [r, 0.0]]
}

pub fn asym3d(s: &Mat3) -> [f64; 3] {
    [s[2][1] - s[1][2], s[0][2] - s[2][0], s[1][0] - s[0][1]]
}

pub fn asym3d_adjoint(r: [f64; 3]) -> Mat3 {
    [[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]]
}

pub fn trace(s: &Mat2) -> f64 {
    s[0][0] + s[1][1]
}

pub fn frobenius_inner(a: &Mat2, b: &Mat2) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

pub fn frobenius_norm(a: &Mat2) -> f64 {
    frobenius_inner(a, a).sqrt()
}

/// Trace-free part `τ − tr(τ)/2 · I`.
pub fn deviator(s: &Mat2) -> Mat2 {
    let half_tr = 0.5 * trace(s);
    [[s[0][0] - half_tr, s[0][1]], [s[1][0], s[1][1] - half_tr]]
}

/// Isotropic linear compliance with Lamé parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hooke {
    mu: f64,
    lambda: f64,
}

impl Hooke {
    pub fn new(mu: f64, lambda: f64) -> Result<Self, FemError> {
        if !(mu > 0.0) || !(2.0 * mu + 2.0 * lambda > 0.0) {
            return Err(FemError::InvalidLame { mu, lambda });
        }
        Ok(Self { mu, lambda })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Coefficient of `tr(σ) I` inside the compliance.
    pub(crate) fn trace_coupling(&self) -> f64 {
        self.lambda / (2.0 * self.mu + 2.0 * self.lambda)
    }

    /// `Aσ = 1/(2μ) (σ − λ/(2μ + 2λ) tr(σ) I)`
    pub fn apply(&self, s: &Mat2) -> Mat2 {
        let c = self.trace_coupling() * trace(s);
        let k = 0.5 / self.mu;
        [[k * (s[0][0] - c), k * s[0][1]], [k * s[1][0], k * (s[1][1] - c)]]
    }

    /// `A⁻¹ε = 2με + λ tr(ε) I`
    pub fn apply_inverse(&self, e: &Mat2) -> Mat2 {
        let l = self.lambda * trace(e);
        let m = 2.0 * self.mu;
        [[m * e[0][0] + l, m * e[0][1]], [m * e[1][0], m * e[1][1] + l]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HenckyVonMises {
    pub alpha: f64,
    pub beta: f64,
}

impl HenckyVonMises {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, FemError> {
        if !(alpha >= 0.0) || !(beta <= 2.0) {
            return Err(FemError::InvalidHencky { alpha, beta });
        }
        Ok(Self { alpha, beta })
    }

    pub fn shear_modulus(&self, zeta: f64) -> f64 {
        1.0 + (1.0 + zeta * zeta).powf(0.5 * (self.beta - 2.0))
    }

    /// Lamé parameters `(μ(ζ), λ(ζ))` for a deviatoric strain norm `ζ`.
    pub fn lame(&self, zeta: f64) -> Result<(f64, f64), FemError> {
        if !(zeta >= 0.0) {
            return Err(FemError::NegativeArgument(zeta));
        }
        let mu = self.shear_modulus(zeta);
        Ok((mu, self.alpha * (1.0 - 0.5 * mu)))
    }

    pub fn hooke(&self, zeta: f64) -> Result<Hooke, FemError> {
        let (mu, lambda) = self.lame(zeta)?;
        Hooke::new(mu, lambda)
    }

    /// Unique `ζ ≥ 0` with `2μ(ζ)ζ = s`.
    ///
    /// `ζ ↦ 2μ(ζ)ζ` is strictly increasing and lies between `2ζ` and `4ζ`, so the
    /// root is bracketed by `[s/4, s/2]`; Newton steps are kept inside the
    /// shrinking bracket.
    pub fn solve_zeta(&self, s: f64) -> Result<f64, FemError> {
        if !(s >= 0.0) {
            return Err(FemError::NegativeArgument(s));
        }
        if s == 0.0 {
            return Ok(0.0);
        }
        let tol = 1e-12 * s.max(1.0);
        let residual = |z: f64| 2.0 * self.shear_modulus(z) * z - s;
        let (mut lo, mut hi) = (0.25 * s, 0.5 * s);
        let mut z = 0.375 * s;
        for _ in 0..200 {
            let r = residual(z);
            if r.abs() <= tol {
                return Ok(z);
            }
            if r > 0.0 {
                hi = z;
            } else {
                lo = z;
            }
            let q = 1.0 + z * z;
            let dmu = (self.beta - 2.0) * z * q.powf(0.5 * (self.beta - 4.0));
            let slope = 2.0 * self.shear_modulus(z) + 2.0 * z * dmu;
            let newton = z - r / slope;
            z = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        Ok(z)
    }
}

/// Constitutive law of a case study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ConstitutiveLaw {
    Hooke(Hooke),
    HenckyVonMises(HenckyVonMises),
}
