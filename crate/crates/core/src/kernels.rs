//! Scalar and vector kernels used by the graph and controller code: the smooth
//! cut-off (bump) function, the σ-norm and its gradient, the un-even sigmoid and
//! the pairwise action function.
//!
//! All kernels are total over their preconditions. Parameters are validated once
//! when a [`KernelParams`] is built, never per call.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::ParamError;
use crate::vec2::Vec2;

/// Smooth cut-off with plateau `1` on `[0, z1)`, a raised-cosine decay on
/// `[z1, z0)` and `0` from `z0` on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    z1: f64,
    z0: f64,
}

impl Bump {
    pub fn new(z1: f64, z0: f64) -> Result<Self, ParamError> {
        if !(z1.is_finite() && z0.is_finite()) || z1 < 0.0 || z1 >= z0 {
            return Err(ParamError::new(format!(
                "bump cut-offs must satisfy 0 <= z1 < z0 (got z1={z1}, z0={z0})"
            )));
        }
        Ok(Self { z1, z0 })
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        if z < self.z1 {
            1.0
        } else if z < self.z0 {
            0.5 * (1.0 + (PI * (z - self.z1) / (self.z0 - self.z1)).cos())
        } else {
            0.0
        }
    }
}

/// One-shot evaluation of the bump function.
pub fn bump(z: f64, z1: f64, z0: f64) -> Result<f64, ParamError> {
    Ok(Bump::new(z1, z0)?.eval(z))
}

/// σ-norm expressed through the squared Euclidean norm.
#[inline]
pub fn sigma_from_norm_sq(norm_sq: f64, epsilon: f64) -> f64 {
    let root = (1.0 + epsilon * norm_sq).sqrt();
    // (√(1+εs) − 1)/ε rewritten as s/(√(1+εs) + 1) to avoid cancellation near 0.
    norm_sq / (root + 1.0)
}

/// σ-norm of an arbitrary-dimension vector (a scalar is a 1-D vector).
pub fn sigma_norm(x: &[f64], epsilon: f64) -> f64 {
    sigma_from_norm_sq(x.iter().map(|v| v * v).sum(), epsilon)
}

#[inline]
pub fn sigma_norm_vec(x: Vec2, epsilon: f64) -> f64 {
    sigma_from_norm_sq(x.norm_sq(), epsilon)
}

#[inline]
pub fn sigma_norm_scalar(x: f64, epsilon: f64) -> f64 {
    sigma_from_norm_sq(x * x, epsilon)
}

/// Gradient of the σ-norm: `x / √(1 + ε‖x‖²)`.
pub fn sigma_gradient(x: &[f64], epsilon: f64) -> Vec<f64> {
    let scale = 1.0 / (1.0 + epsilon * x.iter().map(|v| v * v).sum::<f64>()).sqrt();
    x.iter().map(|v| v * scale).collect()
}

#[inline]
pub fn sigma_gradient_vec(x: Vec2, epsilon: f64) -> Vec2 {
    x * (1.0 / (1.0 + epsilon * x.norm_sq()).sqrt())
}

/// Un-even sigmoid `½[(a+b)(z+c)/√(1+(z+c)²) + (a−b)]` with `c = |a−b|/√(4ab)`.
#[inline]
pub fn phi(z: f64, a: f64, b: f64) -> f64 {
    let c = (a - b).abs() / (4.0 * a * b).sqrt();
    phi_with_offset(z, a, b, c)
}

#[inline]
fn phi_with_offset(z: f64, a: f64, b: f64, c: f64) -> f64 {
    let w = z + c;
    0.5 * ((a + b) * w / (1.0 + w * w).sqrt() + (a - b))
}

/// Validated kernel parameters plus the derived constants every hot loop needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelParamsRaw", into = "KernelParamsRaw")]
pub struct KernelParams {
    epsilon: f64,
    gamma: f64,
    r: f64,
    d: f64,
    a: f64,
    b: f64,
    c: f64,
    r_sigma: f64,
    d_sigma: f64,
    link: Bump,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelParamsRaw {
    epsilon: f64,
    gamma: f64,
    r: f64,
    d: f64,
    a: f64,
    b: f64,
}

impl TryFrom<KernelParamsRaw> for KernelParams {
    type Error = ParamError;
    fn try_from(raw: KernelParamsRaw) -> Result<Self, ParamError> {
        KernelParams::new(raw.epsilon, raw.gamma, raw.r, raw.d, raw.a, raw.b)
    }
}

impl From<KernelParams> for KernelParamsRaw {
    fn from(k: KernelParams) -> Self {
        KernelParamsRaw {
            epsilon: k.epsilon,
            gamma: k.gamma,
            r: k.r,
            d: k.d,
            a: k.a,
            b: k.b,
        }
    }
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams::new(0.1, 0.2, 24.0, 20.0, 5.0, 5.0).expect("default kernel parameters")
    }
}

impl KernelParams {
    pub fn new(epsilon: f64, gamma: f64, r: f64, d: f64, a: f64, b: f64) -> Result<Self, ParamError> {
        let all = [epsilon, gamma, r, d, a, b];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ParamError::new("kernel parameters must be finite"));
        }
        if epsilon <= 0.0 {
            return Err(ParamError::new("epsilon must be > 0"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(ParamError::new("gamma must lie in (0, 1)"));
        }
        if r <= 0.0 {
            return Err(ParamError::new("r must be > 0"));
        }
        if d < 0.0 {
            return Err(ParamError::new("d must be >= 0"));
        }
        if d >= r {
            return Err(ParamError::new("d must be < r"));
        }
        if a <= 0.0 || b <= 0.0 {
            return Err(ParamError::new("a and b must be > 0"));
        }
        Ok(Self {
            epsilon,
            gamma,
            r,
            d,
            a,
            b,
            c: (a - b).abs() / (4.0 * a * b).sqrt(),
            r_sigma: sigma_norm_scalar(r, epsilon),
            d_sigma: sigma_norm_scalar(d, epsilon),
            link: Bump::new(gamma, 1.0)?,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn r(&self) -> f64 {
        self.r
    }
    pub fn d(&self) -> f64 {
        self.d
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    /// ‖r‖_σ
    pub fn r_sigma(&self) -> f64 {
        self.r_sigma
    }
    /// ‖d‖_σ
    pub fn d_sigma(&self) -> f64 {
        self.d_sigma
    }

    /// Link strength for a σ-distance `z`: `bump(z/‖r‖_σ; γ, 1)`.
    #[inline]
    pub fn link_weight(&self, z: f64) -> f64 {
        self.link.eval(z / self.r_sigma)
    }

    #[inline]
    pub fn phi(&self, z: f64) -> f64 {
        phi_with_offset(z, self.a, self.b, self.c)
    }

    /// Pairwise action function: repulsive below ‖d‖_σ, zero from ‖r‖_σ on.
    #[inline]
    pub fn psi(&self, z: f64) -> f64 {
        self.link_weight(z) * self.phi(z - self.d_sigma)
    }
}

/// Free-function form of [`KernelParams::psi`].
pub fn psi(z: f64, params: &KernelParams) -> f64 {
    params.psi(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_branches() {
        assert_eq!(bump(0.1, 0.2, 1.0).unwrap(), 1.0);
        assert_eq!(bump(1.5, 0.2, 1.0).unwrap(), 0.0);
        assert!((bump(0.6, 0.2, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(bump(1.0, 0.2, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn bump_rejects_bad_cutoffs() {
        assert!(bump(0.5, 1.0, 1.0).is_err());
        assert!(bump(0.5, 1.2, 1.0).is_err());
        assert!(bump(0.5, -0.1, 1.0).is_err());
        assert!(Bump::new(0.0, 1.0).is_ok());
    }

    #[test]
    fn bump_continuous_and_non_increasing() {
        let b = Bump::new(0.2, 1.0).unwrap();
        let n = 10_000;
        let mut prev = b.eval(0.0);
        for i in 1..=n {
            let z = 1.5 * i as f64 / n as f64;
            let v = b.eval(z);
            assert!(v <= prev + 1e-15, "increase at z={z}");
            // step is 1.5e-4; the cosine slope is at most π/(2·0.8) ≈ 1.96
            assert!((prev - v) < 1e-3, "jump at z={z}");
            prev = v;
        }
    }

    #[test]
    fn sigma_norm_values() {
        assert_eq!(sigma_norm(&[0.0, 0.0], 0.1), 0.0);
        let v = sigma_norm(&[30f64.sqrt(), 0.0], 0.1);
        assert!((v - 10.0).abs() < 1e-12, "{v}");
        let s = sigma_norm(&[80.0], 0.1);
        assert!((s - (641f64.sqrt() - 1.0) / 0.1).abs() < 1e-10);
        assert_eq!(s, sigma_norm_scalar(80.0, 0.1));
    }

    #[test]
    fn sigma_gradient_values() {
        assert_eq!(sigma_gradient(&[0.0, 0.0], 0.1), vec![0.0, 0.0]);
        let g = sigma_gradient_vec(Vec2::new(30f64.sqrt(), 0.0), 0.1);
        assert!((g.x - 30f64.sqrt() / 2.0).abs() < 1e-14);
        assert_eq!(g.y, 0.0);
    }

    #[test]
    fn phi_values() {
        assert_eq!(phi(0.0, 5.0, 5.0), 0.0);
        assert!((phi(1.0, 5.0, 5.0) - 5.0 / 2f64.sqrt()).abs() < 1e-12);
        for i in -1000..=1000 {
            let z = i as f64 * 0.37;
            let v = phi(z, 5.0, 5.0);
            assert!(v > -5.0 && v < 5.0);
        }
        // uneven: through the origin only when a <= b, otherwise phi(0) = a - b
        assert!(phi(0.0, 2.0, 5.0).abs() < 1e-12);
        assert!((phi(0.0, 5.0, 2.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn psi_sign_and_support() {
        let k = KernelParams::default();
        assert!(psi(k.d_sigma(), &k).abs() < 1e-12);
        assert_eq!(psi(k.r_sigma() + 1e-9, &k), 0.0);
        assert_eq!(psi(k.r_sigma() * 3.0, &k), 0.0);
        for i in 0..200 {
            let z = k.d_sigma() * i as f64 / 200.0;
            assert!(psi(z, &k) < 0.0, "z={z}");
        }
    }

    #[test]
    fn kernel_params_validation() {
        assert!(KernelParams::new(0.1, 0.2, 24.0, 30.0, 5.0, 5.0).is_err());
        assert!(KernelParams::new(0.0, 0.2, 24.0, 20.0, 5.0, 5.0).is_err());
        assert!(KernelParams::new(0.1, 1.0, 24.0, 20.0, 5.0, 5.0).is_err());
        assert!(KernelParams::new(0.1, 0.2, 24.0, 20.0, 0.0, 5.0).is_err());
        assert!(KernelParams::new(0.1, 0.2, 24.0, 0.0, 5.0, 5.0).is_ok());
        let k = KernelParams::default();
        assert_eq!(k.c(), 0.0);
    }
}
