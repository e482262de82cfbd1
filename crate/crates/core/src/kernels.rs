//! Radial kernels: thin-plate splines and Matern (Bessel-potential) kernels,
//! together with the parameter bundle that ties them to the polynomial space.
//!
//! The Matern kernel in odd dimensions uses the exponential closed form; in
//! even dimensions it is evaluated by adaptive quadrature of its integral
//! representation, avoiding a modified-Bessel dependency. Closed-form
//! prefactors are carried exactly, but the default convention drops them
//! (`phi(x) = e^{-b||x||}`-style), since a positive rescaling of the kernel
//! only rescales the coefficient vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel family selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    /// Fundamental solution of `(-Laplace)^k`; requires `k_min = k`.
    ThinPlateSpline,
    /// Fundamental solution of `(b^2 - Laplace)^k`; requires `k_min = 0`.
    Matern { b: f64 },
}

/// Kernel family plus the parameters `(d, k, k_min, sigma_l)` that define the
/// differential operator `sum_l sigma_l (-Laplace)^l` and the polynomial
/// space `P` of degree `< k_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    dim: usize,
    k: u32,
    k_min: u32,
    family: KernelFamily,
    sigmas: Vec<f64>,
    normalize_prefactor: bool,
    scale: f64,
}

impl KernelSpec {
    /// Thin-plate spline `C ||x||^{2k-d}` (times `ln||x||` in even dimensions).
    pub fn thin_plate_spline(dim: usize, k: u32) -> Result<Self> {
        Self::validate_dk(dim, k)?;
        let mut spec = KernelSpec {
            dim,
            k,
            k_min: k,
            family: KernelFamily::ThinPlateSpline,
            sigmas: vec![1.0],
            normalize_prefactor: false,
            scale: 1.0,
        };
        spec.update_scale();
        Ok(spec)
    }

    /// Matern kernel with shape parameter `b > 0` and `k_min = 0`.
    pub fn matern(dim: usize, k: u32, b: f64) -> Result<Self> {
        Self::validate_dk(dim, k)?;
        if !(b > 0.0) {
            return Err(Error::InvalidInput("matern parameter b must be > 0".into()));
        }
        let mut spec = KernelSpec {
            dim,
            k,
            k_min: 0,
            family: KernelFamily::Matern { b },
            sigmas: matern_sigmas(k, b),
            normalize_prefactor: false,
            scale: 1.0,
        };
        spec.update_scale();
        Ok(spec)
    }

    fn validate_dk(dim: usize, k: u32) -> Result<()> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if 2 * k as usize <= dim {
            return Err(Error::InvalidInput(format!(
                "Sobolev embedding needs k > d/2, got k = {k}, d = {dim}"
            )));
        }
        Ok(())
    }

    /// Toggle the exact fundamental-solution prefactor. Off by default.
    pub fn normalize_prefactor(mut self, on: bool) -> Self {
        self.normalize_prefactor = on;
        self.update_scale();
        self
    }

    fn update_scale(&mut self) {
        self.scale = if self.normalize_prefactor {
            self.prefactor()
        } else {
            1.0
        };
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn k_min(&self) -> u32 {
        self.k_min
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    /// Coefficients `sigma_{k_min}..sigma_k` of the differential operator.
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn is_normalized(&self) -> bool {
        self.normalize_prefactor
    }

    /// The exact closed-form constant multiplying the radial profile.
    pub fn prefactor(&self) -> f64 {
        let d = self.dim;
        let k = self.k;
        match self.family {
            KernelFamily::ThinPlateSpline => {
                if d % 2 == 1 {
                    // C1 = Gamma(d/2 - k) / (4^k pi^{d/2} (k-1)!)
                    gamma_half(d as i64 - 2 * k as i64)
                        / (4f64.powi(k as i32) * pi_pow_half(d) * factorial(k as u64 - 1))
                } else {
                    // C2 = (-1)^{k + (d-2)/2} / (2^{2k-1} pi^{d/2} (k-1)! (k-d/2)!)
                    let sign = if (k as usize + (d - 2) / 2) % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    };
                    sign / (2f64.powi(2 * k as i32 - 1)
                        * pi_pow_half(d)
                        * factorial(k as u64 - 1)
                        * factorial(k as u64 - d as u64 / 2))
                }
            }
            KernelFamily::Matern { b } => {
                if d % 2 == 1 {
                    // (4 pi)^{(1-d)/2} / (Gamma(k) (2b)^{2L+1}), L = k - (d+1)/2
                    let l_max = k as i64 - (d as i64 + 1) / 2;
                    (4.0 * std::f64::consts::PI).powi(((1 - d as i64) / 2) as i32)
                        / (factorial(k as u64 - 1) * (2.0 * b).powi(2 * l_max as i32 + 1))
                } else {
                    // (4 pi)^{-d/2} / Gamma(k)
                    (4.0 * std::f64::consts::PI).powi(-(d as i32 / 2))
                        / factorial(k as u64 - 1)
                }
            }
        }
    }

    /// `dim P = binom(d + k_min - 1, d)`; zero when `k_min = 0`.
    pub fn poly_space_dim(&self) -> usize {
        poly_space_dim(self.dim, self.k_min)
    }

    /// Kernel value at the difference vector `x`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        self.eval_radial(r)
    }

    /// Kernel value at radius `r >= 0`.
    pub fn eval_radial(&self, r: f64) -> f64 {
        let d = self.dim;
        match self.family {
            KernelFamily::ThinPlateSpline => {
                // 2k - d >= 1, so the limit at r = 0 is 0 in both parities.
                if r == 0.0 {
                    return 0.0;
                }
                let pow = r.powi(2 * self.k as i32 - d as i32);
                if d % 2 == 0 {
                    self.scale * pow * r.ln()
                } else {
                    self.scale * pow
                }
            }
            KernelFamily::Matern { b } => {
                if d % 2 == 1 {
                    let l_max = self.k as i64 - (d as i64 + 1) / 2;
                    let z = 2.0 * b * r;
                    let mut sum = 0.0;
                    for l in 0..=l_max {
                        let coef = factorial((2 * l_max - l) as u64)
                            / (factorial(l as u64) * factorial((l_max - l) as u64));
                        sum += coef * z.powi(l as i32);
                    }
                    self.scale * sum * (-b * r).exp()
                } else {
                    self.scale * matern_integral(d, self.k, b, r)
                }
            }
        }
    }
}

/// Coefficients `sigma_l = binom(k, l) b^{2(k-l)}` of `(b^2 - Laplace)^k`.
pub fn matern_sigmas(k: u32, b: f64) -> Vec<f64> {
    (0..=k)
        .map(|l| binomial(k as u64, l as u64) * b.powi(2 * (k - l) as i32))
        .collect()
}

/// `binom(d + k_min - 1, d)`, the dimension of polynomials of degree `< k_min`.
pub fn poly_space_dim(dim: usize, k_min: u32) -> usize {
    binomial(dim as u64 + k_min as u64 - 1, dim as u64) as usize
}

/// `I(r) = int_0^inf t^{k - d/2 - 1} e^{-b^2 t - r^2/(4t)} dt`, the integral
/// form of the Matern radial profile (valid in every dimension with
/// `2k > d`), by adaptive Gauss-Kronrod quadrature after substituting
/// `t = e^s`. Relative tolerance 1e-12.
pub fn matern_integral(dim: usize, k: u32, b: f64, r: f64) -> f64 {
    let a = k as f64 - dim as f64 / 2.0;
    let b2 = b * b;
    let q = r * r / 4.0;
    let exponent = move |s: f64| {
        let decay = if q > 0.0 { q * (-s).exp() } else { 0.0 };
        a * s - b2 * s.exp() - decay
    };
    let t_star = (a + (a * a + 4.0 * b2 * q).sqrt()) / (2.0 * b2);
    let s_star = t_star.ln();
    let g0 = exponent(s_star);
    let mut s_lo = s_star - 1.0;
    while exponent(s_lo) - g0 > -60.0 {
        s_lo -= 1.0;
    }
    let mut s_hi = s_star + 1.0;
    while exponent(s_hi) - g0 > -60.0 {
        s_hi += 1.0;
    }
    let f = |s: f64| (exponent(s) - g0).exp();
    g0.exp() * quad::adaptive_gk15(&f, s_lo, s_hi, 1e-12)
}

/// `n!` as f64. Exact for `n <= 20`.
fn factorial(n: u64) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// `pi^{d/2}` with the half power split off exactly.
fn pi_pow_half(d: usize) -> f64 {
    let whole = std::f64::consts::PI.powi((d / 2) as i32);
    if d % 2 == 1 {
        whole * std::f64::consts::PI.sqrt()
    } else {
        whole
    }
}

/// `Gamma(two_z / 2)` for integer or half-integer argument. Negative
/// half-integers go through the reflection formula; the sign of
/// `sin(pi z)` is resolved exactly from `two_z mod 4`.
fn gamma_half(two_z: i64) -> f64 {
    if two_z > 0 {
        if two_z % 2 == 0 {
            factorial((two_z / 2 - 1) as u64)
        } else {
            let m = (two_z - 1) / 2;
            let mut acc = std::f64::consts::PI.sqrt();
            for j in 1..=m {
                acc *= j as f64 - 0.5;
            }
            acc
        }
    } else {
        assert!(two_z % 2 != 0, "gamma pole at nonpositive integer");
        let sign = if two_z.rem_euclid(4) == 1 { 1.0 } else { -1.0 };
        std::f64::consts::PI / (sign * gamma_half(2 - two_z))
    }
}

/// Kernel selection as it appears in config files and manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelConfig {
    pub family: String,
    pub d: usize,
    pub k: u32,
    pub k_min: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default)]
    pub normalize_prefactor: bool,
}

impl KernelConfig {
    pub fn from_spec(spec: &KernelSpec) -> Self {
        KernelConfig {
            family: match spec.family() {
                KernelFamily::ThinPlateSpline => "tps".into(),
                KernelFamily::Matern { .. } => "matern".into(),
            },
            d: spec.dim(),
            k: spec.k(),
            k_min: spec.k_min(),
            b: match spec.family() {
                KernelFamily::Matern { b } => Some(b),
                KernelFamily::ThinPlateSpline => None,
            },
            normalize_prefactor: spec.is_normalized(),
        }
    }

    pub fn to_spec(&self) -> Result<KernelSpec> {
        let spec = match self.family.as_str() {
            "tps" => {
                if self.k_min != self.k {
                    return Err(Error::InvalidInput(
                        "thin-plate spline requires k_min = k".into(),
                    ));
                }
                KernelSpec::thin_plate_spline(self.d, self.k)?
            }
            "matern" => {
                if self.k_min != 0 {
                    return Err(Error::InvalidInput("matern requires k_min = 0".into()));
                }
                let b = self
                    .b
                    .ok_or_else(|| Error::InvalidInput("matern requires parameter b".into()))?;
                KernelSpec::matern(self.d, self.k, b)?
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown kernel family {other:?}"
                )))
            }
        };
        Ok(spec.normalize_prefactor(self.normalize_prefactor))
    }
}

mod quad {
    //! Adaptive Gauss-Kronrod (G7, K15) quadrature.

    // QUADPACK qk15 abscissae (positive half) and weights.
    const XGK: [f64; 8] = [
        0.991455371120813,
        0.949107912342759,
        0.864864423359769,
        0.741531185599394,
        0.586087235467691,
        0.405845151377397,
        0.207784955007898,
        0.0,
    ];
    const WGK: [f64; 8] = [
        0.022935322010529,
        0.063092092629979,
        0.104790010322250,
        0.140653259715525,
        0.169004726639267,
        0.190350578064785,
        0.204432940075298,
        0.209482141084728,
    ];
    const WG: [f64; 4] = [
        0.129484966168870,
        0.279705391489277,
        0.381830050505119,
        0.417959183673469,
    ];

    fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let fc = f(c);
        let mut kronrod = WGK[7] * fc;
        let mut gauss = WG[3] * fc;
        for i in 0..7 {
            let x = h * XGK[i];
            let pair = f(c - x) + f(c + x);
            kronrod += WGK[i] * pair;
            if i % 2 == 1 {
                gauss += WG[i / 2] * pair;
            }
        }
        (h * kronrod, h * gauss)
    }

    fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (k, g) = gk15(f, a, b);
        if (k - g).abs() <= tol || depth >= 50 {
            k
        } else {
            let m = 0.5 * (a + b);
            adapt(f, a, m, 0.5 * tol, depth + 1) + adapt(f, m, b, 0.5 * tol, depth + 1)
        }
    }

    /// Integrates `f` over `[a, b]` to the given relative tolerance.
    pub fn adaptive_gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
        let (rough, _) = gk15(f, a, b);
        let tol = rel_tol * rough.abs().max(f64::MIN_POSITIVE);
        adapt(f, a, b, tol, 0)
    }
}
