//! Standard normal distribution routines.
//!
//! Everything goes through the complementary error function so that tail
//! probabilities keep full relative precision; the selection criteria take
//! logs of probabilities that can sit very close to 0 or 1.

use libm::erfc;
use statrs::function::erf::erfc_inv;

use crate::error::{CatError, Result};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Standard normal CDF Φ(x).
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal density φ(x).
#[inline]
pub fn pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Upper tail 1 − Φ(x) without cancellation.
#[inline]
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Inverse of the standard normal CDF.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        return -quantile(1.0 - p);
    }
    // erfc_inv alone is good to ~1e-12; one Halley step restores full precision
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    let u = (cdf(x) - p) / pdf(x);
    if !u.is_finite() {
        return x;
    }
    x - u / (1.0 + 0.5 * x * u)
}

/// Inverse of the upper tail: the `x` with 1 − Φ(x) = p.
#[inline]
pub fn inverse_sf(p: f64) -> f64 {
    -quantile(p)
}

/// Clamp a probability to `[PROB_FLOOR, 1 - PROB_FLOOR]`.
#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// log(1 − Φ(x)), accurate for arbitrarily large `x`.
pub fn ln_sf(x: f64) -> f64 {
    if x < 37.0 {
        return sf(x).ln();
    }
    // asymptotic Mills-ratio expansion; erfc underflows past here
    let inv2 = 1.0 / (x * x);
    let series = 1.0 - inv2 * (1.0 - 3.0 * inv2 * (1.0 - 5.0 * inv2 * (1.0 - 7.0 * inv2)));
    -0.5 * x * x - x.ln() - LN_SQRT_2PI + series.ln()
}

/// log Φ(x).
#[inline]
pub fn ln_cdf(x: f64) -> f64 {
    ln_sf(-x)
}

/// log P(a < Z < b) for Z ~ N(0, 1), stable for any a < b.
pub fn ln_prob_between(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        let pa = ln_sf(a);
        let pb = ln_sf(b);
        pa + (-(pb - pa).exp()).ln_1p()
    } else if b < 0.0 {
        let pa = ln_sf(-a);
        let pb = ln_sf(-b);
        pb + (-(pa - pb).exp()).ln_1p()
    } else {
        let pa = sf(-a);
        let pb = sf(b);
        (-pa - pb).ln_1p()
    }
}

/// Mean and variance of Z ~ N(0, 1) truncated to `[a, ∞)`.
pub fn truncated_moments_lower(a: f64) -> (f64, f64) {
    if a == f64::NEG_INFINITY {
        return (0.0, 1.0);
    }
    let lambda = (-0.5 * a * a - LN_SQRT_2PI - ln_sf(a)).exp();
    let mean = lambda;
    let var = 1.0 + a * lambda - lambda * lambda;
    (mean, var)
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Multivariate normal CDF P(X ≤ upper) for X ~ N(0, Σ), for small dimensions.
///
/// Uses the sequential conditioning (separation-of-variables) transform over
/// the Cholesky factor of Σ and deterministic composite Gauss–Legendre
/// quadrature over the resulting unit cube. Cost grows as `nodes^(d-1)`, so
/// only `d ≤ 4` is accepted.
pub fn mvn_cdf(upper: &[f64], sigma: &nalgebra::DMatrix<f64>) -> Result<f64> {
    let d = upper.len();
    if sigma.nrows() != d || sigma.ncols() != d {
        return Err(CatError::DimensionMismatch {
            expected: d,
            got: sigma.nrows(),
        });
    }
    if d == 0 {
        return Ok(1.0);
    }
    let diagonal =
        (0..d).all(|i| (0..d).all(|j| i == j || sigma[(i, j)].abs() <= 1e-13 * (sigma[(i, i)] * sigma[(j, j)]).sqrt()));
    if diagonal {
        if (0..d).any(|i| !(sigma[(i, i)] > 0.0)) {
            return Err(CatError::Factorization("covariance not positive definite".into()));
        }
        return Ok((0..d).map(|i| cdf(upper[i] / sigma[(i, i)].sqrt())).product());
    }
    if d > 4 {
        return Err(CatError::Unsupported(format!(
            "multivariate normal CDF by quadrature supports d <= 4, got {d}"
        )));
    }
    let chol = nalgebra::Cholesky::new(sigma.clone())
        .ok_or_else(|| CatError::Factorization("covariance not positive definite".into()))?;
    let l = chol.l();
    let (gl_x, gl_w) = gauss_legendre(16);
    let panels = match d {
        1 | 2 => 64,
        3 => 24,
        _ => 8,
    };
    let mut y = vec![0.0; d];
    Ok(sov_level(0, upper, &l, &gl_x, &gl_w, panels, &mut y))
}

fn sov_level(
    level: usize,
    upper: &[f64],
    l: &nalgebra::DMatrix<f64>,
    gl_x: &[f64],
    gl_w: &[f64],
    panels: usize,
    y: &mut [f64],
) -> f64 {
    let d = upper.len();
    let shift: f64 = (0..level).map(|j| l[(level, j)] * y[j]).sum();
    let e = cdf((upper[level] - shift) / l[(level, level)]);
    if level + 1 == d || e == 0.0 {
        return e;
    }
    // integrate over w in (0, 1), y_level = Φ^{-1}(w e)
    let h = 1.0 / panels as f64;
    let mut acc = 0.0;
    for p in 0..panels {
        let lo = p as f64 * h;
        for (xi, wi) in gl_x.iter().zip(gl_w) {
            let w = lo + 0.5 * h * (xi + 1.0);
            y[level] = quantile(w * e);
            acc += 0.5 * h * wi * sov_level(level + 1, upper, l, gl_x, gl_w, panels, y);
        }
    }
    e * acc
}
