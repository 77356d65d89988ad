//! Independent numerical oracles shared by the integration suites.
//!
//! Everything here recomputes physics from first principles — dense-grid
//! quadrature, pointwise stage algebra, closed-form Gaussian evolution —
//! without touching the closed-form mixture arithmetic it is used to check.
#![allow(dead_code)]

use num_complex::Complex64;

/// The pointer profile, written out independently of the library.
pub fn gaussian_profile(sigma: f64, x: f64) -> f64 {
    (2.0 * std::f64::consts::PI * sigma * sigma).powf(-0.25)
        * (-x * x / (4.0 * sigma * sigma)).exp()
}

/// A sampled complex function on a uniform grid.
#[derive(Clone)]
pub struct GridFn {
    pub x0: f64,
    pub dx: f64,
    pub values: Vec<Complex64>,
}

impl GridFn {
    pub fn from_terms(terms: &[(Complex64, f64)], sigma: f64, x0: f64, x1: f64, dx: f64) -> Self {
        let n = ((x1 - x0) / dx).round() as usize + 1;
        let values = (0..n)
            .map(|i| {
                let x = x0 + i as f64 * dx;
                terms
                    .iter()
                    .map(|&(w, s)| w * gaussian_profile(sigma, x - s))
                    .sum()
            })
            .collect();
        GridFn { x0, dx, values }
    }

    pub fn zeros_like(&self) -> Self {
        GridFn {
            x0: self.x0,
            dx: self.dx,
            values: vec![Complex64::ZERO; self.values.len()],
        }
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        GridFn {
            x0: self.x0,
            dx: self.dx,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add(&self, other: &GridFn) -> Self {
        GridFn {
            x0: self.x0,
            dx: self.dx,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Trapezoid ∫ |f|².
    pub fn norm_sq(&self) -> f64 {
        trapezoid(self.dx, self.values.iter().map(|v| v.norm_sqr()))
    }

    /// Trapezoid ∫ q |f(q)|².
    pub fn q_moment(&self) -> f64 {
        trapezoid(
            self.dx,
            self.values
                .iter()
                .enumerate()
                .map(|(i, v)| (self.x0 + i as f64 * self.dx) * v.norm_sqr()),
        )
    }

    pub fn centroid(&self) -> f64 {
        self.q_moment() / self.norm_sq()
    }
}

pub fn trapezoid(dx: f64, values: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = values.collect();
    if vals.len() < 2 {
        return 0.0;
    }
    let interior: f64 = vals[1..vals.len() - 1].iter().sum();
    dx * (0.5 * vals[0] + interior + 0.5 * vals[vals.len() - 1])
}

/// Free evolution of a Gaussian packet in closed form (ħ = m = 1):
/// `ψ(x, t) = (2πσ²)^(-1/4) (1 + it/2σ²)^(-1/2) exp(-(x-c)²/(4σ²(1 + it/2σ²)))`.
pub fn evolved_gaussian(sigma: f64, center: f64, t: f64, x: f64) -> Complex64 {
    let tau = Complex64::new(1.0, t / (2.0 * sigma * sigma));
    let norm = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-0.25) * tau.sqrt().inv();
    let dxc = x - center;
    norm * (-(dxc * dxc) * (4.0 * sigma * sigma * tau).inv()).exp()
}
