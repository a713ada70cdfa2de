//! Cylindrical-harmonic series for TM plane-wave scattering by a homogeneous,
//! lossless dielectric circular cylinder, plus a rasterizer that turns the
//! cylinder into a contrast map.
//!
//! With incidence angle `θ` the fields outside the cylinder are
//!
//! ```text
//! E^inc = Σ_n (-j)^n J_n(kρ) e^{jn(φ-θ)}
//! E^sca = Σ_n a_n (-j)^n H_n⁽²⁾(kρ) e^{jn(φ-θ)}
//! ```
//!
//! and `a_n` follows from continuity of `E_z` and `∂E_z/∂ρ` at `ρ = a`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ContrastMap, Grid2D, PhysicsConfig};
use crate::special::{hankel2, hankel2_prime, jn, jn_prime};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DielectricCylinder {
    pub radius: f64,
    /// Real relative permittivity of the core.
    pub eps_r: f64,
    pub center: [f64; 2],
}

impl DielectricCylinder {
    pub fn new(radius: f64, eps_r: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidConfig(format!("cylinder radius must be > 0, got {radius}")));
        }
        if !(eps_r > 0.0 && eps_r.is_finite()) {
            return Err(Error::InvalidConfig(format!("eps_r must be > 0, got {eps_r}")));
        }
        Ok(Self { radius, eps_r, center: [0.0, 0.0] })
    }

    pub fn contrast(&self) -> f64 {
        self.eps_r - 1.0
    }

    /// Number of orders kept on each side of zero.
    pub fn truncation_order(&self, k0: f64) -> i32 {
        let x = k0 * self.radius * self.eps_r.sqrt().max(1.0);
        (x + 4.0 * x.cbrt() + 10.0).ceil() as i32
    }

    /// Scattering coefficient `a_n` for order `n ≥ 0` (`a_{-n} = a_n`).
    pub fn coefficient(&self, k0: f64, n: i32) -> Complex64 {
        let k1 = k0 * self.eps_r.sqrt();
        let (x0, x1) = (k0 * self.radius, k1 * self.radius);
        let (j0, dj0) = (jn(n, x0), jn_prime(n, x0));
        let (j1, dj1) = (jn(n, x1), jn_prime(n, x1));
        let (h, dh) = (hankel2(n, x0), hankel2_prime(n, x0));
        let num = Complex64::new(k1 * dj1 * j0 - k0 * j1 * dj0, 0.0);
        let den = k0 * j1 * dh - k1 * dj1 * h;
        num / den
    }

    /// Scattered field at observation points outside the cylinder.
    pub fn scattered_field(&self, phys: &PhysicsConfig, angle_deg: f64, points: &[(f64, f64)]) -> Result<Vec<Complex64>> {
        let k0 = phys.k0;
        let order = self.truncation_order(k0);
        let coeffs: Vec<Complex64> = (0..=order).map(|n| self.coefficient(k0, n)).collect();
        let theta = angle_deg.to_radians();
        let neg_j = Complex64::new(0.0, -1.0);
        points
            .iter()
            .map(|&(x, y)| {
                let (dx, dy) = (x - self.center[0], y - self.center[1]);
                let rho = dx.hypot(dy);
                if rho <= self.radius {
                    return Err(Error::Geometry(format!("observation point ({x}, {y}) is inside the cylinder")));
                }
                let psi = dy.atan2(dx) - theta;
                let mut sum = coeffs[0] * hankel2(0, k0 * rho);
                for n in 1..=order {
                    let term = coeffs[n as usize] * neg_j.powi(n) * hankel2(n, k0 * rho);
                    sum += 2.0 * term * (n as f64 * psi).cos();
                }
                Ok(sum)
            })
            .collect()
    }

    /// Contrast map with each cell weighted by the fraction of its area
    /// inside the cylinder, estimated on a `sub × sub` sample lattice.
    pub fn rasterize(&self, grid: &Grid2D, sub: usize) -> ContrastMap {
        let sub = sub.max(1);
        let chi = self.contrast();
        let r2 = self.radius * self.radius;
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (cx, cy) = grid.cell_center(i, j);
                let mut inside = 0usize;
                for q in 0..sub {
                    for p in 0..sub {
                        let x = cx - grid.dx / 2.0 + (p as f64 + 0.5) * grid.dx / sub as f64 - self.center[0];
                        let y = cy - grid.dy / 2.0 + (q as f64 + 0.5) * grid.dy / sub as f64 - self.center[1];
                        if x * x + y * y <= r2 {
                            inside += 1;
                        }
                    }
                }
                let frac = inside as f64 / (sub * sub) as f64;
                values.push(Complex64::new(chi * frac, 0.0));
            }
        }
        ContrastMap { grid: *grid, values }
    }
}
