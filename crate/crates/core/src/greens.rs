//! Discretized 2-D TM Green's operators.
//!
//! The scalar kernel is `G(ρ, ρ') = (-j/4) H₀⁽²⁾(k0 |ρ - ρ'|)`, outgoing under
//! `exp(+jωt)`. Each square cell is replaced by the disc of equal area
//! (radius `a = sqrt(dx·dy/π)`), which gives closed forms for the cell
//! integrals:
//!
//! ```text
//! off-diagonal:  k0² ∫_disc G = (-jπ k0 a / 2) J₁(k0 a) H₀⁽²⁾(k0 ρ)
//! self cell:     k0² ∫_disc G = (-jπ k0 a / 2) H₁⁽²⁾(k0 a) - 1
//! ```
//!
//! The domain operator `G_D` is translation invariant, so it is stored as the
//! spectrum of its zero-padded `(2nx)×(2ny)` circulant embedding and applied
//! by FFT convolution.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{FieldDomain, FieldVector, Grid2D, PhysicsConfig, ReceiverRing};
use crate::special::{hankel2, j1};

pub type CMatrix = DMatrix<Complex64>;

const NEG_J: Complex64 = Complex64 { re: 0.0, im: -1.0 };

/// Radius of the disc with the same area as a `dx × dy` cell.
pub fn equivalent_radius(grid: &Grid2D) -> f64 {
    (grid.cell_area() / PI).sqrt()
}

/// `k0² ∫_disc G` over a disc of radius `a` for an observation point at the
/// disc center.
pub fn disc_self_term(k0: f64, a: f64) -> Complex64 {
    let ka = k0 * a;
    NEG_J * (PI * ka / 2.0) * hankel2(1, ka) - 1.0
}

/// `k0² ∫_disc G` over a disc of radius `a` whose center is `rho > a` away.
pub fn disc_coupling(k0: f64, a: f64, rho: f64) -> Complex64 {
    let ka = k0 * a;
    NEG_J * (PI * ka / 2.0) * j1(ka) * hankel2(0, k0 * rho)
}

/// Domain-to-domain operator `G_D`, applied by zero-padded 2-D FFT convolution.
#[derive(Clone)]
pub struct GreensVolumeOperator {
    grid: Grid2D,
    phys: PhysicsConfig,
    radius: f64,
    self_term: Complex64,
    /// Spectrum of the circulant embedding, stored column-major
    /// (index `p * py + q` for padded row position `p` along x).
    spectrum: Vec<Complex64>,
    px: usize,
    py: usize,
    fft_x: Arc<dyn Fft<f64>>,
    ifft_x: Arc<dyn Fft<f64>>,
    fft_y: Arc<dyn Fft<f64>>,
    ifft_y: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for GreensVolumeOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GreensVolumeOperator")
            .field("grid", &self.grid)
            .field("phys", &self.phys)
            .field("self_term", &self.self_term)
            .finish_non_exhaustive()
    }
}

impl GreensVolumeOperator {
    pub fn build(grid: &Grid2D, phys: &PhysicsConfig) -> Result<Self> {
        if !grid.is_square_cells() {
            return Err(Error::UnsupportedGrid(format!(
                "equivalent-disc cells need dx == dy (got {} and {})",
                grid.dx, grid.dy
            )));
        }
        let radius = equivalent_radius(grid);
        let self_term = disc_self_term(phys.k0, radius);
        let (nx, ny) = (grid.nx, grid.ny);
        let (px, py) = (2 * nx, 2 * ny);

        let mut planner = FftPlanner::<f64>::new();
        let fft_x = planner.plan_fft_forward(px);
        let ifft_x = planner.plan_fft_inverse(px);
        let fft_y = planner.plan_fft_forward(py);
        let ifft_y = planner.plan_fft_inverse(py);

        let mut op = Self {
            grid: *grid,
            phys: *phys,
            radius,
            self_term,
            spectrum: Vec::new(),
            px,
            py,
            fft_x,
            ifft_x,
            fft_y,
            ifft_y,
        };

        // circulant embedding: padded index p maps to offset p (p < n) or p - 2n (p > n)
        let offset = |p: usize, n: usize| -> Option<i64> {
            match p.cmp(&n) {
                std::cmp::Ordering::Less => Some(p as i64),
                std::cmp::Ordering::Equal => None,
                std::cmp::Ordering::Greater => Some(p as i64 - 2 * n as i64),
            }
        };
        let mut padded = vec![Complex64::new(0.0, 0.0); px * py];
        for q in 0..py {
            for p in 0..px {
                if let (Some(di), Some(dj)) = (offset(p, nx), offset(q, ny)) {
                    padded[q * px + p] = op.kernel(di, dj);
                }
            }
        }
        op.spectrum = op.forward_2d(padded);
        Ok(op)
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn phys(&self) -> &PhysicsConfig {
        &self.phys
    }

    pub fn self_term(&self) -> Complex64 {
        self.self_term
    }

    pub fn disc_radius(&self) -> f64 {
        self.radius
    }

    /// Matrix entry for a cell-index offset `(di, dj) = (i_m - i_n, j_m - j_n)`.
    pub fn kernel(&self, di: i64, dj: i64) -> Complex64 {
        if di == 0 && dj == 0 {
            return self.self_term;
        }
        let rho = (di as f64 * self.grid.dx).hypot(dj as f64 * self.grid.dy);
        disc_coupling(self.phys.k0, self.radius, rho)
    }

    /// Explicit entry `G_D[m, n]`.
    pub fn entry(&self, m: usize, n: usize) -> Complex64 {
        let (im, jm) = self.grid.coords(m);
        let (i_n, j_n) = self.grid.coords(n);
        self.kernel(im as i64 - i_n as i64, jm as i64 - j_n as i64)
    }

    /// Dense `M × M` assembly; only sensible for small grids.
    pub fn to_dense(&self) -> CMatrix {
        let m = self.grid.len();
        CMatrix::from_fn(m, m, |r, c| self.entry(r, c))
    }

    /// `y = G_D · x`.
    pub fn apply(&self, x: &FieldVector) -> Result<FieldVector> {
        if x.len() != self.grid.len() {
            return Err(Error::DimensionMismatch { expected: self.grid.len(), got: x.len() });
        }
        let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
        self.apply_into(&x.values, &mut y);
        Ok(FieldVector { values: y, domain: FieldDomain::Grid })
    }

    /// Slice form of [`apply`](Self::apply); panics on length mismatch.
    pub fn apply_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        let (nx, ny, px) = (self.grid.nx, self.grid.ny, self.px);
        assert_eq!(x.len(), nx * ny);
        assert_eq!(y.len(), nx * ny);
        let mut padded = vec![Complex64::new(0.0, 0.0); px * self.py];
        for j in 0..ny {
            padded[j * px..j * px + nx].copy_from_slice(&x[j * nx..(j + 1) * nx]);
        }
        let mut spec = self.forward_2d(padded);
        for (s, k) in spec.iter_mut().zip(&self.spectrum) {
            *s *= k;
        }
        let out = self.inverse_2d(spec);
        let scale = 1.0 / (px * self.py) as f64;
        for j in 0..ny {
            for i in 0..nx {
                y[j * nx + i] = out[j * px + i] * scale;
            }
        }
    }

    /// Row-major `(py rows × px)` in, column-major `(px columns × py)` spectrum out.
    fn forward_2d(&self, mut buf: Vec<Complex64>) -> Vec<Complex64> {
        let (px, py) = (self.px, self.py);
        let mut scratch =
            vec![Complex64::new(0.0, 0.0); self.fft_x.get_inplace_scratch_len().max(self.fft_y.get_inplace_scratch_len())];
        self.fft_x.process_with_scratch(&mut buf, &mut scratch);
        let mut t = transpose(&buf, px, py);
        self.fft_y.process_with_scratch(&mut t, &mut scratch);
        t
    }

    fn inverse_2d(&self, mut t: Vec<Complex64>) -> Vec<Complex64> {
        let (px, py) = (self.px, self.py);
        let mut scratch = vec![
            Complex64::new(0.0, 0.0);
            self.ifft_x.get_inplace_scratch_len().max(self.ifft_y.get_inplace_scratch_len())
        ];
        self.ifft_y.process_with_scratch(&mut t, &mut scratch);
        let mut buf = transpose(&t, py, px);
        self.ifft_x.process_with_scratch(&mut buf, &mut scratch);
        buf
    }
}

/// Transpose a row-major `rows × cols` array where each row has length `cols`.
fn transpose(a: &[Complex64], cols: usize, rows: usize) -> Vec<Complex64> {
    let mut t = vec![Complex64::new(0.0, 0.0); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

/// Domain-to-receiver matrix `G_S` (`N_s × M`), so that
/// `E^sca = G_S · (χ ⊙ E^tot)`. Entries use the cell-area quadrature weight:
/// `k0² · dx·dy · (-j/4) H₀⁽²⁾(k0 |ρ_s - ρ_m|)`.
#[derive(Debug, Clone)]
pub struct GreensSurfaceMatrix {
    pub grid: Grid2D,
    pub ring: ReceiverRing,
    pub phys: PhysicsConfig,
    pub entries: CMatrix,
}

impl GreensSurfaceMatrix {
    pub fn build(grid: &Grid2D, ring: &ReceiverRing, phys: &PhysicsConfig) -> Result<Self> {
        let (hx, hy) = grid.half_extent();
        let receivers = ring.positions();
        for (s, &(x, y)) in receivers.iter().enumerate() {
            let inside_x = (x - grid.center[0]).abs() <= hx;
            let inside_y = (y - grid.center[1]).abs() <= hy;
            if inside_x && inside_y {
                return Err(Error::Geometry(format!(
                    "receiver {s} at ({x:.4}, {y:.4}) lies inside the domain bounding box"
                )));
            }
        }
        let centers = grid.cell_centers();
        let weight = NEG_J * (phys.k0 * phys.k0 * grid.cell_area() / 4.0);
        let entries = CMatrix::from_fn(ring.count, grid.len(), |s, m| {
            let (rx, ry) = receivers[s];
            let (cx, cy) = centers[m];
            weight * hankel2(0, phys.k0 * (rx - cx).hypot(ry - cy))
        });
        Ok(Self { grid: *grid, ring: *ring, phys: *phys, entries })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.entries.shape()
    }

    /// `G_S · x` for a grid-sized source vector.
    pub fn apply(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.entries.ncols() {
            return Err(Error::DimensionMismatch { expected: self.entries.ncols(), got: x.len() });
        }
        let v = nalgebra::DVector::from_column_slice(x);
        Ok((&self.entries * v).as_slice().to_vec())
    }

    /// `G_Sᴴ · r` for a receiver-sized vector.
    pub fn apply_adjoint(&self, r: &[Complex64]) -> Result<Vec<Complex64>> {
        if r.len() != self.entries.nrows() {
            return Err(Error::DimensionMismatch { expected: self.entries.nrows(), got: r.len() });
        }
        let v = nalgebra::DVector::from_column_slice(r);
        Ok((self.entries.adjoint() * v).as_slice().to_vec())
    }
}

/// Default relative singular-value cutoff for [`pseudo_inverse`].
pub const DEFAULT_PINV_THRESHOLD: f64 = 1e-12;

/// Moore–Penrose pseudo-inverse by SVD, dropping singular values below
/// `rel_threshold · σ_max`.
pub fn pseudo_inverse(mat: &CMatrix, rel_threshold: f64) -> Result<CMatrix> {
    if !(rel_threshold > 0.0 && rel_threshold < 1.0) {
        return Err(Error::InvalidConfig(format!("pinv threshold must be in (0, 1), got {rel_threshold}")));
    }
    let svd = mat.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 || !smax.is_finite() {
        return Err(Error::Degenerate("pseudo-inverse of an all-zero matrix".into()));
    }
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let cut = rel_threshold * smax;
    let mut pinv = CMatrix::zeros(mat.ncols(), mat.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s < cut {
            continue;
        }
        // pinv += v_k (1/s) u_kᴴ
        let vk = v_t.row(k).adjoint();
        let uk = u.column(k).adjoint();
        pinv += (vk * uk) * Complex64::new(1.0 / s, 0.0);
    }
    Ok(pinv)
}

/// Pseudo-inverse of the receiver matrix.
pub fn pseudo_inverse_surface(mat: &GreensSurfaceMatrix, rel_threshold: f64) -> Result<CMatrix> {
    pseudo_inverse(&mat.entries, rel_threshold)
}
