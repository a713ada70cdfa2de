//! Known/unknown profile splitting.
//!
//! With `χ = χ^p1 + χ^p2` (disjoint supports) the state equation factors as
//!
//! ```text
//! A      = (I - G_D·X1)⁻¹ · G_D
//! E^p1   = (I - G_D·X1)⁻¹ · E^inc
//! E^tot  = (I - A·X2)⁻¹ · E^p1
//! ΔE^tot = E^tot - E^p1 = [(I - A·X2)⁻¹ - I] · E^p1
//! E^sca  = G_S · (X1 + X2) · (E^p1 + ΔE^tot)
//! ```
//!
//! where `X1`, `X2` are the diagonal contrast matrices. Inverting the last
//! relation with a pseudo-inverse of `G_S` and a rank-one projection onto
//! `E^p1` gives the closed-form estimator
//!
//! ```text
//! P   = G_S† · E^sca · (E^p1)ᴴ / ((E^p1)ᴴ · E^p1)
//! χ̂2  = (I + P·A)⁻¹ · (P - X1)
//! ```
//!
//! which is exact for a single cell and approximate otherwise; its
//! off-diagonal energy is reported as a diagnostic.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{self, solve_operator, solve_state_system, SolverOptions};
use crate::greens::{pseudo_inverse, CMatrix, GreensSurfaceMatrix, GreensVolumeOperator};
use crate::grid::{
    compose_full_contrast, incident_field, ContrastMap, FieldDomain, FieldVector, Grid2D, IncidentWave, PhysicsConfig,
    ReceiverRing, SplitProfile,
};
use crate::krylov::FnOperator;
use crate::vecops::{self, rel_diff};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

fn grid_field(values: Vec<Complex64>) -> FieldVector {
    FieldVector { values, domain: FieldDomain::Grid }
}

fn check_grid(split: &SplitProfile, gd: &GreensVolumeOperator) -> Result<()> {
    if split.grid() != gd.grid() {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// `E^p1 = (I - G_D·X1)⁻¹ E^inc`, the total field with only the known part present.
pub fn known_part_field(
    split: &SplitProfile,
    gd: &GreensVolumeOperator,
    einc: &FieldVector,
    opts: &SolverOptions,
) -> Result<FieldVector> {
    check_grid(split, gd)?;
    let (e, report) = forward::solve_total_field(gd, &split.chi_p1, einc, opts)?;
    report.require_converged()?;
    Ok(e)
}

/// Split profile with its known-part field cached for one incidence.
#[derive(Debug, Clone)]
pub struct KnownPartContext<'a> {
    pub split: SplitProfile,
    pub gd: &'a GreensVolumeOperator,
    pub einc: FieldVector,
    pub e_p1: FieldVector,
    pub opts: SolverOptions,
}

impl<'a> KnownPartContext<'a> {
    pub fn new(split: SplitProfile, gd: &'a GreensVolumeOperator, einc: FieldVector, opts: SolverOptions) -> Result<Self> {
        let e_p1 = known_part_field(&split, gd, &einc, &opts)?;
        Ok(Self { split, gd, einc, e_p1, opts })
    }

    pub fn apply_a(&self, v: &FieldVector) -> Result<FieldVector> {
        apply_a(&self.split, self.gd, v, &self.opts)
    }

    pub fn delta_total_field(&self, chi_p2: &ContrastMap) -> Result<FieldVector> {
        let full = compose_full_contrast(&self.split, chi_p2)?;
        let (etot, report) = forward::solve_total_field(self.gd, &full, &self.einc, &self.opts)?;
        report.require_converged()?;
        Ok(grid_field(vecops::sub(&etot.values, &self.e_p1.values)))
    }
}

/// `A·v`, i.e. the `w` solving `(I - G_D·X1) w = G_D v`. One FFT apply plus one
/// Krylov solve; `A` is never formed.
pub fn apply_a(split: &SplitProfile, gd: &GreensVolumeOperator, v: &FieldVector, opts: &SolverOptions) -> Result<FieldVector> {
    check_grid(split, gd)?;
    let gv = gd.apply(v)?;
    let (w, report) = solve_state_system(gd, &split.chi_p1.values, &gv.values, opts)?;
    report.require_converged()?;
    Ok(grid_field(w))
}

/// How [`materialize_a_with`] forms the dense `A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AMaterialization {
    /// Apply `A` to each unit vector.
    Columns,
    /// Dense LU of `I - G_D·X1` applied to dense `G_D`.
    DenseLu,
}

/// Default cap on `M` for dense `A`.
pub const DEFAULT_A_CAP: usize = 4096;
/// Largest `M` for which the dense LU route is used.
pub const DENSE_LU_LIMIT: usize = 1024;

/// Dense `M × M` matrix `A`, choosing LU for `M ≤ 1024` and columns otherwise.
pub fn materialize_a(split: &SplitProfile, gd: &GreensVolumeOperator, opts: &SolverOptions) -> Result<CMatrix> {
    let route = if split.grid().len() <= DENSE_LU_LIMIT { AMaterialization::DenseLu } else { AMaterialization::Columns };
    materialize_a_with(split, gd, opts, route, DEFAULT_A_CAP)
}

pub fn materialize_a_with(
    split: &SplitProfile,
    gd: &GreensVolumeOperator,
    opts: &SolverOptions,
    route: AMaterialization,
    cap: usize,
) -> Result<CMatrix> {
    check_grid(split, gd)?;
    let m = split.grid().len();
    if m > cap {
        return Err(Error::CapExceeded { size: m, cap });
    }
    match route {
        AMaterialization::DenseLu => {
            let g = gd.to_dense();
            let system = forward::state_matrix_dense(gd, &split.chi_p1.values);
            system.lu().solve(&g).ok_or_else(|| Error::Degenerate("I - G_D·X1 is singular".into()))
        }
        AMaterialization::Columns => {
            let grid = *split.grid();
            let columns: Result<Vec<Vec<Complex64>>> = (0..m)
                .into_par_iter()
                .map(|c| {
                    let mut e = vec![ZERO; m];
                    e[c] = Complex64::new(1.0, 0.0);
                    apply_a(split, gd, &FieldVector::on_grid(&grid, e)?, opts).map(|f| f.values)
                })
                .collect();
            let columns = columns?;
            Ok(CMatrix::from_fn(m, m, |r, c| columns[c][r]))
        }
    }
}

/// `ΔE^tot` by the difference of two forward solves: `E^tot(χ^p1 + χ^p2) - E^p1`.
pub fn delta_total_field(
    split: &SplitProfile,
    chi_p2: &ContrastMap,
    gd: &GreensVolumeOperator,
    einc: &FieldVector,
    opts: &SolverOptions,
) -> Result<FieldVector> {
    let e_p1 = known_part_field(split, gd, einc, opts)?;
    let full = compose_full_contrast(split, chi_p2)?;
    let (etot, report) = forward::solve_total_field(gd, &full, einc, opts)?;
    report.require_converged()?;
    Ok(grid_field(vecops::sub(&etot.values, &e_p1.values)))
}

/// `ΔE^tot` through the nested form: solve `(I - A·X2) u = E^p1` with each
/// application of `A` itself an inner Krylov solve, then `ΔE^tot = u - E^p1`.
/// Verification path only; inner solves run at `inner_tol`.
pub fn delta_total_field_nested(
    split: &SplitProfile,
    chi_p2: &ContrastMap,
    gd: &GreensVolumeOperator,
    einc: &FieldVector,
    opts: &SolverOptions,
    inner_tol: f64,
) -> Result<FieldVector> {
    check_grid(split, gd)?;
    let e_p1 = known_part_field(split, gd, einc, opts)?;
    let chi2 = split.restrict(chi_p2);
    let inner = SolverOptions { rel_tol: inner_tol, ..*opts };
    let m = split.grid().len();
    let failure = std::sync::Mutex::new(None);
    let op = FnOperator {
        dim: m,
        f: |x: &[Complex64], y: &mut [Complex64]| {
            let src: Vec<Complex64> = x.iter().zip(&chi2.values).map(|(a, c)| a * c).collect();
            let mut g = vec![ZERO; m];
            gd.apply_into(&src, &mut g);
            match solve_state_system(gd, &split.chi_p1.values, &g, &inner).and_then(|(w, rep)| rep.require_converged().map(|_| w)) {
                Ok(w) => {
                    for ((yi, xi), wi) in y.iter_mut().zip(x).zip(&w) {
                        *yi = xi - wi;
                    }
                }
                Err(e) => {
                    failure.lock().unwrap().get_or_insert(e);
                    y.copy_from_slice(x);
                }
            }
        },
    };
    let (u, report) = solve_operator(&op, &e_p1.values, opts);
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    report.require_converged()?;
    Ok(grid_field(vecops::sub(&u, &e_p1.values)))
}

/// `E^sca = G_S·((χ^p1 + χ^p2) ⊙ (E^p1 + ΔE^tot))`.
pub fn scattered_field_split(
    split: &SplitProfile,
    chi_p2: &ContrastMap,
    gs: &GreensSurfaceMatrix,
    gd: &GreensVolumeOperator,
    einc: &FieldVector,
    opts: &SolverOptions,
) -> Result<FieldVector> {
    let e_p1 = known_part_field(split, gd, einc, opts)?;
    let delta = delta_total_field(split, chi_p2, gd, einc, opts)?;
    let full = compose_full_contrast(split, chi_p2)?;
    let etot = grid_field(vecops::add(&e_p1.values, &delta.values));
    forward::scattered_field(gs, &full, &etot)
}

/// Quality measures for the closed-form estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorDiagnostics {
    /// `‖offdiag(χ̂2)‖_F / ‖χ̂2‖_F` of the full estimator matrix.
    pub offdiag_energy_ratio: f64,
    /// `‖G_S·(χ^p1 + χ̂^p2)·E^tot(χ̂^p2) - E^sca_0‖ / ‖E^sca_0‖`.
    pub data_residual: f64,
    /// `‖χ̂2‖_F` of the full estimator matrix before diagonal extraction.
    pub matrix_norm: f64,
    /// `I + P·A` was singular and a pseudo-inverse was used instead.
    pub regularized: bool,
}

/// Closed-form estimate of `χ^p2` from one set of receiver data.
///
/// `P·A` is rank one (`P = u·e_p1ᴴ/‖e_p1‖²` with `u = G_S†·E^sca`), so
/// `(I + P·A)⁻¹` is applied with the Sherman–Morrison identity. When
/// `1 + vᵀu` vanishes the dense system is solved by pseudo-inverse instead and
/// `regularized` is set. The returned map holds the diagonal restricted to
/// the mask.
pub fn estimate_chi_p2(
    ctx: &KnownPartContext<'_>,
    esca0: &FieldVector,
    gs: &GreensSurfaceMatrix,
    a_dense: &CMatrix,
    pinv_threshold: f64,
) -> Result<(ContrastMap, EstimatorDiagnostics)> {
    let grid = *ctx.split.grid();
    let m = grid.len();
    if a_dense.shape() != (m, m) {
        return Err(Error::DimensionMismatch { expected: m, got: a_dense.nrows() });
    }
    if esca0.len() != gs.entries.nrows() {
        return Err(Error::DimensionMismatch { expected: gs.entries.nrows(), got: esca0.len() });
    }
    let e = &ctx.e_p1.values;
    let s = vecops::norm_sqr(e);
    if s == 0.0 {
        return Err(Error::Degenerate("known-part field is zero".into()));
    }
    let gs_pinv = pseudo_inverse(&gs.entries, pinv_threshold)?;
    let u: Vec<Complex64> = (&gs_pinv * DVector::from_column_slice(&esca0.values)).as_slice().to_vec();
    let chi1 = &ctx.split.chi_p1.values;

    let (diag, matrix_norm, offdiag_sq, regularized) = match sherman_morrison_estimate(&u, e, s, chi1, a_dense) {
        Some(r) => (r.0, r.1, r.2, false),
        None => {
            let (d, n, o) = regularized_estimate(&u, e, s, chi1, a_dense, pinv_threshold)?;
            (d, n, o, true)
        }
    };

    let masked: Vec<Complex64> =
        diag.iter().zip(&ctx.split.mask_p2).map(|(&d, &inside)| if inside { d } else { ZERO }).collect();
    let chi_hat = ContrastMap::new(grid, masked)?;

    let full = compose_full_contrast(&ctx.split, &chi_hat)?;
    let (etot, report) = forward::solve_total_field(ctx.gd, &full, &ctx.einc, &ctx.opts)?;
    report.require_converged()?;
    let predicted = forward::scattered_field(gs, &full, &etot)?;
    let data_residual = rel_diff(&predicted.values, &esca0.values);

    let offdiag_energy_ratio = if matrix_norm == 0.0 { 0.0 } else { offdiag_sq.max(0.0).sqrt() / matrix_norm };
    Ok((chi_hat, EstimatorDiagnostics { offdiag_energy_ratio, data_residual, matrix_norm, regularized }))
}

/// Returns (diagonal, ‖χ̂2‖_F, ‖offdiag‖_F²) or `None` if `1 + vᵀu ≈ 0`.
fn sherman_morrison_estimate(
    u: &[Complex64],
    e: &[Complex64],
    s: f64,
    chi1: &[Complex64],
    a: &CMatrix,
) -> Option<(Vec<Complex64>, f64, f64)> {
    let m = u.len();
    // vᵀ = e_p1ᴴ A / s
    let v: Vec<Complex64> = (0..m).map(|k| (0..m).map(|i| e[i].conj() * a[(i, k)]).sum::<Complex64>() / s).collect();
    let vu: Complex64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
    let gamma = Complex64::new(1.0, 0.0) + vu;
    let scale = 1.0 + vecops::norm(&v) * vecops::norm(u);
    if gamma.norm() <= 1e-12 * scale {
        return None;
    }
    // χ̂2 = u rᵀ - X1 with r_k = conj(e_k)/s - (vᵀB)_k / γ, (vᵀB)_k = (vᵀu) conj(e_k)/s - v_k χ1_k
    let r: Vec<Complex64> = (0..m)
        .map(|k| {
            let vtb = vu * e[k].conj() / s - v[k] * chi1[k];
            e[k].conj() / s - vtb / gamma
        })
        .collect();
    Some(matrix_stats(m, |i, k| {
        let mut val = u[i] * r[k];
        if i == k {
            val -= chi1[i];
        }
        val
    }))
}

fn regularized_estimate(
    u: &[Complex64],
    e: &[Complex64],
    s: f64,
    chi1: &[Complex64],
    a: &CMatrix,
    threshold: f64,
) -> Result<(Vec<Complex64>, f64, f64)> {
    let m = u.len();
    let (p, system) = estimator_matrices(u, e, s, a);
    let inv = pseudo_inverse(&system, threshold)?;
    let mut rhs = p;
    for i in 0..m {
        rhs[(i, i)] -= chi1[i];
    }
    let chi_hat = inv * rhs;
    Ok(matrix_stats(m, |i, k| chi_hat[(i, k)]))
}

/// Dense `P` and `I + P·A`.
fn estimator_matrices(u: &[Complex64], e: &[Complex64], s: f64, a: &CMatrix) -> (CMatrix, CMatrix) {
    let m = u.len();
    let p = CMatrix::from_fn(m, m, |i, k| u[i] * e[k].conj() / s);
    let system = CMatrix::identity(m, m) + &p * a;
    (p, system)
}

fn matrix_stats(m: usize, entry: impl Fn(usize, usize) -> Complex64) -> (Vec<Complex64>, f64, f64) {
    let mut diag = Vec::with_capacity(m);
    let mut total = 0.0;
    let mut off = 0.0;
    for i in 0..m {
        for k in 0..m {
            let v = entry(i, k);
            let n2 = v.norm_sqr();
            total += n2;
            if i == k {
                diag.push(v);
            } else {
                off += n2;
            }
        }
    }
    (diag, total.sqrt(), off)
}

/// Dense evaluation of the estimator formula with an LU solve of `I + P·A`;
/// reference route for the Sherman–Morrison path.
pub fn estimate_matrix_dense(
    ctx: &KnownPartContext<'_>,
    esca0: &FieldVector,
    gs: &GreensSurfaceMatrix,
    a_dense: &CMatrix,
    pinv_threshold: f64,
) -> Result<CMatrix> {
    let e = &ctx.e_p1.values;
    let s = vecops::norm_sqr(e);
    if s == 0.0 {
        return Err(Error::Degenerate("known-part field is zero".into()));
    }
    let gs_pinv = pseudo_inverse(&gs.entries, pinv_threshold)?;
    let u: Vec<Complex64> = (&gs_pinv * DVector::from_column_slice(&esca0.values)).as_slice().to_vec();
    let (mut p, system) = estimator_matrices(&u, e, s, a_dense);
    for (i, c) in ctx.split.chi_p1.values.iter().enumerate() {
        p[(i, i)] -= c;
    }
    system.lu().solve(&p).ok_or_else(|| Error::Degenerate("I + P·A is singular".into()))
}

/// One randomized `(χ^p1, χ^p2, θ)` configuration.
#[derive(Debug, Clone)]
pub struct SplitTrial {
    pub split: SplitProfile,
    pub chi_p2: ContrastMap,
    pub wave: IncidentWave,
}

/// Draws a trial: a random rectangular unknown block, known cells elsewhere
/// with probability one half, contrasts with `Re ∈ [0.1, 1]`, `Im ∈ [0, 1]`.
pub fn random_split_trial(grid: &Grid2D, seed: u64) -> SplitTrial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bw = rng.random_range(1..=grid.nx.div_ceil(2));
    let bh = rng.random_range(1..=grid.ny.div_ceil(2));
    let i0 = rng.random_range(0..=grid.nx - bw);
    let j0 = rng.random_range(0..=grid.ny - bh);
    let mut mask = vec![false; grid.len()];
    let mut p1 = vec![ZERO; grid.len()];
    let mut p2 = vec![ZERO; grid.len()];
    let draw = |rng: &mut ChaCha8Rng| Complex64::new(rng.random_range(0.1..1.0), rng.random_range(0.0..1.0));
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let m = grid.index(i, j);
            if (i0..i0 + bw).contains(&i) && (j0..j0 + bh).contains(&j) {
                mask[m] = true;
                p2[m] = draw(&mut rng);
            } else if rng.random_bool(0.5) {
                p1[m] = draw(&mut rng);
            }
        }
    }
    let wave = IncidentWave::new(rng.random_range(0.0..360.0));
    SplitTrial {
        split: SplitProfile { chi_p1: ContrastMap { grid: *grid, values: p1 }, mask_p2: mask },
        chi_p2: ContrastMap { grid: *grid, values: p2 },
        wave,
    }
}

/// Worst-case deviations over a batch of split-identity trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCheckReport {
    pub trials: usize,
    /// `max ‖E^tot_full - (E^p1 + ΔE^tot)‖ / ‖E^tot_full‖` with `ΔE^tot` from the nested path.
    pub max_field_deviation: f64,
    /// `max ‖E^sca_split - E^sca_direct‖ / ‖E^sca_direct‖`.
    pub max_scattered_deviation: f64,
}

/// Runs `trials` random split trials in parallel. `corrupt` perturbs the
/// contrast used by the split path, which must make the identities fail.
#[allow(clippy::too_many_arguments)]
pub fn run_split_trials(
    grid: &Grid2D,
    phys: &PhysicsConfig,
    ring: &ReceiverRing,
    trials: usize,
    seed: u64,
    opts: &SolverOptions,
    inner_tol: f64,
    corrupt: bool,
) -> Result<SplitCheckReport> {
    let gd = GreensVolumeOperator::build(grid, phys)?;
    let gs = GreensSurfaceMatrix::build(grid, ring, phys)?;
    let results: Result<Vec<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let trial = random_split_trial(grid, seed.wrapping_add(t as u64));
            let einc = incident_field(grid, phys, &trial.wave);
            let full = compose_full_contrast(&trial.split, &trial.chi_p2)?;
            let (etot, rep) = forward::solve_total_field(&gd, &full, &einc, opts)?;
            rep.require_converged()?;
            let direct = forward::scattered_field(&gs, &full, &etot)?;

            let mut chi_p2 = trial.chi_p2.clone();
            if corrupt {
                for (v, &m) in chi_p2.values.iter_mut().zip(&trial.split.mask_p2) {
                    if m {
                        *v *= 1.01;
                    }
                }
            }
            let e_p1 = known_part_field(&trial.split, &gd, &einc, opts)?;
            let delta = delta_total_field_nested(&trial.split, &chi_p2, &gd, &einc, opts, inner_tol)?;
            let recomposed = vecops::add(&e_p1.values, &delta.values);
            let field_dev = rel_diff(&recomposed, &etot.values);
            let esca = scattered_field_split(&trial.split, &chi_p2, &gs, &gd, &einc, opts)?;
            let sca_dev = rel_diff(&esca.values, &direct.values);
            Ok((field_dev, sca_dev))
        })
        .collect();
    let results = results?;
    Ok(SplitCheckReport {
        trials,
        max_field_deviation: results.iter().map(|r| r.0).fold(0.0, f64::max),
        max_scattered_deviation: results.iter().map(|r| r.1).fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_total_field;
    use crate::greens::DEFAULT_PINV_THRESHOLD;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn setup(n: usize) -> (Grid2D, PhysicsConfig, GreensVolumeOperator) {
        let phys = PhysicsConfig::default();
        let grid = Grid2D::centered(n, n, 0.01).unwrap();
        let gd = GreensVolumeOperator::build(&grid, &phys).unwrap();
        (grid, phys, gd)
    }

    fn dense_apply(a: &CMatrix, x: &[Complex64]) -> Vec<Complex64> {
        (a * DVector::from_column_slice(x)).as_slice().to_vec()
    }

    #[test]
    fn known_part_field_degenerate_cases() {
        let (grid, phys, gd) = setup(6);
        let einc = incident_field(&grid, &phys, &IncidentWave::new(20.0));
        let opts = SolverOptions::default();
        let empty = SplitProfile::new(ContrastMap::zeros(grid), vec![false; grid.len()]).unwrap();
        assert_eq!(known_part_field(&empty, &gd, &einc, &opts).unwrap(), einc);
        let all = SplitProfile::new(ContrastMap::zeros(grid), vec![true; grid.len()]).unwrap();
        assert_eq!(known_part_field(&all, &gd, &einc, &opts).unwrap(), einc);
    }

    #[test]
    fn known_part_field_is_the_p1_forward_solve() {
        let (grid, phys, gd) = setup(16);
        let trial = random_split_trial(&grid, 3);
        let einc = incident_field(&grid, &phys, &trial.wave);
        let opts = SolverOptions::default();
        let e1 = known_part_field(&trial.split, &gd, &einc, &opts).unwrap();
        let (e2, _) = solve_total_field(&gd, &trial.split.chi_p1, &einc, &opts).unwrap();
        assert!(rel_diff(&e1.values, &e2.values) <= 1e-12);
    }

    #[test]
    fn apply_a_reduces_to_gd_without_known_part() {
        let (grid, _, gd) = setup(8);
        let split = SplitProfile::new(ContrastMap::zeros(grid), vec![false; grid.len()]).unwrap();
        let trial = random_split_trial(&grid, 1);
        let v = FieldVector::on_grid(&grid, trial.chi_p2.values.clone()).unwrap();
        let a = apply_a(&split, &gd, &v, &SolverOptions::default()).unwrap();
        let g = gd.apply(&v).unwrap();
        assert!(rel_diff(&a.values, &g.values) <= 1e-14);
    }

    #[test]
    fn apply_a_linear_and_matches_dense() {
        let (grid, _, gd) = setup(8);
        let trial = random_split_trial(&grid, 5);
        let opts = SolverOptions::with_tol(1e-12);
        let v1 = FieldVector::on_grid(&grid, trial.chi_p2.values.clone()).unwrap();
        let v2 = FieldVector::on_grid(&grid, trial.split.chi_p1.values.iter().map(|x| x * c(0.0, 1.0) + 0.3).collect()).unwrap();
        let (a, b) = (c(1.5, -0.5), c(-0.2, 2.0));
        let combo = FieldVector::on_grid(&grid, v1.values.iter().zip(&v2.values).map(|(x, y)| a * x + b * y).collect()).unwrap();
        let lhs = apply_a(&trial.split, &gd, &combo, &opts).unwrap();
        let w1 = apply_a(&trial.split, &gd, &v1, &opts).unwrap();
        let w2 = apply_a(&trial.split, &gd, &v2, &opts).unwrap();
        let rhs: Vec<_> = w1.values.iter().zip(&w2.values).map(|(x, y)| a * x + b * y).collect();
        assert!(rel_diff(&lhs.values, &rhs) <= 1e-9);

        let a_dense = materialize_a_with(&trial.split, &gd, &opts, AMaterialization::DenseLu, DEFAULT_A_CAP).unwrap();
        assert!(rel_diff(&w1.values, &dense_apply(&a_dense, &v1.values)) <= 1e-8);
    }

    #[test]
    fn materialization_routes_agree() {
        let (grid, _, gd) = setup(8);
        let trial = random_split_trial(&grid, 9);
        let opts = SolverOptions::with_tol(1e-12);
        let lu = materialize_a_with(&trial.split, &gd, &opts, AMaterialization::DenseLu, DEFAULT_A_CAP).unwrap();
        let cols = materialize_a_with(&trial.split, &gd, &opts, AMaterialization::Columns, DEFAULT_A_CAP).unwrap();
        for k in 0..grid.len() {
            let a: Vec<_> = lu.column(k).iter().cloned().collect();
            let b: Vec<_> = cols.column(k).iter().cloned().collect();
            assert!(rel_diff(&b, &a) <= 1e-8, "column {k}");
        }
        // empty known part gives G_D itself
        let empty = SplitProfile::new(ContrastMap::zeros(grid), vec![false; grid.len()]).unwrap();
        let a0 = materialize_a(&empty, &gd, &opts).unwrap();
        assert!((&a0 - gd.to_dense()).norm() <= 1e-12 * a0.norm());
        assert!(matches!(
            materialize_a_with(&trial.split, &gd, &opts, AMaterialization::Columns, 10),
            Err(Error::CapExceeded { .. })
        ));
        // G_D symmetric makes A = G_D (I - X1 G_D)⁻¹ symmetric too
        let asym = (&lu - lu.transpose()).norm() / lu.norm();
        assert!(asym <= 1e-10);
    }

    #[test]
    fn delta_field_degenerate_cases() {
        let (grid, phys, gd) = setup(8);
        let trial = random_split_trial(&grid, 2);
        let einc = incident_field(&grid, &phys, &trial.wave);
        let opts = SolverOptions::default();
        let d = delta_total_field(&trial.split, &ContrastMap::zeros(grid), &gd, &einc, &opts).unwrap();
        assert!(d.values.iter().all(|v| v.norm() == 0.0));

        let empty = SplitProfile::new(ContrastMap::zeros(grid), trial.split.mask_p2.clone()).unwrap();
        let d = delta_total_field(&empty, &trial.chi_p2, &gd, &einc, &opts).unwrap();
        let (e2, _) = solve_total_field(&gd, &trial.chi_p2, &einc, &opts).unwrap();
        let expected = vecops::sub(&e2.values, &einc.values);
        assert!(rel_diff(&d.values, &expected) <= 1e-12);
    }

    #[test]
    fn nested_path_matches_cheap_path_and_dense_formula() {
        let (grid, phys, gd) = setup(8);
        let opts = SolverOptions::with_tol(1e-11);
        for seed in 0..3 {
            let trial = random_split_trial(&grid, 100 + seed);
            let einc = incident_field(&grid, &phys, &trial.wave);
            let cheap = delta_total_field(&trial.split, &trial.chi_p2, &gd, &einc, &opts).unwrap();
            let nested = delta_total_field_nested(&trial.split, &trial.chi_p2, &gd, &einc, &opts, 1e-13).unwrap();
            assert!(rel_diff(&nested.values, &cheap.values) <= 1e-7);

            // [(I - A X2)⁻¹ - I] E^p1 with dense A
            let a = materialize_a(&trial.split, &gd, &opts).unwrap();
            let m = grid.len();
            let mut sys = CMatrix::identity(m, m);
            for col in 0..m {
                for row in 0..m {
                    sys[(row, col)] -= a[(row, col)] * trial.chi_p2.values[col];
                }
            }
            let e_p1 = known_part_field(&trial.split, &gd, &einc, &opts).unwrap();
            let u = sys.lu().solve(&DVector::from_column_slice(&e_p1.values)).unwrap();
            let dense = vecops::sub(u.as_slice(), &e_p1.values);
            assert!(rel_diff(&cheap.values, &dense) <= 1e-8);
        }
    }

    #[test]
    fn split_scattered_field_matches_direct() {
        let (grid, phys, gd) = setup(12);
        let gs = GreensSurfaceMatrix::build(&grid, &ReceiverRing::default(), &phys).unwrap();
        let opts = SolverOptions::default();
        let trial = random_split_trial(&grid, 21);
        let einc = incident_field(&grid, &phys, &trial.wave);
        let split = scattered_field_split(&trial.split, &trial.chi_p2, &gs, &gd, &einc, &opts).unwrap();
        let full = compose_full_contrast(&trial.split, &trial.chi_p2).unwrap();
        let (etot, _) = solve_total_field(&gd, &full, &einc, &opts).unwrap();
        let direct = forward::scattered_field(&gs, &full, &etot).unwrap();
        assert!(rel_diff(&split.values, &direct.values) <= 1e-9);

        // χ^p2 = 0 reduces to G_S (χ^p1 ⊙ E^p1)
        let zero = ContrastMap::zeros(grid);
        let s0 = scattered_field_split(&trial.split, &zero, &gs, &gd, &einc, &opts).unwrap();
        let e_p1 = known_part_field(&trial.split, &gd, &einc, &opts).unwrap();
        let expected = forward::scattered_field(&gs, &trial.split.chi_p1, &e_p1).unwrap();
        assert!(rel_diff(&s0.values, &expected.values) <= 1e-14);

        // empty everything
        let empty = SplitProfile::new(ContrastMap::zeros(grid), vec![false; grid.len()]).unwrap();
        let s = scattered_field_split(&empty, &zero, &gs, &gd, &einc, &opts).unwrap();
        assert!(s.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn unknown_part_field_is_coupled_to_known_part() {
        // p1 directly adjacent to p2 with |χ| ≥ 0.5: ΔE^tot differs from the
        // isolated-p2 response.
        let (grid, phys, gd) = setup(8);
        let mut p1 = vec![ZERO; grid.len()];
        let mut p2 = vec![ZERO; grid.len()];
        let mut mask = vec![false; grid.len()];
        for j in 2..6 {
            for i in 1..4 {
                p1[grid.index(i, j)] = c(0.8, 0.3);
            }
            for i in 4..7 {
                mask[grid.index(i, j)] = true;
                p2[grid.index(i, j)] = c(0.7, 0.2);
            }
        }
        let split = SplitProfile::new(ContrastMap::new(grid, p1).unwrap(), mask).unwrap();
        let chi_p2 = ContrastMap::new(grid, p2).unwrap();
        let einc = incident_field(&grid, &phys, &IncidentWave::new(0.0));
        let opts = SolverOptions::default();
        let delta = delta_total_field(&split, &chi_p2, &gd, &einc, &opts).unwrap();
        let (isolated, _) = solve_total_field(&gd, &chi_p2, &einc, &opts).unwrap();
        let naive = vecops::sub(&isolated.values, &einc.values);
        assert!(rel_diff(&naive, &delta.values) > 1e-3);
    }

    fn single_cell_context<'a>(
        gd: &'a GreensVolumeOperator,
        phys: &PhysicsConfig,
        chi1: Complex64,
        unknown: bool,
    ) -> KnownPartContext<'a> {
        let grid = *gd.grid();
        let p1 = if unknown { ZERO } else { chi1 };
        let split = SplitProfile::new(ContrastMap::new(grid, vec![p1]).unwrap(), vec![unknown]).unwrap();
        let einc = incident_field(&grid, phys, &IncidentWave::new(0.0));
        KnownPartContext::new(split, gd, einc, SolverOptions::with_tol(1e-13)).unwrap()
    }

    #[test]
    fn estimator_exact_for_single_cell() {
        let phys = PhysicsConfig::default();
        let grid = Grid2D::centered(1, 1, 0.01).unwrap();
        let gd = GreensVolumeOperator::build(&grid, &phys).unwrap();
        let gs = GreensSurfaceMatrix::build(&grid, &ReceiverRing::new(5.0, 4).unwrap(), &phys).unwrap();
        for truth in [c(0.5, 0.2), c(2.0, 0.0), c(-0.5, 1.5), c(0.01, 0.0)] {
            let ctx = single_cell_context(&gd, &phys, ZERO, true);
            let full = ContrastMap::new(grid, vec![truth]).unwrap();
            let (etot, _) = solve_total_field(&gd, &full, &ctx.einc, &ctx.opts).unwrap();
            let esca = forward::scattered_field(&gs, &full, &etot).unwrap();
            let a = materialize_a(&ctx.split, &gd, &ctx.opts).unwrap();
            let (est, diag) = estimate_chi_p2(&ctx, &esca, &gs, &a, DEFAULT_PINV_THRESHOLD).unwrap();
            assert!((est.values[0] - truth).norm() / truth.norm() <= 1e-6);
            assert!(diag.data_residual <= 1e-6);
            assert_eq!(diag.offdiag_energy_ratio, 0.0);
            assert!(!diag.regularized);
        }
    }

    #[test]
    fn estimator_vanishes_without_unknown_part() {
        let phys = PhysicsConfig::default();
        let grid = Grid2D::centered(1, 1, 0.01).unwrap();
        let gd = GreensVolumeOperator::build(&grid, &phys).unwrap();
        let gs = GreensSurfaceMatrix::build(&grid, &ReceiverRing::new(5.0, 6).unwrap(), &phys).unwrap();
        let chi1 = c(0.9, 0.4);
        let ctx = single_cell_context(&gd, &phys, chi1, false);
        let (etot, _) = solve_total_field(&gd, &ctx.split.chi_p1, &ctx.einc, &ctx.opts).unwrap();
        let esca = forward::scattered_field(&gs, &ctx.split.chi_p1, &etot).unwrap();
        let a = materialize_a(&ctx.split, &gd, &ctx.opts).unwrap();
        let (est, diag) = estimate_chi_p2(&ctx, &esca, &gs, &a, DEFAULT_PINV_THRESHOLD).unwrap();
        assert!(diag.matrix_norm <= 1e-8 * chi1.norm());
        assert_eq!(est.values[0], ZERO);
    }

    #[test]
    fn sherman_morrison_matches_dense_lu_formula() {
        let (grid, phys, gd) = setup(6);
        let gs = GreensSurfaceMatrix::build(&grid, &ReceiverRing::default(), &phys).unwrap();
        let trial = random_split_trial(&grid, 44);
        let einc = incident_field(&grid, &phys, &trial.wave);
        let opts = SolverOptions::default();
        let ctx = KnownPartContext::new(trial.split.clone(), &gd, einc.clone(), opts).unwrap();
        let full = compose_full_contrast(&trial.split, &trial.chi_p2).unwrap();
        let (etot, _) = solve_total_field(&gd, &full, &einc, &opts).unwrap();
        let esca = forward::scattered_field(&gs, &full, &etot).unwrap();
        let a = materialize_a(&trial.split, &gd, &opts).unwrap();
        let (est, diag) = estimate_chi_p2(&ctx, &esca, &gs, &a, DEFAULT_PINV_THRESHOLD).unwrap();
        let dense = estimate_matrix_dense(&ctx, &esca, &gs, &a, DEFAULT_PINV_THRESHOLD).unwrap();
        for m in 0..grid.len() {
            let expected = if trial.split.mask_p2[m] { dense[(m, m)] } else { ZERO };
            assert!((est.values[m] - expected).norm() <= 1e-9 * (1.0 + dense.norm()));
        }
        assert!(((diag.matrix_norm - dense.norm()) / dense.norm()).abs() <= 1e-9);
        assert!(diag.data_residual.is_finite());
        assert!(diag.offdiag_energy_ratio > 0.0 && diag.offdiag_energy_ratio <= 1.0);
    }

    #[test]
    fn estimator_rejects_zero_known_field() {
        let (grid, phys, gd) = setup(2);
        let gs = GreensSurfaceMatrix::build(&grid, &ReceiverRing::new(5.0, 4).unwrap(), &phys).unwrap();
        let split = SplitProfile::new(ContrastMap::zeros(grid), vec![true; 4]).unwrap();
        let mut einc = incident_field(&grid, &phys, &IncidentWave::new(0.0));
        einc.values.iter_mut().for_each(|v| *v = ZERO);
        let ctx = KnownPartContext::new(split, &gd, einc, SolverOptions::default()).unwrap();
        let a = gd.to_dense();
        let esca = FieldVector::on_receivers(&gs.ring, vec![c(1.0, 0.0); 4]).unwrap();
        assert!(matches!(estimate_chi_p2(&ctx, &esca, &gs, &a, 1e-12), Err(Error::Degenerate(_))));
    }

    #[test]
    fn split_trials_detect_corruption() {
        let grid = Grid2D::centered(8, 8, 0.01).unwrap();
        let phys = PhysicsConfig::default();
        let ring = ReceiverRing::default();
        let opts = SolverOptions::with_tol(1e-11);
        let ok = run_split_trials(&grid, &phys, &ring, 2, 1, &opts, 1e-13, false).unwrap();
        assert!(ok.max_field_deviation <= 1e-8 && ok.max_scattered_deviation <= 1e-9);
        let bad = run_split_trials(&grid, &phys, &ring, 2, 1, &opts, 1e-13, true).unwrap();
        assert!(bad.max_field_deviation > 1e-6);
    }
}
