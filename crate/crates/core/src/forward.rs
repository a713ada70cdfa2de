//! State equation `(I - G_D·diag(χ)) E^tot = E^inc` and data equation
//! `E^sca = G_S·(χ ⊙ E^tot)`.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greens::{CMatrix, GreensSurfaceMatrix, GreensVolumeOperator};
use crate::grid::{ContrastMap, FieldDomain, FieldVector};
use crate::krylov::{self, KrylovOptions, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KrylovMethod {
    Gmres,
    Bicgstab,
}

impl KrylovMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            KrylovMethod::Gmres => "gmres",
            KrylovMethod::Bicgstab => "bicgstab",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag.to_ascii_lowercase().as_str() {
            "gmres" => Ok(KrylovMethod::Gmres),
            "bicgstab" => Ok(KrylovMethod::Bicgstab),
            other => Err(Error::InvalidConfig(format!("unknown Krylov method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub rel_tol: f64,
    pub max_iters: usize,
    pub method: KrylovMethod,
    /// GMRES restart length; ignored by BiCGSTAB.
    pub restart: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-10, max_iters: 2000, method: KrylovMethod::Gmres, restart: 100 }
    }
}

impl SolverOptions {
    pub fn with_tol(rel_tol: f64) -> Self {
        Self { rel_tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::InvalidConfig(format!("rel_tol must be in (0, 1), got {}", self.rel_tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        Ok(())
    }

    fn krylov(&self) -> KrylovOptions {
        KrylovOptions { rel_tol: self.rel_tol, max_iters: self.max_iters, restart: self.restart }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_rel_residual: f64,
    pub converged: bool,
}

impl SolveReport {
    /// Turns a non-converged report into an error.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged { iterations: self.iterations, residual: self.final_rel_residual })
        }
    }
}

/// `x ↦ x - G_D (χ ⊙ x)` as a matrix-free operator.
pub struct StateOperator<'a> {
    pub gd: &'a GreensVolumeOperator,
    pub chi: &'a [Complex64],
}

impl LinearOperator for StateOperator<'_> {
    fn dim(&self) -> usize {
        self.chi.len()
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        let src: Vec<Complex64> = x.iter().zip(self.chi).map(|(a, c)| a * c).collect();
        self.gd.apply_into(&src, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = xi - *yi;
        }
    }
}

fn check_finite(values: &[Complex64], what: &'static str) -> Result<()> {
    if values.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Runs the configured Krylov method on any square operator.
pub fn solve_operator<A: LinearOperator + ?Sized>(
    op: &A,
    rhs: &[Complex64],
    opts: &SolverOptions,
) -> (Vec<Complex64>, SolveReport) {
    let res = match opts.method {
        KrylovMethod::Gmres => krylov::gmres(op, rhs, &opts.krylov()),
        KrylovMethod::Bicgstab => krylov::bicgstab(op, rhs, &opts.krylov()),
    };
    let report = SolveReport {
        iterations: res.iterations,
        final_rel_residual: res.rel_residual,
        converged: res.converged,
    };
    (res.x, report)
}

/// Solves `(I - G_D·diag(chi)) x = rhs` for an arbitrary right-hand side.
pub fn solve_state_system(
    gd: &GreensVolumeOperator,
    chi: &[Complex64],
    rhs: &[Complex64],
    opts: &SolverOptions,
) -> Result<(Vec<Complex64>, SolveReport)> {
    opts.validate()?;
    let m = gd.grid().len();
    if chi.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: chi.len() });
    }
    if rhs.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: rhs.len() });
    }
    check_finite(chi, "contrast")?;
    check_finite(rhs, "right-hand side")?;
    if chi.iter().all(|c| c.re == 0.0 && c.im == 0.0) {
        let report = SolveReport { iterations: 0, final_rel_residual: 0.0, converged: true };
        return Ok((rhs.to_vec(), report));
    }
    let op = StateOperator { gd, chi };
    Ok(solve_operator(&op, rhs, opts))
}

/// Total field inside the domain for contrast `chi` under incidence `einc`.
///
/// A non-converged solve is returned with `converged == false`; callers decide.
pub fn solve_total_field(
    gd: &GreensVolumeOperator,
    chi: &ContrastMap,
    einc: &FieldVector,
    opts: &SolverOptions,
) -> Result<(FieldVector, SolveReport)> {
    if chi.grid != *gd.grid() {
        return Err(Error::GridMismatch);
    }
    let (x, report) = solve_state_system(gd, &chi.values, &einc.values, opts)?;
    Ok((FieldVector { values: x, domain: FieldDomain::Grid }, report))
}

/// `‖(I - G_D·diag(χ)) E - E^inc‖ / ‖E^inc‖`, computed from scratch.
pub fn state_residual(gd: &GreensVolumeOperator, chi: &ContrastMap, etot: &FieldVector, einc: &FieldVector) -> f64 {
    krylov::true_rel_residual(&StateOperator { gd, chi: &chi.values }, &etot.values, &einc.values)
}

/// Largest grid for which the dense direct solve is offered.
pub const DENSE_SOLVE_CAP: usize = 24 * 24;

/// Dense LU solve of the state equation; test oracle for small grids.
pub fn solve_total_field_dense(gd: &GreensVolumeOperator, chi: &ContrastMap, einc: &FieldVector) -> Result<FieldVector> {
    let m = gd.grid().len();
    if m > DENSE_SOLVE_CAP {
        return Err(Error::CapExceeded { size: m, cap: DENSE_SOLVE_CAP });
    }
    let system = state_matrix_dense(gd, &chi.values);
    let x = system
        .lu()
        .solve(&DVector::from_column_slice(&einc.values))
        .ok_or_else(|| Error::Degenerate("singular state matrix".into()))?;
    Ok(FieldVector { values: x.as_slice().to_vec(), domain: FieldDomain::Grid })
}

/// Explicit `I - G_D·diag(chi)`.
pub fn state_matrix_dense(gd: &GreensVolumeOperator, chi: &[Complex64]) -> CMatrix {
    let mut a = gd.to_dense();
    let m = a.nrows();
    for c in 0..m {
        for r in 0..m {
            a[(r, c)] = -a[(r, c)] * chi[c];
        }
        a[(c, c)] += Complex64::new(1.0, 0.0);
    }
    a
}

/// `E^sca = G_S·(χ ⊙ E^tot)`.
pub fn scattered_field(gs: &GreensSurfaceMatrix, chi: &ContrastMap, etot: &FieldVector) -> Result<FieldVector> {
    if chi.values.len() != etot.len() {
        return Err(Error::DimensionMismatch { expected: chi.values.len(), got: etot.len() });
    }
    let src: Vec<Complex64> = chi.values.iter().zip(&etot.values).map(|(c, e)| c * e).collect();
    Ok(FieldVector { values: gs.apply(&src)?, domain: FieldDomain::Receivers })
}
