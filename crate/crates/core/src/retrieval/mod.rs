//! Classical retrieval of the unknown contrast from receiver data with the
//! known part held fixed.
//!
//! The objective is
//!
//! ```text
//! f(χ2) = ‖G_S·((χ1 + χ2) ⊙ E^tot(χ2)) - E^sca_0‖² / ‖E^sca_0‖² + λ‖χ2‖²
//! ```
//!
//! with the state equation solved exactly at every evaluation. The gradient
//! with respect to `conj(χ2)` costs one forward and one adjoint solve; since
//! `G_D` is symmetric the adjoint system `(I - X·G_D)ᴴ` reuses the forward
//! solver through conjugation.

pub mod metrics;

use log::debug;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{self, solve_state_system, SolverOptions};
use crate::greens::{GreensSurfaceMatrix, GreensVolumeOperator, DEFAULT_PINV_THRESHOLD};
use crate::grid::{compose_full_contrast, ContrastMap, FieldVector, SplitProfile};
use crate::split::{estimate_chi_p2, materialize_a, KnownPartContext};
use crate::vecops;

pub use metrics::{mean_relative_error, mse_loss, relative_error, total_loss, MreReport};

/// Box constraint on the real and imaginary parts of `χ^p2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastBounds {
    pub re: (f64, f64),
    pub im: (f64, f64),
}

impl ContrastBounds {
    fn project(&self, c: Complex64) -> Complex64 {
        Complex64::new(c.re.clamp(self.re.0, self.re.1), c.im.clamp(self.im.0, self.im.1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionOptions {
    pub max_outer_iters: usize,
    pub armijo_c: f64,
    pub shrink: f64,
    pub max_shrinks: usize,
    /// Stop once `‖g_k‖ ≤ grad_tol·‖g_0‖`.
    pub grad_tol: f64,
    /// Stop once the objective drops to this value.
    pub objective_floor: f64,
    pub tikhonov_lambda: f64,
    pub bounds: Option<ContrastBounds>,
    pub solver: SolverOptions,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            max_outer_iters: 500,
            armijo_c: 1e-4,
            shrink: 0.5,
            max_shrinks: 60,
            grad_tol: 1e-8,
            objective_floor: 1e-24,
            tikhonov_lambda: 0.0,
            bounds: None,
            solver: SolverOptions::with_tol(1e-12),
        }
    }
}

impl InversionOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must be in (0, 1)");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink must be in (0, 1)");
        }
        if [self.grad_tol, self.objective_floor].iter().any(|t| t.is_nan() || *t < 0.0) {
            return bad("tolerances must be non-negative");
        }
        if self.tikhonov_lambda.is_nan() || self.tikhonov_lambda < 0.0 {
            return bad("tikhonov_lambda must be non-negative");
        }
        if let Some(b) = self.bounds {
            if !(b.re.0 <= b.re.1 && b.im.0 <= b.im.1) {
                return bad("bounds must satisfy lo <= hi");
            }
        }
        self.solver.validate()
    }
}

/// Starting point for [`invert_chi_p2`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InversionInit {
    Zero,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionTrace {
    /// Objective at each accepted iterate, starting with the initializer.
    pub objectives: Vec<f64>,
    pub gradient_norms: Vec<f64>,
    pub steps: Vec<f64>,
    pub chi_p2: ContrastMap,
    pub converged: bool,
    pub line_search_failed: bool,
}

impl InversionTrace {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    pub fn initial_objective(&self) -> f64 {
        self.objectives[0]
    }

    pub fn final_objective(&self) -> f64 {
        *self.objectives.last().expect("trace holds the initial objective")
    }
}

/// Everything fixed during one retrieval.
#[derive(Debug, Clone, Copy)]
pub struct MisfitProblem<'a> {
    pub split: &'a SplitProfile,
    pub gs: &'a GreensSurfaceMatrix,
    pub gd: &'a GreensVolumeOperator,
    pub einc: &'a FieldVector,
    pub esca0: &'a FieldVector,
    pub lambda: f64,
    pub solver: &'a SolverOptions,
}

struct Evaluation {
    objective: f64,
    etot: Vec<Complex64>,
    full: ContrastMap,
    residual: Vec<Complex64>,
}

impl MisfitProblem<'_> {
    fn check(&self) -> Result<()> {
        let grid = self.split.grid();
        if self.gd.grid() != grid || &self.gs.grid != grid {
            return Err(Error::GridMismatch);
        }
        if self.einc.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: self.einc.len() });
        }
        if self.esca0.len() != self.gs.entries.nrows() {
            return Err(Error::DimensionMismatch { expected: self.gs.entries.nrows(), got: self.esca0.len() });
        }
        if vecops::norm_sqr(&self.esca0.values) == 0.0 {
            return Err(Error::Degenerate("measured scattered field is zero".into()));
        }
        Ok(())
    }

    fn evaluate(&self, chi_p2: &ContrastMap) -> Result<Evaluation> {
        let chi_p2 = self.split.restrict(chi_p2);
        let full = compose_full_contrast(self.split, &chi_p2)?;
        let (etot, report) = forward::solve_total_field(self.gd, &full, self.einc, self.solver)?;
        report.require_converged()?;
        let predicted = forward::scattered_field(self.gs, &full, &etot)?;
        let residual = vecops::sub(&predicted.values, &self.esca0.values);
        let d2 = vecops::norm_sqr(&self.esca0.values);
        let objective = vecops::norm_sqr(&residual) / d2 + self.lambda * vecops::norm_sqr(&chi_p2.values);
        Ok(Evaluation { objective, etot: etot.values, full, residual })
    }

    fn gradient_at(&self, chi_p2: &ContrastMap, ev: &Evaluation) -> Result<Vec<Complex64>> {
        // z = (I - X G_D)⁻ᴴ G_Sᴴ r = conj((I - G_D X)⁻¹ G_Sᵀ conj(r))
        let rhs: Vec<Complex64> = self.gs.apply_adjoint(&ev.residual)?.iter().map(|v| v.conj()).collect();
        let (w, report) = solve_state_system(self.gd, &ev.full.values, &rhs, self.solver)?;
        report.require_converged()?;
        let d2 = vecops::norm_sqr(&self.esca0.values);
        Ok(w.iter()
            .zip(&ev.etot)
            .zip(&chi_p2.values)
            .zip(&self.split.mask_p2)
            .map(|(((wi, ei), ci), &m)| {
                if m {
                    ei.conj() * wi.conj() / d2 + self.lambda * ci
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect())
    }
}

/// Normalized data misfit plus the Tikhonov term.
pub fn data_misfit(problem: &MisfitProblem<'_>, chi_p2: &ContrastMap) -> Result<f64> {
    problem.check()?;
    Ok(problem.evaluate(chi_p2)?.objective)
}

/// Objective value and its Wirtinger gradient with respect to `conj(χ^p2)`,
/// zero outside the mask. For a real perturbation direction `δ` the
/// directional derivative is `2·Re(gᴴδ)`.
pub fn misfit_gradient(problem: &MisfitProblem<'_>, chi_p2: &ContrastMap) -> Result<(f64, Vec<Complex64>)> {
    problem.check()?;
    let chi_p2 = problem.split.restrict(chi_p2);
    let ev = problem.evaluate(&chi_p2)?;
    let g = problem.gradient_at(&chi_p2, &ev)?;
    Ok((ev.objective, g))
}

/// Gradient descent with projected Armijo backtracking. Trial steps start
/// from the Barzilai–Borwein length. Returns the best iterate.
pub fn invert_chi_p2(
    problem: &MisfitProblem<'_>,
    opts: &InversionOptions,
    init: InversionInit,
) -> Result<(ContrastMap, InversionTrace)> {
    opts.validate()?;
    problem.check()?;
    let problem = MisfitProblem { lambda: opts.tikhonov_lambda, solver: &opts.solver, ..*problem };
    let grid = *problem.split.grid();
    let project = |c: ContrastMap| -> ContrastMap {
        let c = problem.split.restrict(&c);
        match opts.bounds {
            Some(b) => ContrastMap {
                grid: c.grid,
                values: c
                    .values
                    .iter()
                    .zip(&problem.split.mask_p2)
                    .map(|(&v, &m)| if m { b.project(v) } else { v })
                    .collect(),
            },
            None => c,
        }
    };

    let start = match init {
        InversionInit::Zero => ContrastMap::zeros(grid),
        InversionInit::ClosedForm => {
            let ctx = KnownPartContext::new(problem.split.clone(), problem.gd, problem.einc.clone(), opts.solver)?;
            let a = materialize_a(problem.split, problem.gd, &opts.solver)?;
            estimate_chi_p2(&ctx, problem.esca0, problem.gs, &a, DEFAULT_PINV_THRESHOLD)?.0
        }
    };
    let mut x = project(start);
    let mut ev = problem.evaluate(&x)?;
    let mut g = problem.gradient_at(&x, &ev)?;
    let g0 = vecops::norm(&g);
    let mut trace = InversionTrace {
        objectives: vec![ev.objective],
        gradient_norms: vec![g0],
        steps: Vec::new(),
        chi_p2: x.clone(),
        converged: false,
        line_search_failed: false,
    };
    let done = |f: f64, gn: f64| f <= opts.objective_floor || gn == 0.0 || gn <= opts.grad_tol * g0;
    if done(ev.objective, g0) {
        trace.converged = true;
        return Ok((x, trace));
    }

    let mut prev: Option<(Vec<Complex64>, Vec<Complex64>)> = None;
    for it in 0..opts.max_outer_iters {
        let gn2 = vecops::norm_sqr(&g);
        let mut alpha = match &prev {
            Some((xp, gp)) => {
                let s = vecops::sub(&x.values, xp);
                let y = vecops::sub(&g, gp);
                let sy = vecops::dotc(&s, &y).re;
                if sy > 0.0 {
                    vecops::norm_sqr(&s) / sy
                } else {
                    ev.objective / (2.0 * gn2)
                }
            }
            None => ev.objective / (2.0 * gn2),
        };

        let mut accepted = None;
        for _ in 0..=opts.max_shrinks {
            let trial = project(ContrastMap {
                grid,
                values: x.values.iter().zip(&g).map(|(xi, gi)| xi - alpha * gi).collect(),
            });
            let step = vecops::sub(&trial.values, &x.values);
            // f(x + s) ≤ f(x) + c·2·Re(gᴴ s)
            let decrease = 2.0 * vecops::dotc(&g, &step).re;
            if decrease < 0.0 {
                let tev = problem.evaluate(&trial)?;
                if tev.objective <= ev.objective + opts.armijo_c * decrease {
                    accepted = Some((trial, tev));
                    break;
                }
            }
            alpha *= opts.shrink;
        }

        let Some((nx, nev)) = accepted else {
            debug!("line search failed at iteration {it}");
            trace.line_search_failed = true;
            break;
        };
        let ng = problem.gradient_at(&nx, &nev)?;
        prev = Some((std::mem::replace(&mut x, nx).values, std::mem::replace(&mut g, ng)));
        ev = nev;
        let gn = vecops::norm(&g);
        trace.objectives.push(ev.objective);
        trace.gradient_norms.push(gn);
        trace.steps.push(alpha);
        debug!("iteration {it}: f = {:.3e}, |g| = {gn:.3e}, step = {alpha:.3e}", ev.objective);
        if done(ev.objective, gn) {
            trace.converged = true;
            break;
        }
    }
    // accepted steps never increase the objective, so the last iterate is the best
    trace.chi_p2 = x.clone();
    Ok((x, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_total_field;
    use crate::grid::{incident_field, Grid2D, IncidentWave, PhysicsConfig, ReceiverRing};
    use crate::split::random_split_trial;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    struct Fixture {
        split: SplitProfile,
        truth: ContrastMap,
        gs: GreensSurfaceMatrix,
        gd: GreensVolumeOperator,
        einc: FieldVector,
        esca0: FieldVector,
        solver: SolverOptions,
    }

    impl Fixture {
        fn new(split: SplitProfile, truth: ContrastMap, angle: f64) -> Self {
            let grid = *split.grid();
            let phys = PhysicsConfig::default();
            let gd = GreensVolumeOperator::build(&grid, &phys).unwrap();
            let gs = GreensSurfaceMatrix::build(&grid, &ReceiverRing::default(), &phys).unwrap();
            let einc = incident_field(&grid, &phys, &IncidentWave::new(angle));
            let solver = SolverOptions::with_tol(1e-13);
            let full = compose_full_contrast(&split, &truth).unwrap();
            let (etot, _) = solve_total_field(&gd, &full, &einc, &solver).unwrap();
            let esca0 = forward::scattered_field(&gs, &full, &etot).unwrap();
            Self { split, truth, gs, gd, einc, esca0, solver }
        }

        fn random(n: usize, seed: u64) -> Self {
            let grid = Grid2D::centered(n, n, 0.01).unwrap();
            let t = random_split_trial(&grid, seed);
            Self::new(t.split, t.chi_p2, t.wave.angle_deg)
        }

        fn problem(&self) -> MisfitProblem<'_> {
            MisfitProblem {
                split: &self.split,
                gs: &self.gs,
                gd: &self.gd,
                einc: &self.einc,
                esca0: &self.esca0,
                lambda: 0.0,
                solver: &self.solver,
            }
        }
    }

    fn single_cell(noise: Option<(f64, u64)>) -> (Fixture, Complex64) {
        let grid = Grid2D::centered(5, 5, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let t = random_split_trial(&grid, 17);
        let centre = grid.index(2, 2);
        let mut p1 = t.split.chi_p1.values.clone();
        p1[centre] = Complex64::new(0.0, 0.0);
        let mut mask = vec![false; grid.len()];
        mask[centre] = true;
        let mut p2 = vec![Complex64::new(0.0, 0.0); grid.len()];
        let truth = Complex64::new(0.6, 0.25);
        p2[centre] = truth;
        let split = SplitProfile::new(ContrastMap::new(grid, p1).unwrap(), mask).unwrap();
        let mut fx = Fixture::new(split, ContrastMap::new(grid, p2).unwrap(), 30.0);
        if let Some((level, _)) = noise {
            let rms = fx.esca0.norm() / (fx.esca0.len() as f64).sqrt();
            let dist = Normal::new(0.0, level * rms / 2f64.sqrt()).unwrap();
            for v in &mut fx.esca0.values {
                *v += Complex64::new(dist.sample(&mut rng), dist.sample(&mut rng));
            }
        }
        (fx, truth)
    }

    #[test]
    fn misfit_basic_properties() {
        let fx = Fixture::random(8, 3);
        let p = fx.problem();
        assert!(data_misfit(&p, &fx.truth).unwrap() <= 1e-16);
        assert!(data_misfit(&p, &ContrastMap::zeros(*fx.split.grid())).unwrap() > 0.0);

        let lam = MisfitProblem { lambda: 0.3, ..p };
        let expected = 0.3 * vecops::norm_sqr(&fx.truth.values);
        assert!((data_misfit(&lam, &fx.truth).unwrap() - expected).abs() <= 1e-12);

        // jointly scaling data and operator leaves f unchanged
        let mut gs2 = fx.gs.clone();
        gs2.entries *= Complex64::new(2.0, 0.0);
        let esca2 = FieldVector { values: fx.esca0.values.iter().map(|v| v * 2.0).collect(), ..fx.esca0.clone() };
        let scaled = MisfitProblem { gs: &gs2, esca0: &esca2, ..p };
        let probe = ContrastMap { values: fx.truth.values.iter().map(|v| v * 0.7).collect(), ..fx.truth.clone() };
        let a = data_misfit(&p, &probe).unwrap();
        let b = data_misfit(&scaled, &probe).unwrap();
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn gradient_vanishes_at_truth_and_respects_mask() {
        let fx = Fixture::random(8, 4);
        let p = fx.problem();
        let (_, g) = misfit_gradient(&p, &fx.truth).unwrap();
        let (_, g0) = misfit_gradient(&p, &ContrastMap::zeros(*fx.split.grid())).unwrap();
        assert!(vecops::norm(&g) <= 1e-8 * vecops::norm(&g0));
        for (gi, &m) in g0.iter().zip(&fx.split.mask_p2) {
            if !m {
                assert_eq!(*gi, Complex64::new(0.0, 0.0));
            }
        }
    }

    /// Central differences along each masked cell's real and imaginary axes.
    pub(crate) fn fd_gradient_error(p: &MisfitProblem<'_>, at: &ContrastMap, h: f64) -> f64 {
        let (_, g) = misfit_gradient(p, at).unwrap();
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for (m, &inside) in p.split.mask_p2.iter().enumerate() {
            if !inside {
                continue;
            }
            for dir in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)] {
                let mut plus = at.clone();
                let mut minus = at.clone();
                plus.values[m] += dir * h;
                minus.values[m] -= dir * h;
                let fd = (data_misfit(p, &plus).unwrap() - data_misfit(p, &minus).unwrap()) / (2.0 * h);
                numeric.push(fd);
                analytic.push(2.0 * (g[m].conj() * dir).re);
            }
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        diff / numeric.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let fx = Fixture::random(8, 50 + seed);
            let p = MisfitProblem { lambda: 0.01, ..fx.problem() };
            let at = ContrastMap { values: fx.truth.values.iter().map(|v| v * 0.5).collect(), ..fx.truth.clone() };
            let err = fd_gradient_error(&p, &at, 1e-6);
            assert!(err <= 1e-6, "seed {seed}: {err:e}");
        }
    }

    #[test]
    fn inversion_recovers_single_cell() {
        let (fx, truth) = single_cell(None);
        let (est, trace) = invert_chi_p2(&fx.problem(), &InversionOptions::default(), InversionInit::Zero).unwrap();
        let m = fx.split.mask_p2.iter().position(|&b| b).unwrap();
        assert!((est.values[m] - truth).norm() / truth.norm() <= 1e-3);
        assert!(trace.converged);
        assert!(trace.objectives.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn inversion_with_noise_stays_close() {
        let (fx, truth) = single_cell(Some((0.01, 5)));
        let (est, _) = invert_chi_p2(&fx.problem(), &InversionOptions::default(), InversionInit::Zero).unwrap();
        let m = fx.split.mask_p2.iter().position(|&b| b).unwrap();
        assert!((est.values[m] - truth).norm() / truth.norm() <= 5e-2);
    }

    #[test]
    fn closed_form_initializer_reports_its_own_objective() {
        let (fx, _) = single_cell(None);
        let opts = InversionOptions { max_outer_iters: 5, ..Default::default() };
        let (_, trace) = invert_chi_p2(&fx.problem(), &opts, InversionInit::ClosedForm).unwrap();
        let ctx = KnownPartContext::new(fx.split.clone(), &fx.gd, fx.einc.clone(), opts.solver).unwrap();
        let a = materialize_a(&fx.split, &fx.gd, &opts.solver).unwrap();
        let (est, _) = estimate_chi_p2(&ctx, &fx.esca0, &fx.gs, &a, DEFAULT_PINV_THRESHOLD).unwrap();
        let f = data_misfit(&fx.problem(), &est).unwrap();
        assert!(trace.initial_objective() <= f * (1.0 + 1e-9) + 1e-30);
    }

    #[test]
    fn bounds_are_enforced() {
        let (fx, _) = single_cell(None);
        let bounds = ContrastBounds { re: (0.0, 0.3), im: (0.0, 0.1) };
        let opts = InversionOptions { bounds: Some(bounds), max_outer_iters: 50, ..Default::default() };
        let (est, trace) = invert_chi_p2(&fx.problem(), &opts, InversionInit::Zero).unwrap();
        assert!(est.values.iter().all(|v| v.re <= 0.3 + 1e-15 && v.im <= 0.1 + 1e-15));
        assert!(trace.objectives.windows(2).all(|w| w[1] <= w[0]));
        assert!(trace.final_objective() < trace.initial_objective());
    }

    #[test]
    fn options_are_validated() {
        let (fx, _) = single_cell(None);
        let bad = InversionOptions { shrink: 1.5, ..Default::default() };
        assert!(invert_chi_p2(&fx.problem(), &bad, InversionInit::Zero).is_err());
        let bad = InversionOptions { tikhonov_lambda: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn deterministic() {
        let fx = Fixture::random(6, 8);
        let opts = InversionOptions { max_outer_iters: 20, ..Default::default() };
        let a = invert_chi_p2(&fx.problem(), &opts, InversionInit::Zero).unwrap();
        let b = invert_chi_p2(&fx.problem(), &opts, InversionInit::Zero).unwrap();
        assert_eq!(a.1, b.1);
    }
}
