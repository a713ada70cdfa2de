//! Small reproducible split configurations used by the CLI and test suites.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::forward::{self, SolverOptions};
use crate::greens::{GreensSurfaceMatrix, GreensVolumeOperator};
use crate::grid::{
    compose_full_contrast, incident_field, ContrastMap, FieldVector, Grid2D, IncidentWave, PhysicsConfig, ReceiverRing,
    SplitProfile,
};

/// A split configuration with its true unknown contrast.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub phys: PhysicsConfig,
    pub ring: ReceiverRing,
    pub wave: IncidentWave,
    pub split: SplitProfile,
    pub chi_p2: ContrastMap,
}

/// Fields of a scenario solved with its true contrast.
#[derive(Debug, Clone)]
pub struct Synthesized {
    pub gd: GreensVolumeOperator,
    pub gs: GreensSurfaceMatrix,
    pub einc: FieldVector,
    pub etot: FieldVector,
    pub esca: FieldVector,
}

impl Scenario {
    pub fn grid(&self) -> &Grid2D {
        self.split.grid()
    }

    pub fn full_contrast(&self) -> Result<ContrastMap> {
        compose_full_contrast(&self.split, &self.chi_p2)
    }

    pub fn synthesize(&self, opts: &SolverOptions) -> Result<Synthesized> {
        let grid = *self.grid();
        let gd = GreensVolumeOperator::build(&grid, &self.phys)?;
        let gs = GreensSurfaceMatrix::build(&grid, &self.ring, &self.phys)?;
        let einc = incident_field(&grid, &self.phys, &self.wave);
        let full = self.full_contrast()?;
        let (etot, report) = forward::solve_total_field(&gd, &full, &einc, opts)?;
        report.require_converged()?;
        let esca = forward::scattered_field(&gs, &full, &etot)?;
        Ok(Synthesized { gd, gs, einc, etot, esca })
    }
}

fn draw<R: Rng>(rng: &mut R, re: (f64, f64), im: (f64, f64)) -> Complex64 {
    Complex64::new(rng.random_range(re.0..re.1), rng.random_range(im.0..im.1))
}

/// One unknown cell on a 1×1 grid, nothing known.
pub fn isolated_cell(chi: Complex64, ring_count: usize, angle_deg: f64) -> Result<Scenario> {
    let grid = Grid2D::centered(1, 1, 0.01)?;
    Ok(Scenario {
        phys: PhysicsConfig::default(),
        ring: ReceiverRing::new(5.0, ring_count)?,
        wave: IncidentWave::new(angle_deg),
        split: SplitProfile::new(ContrastMap::zeros(grid), vec![true])?,
        chi_p2: ContrastMap::new(grid, vec![chi])?,
    })
}

/// [`isolated_cell`] with `χ` drawn from `seed`.
pub fn isolated_cell_seeded(seed: u64, ring_count: usize, angle_deg: f64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    isolated_cell(draw(&mut rng, (0.1, 1.0), (0.0, 1.0)), ring_count, angle_deg)
}

/// 5×5 grid with a random known contrast on half of the outer cells and a
/// single unknown cell in the centre.
pub fn single_cell(seed: u64) -> Result<Scenario> {
    let grid = Grid2D::centered(5, 5, 0.01)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centre = grid.index(2, 2);
    let zero = Complex64::new(0.0, 0.0);
    let mut p1 = vec![zero; grid.len()];
    for (m, v) in p1.iter_mut().enumerate() {
        if m != centre && rng.random_bool(0.5) {
            *v = draw(&mut rng, (0.1, 1.0), (0.0, 1.0));
        }
    }
    let mut mask = vec![false; grid.len()];
    mask[centre] = true;
    let mut p2 = vec![zero; grid.len()];
    p2[centre] = draw(&mut rng, (0.1, 1.0), (0.0, 1.0));
    Ok(Scenario {
        phys: PhysicsConfig::default(),
        ring: ReceiverRing::default(),
        wave: IncidentWave::new(rng.random_range(0.0..360.0)),
        split: SplitProfile::new(ContrastMap::new(grid, p1)?, mask)?,
        chi_p2: ContrastMap::new(grid, p2)?,
    })
}

/// 16×16 grid, one 5×5 unknown block and two known rectangles, all with
/// `|χ| ≤ 0.5`.
pub fn block(seed: u64) -> Result<Scenario> {
    let grid = Grid2D::centered(16, 16, 0.01)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero = Complex64::new(0.0, 0.0);
    let mut p1 = vec![zero; grid.len()];
    let mut p2 = vec![zero; grid.len()];
    let mut mask = vec![false; grid.len()];
    let (bi, bj) = (rng.random_range(5..=6), rng.random_range(5..=6));
    for j in bj..bj + 5 {
        for i in bi..bi + 5 {
            let m = grid.index(i, j);
            mask[m] = true;
            p2[m] = draw(&mut rng, (0.05, 0.35), (0.0, 0.35));
        }
    }
    let known = [(1usize, 1usize, 4usize, 3usize), (12, 10, 3, 5)];
    for &(i0, j0, w, h) in &known {
        let c = draw(&mut rng, (0.1, 0.35), (0.0, 0.35));
        for j in j0..j0 + h {
            for i in i0..i0 + w {
                p1[grid.index(i, j)] = c;
            }
        }
    }
    Ok(Scenario {
        phys: PhysicsConfig::default(),
        ring: ReceiverRing::default(),
        wave: IncidentWave::new(rng.random_range(0.0..360.0)),
        split: SplitProfile::new(ContrastMap::new(grid, p1)?, mask)?,
        chi_p2: ContrastMap::new(grid, p2)?,
    })
}
