//! Training samples: digit-shaped scatterers in the four grid quadrants, one
//! of them unknown, with simulated fields; plus their on-disk format.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/samples/<id>/{chi_p1, mask_p2, chi_p2, esca0, ep1, etot}.vsf
//! <dir>/operators/gs.vsf            (optional)
//! ```

pub mod raster;
pub mod vsf;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use log::{info, warn};
use num_complex::Complex64;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forward::{self, KrylovMethod, SolverOptions};
use crate::greens::{GreensSurfaceMatrix, GreensVolumeOperator};
use crate::grid::{
    compose_full_contrast, incident_field, ContrastMap, FieldVector, Grid2D, IncidentWave, PhysicsConfig, ReceiverRing,
    SplitProfile,
};
use crate::vecops::rel_diff;

pub use raster::{procedural_digit, rasterize_shape, RasterShape};
pub use vsf::{read_vsf, write_vsf, VsfArray};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_SCHEMA: &str = "splitvie.dataset";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLE_ARRAYS: [&str; 6] = ["chi_p1", "mask_p2", "chi_p2", "esca0", "ep1", "etot"];

const MAX_ATTEMPTS: u64 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub grid: Grid2D,
    pub physics: PhysicsConfig,
    pub ring: ReceiverRing,
    /// Sample `q` uses `incidences_deg[q % len]`.
    pub incidences_deg: Vec<f64>,
    pub contrast_re: (f64, f64),
    pub contrast_im: (f64, f64),
    pub threshold: f64,
    pub solver: SolverOptions,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            grid: Grid2D::default_domain(),
            physics: PhysicsConfig::default(),
            ring: ReceiverRing::default(),
            incidences_deg: vec![0.0],
            contrast_re: (0.10, 1.00),
            contrast_im: (0.00, 1.00),
            threshold: 0.5,
            solver: SolverOptions::with_tol(1e-12),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.incidences_deg.is_empty() {
            return Err(Error::InvalidConfig("at least one incidence angle is required".into()));
        }
        for (name, (lo, hi)) in [("contrast_re", self.contrast_re), ("contrast_im", self.contrast_im)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!("{name} range must satisfy lo <= hi")));
            }
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidConfig("threshold must be in (0, 1)".into()));
        }
        self.solver.validate()
    }

    pub fn draw_contrast<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        let uniform = |rng: &mut R, (lo, hi): (f64, f64)| if lo == hi { lo } else { rng.random_range(lo..hi) };
        let re = uniform(rng, self.contrast_re);
        let im = uniform(rng, self.contrast_im);
        Complex64::new(re, im)
    }

    /// Places `shapes` in the four quadrants, draws one constant contrast per
    /// shape and the unknown shape index from `seed`. Returns the split,
    /// `χ^p2` and the unknown shape's quadrant.
    pub fn layout(&self, shapes: &[RasterShape; 4], seed: u64) -> Result<(SplitProfile, ContrastMap, usize)> {
        let grid = self.grid;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let contrasts: Vec<Complex64> = (0..4).map(|_| self.draw_contrast(&mut rng)).collect();
        let p2_shape = rng.random_range(0..4);

        let zero = Complex64::new(0.0, 0.0);
        let mut p1 = vec![zero; grid.len()];
        let mut p2 = vec![zero; grid.len()];
        let mut mask = vec![false; grid.len()];
        for (k, (shape, quadrant)) in shapes.iter().zip(grid.quadrants()).enumerate() {
            let occ = rasterize_shape(shape, &grid, quadrant, self.threshold)?;
            for (m, _) in occ.iter().enumerate().filter(|(_, &o)| o) {
                if k == p2_shape {
                    mask[m] = true;
                    p2[m] = contrasts[k];
                } else {
                    p1[m] = contrasts[k];
                }
            }
        }
        let split = SplitProfile::new(ContrastMap::new(grid, p1)?, mask)?;
        Ok((split, ContrastMap::new(grid, p2)?, p2_shape))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub seed: u64,
    pub incidence: IncidentWave,
    /// Quadrant index of the unknown shape.
    pub p2_shape: usize,
    pub chi_p1: ContrastMap,
    pub mask_p2: Vec<bool>,
    pub chi_p2_label: ContrastMap,
    pub esca0: FieldVector,
    pub e_p1: FieldVector,
    pub etot_label: FieldVector,
}

impl SampleRecord {
    pub fn split(&self) -> Result<SplitProfile> {
        SplitProfile::new(self.chi_p1.clone(), self.mask_p2.clone())
    }

    pub fn full_contrast(&self) -> Result<ContrastMap> {
        compose_full_contrast(&self.split()?, &self.chi_p2_label)
    }

    /// Re-solves the stored full contrast with BiCGSTAB and returns the
    /// relative deviation of the resulting `E^sca` from the stored one.
    pub fn resimulation_error(&self, gd: &GreensVolumeOperator, gs: &GreensSurfaceMatrix, rel_tol: f64) -> Result<f64> {
        let full = self.full_contrast()?;
        let einc = incident_field(&full.grid, gd.phys(), &self.incidence);
        let opts = SolverOptions { rel_tol, method: KrylovMethod::Bicgstab, ..SolverOptions::default() };
        let (etot, report) = forward::solve_total_field(gd, &full, &einc, &opts)?;
        report.require_converged()?;
        let esca = forward::scattered_field(gs, &full, &etot)?;
        Ok(rel_diff(&esca.values, &self.esca0.values))
    }
}

/// Where the four shapes of each sample come from.
#[derive(Debug, Clone)]
pub enum ShapeSource {
    /// Seven-segment digits with randomized strokes.
    Procedural,
    Rasters(Vec<RasterShape>),
}

impl ShapeSource {
    /// Shapes for a sample seed, drawn on a stream separate from the contrasts.
    pub fn pick_for_seed(&self, seed: u64) -> Result<[RasterShape; 4]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        self.pick(&mut rng)
    }

    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<[RasterShape; 4]> {
        match self {
            ShapeSource::Procedural => {
                let digits = sample_indices(rng, 10, 4);
                let shapes: Vec<_> = digits.iter().map(|d| procedural_digit(d as u8, rng)).collect();
                Ok(shapes.try_into().expect("four digits"))
            }
            ShapeSource::Rasters(list) if list.is_empty() => Err(Error::InvalidConfig("no rasters available".into())),
            ShapeSource::Rasters(list) => {
                let idx: Vec<usize> = if list.len() >= 4 {
                    sample_indices(rng, list.len(), 4).into_vec()
                } else {
                    (0..4).map(|_| rng.random_range(0..list.len())).collect()
                };
                Ok(idx.iter().map(|&i| list[i].clone()).collect::<Vec<_>>().try_into().expect("four shapes"))
            }
        }
    }
}

/// Seed for attempt `attempt` of sample `index`.
pub fn derive_seed(global: u64, index: u64, attempt: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(global);
    rng.set_stream(index);
    rng.set_word_pos(2 * attempt as u128);
    rng.random()
}

pub fn sample_id(index: usize) -> String {
    format!("{index:06}")
}

/// Operators and configuration shared across samples.
pub struct DatasetGenerator {
    pub config: DatasetConfig,
    pub gd: GreensVolumeOperator,
    pub gs: GreensSurfaceMatrix,
}

impl DatasetGenerator {
    pub fn new(config: DatasetConfig) -> Result<Self> {
        config.validate()?;
        let gd = GreensVolumeOperator::build(&config.grid, &config.physics)?;
        let gs = GreensSurfaceMatrix::build(&config.grid, &config.ring, &config.physics)?;
        Ok(Self { config, gd, gs })
    }

    /// Places `shapes`, draws contrasts from `seed` (see
    /// [`DatasetConfig::layout`]) and solves for `E^p1`, `E^tot` and `E^sca`.
    pub fn generate_sample(&self, shapes: &[RasterShape; 4], seed: u64, id: &str, incidence: IncidentWave) -> Result<SampleRecord> {
        let cfg = &self.config;
        let grid = cfg.grid;
        let (split, chi_p2, p2_shape) = cfg.layout(shapes, seed)?;
        let full = compose_full_contrast(&split, &chi_p2)?;
        let einc = incident_field(&grid, &cfg.physics, &incidence);
        let (e_p1, rep) = forward::solve_total_field(&self.gd, &split.chi_p1, &einc, &cfg.solver)?;
        rep.require_converged()?;
        let (etot, rep) = forward::solve_total_field(&self.gd, &full, &einc, &cfg.solver)?;
        rep.require_converged()?;
        let esca0 = forward::scattered_field(&self.gs, &full, &etot)?;
        Ok(SampleRecord {
            id: id.to_string(),
            seed,
            incidence,
            p2_shape,
            chi_p1: split.chi_p1,
            mask_p2: split.mask_p2,
            chi_p2_label: chi_p2,
            esca0,
            e_p1,
            etot_label: etot,
        })
    }

    /// Sample `index` of a dataset with `global_seed`. Samples whose solve
    /// fails to converge are rejected and retried with the next seed.
    pub fn generate_indexed(&self, source: &ShapeSource, global_seed: u64, index: usize) -> Result<SampleRecord> {
        let incidence = IncidentWave::new(self.config.incidences_deg[index % self.config.incidences_deg.len()]);
        let id = sample_id(index);
        for attempt in 0..MAX_ATTEMPTS {
            let seed = derive_seed(global_seed, index as u64, attempt);
            let shapes = source.pick_for_seed(seed)?;
            match self.generate_sample(&shapes, seed, &id, incidence) {
                Err(Error::NotConverged { iterations, residual }) => {
                    warn!("sample {id} attempt {attempt} rejected: no convergence after {iterations} iterations ({residual:.2e})");
                }
                other => return other,
            }
        }
        Err(Error::Degenerate(format!("sample {id}: every attempt failed to converge")))
    }

    pub fn generate(&self, source: &ShapeSource, global_seed: u64, count: usize) -> Result<Vec<SampleRecord>> {
        (0..count).into_par_iter().map(|q| self.generate_indexed(source, global_seed, q)).collect()
    }

    pub fn manifest(&self, global_seed: u64) -> DatasetManifest {
        DatasetManifest::new(self.config.clone(), global_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub seed: u64,
    pub incidence: IncidentWave,
    pub p2_shape: usize,
    pub files: BTreeMap<String, FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub format_version: u32,
    pub config: DatasetConfig,
    pub global_seed: u64,
    pub samples: Vec<SampleEntry>,
    #[serde(default)]
    pub operators: BTreeMap<String, FileEntry>,
}

impl DatasetManifest {
    pub fn new(config: DatasetConfig, global_seed: u64) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.to_string(),
            format_version: FORMAT_VERSION,
            config,
            global_seed,
            samples: Vec::new(),
            operators: BTreeMap::new(),
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_array(dir: &Path, rel: &str, array: &VsfArray) -> Result<FileEntry> {
    let bytes = array.to_bytes();
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, &bytes)?;
    Ok(FileEntry { path: rel.to_string(), bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) })
}

fn read_array(dir: &Path, entry: &FileEntry) -> Result<VsfArray> {
    let path = dir.join(&entry.path);
    let bytes = fs::read(&path)?;
    if bytes.len() as u64 != entry.bytes {
        return Err(Error::Format(format!("{}: expected {} bytes, found {}", entry.path, entry.bytes, bytes.len())));
    }
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(Error::Checksum(entry.path.clone()));
    }
    VsfArray::from_bytes(&bytes)
}

fn grid_array(grid: &Grid2D, values: Vec<Complex64>) -> VsfArray {
    VsfArray { rank: 2, dims: [grid.ny, grid.nx], data: values }
}

fn expect_grid(array: VsfArray, grid: &Grid2D, name: &str) -> Result<Vec<Complex64>> {
    if array.rank != 2 || array.dims != [grid.ny, grid.nx] {
        return Err(Error::Format(format!("{name}: expected {}x{} array, found {:?}", grid.ny, grid.nx, array.dims)));
    }
    Ok(array.data)
}

/// Writes one sample's arrays and returns its manifest entry.
pub fn write_sample(dir: &Path, record: &SampleRecord) -> Result<SampleEntry> {
    let grid = record.chi_p1.grid;
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mask = record.mask_p2.iter().map(|&m| if m { one } else { zero }).collect();
    let arrays = [
        grid_array(&grid, record.chi_p1.values.clone()),
        grid_array(&grid, mask),
        grid_array(&grid, record.chi_p2_label.values.clone()),
        VsfArray::vector(record.esca0.values.clone()),
        grid_array(&grid, record.e_p1.values.clone()),
        grid_array(&grid, record.etot_label.values.clone()),
    ];
    let mut files = BTreeMap::new();
    for (name, array) in SAMPLE_ARRAYS.iter().zip(&arrays) {
        let rel = format!("samples/{}/{name}.vsf", record.id);
        files.insert(name.to_string(), write_array(dir, &rel, array)?);
    }
    Ok(SampleEntry {
        id: record.id.clone(),
        seed: record.seed,
        incidence: record.incidence,
        p2_shape: record.p2_shape,
        files,
    })
}

/// Loads one sample, verifying sizes and checksums.
pub fn read_sample(dir: &Path, manifest: &DatasetManifest, entry: &SampleEntry) -> Result<SampleRecord> {
    let grid = manifest.config.grid;
    let mut arrays = BTreeMap::new();
    for name in SAMPLE_ARRAYS {
        let fe = entry
            .files
            .get(name)
            .ok_or_else(|| Error::Format(format!("sample {} lacks {name}", entry.id)))?;
        arrays.insert(name, read_array(dir, fe)?);
    }
    let mut take = |name: &str| arrays.remove(name).expect("checked above");
    let chi_p1 = expect_grid(take("chi_p1"), &grid, "chi_p1")?;
    let mask_raw = expect_grid(take("mask_p2"), &grid, "mask_p2")?;
    let chi_p2 = expect_grid(take("chi_p2"), &grid, "chi_p2")?;
    let esca = take("esca0");
    let e_p1 = expect_grid(take("ep1"), &grid, "ep1")?;
    let etot = expect_grid(take("etot"), &grid, "etot")?;
    if esca.rank != 1 || esca.dims[0] != manifest.config.ring.count {
        return Err(Error::Format(format!("esca0: expected {} receivers, found {:?}", manifest.config.ring.count, esca.dims)));
    }
    let mask = mask_raw
        .iter()
        .map(|v| match (v.re, v.im) {
            (x, y) if x == 1.0 && y == 0.0 => Ok(true),
            (x, y) if x == 0.0 && y == 0.0 => Ok(false),
            _ => Err(Error::Format("mask_p2 entries must be 0 or 1".into())),
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(SampleRecord {
        id: entry.id.clone(),
        seed: entry.seed,
        incidence: entry.incidence,
        p2_shape: entry.p2_shape,
        chi_p1: ContrastMap::new(grid, chi_p1)?,
        mask_p2: mask,
        chi_p2_label: ContrastMap::new(grid, chi_p2)?,
        esca0: FieldVector::on_receivers(&manifest.config.ring, esca.data)?,
        e_p1: FieldVector::on_grid(&grid, e_p1)?,
        etot_label: FieldVector::on_grid(&grid, etot)?,
    })
}

pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let version = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Version(version));
    }
    Ok(serde_json::from_value(value)?)
}

/// Writes every sample and the manifest. `base` supplies configuration,
/// seed and operator entries; its sample list is replaced.
pub fn write_dataset(dir: &Path, base: &DatasetManifest, samples: &[SampleRecord]) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let mut manifest = base.clone();
    manifest.samples = samples.iter().map(|s| write_sample(dir, s)).collect::<Result<_>>()?;
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<SampleRecord>)> {
    let manifest = read_manifest(dir)?;
    let samples = manifest
        .samples
        .par_iter()
        .map(|e| read_sample(dir, &manifest, e))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}

/// Writes `G_S` as an `N_s × M` row-major array under `operators/gs.vsf`.
pub fn export_gs(dir: &Path, gs: &GreensSurfaceMatrix) -> Result<FileEntry> {
    let (rows, cols) = gs.shape();
    let data = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|(r, c)| gs.entries[(r, c)]).collect();
    write_array(dir, "operators/gs.vsf", &VsfArray::matrix(rows, cols, data)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub generated: usize,
    pub reused: usize,
    pub spot_checked: usize,
    pub max_resimulation_error: f64,
}

/// Generates `count` samples into `dir`. Samples already present with a
/// matching manifest and valid checksums are kept. One sample in twenty is
/// re-simulated as a label-consistency check.
pub fn generate_dataset_dir(
    dir: &Path,
    generator: &DatasetGenerator,
    source: &ShapeSource,
    global_seed: u64,
    count: usize,
) -> Result<(DatasetManifest, GenerationSummary)> {
    fs::create_dir_all(dir)?;
    let mut manifest = generator.manifest(global_seed);
    let mut existing: BTreeMap<String, SampleEntry> = BTreeMap::new();
    if dir.join(MANIFEST_FILE).exists() {
        let old = read_manifest(dir)?;
        if old.config == manifest.config && old.global_seed == global_seed {
            manifest.operators = old.operators.clone();
            for e in old.samples {
                if read_sample(dir, &manifest, &e).is_ok() {
                    existing.insert(e.id.clone(), e);
                }
            }
        } else {
            return Err(Error::InvalidConfig(format!(
                "{} holds a dataset with a different configuration or seed",
                dir.display()
            )));
        }
    }

    let writer = Mutex::new(());
    let results: Vec<Result<(SampleEntry, bool, Option<f64>)>> = (0..count)
        .into_par_iter()
        .map(|q| {
            let id = sample_id(q);
            if let Some(e) = existing.get(&id) {
                return Ok((e.clone(), false, None));
            }
            let record = generator.generate_indexed(source, global_seed, q)?;
            let check = if q % 20 == 0 {
                Some(record.resimulation_error(&generator.gd, &generator.gs, 1e-13)?)
            } else {
                None
            };
            let _guard = writer.lock().unwrap();
            let entry = write_sample(dir, &record)?;
            if (q + 1) % 100 == 0 {
                info!("generated sample {id}");
            }
            Ok((entry, true, check))
        })
        .collect();

    let mut summary = GenerationSummary { generated: 0, reused: 0, spot_checked: 0, max_resimulation_error: 0.0 };
    for r in results {
        let (entry, fresh, check) = r?;
        if fresh {
            summary.generated += 1;
        } else {
            summary.reused += 1;
        }
        if let Some(c) = check {
            summary.spot_checked += 1;
            summary.max_resimulation_error = summary.max_resimulation_error.max(c);
        }
        manifest.samples.push(entry);
    }
    write_manifest(dir, &manifest)?;
    Ok((manifest, summary))
}
