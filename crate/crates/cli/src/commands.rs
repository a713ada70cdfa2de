use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use splitvie::dataset::{
    export_gs, generate_dataset_dir, raster::load_pgm_dir, read_dataset, read_manifest, read_sample, read_vsf,
    write_manifest, DatasetConfig, DatasetGenerator, ShapeSource, VsfArray,
};
use splitvie::forward::state_residual;
use splitvie::greens::GreensSurfaceMatrix;
use splitvie::mie::DielectricCylinder;
use splitvie::presets::{self, Scenario};
use splitvie::retrieval::{
    self, invert_chi_p2, mean_relative_error, relative_error, ContrastBounds, InversionInit, InversionOptions,
    MisfitProblem,
};
use splitvie::split::{self, estimate_chi_p2, materialize_a_with, AMaterialization, KnownPartContext, DENSE_LU_LIMIT};
use splitvie::{
    incident_field, scattered_field, solve_total_field, Complex64, ContrastMap, Error, FieldVector, Grid2D,
    GreensVolumeOperator, IncidentWave, SolverOptions, SplitProfile,
};

use crate::output::{emit, write_grid, write_heatmap, write_vector};
use crate::{
    CaseArgs, CasePreset, Cli, Command, EstimateArgs, EvalMetricsArgs, ExportArgs, ForwardArgs, ForwardPreset,
    GenDatasetArgs, InitArg, InvertArgs, MieCheckArgs, PhysArgs, SplitCheckArgs,
};

pub const EXIT_NUMERICAL: u8 = 2;

/// `2` for numerical non-convergence, `1` for everything else.
pub fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::NotConverged { .. }) => EXIT_NUMERICAL,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    match cli.command {
        Command::Forward(a) => forward(a),
        Command::SplitCheck(a) => split_check(a),
        Command::EstimateChi2(a) => estimate(a),
        Command::Invert(a) => invert(a),
        Command::GenDataset(a) => gen_dataset(a),
        Command::EvalMetrics(a) => eval_metrics(a),
        Command::ExportOperators(a) => export_operators(a),
        Command::MieCheck(a) => mie_check(a),
    }
}

fn mie_cylinder(radius: f64, eps_r: f64) -> Result<DielectricCylinder> {
    Ok(DielectricCylinder::new(radius, eps_r)?)
}

fn read_contrast(path: &Path, phys: &PhysArgs) -> Result<ContrastMap> {
    let arr = read_vsf(path).with_context(|| format!("reading {}", path.display()))?;
    if arr.rank != 2 {
        bail!("{}: contrast must be a rank-2 array", path.display());
    }
    let [ny, nx] = arr.dims;
    let grid = phys.grid_or(nx, ny, 0.01)?;
    if (grid.nx, grid.ny) != (nx, ny) {
        bail!("{}: array is {ny}x{nx} but --grid asks for {}x{}", path.display(), grid.ny, grid.nx);
    }
    Ok(ContrastMap::new(grid, arr.data)?)
}

fn forward(args: ForwardArgs) -> Result<u8> {
    let phys = args.phys.phys()?;
    let opts = args.phys.solver(1e-10)?;
    let wave = IncidentWave::new(args.phys.angle);
    let mut mie = None;
    let chi = match &args.contrast {
        Some(path) => read_contrast(path, &args.phys)?,
        None => {
            let grid = args.phys.grid_or(64, 64, 0.01)?;
            match args.preset {
                ForwardPreset::Zero => ContrastMap::zeros(grid),
                ForwardPreset::Mie => {
                    let cyl = mie_cylinder(0.15, 1.5)?;
                    mie = Some(cyl);
                    cyl.rasterize(&grid, 16)
                }
                ForwardPreset::Digits => {
                    let cfg = DatasetConfig { grid, ..DatasetConfig::default() };
                    let shapes = ShapeSource::Procedural.pick_for_seed(args.phys.seed)?;
                    let (split, chi_p2, _) = cfg.layout(&shapes, args.phys.seed)?;
                    splitvie::compose_full_contrast(&split, &chi_p2)?
                }
            }
        }
    };
    chi.check_admissible()?;
    let grid = chi.grid;
    let ring = args.phys.ring()?;

    let t0 = Instant::now();
    let gd = GreensVolumeOperator::build(&grid, &phys)?;
    let gs = GreensSurfaceMatrix::build(&grid, &ring, &phys)?;
    let t_build = t0.elapsed().as_secs_f64();
    let einc = incident_field(&grid, &phys, &wave);
    let t1 = Instant::now();
    let (etot, report) = solve_total_field(&gd, &chi, &einc, &opts)?;
    let t_solve = t1.elapsed().as_secs_f64();
    let esca = scattered_field(&gs, &chi, &etot)?;

    write_grid(&args.out, "contrast", &grid, &chi.values)?;
    write_grid(&args.out, "etot", &grid, &etot.values)?;
    write_vector(&args.out, "esca", &esca.values)?;
    if args.heatmap {
        write_heatmap(&args.out.join("etot_abs.pgm"), &grid, &etot.values)?;
    }

    let mut body = json!({
        "grid": grid,
        "frequency_hz": phys.frequency_hz,
        "angle_deg": wave.angle_deg,
        "receivers": ring.count,
        "method": opts.method.tag(),
        "iterations": report.iterations,
        "final_rel_residual": report.final_rel_residual,
        "state_residual": state_residual(&gd, &chi, &etot, &einc),
        "converged": report.converged,
        "timings_s": { "operator_build": t_build, "solve": t_solve },
    });
    if let Some(cyl) = mie {
        let analytic = cyl.scattered_field(&phys, wave.angle_deg, &ring.positions())?;
        let err = splitvie::vecops::rel_diff(&esca.values, &analytic);
        eprintln!("cylinder: relative L2 error against the analytic series = {:.3}%", 100.0 * err);
        body["mie_rel_error"] = json!(err);
    }
    emit("forward", body, Some(&args.out.join("summary.json")))?;
    Ok(if report.converged { 0 } else { EXIT_NUMERICAL })
}

pub const FIELD_THRESHOLD: f64 = 1e-8;
pub const SCATTERED_THRESHOLD: f64 = 1e-9;

fn split_check(args: SplitCheckArgs) -> Result<u8> {
    if args.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let grid = args.phys.grid_or(16, 16, 0.01)?;
    let phys = args.phys.phys()?;
    let ring = args.phys.ring()?;
    let opts = args.phys.solver(1e-11)?;
    let t0 = Instant::now();
    let report =
        split::run_split_trials(&grid, &phys, &ring, args.trials, args.phys.seed, &opts, args.inner_tol, args.corrupt)?;
    let pass = report.max_field_deviation <= FIELD_THRESHOLD && report.max_scattered_deviation <= SCATTERED_THRESHOLD;
    let body = json!({
        "grid": grid,
        "seed": args.phys.seed,
        "corrupted": args.corrupt,
        "trials": report.trials,
        "max_field_deviation": report.max_field_deviation,
        "max_scattered_deviation": report.max_scattered_deviation,
        "thresholds": { "field": FIELD_THRESHOLD, "scattered": SCATTERED_THRESHOLD },
        "pass": pass,
        "elapsed_s": t0.elapsed().as_secs_f64(),
    });
    emit("split-check", body, args.out.as_deref())?;
    Ok(if pass { 0 } else { EXIT_NUMERICAL })
}

/// Inputs of a retrieval run, from a dataset sample or a preset.
struct Case {
    label: String,
    split: SplitProfile,
    truth: Option<ContrastMap>,
    gd: GreensVolumeOperator,
    gs: GreensSurfaceMatrix,
    einc: FieldVector,
    esca0: FieldVector,
}

fn load_case(case: &CaseArgs, phys_args: &PhysArgs, opts: &SolverOptions) -> Result<Case> {
    if let Some(dir) = &case.dataset {
        let id = case.sample.as_deref().expect("clap enforces --sample");
        let manifest = read_manifest(dir).with_context(|| format!("reading manifest in {}", dir.display()))?;
        let entry = manifest
            .samples
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| anyhow!("sample {id} not found in {}", dir.display()))?;
        let record = read_sample(dir, &manifest, entry)?;
        let cfg = &manifest.config;
        let gd = GreensVolumeOperator::build(&cfg.grid, &cfg.physics)?;
        let gs = GreensSurfaceMatrix::build(&cfg.grid, &cfg.ring, &cfg.physics)?;
        let einc = incident_field(&cfg.grid, &cfg.physics, &record.incidence);
        return Ok(Case {
            label: format!("{}#{id}", dir.display()),
            split: record.split()?,
            truth: Some(record.chi_p2_label),
            gd,
            gs,
            einc,
            esca0: record.esca0,
        });
    }
    let seed = phys_args.seed;
    let mut scenario: Scenario = match case.preset {
        CasePreset::Isolated => presets::isolated_cell_seeded(seed, phys_args.ring_count, phys_args.angle)?,
        CasePreset::SingleCell => presets::single_cell(seed)?,
        CasePreset::Block => presets::block(seed)?,
    };
    scenario.phys = phys_args.phys()?;
    scenario.ring = phys_args.ring()?;
    let data_opts = SolverOptions { rel_tol: opts.rel_tol.min(1e-13), ..*opts };
    let fields = scenario.synthesize(&data_opts)?;
    Ok(Case {
        label: format!("preset:{:?}:{seed}", case.preset).to_lowercase(),
        split: scenario.split,
        truth: Some(scenario.chi_p2),
        gd: fields.gd,
        gs: fields.gs,
        einc: fields.einc,
        esca0: fields.esca,
    })
}

fn truth_error(est: &ContrastMap, truth: &Option<ContrastMap>) -> Option<f64> {
    truth.as_ref().and_then(|t| relative_error(&est.values, &t.values).ok())
}

fn estimate(args: EstimateArgs) -> Result<u8> {
    let opts = args.phys.solver(1e-12)?;
    let case = load_case(&args.case, &args.phys, &opts)?;
    let grid = *case.split.grid();
    let t0 = Instant::now();
    let ctx = KnownPartContext::new(case.split.clone(), &case.gd, case.einc.clone(), opts)?;
    let route = if grid.len() <= DENSE_LU_LIMIT { AMaterialization::DenseLu } else { AMaterialization::Columns };
    let a = materialize_a_with(&case.split, &case.gd, &opts, route, args.cap)?;
    let (est, diag) = estimate_chi_p2(&ctx, &case.esca0, &case.gs, &a, args.pinv_threshold)?;
    write_grid(&args.out, "chi_p2", &grid, &est.values)?;
    if args.heatmap {
        write_heatmap(&args.out.join("chi_p2_abs.pgm"), &grid, &est.values)?;
    }
    let body = json!({
        "case": case.label,
        "grid": grid,
        "unknown_cells": case.split.unknown_count(),
        "diagnostics": diag,
        "relative_error": truth_error(&est, &case.truth),
        "elapsed_s": t0.elapsed().as_secs_f64(),
    });
    emit("estimate-chi2", body, Some(&args.out.join("report.json")))?;
    Ok(0)
}

fn invert(args: InvertArgs) -> Result<u8> {
    let opts = args.phys.solver(1e-12)?;
    let case = load_case(&args.case, &args.phys, &opts)?;
    let grid = *case.split.grid();
    let bounds = args.bounds.as_deref().map(|b| ContrastBounds { re: (b[0], b[1]), im: (b[2], b[3]) });
    let inv_opts = InversionOptions {
        max_outer_iters: args.max_outer_iters,
        grad_tol: args.grad_tol,
        tikhonov_lambda: args.lambda,
        bounds,
        solver: opts,
        ..InversionOptions::default()
    };
    let problem = MisfitProblem {
        split: &case.split,
        gs: &case.gs,
        gd: &case.gd,
        einc: &case.einc,
        esca0: &case.esca0,
        lambda: args.lambda,
        solver: &opts,
    };
    let init = match args.init {
        InitArg::Zero => InversionInit::Zero,
        InitArg::ClosedForm => InversionInit::ClosedForm,
    };
    let t0 = Instant::now();
    let (est, trace) = invert_chi_p2(&problem, &inv_opts, init)?;
    write_grid(&args.out, "chi_p2", &grid, &est.values)?;
    if args.heatmap {
        write_heatmap(&args.out.join("chi_p2_abs.pgm"), &grid, &est.values)?;
    }
    std::fs::write(args.out.join("trace.json"), serde_json::to_string_pretty(&json!({
        "objectives": trace.objectives,
        "gradient_norms": trace.gradient_norms,
        "steps": trace.steps,
    }))?)?;
    let body = json!({
        "case": case.label,
        "grid": grid,
        "unknown_cells": case.split.unknown_count(),
        "iterations": trace.iterations(),
        "converged": trace.converged,
        "line_search_failed": trace.line_search_failed,
        "initial_objective": trace.initial_objective(),
        "final_objective": trace.final_objective(),
        "relative_error": truth_error(&est, &case.truth),
        "elapsed_s": t0.elapsed().as_secs_f64(),
    });
    emit("invert", body, Some(&args.out.join("report.json")))?;
    Ok(0)
}

fn gen_dataset(args: GenDatasetArgs) -> Result<u8> {
    let config = DatasetConfig {
        grid: args.phys.grid_or(64, 64, 0.01)?,
        physics: args.phys.phys()?,
        ring: args.phys.ring()?,
        incidences_deg: args.incidences.clone().unwrap_or_else(|| vec![args.phys.angle]),
        threshold: args.threshold,
        solver: args.phys.solver(1e-12)?,
        ..DatasetConfig::default()
    };
    let source = match &args.shapes {
        Some(dir) => {
            let shapes = load_pgm_dir(dir).with_context(|| format!("reading rasters from {}", dir.display()))?;
            if shapes.is_empty() {
                bail!("no readable PGM rasters in {}", dir.display());
            }
            ShapeSource::Rasters(shapes)
        }
        None => ShapeSource::Procedural,
    };
    let generator = DatasetGenerator::new(config)?;
    let t0 = Instant::now();
    let (mut manifest, summary) = generate_dataset_dir(&args.out, &generator, &source, args.phys.seed, args.count)?;
    if args.export_gs {
        let entry = export_gs(&args.out, &generator.gs)?;
        manifest.operators.insert("gs".into(), entry);
        write_manifest(&args.out, &manifest)?;
    }
    let body = json!({
        "dir": args.out.display().to_string(),
        "samples": manifest.samples.len(),
        "generated": summary.generated,
        "reused": summary.reused,
        "spot_checked": summary.spot_checked,
        "max_resimulation_error": summary.max_resimulation_error,
        "seed": args.phys.seed,
        "elapsed_s": t0.elapsed().as_secs_f64(),
    });
    emit("gen-dataset", body, None)?;
    Ok(0)
}

fn mre_json(report: &retrieval::MreReport) -> serde_json::Value {
    json!({
        "mean": report.mean,
        "sum": report.sum,
        "mean_percent": 100.0 * report.mean,
        "per_sample": report.per_sample,
    })
}

fn eval_metrics(args: EvalMetricsArgs) -> Result<u8> {
    if args.pred_file.len() != args.label_file.len() {
        bail!("--pred-file and --label-file must be given the same number of times");
    }
    let body = if let (Some(dataset), Some(pred)) = (&args.dataset, &args.pred) {
        eval_dataset(dataset, pred)?
    } else if !args.pred_file.is_empty() {
        let load = |p: &Path| read_vsf(p).map(|a| a.data).with_context(|| format!("reading {}", p.display()));
        let preds = args.pred_file.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
        let labels = args.label_file.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
        let report = mean_relative_error(&preds, &labels)?;
        json!({ "count": preds.len(), "mre": mre_json(&report) })
    } else {
        bail!("give either --dataset with --pred, or --pred-file/--label-file pairs");
    };
    emit("eval-metrics", body, args.out.as_deref())?;
    Ok(0)
}

fn eval_dataset(dataset_dir: &Path, pred_dir: &Path) -> Result<serde_json::Value> {
    let (manifest, samples) = read_dataset(dataset_dir)?;
    if samples.is_empty() {
        bail!("dataset in {} has no samples", dataset_dir.display());
    }
    let cfg = &manifest.config;
    let gs = match manifest.operators.get("gs") {
        Some(entry) => {
            let arr = read_vsf(&dataset_dir.join(&entry.path))?;
            let (rows, cols) = (arr.dims[0], arr.dims[1]);
            let mut gs = GreensSurfaceMatrix::build(&cfg.grid, &cfg.ring, &cfg.physics)?;
            if (rows, cols) != gs.shape() {
                bail!("stored G_S has shape {rows}x{cols}, expected {:?}", gs.shape());
            }
            gs.entries = splitvie::CMatrix::from_fn(rows, cols, |r, c| arr.data[r * cols + c]);
            gs
        }
        None => GreensSurfaceMatrix::build(&cfg.grid, &cfg.ring, &cfg.physics)?,
    };
    let mut chi = (Vec::new(), Vec::new());
    let mut etot = (Vec::new(), Vec::new());
    let mut esca = (Vec::new(), Vec::new());
    for s in &samples {
        let dir = pred_dir.join("samples").join(&s.id);
        let load = |name: &str| -> Result<VsfArray> {
            let path = dir.join(format!("{name}.vsf"));
            read_vsf(&path).with_context(|| format!("reading {}", path.display()))
        };
        let grid_of = |arr: VsfArray, name: &str| -> Result<Vec<Complex64>> {
            if arr.data.len() != cfg.grid.len() {
                bail!("{}/{name}.vsf has {} entries, expected {}", dir.display(), arr.data.len(), cfg.grid.len());
            }
            Ok(arr.data)
        };
        let chi_pred = grid_of(load("chi")?, "chi")?;
        let etot_pred = grid_of(load("etot")?, "etot")?;
        let esca_path = dir.join("esca.vsf");
        let esca_pred = if esca_path.exists() {
            read_vsf(&esca_path)?.data
        } else {
            let src: Vec<Complex64> = chi_pred.iter().zip(&etot_pred).map(|(a, b)| a * b).collect();
            gs.apply(&src)?
        };
        chi.0.push(chi_pred);
        chi.1.push(s.full_contrast()?.values);
        etot.0.push(etot_pred);
        etot.1.push(s.etot_label.values.clone());
        esca.0.push(esca_pred);
        esca.1.push(s.esca0.values.clone());
    }
    let ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    Ok(json!({
        "count": samples.len(),
        "ids": ids,
        "chi": mre_json(&mean_relative_error(&chi.0, &chi.1)?),
        "etot": mre_json(&mean_relative_error(&etot.0, &etot.1)?),
        "esca": mre_json(&mean_relative_error(&esca.0, &esca.1)?),
    }))
}

fn export_operators(args: ExportArgs) -> Result<u8> {
    let (dir, grid, ring, phys, manifest) = match &args.dataset {
        Some(d) => {
            let m = read_manifest(d)?;
            let c = m.config.clone();
            (d.clone(), c.grid, c.ring, c.physics, Some(m))
        }
        None => (args.out.clone(), args.phys.grid_or(64, 64, 0.01)?, args.phys.ring()?, args.phys.phys()?, None),
    };
    let gs = GreensSurfaceMatrix::build(&grid, &ring, &phys)?;
    let entry = export_gs(&dir, &gs)?;
    if let Some(mut m) = manifest {
        m.operators.insert("gs".into(), entry.clone());
        write_manifest(&dir, &m)?;
    }
    let body = json!({
        "dir": dir.display().to_string(),
        "gs": entry,
        "shape": [gs.shape().0, gs.shape().1],
        "layout": "row-major, rows = receivers, columns = cells (index j*nx + i)",
        "grid": grid,
        "ring": ring,
        "physics": phys,
    });
    emit("export-operators", body, Some(&dir.join("operators").join("operators.json")))?;
    Ok(0)
}

fn mie_check(args: MieCheckArgs) -> Result<u8> {
    let t0 = Instant::now();
    let grid: Grid2D = args.phys.grid_or(64, 64, 0.01)?;
    let phys = args.phys.phys()?;
    let ring = args.phys.ring()?;
    let opts = args.phys.solver(1e-10)?;
    let cyl = mie_cylinder(args.radius, args.eps_r)?;
    let chi = cyl.rasterize(&grid, args.sub);
    let gd = GreensVolumeOperator::build(&grid, &phys)?;
    let gs = GreensSurfaceMatrix::build(&grid, &ring, &phys)?;
    let einc = incident_field(&grid, &phys, &IncidentWave::new(args.phys.angle));
    let (etot, report) = solve_total_field(&gd, &chi, &einc, &opts)?;
    report.require_converged()?;
    let esca = scattered_field(&gs, &chi, &etot)?;
    let analytic = cyl.scattered_field(&phys, args.phys.angle, &ring.positions())?;
    let err = splitvie::vecops::rel_diff(&esca.values, &analytic);
    let pass = err <= args.threshold;
    let body = json!({
        "grid": grid,
        "radius_m": args.radius,
        "eps_r": args.eps_r,
        "truncation_order": cyl.truncation_order(phys.k0),
        "iterations": report.iterations,
        "rel_error": err,
        "threshold": args.threshold,
        "pass": pass,
        "elapsed_s": t0.elapsed().as_secs_f64(),
    });
    emit("mie-check", body, args.out.as_deref())?;
    Ok(if pass { 0 } else { EXIT_NUMERICAL })
}
