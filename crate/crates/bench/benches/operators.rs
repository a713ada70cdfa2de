use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use splitvie::{
    incident_field, solve_total_field, ContrastMap, Grid2D, GreensVolumeOperator, IncidentWave, PhysicsConfig,
    SolverOptions,
};
use splitvie::mie::DielectricCylinder;

fn apply_volume(c: &mut Criterion) {
    let phys = PhysicsConfig::default();
    let mut group = c.benchmark_group("apply_volume");
    for n in [32usize, 64, 128] {
        let grid = Grid2D::centered(n, n, 0.01).unwrap();
        let gd = GreensVolumeOperator::build(&grid, &phys).unwrap();
        let x = incident_field(&grid, &phys, &IncidentWave::new(30.0));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| gd.apply(&x).unwrap()));
    }
    group.finish();
}

fn forward_solve(c: &mut Criterion) {
    let phys = PhysicsConfig::default();
    let cyl = DielectricCylinder::new(0.15, 1.5).unwrap();
    let opts = SolverOptions::default();
    let mut group = c.benchmark_group("solve_total_field");
    group.sample_size(10);
    for n in [32usize, 64] {
        let grid = Grid2D::centered(n, n, 0.64 / n as f64).unwrap();
        let gd = GreensVolumeOperator::build(&grid, &phys).unwrap();
        let chi: ContrastMap = cyl.rasterize(&grid, 8);
        let einc = incident_field(&grid, &phys, &IncidentWave::new(0.0));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| solve_total_field(&gd, &chi, &einc, &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, apply_volume, forward_solve);
criterion_main!(benches);
