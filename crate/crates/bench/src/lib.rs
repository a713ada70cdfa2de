//! Criterion benchmarks for the volume operator and the forward solver.
