//! Criterion benchmarks for the estimator building blocks; see `benches/`.
