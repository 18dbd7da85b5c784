//! Criterion benchmarks for `isocov`; see `benches/`.
