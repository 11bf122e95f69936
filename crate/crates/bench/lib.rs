//! Criterion benchmarks for `faithkit`; see `benches/`.
