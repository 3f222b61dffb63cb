//! Benchmarks for shelab-core live in `benches/`.
