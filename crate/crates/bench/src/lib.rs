//! Criterion benchmarks for `vparisi-core` live in `benches/`.
