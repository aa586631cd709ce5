//! Criterion benchmarks for the proximal regime pipeline live in `benches/`.
