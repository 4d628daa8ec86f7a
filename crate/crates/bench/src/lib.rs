//! Criterion benchmarks for `mzbw-core`; see `benches/`.
