//! Benchmarks for the helenos core crate; see `benches/`.
