//! Criterion benchmarks for the simulation and distance hot paths; see `benches/`.
