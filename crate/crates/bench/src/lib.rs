//! Criterion benchmarks for the screening engine live in `benches/`; this
//! crate intentionally exports nothing.
