//! Criterion benchmarks for the memex pipeline; see `benches/pipeline.rs`.
