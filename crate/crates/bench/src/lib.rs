//! Benchmark-only crate; see `benches/perfect_sampling.rs`.
