//! Benchmarks for the numerical kernels and the training loop; see
//! `benches/kernels.rs`. Run with `cargo bench -p envrec-bench`.
