//! Host crate for the `acceptance` test target. It sorts after the other
//! workspace members so the suite runs last under `cargo test --workspace`.
