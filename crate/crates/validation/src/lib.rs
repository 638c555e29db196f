//! Acceptance suite for the capsx workspace; the criteria live in
//! `tests/acceptance.rs` and run with `cargo test -p capsx-validation`.
