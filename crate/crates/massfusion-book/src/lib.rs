//! Doc-test shim for the guide in `book/`.
//!
//! mdbook cannot run example blocks against crate dependencies, so each
//! chapter is included here as module documentation and `cargo test
//! --doc` compiles and runs every ```rust block. One module per chapter
//! keeps failure output attributable to its source file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}

#[doc = include_str!("../../../book/src/fusion.md")]
pub mod fusion {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/synthetic.md")]
pub mod synthetic {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
