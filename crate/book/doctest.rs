// mdbook cannot run listings against a library crate, so every chapter is
// pulled in as a doc comment and `cargo test --doc -p ndlinear-book` runs
// them. One module per chapter keeps failures traceable to a file.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/tensors.md")]
pub mod tensors {}
#[doc = include_str!("src/layer.md")]
pub mod layer {}
#[doc = include_str!("src/gradients.md")]
pub mod gradients {}
#[doc = include_str!("src/kronecker.md")]
pub mod kronecker {}
#[doc = include_str!("src/counting.md")]
pub mod counting {}
#[doc = include_str!("src/training.md")]
pub mod training {}
#[doc = include_str!("src/adapters.md")]
pub mod adapters {}
#[doc = include_str!("src/decompositions.md")]
pub mod decompositions {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
#[doc = include_str!("../README.md")]
pub mod readme {}
