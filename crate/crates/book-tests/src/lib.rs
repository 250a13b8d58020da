//! Compiles and runs the snippets of the mdbook guide as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/topology.md")]
pub mod topology {}

#[doc = include_str!("../../../book/src/rates.md")]
pub mod rates {}

#[doc = include_str!("../../../book/src/num.md")]
pub mod num {}

#[doc = include_str!("../../../book/src/scheduler.md")]
pub mod scheduler {}

#[doc = include_str!("../../../book/src/oracle.md")]
pub mod oracle {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
