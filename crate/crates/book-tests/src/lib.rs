//! Runs the guide snippets in `book/src` as doc-tests.

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub struct Introduction;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/model.md")]
pub struct Model;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/statics.md")]
pub struct Statics;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/surfaces.md")]
pub struct Surfaces;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/dynamics.md")]
pub struct Dynamics;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/analysis.md")]
pub struct Analysis;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub struct Cli;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
pub struct Readme;
