// Compiles the guide's code blocks as doc tests of this crate.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}
#[doc = include_str!("../../../book/src/intervals.md")]
mod intervals {}
#[doc = include_str!("../../../book/src/maps.md")]
mod maps {}
#[doc = include_str!("../../../book/src/cutting-stacking.md")]
mod cutting_stacking {}
#[doc = include_str!("../../../book/src/recurrence.md")]
mod recurrence {}
#[doc = include_str!("../../../book/src/overrec.md")]
mod overrec {}
#[doc = include_str!("../../../book/src/towerplex.md")]
mod towerplex {}
#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}
