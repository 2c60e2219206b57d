//! Moving rank streams between models with different vocabulary sizes.

pub mod arith;
pub mod remap;
pub mod table;

pub use arith::{arithmetic_recode, arithmetic_unrecode};
pub use remap::{plan_remap, remap_rank, remap_stream, unremap_stream, RemapPlan};
pub use table::{build_rank_table, RankFrequencyTable};
