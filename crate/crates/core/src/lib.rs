//! Block-sparse CNN compiler for tensor-core meshes.
//!
//! The crate covers the whole flow: block masks and block-COO weights
//! ([`bscore`]), mask selection ([`sparsifier`]), the graph IR ([`netir`]),
//! the hardware description ([`hwmodel`]), Memtile planning and splitting
//! ([`planner`]), instruction emission with lock chains ([`codegen`]),
//! analytic time estimation ([`timeline`]) and depth-wise tiling
//! ([`tiler`]). [`pipeline`] strings them together for the command line.

pub mod bscore;
pub mod codegen;
pub mod hwmodel;
pub mod netir;
pub mod pipeline;
pub mod planner;
pub mod sparsifier;
pub mod tensor;
pub mod tiler;
pub mod timeline;
