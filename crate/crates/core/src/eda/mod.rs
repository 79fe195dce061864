//! Tonic/phasic decomposition of EDA and rank-correlation utilities.

mod decompose;
mod spearman;

pub use decompose::{decompose_tonic, decompose_with, DecompositionConfig, EdaDecomposition};
pub use spearman::{average_ranks, pearson, spearman};
