//! Random-features kernels of the depth-1 transformer, kernel ridge
//! regression, the template similarity matrix `N` and the block-constant
//! idealized estimator.

mod estimate;
mod evaluator;
mod gram;
mod ideal;
mod nmatrix;
mod stats;
mod unseen;

use serde::Serialize;

pub use estimate::{
    cosine_lift, joint_pattern, k_attn_mc, k_attn_sampled, k_attn_uniform, k_trans, KernelEstimate,
};
pub use evaluator::{InnerProfile, Kernel, KernelSpec, DEFAULT_MC_SAMPLES, N_MATRIX_MC_SAMPLES};
pub use gram::{cross_vector, gram, krr_fit, krr_predict, matrix_csv, GramMatrix, KrrModel};
pub use ideal::{
    check_row_inverse, idealized_coefficients, idealized_gram, idealized_predict, idealized_vector, tau,
    RowInverseCheck,
};
pub use nmatrix::{build_n_matrix, NMatrix};
pub use stats::{alignment, block_structure_stats, BlockReport, BlockStat};
pub use unseen::{median_error, unseen_symbol_eval, TestPrediction, UnseenConfig, UnseenRow};

use crate::error::Result;

/// JSON export of a Gram or `N` matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatrixReport {
    pub entries: Vec<Vec<f64>>,
    pub partition: Option<Vec<Vec<usize>>>,
    pub condition_number: f64,
    pub block_stats: Option<BlockReport>,
}

impl MatrixReport {
    pub fn from_gram(g: &GramMatrix, n_matrix: Option<&NMatrix>) -> Result<Self> {
        let n = g.n();
        Ok(MatrixReport {
            entries: (0..n).map(|i| g.values.row(i).to_vec()).collect(),
            partition: g.partition.clone(),
            condition_number: g.condition_number()?,
            block_stats: match &g.partition {
                Some(_) => Some(block_structure_stats(g, n_matrix)?),
                None => None,
            },
        })
    }

    pub fn from_n(nm: &NMatrix) -> Self {
        let r = nm.r();
        MatrixReport {
            entries: (0..r).map(|i| nm.values.row(i).to_vec()).collect(),
            partition: None,
            condition_number: nm.condition_number,
            block_stats: None,
        }
    }
}
