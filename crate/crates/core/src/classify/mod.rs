//! Binary RBF-kernel SVMs with probability calibration, and a linear
//! pairwise ranking SVM.

mod rank;
mod svm;

pub use rank::{train_rank_svm, train_rank_svm_with_losses, RankSvmConfig, RankSvmModel};
pub use svm::{
    select_gamma, train_rbf_svm, train_rbf_svm_with_report, RbfSvmModel, SmoReport, SvmConfig,
};
