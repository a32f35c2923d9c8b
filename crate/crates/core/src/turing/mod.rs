//! Blinded four-image validation task: quartet assembly and the statistics
//! of the rater responses.

mod quartets;
mod report;
mod stats;

pub use quartets::{
    build_quartets, image_token, load_quartets, save_quartets, Group, Quartet, QuartetKey, QuartetPublic,
};
pub use report::{
    analyze_study, identification_accuracy, identification_table, rater_group_means, GroupTest, RaterMeans,
    RatingCount, ResponseRecord, StudyReport,
};
pub use stats::{
    fleiss_kappa, holm_adjust, signed_rank_counts, wilcoxon_signed_rank, AgreementTable, TestMethod, TestResult,
    EXACT_MAX_N,
};
