//! Volume-sorted prediction sets: sampling, conformal radius calibration,
//! optimal-K selection, and union-of-balls regions.

mod calibrate;
mod region;
mod sampling;
mod select;

pub use calibrate::{
    calibrate, calibration_score_matrix, calibration_scores, conformal_quantile, prefix_min_distances,
    quantile_index, CalibrationResult,
};
pub use region::{predict_region, region_contains, region_volume, BallUnionRegion};
pub use sampling::{point_seed, sample_sorted, sort_by_jacobian, SortedSamples};
pub use select::{select_k, KSelection};
