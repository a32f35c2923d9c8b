//! Fréchet distance between embedded image sets.

mod embed;
mod fid;

pub use embed::{embed_set, Embedder, FeatureMatrix};
pub use fid::{
    every_nth, fid_curve, fid_curve_csv, fit_moments, frechet_distance, sqrt_psd, write_fid_curve, FidMoments,
    FidPoint,
};
