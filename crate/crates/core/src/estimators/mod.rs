//! Binning, spatial moments, noise reduction and Fano factors, corrections,
//! and the closed-form predictions they are compared with.

pub mod flat_field;
pub mod geometry;
pub mod moments;
pub mod theory;

pub use flat_field::{apply_flat_field, build_flat_field, FlatField, FlatFieldBuilder};
pub use geometry::{bin_frame, binned_region, reflect_rect, PairedImage, Rect, RegionPair};
pub use moments::{
    background_correct, ensemble_nrf, fano, moments, nrf, spatial_moments, BackgroundCorrected, Moments, NrfReport,
};
