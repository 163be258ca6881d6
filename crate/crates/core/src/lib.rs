//! Trainable bar-selective COSFIRE filters for delineating line patterns.
//!
//! A filter is configured automatically from a synthetic bar: the rectified
//! DoG response of the bar is sampled on concentric circles and every strong
//! angular maximum becomes a sub-unit. Applying the filter blurs and shifts
//! each sub-unit's DoG map, combines them by geometric mean and takes the
//! per-pixel maximum over rotated copies of the model.
//!
//! ```no_run
//! use bcosfire::prelude::*;
//!
//! let params = FilterParams::leaf();
//! let model = configure_from_bar(&params, 2.0 * params.sigma)?;
//! let img = load_image("leaf.pgm")?;
//! let resp = normalize_response(&rotation_tolerant_response(&img, &model, 12)?);
//! save_image(&resp.image, "leaf_response.pgm")?;
//! # Ok::<(), bcosfire::Error>(())
//! ```

pub mod bench;
pub mod cli;
pub mod configure;
pub mod dog;
pub mod error;
pub mod evaluate;
pub mod imgio;
pub mod model;
pub mod respond;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::bench::{run_benchmark, BenchReport, DatasetEntry, DatasetSpec, ThresholdMode};
    pub use crate::configure::{configure_filter, configure_from_bar, make_prototype_bar};
    pub use crate::dog::{dog_response, make_dog, DogKernel, Polarity};
    pub use crate::evaluate::{
        best_threshold_per_dataset, best_threshold_per_image, confusion, metrics, threshold,
        ConfusionCounts, MetricSet,
    };
    pub use crate::imgio::{invert, load_image, load_mask, save_image, BinaryMask, GrayImage};
    pub use crate::model::{
        load_model, rotate_model, save_model, CosfireModel, FilterParams, SubUnit,
    };
    pub use crate::respond::{
        filter_response, normalize_response, rotation_tolerant_response, subunit_response,
        ResponseMap,
    };
    pub use crate::Error;
}
