//! Building blocks for breast DCE-MRI lesion-segmentation datasets.
//!
//! The crate assembles four dataset variants from volumetric scans
//! (whole volume with and without breast-region masking, selected lesion
//! slices, and the optimized volume), plans the cohort-wide crop that
//! produces the optimized volume, and evaluates segmentations and the
//! carbon cost of training them. Synthetic phantoms with known ground
//! truth exercise every stage.

pub mod cohort_analytics;
pub mod cohort_prep;
pub mod error;
pub mod phantom;
pub mod pipeline;
pub mod roi_optimizer;
pub mod seg_metrics;
pub mod sustainability;
pub mod volume_io;

mod seed;

pub use cohort_analytics::{AxisHistogram, MidlineProfile, OverlayMap};
pub use cohort_prep::{OversampleMap, PatientCase};
pub use error::{Error, Result};
pub use phantom::PhantomSpec;
pub use pipeline::{PipelineConfig, PipelineReport};
pub use roi_optimizer::{CropPlan, ExtentReport};
pub use seg_metrics::{ComponentReport, ConfusionCounts};
pub use sustainability::EnergyRecord;
pub use volume_io::{Approach, AxisCode, CohortManifest, MaskGrid, Orientation, VolumeGrid};
