//! Quality-aware point-set losses and thresholded coverage metrics.

pub mod cloud;
mod error;
pub mod fit;
pub mod flat;
pub mod io;
pub mod kdtree;
pub mod losses;
pub mod metrics;

pub use cloud::{nn_one_way, Backend, BiAssignment, NnAssignment, Point3, PointCloud};
pub use error::{Error, ErrorClass, Result};
pub use io::{read_cloud, write_cloud, write_report, CloudFileFormat, ReportFormat};
pub use kdtree::SpatialIndex;
pub use losses::{chamfer, emd, qal, ChamferVariant, EmdMode, LossKind, LossValue, QalParams};
pub use metrics::{quality_report, AggregateReport, QualityReport, Tau};
