//! Point-cloud files and report serialization.

mod cloud_file;
mod report;

pub use cloud_file::{read_cloud, read_cloud_from, write_cloud, write_cloud_to, CloudFileFormat, RAW_MAGIC};
pub use report::{
    canonical_json, round_sig, to_canonical_value, write_report, CsvTable, Report, ReportFormat, SIGNIFICANT_DIGITS,
};
