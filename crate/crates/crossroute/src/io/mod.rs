//! File formats and benchmark ingestion: the partitioned checkpoint
//! container, dataset files, CVRPLIB instances, training-history records and
//! run configuration.

mod checkpoint;
mod cvrplib;
mod dataset;
mod history;
mod runconfig;

pub use checkpoint::{
    assemble_with_backbone, group_bytes, load_into, load_model, save_checkpoint, Checkpoint,
    EntryManifest, GroupManifest, Manifest, FORMAT_VERSION,
};
pub use cvrplib::{parse_cvrplib, serialize_cvrplib, BenchmarkInstance};
pub use dataset::{read_dataset, write_dataset, Dataset};
pub use history::{read_history, write_history, EpochRecord};
pub use runconfig::RunConfig;
