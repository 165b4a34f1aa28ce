//! C-MAPSS ingestion, sensor selection, labelling and multi-window
//! segmentation.

pub mod archive;
pub mod cmapss;
pub mod features;
pub mod synthetic;
pub mod windows;

pub use archive::{load_raw, manifest_text, read_archive, write_archive};
pub use cmapss::{parse_cmapss, parse_rul, to_cmapss_text, CycleRow, EngineTrajectory, SubDataset};
pub use features::{
    min_max_normalize, monotonic_strength, monotonicity, pearson_r, piecewise_rul, select_sensors,
    test_lifetime_labels, NormalizationStats, SensorSelection,
};
pub use synthetic::{generate, write_corpus, SyntheticConfig, SyntheticCorpus};
pub use windows::{
    assign_test_windows, build_train_windows, prepare, segment_train, EngineSeries, PrepareConfig, PreparedData,
    WindowDataset,
};
