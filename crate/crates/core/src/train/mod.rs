//! Initialisation, optimisation, metrics, multi-window training and the
//! ablation harness.

pub mod ablation;
pub mod init;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use ablation::{run_ablation, AblationResult, AblationSpec, Variant, DILATION_RATES};
pub use init::{xavier_bound, xavier_uniform_init, xavier_uniform_params};
pub use metrics::{mae, mse, mse_loss, nasa_score, pooled_rmse, r_squared, rmse, score_term, Metrics, ScoreConvention};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use trainer::{
    derive_seed, evaluate_multi_window, predict_dataset, report_from_predictions, train_multi_window,
    train_one_window, EnginePrediction, MetricsReport, SizeMetrics, TrainConfig, TrainOutcome, WindowRun,
};
