//! Configuration, synthetic data, training, metrics and file formats.

pub mod checkpoint;
pub mod config;
pub mod image_io;
pub mod metrics;
pub mod synth;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{load_run_config, parse_run_config, DataConfig, RunConfig};
pub use image_io::{read_image, write_image};
pub use metrics::{psnr, ssim, PSNR_CAP};
pub use synth::{synth_dataset, ImagePair, SynthSpec};
pub use train::{evaluate, train, EvalReport, Stage, TrainConfig, TrainLog};
