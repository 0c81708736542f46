//! Image and weight files, the synthetic stripe dataset and the toy trainer.

pub mod dataset;
pub mod image;
pub mod train;
pub mod weights;

pub use dataset::SyntheticDataset;
pub use image::{decode_pnm, encode_ppm, load_image, save_ppm};
pub use train::{toy_train, TrainOptions, TrainOutcome};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights, Dtype};
