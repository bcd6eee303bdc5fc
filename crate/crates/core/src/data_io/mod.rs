//! Dataset ingestion, synthetic benchmarks and model serialization.

mod model_file;
mod recording;
pub mod synth;
mod windows;

pub use model_file::{
    bundle_digest, feature_extractor_digest, from_bytes, from_bytes_with, header_len, load_model,
    save_model, to_bytes, to_bytes_with, FloatCodec, MAGIC, VERSION,
};
pub use recording::RawRecording;
pub use windows::{segment_by_samples, segment_windows, LabelRule, WindowingConfig};
