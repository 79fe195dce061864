//! Raw session to model input: face crop, decimation to 10 Hz, difference
//! standardisation of frames and labels, windowing, and the optical-flow probe.

mod cache;
mod clip;
mod face;
mod flow;
mod video;
mod window;

pub use cache::{cache_key, read_window, write_window, CacheKeyParams, CacheManifest, WindowCache, PREPROCESS_VERSION};
pub use clip::{Clip, ClipOrigin, NormalizedClip, TargetKind};
pub use face::{crop_resize, detect_and_crop_face, BBox, CropConfig, FaceDetector, NoDetector, SkinCascadeDetector};
pub use flow::optical_flow_magnitude;
pub use video::{decimation_indices, diff_normalize, diff_normalize_signal, resample_video, DIFF_EPS};
pub use window::{
    normalized_window, prepare_session, window_clips, window_starts, PrepareConfig, PreparedSession,
    DEFAULT_WINDOW_SIZES,
};
