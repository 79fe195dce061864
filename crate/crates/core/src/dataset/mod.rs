//! Session data model, on-disk loading, synthetic generation and responder screening.

mod frames;
mod io;
mod screening;
mod series;
mod session;
mod synth;

pub use frames::{ChunkEntry, FrameGeometry, FrameSource, VideoIndex, CHANNELS};
pub use io::{load_session, read_series_csv, save_session, write_series_csv, SessionMeta, DEFAULT_CHUNK_FRAMES};
pub use screening::{screen_responders, ScreeningResult, SIGNIFICANCE_LEVEL};
pub use series::Series;
pub use session::{protocol_pinch_intervals, PinchInterval, Session, DURATION_TOLERANCE_S};
pub use synth::{
    generate_synthetic_session, generate_with_truth, SynthConfig, SynthTruth, SyntheticSession, EDA_MAX_US,
    EDA_MIN_US,
};
