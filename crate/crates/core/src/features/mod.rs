//! Model inputs: framing, energy and pitch tracks, VAD trimming, linear
//! resampling to the animation rate, synthetic PPGs and z-score statistics.

mod frame;
mod norm;
mod ppg;
mod resample;
mod sequence;
mod wav;

pub use frame::{frame_energy, frame_pitch, hamming, FrameSpec, ENERGY_FLOOR, PITCH_MAX_HZ, PITCH_MIN_HZ, VOICING_THRESHOLD};
pub use norm::{NormStats, STD_FLOOR};
pub use ppg::{synth_ppg, PpgSynth, PPG_DIM};
pub use resample::resample_linear;
pub use sequence::{vad_range, vad_trim, FeatureKind, FeatureSequence, VAD_DROP, VAD_SILENCE_LEVEL};
pub use wav::{read_wav, write_wav};

/// Feature frame rate implied by the 20 ms hop.
pub const FEATURE_RATE_HZ: f64 = 50.0;
/// Animation frame rate of model outputs.
pub const ANIMATION_FPS: f64 = 60.0;

/// Number of animation frames covering `feature_frames` frames at 50 Hz.
pub fn animation_len(feature_frames: usize) -> usize {
    ((feature_frames as f64) * ANIMATION_FPS / FEATURE_RATE_HZ).round().max(1.0) as usize
}
