use std::path::Path;

use crate::error::{Result, S2aError};

/// Reads a mono 16-bit PCM WAV at `expected_rate`, samples scaled to [-1, 1).
pub fn read_wav(path: impl AsRef<Path>, expected_rate: u32) -> Result<Vec<f32>> {
    let mut reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.sample_rate != expected_rate {
        return Err(S2aError::InvalidInput(format!(
            "{}: sample rate {} Hz, expected {expected_rate} Hz",
            path.as_ref().display(),
            spec.sample_rate
        )));
    }
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(S2aError::InvalidInput(format!(
            "{}: expected mono 16-bit PCM, got {} channel(s), {} bits, {:?}",
            path.as_ref().display(),
            spec.channels,
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    reader
        .samples::<i16>()
        .map(|s| Ok(s? as f32 / 32768.0))
        .collect()
}

/// Writes mono 16-bit PCM.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}
