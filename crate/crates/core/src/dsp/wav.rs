use std::path::Path;

use crate::error::{Error, Result};
use crate::score::SAMPLE_RATE;

/// Mono audio at 22,050 Hz with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
}

impl Waveform {
    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sample {i} = {} outside [-1, 1]",
                samples[i]
            )));
        }
        Ok(Self { samples })
    }

    /// Clamps into `[-1, 1]`; non-finite samples become 0.
    pub fn clipped(samples: Vec<f32>) -> Self {
        Self {
            samples: samples
                .into_iter()
                .map(|s| if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let s: f64 = self.samples.iter().map(|&x| (x as f64) * (x as f64)).sum();
        (s / self.samples.len() as f64).sqrt()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    fn spec() -> hound::WavSpec {
        hound::WavSpec {
            channels: 1,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        }
    }

    /// 16-bit PCM mono WAV bytes.
    pub fn to_wav_bytes(&self) -> Result<Vec<u8>> {
        let mut cursor = std::io::Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut cursor, Self::spec())?;
            for &s in &self.samples {
                w.write_sample((s * 32767.0).round() as i16)?;
            }
            w.finalize()?;
        }
        Ok(cursor.into_inner())
    }

    pub fn from_wav_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = hound::WavReader::new(reader)?;
        let spec = r.spec();
        if spec.channels != 1
            || spec.sample_rate != SAMPLE_RATE
            || spec.bits_per_sample != 16
            || spec.sample_format != hound::SampleFormat::Int
        {
            return Err(Error::Format(format!(
                "expected 16-bit PCM mono at {SAMPLE_RATE} Hz, got {} ch, {} Hz, {} bit",
                spec.channels, spec.sample_rate, spec.bits_per_sample
            )));
        }
        let samples = r
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { samples })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_wav_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_wav_reader(std::io::BufReader::new(f))
    }
}
