use crate::audio_io::{AudioClip, PIPELINE_RATE};
use crate::dataset::Dastgah;
use crate::error::{Error, Result};

pub const SEGMENT_SECONDS: usize = 20;
pub const SEGMENT_SAMPLES: usize = SEGMENT_SECONDS * PIPELINE_RATE as usize;

/// A 20 s slice of a record at the pipeline rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub record_id: String,
    pub index: usize,
    pub offset_seconds: f64,
    pub samples: Vec<f64>,
    pub label: Dastgah,
}

impl Segment {
    /// Identifier used for cache files; sorts by record then position.
    pub fn id(&self) -> String {
        segment_id(&self.record_id, self.index)
    }
}

pub(crate) fn segment_id(record_id: &str, index: usize) -> String {
    format!("{record_id}_{index:04}")
}

/// Whole segments in `n_samples` samples.
pub fn segment_count(n_samples: usize) -> usize {
    n_samples / SEGMENT_SAMPLES
}

/// Cuts a clip into consecutive, non-overlapping 20 s segments starting at
/// offset 0. The remainder is discarded; a clip shorter than one segment
/// yields none.
pub fn segmentize(clip: &AudioClip, record_id: &str, label: Dastgah) -> Result<Vec<Segment>> {
    if clip.sample_rate() != PIPELINE_RATE {
        return Err(Error::InvalidArgument(format!(
            "segmentize expects {PIPELINE_RATE} Hz audio, got {} Hz",
            clip.sample_rate()
        )));
    }
    let segments: Vec<Segment> = clip
        .samples()
        .chunks_exact(SEGMENT_SAMPLES)
        .enumerate()
        .map(|(index, chunk)| Segment {
            record_id: record_id.to_string(),
            index,
            offset_seconds: (index * SEGMENT_SECONDS) as f64,
            samples: chunk.to_vec(),
            label,
        })
        .collect();
    if segments.is_empty() {
        log::warn!(
            "record {record_id}: {:.1} s is shorter than one {SEGMENT_SECONDS} s segment",
            clip.duration_seconds()
        );
    }
    Ok(segments)
}
