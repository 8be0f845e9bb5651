//! Labelled records, segmentation, feature caching, splits and the synthetic
//! quartertone-scale corpus.

mod cache;
mod segment;
mod split;
mod synth;

pub use cache::{
    extract_features, read_feature_file, write_feature_file, ExtractSummary, FeatureCache,
    IndexEntry, RecordError, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use segment::{segment_count, segmentize, Segment, SEGMENT_SAMPLES, SEGMENT_SECONDS};
pub use split::{split, SplitMode, SplitSpec, Splits};
pub use synth::{synth_clip, synth_dataset, SynthSpec, TEMPLATES};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "record_id,path,dastgah,instrument,artist";

/// The seven modal systems, with fixed integer codes 0..=6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dastgah {
    Shur,
    Mahur,
    Chahargah,
    Homayoun,
    Segah,
    Nava,
    Rastpanjgah,
}

impl Dastgah {
    pub const COUNT: usize = 7;
    pub const ALL: [Dastgah; 7] = [
        Dastgah::Shur,
        Dastgah::Mahur,
        Dastgah::Chahargah,
        Dastgah::Homayoun,
        Dastgah::Segah,
        Dastgah::Nava,
        Dastgah::Rastpanjgah,
    ];
    /// Row order used by the classification report.
    pub const REPORT_ORDER: [Dastgah; 7] = [
        Dastgah::Shur,
        Dastgah::Segah,
        Dastgah::Mahur,
        Dastgah::Homayoun,
        Dastgah::Rastpanjgah,
        Dastgah::Nava,
        Dastgah::Chahargah,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Result<Self> {
        Self::ALL
            .get(code)
            .copied()
            .ok_or(Error::LabelOutOfRange(code))
    }

    pub fn name(self) -> &'static str {
        match self {
            Dastgah::Shur => "Shur",
            Dastgah::Mahur => "Mahur",
            Dastgah::Chahargah => "Chahargah",
            Dastgah::Homayoun => "Homayoun",
            Dastgah::Segah => "Segah",
            Dastgah::Nava => "Nava",
            Dastgah::Rastpanjgah => "Rastpanjgah",
        }
    }
}

impl fmt::Display for Dastgah {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dastgah {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown dastgah `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instrument {
    Kamancheh,
    Tar,
    Setar,
    Reed,
    Dulcimer,
}

impl Instrument {
    pub const ALL: [Instrument; 5] = [
        Instrument::Kamancheh,
        Instrument::Tar,
        Instrument::Setar,
        Instrument::Reed,
        Instrument::Dulcimer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Instrument::Kamancheh => "Kamancheh",
            Instrument::Tar => "Tar",
            Instrument::Setar => "Setar",
            Instrument::Reed => "Reed",
            Instrument::Dulcimer => "Dulcimer",
        }
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Instrument {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(i) = Self::ALL.into_iter().find(|i| i.name().eq_ignore_ascii_case(s)) {
            return Ok(i);
        }
        // Common alternative transliterations.
        match s.to_ascii_lowercase().as_str() {
            "kamanche" => Ok(Instrument::Kamancheh),
            "santoor" | "santur" => Ok(Instrument::Dulcimer),
            "ney" => Ok(Instrument::Reed),
            _ => Err(Error::InvalidArgument(format!("unknown instrument `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub record_id: String,
    pub path: PathBuf,
    pub dastgah: Dastgah,
    pub instrument: Instrument,
    pub artist: String,
}

/// Parses manifest CSV text. Relative paths are kept as written.
pub fn parse_manifest(text: &str) -> Result<Vec<RecordEntry>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim().trim_start_matches('\u{feff}') == MANIFEST_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Manifest {
                row: 1,
                reason: format!("expected header `{MANIFEST_HEADER}`, found `{header}`"),
            })
        }
        None => {
            return Err(Error::Manifest {
                row: 1,
                reason: "empty manifest (missing header)".into(),
            })
        }
    }
    let mut seen = std::collections::HashSet::new();
    let mut entries = Vec::new();
    for (i, line) in lines {
        let row = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(Error::Manifest {
                row,
                reason: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let bad = |what: &str, value: &str| Error::Manifest {
            row,
            reason: format!("unknown {what} `{value}`"),
        };
        let dastgah = fields[2].parse().map_err(|_| bad("dastgah", fields[2]))?;
        let instrument = fields[3].parse().map_err(|_| bad("instrument", fields[3]))?;
        let record_id = fields[0].to_string();
        if record_id.is_empty() {
            return Err(Error::Manifest {
                row,
                reason: "empty record_id".into(),
            });
        }
        if !seen.insert(record_id.clone()) {
            return Err(Error::Manifest {
                row,
                reason: format!("duplicate record_id `{record_id}`"),
            });
        }
        entries.push(RecordEntry {
            record_id,
            path: PathBuf::from(fields[1]),
            dastgah,
            instrument,
            artist: fields[4].to_string(),
        });
    }
    Ok(entries)
}

/// Reads a manifest file; relative paths resolve against its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<RecordEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = parse_manifest(&text)?;
    for e in &mut entries {
        if e.path.is_relative() {
            e.path = base.join(&e.path);
        }
    }
    Ok(entries)
}

pub fn manifest_to_csv(entries: &[RecordEntry]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in entries {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.record_id,
            e.path.display(),
            e.dastgah,
            e.instrument,
            e.artist
        ));
    }
    out
}
