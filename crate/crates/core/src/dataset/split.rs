use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dastgah, IndexEntry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Every segment of a record lands in the same split.
    #[default]
    Record,
    /// Segments are shuffled individually.
    Segment,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "record" | "record-level" | "record_level" => Ok(SplitMode::Record),
            "segment" | "segment-level" | "segment_level" => Ok(SplitMode::Segment),
            other => Err(Error::InvalidArgument(format!(
                "unknown split mode `{other}` (expected record or segment)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.90,
            val: 0.05,
            test: 0.05,
            seed: 0,
            mode: SplitMode::Record,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fractions = [self.train, self.val, self.test];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidArgument("split fractions must be in [0, 1]".into()));
        }
        if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions {:?} do not sum to 1",
                fractions
            )));
        }
        Ok(())
    }

    /// (val, test) sizes for a class with `n` units; train takes the rest.
    fn allocate(&self, n: usize) -> (usize, usize) {
        let mut val = (n as f64 * self.val).round() as usize;
        let mut test = (n as f64 * self.test).round() as usize;
        if n >= 3 {
            if self.val > 0.0 {
                val = val.max(1);
            }
            if self.test > 0.0 {
                test = test.max(1);
            }
        }
        while val + test > n {
            if test >= val && test > 0 {
                test -= 1;
            } else {
                val -= 1;
            }
        }
        (val, test)
    }
}

/// Disjoint segment-id lists, each sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "val" | "validation" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Stratified, seeded split of a cache's segments. Within each class the
/// units (records or segments, per `spec.mode`) are sorted, shuffled and
/// carved into test, validation and training portions.
pub fn split(entries: &[IndexEntry], spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if entries.is_empty() {
        return Err(Error::Empty("cannot split an empty feature cache".into()));
    }
    // class -> unit key -> segment ids
    let mut classes: BTreeMap<usize, BTreeMap<String, Vec<String>>> = BTreeMap::new();
    for e in entries {
        Dastgah::from_code(e.label)?;
        let unit = match spec.mode {
            SplitMode::Record => e.record_id.clone(),
            SplitMode::Segment => e.segment_id.clone(),
        };
        classes
            .entry(e.label)
            .or_default()
            .entry(unit)
            .or_default()
            .push(e.segment_id.clone());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Splits::default();
    for (label, units) in classes {
        let mut keys: Vec<&String> = units.keys().collect();
        keys.shuffle(&mut rng);
        let (n_val, n_test) = spec.allocate(keys.len());
        if spec.mode == SplitMode::Record && keys.len() < 3 {
            log::warn!(
                "class {} has {} record(s); it cannot appear in every split",
                Dastgah::ALL[label],
                keys.len()
            );
        }
        for (i, key) in keys.iter().enumerate() {
            let target = if i < n_test {
                &mut out.test
            } else if i < n_test + n_val {
                &mut out.val
            } else {
                &mut out.train
            };
            target.extend(units[*key].iter().cloned());
        }
    }
    out.train.sort();
    out.val.sort();
    out.test.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FeatureKind;
    use std::collections::HashSet;

    fn entries(records_per_class: usize, segs_per_record: usize) -> Vec<IndexEntry> {
        let mut out = Vec::new();
        for label in 0..7 {
            for r in 0..records_per_class {
                for s in 0..segs_per_record {
                    let record_id = format!("c{label}r{r:03}");
                    let segment_id = format!("{record_id}_{s:04}");
                    out.push(IndexEntry {
                        file: format!("{segment_id}.navf"),
                        segment_id,
                        record_id,
                        label,
                        kind: FeatureKind::Mfcc,
                        rows: 286,
                        cols: 24,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn segment_level_counts() {
        let spec = SplitSpec {
            mode: SplitMode::Segment,
            seed: 3,
            ..Default::default()
        };
        let s = split(&entries(100, 1), &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (630, 35, 35));
    }

    #[test]
    fn deterministic_per_seed() {
        let e = entries(10, 3);
        let spec = SplitSpec {
            seed: 11,
            ..Default::default()
        };
        assert_eq!(split(&e, &spec).unwrap(), split(&e, &spec).unwrap());
        let other = SplitSpec { seed: 12, ..spec };
        assert_ne!(split(&e, &spec).unwrap(), split(&e, &other).unwrap());
    }

    #[test]
    fn record_level_keeps_records_together_and_partitions() {
        let e = entries(30, 3);
        let s = split(&e, &SplitSpec::default()).unwrap();
        let record_of = |id: &String| id.split('_').next().unwrap().to_string();
        let sets: Vec<HashSet<String>> = [&s.train, &s.val, &s.test]
            .iter()
            .map(|ids| ids.iter().map(record_of).collect())
            .collect();
        assert!(sets[0].is_disjoint(&sets[1]));
        assert!(sets[0].is_disjoint(&sets[2]));
        assert!(sets[1].is_disjoint(&sets[2]));

        let all: HashSet<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
        assert_eq!(all.len(), e.len());
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), e.len());
        // round(1.5) = 2 records per class in each held-out split.
        assert_eq!(s.test.len(), 7 * 2 * 3);
        assert_eq!(s.val.len(), 7 * 2 * 3);
    }

    #[test]
    fn every_class_in_every_split_when_possible() {
        let s = split(&entries(5, 1), &SplitSpec::default()).unwrap();
        for ids in [&s.train, &s.val, &s.test] {
            let classes: HashSet<&str> = ids.iter().map(|id| &id[..2]).collect();
            assert_eq!(classes.len(), 7);
        }
    }

    #[test]
    fn tiny_classes_and_errors() {
        let s = split(&entries(1, 2), &SplitSpec::default()).unwrap();
        assert_eq!(s.train.len(), 14);
        assert!(split(&[], &SplitSpec::default()).is_err());
        let bad = SplitSpec {
            train: 0.5,
            ..Default::default()
        };
        assert!(split(&entries(2, 1), &bad).is_err());
    }
}
