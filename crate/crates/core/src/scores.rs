//! Questionnaire score normalization.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::KNOT_SPEEDS_KMH;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stimulus {
    None,
    Vibration,
    Friction,
}

pub const STIMULI: [Stimulus; 3] = [Stimulus::None, Stimulus::Vibration, Stimulus::Friction];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub participant: String,
    pub item: String,
    pub stimulus: Stimulus,
    pub speed_kmh: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRecord {
    pub participant: String,
    pub item: String,
    pub stimulus: Stimulus,
    pub speed_kmh: f64,
    pub score: f64,
    pub normalized: f64,
}

fn speed_slot(speed: f64) -> Option<usize> {
    KNOT_SPEEDS_KMH.iter().position(|&s| s == speed)
}

fn stimulus_slot(s: Stimulus) -> usize {
    STIMULI.iter().position(|&x| x == s).expect("listed")
}

/// Min-max normalize each participant's item over its stimulus by speed
/// grid. A grid whose scores are all equal maps to 0.
pub fn normalize_scores(records: &[ScoreRecord]) -> Result<Vec<NormalizedRecord>> {
    let mut grids: BTreeMap<(&str, &str), [[Option<f64>; 3]; 3]> = BTreeMap::new();
    for r in records {
        if !(r.score.is_finite() && (0.0..=100.0).contains(&r.score)) {
            return Err(Error::Format(format!(
                "score {} for {}/{} is outside [0, 100]",
                r.score, r.participant, r.item
            )));
        }
        let speed = speed_slot(r.speed_kmh).ok_or_else(|| {
            Error::Format(format!(
                "speed {} km/h is not one of {:?}",
                r.speed_kmh, KNOT_SPEEDS_KMH
            ))
        })?;
        let cell = &mut grids.entry((&r.participant, &r.item)).or_default()
            [stimulus_slot(r.stimulus)][speed];
        if cell.replace(r.score).is_some() {
            return Err(Error::Format(format!(
                "duplicate score for {}/{} {:?} at {} km/h",
                r.participant, r.item, r.stimulus, r.speed_kmh
            )));
        }
    }
    let mut ranges = BTreeMap::new();
    for (key, grid) in &grids {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (si, row) in grid.iter().enumerate() {
            for (vi, cell) in row.iter().enumerate() {
                let v = cell.ok_or_else(|| {
                    Error::IncompleteGrid(format!(
                        "{}/{} lacks {:?} at {} km/h",
                        key.0, key.1, STIMULI[si], KNOT_SPEEDS_KMH[vi]
                    ))
                })?;
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        ranges.insert(*key, (lo, hi));
    }
    Ok(records
        .iter()
        .map(|r| {
            let (lo, hi) = ranges[&(r.participant.as_str(), r.item.as_str())];
            let normalized = if hi == lo {
                0.0
            } else {
                (r.score - lo) / (hi - lo)
            };
            NormalizedRecord {
                participant: r.participant.clone(),
                item: r.item.clone(),
                stimulus: r.stimulus,
                speed_kmh: r.speed_kmh,
                score: r.score,
                normalized,
            }
        })
        .collect())
}

/// Mean normalized score across participants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMean {
    pub item: String,
    pub stimulus: Stimulus,
    pub speed_kmh: f64,
    pub mean: f64,
    pub participants: usize,
}

pub fn mean_across_participants(normalized: &[NormalizedRecord]) -> Vec<CellMean> {
    let mut acc: BTreeMap<(&str, Stimulus, usize), (f64, usize)> = BTreeMap::new();
    for r in normalized {
        let slot = speed_slot(r.speed_kmh).unwrap_or(usize::MAX);
        let e = acc.entry((&r.item, r.stimulus, slot)).or_default();
        e.0 += r.normalized;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|((item, stimulus, slot), (sum, n))| CellMean {
            item: item.to_string(),
            stimulus,
            speed_kmh: KNOT_SPEEDS_KMH.get(slot).copied().unwrap_or(f64::NAN),
            mean: sum / n as f64,
            participants: n,
        })
        .collect()
}

pub fn read_scores<R: Read>(source: R) -> Result<Vec<ScoreRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let records = reader
        .deserialize()
        .collect::<std::result::Result<Vec<ScoreRecord>, _>>()?;
    if records.is_empty() {
        return Err(Error::EmptyInput("score file has no rows"));
    }
    Ok(records)
}

pub fn write_normalized<W: Write>(records: &[NormalizedRecord], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}
