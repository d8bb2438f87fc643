//! Aligned multimodal series, supervised windows, CSV ingest and the
//! synthetic traffic generator.

mod csv_io;
mod synth;

pub use csv_io::{export_csv, ingest_csv, parse_timestamp, read_csv, write_csv, Schema};
pub use synth::{synth, SynthConfig};

use std::ops::Range;

pub use chrono::NaiveDateTime;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FLOW: &str = "flow";
pub const SPEED: &str = "speed";
pub const JOURNEY_TIME: &str = "journey_time";
pub const DEFAULT_MODALITIES: [&str; 3] = [FLOW, SPEED, JOURNEY_TIME];

/// Timestamp layout used for every file this crate writes.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Equally spaced records of several named modalities on one time axis.
/// The first modality is the forecast target.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    timestamps: Vec<NaiveDateTime>,
    interval_minutes: u32,
    names: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        interval_minutes: u32,
        names: Vec<String>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if interval_minutes == 0 {
            return Err(Error::Data("interval must be at least one minute".into()));
        }
        if names.is_empty() || names.len() != values.len() {
            return Err(Error::Data(format!(
                "{} modality names for {} value columns",
                names.len(),
                values.len()
            )));
        }
        if let Some((n, v)) = names.iter().zip(&values).find(|(_, v)| v.len() != timestamps.len()) {
            return Err(Error::Data(format!(
                "modality {n} has {} values for {} timestamps",
                v.len(),
                timestamps.len()
            )));
        }
        let step = chrono::Duration::minutes(i64::from(interval_minutes));
        if let Some(w) = timestamps.windows(2).find(|w| w[1] - w[0] != step) {
            return Err(Error::Data(format!(
                "timestamps {} and {} are not {interval_minutes} minutes apart",
                w[0], w[1]
            )));
        }
        Ok(Dataset {
            timestamps,
            interval_minutes,
            names,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn interval_minutes(&self) -> u32 {
        self.interval_minutes
    }

    /// Records per day at this sampling interval.
    pub fn steps_per_day(&self) -> usize {
        (24 * 60 / self.interval_minutes) as usize
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn modality(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i].as_slice())
    }

    /// The forecast target series.
    pub fn target(&self) -> &[f64] {
        &self.values[0]
    }

    /// Reorders / subsets the modalities; errors name the first one missing.
    pub fn select(&self, names: &[String]) -> Result<Dataset> {
        let values = names
            .iter()
            .map(|n| {
                self.modality(n)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::Data(format!("data has no modality {n:?} (found {:?})", self.names)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            timestamps: self.timestamps.clone(),
            interval_minutes: self.interval_minutes,
            names: names.to_vec(),
            values,
        })
    }

    pub fn slice(&self, range: Range<usize>) -> Result<Dataset> {
        if range.start > range.end || range.end > self.len() {
            return Err(Error::Data(format!("record range {range:?} outside 0..{}", self.len())));
        }
        Ok(Dataset {
            timestamps: self.timestamps[range.clone()].to_vec(),
            interval_minutes: self.interval_minutes,
            names: self.names.clone(),
            values: self.values.iter().map(|v| v[range.clone()].to_vec()).collect(),
        })
    }

    /// Applies `f(modality index, value)` to every value.
    pub fn map_values(&self, mut f: impl FnMut(usize, f64) -> f64) -> Dataset {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, col)| col.iter().map(|&v| f(i, v)).collect())
            .collect();
        Dataset {
            values,
            ..self.clone()
        }
    }

    /// Index of the first record at or after `t`.
    pub fn position_of(&self, t: NaiveDateTime) -> usize {
        self.timestamps.partition_point(|&x| x < t)
    }
}

/// Supervised samples cut from a dataset: `inputs[m]` holds the `w`-step
/// windows of modality `m` row by row, and `targets[k]` is the target
/// modality at record `target_index[k]`, the step right after the window.
#[derive(Debug, Clone, PartialEq)]
pub struct Windows {
    pub lookup: usize,
    pub names: Vec<String>,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub target_index: Vec<usize>,
    pub timestamps: Vec<NaiveDateTime>,
}

/// Cuts every window of length `w`; `N = L - w`.
pub fn window(data: &Dataset, w: usize) -> Result<Windows> {
    if w == 0 {
        return Err(Error::Data("lookup must be at least 1".into()));
    }
    if data.len() <= w {
        return Err(Error::Data(format!(
            "series of {} records is too short for lookup {w}",
            data.len()
        )));
    }
    let n = data.len() - w;
    let inputs = data
        .values
        .iter()
        .map(|col| {
            let mut rows = Vec::with_capacity(n * w);
            for k in 0..n {
                rows.extend_from_slice(&col[k..k + w]);
            }
            rows
        })
        .collect();
    let target = data.target();
    Ok(Windows {
        lookup: w,
        names: data.names.clone(),
        inputs,
        targets: (0..n).map(|k| target[k + w]).collect(),
        target_index: (w..data.len()).collect(),
        timestamps: data.timestamps[w..].to_vec(),
    })
}

impl Windows {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn modalities(&self) -> usize {
        self.names.len()
    }

    /// Window `k` of modality `m`.
    pub fn input(&self, m: usize, k: usize) -> &[f64] {
        &self.inputs[m][k * self.lookup..(k + 1) * self.lookup]
    }

    /// Keeps the samples at `positions`, in that order.
    pub fn subset(&self, positions: &[usize]) -> Windows {
        let w = self.lookup;
        Windows {
            lookup: w,
            names: self.names.clone(),
            inputs: self
                .inputs
                .iter()
                .map(|col| {
                    let mut rows = Vec::with_capacity(positions.len() * w);
                    for &k in positions {
                        rows.extend_from_slice(&col[k * w..(k + 1) * w]);
                    }
                    rows
                })
                .collect(),
            targets: positions.iter().map(|&k| self.targets[k]).collect(),
            target_index: positions.iter().map(|&k| self.target_index[k]).collect(),
            timestamps: positions.iter().map(|&k| self.timestamps[k]).collect(),
        }
    }

    /// Samples whose target record falls in `records`.
    pub fn with_targets_in(&self, records: Range<usize>) -> Windows {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&k| records.contains(&self.target_index[k]))
            .collect();
        self.subset(&keep)
    }

    /// Model inputs (`[B, w]` per modality) and targets (`[B]`) for the
    /// samples at `positions`.
    pub fn batch(&self, positions: &[usize]) -> Result<(Vec<Tensor>, Tensor)> {
        let w = self.lookup;
        let inputs = self
            .inputs
            .iter()
            .map(|col| {
                let mut rows = Vec::with_capacity(positions.len() * w);
                for &k in positions {
                    rows.extend_from_slice(&col[k * w..(k + 1) * w]);
                }
                Tensor::new(&[positions.len(), w], rows)
            })
            .collect::<Result<Vec<_>>>()?;
        let targets = positions.iter().map(|&k| self.targets[k]).collect();
        Ok((inputs, Tensor::new(&[positions.len()], targets)?))
    }

    /// The same samples restricted to, and ordered by, `names`.
    pub fn select(&self, names: &[String]) -> Result<Windows> {
        let inputs = names
            .iter()
            .map(|n| {
                self.names
                    .iter()
                    .position(|x| x == n)
                    .map(|i| self.inputs[i].clone())
                    .ok_or_else(|| Error::Data(format!("samples have no modality {n:?} (found {:?})", self.names)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Windows {
            names: names.to_vec(),
            inputs,
            ..self.clone()
        })
    }

    /// Flattened feature row `k`: modality windows back to back.
    pub fn features(&self, k: usize) -> Vec<f64> {
        (0..self.modalities()).flat_map(|m| self.input(m, k).iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    pub(crate) fn ramp(len: usize) -> Dataset {
        let t0 = NaiveDate::from_ymd_opt(2014, 1, 7).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let ts = (0..len).map(|i| t0 + chrono::Duration::minutes(15 * i as i64)).collect();
        let flow = (0..len).map(|i| i as f64 * 10.0).collect();
        let speed = (0..len).map(|i| 100.0 - i as f64).collect();
        Dataset::new(ts, 15, vec!["flow".into(), "speed".into()], vec![flow, speed]).unwrap()
    }

    #[test]
    fn window_counts_and_targets() {
        let w = window(&ramp(5), 2).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w.targets, vec![20.0, 30.0, 40.0]);
        assert_eq!(w.input(0, 1), &[10.0, 20.0]);
        assert_eq!(w.input(1, 2), &[98.0, 97.0]);
        assert_eq!(w.target_index, vec![2, 3, 4]);
    }

    #[test]
    fn window_sample_count_for_a_year_of_records() {
        assert_eq!(window(&ramp(34876), 20).unwrap().len(), 34856);
    }

    #[test]
    fn window_rejects_short_series() {
        assert!(window(&ramp(5), 5).is_err());
        assert!(window(&ramp(5), 0).is_err());
    }

    #[test]
    fn batch_layout() {
        let w = window(&ramp(6), 3).unwrap();
        let (x, y) = w.batch(&[2, 0]).unwrap();
        assert_eq!(x[0].data(), &[20.0, 30.0, 40.0, 0.0, 10.0, 20.0]);
        assert_eq!(y.data(), &[50.0, 30.0]);
        assert_eq!(w.features(0), vec![0.0, 10.0, 20.0, 100.0, 99.0, 98.0]);
    }

    #[test]
    fn select_names_the_missing_modality() {
        let err = ramp(4).select(&["flow".into(), "journey_time".into()]).unwrap_err();
        assert!(err.to_string().contains("journey_time"));
    }

    #[test]
    fn irregular_timestamps_are_rejected() {
        let d = ramp(3);
        let mut ts = d.timestamps().to_vec();
        ts[2] += chrono::Duration::minutes(1);
        assert!(Dataset::new(ts, 15, d.names().to_vec(), d.values().to_vec()).is_err());
    }
}
