use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// Per-modality min-max scaling to `[0, 1]`. A constant series maps to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub ranges: Vec<Range>,
}

impl Scaler {
    pub fn fit(data: &Dataset) -> Result<Self> {
        let cols: Vec<(&str, &[f64])> = data
            .names()
            .iter()
            .zip(data.values())
            .map(|(n, v)| (n.as_str(), v.as_slice()))
            .collect();
        Self::fit_columns(&cols)
    }

    pub fn fit_columns(columns: &[(&str, &[f64])]) -> Result<Self> {
        let ranges = columns
            .iter()
            .map(|&(name, v)| {
                if v.is_empty() {
                    return Err(Error::Data(format!("cannot fit a scaler on empty series {name:?}")));
                }
                let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Ok(Range {
                    name: name.to_string(),
                    min,
                    max,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scaler { ranges })
    }

    pub fn from_ranges(ranges: &[(&str, f64, f64)]) -> Result<Self> {
        let ranges = ranges
            .iter()
            .map(|&(name, min, max)| {
                if !(min <= max) {
                    return Err(Error::Config(format!("scaler range for {name} has min {min} > max {max}")));
                }
                Ok(Range {
                    name: name.to_string(),
                    min,
                    max,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scaler { ranges })
    }

    pub fn names(&self) -> Vec<&str> {
        self.ranges.iter().map(|r| r.name.as_str()).collect()
    }

    fn range(&self, name: &str) -> Result<&Range> {
        self.ranges
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::Data(format!("scaler has no range for modality {name:?}")))
    }

    pub fn apply_value(&self, name: &str, x: f64) -> Result<f64> {
        Ok(forward(self.range(name)?, x))
    }

    pub fn invert_value(&self, name: &str, y: f64) -> Result<f64> {
        Ok(inverse(self.range(name)?, y))
    }

    pub fn apply_slice(&self, name: &str, xs: &[f64]) -> Result<Vec<f64>> {
        let r = self.range(name)?;
        Ok(xs.iter().map(|&x| forward(r, x)).collect())
    }

    pub fn invert_slice(&self, name: &str, ys: &[f64]) -> Result<Vec<f64>> {
        let r = self.range(name)?;
        Ok(ys.iter().map(|&y| inverse(r, y)).collect())
    }

    /// Scales every modality of `data`; each must have a fitted range.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let ranges = data.names().iter().map(|n| self.range(n)).collect::<Result<Vec<_>>>()?;
        Ok(data.map_values(|i, x| forward(ranges[i], x)))
    }
}

fn forward(r: &Range, x: f64) -> f64 {
    let span = r.max - r.min;
    if span > 0.0 {
        (x - r.min) / span
    } else {
        0.0
    }
}

fn inverse(r: &Range, y: f64) -> f64 {
    r.min + y * (r.max - r.min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_cases() {
        let s = Scaler::fit_columns(&[("a", &[10.0, 20.0, 30.0]), ("b", &[7.0, 7.0, 7.0])]).unwrap();
        assert_eq!(s.apply_slice("a", &[10.0, 20.0, 30.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(s.apply_slice("b", &[7.0, 7.0, 7.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(s.invert_value("b", 0.0).unwrap(), 7.0);
        assert!(s.apply_value("c", 1.0).is_err());
    }

    #[test]
    fn empty_series_is_rejected() {
        assert!(Scaler::fit_columns(&[("a", &[])]).is_err());
    }
}
