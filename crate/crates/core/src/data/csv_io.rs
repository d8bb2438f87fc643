use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::{Dataset, TIMESTAMP_FORMAT};
use crate::error::{Error, Result};

/// Maps source CSV headers onto modality names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schema {
    /// Header of the timestamp column.
    pub timestamp: String,
    /// Modality name → source header. Unlisted modalities use their own name.
    pub columns: BTreeMap<String, String>,
    pub interval_minutes: u32,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            timestamp: "timestamp".into(),
            columns: BTreeMap::new(),
            interval_minutes: 15,
        }
    }
}

impl Schema {
    fn header_for<'a>(&'a self, modality: &'a str) -> &'a str {
        self.columns.get(modality).map_or(modality, String::as_str)
    }
}

const INPUT_FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    INPUT_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| DateTime::parse_from_rfc3339(s).ok().map(|t| t.naive_local()))
}

pub fn ingest_csv(path: &Path, schema: &Schema, modalities: &[String]) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, &path.display().to_string(), schema, modalities)
}

/// Parses a CSV, sorts it by time, fills isolated single-interval gaps by
/// linear interpolation and keeps the longest gap-free stretch. Rows with an
/// empty or `NaN` value count as missing.
pub fn read_csv<R: Read>(input: R, source: &str, schema: &Schema, modalities: &[String]) -> Result<Dataset> {
    if modalities.is_empty() {
        return Err(Error::Data("no modalities requested".into()));
    }
    if schema.interval_minutes == 0 {
        return Err(Error::Data("interval must be at least one minute".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{source}: cannot read header row: {e}")))?
        .clone();
    let column = |h: &str, what: &str| {
        headers
            .iter()
            .position(|x| x == h)
            .ok_or_else(|| Error::Data(format!("{source}: missing column {h:?} for {what}")))
    };
    let ts_col = column(&schema.timestamp, "timestamps")?;
    let value_cols = modalities
        .iter()
        .map(|m| column(schema.header_for(m), &format!("modality {m}")))
        .collect::<Result<Vec<_>>>()?;

    let mut rows: Vec<(NaiveDateTime, Vec<f64>)> = Vec::new();
    let mut incomplete = 0usize;
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{source}: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        let raw_ts = rec.get(ts_col).unwrap_or("");
        let ts = parse_timestamp(raw_ts)
            .ok_or_else(|| Error::Data(format!("{source}: line {line}: cannot parse timestamp {raw_ts:?}")))?;
        let mut vals = Vec::with_capacity(value_cols.len());
        for (&c, m) in value_cols.iter().zip(modalities) {
            let raw = rec.get(c).unwrap_or("");
            if raw.is_empty() || raw.eq_ignore_ascii_case("nan") {
                break;
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::Data(format!("{source}: line {line}: cannot parse {m} value {raw:?}")))?;
            if !v.is_finite() {
                return Err(Error::Data(format!("{source}: line {line}: non-finite {m} value {raw:?}")));
            }
            vals.push(v);
        }
        if vals.len() == value_cols.len() {
            rows.push((ts, vals));
        } else {
            incomplete += 1;
        }
    }
    if incomplete > 0 {
        log::warn!("{source}: {incomplete} rows with missing values treated as gaps");
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{source}: no usable records")));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Data(format!(
            "{source}: duplicate timestamp {}",
            w[0].0.format(TIMESTAMP_FORMAT)
        )));
    }

    let step = i64::from(schema.interval_minutes);
    let mut segments: Vec<Vec<(NaiveDateTime, Vec<f64>)>> = vec![Vec::new()];
    let mut prev: Option<&(NaiveDateTime, Vec<f64>)> = None;
    for row in &rows {
        if let Some(p) = prev {
            let gap = (row.0 - p.0).num_minutes();
            if gap % step != 0 || (row.0 - p.0).num_seconds() % 60 != 0 {
                return Err(Error::Data(format!(
                    "{source}: {} is not on the {step}-minute grid started at {}",
                    row.0.format(TIMESTAMP_FORMAT),
                    rows[0].0.format(TIMESTAMP_FORMAT)
                )));
            }
            match gap / step {
                1 => {}
                2 => {
                    let mid = p.1.iter().zip(&row.1).map(|(a, b)| 0.5 * (a + b)).collect();
                    let seg = segments.last_mut().expect("non-empty");
                    seg.push((p.0 + chrono::Duration::minutes(step), mid));
                }
                _ => segments.push(Vec::new()),
            }
        }
        segments.last_mut().expect("non-empty").push(row.clone());
        prev = Some(row);
    }

    let best = (0..segments.len())
        .max_by_key(|&i| (segments[i].len(), std::cmp::Reverse(i)))
        .expect("at least one segment");
    if segments.len() > 1 {
        let dropped: Vec<String> = segments
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != best)
            .map(|(_, s)| {
                format!(
                    "{}..{} ({} records)",
                    s[0].0.format(TIMESTAMP_FORMAT),
                    s[s.len() - 1].0.format(TIMESTAMP_FORMAT),
                    s.len()
                )
            })
            .collect();
        log::warn!(
            "{source}: gaps longer than one interval split the series; keeping the longest stretch, discarding {}",
            dropped.join(", ")
        );
    }
    let seg = std::mem::take(&mut segments[best]);
    let timestamps = seg.iter().map(|r| r.0).collect();
    let mut values = vec![Vec::with_capacity(seg.len()); modalities.len()];
    for (_, vals) in seg {
        for (col, v) in values.iter_mut().zip(vals) {
            col.push(v);
        }
    }
    Dataset::new(timestamps, schema.interval_minutes, modalities.to_vec(), values)
}

/// Writes the dataset with `# `-prefixed comment lines first. Values use the
/// shortest representation that parses back to the same float.
pub fn write_csv<W: Write>(data: &Dataset, out: W, comments: &[String]) -> Result<()> {
    let mut out = std::io::BufWriter::new(out);
    let fail = |e: std::io::Error| Error::Data(format!("writing CSV: {e}"));
    for c in comments {
        for line in c.lines() {
            writeln!(out, "# {line}").map_err(fail)?;
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestamp".to_string()];
    header.extend(data.names().iter().cloned());
    w.write_record(&header).map_err(|e| Error::Data(format!("writing CSV: {e}")))?;
    for (i, t) in data.timestamps().iter().enumerate() {
        let mut row = vec![t.format(TIMESTAMP_FORMAT).to_string()];
        row.extend(data.values().iter().map(|col| col[i].to_string()));
        w.write_record(&row).map_err(|e| Error::Data(format!("writing CSV: {e}")))?;
    }
    w.flush().map_err(fail)
}

pub fn export_csv(data: &Dataset, path: &Path, comments: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(data, file, comments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["flow".into(), "speed".into(), "journey_time".into()]
    }

    fn parse(text: &str) -> Result<Dataset> {
        read_csv(text.as_bytes(), "test", &Schema::default(), &names())
    }

    #[test]
    fn well_formed_file() {
        let d = parse(
            "timestamp,flow,speed,journey_time\n\
             2014-01-07T00:00:00,10,100,180\n\
             2014-01-07T00:15:00,12,99,181\n\
             2014-01-07T00:30:00,11,98,182.5\n\
             2014-01-07T00:45:00,9,101,179\n",
        )
        .unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.modality("journey_time").unwrap()[2], 182.5);
    }

    #[test]
    fn single_gap_is_interpolated() {
        let d = parse(
            "timestamp,flow,speed,journey_time\n\
             2014-01-07T00:00:00,10,100,180\n\
             2014-01-07T00:30:00,20,90,200\n",
        )
        .unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.target(), &[10.0, 15.0, 20.0]);
        assert_eq!(d.modality("speed").unwrap()[1], 95.0);
    }

    #[test]
    fn long_gap_keeps_longest_stretch() {
        let d = parse(
            "timestamp,flow,speed,journey_time\n\
             2014-01-07T00:00:00,1,1,1\n\
             2014-01-07T02:00:00,2,2,2\n\
             2014-01-07T02:15:00,3,3,3\n",
        )
        .unwrap();
        assert_eq!(d.target(), &[2.0, 3.0]);
    }

    #[test]
    fn unsorted_rows_are_sorted() {
        let d = parse(
            "timestamp,flow,speed,journey_time\n\
             2014-01-07T00:15:00,2,2,2\n\
             2014-01-07T00:00:00,1,1,1\n",
        )
        .unwrap();
        assert_eq!(d.target(), &[1.0, 2.0]);
    }

    #[test]
    fn duplicate_timestamp_is_named() {
        let err = parse(
            "timestamp,flow,speed,journey_time\n\
             2014-01-07T00:00:00,1,1,1\n\
             2014-01-07T00:00:00,2,2,2\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("2014-01-07T00:00:00"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse(
            "# comment\n\
             timestamp,flow,speed,journey_time\n\
             2014-01-07T00:00:00,1,1,1\n\
             2014-01-07T00:15:00,x,1,1\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
        let err = parse("timestamp,flow,speed\n2014-01-07T00:00:00,1,1\n").unwrap_err();
        assert!(err.to_string().contains("journey_time"), "{err}");
        assert!(parse("timestamp,flow,speed,journey_time\n").is_err());
    }

    #[test]
    fn schema_maps_headers() {
        let mut schema = Schema::default();
        schema.timestamp = "Time Period".into();
        schema.columns.insert("flow".into(), "Total Volume".into());
        let d = read_csv(
            "Time Period,Total Volume\n2014-01-07 00:00:00,5\n2014-01-07 00:15:00,6\n".as_bytes(),
            "test",
            &schema,
            &["flow".into()],
        )
        .unwrap();
        assert_eq!(d.target(), &[5.0, 6.0]);
    }

    #[test]
    fn export_round_trip() {
        let d = parse(
            "timestamp,flow,speed,journey_time\n\
             2014-01-07T00:00:00,0.1,100.33333333333333,180\n\
             2014-01-07T00:15:00,1e-7,99,181\n",
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf, &["note".into()]).unwrap();
        let back = read_csv(&buf[..], "buf", &Schema::default(), &names()).unwrap();
        assert_eq!(back, d);
    }
}
