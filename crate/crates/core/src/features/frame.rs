use std::io::{Read, Write};
use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{FeatureError, Result};

/// Date-indexed dense matrix with named columns, one row per day.
///
/// Invariants enforced at construction: dates strictly increasing, column
/// names unique, the target is one of the columns, and every cell is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    dates: Vec<NaiveDate>,
    columns: Vec<String>,
    /// Row-major, `dates.len() * columns.len()`.
    values: Vec<f64>,
    target: String,
}

impl FeatureFrame {
    pub fn new(
        dates: Vec<NaiveDate>,
        columns: Vec<String>,
        values: Vec<f64>,
        target: impl Into<String>,
    ) -> Result<Self> {
        let target = target.into();
        if values.len() != dates.len() * columns.len() {
            return Err(FeatureError::Shape(format!(
                "{} values for {} rows x {} columns",
                values.len(),
                dates.len(),
                columns.len()
            )));
        }
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].contains(c) {
                return Err(FeatureError::DuplicateColumn(c.clone()));
            }
        }
        if !columns.contains(&target) {
            return Err(FeatureError::UnknownColumn(target));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(FeatureError::UnorderedDates(w[1]));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let ncols = columns.len();
            return Err(FeatureError::NonFinite {
                date: dates[pos / ncols],
                column: columns[pos % ncols].clone(),
            });
        }
        Ok(Self { dates, columns, values, target })
    }

    pub fn n_rows(&self) -> usize {
        self.dates.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn column_names(&self) -> &[String] {
        &self.columns
    }

    pub fn target_name(&self) -> &str {
        &self.target
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.n_cols();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols() + col]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn target_index(&self) -> usize {
        self.column_index(&self.target).expect("target column present")
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.get(r, idx)).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .column_index(name)
            .ok_or_else(|| FeatureError::UnknownColumn(name.to_string()))?;
        Ok(self.column(idx))
    }

    pub fn target_values(&self) -> Vec<f64> {
        self.column(self.target_index())
    }

    /// Column indices of every non-target column, in frame order.
    pub fn predictor_indices(&self) -> Vec<usize> {
        let t = self.target_index();
        (0..self.n_cols()).filter(|&c| c != t).collect()
    }

    pub fn predictor_names(&self) -> Vec<&str> {
        self.predictor_indices()
            .into_iter()
            .map(|i| self.columns[i].as_str())
            .collect()
    }

    /// Keep the named predictors (in frame order) plus the target.
    pub fn select_predictors(&self, names: &[String]) -> Result<Self> {
        if let Some(missing) = names.iter().find(|n| self.column_index(n).is_none()) {
            return Err(FeatureError::UnknownColumn(missing.clone()));
        }
        let keep: Vec<usize> = (0..self.n_cols())
            .filter(|&c| c == self.target_index() || names.contains(&self.columns[c]))
            .collect();
        let mut values = Vec::with_capacity(self.n_rows() * keep.len());
        for r in 0..self.n_rows() {
            values.extend(keep.iter().map(|&c| self.get(r, c)));
        }
        Ok(Self {
            dates: self.dates.clone(),
            columns: keep.iter().map(|&c| self.columns[c].clone()).collect(),
            values,
            target: self.target.clone(),
        })
    }

    pub fn slice_rows(&self, rows: Range<usize>) -> Self {
        let n = self.n_cols();
        Self {
            dates: self.dates[rows.clone()].to_vec(),
            columns: self.columns.clone(),
            values: self.values[rows.start * n..rows.end * n].to_vec(),
            target: self.target.clone(),
        }
    }

    /// Same shape and names with every cell passed through `f(col, value)`.
    pub(crate) fn map_cells(&self, mut f: impl FnMut(usize, f64) -> f64) -> Self {
        let n = self.n_cols();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i % n, v))
            .collect();
        Self { values, ..self.clone() }
    }

    /// Stack frames with identical columns, preserving order.
    pub fn concat(parts: &[&FeatureFrame]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| FeatureError::Shape("nothing to concatenate".into()))?;
        let mut dates = Vec::new();
        let mut values = Vec::new();
        for p in parts {
            if p.columns != first.columns || p.target != first.target {
                return Err(FeatureError::ColumnMismatch);
            }
            dates.extend_from_slice(&p.dates);
            values.extend_from_slice(&p.values);
        }
        Self::new(dates, first.columns.clone(), values, first.target.clone())
    }

    /// CSV with a leading `date` column; the target column comes last.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let order = self.csv_column_order();
        let mut header = vec!["date".to_string()];
        header.extend(order.iter().map(|&c| self.columns[c].clone()));
        writer.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut rec = vec![self.dates[r].format("%Y-%m-%d").to_string()];
            rec.extend(order.iter().map(|&c| self.get(r, c).to_string()));
            writer.write_record(&rec)?;
        }
        writer.flush()?;
        Ok(())
    }

    fn csv_column_order(&self) -> Vec<usize> {
        let mut order = self.predictor_indices();
        order.push(self.target_index());
        order
    }

    /// Read a frame written by [`FeatureFrame::write_csv`]; the last column
    /// is the target.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let header = reader.headers()?.clone();
        if header.get(0) != Some("date") || header.len() < 2 {
            return Err(FeatureError::Shape("frame csv must start with a date column".into()));
        }
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let target = columns.last().cloned().expect("at least one column");
        let mut dates = Vec::new();
        let mut values = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
                .map_err(|_| FeatureError::Shape(format!("bad date {:?}", &rec[0])))?;
            dates.push(date);
            for field in rec.iter().skip(1) {
                values.push(
                    field
                        .parse::<f64>()
                        .map_err(|_| FeatureError::Shape(format!("bad number {field:?}")))?,
                );
            }
        }
        Self::new(dates, columns, values, target)
    }
}

/// JSON written next to a frame CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSidecar {
    pub format_version: u32,
    pub columns: Vec<String>,
    pub target: String,
    pub schema: super::FeatureSchema,
    pub normalizer: Option<super::Normalizer>,
    pub inference_date: Option<NaiveDate>,
    pub inference_row: Option<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, day).unwrap()
    }

    fn frame() -> FeatureFrame {
        FeatureFrame::new(
            vec![d(1), d(2), d(3)],
            vec!["a".into(), "y".into(), "b".into()],
            vec![1.0, 10.0, 0.5, 2.0, 20.0, 0.25, 3.0, 30.0, 0.125],
            "y",
        )
        .unwrap()
    }

    #[test]
    fn rejects_invalid_frames() {
        let cols = || vec!["a".to_string(), "y".to_string()];
        assert!(matches!(
            FeatureFrame::new(vec![d(1)], cols(), vec![1.0, f64::NAN], "y"),
            Err(FeatureError::NonFinite { .. })
        ));
        assert!(matches!(
            FeatureFrame::new(vec![d(2), d(1)], cols(), vec![0.0; 4], "y"),
            Err(FeatureError::UnorderedDates(_))
        ));
        assert!(matches!(
            FeatureFrame::new(vec![d(1)], cols(), vec![0.0; 2], "z"),
            Err(FeatureError::UnknownColumn(_))
        ));
        assert!(matches!(
            FeatureFrame::new(vec![d(1)], vec!["a".into(), "a".into()], vec![0.0; 2], "a"),
            Err(FeatureError::DuplicateColumn(_))
        ));
        assert!(matches!(
            FeatureFrame::new(vec![d(1)], cols(), vec![0.0; 3], "y"),
            Err(FeatureError::Shape(_))
        ));
    }

    #[test]
    fn csv_round_trip_moves_target_last() {
        let f = frame();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("date,a,b,y\n2020-03-01,1,0.5,10\n"));
        let back = FeatureFrame::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.target_name(), "y");
        assert_eq!(back.column_by_name("b").unwrap(), f.column_by_name("b").unwrap());
        assert_eq!(back.target_values(), f.target_values());
    }

    #[test]
    fn select_and_slice() {
        let f = frame();
        let s = f.select_predictors(&["b".to_string()]).unwrap();
        assert_eq!(s.column_names(), &["y".to_string(), "b".to_string()]);
        assert_eq!(s.predictor_names(), vec!["b"]);
        assert!(f.select_predictors(&["nope".to_string()]).is_err());

        let tail = f.slice_rows(1..3);
        assert_eq!(tail.dates(), &[d(2), d(3)]);
        assert_eq!(tail.row(0), &[2.0, 20.0, 0.25]);
        let whole = FeatureFrame::concat(&[&f.slice_rows(0..1), &tail]).unwrap();
        assert_eq!(whole, f);
    }
}
