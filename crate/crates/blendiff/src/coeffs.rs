//! Blendshape-coefficient sequences, vertex-motion sequences, and their
//! CSV/file interfaces.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default animation rate in frames per second.
pub const DEFAULT_FRAME_RATE: f64 = 60.0;

const RANGE_SLACK: f64 = 1e-9;

/// N x K matrix of blendshape coefficients in [0, 1], one row per
/// animation frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffSequence {
    pub values: Tensor,
    pub frame_rate: f64,
    pub names: Vec<String>,
}

impl CoeffSequence {
    pub fn new(values: Tensor, frame_rate: f64, names: Vec<String>) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::ShapeMismatch {
                expected: vec![0, names.len()],
                got: values.shape().to_vec(),
            });
        }
        if values.cols() != names.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} columns but {} names",
                values.cols(),
                names.len()
            )));
        }
        let mut values = values;
        for v in values.data_mut() {
            if !v.is_finite() || *v < -RANGE_SLACK || *v > 1.0 + RANGE_SLACK {
                return Err(Error::InvalidArgument(format!(
                    "coefficient {v} outside [0, 1]"
                )));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(CoeffSequence {
            values,
            frame_rate,
            names,
        })
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn num_shapes(&self) -> usize {
        self.values.cols()
    }

    /// CSV with a `frame,name_1,...,name_K` header and one row per
    /// frame; values carry 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame");
        for name in &self.names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for n in 0..self.frames() {
            let _ = write!(out, "{n}");
            for k in 0..self.num_shapes() {
                let _ = write!(out, ",{:.8e}", self.values.at(n, k));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, frame_rate: f64) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::FormatError("empty coefficient CSV".into()))?;
        let mut cols = header.split(',');
        if cols.next() != Some("frame") {
            return Err(Error::FormatError(
                "coefficient CSV must start with a 'frame' column".into(),
            ));
        }
        let names: Vec<String> = cols.map(|s| s.trim().to_string()).collect();
        let k = names.len();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != k + 1 {
                return Err(Error::FormatError(format!(
                    "row {} has {} fields, expected {}",
                    i + 2,
                    fields.len(),
                    k + 1
                )));
            }
            let mut row = Vec::with_capacity(k);
            for f in &fields[1..] {
                row.push(f.trim().parse::<f64>().map_err(|_| {
                    Error::FormatError(format!("bad value '{f}' in row {}", i + 2))
                })?);
            }
            rows.push(row);
        }
        CoeffSequence::new(Tensor::from_rows(&rows), frame_rate, names)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load_csv(path: &Path, frame_rate: f64) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?, frame_rate)
    }
}

/// Sequence of vertex position frames, each of length 3*M.
#[derive(Debug, Clone)]
pub struct MotionSequence {
    /// N x 3M positions, one row per frame.
    pub frames: Tensor,
    pub frame_rate: f64,
}

impl MotionSequence {
    pub fn new(frames: Tensor, frame_rate: f64) -> Result<Self> {
        if frames.rank() != 2 || frames.rows() == 0 {
            return Err(Error::DimensionMismatch(
                "motion sequence needs at least one frame".into(),
            ));
        }
        if frames.cols() % 3 != 0 {
            return Err(Error::DimensionMismatch(format!(
                "frame length {} is not a multiple of 3",
                frames.cols()
            )));
        }
        Ok(MotionSequence { frames, frame_rate })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn vertex_count(&self) -> usize {
        self.frames.cols() / 3
    }
}

/// Binary editing mask with the same shape as a coefficient sequence:
/// 1 marks entries pinned to the reference, 0 marks entries to
/// regenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct EditMask {
    pub mask: Tensor,
}

impl EditMask {
    pub fn new(mask: Tensor) -> Result<Self> {
        if mask.rank() != 2 {
            return Err(Error::ShapeMismatch {
                expected: vec![0, 0],
                got: mask.shape().to_vec(),
            });
        }
        for &v in mask.data() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "mask entries must be 0 or 1, got {v}"
                )));
            }
        }
        Ok(EditMask { mask })
    }

    pub fn ones(n: usize, k: usize) -> Self {
        EditMask {
            mask: Tensor::filled(vec![n, k], 1.0),
        }
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        EditMask {
            mask: Tensor::zeros(vec![n, k]),
        }
    }

    /// CSV of 0/1 values matching the coefficient CSV shape. Two forms
    /// are accepted: a bare 0/1 grid, or the coefficient layout with a
    /// `frame,...` header and a leading frame-index column.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().peekable();
        let has_header = lines
            .peek()
            .map_or(false, |l| l.trim_start().starts_with("frame"));
        if has_header {
            lines.next();
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let start = usize::from(has_header);
            let mut row = Vec::with_capacity(fields.len().saturating_sub(start));
            for f in &fields[start..] {
                row.push(f.trim().parse::<f64>().map_err(|_| {
                    Error::FormatError(format!("bad mask value '{f}' in row {}", i + 1))
                })?);
            }
            if let Some(first) = rows.first() {
                if row.len() != first.len() {
                    return Err(Error::FormatError(format!(
                        "ragged mask row {} ({} values, expected {})",
                        i + 1,
                        row.len(),
                        first.len()
                    )));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::EmptyInput("mask CSV has no rows".into()));
        }
        EditMask::new(Tensor::from_rows(&rows))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for n in 0..self.mask.rows() {
            for k in 0..self.mask.cols() {
                if k > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}", self.mask.at(n, k) as u8);
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq() -> CoeffSequence {
        CoeffSequence::new(
            Tensor::from_rows(&[vec![0.0, 0.5], vec![0.25, 1.0]]),
            60.0,
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    #[test]
    fn csv_roundtrip() {
        let s = seq();
        let back = CoeffSequence::from_csv(&s.to_csv(), 60.0).unwrap();
        assert_eq!(back.names, s.names);
        assert_eq!(back.values, s.values);
    }

    #[test]
    fn csv_format_is_stable() {
        let s = seq();
        let csv = s.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("frame,a,b"));
        assert_eq!(lines.next(), Some("0,0.00000000e0,5.00000000e-1"));
    }

    #[test]
    fn rejects_out_of_range() {
        let r = CoeffSequence::new(
            Tensor::from_rows(&[vec![1.5]]),
            60.0,
            vec!["a".into()],
        );
        assert!(r.is_err());
    }

    #[test]
    fn csv_rejects_missing_header() {
        assert!(CoeffSequence::from_csv("0,0.5\n", 60.0).is_err());
    }

    #[test]
    fn mask_roundtrip_and_validation() {
        let m = EditMask::new(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        let back = EditMask::from_csv(&m.to_csv()).unwrap();
        assert_eq!(back, m);
        assert!(EditMask::new(Tensor::from_rows(&[vec![0.5]])).is_err());
    }

    #[test]
    fn mask_accepts_coefficient_style_header() {
        let text = "frame,a,b\n0,1,0\n1,0,1\n";
        let m = EditMask::from_csv(text).unwrap();
        assert_eq!(m.mask.shape(), &[2, 2]);
        assert_eq!(m.mask.at(0, 0), 1.0);
        assert_eq!(m.mask.at(1, 0), 0.0);
    }

    #[test]
    fn motion_sequence_validates() {
        assert!(MotionSequence::new(Tensor::zeros(vec![2, 6]), 60.0).is_ok());
        assert!(MotionSequence::new(Tensor::zeros(vec![2, 7]), 60.0).is_err());
        assert!(MotionSequence::new(Tensor::zeros(vec![0, 6]), 60.0).is_err());
    }
}
