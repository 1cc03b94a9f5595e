//! Headerless numeric CSV: comma-separated, one sample per line, last
//! column is the integer label.

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub fn load_csv(path: &Path, num_classes: usize) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, num_classes, path)
}

pub fn parse_csv(text: &str, num_classes: usize, path: &Path) -> Result<Dataset> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() < 2 {
            return Err(Error::format(path, format!("line {lineno}: need at least one feature and a label")));
        }
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::format(
                    path,
                    format!("line {lineno}: {} columns, expected {w}", cells.len()),
                ))
            }
            _ => {}
        }
        let (label_cell, feature_cells) = cells.split_last().unwrap();
        for cell in feature_cells {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::format(path, format!("line {lineno}: non-numeric cell {cell:?}")))?;
            features.push(v);
        }
        let label: usize = label_cell
            .parse()
            .map_err(|_| Error::format(path, format!("line {lineno}: bad label {label_cell:?}")))?;
        if label >= num_classes {
            return Err(Error::format(
                path,
                format!("line {lineno}: label {label} >= num_classes {num_classes}"),
            ));
        }
        labels.push(label);
    }
    let Some(width) = width else {
        return Err(Error::format(path, "empty file"));
    };
    let tensor = Tensor::new(vec![labels.len(), width - 1], features)?;
    Dataset::new(tensor, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str, c: usize) -> Result<Dataset> {
        parse_csv(s, c, Path::new("t.csv"))
    }

    #[test]
    fn two_rows() {
        let ds = parse("1,2,0\n3,4,1", 2).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.sample_shape(), &[2]);
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.features().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(parse("", 2), Err(Error::Format { .. })));
        assert!(matches!(parse("\n\n", 2), Err(Error::Format { .. })));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let msg = parse("1,2,0\n3,4,5", 2).unwrap_err().to_string();
        assert!(msg.contains("line 2"), "{msg}");
        let msg = parse("1,2,0\n3,0", 2).unwrap_err().to_string();
        assert!(msg.contains("line 2"), "{msg}");
        let msg = parse("1,x,0", 2).unwrap_err().to_string();
        assert!(msg.contains("line 1"), "{msg}");
    }
}
