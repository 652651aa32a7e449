//! Dataset files: labelled CSV and IDX image/label pairs.
//!
//! CSV layout is a header `f0,...,fD,label` followed by one sample per line.
//! IDX files use the big-endian `00 00 <type> <ndims>` magic; unsigned-byte
//! pixels are scaled to `[0, 1]`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

use super::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub enum DataFormat {
    CsvLabeled,
    /// Image file at the primary path, label file here.
    IdxPair {
        labels: PathBuf,
    },
}

fn parse_err(path: &Path, location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: path.display().to_string(),
        location: location.into(),
        message: message.into(),
    }
}

/// Loads a dataset. With `num_classes = None` the class count is inferred as
/// `max label + 1`.
pub fn load_dataset(path: &Path, format: &DataFormat, num_classes: Option<usize>) -> Result<Dataset> {
    let (features, labels) = match format {
        DataFormat::CsvLabeled => read_csv(path)?,
        DataFormat::IdxPair { labels } => read_idx_pair(path, labels)?,
    };
    let inferred = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    let m = num_classes.unwrap_or(inferred);
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= m) {
        return Err(Error::InvalidData(format!(
            "{}: sample {i} has label {y} >= {m} classes",
            path.display()
        )));
    }
    Dataset::new(features, labels, m)
}

fn read_csv(path: &Path) -> Result<(Tensor2D, Vec<usize>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, "line 1", "empty file, expected a header row"))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.len() < 2 || columns.last() != Some(&"label") {
        return Err(parse_err(path, "line 1", "header must be `f0,...,fD,label`"));
    }
    let dim = columns.len() - 1;
    for (j, c) in columns[..dim].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(parse_err(
                path,
                "line 1",
                format!("column {j} should be `f{j}`, found `{c}`"),
            ));
        }
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (ln, line) in lines {
        let loc = format!("line {}", ln + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dim + 1 {
            return Err(parse_err(
                path,
                loc,
                format!("expected {} fields, found {}", dim + 1, fields.len()),
            ));
        }
        for (j, f) in fields[..dim].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| {
                parse_err(
                    path,
                    format!("{loc}, column {}", j + 1),
                    format!("`{f}` is not a number"),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    path,
                    format!("{loc}, column {}", j + 1),
                    "non-finite feature",
                ));
            }
            values.push(v);
        }
        let y: usize = fields[dim].parse().map_err(|_| {
            parse_err(
                path,
                format!("{loc}, column {}", dim + 1),
                format!("`{}` is not a class label", fields[dim]),
            )
        })?;
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(parse_err(path, "line 2", "no data rows"));
    }
    Ok((Tensor2D::from_vec(labels.len(), dim, values)?, labels))
}

/// Writes `f0,...,fD,label` CSV. Floats use the shortest round-trip
/// representation, so reading the file back is bit-exact.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let dim = dataset.feature_dim();
    for j in 0..dim {
        out.push_str(&format!("f{j},"));
    }
    out.push_str("label\n");
    for (row, y) in dataset.features().iter_rows().zip(dataset.labels()) {
        for v in row {
            out.push_str(&format!("{v:?},"));
        }
        out.push_str(&format!("{y}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

const IDX_UBYTE: u8 = 0x08;

fn read_idx(path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 {
        return Err(parse_err(path, "offset 0", "file too short for an IDX header"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(parse_err(path, "offset 0", "bad IDX magic"));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(parse_err(
            path,
            "offset 2",
            format!("unsupported IDX element type 0x{:02x}", bytes[2]),
        ));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if ndims == 0 || bytes.len() < header {
        return Err(parse_err(path, "offset 3", "truncated IDX dimension table"));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let expected: usize = dims.iter().product();
    if bytes.len() - header != expected {
        return Err(parse_err(
            path,
            format!("offset {header}"),
            format!("expected {expected} data bytes, found {}", bytes.len() - header),
        ));
    }
    Ok((dims, bytes[header..].to_vec()))
}

fn read_idx_pair(images: &Path, labels: &Path) -> Result<(Tensor2D, Vec<usize>)> {
    let (img_dims, pixels) = read_idx(images)?;
    let (lab_dims, label_bytes) = read_idx(labels)?;
    if lab_dims.len() != 1 {
        return Err(parse_err(labels, "offset 3", "label file must be one-dimensional"));
    }
    let n = img_dims[0];
    if n != lab_dims[0] {
        return Err(Error::InvalidData(format!("{} images but {} labels", n, lab_dims[0])));
    }
    let dim: usize = img_dims[1..].iter().product::<usize>().max(1);
    let values = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels = label_bytes.iter().map(|&b| b as usize).collect();
    Ok((Tensor2D::from_vec(n, dim, values)?, labels))
}

fn idx_bytes(dims: &[usize], data: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = vec![0, 0, IDX_UBYTE, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(data);
    out
}

/// Writes an IDX image/label pair. Features must be multiples of 1/255 in
/// `[0, 1]` for the round trip to be exact.
pub fn write_idx_pair(dataset: &Dataset, images: &Path, labels: &Path) -> Result<()> {
    if dataset.num_classes() > 256 {
        return Err(Error::invalid("IDX label files hold at most 256 classes"));
    }
    let pixels = dataset
        .features()
        .as_slice()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
    let img = idx_bytes(&[dataset.len(), dataset.feature_dim()], pixels);
    let lab = idx_bytes(&[dataset.len()], dataset.labels().iter().map(|&y| y as u8));
    for (path, bytes) in [(images, img), (labels, lab)] {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;

    #[test]
    fn three_row_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "f0,f1,label\n0.5,1.0,0\n-2,3e-1,1\n7,8,0\n").unwrap();
        let ds = load_dataset(&p, &DataFormat::CsvLabeled, None).unwrap();
        assert_eq!(ds.features().shape(), (3, 2));
        assert_eq!(ds.labels(), &[0, 1, 0]);
        assert_eq!(ds.features()[(1, 1)], 0.3);
    }

    #[test]
    fn empty_csv_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "").unwrap();
        let err = load_dataset(&p, &DataFormat::CsvLabeled, None).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn malformed_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "f0,label\n1.0,0\nabc,1\n").unwrap();
        let err = load_dataset(&p, &DataFormat::CsvLabeled, None).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn label_beyond_class_count_is_invalid_data() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "f0,label\n1.0,0\n2.0,5\n").unwrap();
        let err = load_dataset(&p, &DataFormat::CsvLabeled, Some(3)).unwrap_err();
        assert!(matches!(err, Error::InvalidData(_)), "{err}");
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let ds = synth_dataset(3, 4, 5, 2.5, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_csv(&ds, &p).unwrap();
        let back = load_dataset(&p, &DataFormat::CsvLabeled, Some(3)).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn idx_round_trip() {
        let pix: Vec<f64> = (0..12).map(|i| (i * 20) as f64 / 255.0).collect();
        let ds = Dataset::new(Tensor2D::from_vec(3, 4, pix).unwrap(), vec![1, 0, 2], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
        write_idx_pair(&ds, &i, &l).unwrap();
        let back = load_dataset(&i, &DataFormat::IdxPair { labels: l.clone() }, Some(3)).unwrap();
        assert_eq!(back, ds);

        fs::write(&l, [0u8, 0, 8, 1, 0, 0, 0, 3, 1]).unwrap();
        let err = load_dataset(&i, &DataFormat::IdxPair { labels: l }, None).unwrap_err();
        assert!(err.to_string().contains("offset"), "{err}");
    }
}
