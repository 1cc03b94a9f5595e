//! IDX (MNIST-style) reader: big-endian u32 magic and dimension sizes, then
//! a u8 payload.

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

/// Parses an IDX file, returning its dimension sizes and payload.
fn parse(bytes: &[u8], magic: u32, ndims: usize, path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(Error::format(path, format!("bad magic 0x{found:08x}, expected 0x{magic:08x}")));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| be_u32(bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<_>>()?;
    let start = 4 + 4 * ndims;
    let need: usize = dims.iter().product();
    let payload = &bytes[start..];
    if payload.len() < need {
        return Err(Error::format(
            path,
            format!("truncated payload: {} of {need} bytes", payload.len()),
        ));
    }
    Ok((dims, payload[..need].to_vec()))
}

/// Loads an image/label file pair; pixels are scaled to `[0, 1]` and images
/// get shape `[N, 1, rows, cols]`. The class count is `max(label) + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img_bytes = std::fs::read(images_path)?;
    let lbl_bytes = std::fs::read(labels_path)?;
    let (idims, pixels) = parse(&img_bytes, IMAGES_MAGIC, 3, images_path)?;
    let (ldims, labels) = parse(&lbl_bytes, LABELS_MAGIC, 1, labels_path)?;
    if idims[0] != ldims[0] {
        return Err(Error::format(
            labels_path,
            format!("{} labels but {} images in {}", ldims[0], idims[0], images_path.display()),
        ));
    }
    let (n, rows, cols) = (idims[0], idims[1], idims[2]);
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::format(images_path, "empty image file"));
    }
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let features = Tensor::new(vec![n, 1, rows, cols], data)?;
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(features, labels, num_classes)
}

/// Serializes images `[N, rows, cols]` (u8) to IDX bytes.
pub fn encode_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [n, rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn three_image_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..3 * 28 * 28).map(|i| (i % 256) as u8).collect();
        let imgs = write(dir.path(), "img", &encode_images(3, 28, 28, &pixels));
        let lbls = write(dir.path(), "lbl", &encode_labels(&[7, 0, 3]));
        let ds = load_idx(&imgs, &lbls).unwrap();
        assert_eq!(ds.features().shape(), &[3, 1, 28, 28]);
        assert_eq!(ds.labels(), &[7, 0, 3]);
        assert_eq!(ds.num_classes(), 8);
        assert_eq!(ds.features().data()[255], 1.0);
        assert!(ds.features().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn bad_magic_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = encode_images(1, 2, 2, &[0; 4]);
        bad[3] = 0x01;
        let imgs = write(dir.path(), "img", &bad);
        let lbls = write(dir.path(), "lbl", &encode_labels(&[0]));
        match load_idx(&imgs, &lbls) {
            Err(Error::Format { path, .. }) => assert_eq!(path, imgs),
            other => panic!("expected format error, got {other:?}"),
        }
        let imgs = write(dir.path(), "img2", &encode_images(1, 2, 2, &[0; 4]));
        let mut bad_lbl = encode_labels(&[0]);
        bad_lbl[3] = 0x03;
        let lbls = write(dir.path(), "lbl2", &bad_lbl);
        match load_idx(&imgs, &lbls) {
            Err(Error::Format { path, .. }) => assert_eq!(path, lbls),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = write(dir.path(), "img", &encode_images(2, 2, 2, &[0; 7]));
        let lbls = write(dir.path(), "lbl", &encode_labels(&[0, 1]));
        assert!(matches!(load_idx(&imgs, &lbls), Err(Error::Format { .. })));
        let imgs = write(dir.path(), "img2", &encode_images(2, 2, 2, &[0; 8]));
        let lbls = write(dir.path(), "lbl2", &encode_labels(&[0, 1, 1]));
        assert!(matches!(load_idx(&imgs, &lbls), Err(Error::Format { .. })));
    }
}
