//! Dataset split loading.
//!
//! A split is a directory of `.dpv2` batch files. Files are visited in
//! lexicographic filename order and every batch is flattened into
//! single-sample images with stable ids (`<file-stem>#<index>`), so a split
//! always enumerates identically regardless of filesystem iteration order.

use std::fs;
use std::path::{Path, PathBuf};

use crate::container::{read_image, write_image, ContainerError};
use crate::tensor::{ImageTensor, Shape, TensorError, ValueRange};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{dir}: not a readable directory: {source}")]
    NotADirectory {
        dir: PathBuf,
        source: std::io::Error,
    },
    #[error("{dir}: split contains no .dpv2 files")]
    EmptySplit { dir: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Container {
        path: PathBuf,
        source: ContainerError,
    },
    #[error("{path}: {source}")]
    Tensor { path: PathBuf, source: TensorError },
    #[error("batch size must be positive")]
    BadBatchSize,
}

/// One loaded split: parallel vectors of sample ids and single-sample images.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub ids: Vec<String>,
    pub images: Vec<ImageTensor>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Load every `.dpv2` batch in `dir` (sorted by filename) and flatten the
/// batches into single-sample images.
pub fn load_split(dir: &Path, range: ValueRange) -> Result<SplitData, DatasetError> {
    let entries = fs::read_dir(dir).map_err(|source| DatasetError::NotADirectory {
        dir: dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| DatasetError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("dpv2") && path.is_file() {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(DatasetError::EmptySplit {
            dir: dir.to_path_buf(),
        });
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let mut ids = Vec::new();
    let mut images = Vec::new();
    for path in &files {
        let batch = read_image(path, range).map_err(|source| DatasetError::Container {
            path: path.clone(),
            source,
        })?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for b in 0..batch.shape().n {
            let sample = batch.sample(b).map_err(|source| DatasetError::Tensor {
                path: path.clone(),
                source,
            })?;
            ids.push(format!("{stem}#{b}"));
            images.push(sample);
        }
    }
    Ok(SplitData { ids, images })
}

/// Write a batched image tensor into `dir` as `.dpv2` files of at most
/// `batch_size` samples each, named `<stem>_<k>.dpv2` in batch order.
/// Returns the written paths. Loading the directory back yields the same
/// samples in the same order.
pub fn write_split(
    dir: &Path,
    stem: &str,
    images: &ImageTensor,
    batch_size: usize,
) -> Result<Vec<PathBuf>, DatasetError> {
    if batch_size == 0 {
        return Err(DatasetError::BadBatchSize);
    }
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let shape = images.shape();
    let per = shape.per_sample();
    let mut paths = Vec::new();
    let mut start = 0usize;
    let mut index = 0usize;
    while start < shape.n {
        let count = batch_size.min(shape.n - start);
        let data = images.data()[start * per..(start + count) * per].to_vec();
        let batch = ImageTensor::new(
            Shape::new(count, shape.c, shape.h, shape.w),
            data,
            images.range(),
        )
        .expect("slicing a valid image preserves validity");
        let path = dir.join(format!("{stem}_{index:03}.dpv2"));
        write_image(&path, &batch).map_err(|source| DatasetError::Container {
            path: path.clone(),
            source,
        })?;
        paths.push(path);
        start += count;
        index += 1;
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn image(n: usize, fill: impl Fn(usize) -> f32) -> ImageTensor {
        let shape = Shape::new(n, 2, 3, 3);
        let data: Vec<f32> = (0..shape.numel()).map(fill).collect();
        ImageTensor::new(shape, data, ValueRange::Unit).unwrap()
    }

    #[test]
    fn split_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let images = image(7, |i| (i % 97) as f32 / 100.0);
        let paths = write_split(dir.path(), "synth", &images, 3).unwrap();
        assert_eq!(paths.len(), 3);

        let split = load_split(dir.path(), ValueRange::Unit).unwrap();
        assert_eq!(split.len(), 7);
        assert_eq!(split.ids[0], "synth_000#0");
        assert_eq!(split.ids[3], "synth_001#0");
        assert_eq!(split.ids[6], "synth_002#0");
        let per = images.shape().per_sample();
        for (b, sample) in split.images.iter().enumerate() {
            assert_eq!(sample.shape(), Shape::new(1, 2, 3, 3));
            assert_eq!(
                sample.data(),
                &images.data()[b * per..(b + 1) * per],
                "sample {b}"
            );
        }
    }

    #[test]
    fn files_load_in_filename_order_not_creation_order() {
        let dir = tempfile::tempdir().unwrap();
        let late = image(1, |_| 0.75);
        let early = image(1, |_| 0.25);
        write_image(&dir.path().join("zz.dpv2"), &late).unwrap();
        write_image(&dir.path().join("aa.dpv2"), &early).unwrap();
        let split = load_split(dir.path(), ValueRange::Unit).unwrap();
        assert_eq!(split.ids, vec!["aa#0", "zz#0"]);
        assert_eq!(split.images[0].data()[0], 0.25);
        assert_eq!(split.images[1].data()[0], 0.75);
    }

    #[test]
    fn non_container_files_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        write_split(dir.path(), "x", &image(2, |_| 0.5), 2).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "not a tensor").unwrap();
        let split = load_split(dir.path(), ValueRange::Unit).unwrap();
        assert_eq!(split.len(), 2);
    }

    #[test]
    fn empty_and_missing_directories_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_split(dir.path(), ValueRange::Unit),
            Err(DatasetError::EmptySplit { .. })
        ));
        assert!(matches!(
            load_split(&dir.path().join("missing"), ValueRange::Unit),
            Err(DatasetError::NotADirectory { .. })
        ));
    }

    #[test]
    fn corrupt_files_name_their_path() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("bad.dpv2"), b"not a container").unwrap();
        let err = load_split(dir.path(), ValueRange::Unit).unwrap_err();
        assert!(err.to_string().contains("bad.dpv2"), "{err}");
    }

    #[test]
    fn range_violations_surface_as_container_errors() {
        let dir = tempfile::tempdir().unwrap();
        let shape = Shape::new(1, 1, 2, 2);
        let raw = Tensor::new(shape, vec![-0.5, 0.0, 0.5, 1.0]).unwrap();
        crate::container::write_tensor4(&dir.path().join("signed.dpv2"), &raw).unwrap();
        // Loading as unit-range data must fail: -0.5 is out of range.
        assert!(load_split(dir.path(), ValueRange::Unit).is_err());
        // Loading as signed-range data succeeds.
        assert!(load_split(dir.path(), ValueRange::Signed).is_ok());
    }

    #[test]
    fn zero_batch_size_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_split(dir.path(), "x", &image(2, |_| 0.1), 0),
            Err(DatasetError::BadBatchSize)
        ));
    }
}
