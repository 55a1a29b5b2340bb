//! Readers for the published binary layouts of STL-10, CIFAR-10 and CIFAR-100.

use std::path::{Path, PathBuf};

use super::{ImageSample, ImageShape, LabeledSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Test,
}

const STL_SIDE: usize = 96;
const CIFAR_SIDE: usize = 32;

fn ingestion(path: &Path, message: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// First existing candidate among `root/<sub>/<file>` and `root/<file>`.
fn locate(root: &Path, sub: &str, file: &str) -> Result<PathBuf> {
    let nested = root.join(sub).join(file);
    let flat = root.join(file);
    if nested.is_file() {
        Ok(nested)
    } else if flat.is_file() {
        Ok(flat)
    } else {
        Err(ingestion(&nested, "file not found"))
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| ingestion(path, e.to_string()))
}

/// Training partition of a benchmark (`"stl10"`, `"cifar10"` or `"cifar100"`),
/// pixels scaled to `[0, 1]`.
pub fn load_benchmark(name: &str, root: &Path) -> Result<LabeledSet> {
    load_benchmark_partition(name, root, Partition::Train)
}

pub fn load_benchmark_partition(name: &str, root: &Path, part: Partition) -> Result<LabeledSet> {
    match name.to_ascii_lowercase().as_str() {
        "stl10" | "stl-10" => load_stl10(root, part),
        "cifar10" | "cifar-10" => load_cifar10(root, part),
        "cifar100" | "cifar-100" => load_cifar100(root, part),
        other => Err(ingestion(root, format!("unsupported benchmark `{other}`"))),
    }
}

fn load_stl10(root: &Path, part: Partition) -> Result<LabeledSet> {
    let prefix = match part {
        Partition::Train => "train",
        Partition::Test => "test",
    };
    let x_path = locate(root, "stl10_binary", &format!("{prefix}_X.bin"))?;
    let y_path = locate(root, "stl10_binary", &format!("{prefix}_y.bin"))?;
    let xs = read(&x_path)?;
    let ys = read(&y_path)?;
    let per = STL_SIDE * STL_SIDE * 3;
    if xs.is_empty() || xs.len() % per != 0 {
        return Err(ingestion(
            &x_path,
            format!("size {} is not a positive multiple of {per}", xs.len()),
        ));
    }
    let n = xs.len() / per;
    if ys.len() != n {
        return Err(ingestion(&y_path, format!("{} labels for {n} images", ys.len())));
    }
    let shape = ImageShape::new(STL_SIDE, STL_SIDE, 3);
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut hwc = vec![0u8; per];
    for (i, (img, &y)) in xs.chunks_exact(per).zip(&ys).enumerate() {
        if !(1..=10).contains(&y) {
            return Err(ingestion(&y_path, format!("label {y} at record {i} outside 1..=10")));
        }
        // channel planes, each stored column-major
        for c in 0..3 {
            for col in 0..STL_SIDE {
                for row in 0..STL_SIDE {
                    hwc[(row * STL_SIDE + col) * 3 + c] =
                        img[c * STL_SIDE * STL_SIDE + col * STL_SIDE + row];
                }
            }
        }
        samples.push(ImageSample::from_u8(i as u64, shape, &hwc)?);
        labels.push(usize::from(y - 1));
    }
    LabeledSet::new(samples, labels, 10)
}

fn load_cifar10(root: &Path, part: Partition) -> Result<LabeledSet> {
    let files: Vec<String> = match part {
        Partition::Train => (1..=5).map(|k| format!("data_batch_{k}.bin")).collect(),
        Partition::Test => vec!["test_batch.bin".into()],
    };
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for file in files {
        let path = locate(root, "cifar-10-batches-bin", &file)?;
        parse_cifar(&read(&path)?, &path, 1, 0, 10, &mut samples, &mut labels)?;
    }
    LabeledSet::new(samples, labels, 10)
}

fn load_cifar100(root: &Path, part: Partition) -> Result<LabeledSet> {
    let file = match part {
        Partition::Train => "train.bin",
        Partition::Test => "test.bin",
    };
    let path = locate(root, "cifar-100-binary", file)?;
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    // records carry a coarse and a fine label byte; the fine one is used
    parse_cifar(&read(&path)?, &path, 2, 1, 100, &mut samples, &mut labels)?;
    LabeledSet::new(samples, labels, 100)
}

/// Append the records of one CIFAR binary file: `header` label bytes (the
/// label at `label_at`) followed by row-major R, G, B planes.
fn parse_cifar(
    bytes: &[u8],
    path: &Path,
    header: usize,
    label_at: usize,
    num_classes: u8,
    samples: &mut Vec<ImageSample>,
    labels: &mut Vec<usize>,
) -> Result<()> {
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let record = header + 3 * plane;
    if bytes.is_empty() || bytes.len() % record != 0 {
        return Err(ingestion(
            path,
            format!("size {} is not a positive multiple of {record}", bytes.len()),
        ));
    }
    let shape = ImageShape::new(CIFAR_SIDE, CIFAR_SIDE, 3);
    let mut hwc = vec![0u8; 3 * plane];
    for (i, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[label_at];
        if label >= num_classes {
            return Err(ingestion(path, format!("label {label} at record {i} >= {num_classes}")));
        }
        for c in 0..3 {
            for p in 0..plane {
                hwc[p * 3 + c] = rec[header + c * plane + p];
            }
        }
        samples.push(ImageSample::from_u8(samples.len() as u64, shape, &hwc)?);
        labels.push(usize::from(label));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_name_is_an_ingestion_error() {
        let err = load_benchmark("unknown", Path::new("/nonexistent")).unwrap_err();
        assert!(matches!(err, Error::Ingestion { .. }));
    }

    #[test]
    fn missing_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_benchmark("cifar100", dir.path()).unwrap_err();
        assert!(err.to_string().contains("train.bin"), "{err}");
    }

    #[test]
    fn cifar100_layout() {
        let dir = tempfile::tempdir().unwrap();
        let plane = 32 * 32;
        let mut bytes = Vec::new();
        for (coarse, fine) in [(3u8, 42u8), (0, 7)] {
            bytes.push(coarse);
            bytes.push(fine);
            for c in 0..3u8 {
                for p in 0..plane {
                    bytes.push(if p == 33 { 200 + c } else { c * 10 });
                }
            }
        }
        std::fs::write(dir.path().join("train.bin"), &bytes).unwrap();
        let d = load_benchmark("cifar100", dir.path()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels(), &[42, 7]);
        assert_eq!(d.num_classes(), 100);
        let s = &d.samples()[0];
        // pixel 33 is row 1, col 1
        assert_eq!(s.to_u8()[(32 + 1) * 3 + 2], 202);
        assert_eq!(s.to_u8()[0], 0);
        assert_eq!(s.to_u8()[1], 10);

        std::fs::write(dir.path().join("train.bin"), &bytes[..100]).unwrap();
        assert!(matches!(
            load_benchmark("cifar100", dir.path()),
            Err(Error::Ingestion { .. })
        ));
    }

    #[test]
    fn cifar10_reads_all_training_batches() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("cifar-10-batches-bin");
        std::fs::create_dir_all(&sub).unwrap();
        for k in 1..=5u8 {
            let mut rec = vec![k];
            rec.extend(std::iter::repeat_n(k * 40, 3 * 32 * 32));
            std::fs::write(sub.join(format!("data_batch_{k}.bin")), &rec).unwrap();
        }
        let d = load_benchmark("cifar10", dir.path()).unwrap();
        assert_eq!(d.labels(), &[1, 2, 3, 4, 5]);
        assert_eq!(d.samples()[4].to_u8()[100], 200);
        let ids: Vec<u64> = d.ids();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
        assert!(load_benchmark_partition("cifar10", dir.path(), Partition::Test).is_err());
    }

    #[test]
    fn stl10_layout_is_column_major() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("stl10_binary");
        std::fs::create_dir_all(&sub).unwrap();
        let side = 96;
        let mut img = vec![0u8; 3 * side * side];
        // red plane, column 2, row 5
        img[2 * side + 5] = 255;
        std::fs::write(sub.join("train_X.bin"), &img).unwrap();
        std::fs::write(sub.join("train_y.bin"), [10u8]).unwrap();
        let d = load_benchmark("stl10", dir.path()).unwrap();
        assert_eq!(d.labels(), &[9]);
        assert_eq!(d.samples()[0].at(5, 2, 0), 1.0);
        assert_eq!(d.samples()[0].at(2, 5, 0), 0.0);

        std::fs::write(sub.join("train_y.bin"), [11u8]).unwrap();
        assert!(load_benchmark("stl10", dir.path()).is_err());
    }
}
