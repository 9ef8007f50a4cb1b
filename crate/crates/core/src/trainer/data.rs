use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::labelsem::LabelMatrix;
use crate::matrix::Matrix;
use crate::model::ImageTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageTensor,
    pub label: usize,
}

/// A labeled train pool and a test set over shared class names.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// `(height, width, channels)` shared by every image.
    pub fn image_shape(&self) -> Result<(usize, usize, usize)> {
        let first = self
            .train
            .first()
            .or(self.test.first())
            .ok_or_else(|| Error::Data("dataset has no images".into()))?;
        let shape = (first.image.height, first.image.width, first.image.channels);
        for s in self.train.iter().chain(&self.test) {
            if (s.image.height, s.image.width, s.image.channels) != shape {
                return Err(Error::Data(format!("image {} differs in shape from the first image", s.image.id)));
            }
            if s.label >= self.num_classes() {
                return Err(Error::Data(format!("label {} out of range", s.label)));
            }
        }
        Ok(shape)
    }
}

/// Indices into `Dataset::train`. Unlabeled samples keep their labels in the
/// dataset for statistics only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// Stratified split with `n_labeled / K` labeled samples per class.
pub fn make_splits(dataset: &Dataset, n_labeled: usize, seed: u64) -> Result<Split> {
    let k = dataset.num_classes();
    if k == 0 || !n_labeled.is_multiple_of(k) {
        return Err(Error::InvalidArgument(format!(
            "n_labeled {n_labeled} is not divisible by the {k} classes"
        )));
    }
    if n_labeled > dataset.train.len() {
        return Err(Error::InvalidArgument(format!(
            "n_labeled {n_labeled} exceeds the {} training samples",
            dataset.train.len()
        )));
    }
    let per_class = n_labeled / k;
    let mut by_class = vec![Vec::new(); k];
    for (i, s) in dataset.train.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = Vec::with_capacity(n_labeled);
    for (c, pool) in by_class.iter_mut().enumerate() {
        if pool.len() < per_class {
            return Err(Error::Data(format!(
                "class `{}` has {} samples, {per_class} labeled ones requested",
                dataset.class_names[c],
                pool.len()
            )));
        }
        pool.shuffle(&mut rng);
        labeled.extend_from_slice(&pool[..per_class]);
    }
    labeled.sort_unstable();
    let mut is_labeled = vec![false; dataset.train.len()];
    for &i in &labeled {
        is_labeled[i] = true;
    }
    let unlabeled = (0..dataset.train.len()).filter(|&i| !is_labeled[i]).collect();
    Ok(Split { labeled, unlabeled })
}

/// Parses `synthetic`, `cifar10:DIR`, `cifar100:DIR` or `dir:DIR`.
pub fn load_dataset(spec: &str, synthetic: &SyntheticSpec) -> Result<Dataset> {
    match spec.split_once(':') {
        None if spec == "synthetic" => Ok(synthetic_dataset(synthetic)),
        Some(("cifar10", dir)) => load_cifar(Path::new(dir), CifarKind::Cifar10),
        Some(("cifar100", dir)) => load_cifar(Path::new(dir), CifarKind::Cifar100),
        Some(("dir", dir)) => load_image_dir(Path::new(dir)),
        _ => Err(Error::Config(format!(
            "dataset `{spec}` is not synthetic, cifar10:DIR, cifar100:DIR or dir:DIR"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarKind {
    Cifar10,
    Cifar100,
}

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck",
];

pub const CIFAR100_CLASSES: [&str; 100] = [
    "apple", "aquarium_fish", "baby", "bear", "beaver", "bed", "bee", "beetle", "bicycle", "bottle",
    "bowl", "boy", "bridge", "bus", "butterfly", "camel", "can", "castle", "caterpillar", "cattle",
    "chair", "chimpanzee", "clock", "cloud", "cockroach", "couch", "crab", "crocodile", "cup",
    "dinosaur", "dolphin", "elephant", "flatfish", "forest", "fox", "girl", "hamster", "house",
    "kangaroo", "keyboard", "lamp", "lawn_mower", "leopard", "lion", "lizard", "lobster", "man",
    "maple_tree", "motorcycle", "mountain", "mouse", "mushroom", "oak_tree", "orange", "orchid",
    "otter", "palm_tree", "pear", "pickup_truck", "pine_tree", "plain", "plate", "poppy",
    "porcupine", "possum", "rabbit", "raccoon", "ray", "road", "rocket", "rose", "sea", "seal",
    "shark", "shrew", "skunk", "skyscraper", "snail", "snake", "spider", "squirrel", "streetcar",
    "sunflower", "sweet_pepper", "table", "tank", "telephone", "television", "tiger", "tractor",
    "train", "trout", "tulip", "turtle", "wardrobe", "whale", "willow_tree", "wolf", "woman", "worm",
];

const CIFAR_SIDE: usize = 32;
const CIFAR_PIXELS: usize = CIFAR_SIDE * CIFAR_SIDE * 3;

/// Decodes records of `label_bytes` leading label bytes (the last one is used)
/// followed by 3072 planar RGB bytes.
pub fn parse_cifar_records(bytes: &[u8], label_bytes: usize, num_classes: usize, first_id: u64, path: &Path) -> Result<Vec<Sample>> {
    let record = label_bytes + CIFAR_PIXELS;
    if !bytes.len().is_multiple_of(record) {
        return Err(Error::Data(format!(
            "{}: {} bytes is not a multiple of the {record}-byte record",
            path.display(),
            bytes.len()
        )));
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    bytes
        .chunks_exact(record)
        .enumerate()
        .map(|(i, rec)| {
            let label = rec[label_bytes - 1] as usize;
            if label >= num_classes {
                return Err(Error::Data(format!("{}: record {i} has label {label}", path.display())));
            }
            let px = &rec[label_bytes..];
            let mut pixels = vec![0.0; CIFAR_PIXELS];
            for p in 0..plane {
                for c in 0..3 {
                    pixels[p * 3 + c] = px[c * plane + p] as f64 / 255.0;
                }
            }
            let image = ImageTensor::new(first_id + i as u64, CIFAR_SIDE, CIFAR_SIDE, 3, pixels)?;
            Ok(Sample { image, label })
        })
        .collect()
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads the binary distribution (`data_batch_{1..5}.bin` + `test_batch.bin`,
/// or `train.bin` + `test.bin`). Class names come from the bundled meta file
/// when present.
pub fn load_cifar(dir: &Path, kind: CifarKind) -> Result<Dataset> {
    let (train_files, test_file, label_bytes, defaults, meta): (Vec<String>, &str, usize, &[&str], &str) = match kind {
        CifarKind::Cifar10 => (
            (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
            "test_batch.bin",
            1,
            &CIFAR10_CLASSES,
            "batches.meta.txt",
        ),
        CifarKind::Cifar100 => (vec!["train.bin".into()], "test.bin", 2, &CIFAR100_CLASSES, "fine_label_names.txt"),
    };
    let class_names = match fs::read_to_string(dir.join(meta)) {
        Ok(text) => text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(),
        Err(_) => defaults.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
    };
    let k = class_names.len();
    let mut train = Vec::new();
    for f in &train_files {
        let path = dir.join(f);
        let bytes = read_bytes(&path)?;
        train.extend(parse_cifar_records(&bytes, label_bytes, k, train.len() as u64, &path)?);
    }
    let path = dir.join(test_file);
    let test = parse_cifar_records(&read_bytes(&path)?, label_bytes, k, train.len() as u64, &path)?;
    Ok(Dataset { class_names, train, test })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

/// Reads `ROOT/{train,test}/<class>/*.png`; classes are the sorted train
/// subdirectory names.
pub fn load_image_dir(root: &Path) -> Result<Dataset> {
    let train_dir = root.join("train");
    let class_names: Vec<String> = sorted_entries(&train_dir)?
        .into_iter()
        .filter(|p| p.is_dir())
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    if class_names.is_empty() {
        return Err(Error::Data(format!("{}: no class directories", train_dir.display())));
    }
    let mut next_id = 0u64;
    let mut read_split = |split: &str| -> Result<Vec<Sample>> {
        let mut samples = Vec::new();
        for (label, class) in class_names.iter().enumerate() {
            let dir = root.join(split).join(class);
            if !dir.is_dir() {
                continue;
            }
            for path in sorted_entries(&dir)? {
                if path.extension().and_then(|e| e.to_str()) != Some("png") {
                    continue;
                }
                let img = image::open(&path)
                    .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
                    .to_rgb8();
                let (w, h) = img.dimensions();
                let pixels = img.as_raw().iter().map(|&b| b as f64 / 255.0).collect();
                samples.push(Sample {
                    image: ImageTensor::new(next_id, h as usize, w as usize, 3, pixels)?,
                    label,
                });
                next_id += 1;
            }
        }
        Ok(samples)
    };
    let train = read_split("train")?;
    let test = read_split("test")?;
    Ok(Dataset { class_names, train, test })
}

/// Sizes of the built-in synthetic task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

/// Four pairs of look-alike classes; each pair shares a base colour and its
/// members differ only in stripe orientation.
pub const SYNTHETIC_CLASSES: [&str; 8] = [
    "bicycle", "motorcycle", "boy", "girl", "oak_tree", "pine_tree", "crab", "lobster",
];

const PAIR_COLORS: [[f64; 3]; 4] = [
    [0.70, 0.35, 0.30],
    [0.30, 0.65, 0.35],
    [0.30, 0.40, 0.70],
    [0.65, 0.60, 0.30],
];

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn synthetic_image(id: u64, class: usize, side: usize, rng: &mut impl Rng) -> ImageTensor {
    let base = PAIR_COLORS[class / 2];
    let vertical = class % 2 == 1;
    let jitter: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.12..0.12)).collect();
    let brightness = rng.gen_range(-0.1..0.1);
    let amplitude = rng.gen_range(0.08..0.16);
    let phase = rng.gen_range(0..4usize);
    let mut pixels = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let coord = if vertical { x } else { y };
            let stripe = if (coord + phase) % 4 < 2 { amplitude } else { -amplitude };
            for c in 0..3 {
                let v = base[c] + jitter[c] + brightness + stripe + 0.06 * gaussian(rng);
                pixels.push(v.clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(id, side, side, 3, pixels).expect("values are clamped to [0, 1]")
}

/// Deterministic synthetic dataset; class-interleaved sample order.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = SYNTHETIC_CLASSES.len();
    let mut id = 0u64;
    let mut make = |n: usize, rng: &mut ChaCha8Rng| {
        let mut out = Vec::with_capacity(n * k);
        for _ in 0..n {
            for class in 0..k {
                out.push(Sample {
                    image: synthetic_image(id, class, spec.image_size, rng),
                    label: class,
                });
                id += 1;
            }
        }
        out
    };
    let train = make(spec.train_per_class, &mut rng);
    let test = make(spec.test_per_class, &mut rng);
    Dataset {
        class_names: SYNTHETIC_CLASSES.iter().map(|s| s.to_string()).collect(),
        train,
        test,
    }
}

/// Built-in label vectors for the synthetic classes: pair members share a
/// random centre and sit well inside cosine distance 0.2 of each other.
pub fn synthetic_label_matrix(dim: usize) -> Result<LabelMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1ABE1);
    let unit = |rng: &mut ChaCha8Rng| {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let mut rows = Vec::with_capacity(SYNTHETIC_CLASSES.len());
    for _ in 0..SYNTHETIC_CLASSES.len() / 2 {
        let centre = unit(&mut rng);
        for _ in 0..2 {
            let offset = unit(&mut rng);
            rows.push(centre.iter().zip(&offset).map(|(c, o)| c + 0.3 * o).collect());
        }
    }
    LabelMatrix::new(
        SYNTHETIC_CLASSES.iter().map(|s| s.to_string()).collect(),
        Matrix::from_rows(&rows)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::group_labels;

    fn tiny() -> Dataset {
        synthetic_dataset(&SyntheticSpec {
            image_size: 8,
            train_per_class: 10,
            test_per_class: 2,
            seed: 1,
        })
    }

    #[test]
    fn splits_are_stratified_and_seeded() {
        let d = tiny();
        let s = make_splits(&d, 16, 3).unwrap();
        assert_eq!(s.labeled.len(), 16);
        assert_eq!(s.unlabeled.len(), 64);
        for c in 0..8 {
            assert_eq!(s.labeled.iter().filter(|&&i| d.train[i].label == c).count(), 2);
        }
        assert_eq!(s, make_splits(&d, 16, 3).unwrap());
        assert_ne!(s, make_splits(&d, 16, 4).unwrap());
        assert!(make_splits(&d, 80, 0).unwrap().unlabeled.is_empty());
        assert!(make_splits(&d, 12, 0).is_err());
        assert!(make_splits(&d, 88, 0).is_err());
    }

    #[test]
    fn class_too_small_is_an_error() {
        let mut d = tiny();
        d.train.retain(|s| s.label != 3 || s.image.id < 12);
        assert!(matches!(make_splits(&d, 24, 0), Err(Error::Data(_))));
    }

    #[test]
    fn synthetic_is_deterministic_and_paired() {
        let a = tiny();
        let b = tiny();
        assert_eq!(a.train, b.train);
        assert_eq!(a.image_shape().unwrap(), (8, 8, 3));
        let m = synthetic_label_matrix(32).unwrap();
        let g = group_labels(&m, 0.2).unwrap();
        assert_eq!(g.num_groups(), 4);
        for p in 0..4 {
            assert_eq!(g.group_of(2 * p), g.group_of(2 * p + 1));
        }
    }

    #[test]
    fn cifar_records_are_planar() {
        let mut rec = vec![0u8; 2 * (1 + CIFAR_PIXELS)];
        rec[0] = 7;
        rec[1] = 255; // R of pixel 0
        rec[1 + 1024 + 1] = 255; // G of pixel 1
        rec[1 + CIFAR_PIXELS] = 2;
        let s = parse_cifar_records(&rec, 1, 10, 5, Path::new("x")).unwrap();
        assert_eq!((s[0].label, s[1].label, s[1].image.id), (7, 2, 6));
        assert_eq!(s[0].image.at(0, 0, 0), 1.0);
        assert_eq!(s[0].image.at(0, 1, 1), 1.0);
        assert_eq!(s[0].image.at(0, 1, 0), 0.0);
        assert!(parse_cifar_records(&rec[1..], 1, 10, 0, Path::new("x")).is_err());
        rec[0] = 10;
        assert!(parse_cifar_records(&rec, 1, 10, 0, Path::new("x")).is_err());
    }
}
