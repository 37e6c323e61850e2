//! On-disk dataset layout:
//!
//! ```text
//! DIR/meta.json
//! DIR/{train,test,background}.jsonl
//! DIR/{train,test,background}/NNNNNN.ppm
//! DIR/{train,test}/NNNNNN_mask.pgm
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{gen_background, gen_labeled, pnm, shape_for_class, ImageSample, Normalization, CHANNELS};
use crate::error::{Error, Result};
use crate::evalkit::BBox;
use crate::saliency::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Background,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::Background];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Background => "background",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenDataParams {
    pub seed: u64,
    pub classes: usize,
    pub train: usize,
    pub test: usize,
    pub background: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for GenDataParams {
    fn default() -> Self {
        GenDataParams {
            seed: 0,
            classes: 8,
            train: 2000,
            test: 400,
            background: 60,
            height: 64,
            width: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub seed: u64,
    pub params: GenDataParams,
    pub class_names: Vec<String>,
    /// Background images per labeled training image.
    pub background_ratio: f64,
    /// Channel statistics of the training split.
    pub normalization: Normalization,
}

impl DatasetMeta {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join("meta.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path,
            reason: e.to_string(),
        })
    }
}

/// Class names in id order.
pub fn class_names(n_classes: usize) -> Vec<String> {
    (0..n_classes)
        .map(|c| match shape_for_class(c) {
            (kind, false) => kind.name().to_string(),
            (kind, true) => format!("striped_{}", kind.name()),
        })
        .collect()
}

/// One manifest line. Paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub file: String,
    pub label: Option<usize>,
    pub background: bool,
    #[serde(rename = "box")]
    pub bbox: Option<BBox>,
    #[serde(default)]
    pub mask: Option<String>,
}

/// A parsed split manifest. Images are decoded on demand.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: String,
    pub records: Vec<ManifestRecord>,
    pub seed: u64,
    pub class_names: Vec<String>,
}

impl DatasetManifest {
    /// Parses `path` (a `*.jsonl` manifest) and the `meta.json` beside it.
    pub fn load(path: &Path) -> Result<Self> {
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let meta = DatasetMeta::read(&root)?;
        let split = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", n + 1),
            })?;
            if let Some(l) = rec.label {
                if l >= meta.n_classes() {
                    return Err(Error::Dataset(format!(
                        "{}: line {}: label {l} out of range for {} classes",
                        path.display(),
                        n + 1,
                        meta.n_classes()
                    )));
                }
            }
            records.push(rec);
        }
        Ok(DatasetManifest {
            root,
            split,
            records,
            seed: meta.seed,
            class_names: meta.class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Decodes and validates record `i`.
    pub fn sample(&self, i: usize) -> Result<ImageSample> {
        let rec = &self.records[i];
        let path = self.root.join(&rec.file);
        let img = pnm::read(&path)?;
        if img.channels != CHANNELS {
            return Err(Error::Format {
                path,
                reason: "expected a color (P6) image".into(),
            });
        }
        let (w, h) = (img.width, img.height);
        let plane = w * h;
        let mut pixels = vec![0u8; CHANNELS * plane];
        for (p, px) in img.data.chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                pixels[c * plane + p] = px[c];
            }
        }
        let gt_mask = match &rec.mask {
            Some(m) => {
                let mpath = self.root.join(m);
                let r = pnm::read(&mpath)?;
                if r.channels != 1 || r.width != w || r.height != h {
                    return Err(Error::Format {
                        path: mpath,
                        reason: "mask must be a gray image of the image's size".into(),
                    });
                }
                let bits = r.data.iter().map(|&v| u8::from(v > 127)).collect();
                Some(BinaryMask::new(w, h, bits)?)
            }
            None => None,
        };
        let id = Path::new(&rec.file)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| rec.file.clone());
        let sample = ImageSample {
            id: format!("{}/{id}", self.split),
            width: w,
            height: h,
            pixels,
            label: rec.label,
            is_background: rec.background,
            gt_box: rec.bbox,
            gt_mask,
        };
        sample.validate()?;
        Ok(sample)
    }

    /// Samples in manifest order, decoded lazily.
    pub fn samples(&self) -> impl Iterator<Item = Result<ImageSample>> + '_ {
        (0..self.records.len()).map(|i| self.sample(i))
    }
}

/// A fully decoded dataset directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub meta: DatasetMeta,
    pub train: Vec<ImageSample>,
    pub test: Vec<ImageSample>,
    pub background: Vec<ImageSample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[ImageSample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::Background => &self.background,
        }
    }
}

/// Manifest of one split under `root`.
pub fn load_split(root: &Path, split: Split) -> Result<DatasetManifest> {
    DatasetManifest::load(&root.join(format!("{}.jsonl", split.name())))
}

/// Decodes every split under `root`.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let meta = DatasetMeta::read(root)?;
    let mut parts = Vec::with_capacity(3);
    for split in Split::ALL {
        let m = load_split(root, split)?;
        parts.push(m.samples().collect::<Result<Vec<_>>>()?);
    }
    let background = parts.pop().unwrap();
    let test = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok(Dataset {
        root: root.to_path_buf(),
        meta,
        train,
        test,
        background,
    })
}

fn interleave(s: &ImageSample) -> Vec<u8> {
    let plane = s.width * s.height;
    let mut out = Vec::with_capacity(CHANNELS * plane);
    for p in 0..plane {
        for c in 0..CHANNELS {
            out.push(s.pixels[c * plane + p]);
        }
    }
    out
}

fn write_split(root: &Path, split: Split, samples: &[ImageSample]) -> Result<()> {
    let dir = root.join(split.name());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut lines = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let file = format!("{}/{i:06}.ppm", split.name());
        pnm::write(&root.join(&file), s.width, s.height, CHANNELS, &interleave(s))?;
        let mask = match &s.gt_mask {
            Some(m) => {
                let name = format!("{}/{i:06}_mask.pgm", split.name());
                let gray: Vec<u8> = m.values().iter().map(|&v| v * 255).collect();
                pnm::write(&root.join(&name), s.width, s.height, 1, &gray)?;
                Some(name)
            }
            None => None,
        };
        let rec = ManifestRecord {
            file,
            label: s.label,
            background: s.is_background,
            bbox: s.gt_box,
            mask,
        };
        writeln!(lines, "{}", serde_json::to_string(&rec).expect("record serializes")).unwrap();
    }
    let path = root.join(format!("{}.jsonl", split.name()));
    fs::write(&path, lines).map_err(|e| Error::io(&path, e))
}

/// Generates all three splits and writes them under `root`. Train and test
/// use distinct derived seeds so they never share images.
pub fn gen_data(params: &GenDataParams, root: &Path) -> Result<DatasetMeta> {
    if params.train == 0 || params.test == 0 || params.background == 0 {
        return Err(Error::invalid("every split needs at least one image"));
    }
    let (h, w) = (params.height, params.width);
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::invalid(format!("image size {h}x{w} must be divisible by 4")));
    }
    let seed = params.seed;
    let train = gen_labeled(crate::rng::derive_seed(seed, "train", 0), params.train, params.classes, w, h)?;
    let test = gen_labeled(crate::rng::derive_seed(seed, "test", 0), params.test, params.classes, w, h)?;
    let background = gen_background(crate::rng::derive_seed(seed, "background", 0), params.background, w, h);

    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_split(root, Split::Train, &train)?;
    write_split(root, Split::Test, &test)?;
    write_split(root, Split::Background, &background)?;

    let meta = DatasetMeta {
        seed,
        params: params.clone(),
        class_names: class_names(params.classes),
        background_ratio: params.background as f64 / params.train as f64,
        normalization: Normalization::from_samples(&train),
    };
    let path = root.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenDataParams {
        GenDataParams {
            seed: 5,
            classes: 4,
            train: 12,
            test: 6,
            background: 3,
            height: 32,
            width: 32,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = small();
        gen_data(&p, dir.path()).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        let train = gen_labeled(crate::rng::derive_seed(5, "train", 0), 12, 4, 32, 32).unwrap();
        assert_eq!(ds.train.len(), 12);
        for (a, b) in ds.train.iter().zip(&train) {
            assert_eq!(a.pixels, b.pixels);
            assert_eq!(a.gt_mask, b.gt_mask);
            assert_eq!(a.gt_box, b.gt_box);
            assert_eq!(a.label, b.label);
        }
        assert_eq!(ds.background.len(), 3);
        assert!(ds.background.iter().all(|s| s.is_background));
        assert_eq!(ds.meta.class_names, vec!["disk", "square", "triangle", "ring"]);
    }

    #[test]
    fn empty_manifest_is_not_an_error() {
        let dir = tempfile::tempdir().unwrap();
        gen_data(&small(), dir.path()).unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        let m = DatasetManifest::load(&path).unwrap();
        assert_eq!(m.samples().count(), 0);
    }

    #[test]
    fn corrupt_image_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        gen_data(&small(), dir.path()).unwrap();
        let victim = dir.path().join("test/000002.ppm");
        let mut bytes = fs::read(&victim).unwrap();
        bytes[0] = b'X';
        fs::write(&victim, bytes).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("000002.ppm"), "{err}");
        assert!(err.contains("at byte 0"), "{err}");
    }

    #[test]
    fn missing_file_and_bad_label_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        gen_data(&small(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("train/000001.ppm")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("000001.ppm"), "{err}");

        let path = dir.path().join("bad.jsonl");
        fs::write(&path, "{\"file\":\"train/000000.ppm\",\"label\":9,\"background\":false,\"box\":null}\n").unwrap();
        assert!(DatasetManifest::load(&path).unwrap_err().to_string().contains("out of range"));
    }
}
