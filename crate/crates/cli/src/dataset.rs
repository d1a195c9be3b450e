//! On-disk dataset: one directory per case holding the condition channels,
//! the enhancement target, and the region masks as raw tensors, plus a
//! TOML manifest with case-level split assignments.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use cediff_core::phantom::{generate_case, plan_splits, PhantomCase, Split};

use crate::pngio::save_png;
use crate::tensorio::{read_image, write_image};

/// The seven per-case image files, in manifest order.
pub const CASE_FILES: [&str; 7] = [
    "t1_pre",
    "dwi_b0",
    "dwi_b800",
    "t1_post",
    "background_mask",
    "breast_mask",
    "tumor_mask",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub num_cases: usize,
    pub size: usize,
    pub base_seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseEntry {
    pub id: u64,
    pub seed: u64,
    pub split: String,
    pub dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub config: DatasetConfig,
    pub cases: Vec<CaseEntry>,
}

impl DatasetIndex {
    pub fn cases_in_split(&self, split: Split) -> Vec<&CaseEntry> {
        self.cases.iter().filter(|c| c.split == split.as_str()).collect()
    }
}

/// A case loaded back into memory.
#[derive(Debug, Clone)]
pub struct LoadedCase {
    pub id: u64,
    pub t1_pre: Array2<f32>,
    pub dwi_b0: Array2<f32>,
    pub dwi_b800: Array2<f32>,
    pub t1_post: Array2<f32>,
    pub background_mask: Array2<f32>,
    pub breast_mask: Array2<f32>,
    pub tumor_mask: Array2<f32>,
}

fn case_images<'a>(case: &'a PhantomCase<f32>) -> [&'a Array2<f32>; 7] {
    [
        &case.t1_pre,
        &case.dwi_b0,
        &case.dwi_b800,
        &case.t1_post,
        &case.background_mask,
        &case.breast_mask,
        &case.tumor_mask,
    ]
}

/// Generate `config.num_cases` phantom cases under `out_dir`, write the
/// manifest, and optionally PNG previews of every channel.
pub fn generate_dataset(
    out_dir: &Path,
    config: &DatasetConfig,
    previews: bool,
) -> Result<DatasetIndex> {
    let fractions = (
        config.train_fraction,
        config.val_fraction,
        config.test_fraction,
    );
    let splits = plan_splits(config.num_cases, fractions)
        .context("split fractions violate the dataset precondition")?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating dataset directory {}", out_dir.display()))?;

    let mut cases = Vec::with_capacity(config.num_cases);
    for (i, split) in splits.iter().enumerate() {
        let seed = config.base_seed.wrapping_add(i as u64);
        let case = generate_case::<f32>(seed, config.size)
            .context("phantom size violates the generator precondition")?;
        let dir_name = format!("case_{i:04}");
        let case_dir = out_dir.join(&dir_name);
        fs::create_dir_all(&case_dir)?;
        for (name, img) in CASE_FILES.iter().zip(case_images(&case)) {
            write_image(&case_dir.join(format!("{name}.cedt")), img)?;
            if previews {
                save_png(&case_dir.join(format!("{name}.png")), img)?;
            }
        }
        cases.push(CaseEntry {
            id: i as u64,
            seed,
            split: split.as_str().to_string(),
            dir: dir_name,
        });
    }

    let index = DatasetIndex { config: config.clone(), cases };
    fs::write(
        out_dir.join("manifest.toml"),
        toml::to_string_pretty(&index).context("serializing dataset manifest")?,
    )?;
    Ok(index)
}

/// Read and validate a dataset manifest.
pub fn load_index(dir: &Path) -> Result<DatasetIndex> {
    let path = dir.join("manifest.toml");
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading dataset manifest {}", path.display()))?;
    let index: DatasetIndex =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if index.cases.len() != index.config.num_cases {
        bail!(
            "manifest lists {} cases but config declares {}",
            index.cases.len(),
            index.config.num_cases
        );
    }
    Ok(index)
}

/// Load one case's images from disk, validating shapes against the manifest.
pub fn load_case(dataset_dir: &Path, entry: &CaseEntry, size: usize) -> Result<LoadedCase> {
    let dir: PathBuf = dataset_dir.join(&entry.dir);
    let mut images = Vec::with_capacity(7);
    for name in CASE_FILES {
        let img = read_image(&dir.join(format!("{name}.cedt")))?;
        if img.dim() != (size, size) {
            bail!(
                "case {}: {name} has shape {:?}, expected ({size}, {size})",
                entry.id,
                img.dim()
            );
        }
        images.push(img);
    }
    let mut it = images.into_iter();
    Ok(LoadedCase {
        id: entry.id,
        t1_pre: it.next().unwrap(),
        dwi_b0: it.next().unwrap(),
        dwi_b800: it.next().unwrap(),
        t1_post: it.next().unwrap(),
        background_mask: it.next().unwrap(),
        breast_mask: it.next().unwrap(),
        tumor_mask: it.next().unwrap(),
    })
}

/// Load every case of one split.
pub fn load_split(dataset_dir: &Path, index: &DatasetIndex, split: Split) -> Result<Vec<LoadedCase>> {
    index
        .cases_in_split(split)
        .into_iter()
        .map(|entry| load_case(dataset_dir, entry, index.config.size))
        .collect()
}
