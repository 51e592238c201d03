//! Labeled dataset generation and persistence.
//!
//! Sample `i` of a dataset with seed `s` is generated from its own seed
//! `derive(s, i)` alone, so any sample can be reproduced in isolation.
//! Samples are generated in parallel and written in index order.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversarial::Generator;
use crate::diff_ops::{Stage, StageConfig};
use crate::error::{Error, Result};
use crate::eval::{LabeledDataset, Provenance};
use crate::image::Image;
use crate::io;
use crate::pyramid_aug::{apply_handmade, HandmadeConfig, HandmadeVariant, TagFootprint};
use crate::seed;
use crate::tag_model::{format_bits, parse_bits, render, PoseDistribution, TagGeometry, TagLabel};

pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub variant: Provenance,
    pub n: usize,
    pub seed: u64,
    pub resolution: usize,
    /// Also write an 8-bit PNG next to every `.f32` file.
    pub png: bool,
    pub pose: PoseDistribution,
    pub geometry: TagGeometry,
    /// Handmade distributions; the stage partition comes from the variant.
    pub handmade: HandmadeConfig,
    /// Stage bounds at 64 px for the handmade lighting stage.
    pub stages: StageConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            variant: Provenance::Hm3d,
            n: 100,
            seed: 0,
            resolution: 64,
            png: false,
            pose: PoseDistribution::default(),
            geometry: TagGeometry::default(),
            handmade: HandmadeConfig::default(),
            stages: StageConfig::default(),
        }
    }
}

/// What a variant takes from the generator and from the handmade pipeline.
struct Plan {
    learned_upto: Option<Stage>,
    handmade: Option<HandmadeConfig>,
}

impl DatasetConfig {
    /// Whether the variant needs a trained generator.
    pub fn needs_generator(&self) -> bool {
        self.plan().map(|p| p.learned_upto.is_some()).unwrap_or(false)
    }

    fn plan(&self) -> Result<Plan> {
        let handmade = |v: HandmadeVariant| HandmadeConfig {
            stages: v.handmade_stages(),
            learned_upto: v.learned_upto(),
            ..self.handmade.clone()
        };
        Ok(match self.variant {
            Provenance::Clean => Plan {
                learned_upto: None,
                handmade: None,
            },
            Provenance::Rendergan => Plan {
                learned_upto: Some(Stage::Detail),
                handmade: None,
            },
            Provenance::Hm3d | Provenance::HmLi | Provenance::HmBg => {
                let v = match self.variant {
                    Provenance::Hm3d => HandmadeVariant::Hm3d,
                    Provenance::HmLi => HandmadeVariant::HmLi,
                    _ => HandmadeVariant::HmBg,
                };
                Plan {
                    learned_upto: v.learned_upto(),
                    handmade: Some(handmade(v)),
                }
            }
            Provenance::Realaug => {
                return Err(Error::Config("realaug datasets are not generated from labels".into()));
            }
        })
    }

    pub fn validate(&self, generator: Option<&Generator>) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("dataset needs n ≥ 1".into()));
        }
        self.pose.validate(&self.geometry)?;
        self.handmade.validate()?;
        self.stages.validate()?;
        let plan = self.plan()?;
        if plan.handmade.is_some() {
            crate::pyramid_aug::pyramid_levels(self.resolution)?;
        }
        match (plan.learned_upto, generator) {
            (Some(_), None) => Err(Error::Config(format!(
                "variant {} needs a generator checkpoint",
                self.variant
            ))),
            (Some(_), Some(g)) if g.resolution() != self.resolution => Err(Error::Config(format!(
                "checkpoint resolution {} differs from dataset resolution {}",
                g.resolution(),
                self.resolution
            ))),
            _ => {
                if self.resolution < crate::tag_model::MIN_RESOLUTION {
                    return Err(Error::ResolutionTooSmall {
                        resolution: self.resolution,
                        minimum: crate::tag_model::MIN_RESOLUTION,
                    });
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub index: usize,
    pub seed: u64,
    pub label: TagLabel,
    pub image: Image,
}

/// Generates sample `index` of the dataset.
pub fn generate_sample(cfg: &DatasetConfig, generator: Option<&Generator>, index: usize) -> Result<Sample> {
    let plan = cfg.plan()?;
    let sample_seed = seed::derive(cfg.seed, index as u64);
    let mut rng = seed::rng(sample_seed);
    let label = cfg.pose.sample(&mut rng);
    let r = render(&label, cfg.resolution, &cfg.geometry)?;
    let mut image = match (plan.learned_upto, generator) {
        (Some(upto), Some(g)) => {
            let z = g.sample_latent(&mut rng);
            g.forward_upto(&z, &r, upto)?.composed.image
        }
        (Some(_), None) => return Err(Error::Config(format!("variant {} needs a generator", cfg.variant))),
        (None, _) => r.image.clone(),
    };
    if let Some(hm) = &plan.handmade {
        let fp = TagFootprint::of(&label, &cfg.geometry, cfg.resolution);
        image = apply_handmade(&r, &image, fp, hm, &cfg.stages.rescaled(cfg.resolution), &mut rng)?;
    }
    Ok(Sample {
        index,
        seed: sample_seed,
        label,
        image,
    })
}

pub fn generate(cfg: &DatasetConfig, generator: Option<&Generator>) -> Result<Vec<Sample>> {
    cfg.validate(generator)?;
    (0..cfg.n)
        .into_par_iter()
        .map(|i| generate_sample(cfg, generator, i))
        .collect()
}

/// Generates a dataset directly as a [`LabeledDataset`].
pub fn generate_labeled(cfg: &DatasetConfig, generator: Option<&Generator>) -> Result<LabeledDataset> {
    let samples = generate(cfg, generator)?;
    let (images, labels) = samples.into_iter().map(|s| (s.image, s.label)).unzip();
    LabeledDataset::new(cfg.variant, images, labels)
}

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub png: Option<String>,
    pub bits: String,
    pub center_x: f64,
    pub center_y: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub scale: f64,
    pub provenance: Provenance,
    pub seed: u64,
}

impl ManifestRecord {
    pub fn new(path: String, png: Option<String>, label: &TagLabel, provenance: Provenance, seed: u64) -> Self {
        Self {
            path,
            png,
            bits: format_bits(&label.bits),
            center_x: label.center_x,
            center_y: label.center_y,
            yaw: label.yaw,
            pitch: label.pitch,
            roll: label.roll,
            scale: label.scale,
            provenance,
            seed,
        }
    }

    pub fn label(&self) -> Result<TagLabel> {
        Ok(TagLabel {
            bits: parse_bits(&self.bits)?,
            center_x: self.center_x,
            center_y: self.center_y,
            yaw: self.yaw,
            pitch: self.pitch,
            roll: self.roll,
            scale: self.scale,
        })
    }
}

pub fn sample_file_name(index: usize) -> String {
    format!("{index:06}.f32")
}

/// Writes images and `manifest.jsonl` under `dir`, in index order.
pub fn write_samples(dir: &Path, samples: &[Sample], provenance: Provenance, png: bool) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let name = sample_file_name(s.index);
        io::write_f32(&dir.join(&name), &s.image)?;
        let png_name = if png {
            let p = name.replace(".f32", ".png");
            io::write_png(&dir.join(&p), &s.image)?;
            Some(p)
        } else {
            None
        };
        records.push(ManifestRecord::new(name, png_name, &s.label, provenance, s.seed));
    }
    write_manifest(&dir.join(MANIFEST_NAME), &records)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<PathBuf> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::format(path, e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        records.push(r);
    }
    Ok(records)
}

/// Loads a dataset from its manifest (a file, or a directory holding
/// `manifest.jsonl`).
pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let manifest = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let root = manifest.parent().unwrap_or(Path::new("."));
    let records = read_manifest(&manifest)?;
    if records.is_empty() {
        return Err(Error::format(&manifest, "manifest is empty"));
    }
    let provenance = records[0].provenance;
    let loaded = records
        .par_iter()
        .map(|r| Ok((io::read_image(&root.join(&r.path))?, r.label()?)))
        .collect::<Result<Vec<_>>>()?;
    let (images, labels) = loaded.into_iter().unzip();
    LabeledDataset::new(provenance, images, labels)
}
