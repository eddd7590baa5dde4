//! Paired (beamformed input, ground-truth target) dataset construction.
//!
//! Each pair: branching phantom on the large area, random augmentation,
//! forward simulation from the whole area, optional response jitter and
//! noise, DAS on the central crop, and the matching ground-truth crop.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustics::{add_noise, build_operator, impulse_response, synthesize_rf, Medium, ProbeConfig, PropagationOperator};
use crate::beamform::{das, BeamformKind, BeamformedImage, DasOptions};
use crate::error::{Error, Result};
use crate::grid::{GroundTruthImage, Grid};
use crate::phantom::{augment, generate_branching_phantom, prepare_ground_truth, AugmentSpec, BranchingConfig, DEFAULT_GT_THRESHOLD};
use crate::tensorio::{config_hash, sha256_hex, write_image, Manifest, PairEntry, ProvenanceTag, Split, MANIFEST_FILE, MANIFEST_SCHEMA};

/// Fraction of nonzero target pixels below which a phantom draw is rejected
/// and redrawn.
pub const MIN_TARGET_FILL: f64 = 0.005;
const MAX_DRAWS: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Clean,
    Noisy { snr: f64 },
}

impl Provenance {
    pub fn tag(&self) -> ProvenanceTag {
        match self {
            Provenance::Clean => ProvenanceTag::Simulated,
            Provenance::Noisy { .. } => ProvenanceTag::Noisy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub input_kind: BeamformKind,
    pub provenance: Provenance,
    pub seed: u64,
    /// Side of the central crop seen by downstream consumers, pixels.
    pub crop_px: usize,
    /// Phantom generator; its grid is the simulated area.
    pub phantom: BranchingConfig,
    pub probe: ProbeConfig,
    pub medium: Medium,
    pub gt_threshold: f64,
    pub augment: bool,
    /// Relative jitter of the fractional bandwidth for noisy pairs.
    pub jitter_bandwidth: f64,
    /// Relative jitter of the centre frequency for noisy pairs.
    pub jitter_center: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_train: 200,
            n_val: 40,
            n_test: 15,
            input_kind: BeamformKind::Dmbf,
            provenance: Provenance::Clean,
            seed: 0,
            crop_px: 128,
            phantom: BranchingConfig::default(),
            probe: ProbeConfig::default(),
            medium: Medium::default(),
            gt_threshold: DEFAULT_GT_THRESHOLD,
            augment: true,
            jitter_bandwidth: 0.05,
            jitter_center: 0.02,
        }
    }
}

impl DatasetConfig {
    /// Reports every invalid field at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut take = |r: Result<()>| match r {
            Ok(()) => {}
            Err(Error::Config(e)) => errs.extend(e),
            Err(e) => errs.push(e.to_string()),
        };
        take(self.phantom.validate());
        take(self.probe.validate());
        take(self.medium.validate());
        for (name, n) in [("n_train", self.n_train), ("n_val", self.n_val), ("n_test", self.n_test)] {
            if n < 1 {
                errs.push(format!("{name} must be >= 1"));
            }
        }
        let area = self.phantom.grid;
        if self.crop_px < 1 || self.crop_px > area.rows.min(area.cols) {
            errs.push(format!(
                "crop_px {} must lie in [1, {}]",
                self.crop_px,
                area.rows.min(area.cols)
            ));
        }
        if !(0.0..1.0).contains(&self.gt_threshold) {
            errs.push(format!("gt_threshold {} outside [0, 1)", self.gt_threshold));
        }
        if let Provenance::Noisy { snr } = self.provenance {
            if !(snr > 0.0) {
                errs.push(format!("snr must be positive, got {snr}"));
            }
        }
        if !(0.0..0.5).contains(&self.jitter_bandwidth) || !(0.0..0.5).contains(&self.jitter_center) {
            errs.push("jitter fractions must lie in [0, 0.5)".into());
        }
        if errs.is_empty() && self.probe.samples_to_cover(&area, &self.medium) > self.probe.n_samples {
            errs.push(format!(
                "probe.n_samples {} too short for the simulated area; need {}",
                self.probe.n_samples,
                self.probe.samples_to_cover(&area, &self.medium)
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    pub fn crop_grid(&self) -> Result<(Grid, usize, usize)> {
        self.phantom.grid.centered_crop(self.crop_px, self.crop_px)
    }

    fn split_of(&self, index: usize) -> Split {
        if index < self.n_train {
            Split::Train
        } else if index < self.n_train + self.n_val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// Deterministic 64-bit seed from a base seed, a domain label and indices.
pub fn derive_seed(base: u64, domain: &str, index: u64, attempt: u32) -> u64 {
    let mut bytes = base.to_le_bytes().to_vec();
    bytes.extend_from_slice(domain.as_bytes());
    bytes.extend_from_slice(&index.to_le_bytes());
    bytes.extend_from_slice(&attempt.to_le_bytes());
    let h = sha256_hex(&bytes);
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

/// Builds pairs for one configuration, reusing the propagation operator.
pub struct PairBuilder {
    cfg: DatasetConfig,
    op: PropagationOperator,
    crop: Grid,
}

impl PairBuilder {
    pub fn new(cfg: &DatasetConfig) -> Result<Self> {
        cfg.validate()?;
        let op = build_operator(&cfg.phantom.grid, &cfg.probe, &cfg.medium)?;
        let (crop, _, _) = cfg.crop_grid()?;
        Ok(PairBuilder {
            cfg: cfg.clone(),
            op,
            crop,
        })
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.cfg
    }

    pub fn crop(&self) -> &Grid {
        &self.crop
    }

    pub fn operator(&self) -> &PropagationOperator {
        &self.op
    }

    /// Generates, augments and images the phantom of `phantom_seed`.
    pub fn build(&self, phantom_seed: u64, aug: &AugmentSpec) -> Result<(BeamformedImage, GroundTruthImage)> {
        let phantom = generate_branching_phantom(phantom_seed, &self.cfg.phantom)?;
        let object = augment(&phantom, aug)?;
        self.build_from_object(&object, phantom_seed)
    }

    /// Simulates `object` (on the area grid) and returns the cropped pair.
    /// `noise_seed` drives response jitter and noise for noisy provenance.
    pub fn build_from_object(&self, object: &GroundTruthImage, noise_seed: u64) -> Result<(BeamformedImage, GroundTruthImage)> {
        let target = prepare_ground_truth(&object.crop_to(&self.crop)?, self.cfg.gt_threshold)?;
        let rf = match self.cfg.provenance {
            Provenance::Clean => synthesize_rf(object, &self.op)?,
            Provenance::Noisy { snr } => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(noise_seed, "jitter", 0, 0));
                let mut probe = self.cfg.probe.clone();
                probe.fractional_bandwidth *= 1.0 + self.cfg.jitter_bandwidth * rng.random_range(-1.0..=1.0);
                probe.f_center *= 1.0 + self.cfg.jitter_center * rng.random_range(-1.0..=1.0);
                let op = self.op.with_waveform(impulse_response(&probe)?)?;
                let clean = synthesize_rf(object, &op)?;
                add_noise(&clean, snr, derive_seed(noise_seed, "noise", 0, 0))?
            }
        };
        let input = das(
            &rf,
            &self.crop,
            &self.cfg.probe,
            &self.cfg.medium,
            self.cfg.input_kind,
            DasOptions::default(),
        )?;
        Ok((input, target))
    }

    /// Draws phantom seeds for pair `index` until the target crop is not
    /// (nearly) empty. Returns the accepted seed and pair.
    fn build_indexed(&self, index: usize) -> Result<(u64, BeamformedImage, GroundTruthImage)> {
        let (domain, local) = match self.cfg.split_of(index) {
            Split::Test => ("test", index - self.cfg.n_train - self.cfg.n_val),
            _ => ("trainval", index),
        };
        let mut last = None;
        for attempt in 0..MAX_DRAWS {
            let seed = derive_seed(self.cfg.seed, domain, local as u64, attempt);
            let aug = if self.cfg.augment {
                AugmentSpec::random(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "augment", 0, 0)))
            } else {
                AugmentSpec::IDENTITY
            };
            let phantom = generate_branching_phantom(seed, &self.cfg.phantom)?;
            let object = augment(&phantom, &aug)?;
            let crop = object.crop_to(&self.crop)?;
            let fill = crop.pixels.iter().filter(|&&v| v >= self.cfg.gt_threshold).count() as f64 / crop.pixels.len() as f64;
            if fill >= MIN_TARGET_FILL {
                let (input, target) = self.build_from_object(&object, seed)?;
                return Ok((seed, input, target));
            }
            last = Some(seed);
        }
        Err(Error::Config(vec![format!(
            "no phantom with a non-empty crop after {MAX_DRAWS} draws for pair {index} (last seed {last:?})"
        )]))
    }
}

/// One-off pair; builds the operator on every call.
pub fn build_pair(phantom_seed: u64, aug: &AugmentSpec, cfg: &DatasetConfig) -> Result<(BeamformedImage, GroundTruthImage)> {
    PairBuilder::new(cfg)?.build(phantom_seed, aug)
}

/// In-memory pair with its manifest bookkeeping.
pub struct BuiltPair {
    pub index: usize,
    pub split: Split,
    pub phantom_seed: u64,
    pub input: BeamformedImage,
    pub target: GroundTruthImage,
}

/// Builds every pair in memory, in index order.
pub fn build_pairs(cfg: &DatasetConfig, range: std::ops::Range<usize>) -> Result<Vec<BuiltPair>> {
    let builder = PairBuilder::new(cfg)?;
    range
        .into_par_iter()
        .map(|i| {
            let (seed, input, target) = builder.build_indexed(i)?;
            Ok(BuiltPair {
                index: i,
                split: cfg.split_of(i),
                phantom_seed: seed,
                input,
                target,
            })
        })
        .collect()
}

fn prepare_root(root: &Path, force: bool) -> Result<()> {
    let io = |e| Error::io(root, e);
    if root.exists() {
        let non_empty = fs::read_dir(root).map_err(io)?.next().is_some();
        if non_empty && !force {
            return Err(Error::OutputExists(root.to_path_buf()));
        }
        for sub in ["inputs", "targets"] {
            let p = root.join(sub);
            if p.exists() {
                fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    for sub in ["inputs", "targets"] {
        let p = root.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Writes `<root>/inputs/NNNN.patk`, `<root>/targets/NNNN.patk`, the
/// manifest and a `config.json` copy of `cfg`.
pub fn build_dataset(cfg: &DatasetConfig, root: impl AsRef<Path>, force: bool) -> Result<Manifest> {
    let root = root.as_ref();
    cfg.validate()?;
    let pairs = build_pairs(cfg, 0..cfg.total())?;

    let test: std::collections::HashSet<u64> = pairs.iter().filter(|p| p.split == Split::Test).map(|p| p.phantom_seed).collect();
    if pairs.iter().any(|p| p.split != Split::Test && test.contains(&p.phantom_seed)) {
        return Err(Error::Config(vec!["test phantom seeds overlap train/val seeds".into()]));
    }

    prepare_root(root, force)?;
    let (crop, r0, c0) = cfg.crop_grid()?;
    let pitch_mm = cfg.phantom.grid.pitch * 1e3;
    let mut entries = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let name = format!("{:04}.patk", p.index);
        let input: PathBuf = ["inputs", name.as_str()].iter().collect();
        let target: PathBuf = ["targets", name.as_str()].iter().collect();
        write_image(root.join(&input), &p.input.image.pixels)?;
        write_image(root.join(&target), &p.target.pixels)?;
        entries.push(PairEntry {
            input: format!("inputs/{name}"),
            target: format!("targets/{name}"),
            split: p.split,
            provenance: cfg.provenance.tag(),
            phantom_seed: p.phantom_seed,
            crop_offset_mm: [c0 as f64 * pitch_mm, r0 as f64 * pitch_mm],
        });
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA,
        input_kind: cfg.input_kind.to_string(),
        pitch_m: crop.pitch,
        probe_hash: config_hash(&cfg.probe)?,
        grid_hash: config_hash(&crop)?,
        pairs: entries,
    };
    manifest.save(root)?;
    let cfg_path = root.join("config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(cfg)? + "\n").map_err(|e| Error::io(&cfg_path, e))?;
    debug_assert!(root.join(MANIFEST_FILE).is_file());
    Ok(manifest)
}
