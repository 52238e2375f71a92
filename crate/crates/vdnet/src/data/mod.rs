//! Deterministic synthetic corpus: scenes of colored shapes on textured
//! backgrounds, tight ground-truth boxes, classifier patches, and the
//! on-disk dataset layout (scene images + annotations + manifest).
//!
//! Every pixel is produced in 8-bit space and stored as `byte/255`, so a
//! scene written to a netpbm file and read back is identical to the scene
//! regenerated from its seed. A dataset directory therefore only has to
//! persist the generator config and per-scene seeds; training can
//! re-render images on demand and still agree bit for bit with the files.

pub mod netpbm;

use crate::boxes::{BBox, GroundTruth};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Object classes that can appear in a scene, in label order.
pub const SCENE_CLASSES: [&str; 3] = ["circle", "square", "triangle"];

/// Classifier patch labels: background first, then the scene classes.
pub const PATCH_CLASSES: [&str; 4] = ["background", "circle", "square", "triangle"];

/// Everything that determines a dataset, bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub width: usize,
    pub height: usize,
    /// 3 for RGB scenes, 1 for grayscale.
    pub channels: usize,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Side length bounds for object placement squares, in pixels.
    pub min_size: usize,
    pub max_size: usize,
    /// Square classifier patch side length.
    pub patch_size: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            width: 64,
            height: 64,
            channels: 3,
            train_scenes: 200,
            test_scenes: 50,
            min_objects: 1,
            max_objects: 3,
            min_size: 14,
            max_size: 28,
            patch_size: 16,
            seed: 1,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.channels != 1 && self.channels != 3 {
            return fail(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.train_scenes == 0 {
            return fail("at least one training scene is required".into());
        }
        if self.min_objects > self.max_objects {
            return fail(format!(
                "object count range [{}, {}] is invalid",
                self.min_objects, self.max_objects
            ));
        }
        if self.min_size < 4 || self.min_size > self.max_size {
            return fail(format!(
                "object size range [{}, {}] is invalid",
                self.min_size, self.max_size
            ));
        }
        if self.max_size > self.width || self.max_size > self.height {
            return fail(format!(
                "objects up to {} px cannot fit a {}x{} scene",
                self.max_size, self.width, self.height
            ));
        }
        if self.patch_size == 0 || self.patch_size > self.width || self.patch_size > self.height {
            return fail(format!("patch size {} does not fit the scene", self.patch_size));
        }
        Ok(())
    }
}

/// Which half of the corpus a scene belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// A rendered scene plus its tight ground-truth boxes.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: Tensor,
    pub objects: Vec<GroundTruth>,
}

/// One classifier training patch cut from a scene.
#[derive(Debug, Clone)]
pub struct Patch {
    pub image: Tensor,
    /// Index into [`PATCH_CLASSES`]; 0 is background.
    pub label: usize,
    pub x0: usize,
    pub y0: usize,
}

// 8-bit render palette.
const RGB_COLORS: [[i32; 3]; 3] = [
    [230, 64, 51],  // circle
    [51, 217, 77],  // square
    [64, 90, 230],  // triangle
];
const GRAY_LEVELS: [i32; 3] = [230, 153, 77];
const JITTER: i32 = 6;
const PLACEMENT_MARGIN: usize = 2;
const PLACEMENT_ATTEMPTS: usize = 50;

/// Deterministically render the scene identified by `seed` within a
/// dataset. The scene RNG blends the dataset seed with the scene seed, so
/// any scene can be regenerated in isolation.
pub fn generate_scene(cfg: &DataConfig, seed: u64) -> Scene {
    let mut rng = SplitMix64::derive(cfg.seed, 0x5ce0_0000_0000_0000 | seed);
    let (w, h, c) = (cfg.width, cfg.height, cfg.channels);
    let plane = w * h;

    // Background: per-channel base level, a linear ramp, per-pixel noise.
    let mut pix = vec![0i32; c * plane];
    let base: Vec<i32> = (0..c).map(|_| rng.next_range(13, 64) as i32).collect();
    let theta = rng.next_f64() * std::f64::consts::TAU;
    let amp = rng.next_range(0, 12) as f64;
    let (dx, dy) = (theta.cos(), theta.sin());
    let diag = (w as f64).hypot(h as f64);
    for y in 0..h {
        for x in 0..w {
            let ramp = ((x as f64 + 0.5) * dx + (y as f64 + 0.5) * dy) / diag;
            let ramp = (amp * (ramp + 1.0) * 0.5).round() as i32;
            let noise = rng.next_range(0, 4) as i32;
            for ch in 0..c {
                pix[ch * plane + y * w + x] = (base[ch] + ramp + noise).clamp(0, 255);
            }
        }
    }

    // Objects: non-overlapping placement squares, painted with jitter.
    let count = rng.next_range(cfg.min_objects as i64, cfg.max_objects as i64) as usize;
    let mut placed: Vec<(usize, usize, usize)> = Vec::new(); // (x0, y0, size)
    let mut objects = Vec::new();
    for _ in 0..count {
        let class = rng.next_range(0, SCENE_CLASSES.len() as i64 - 1) as usize;
        let size = rng.next_range(cfg.min_size as i64, cfg.max_size as i64) as usize;
        let mut spot = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let x0 = rng.next_range(0, (w - size) as i64) as usize;
            let y0 = rng.next_range(0, (h - size) as i64) as usize;
            let clear = placed.iter().all(|&(ox, oy, os)| {
                let gap = PLACEMENT_MARGIN;
                x0 + size + gap <= ox || ox + os + gap <= x0
                    || y0 + size + gap <= oy || oy + os + gap <= y0
            });
            if clear {
                spot = Some((x0, y0));
                break;
            }
        }
        let Some((x0, y0)) = spot else {
            continue; // scene too crowded; keep what fits
        };
        placed.push((x0, y0, size));
        if let Some(bbox) = paint_object(&mut pix, w, h, c, class, x0, y0, size, &mut rng) {
            objects.push(GroundTruth { class: SCENE_CLASSES[class].to_string(), bbox });
        }
    }

    let data: Vec<f64> = pix.iter().map(|&v| v as f64 / 255.0).collect();
    Scene { image: Tensor::new(vec![c, h, w], data), objects }
}

/// Paint one shape and return the tight box around the pixels it touched.
#[allow(clippy::too_many_arguments)]
fn paint_object(
    pix: &mut [i32],
    w: usize,
    h: usize,
    c: usize,
    class: usize,
    x0: usize,
    y0: usize,
    size: usize,
    rng: &mut SplitMix64,
) -> Option<BBox> {
    let plane = w * h;
    let s = size as f64;
    let (cx, cy) = (x0 as f64 + s / 2.0, y0 as f64 + s / 2.0);
    let inside = |px: f64, py: f64| -> bool {
        match class {
            0 => {
                let (ddx, ddy) = (px - cx, py - cy);
                ddx * ddx + ddy * ddy <= (s / 2.0) * (s / 2.0)
            }
            1 => true, // the whole placement square
            _ => {
                // isoceles triangle: apex top-center, base along the bottom
                let (ax, ay) = (cx, y0 as f64);
                let (bx, by) = (x0 as f64, y0 as f64 + s);
                let (tx, ty) = (x0 as f64 + s, y0 as f64 + s);
                let side = |x1: f64, y1: f64, x2: f64, y2: f64| {
                    (px - x2) * (y1 - y2) - (x1 - x2) * (py - y2)
                };
                let d1 = side(ax, ay, bx, by);
                let d2 = side(bx, by, tx, ty);
                let d3 = side(tx, ty, ax, ay);
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(neg && pos)
            }
        }
    };

    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            if !inside(x as f64 + 0.5, y as f64 + 0.5) {
                continue;
            }
            for ch in 0..c {
                let color = if c == 3 { RGB_COLORS[class][ch] } else { GRAY_LEVELS[class] };
                let tweak = rng.next_range(0, 2 * JITTER as i64) as i32 - JITTER;
                pix[ch * plane + y * w + x] = (color + tweak).clamp(0, 255);
            }
            bounds = Some(match bounds {
                None => (x, y, x, y),
                Some((x_min, y_min, x_max, y_max)) => {
                    (x_min.min(x), y_min.min(y), x_max.max(x), y_max.max(y))
                }
            });
        }
    }
    bounds.map(|(x_min, y_min, x_max, y_max)| {
        BBox::new(x_min as f64, y_min as f64, (x_max + 1) as f64, (y_max + 1) as f64)
    })
}

/// Copy a square window out of a `[C,H,W]` image.
pub fn crop(image: &Tensor, x0: usize, y0: usize, size: usize) -> Tensor {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    assert!(x0 + size <= w && y0 + size <= h, "crop window leaves the image");
    let src = image.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in y0..y0 + size {
            let row = (ch * h + y) * w + x0;
            out.extend_from_slice(&src[row..row + size]);
        }
    }
    Tensor::new(vec![c, size, size], out)
}

/// Cut classifier patches from a scene: one object-centered patch per
/// ground-truth box, plus background windows that barely touch any object
/// (at most a tenth of the patch area each). Background-only scenes yield
/// a single background patch.
pub fn extract_patches(scene: &Scene, patch_size: usize, rng: &mut SplitMix64) -> Vec<Patch> {
    let (h, w) = (scene.image.shape()[1], scene.image.shape()[2]);
    let ps = patch_size as f64;
    let mut patches = Vec::new();

    for gt in &scene.objects {
        let (cx, cy) = gt.bbox.center();
        let x0 = ((cx - ps / 2.0).round().max(0.0) as usize).min(w - patch_size);
        let y0 = ((cy - ps / 2.0).round().max(0.0) as usize).min(h - patch_size);
        let label = 1 + SCENE_CLASSES
            .iter()
            .position(|&n| n == gt.class)
            .expect("scene object with unknown class");
        patches.push(Patch { image: crop(&scene.image, x0, y0, patch_size), label, x0, y0 });
    }

    let wanted = scene.objects.len().max(1);
    let limit = 0.1 * ps * ps;
    let mut found = 0;
    for _ in 0..40 * wanted {
        if found == wanted {
            break;
        }
        let x0 = rng.next_range(0, (w - patch_size) as i64) as usize;
        let y0 = rng.next_range(0, (h - patch_size) as i64) as usize;
        let window = BBox::new(x0 as f64, y0 as f64, x0 as f64 + ps, y0 as f64 + ps);
        if scene.objects.iter().all(|gt| window.intersection_area(&gt.bbox) <= limit) {
            patches.push(Patch { image: crop(&scene.image, x0, y0, patch_size), label: 0, x0, y0 });
            found += 1;
        }
    }
    patches
}

/// All classifier patches for one split of a loaded dataset, in scene
/// order, with a per-scene RNG stream so extraction is deterministic.
pub fn classification_patches(ds: &LoadedDataset, split: Split) -> Vec<Patch> {
    let cfg = &ds.manifest.config;
    let mut out = Vec::new();
    for record in ds.scenes.iter().filter(|r| r.split == split) {
        let scene = generate_scene(cfg, record.seed);
        let mut rng = SplitMix64::derive(cfg.seed, 0x9a7c_0000_0000_0000 | record.seed);
        out.extend(extract_patches(&scene, cfg.patch_size, &mut rng));
    }
    out
}

/// Index of a dataset directory: the generator config, its hash, and one
/// entry per scene with its seed and split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: DataConfig,
    pub config_hash: String,
    pub class_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub seed: u64,
    pub split: Split,
    pub objects: usize,
}

/// One annotations.jsonl row: every object in one scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnnotationRow {
    image: String,
    objects: Vec<GroundTruth>,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Hash of the canonical JSON encoding of a config.
pub fn config_hash(cfg: &DataConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config is always serializable");
    format!("{:016x}", fnv1a64(&json))
}

/// Generate a whole dataset under `dir`: `scenes/*.ppm` (or `.pgm`),
/// `annotations.jsonl` with one row per scene, and `manifest.json`.
/// Train scenes use seeds `0..train_scenes`, test scenes continue from
/// there, so the two splits can never share a seed.
pub fn write_dataset(cfg: &DataConfig, dir: &Path) -> Result<Manifest> {
    write_dataset_jobs(cfg, dir, 1)
}

/// [`write_dataset`] with scene rendering and file writing fanned out
/// over up to `jobs` threads. Every scene is a pure function of the
/// config and its own seed, so the files and the manifest are identical
/// for any job count.
pub fn write_dataset_jobs(cfg: &DataConfig, dir: &Path, jobs: usize) -> Result<Manifest> {
    cfg.validate()?;
    if jobs == 0 {
        return Err(Error::Config("jobs must be at least 1".into()));
    }
    let scenes_dir = dir.join("scenes");
    fs::create_dir_all(&scenes_dir).map_err(|e| Error::io(&scenes_dir, e))?;

    let ext = if cfg.channels == 3 { "ppm" } else { "pgm" };
    let plan: Vec<(Split, usize, u64)> = (0..cfg.train_scenes)
        .map(|i| (Split::Train, i, i as u64))
        .chain((0..cfg.test_scenes).map(|i| (Split::Test, i, (cfg.train_scenes + i) as u64)))
        .collect();

    // render and write image files, one thread per contiguous chunk;
    // each scene's annotation comes back tagged with its plan index
    let mut objects: Vec<Option<Vec<GroundTruth>>> = vec![None; plan.len()];
    let chunk = plan.len().div_ceil(jobs.min(plan.len()).max(1));
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for (c, piece) in plan.chunks(chunk).enumerate() {
            let scenes_dir = &scenes_dir;
            handles.push(scope.spawn(move || -> Result<Vec<(usize, Vec<GroundTruth>)>> {
                piece
                    .iter()
                    .enumerate()
                    .map(|(k, &(split, i, seed))| {
                        let scene = generate_scene(cfg, seed);
                        let path = scenes_dir.join(format!("{split}_{i:04}.{ext}"));
                        netpbm::write_image(&path, &scene.image)?;
                        Ok((c * chunk + k, scene.objects))
                    })
                    .collect()
            }));
        }
        for handle in handles {
            for (idx, objs) in handle.join().expect("scene worker panicked")? {
                objects[idx] = Some(objs);
            }
        }
        Ok(())
    })?;

    let ann_path = dir.join("annotations.jsonl");
    let mut ann = fs::File::create(&ann_path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(&ann_path, e))?;
    let mut entries = Vec::with_capacity(plan.len());
    for ((split, i, seed), objs) in plan.into_iter().zip(objects) {
        let objs = objs.expect("every planned scene was rendered");
        let stem = format!("{split}_{i:04}");
        let row = AnnotationRow { image: stem.clone(), objects: objs.clone() };
        serde_json::to_writer(&mut ann, &row)?;
        ann.write_all(b"\n").map_err(|e| Error::io(&ann_path, e))?;
        entries.push(ManifestEntry { image: stem, seed, split, objects: objs.len() });
    }
    ann.flush().map_err(|e| Error::io(&ann_path, e))?;

    let manifest = Manifest {
        config: cfg.clone(),
        config_hash: config_hash(cfg),
        class_names: SCENE_CLASSES.iter().map(|s| s.to_string()).collect(),
        entries,
    };
    let man_path = dir.join("manifest.json");
    let pretty = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&man_path, pretty).map_err(|e| Error::io(&man_path, e))?;
    Ok(manifest)
}

/// A dataset read back from disk, with annotations joined to manifest
/// entries.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: Manifest,
    pub scenes: Vec<SceneRecord>,
}

#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub stem: String,
    pub seed: u64,
    pub split: Split,
    pub objects: Vec<GroundTruth>,
}

impl LoadedDataset {
    /// Re-render a scene's pixels from the manifest config; identical to
    /// the stored image file by construction.
    pub fn render(&self, record: &SceneRecord) -> Tensor {
        generate_scene(&self.manifest.config, record.seed).image
    }

    pub fn split(&self, split: Split) -> Vec<&SceneRecord> {
        self.scenes.iter().filter(|r| r.split == split).collect()
    }
}

/// Load and cross-validate a dataset directory written by
/// [`write_dataset`]: the manifest hash must match its config, the splits
/// must not share seeds, every manifest entry needs its annotation row and
/// vice versa, and all class names must be known.
pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let man_path = dir.join("manifest.json");
    let man_bytes = fs::read(&man_path).map_err(|e| Error::io(&man_path, e))?;
    let manifest: Manifest = serde_json::from_slice(&man_bytes)?;
    manifest.config.validate()?;
    if config_hash(&manifest.config) != manifest.config_hash {
        return Err(Error::DatasetMismatch {
            message: "manifest config hash does not match its config".into(),
        });
    }
    if manifest.entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut seen_seeds = HashMap::new();
    for entry in &manifest.entries {
        if let Some(other) = seen_seeds.insert(entry.seed, entry.split) {
            if other != entry.split {
                return Err(Error::DatasetMismatch {
                    message: format!("seed {} appears in both splits", entry.seed),
                });
            }
            return Err(Error::DatasetMismatch {
                message: format!("seed {} appears twice in the manifest", entry.seed),
            });
        }
    }

    let ann_path = dir.join("annotations.jsonl");
    let file = fs::File::open(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    let mut by_stem: HashMap<String, Vec<GroundTruth>> = HashMap::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(&ann_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: AnnotationRow = serde_json::from_str(&line)?;
        for gt in &row.objects {
            if !manifest.class_names.iter().any(|n| *n == gt.class) {
                return Err(Error::DatasetMismatch {
                    message: format!(
                        "annotation for '{}' uses unknown class '{}'",
                        row.image, gt.class
                    ),
                });
            }
        }
        if by_stem.insert(row.image.clone(), row.objects).is_some() {
            return Err(Error::DatasetMismatch {
                message: format!("duplicate annotation row for '{}'", row.image),
            });
        }
    }

    let known: std::collections::HashSet<&str> =
        manifest.entries.iter().map(|e| e.image.as_str()).collect();
    if let Some(stray) = by_stem.keys().find(|stem| !known.contains(stem.as_str())) {
        return Err(Error::DatasetMismatch {
            message: format!("annotations reference '{stray}' which is not in the manifest"),
        });
    }

    let mut scenes = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let Some(objects) = by_stem.remove(&entry.image) else {
            return Err(Error::UnannotatedSample { stem: entry.image.clone() });
        };
        if objects.len() != entry.objects {
            return Err(Error::DatasetMismatch {
                message: format!(
                    "'{}' has {} annotated objects but the manifest promises {}",
                    entry.image,
                    objects.len(),
                    entry.objects
                ),
            });
        }
        scenes.push(SceneRecord {
            stem: entry.image.clone(),
            seed: entry.seed,
            split: entry.split,
            objects,
        });
    }

    Ok(LoadedDataset { manifest, scenes })
}
