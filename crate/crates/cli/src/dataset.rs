//! Scene discovery, deterministic train/validation splitting, and batch
//! assembly for the training loop.
//!
//! A scene is a `<stem>.lms` stack with a `<stem>.pgm` ground-truth mask
//! beside it. A `@group` suffix on the stem (for example
//! `lake-east-07@70m.lms`) tags the scene's altitude group; scenes without
//! one fall into the group `all`.

use std::ffi::OsStr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ludvision::model::Model;
use ludvision::raster::{read_mask, read_raster, LabelMask, MultispectralImage, Rect};
use ludvision::tensor::Tensor4;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// 64-bit FNV-1a, the hash behind the train/validation assignment.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// The group tag of a file stem: the text after the last `@`, or `all`.
pub fn group_label(stem: &str) -> &str {
    match stem.rsplit_once('@') {
        Some((_, group)) if !group.is_empty() => group,
        _ => "all",
    }
}

/// One discovered scene, not yet loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub stem: String,
    pub group: String,
    pub stack: PathBuf,
    pub mask: PathBuf,
}

fn utf8_stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(OsStr::to_str)
        .map(str::to_string)
        .ok_or_else(|| anyhow!("non-UTF-8 file name {}", path.display()))
}

/// Finds every `.lms`/`.pgm` scene pair under `dir`, sorted by stem. A stack
/// without its mask is an error; stray masks are ignored.
pub fn scan_pairs(dir: &Path) -> Result<Vec<ScenePair>> {
    let entries =
        std::fs::read_dir(dir).with_context(|| format!("scanning {}", dir.display()))?;
    let mut pairs = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(OsStr::to_str) != Some("lms") {
            continue;
        }
        let stem = utf8_stem(&path)?;
        let mask = path.with_extension("pgm");
        if !mask.is_file() {
            bail!("{} has no ground-truth mask {}", path.display(), mask.display());
        }
        pairs.push(ScenePair {
            group: group_label(&stem).to_string(),
            stem,
            stack: path,
            mask,
        });
    }
    pairs.sort_by(|a, b| a.stem.cmp(&b.stem));
    Ok(pairs)
}

/// Finds every `.pgm` mask under `dir`, sorted by stem.
pub fn scan_masks(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries =
        std::fs::read_dir(dir).with_context(|| format!("scanning {}", dir.display()))?;
    let mut masks = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(OsStr::to_str) == Some("pgm") {
            masks.push((utf8_stem(&path)?, path));
        }
    }
    masks.sort();
    Ok(masks)
}

/// Deterministic 80/20-style split, stratified by group: within each group
/// the scenes are ordered by `(fnv1a64(stem), stem)` and the trailing
/// `round(n * val_fraction)` of them validate. Every non-empty group keeps
/// at least one training scene.
pub fn split_pairs(
    pairs: &[ScenePair],
    val_fraction: f64,
) -> (Vec<&ScenePair>, Vec<&ScenePair>) {
    let mut groups: Vec<(&str, Vec<&ScenePair>)> = Vec::new();
    for pair in pairs {
        match groups.iter_mut().find(|(name, _)| *name == pair.group) {
            Some((_, members)) => members.push(pair),
            None => groups.push((&pair.group, vec![pair])),
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (_, mut members) in groups {
        members.sort_by(|a, b| {
            (fnv1a64(a.stem.as_bytes()), &a.stem).cmp(&(fnv1a64(b.stem.as_bytes()), &b.stem))
        });
        let n = members.len();
        let k = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1));
        val.extend(members.split_off(n - k));
        train.extend(members);
    }
    train.sort_by(|a, b| a.stem.cmp(&b.stem));
    val.sort_by(|a, b| a.stem.cmp(&b.stem));
    (train, val)
}

/// A scene loaded into memory.
pub struct Scene {
    pub stem: String,
    pub group: String,
    pub image: MultispectralImage,
    pub mask: LabelMask,
}

pub fn load_scene(pair: &ScenePair) -> Result<Scene> {
    let image =
        read_raster(&pair.stack).with_context(|| format!("reading {}", pair.stack.display()))?;
    let mask =
        read_mask(&pair.mask).with_context(|| format!("reading {}", pair.mask.display()))?;
    if (mask.width, mask.height) != (image.width(), image.height()) {
        bail!(
            "{}: mask is {}x{} but the stack is {}x{}",
            pair.stem,
            mask.width,
            mask.height,
            image.width(),
            image.height()
        );
    }
    Ok(Scene {
        stem: pair.stem.clone(),
        group: pair.group.clone(),
        image,
        mask,
    })
}

fn flip_rows<T>(data: &mut [T], width: usize) {
    for row in data.chunks_mut(width) {
        row.reverse();
    }
}

fn flip_columns<T>(data: &mut [T], width: usize, height: usize) {
    for y in 0..height / 2 {
        let (top, rest) = data.split_at_mut((height - 1 - y) * width);
        top[y * width..(y + 1) * width].swap_with_slice(&mut rest[..width]);
    }
}

fn flip_window(input: &mut Tensor4, mask: &mut LabelMask, horizontal: bool, vertical: bool) {
    let [n, c, h, w] = input.dims();
    debug_assert_eq!(n, 1);
    for ch in 0..c {
        let plane = input.plane_mut(0, ch);
        if horizontal {
            flip_rows(plane, w);
        }
        if vertical {
            flip_columns(plane, w, h);
        }
    }
    if horizontal {
        flip_rows(&mut mask.data, mask.width);
    }
    if vertical {
        flip_columns(&mut mask.data, mask.width, mask.height);
    }
}

/// Assembles one training batch: for each scene index a random `crop`-sized
/// window, standardized by the model's stored statistics, with optional
/// random flips. Returns the stacked input and the matching mask crops.
pub fn sample_batch(
    model: &Model,
    scenes: &[Scene],
    picks: &[usize],
    crop: usize,
    flip_h: bool,
    flip_v: bool,
    rng: &mut ChaCha20Rng,
) -> Result<(Tensor4, Vec<LabelMask>)> {
    let channels = model.config().in_channels;
    let mut batch = Tensor4::zeros([picks.len(), channels, crop, crop]);
    let mut masks = Vec::with_capacity(picks.len());
    for (slot, &idx) in picks.iter().enumerate() {
        let scene = &scenes[idx];
        if scene.image.width() < crop || scene.image.height() < crop {
            bail!(
                "{}: scene is {}x{}, smaller than crop_size {}",
                scene.stem,
                scene.image.width(),
                scene.image.height(),
                crop
            );
        }
        let x0 = rng.gen_range(0..=scene.image.width() - crop);
        let y0 = rng.gen_range(0..=scene.image.height() - crop);
        let mut window = model.standardized_window(&scene.image, x0, y0, crop, crop)?;
        let mut mask = scene.mask.crop(Rect::new(x0, y0, crop, crop)?)?;
        let do_h = flip_h && rng.gen_bool(0.5);
        let do_v = flip_v && rng.gen_bool(0.5);
        if do_h || do_v {
            flip_window(&mut window, &mut mask, do_h, do_v);
        }
        for ch in 0..channels {
            batch.plane_mut(slot, ch).copy_from_slice(window.plane(0, ch));
        }
        masks.push(mask);
    }
    Ok((batch, masks))
}
