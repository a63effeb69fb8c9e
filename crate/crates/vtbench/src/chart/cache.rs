//! On-disk chart cache: one lossless PNG per (instance, spec) plus a
//! line-delimited manifest.
//!
//! The manifest's `sha256` is the hash of the decoded RGB pixel buffer
//! (which the renderer guarantees is platform-stable), not of the PNG
//! container bytes. Re-running renders in memory, compares against what is
//! on disk, and rewrites only missing or mismatching files.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{render, ChartSpec, RasterImage};
use crate::dataset::{LabeledSeriesSet, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the cache root.
    pub path: String,
    /// SHA-256 of the raw RGB pixel buffer.
    pub sha256: String,
    pub spec: ChartSpec,
    pub instance_index: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub written: usize,
    pub skipped: usize,
}

pub fn cache_file_name(dataset: &str, split: Split, index: usize, spec: &ChartSpec) -> PathBuf {
    PathBuf::from(dataset)
        .join(split.to_string())
        .join(format!("{index}_{}.png", spec.file_token()))
}

/// Renders every (instance, spec) pair into `out_dir`, skipping files whose
/// on-disk pixels already match the deterministic render. Returns the full
/// manifest; also rewrites `<out_dir>/<dataset>/<split>/manifest.jsonl`.
pub fn render_cache(
    set: &LabeledSeriesSet,
    split: Split,
    specs: &[ChartSpec],
    out_dir: &Path,
) -> Result<Manifest> {
    for spec in specs {
        spec.validate()?;
    }
    let dataset = set.meta.name.clone();
    std::fs::create_dir_all(out_dir.join(&dataset).join(split.to_string()))?;

    let jobs: Vec<(usize, ChartSpec)> = (0..set.len())
        .flat_map(|i| specs.iter().map(move |s| (i, *s)))
        .collect();

    let results: Vec<Result<(ManifestEntry, bool)>> = jobs
        .par_iter()
        .map(|&(index, spec)| {
            let rel = cache_file_name(&dataset, split, index, &spec);
            let abs = out_dir.join(&rel);
            let img = render(&set.instances[index].values, &spec)?;
            let fresh_hash = img.pixel_sha256();
            let up_to_date = match read_png(&abs) {
                Ok(existing) => existing.pixel_sha256() == fresh_hash,
                Err(_) => false,
            };
            if !up_to_date {
                write_png(&abs, &img)?;
            }
            Ok((
                ManifestEntry {
                    path: rel.to_string_lossy().into_owned(),
                    sha256: fresh_hash,
                    spec,
                    instance_index: index,
                },
                !up_to_date,
            ))
        })
        .collect();

    // single-writer assembly after all workers complete
    let mut manifest = Manifest::default();
    for r in results {
        let (entry, wrote) = r?;
        if wrote {
            manifest.written += 1;
        } else {
            manifest.skipped += 1;
        }
        manifest.entries.push(entry);
    }
    manifest.entries.sort_by(|a, b| a.path.cmp(&b.path));

    let manifest_path = out_dir
        .join(&dataset)
        .join(split.to_string())
        .join("manifest.jsonl");
    let mut text = String::new();
    for e in &manifest.entries {
        text.push_str(&serde_json::to_string(e)?);
        text.push('\n');
    }
    let tmp = manifest_path.with_extension("jsonl.tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, &manifest_path)?;
    Ok(manifest)
}

pub fn write_png(path: &Path, img: &RasterImage) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let buf: image::RgbImage =
        image::ImageBuffer::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
            .expect("pixel buffer matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<RasterImage> {
    let img = image::open(path)?.into_rgb8();
    Ok(RasterImage {
        width: img.width() as usize,
        height: img.height() as usize,
        pixels: img.into_raw(),
    })
}

/// Loads a cached chart as raw RGB bytes, verifying dimensions.
pub fn load_cached_rgb(
    cache_dir: &Path,
    dataset: &str,
    split: Split,
    index: usize,
    spec: &ChartSpec,
) -> Result<Vec<u8>> {
    let path = cache_dir.join(cache_file_name(dataset, split, index, spec));
    let img = read_png(&path)?;
    let res = spec.resolution as usize;
    if img.width != res || img.height != res {
        return Err(Error::InvalidChartSpec(format!(
            "{}: cached image is {}x{}, expected {res}x{res}",
            path.display(),
            img.width,
            img.height
        )));
    }
    Ok(img.pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::{ChartType, ColorMode, LabelMode};
    use crate::dataset::{DatasetMeta, TimeSeriesInstance};

    fn tiny_set(n: usize) -> LabeledSeriesSet {
        LabeledSeriesSet {
            instances: (0..n)
                .map(|i| TimeSeriesInstance {
                    values: (0..12).map(|t| ((t + i) as f32 * 0.7).sin()).collect(),
                    label: i % 2,
                })
                .collect(),
            meta: DatasetMeta {
                name: "Tiny".into(),
                t_len: 12,
                n_classes: 2,
                raw_label_map: vec![(0.0, 0), (1.0, 1)],
                class_counts: vec![n / 2 + n % 2, n / 2],
            },
        }
    }

    fn sixteen_specs(res: u32) -> Vec<ChartSpec> {
        let mut specs = Vec::new();
        for ct in ChartType::ALL {
            for cm in [ColorMode::Mono, ColorMode::Color] {
                for lm in [LabelMode::WithLabel, LabelMode::NoLabel] {
                    specs.push(ChartSpec::new(ct, cm, lm, res));
                }
            }
        }
        specs
    }

    #[test]
    fn writes_16n_files_then_skips_on_rerun() {
        let dir = tempfile::tempdir().unwrap();
        let set = tiny_set(3);
        let specs = sixteen_specs(32);
        let m1 = render_cache(&set, Split::Train, &specs, dir.path()).unwrap();
        assert_eq!(m1.entries.len(), 16 * 3);
        assert_eq!(m1.written, 48);
        assert_eq!(m1.skipped, 0);

        let m2 = render_cache(&set, Split::Train, &specs, dir.path()).unwrap();
        assert_eq!(m2.written, 0);
        assert_eq!(m2.skipped, 48);
        let h1: Vec<_> = m1.entries.iter().map(|e| (&e.path, &e.sha256)).collect();
        let h2: Vec<_> = m2.entries.iter().map(|e| (&e.path, &e.sha256)).collect();
        assert_eq!(h1, h2);
    }

    #[test]
    fn regenerates_exactly_the_deleted_or_tampered_file() {
        let dir = tempfile::tempdir().unwrap();
        let set = tiny_set(2);
        let specs = vec![ChartSpec::new(
            ChartType::Line,
            ColorMode::Mono,
            LabelMode::NoLabel,
            32,
        )];
        render_cache(&set, Split::Test, &specs, dir.path()).unwrap();
        let victim = dir
            .path()
            .join(cache_file_name("Tiny", Split::Test, 1, &specs[0]));
        std::fs::remove_file(&victim).unwrap();
        let m = render_cache(&set, Split::Test, &specs, dir.path()).unwrap();
        assert_eq!(m.written, 1);
        assert_eq!(m.skipped, 1);
        assert!(victim.is_file());

        // tampering (wrong pixels) also triggers a rewrite
        let blank = RasterImage::blank(32, 32);
        write_png(&victim, &blank).unwrap();
        let m = render_cache(&set, Split::Test, &specs, dir.path()).unwrap();
        assert_eq!(m.written, 1);
        let fixed = read_png(&victim).unwrap();
        assert_ne!(fixed.count_non_white(), 0);
    }

    #[test]
    fn png_round_trip_preserves_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let img = render(
            &[0.0f32, 2.0, 1.0, -1.0],
            &ChartSpec::new(ChartType::Area, ColorMode::Color, LabelMode::WithLabel, 48),
        )
        .unwrap();
        let path = dir.path().join("x.png");
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back, img);
    }
}
