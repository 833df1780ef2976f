//! Manifest of artifact hashes and the sample-grid image dump.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dpntk_core::data::LabeledDataset;

use crate::{CliError, Context};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the manifest's directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: serde_json::Value,
    pub artifacts: Vec<ArtifactEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).context(&format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .context(&format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .context("listing output directory")?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Hash every file under `dir` (except an existing manifest) and write `manifest.json`.
pub fn write_manifest(dir: &Path, config: serde_json::Value) -> Result<Manifest, CliError> {
    let mut files = Vec::new();
    collect(dir, &mut files)?;
    let mut artifacts = Vec::new();
    for f in files {
        let rel = f.strip_prefix(dir).expect("under dir");
        if rel == Path::new(MANIFEST) {
            continue;
        }
        let path = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        artifacts.push(ArtifactEntry {
            path,
            bytes: fs::metadata(&f).context("reading artifact size")?.len(),
            sha256: sha256_file(&f)?,
        });
    }
    let manifest = Manifest { config, artifacts };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(dir.join(MANIFEST), text).context("writing manifest")?;
    Ok(manifest)
}

/// Entries whose file is missing or whose hash no longer matches.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(dir.join(MANIFEST)).context("reading manifest")?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("manifest: {e}")))?;
    let mut bad = Vec::new();
    for a in &manifest.artifacts {
        let p = dir.join(&a.path);
        if !p.is_file() || sha256_file(&p)? != a.sha256 {
            bad.push(a.path.clone());
        }
    }
    Ok(bad)
}

/// Binary PGM of up to `per_class` images per class, one class per grid row,
/// with a one-pixel black gutter. Image side is `√p` when `p` is square,
/// otherwise each image is a `1×p` strip.
pub fn sample_grid_pgm(data: &LabeledDataset, per_class: usize) -> Vec<u8> {
    let p = data.feature_dim();
    let side = (p as f64).sqrt().round() as usize;
    let (h, w) = if side * side == p { (side, side) } else { (1, p) };
    let c = data.num_classes();
    let labels = data.label_indices();
    let width = per_class * (w + 1) + 1;
    let height = c * (h + 1) + 1;
    let mut px = vec![0u8; width * height];
    for k in 0..c {
        let rows = (0..data.len()).filter(|&i| labels[i] == k).take(per_class);
        for (slot, i) in rows.enumerate() {
            let img = data.features().row(i);
            for r in 0..h {
                for col in 0..w {
                    let v = (img[r * w + col].clamp(0.0, 1.0) * 255.0).round() as u8;
                    let y = 1 + k * (h + 1) + r;
                    let x = 1 + slot * (w + 1) + col;
                    px[y * width + x] = v;
                }
            }
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(px);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use dpntk_core::data::{Schema, SplitTag};
    use dpntk_core::Tensor;

    #[test]
    fn manifest_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "hello").unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("sub/b.bin"), [1u8, 2, 3]).unwrap();
        let m = write_manifest(dir.path(), serde_json::json!({"seed": 1})).unwrap();
        assert_eq!(m.artifacts.len(), 2);
        assert_eq!(m.artifacts[1].path, "sub/b.bin");
        assert_eq!(
            m.artifacts[0].sha256,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        assert!(verify_manifest(dir.path()).unwrap().is_empty());
        fs::write(dir.path().join("a.txt"), "hellO").unwrap();
        assert_eq!(verify_manifest(dir.path()).unwrap(), vec!["a.txt".to_string()]);
    }

    #[test]
    fn pgm_layout() {
        let schema = Schema::image(2, 2, vec!["0".into(), "1".into()]);
        let x = Tensor::matrix(2, 4, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.5, 0.5]).unwrap();
        let d = LabeledDataset::from_indices(x, &[0, 1], schema, SplitTag::Synthetic).unwrap();
        let pgm = sample_grid_pgm(&d, 3);
        let header = b"P5\n10 7\n255\n";
        assert!(pgm.starts_with(header));
        assert_eq!(pgm.len(), header.len() + 70);
        let body = &pgm[header.len()..];
        assert_eq!(body[10 + 1], 255);
        assert_eq!(body[4 * 10 + 1], 128);
    }
}
