//! Reproducible test images.
//!
//! A manifest lists entries one per line as whitespace-separated
//! `key=value` pairs; blank lines and `#` comments are ignored:
//!
//! ```text
//! name=checker   source=synthetic kind=checker seed=0 width=224 height=224
//! name=astronaut source=local path=photos/astronaut.png sha256=<hex> width=224 height=224
//! name=kodim23   source=url url=https://example.org/k.png sha256=<hex> width=768 height=512
//! ```
//!
//! Local paths are relative to the manifest's directory. URL entries are
//! cached as `<cache>/<sha256>.png` and re-verified on every read.

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imageio::{decode_image, ImageIoError};
use crate::model::{Gaussian2D, ImageBuffer, SplatSet};
use crate::render::render;

pub const SYNTHETIC_KINDS: [&str; 4] = ["gradient", "checker", "gaussian-blobs", "bandlimited-noise"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown synthetic image `{0}`")]
    UnknownName(String),
    #[error("checksum mismatch for `{name}`: expected {expected}, got {actual}")]
    ChecksumMismatch {
        name: String,
        expected: String,
        actual: String,
    },
    #[error("fetch failed for `{name}`: {reason}")]
    FetchFailed { name: String, reason: String },
    #[error("manifest line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("`{name}`: {source}")]
    Io {
        name: String,
        #[source]
        source: std::io::Error,
    },
    #[error("`{name}`: {source}")]
    Image {
        name: String,
        #[source]
        source: ImageIoError,
    },
    #[error("`{name}` is {actual_w}x{actual_h}, manifest says {width}x{height}")]
    SizeMismatch {
        name: String,
        width: u32,
        height: u32,
        actual_w: u32,
        actual_h: u32,
    },
}

type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Synthetic { kind: String, seed: u64 },
    LocalPath(PathBuf),
    Url(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusEntry {
    pub name: String,
    pub source: Source,
    /// Lowercase hex SHA-256 of the file bytes; required unless synthetic.
    pub checksum: Option<String>,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusManifest {
    /// Directory local paths are resolved against.
    pub base_dir: PathBuf,
    pub entries: Vec<CorpusEntry>,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            name: path.display().to_string(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| CorpusError::Parse { line: n + 1, message };
            let mut kv = HashMap::new();
            for tok in line.split_whitespace() {
                let (k, v) = tok
                    .split_once('=')
                    .ok_or_else(|| err(format!("expected key=value, got `{tok}`")))?;
                kv.insert(k, v);
            }
            let get = |k: &str| kv.get(k).copied().ok_or_else(|| err(format!("missing `{k}`")));
            let dim = |k: &str| -> Result<u32> {
                get(k)?
                    .parse()
                    .ok()
                    .filter(|&v: &u32| v >= 1)
                    .ok_or_else(|| err(format!("`{k}` must be a positive integer")))
            };
            let name = get("name")?.to_string();
            let source = match get("source")? {
                "synthetic" => Source::Synthetic {
                    kind: kv.get("kind").copied().unwrap_or(&name).to_string(),
                    seed: kv
                        .get("seed")
                        .map(|s| s.parse().map_err(|_| err(format!("bad seed `{s}`"))))
                        .transpose()?
                        .unwrap_or(0),
                },
                "local" => Source::LocalPath(PathBuf::from(get("path")?)),
                "url" => Source::Url(get("url")?.to_string()),
                other => return Err(err(format!("unknown source `{other}`"))),
            };
            let checksum = kv.get("sha256").map(|s| s.to_ascii_lowercase());
            if !matches!(source, Source::Synthetic { .. }) {
                match &checksum {
                    Some(c) if c.len() == 64 && c.bytes().all(|b| b.is_ascii_hexdigit()) => {}
                    _ => return Err(err("non-synthetic entries need a 64-digit sha256".into())),
                }
            }
            entries.push(CorpusEntry {
                name,
                source,
                checksum,
                width: dim("width")?,
                height: dim("height")?,
            });
        }
        Ok(Self { base_dir, entries })
    }

    /// Manifest of the four synthetic kinds at the given size.
    pub fn synthetic(width: u32, height: u32, seed: u64) -> Self {
        Self {
            base_dir: PathBuf::new(),
            entries: SYNTHETIC_KINDS
                .iter()
                .map(|k| CorpusEntry {
                    name: k.to_string(),
                    source: Source::Synthetic {
                        kind: k.to_string(),
                        seed,
                    },
                    checksum: None,
                    width,
                    height,
                })
                .collect(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn verify(name: &str, expected: &str, bytes: &[u8]) -> Result<()> {
    let actual = sha256_hex(bytes);
    if actual == expected {
        Ok(())
    } else {
        Err(CorpusError::ChecksumMismatch {
            name: name.to_string(),
            expected: expected.to_string(),
            actual,
        })
    }
}

fn fetch(name: &str, url: &str) -> Result<Vec<u8>> {
    let failed = |reason: String| CorpusError::FetchFailed {
        name: name.to_string(),
        reason,
    };
    let resp = ureq::get(url)
        .timeout(std::time::Duration::from_secs(30))
        .call()
        .map_err(|e| failed(e.to_string()))?;
    let mut bytes = Vec::new();
    resp.into_reader()
        .take(64 << 20)
        .read_to_end(&mut bytes)
        .map_err(|e| failed(e.to_string()))?;
    Ok(bytes)
}

fn load_entry(entry: &CorpusEntry, base: &Path, cache_dir: &Path) -> Result<ImageBuffer> {
    let name = entry.name.as_str();
    let io = |source| CorpusError::Io {
        name: name.to_string(),
        source,
    };
    let img = match &entry.source {
        Source::Synthetic { kind, seed } => generate_synthetic(kind, *seed, entry.width, entry.height)?,
        Source::LocalPath(p) => {
            let bytes = std::fs::read(base.join(p)).map_err(io)?;
            verify(name, entry.checksum.as_deref().unwrap_or(""), &bytes)?;
            decode(name, &bytes)?
        }
        Source::Url(url) => {
            let sum = entry.checksum.as_deref().unwrap_or("");
            let cached = cache_dir.join(format!("{sum}.png"));
            let bytes = match std::fs::read(&cached) {
                Ok(b) if sha256_hex(&b) == sum => b,
                _ => {
                    let b = fetch(name, url)?;
                    verify(name, sum, &b)?;
                    std::fs::create_dir_all(cache_dir).map_err(io)?;
                    let mut tmp = tempfile::NamedTempFile::new_in(cache_dir).map_err(io)?;
                    std::io::Write::write_all(&mut tmp, &b).map_err(io)?;
                    tmp.persist(&cached).map_err(|e| io(e.error))?;
                    b
                }
            };
            decode(name, &bytes)?
        }
    };
    if img.width != entry.width || img.height != entry.height {
        return Err(CorpusError::SizeMismatch {
            name: name.to_string(),
            width: entry.width,
            height: entry.height,
            actual_w: img.width,
            actual_h: img.height,
        });
    }
    Ok(img)
}

fn decode(name: &str, bytes: &[u8]) -> Result<ImageBuffer> {
    decode_image(bytes).map_err(|source| CorpusError::Image {
        name: name.to_string(),
        source,
    })
}

/// Materializes every entry, in manifest order. Any failure is fatal.
pub fn resolve(manifest: &CorpusManifest, cache_dir: &Path) -> Result<Vec<(String, ImageBuffer)>> {
    manifest
        .entries
        .par_iter()
        .map(|e| Ok((e.name.clone(), load_entry(e, &manifest.base_dir, cache_dir)?)))
        .collect()
}

/// Deterministic synthetic image of the named kind.
pub fn generate_synthetic(name: &str, seed: u64, width: u32, height: u32) -> Result<ImageBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f32, height as f32);
    match name {
        "gradient" => {
            let corners: Vec<[f32; 3]> = (0..4)
                .map(|_| [0; 3].map(|_: i32| rng.gen_range(0.1f32..0.9)))
                .collect();
            Ok(ImageBuffer::from_fn(width, height, |x, y| {
                let (u, v) = ((x as f32 + 0.5) / w, (y as f32 + 0.5) / h);
                let mut px = [0.0; 3];
                for c in 0..3 {
                    let top = corners[0][c] * (1.0 - u) + corners[1][c] * u;
                    let bot = corners[2][c] * (1.0 - u) + corners[3][c] * u;
                    px[c] = top * (1.0 - v) + bot * v;
                }
                px
            }))
        }
        "checker" => {
            let a = [0; 3].map(|_: i32| rng.gen_range(0.0f32..0.4));
            let b = [0; 3].map(|_: i32| rng.gen_range(0.6f32..1.0));
            let (sx, sy) = ((width / 8).max(1), (height / 8).max(1));
            Ok(ImageBuffer::from_fn(width, height, |x, y| {
                if (x / sx + y / sy) % 2 == 0 {
                    a
                } else {
                    b
                }
            }))
        }
        "gaussian-blobs" => Ok(render(&gaussian_blobs_truth(seed, width, height)).expect("valid set")),
        "bandlimited-noise" => {
            let mut img = ImageBuffer::zeros(width, height);
            for c in 0..3 {
                let waves: Vec<(f32, f32, f32, f32)> = (0..6)
                    .map(|_| {
                        (
                            rng.gen_range(-4.0f32..4.0),
                            rng.gen_range(-4.0f32..4.0),
                            rng.gen_range(0.0f32..std::f32::consts::TAU),
                            rng.gen_range(0.3f32..1.0),
                        )
                    })
                    .collect();
                for y in 0..height {
                    for x in 0..width {
                        let (u, v) = ((x as f32 + 0.5) / w, (y as f32 + 0.5) / h);
                        let s: f32 = waves
                            .iter()
                            .map(|(fx, fy, ph, amp)| amp * (std::f32::consts::TAU * (fx * u + fy * v) + ph).cos())
                            .sum();
                        img.data[(y * width + x) as usize * 3 + c] = s;
                    }
                }
                let chan = img.data.iter().skip(c).step_by(3);
                let (lo, hi) = chan.fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
                let span = (hi - lo).max(1e-6);
                for v in img.data.iter_mut().skip(c).step_by(3) {
                    *v = 0.05 + 0.9 * (*v - lo) / span;
                }
            }
            Ok(img)
        }
        other => Err(CorpusError::UnknownName(other.to_string())),
    }
}

/// Number of splats in the `gaussian-blobs` ground truth.
pub const BLOB_COUNT: usize = 12;

/// The splat set rendered by the `gaussian-blobs` generator. Colors are
/// scaled so the rendered image peaks at 0.95.
pub fn gaussian_blobs_truth(seed: u64, width: u32, height: u32) -> SplatSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b10b);
    let gaussians: Vec<Gaussian2D> = (0..BLOB_COUNT)
        .map(|_| {
            let mu = [rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)];
            let mut g = Gaussian2D::from_sigma(
                mu,
                [rng.gen_range(0.04..0.12), rng.gen_range(0.04..0.12)],
                [rng.gen_range(0.05..0.5), rng.gen_range(0.05..0.5), rng.gen_range(0.05..0.5)],
            );
            g.chol[1] = rng.gen_range(-0.03..0.03);
            g
        })
        .collect();
    let mut set = SplatSet::new(width, height, gaussians);
    let peak = render(&set)
        .expect("valid set")
        .data
        .iter()
        .fold(0.0f32, |m, &v| m.max(v)) as f64;
    if peak > 0.95 {
        for g in &mut set.gaussians {
            g.color = g.color.map(|c| c * 0.95 / peak);
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_deterministic_and_in_range() {
        for kind in SYNTHETIC_KINDS {
            let a = generate_synthetic(kind, 0, 48, 32).unwrap();
            let b = generate_synthetic(kind, 0, 48, 32).unwrap();
            assert_eq!(a, b, "{kind}");
            assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)), "{kind}");
            let c = generate_synthetic(kind, 1, 48, 32).unwrap();
            assert_ne!(a, c, "{kind}");
        }
        assert!(matches!(generate_synthetic("plaid", 0, 8, 8), Err(CorpusError::UnknownName(_))));
    }

    #[test]
    fn blobs_are_their_truth() {
        let img = generate_synthetic("gaussian-blobs", 4, 64, 64).unwrap();
        let truth = gaussian_blobs_truth(4, 64, 64);
        assert_eq!(render(&truth).unwrap(), img);
        assert!(img.data.iter().cloned().fold(0.0, f32::max) <= 0.95 + 1e-6);
    }

    #[test]
    fn manifest_parsing() {
        let text = "\
# corpus
name=c source=synthetic kind=checker seed=3 width=16 height=8
name=p source=local path=a/b.png sha256=AB00000000000000000000000000000000000000000000000000000000000000 width=4 height=4  # trailing
name=u source=url url=http://x/y.png sha256=0000000000000000000000000000000000000000000000000000000000000000 width=4 height=4
";
        let m = CorpusManifest::parse(text, PathBuf::from("/base")).unwrap();
        assert_eq!(m.entries.len(), 3);
        assert_eq!(
            m.entries[0].source,
            Source::Synthetic {
                kind: "checker".into(),
                seed: 3
            }
        );
        assert_eq!(m.entries[1].checksum.as_deref().unwrap().len(), 64);
        assert!(m.entries[1].checksum.as_deref().unwrap().starts_with("ab"));
        assert!(CorpusManifest::parse("name=x source=local path=a width=1 height=1", PathBuf::new()).is_err());
        assert!(CorpusManifest::parse("name=x source=synthetic width=0 height=1", PathBuf::new()).is_err());
        assert!(CorpusManifest::parse("garbage", PathBuf::new()).is_err());
    }

    #[test]
    fn synthetic_manifest_resolves_offline() {
        let m = CorpusManifest::synthetic(32, 32, 0);
        let imgs = resolve(&m, Path::new("/nonexistent-cache")).unwrap();
        let names: Vec<&str> = imgs.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, SYNTHETIC_KINDS);
    }
}
