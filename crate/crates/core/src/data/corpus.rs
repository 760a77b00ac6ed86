//! Paired HR/LR corpus construction and the manifest format.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::degrade::degrade;
use super::image_io::{crop, load_rgb, save_rgb};
use crate::error::{io_err, GtfmnError, Result};

pub const MANIFEST_NAME: &str = "manifest.tsv";

/// Per-image darkening exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSpec {
    Fixed(f64),
    /// Drawn uniformly from `[lo, hi]` for each image.
    Uniform { lo: f64, hi: f64 },
}

impl Default for GammaSpec {
    fn default() -> Self {
        GammaSpec::Fixed(2.2)
    }
}

impl fmt::Display for GammaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaSpec::Fixed(g) => write!(f, "{g}"),
            GammaSpec::Uniform { lo, hi } => write!(f, "{lo}:{hi}"),
        }
    }
}

impl FromStr for GammaSpec {
    type Err = String;

    /// `2.2` or `1.8:2.6`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("gamma {t:?}: {e}"));
        match s.split_once(':') {
            Some((lo, hi)) => Ok(GammaSpec::Uniform { lo: num(lo)?, hi: num(hi)? }),
            None => Ok(GammaSpec::Fixed(num(s)?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationSpec {
    pub gamma: GammaSpec,
    pub scale: usize,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            gamma: GammaSpec::default(),
            scale: 2,
        }
    }
}

impl DegradationSpec {
    pub fn new(gamma: GammaSpec, scale: usize) -> Self {
        Self { gamma, scale }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.scale, 2 | 4) {
            return Err(GtfmnError::Config(format!("scale must be 2 or 4, got {}", self.scale)));
        }
        let ok = |g: f64| g > 0.0 && g.is_finite();
        let valid = match self.gamma {
            GammaSpec::Fixed(g) => ok(g),
            GammaSpec::Uniform { lo, hi } => ok(lo) && ok(hi) && lo <= hi,
        };
        if !valid {
            return Err(GtfmnError::Config(format!(
                "gamma must be positive (and lo ≤ hi for a range), got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Gamma for the `index`-th image in filename order. Each index gets
    /// its own RNG stream so the value does not depend on which other
    /// images decode successfully.
    pub fn gamma_for(&self, seed: u64, index: usize) -> f64 {
        match self.gamma {
            GammaSpec::Fixed(g) => g,
            GammaSpec::Uniform { lo, hi } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(index as u64);
                if lo == hi {
                    lo
                } else {
                    rng.gen_range(lo..=hi)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub hr_path: PathBuf,
    pub lr_path: PathBuf,
    pub gamma: f64,
}

/// A parsed manifest. Entry paths are resolved against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub scale: Option<usize>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn manifest_err(path: &Path, message: impl Into<String>) -> GtfmnError {
    GtfmnError::Manifest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads `id<TAB>hr_path<TAB>lr_path<TAB>gamma` lines; `#` lines are
/// comments, except that a `# ... scale=S ...` header records the scale.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    let mut scale = None;
    for (lineno, line) in text.lines().enumerate() {
        if let Some(comment) = line.strip_prefix('#') {
            for tok in comment.split_whitespace() {
                if let Some(v) = tok.strip_prefix("scale=") {
                    scale = v.parse().ok();
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let &[id, hr, lr, gamma] = fields.as_slice() else {
            return Err(manifest_err(
                path,
                format!("line {}: expected 4 tab-separated fields, got {}", lineno + 1, fields.len()),
            ));
        };
        let gamma: f64 = gamma
            .trim()
            .parse()
            .map_err(|e| manifest_err(path, format!("line {}: gamma {gamma:?}: {e}", lineno + 1)))?;
        entries.push(ManifestEntry {
            id: id.to_owned(),
            hr_path: root.join(hr),
            lr_path: root.join(lr),
            gamma,
        });
    }
    if entries.is_empty() {
        return Err(manifest_err(path, "no entries"));
    }
    Ok(Manifest {
        path: path.to_path_buf(),
        scale,
        entries,
    })
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(io_err(format!("listing {}", dir.display())))?;
    let mut files = Vec::new();
    for entry in rd {
        let entry = entry.map_err(io_err(format!("listing {}", dir.display())))?;
        let path = entry.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Degrades every decodable image in `hr_dir` and writes `hr/`, `lr/` and
/// `manifest.tsv` under `out_dir`. HR images are cropped to multiples of
/// the scale. Unreadable files are skipped with a warning.
pub fn build_corpus(hr_dir: &Path, spec: &DegradationSpec, out_dir: &Path, seed: u64) -> Result<Manifest> {
    spec.validate()?;
    let files = list_images(hr_dir)?;
    if files.is_empty() {
        return Err(GtfmnError::Input(format!("{} contains no files", hr_dir.display())));
    }
    let mut ids: Vec<String> = files
        .iter()
        .map(|p| p.file_stem().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    {
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != ids.len() {
            // Two files share a stem; keep the extension to disambiguate.
            ids = files
                .iter()
                .map(|p| p.file_name().unwrap_or_default().to_string_lossy().replace('.', "_"))
                .collect();
        }
    }
    for sub in ["hr", "lr"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(io_err(format!("creating {}", d.display())))?;
    }
    let s = spec.scale;

    let results: Vec<Result<Option<ManifestEntry>>> = files
        .par_iter()
        .zip(ids.par_iter())
        .enumerate()
        .map(|(index, (file, id))| {
            let hr = match load_rgb::<f32>(file) {
                Ok(img) => img,
                Err(e) => {
                    log::warn!("skipping {}: {e}", file.display());
                    return Ok(None);
                }
            };
            let (h, w) = (hr.shape()[1] / s * s, hr.shape()[2] / s * s);
            if h == 0 || w == 0 {
                log::warn!("skipping {}: smaller than the scale factor", file.display());
                return Ok(None);
            }
            let hr = crop(&hr, 0, 0, h, w)?;
            let gamma = spec.gamma_for(seed, index);
            let lr = degrade(&hr, gamma, s)?;
            let hr_rel = PathBuf::from("hr").join(format!("{id}.png"));
            let lr_rel = PathBuf::from("lr").join(format!("{id}.png"));
            save_rgb(&out_dir.join(&hr_rel), &hr)?;
            save_rgb(&out_dir.join(&lr_rel), &lr)?;
            Ok(Some(ManifestEntry {
                id: id.clone(),
                hr_path: hr_rel,
                lr_path: lr_rel,
                gamma,
            }))
        })
        .collect();

    let mut entries = Vec::new();
    for r in results {
        if let Some(e) = r? {
            entries.push(e);
        }
    }
    if entries.is_empty() {
        return Err(GtfmnError::Input(format!(
            "no decodable images in {}",
            hr_dir.display()
        )));
    }

    let mut text = format!(
        "# gtfmn corpus scale={} gamma={} seed={seed}\n# id\thr_path\tlr_path\tgamma\n",
        spec.scale, spec.gamma
    );
    for e in &entries {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.id,
            e.hr_path.display(),
            e.lr_path.display(),
            e.gamma
        ));
    }
    let manifest_path = out_dir.join(MANIFEST_NAME);
    fs::write(&manifest_path, text).map_err(io_err(format!("writing {}", manifest_path.display())))?;
    read_manifest(&manifest_path)
}
