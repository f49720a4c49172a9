//! Difference hashing and exact-duplicate removal against reference corpora.
//!
//! Hash contract: convert to luma (`0.299 R + 0.587 G + 0.114 B`, or the gray value
//! itself), resample bilinearly to 9 columns by 8 rows with pixel-center alignment and
//! edge clamping, then set bit `(r, c)` when `pixel(r, c) < pixel(r, c + 1)`. Bits are
//! packed row-major with `(0, 0)` in the most significant position.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::DynamicImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const COLS: usize = 9;
const ROWS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DHash64(pub u64);

impl DHash64 {
    pub fn hamming(self, other: DHash64) -> u32 {
        (self.0 ^ other.0).count_ones()
    }
}

impl fmt::Display for DHash64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for DHash64 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 16 {
            return Err(Error::Degenerate(format!("hash `{s}` is not 16 hex digits")));
        }
        u64::from_str_radix(s, 16)
            .map(DHash64)
            .map_err(|_| Error::Degenerate(format!("hash `{s}` is not hex")))
    }
}

fn bilinear(src: &[f64], width: usize, height: usize) -> [[f64; COLS]; ROWS] {
    let coord = |out: usize, out_len: usize, in_len: usize| {
        let x = ((out as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).max(0.0);
        let lo = (x.floor() as usize).min(in_len - 1);
        let hi = (lo + 1).min(in_len - 1);
        (lo, hi, x - lo as f64)
    };
    let mut grid = [[0.0; COLS]; ROWS];
    for (r, row) in grid.iter_mut().enumerate() {
        let (y0, y1, fy) = coord(r, ROWS, height);
        for (c, cell) in row.iter_mut().enumerate() {
            let (x0, x1, fx) = coord(c, COLS, width);
            let at = |y: usize, x: usize| src[y * width + x];
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            *cell = top * (1.0 - fy) + bottom * fy;
        }
    }
    grid
}

/// Hash of a row-major luma raster.
pub fn dhash_luma(width: usize, height: usize, luma: &[f64]) -> Result<DHash64> {
    if width == 0 || height == 0 {
        return Err(Error::Empty("raster has no pixels".into()));
    }
    if luma.len() != width * height {
        return Err(Error::Shape(format!("{} values for a {width}x{height} raster", luma.len())));
    }
    let grid = bilinear(luma, width, height);
    let mut bits = 0u64;
    for row in &grid {
        for c in 0..COLS - 1 {
            bits = (bits << 1) | u64::from(row[c] < row[c + 1]);
        }
    }
    Ok(DHash64(bits))
}

/// Hash of an interleaved 8-bit RGB raster.
pub fn dhash_rgb(width: usize, height: usize, rgb: &[u8]) -> Result<DHash64> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Shape(format!("{} bytes for a {width}x{height} RGB raster", rgb.len())));
    }
    let luma: Vec<f64> = rgb
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    dhash_luma(width, height, &luma)
}

pub fn dhash_image(img: &DynamicImage) -> Result<DHash64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        dhash_rgb(w, h, rgb.as_raw())
    } else {
        let gray = img.to_luma8();
        let luma: Vec<f64> = gray.as_raw().iter().map(|&v| v as f64).collect();
        dhash_luma(w, h, &luma)
    }
}

pub fn dhash_file(path: impl AsRef<Path>) -> Result<DHash64> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?;
    dhash_image(&img)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
}

/// Reads an `id,path` manifest. Relative paths resolve against `base`.
pub fn read_manifest<R: Read>(input: R, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "id" || &headers[1] != "path" {
        return Err(Error::Parse { path: base.to_path_buf(), line: 1, message: "expected header `id,path`".into() });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let p = PathBuf::from(&rec[1]);
        out.push(ManifestEntry {
            id: rec[0].to_string(),
            path: if p.is_absolute() { p } else { base.join(p) },
        });
    }
    Ok(out)
}

pub fn read_manifest_file(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    read_manifest(std::io::BufReader::new(file), base)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupConfig {
    /// Also remove candidates within this Hamming distance. Unset means exact match only.
    pub max_hamming: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Removal {
    pub id: String,
    pub matched_reference: String,
    pub distance: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DedupOutcome {
    pub kept: Vec<String>,
    pub removed: Vec<Removal>,
    /// Unreadable images; such candidates are neither kept nor removed.
    pub warnings: Vec<String>,
    pub candidate_hashes: Vec<(String, DHash64)>,
}

/// Splits hashed candidates into kept and removed against hashed references.
pub fn dedup_hashes(
    candidates: &[(String, DHash64)],
    references: &[(String, DHash64)],
    config: &DedupConfig,
) -> DedupOutcome {
    let mut exact: HashMap<DHash64, &str> = HashMap::new();
    for (id, h) in references {
        exact.entry(*h).or_insert(id.as_str());
    }
    let mut out = DedupOutcome { candidate_hashes: candidates.to_vec(), ..Default::default() };
    for (id, h) in candidates {
        let hit = exact.get(h).map(|r| (r.to_string(), 0)).or_else(|| {
            let max = config.max_hamming?;
            references
                .iter()
                .map(|(r, rh)| (r, h.hamming(*rh)))
                .filter(|&(_, d)| d <= max)
                .min_by_key(|&(_, d)| d)
                .map(|(r, d)| (r.clone(), d))
        });
        match hit {
            Some((matched_reference, distance)) => out.removed.push(Removal { id: id.clone(), matched_reference, distance }),
            None => out.kept.push(id.clone()),
        }
    }
    out
}

fn hash_all(entries: &[ManifestEntry], warnings: &mut Vec<String>) -> Vec<(String, DHash64)> {
    entries
        .iter()
        .filter_map(|e| match dhash_file(&e.path) {
            Ok(h) => Some((e.id.clone(), h)),
            Err(err) => {
                warnings.push(format!("{}: {err}", e.id));
                None
            }
        })
        .collect()
}

/// Hashes every image in the manifests and removes candidates that match a reference.
pub fn dedup(candidates: &[ManifestEntry], references: &[Vec<ManifestEntry>], config: &DedupConfig) -> DedupOutcome {
    let mut warnings = Vec::new();
    let cands = hash_all(candidates, &mut warnings);
    let refs: Vec<(String, DHash64)> = references.iter().flat_map(|m| hash_all(m, &mut warnings)).collect();
    let mut out = dedup_hashes(&cands, &refs, config);
    out.warnings = warnings;
    out
}

/// `id,hash_hex` rows.
pub fn write_hashes_csv<W: Write>(hashes: &[(String, DHash64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "hash_hex"])?;
    for (id, h) in hashes {
        w.write_record([id.clone(), h.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
