//! Embedding container: the `OMPR` binary format, its JSON manifest sidecar,
//! validation, and L2 normalization.
//!
//! Layout of an `.ompr` file (all integers little-endian):
//!
//! ```text
//! magic    4 bytes   "OMPR"
//! version  u32       FORMAT_VERSION
//! side     u8        0 = probe, 1 = gallery
//! dim      u32
//! count    u64
//! ids      count x (u32 byte length, UTF-8 bytes)
//! payload  count x dim x f32 (IEEE-754, row-major)
//! ```
//!
//! The manifest lives next to the binary file at `<path>.json` and carries the
//! SHA-256 of the complete binary file in its `checksum` field.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"OMPR";
pub const FORMAT_VERSION: u32 = 1;

/// Rows whose L2 norm falls below this cannot be normalized.
pub const ZERO_NORM_THRESHOLD: f64 = 1e-12;

/// Allowed deviation of a stored row norm from 1.0 before `validate` flags it.
pub const NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("row {0} has zero norm and cannot be normalized")]
    ZeroVectorRow(usize),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("bad magic bytes {0:?}, expected \"OMPR\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("checksum mismatch: manifest says {expected}, payload hashes to {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("truncated payload: needed {needed} bytes at offset {offset}, file has {len}")]
    TruncatedPayload {
        offset: usize,
        needed: usize,
        len: usize,
    },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Probe,
    Gallery,
}

impl Side {
    fn to_byte(self) -> u8 {
        match self {
            Side::Probe => 0,
            Side::Gallery => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Side::Probe),
            1 => Some(Side::Gallery),
            _ => None,
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Probe => "probe",
            Side::Gallery => "gallery",
        })
    }
}

/// Checkpoint metadata attached to every embedding file and results row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub name: String,
    pub family: String,
    pub params_millions: f64,
    pub pretrain_dataset: String,
    pub resolution_px: u32,
    pub backbone: String,
}

impl ModelCard {
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("model name is empty".into());
        }
        if !(self.params_millions.is_finite() && self.params_millions > 0.0) {
            return Err(format!(
                "{}: params_millions must be positive, got {}",
                self.name, self.params_millions
            ));
        }
        if self.resolution_px == 0 {
            return Err(format!("{}: resolution_px must be positive", self.name));
        }
        Ok(())
    }
}

/// Sidecar metadata. Serialized flat: the model card keys sit next to
/// `side`, `checksum` and `created_at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub model: ModelCard,
    pub side: Side,
    /// Seconds since the Unix epoch.
    #[serde(default)]
    pub created_at: u64,
    /// Lowercase hex SHA-256 of the binary file.
    #[serde(default)]
    pub checksum: String,
}

impl Manifest {
    pub fn new(model: ModelCard, side: Side) -> Self {
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            model,
            side,
            created_at,
            checksum: String::new(),
        }
    }
}

/// A set of identified fixed-dimension vectors for one side of a retrieval
/// problem. Immutable once built; the constructor only checks shape, use
/// [`validate`] for content checks.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    side: Side,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>, side: Side) -> Result<Self> {
        if dim == 0 {
            return Err(StoreError::InvalidMatrix("dim must be positive".into()));
        }
        if dim > u32::MAX as usize {
            return Err(StoreError::InvalidMatrix(format!("dim {dim} exceeds u32")));
        }
        if data.len() != ids.len() * dim {
            return Err(StoreError::InvalidMatrix(format!(
                "{} ids x dim {} needs {} values, got {}",
                ids.len(),
                dim,
                ids.len() * dim,
                data.len()
            )));
        }
        Ok(Self {
            ids,
            dim,
            data,
            side,
        })
    }

    /// Builds a matrix from per-row vectors.
    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f32>], side: Side) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.len() != ids.len() {
            return Err(StoreError::InvalidMatrix(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(StoreError::InvalidMatrix(format!(
                "row {bad} has length {}, expected {dim}",
                rows[bad].len()
            )));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(ids, dim, data, side)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn with_side(mut self, side: Side) -> Self {
        self.side = side;
        self
    }
}

fn row_norm(row: &[f32]) -> f64 {
    row.iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

/// Scales every row to unit L2 norm. Norms are computed in f64.
pub fn l2_normalize(matrix: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut data = Vec::with_capacity(matrix.data.len());
    for (i, row) in matrix.rows().enumerate() {
        let norm = row_norm(row);
        if norm.is_nan() || norm < ZERO_NORM_THRESHOLD {
            return Err(StoreError::ZeroVectorRow(i));
        }
        data.extend(row.iter().map(|&x| (f64::from(x) / norm) as f32));
    }
    Ok(EmbeddingMatrix {
        ids: matrix.ids.clone(),
        dim: matrix.dim,
        data,
        side: matrix.side,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    /// Each id that occurs more than once, listed once.
    pub duplicate_ids: Vec<String>,
    /// (row, col) of every NaN or infinite entry.
    pub non_finite: Vec<(usize, usize)>,
    /// (row, norm) of rows whose norm deviates from 1 by more than [`NORM_TOLERANCE`].
    pub norm_deviations: Vec<(usize, f64)>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.duplicate_ids.is_empty() && self.non_finite.is_empty() && self.norm_deviations.is_empty()
    }

    pub fn findings(&self) -> usize {
        self.duplicate_ids.len() + self.non_finite.len() + self.norm_deviations.len()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_clean() {
            return f.write_str("clean");
        }
        let mut parts = Vec::new();
        if !self.duplicate_ids.is_empty() {
            parts.push(format!("duplicate ids: {}", self.duplicate_ids.join(", ")));
        }
        if let Some(&(r, c)) = self.non_finite.first() {
            parts.push(format!(
                "{} non-finite entries (first at row {r}, col {c})",
                self.non_finite.len()
            ));
        }
        if let Some(&(r, n)) = self.norm_deviations.first() {
            parts.push(format!(
                "{} rows off unit norm (first: row {r}, norm {n:.6})",
                self.norm_deviations.len()
            ));
        }
        f.write_str(&parts.join("; "))
    }
}

pub fn validate(matrix: &EmbeddingMatrix) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut seen = HashSet::new();
    let mut reported = HashSet::new();
    for id in &matrix.ids {
        if !seen.insert(id.as_str()) && reported.insert(id.as_str()) {
            report.duplicate_ids.push(id.clone());
        }
    }

    for (r, row) in matrix.rows().enumerate() {
        let mut finite = true;
        for (c, x) in row.iter().enumerate() {
            if !x.is_finite() {
                report.non_finite.push((r, c));
                finite = false;
            }
        }
        if finite {
            let norm = row_norm(row);
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                report.norm_deviations.push((r, norm));
            }
        }
    }
    report
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Serializes a matrix to the binary layout described in the module docs.
pub fn encode(matrix: &EmbeddingMatrix) -> Vec<u8> {
    let id_bytes: usize = matrix.ids.iter().map(|id| 4 + id.len()).sum();
    let mut buf = Vec::with_capacity(21 + id_bytes + matrix.data.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(matrix.side.to_byte());
    buf.extend_from_slice(&(matrix.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(matrix.ids.len() as u64).to_le_bytes());
    for id in &matrix.ids {
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
    }
    for x in &matrix.data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(StoreError::TruncatedPayload {
                offset: self.pos,
                needed: n,
                len: self.bytes.len(),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses the binary layout. Does not check the manifest checksum.
pub fn decode(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = match cur.take(4) {
        Ok(m) => m.try_into().unwrap(),
        Err(_) => {
            let mut m = [0u8; 4];
            m[..bytes.len()].copy_from_slice(bytes);
            return Err(StoreError::BadMagic(m));
        }
    };
    if &magic != MAGIC {
        return Err(StoreError::BadMagic(magic));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let side_byte = cur.take(1)?[0];
    let side = Side::from_byte(side_byte)
        .ok_or_else(|| StoreError::Corrupt(format!("unknown side byte {side_byte}")))?;
    let dim = cur.u32()? as usize;
    let count = cur.u64()?;
    let count = usize::try_from(count)
        .map_err(|_| StoreError::Corrupt(format!("row count {count} does not fit in memory")))?;

    // Each id costs at least 4 bytes; reject absurd counts before allocating.
    if count > bytes.len().saturating_sub(cur.pos) / 4 {
        return Err(StoreError::TruncatedPayload {
            offset: cur.pos,
            needed: count.saturating_mul(4),
            len: bytes.len(),
        });
    }
    let mut ids = Vec::with_capacity(count);
    for i in 0..count {
        let len = cur.u32()? as usize;
        let raw = cur.take(len)?;
        let id = std::str::from_utf8(raw)
            .map_err(|e| StoreError::Corrupt(format!("id {i} is not UTF-8: {e}")))?;
        ids.push(id.to_owned());
    }
    let n_values = count
        .checked_mul(dim)
        .ok_or_else(|| StoreError::Corrupt("payload size overflows".into()))?;
    let payload = cur.take(n_values.checked_mul(4).ok_or_else(|| {
        StoreError::Corrupt("payload size overflows".into())
    })?)?;
    if cur.pos != bytes.len() {
        return Err(StoreError::Corrupt(format!(
            "{} trailing bytes after payload",
            bytes.len() - cur.pos
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(ids, dim, data, side)
}

pub fn checksum(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Writes `<destination>` and its manifest sidecar. The manifest's checksum
/// and side are filled in from the matrix; the stored manifest is returned.
pub fn write_embeddings(
    matrix: &EmbeddingMatrix,
    manifest: &Manifest,
    destination: &Path,
) -> Result<Manifest> {
    let report = validate(matrix);
    if !report.duplicate_ids.is_empty() || !report.non_finite.is_empty() {
        return Err(StoreError::InvalidMatrix(report.to_string()));
    }
    if manifest.side != matrix.side {
        return Err(StoreError::InvalidMatrix(format!(
            "manifest side {} does not match matrix side {}",
            manifest.side, matrix.side
        )));
    }
    manifest.model.check().map_err(StoreError::InvalidMatrix)?;

    let bytes = encode(matrix);
    let mut stored = manifest.clone();
    stored.checksum = checksum(&bytes);

    write_atomic(destination, &bytes)?;
    let sidecar = sidecar_path(destination);
    let mut json = serde_json::to_vec_pretty(&stored).map_err(|source| StoreError::Manifest {
        path: sidecar.clone(),
        source,
    })?;
    json.push(b'\n');
    write_atomic(&sidecar, &json)?;
    Ok(stored)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let sidecar = sidecar_path(path);
    let raw = fs::read(&sidecar).map_err(io_err(&sidecar))?;
    serde_json::from_slice(&raw).map_err(|source| StoreError::Manifest {
        path: sidecar,
        source,
    })
}

/// Reads and verifies an `.ompr` file against its sidecar manifest.
pub fn read_embeddings(source: &Path) -> Result<(EmbeddingMatrix, Manifest)> {
    let bytes = fs::read(source).map_err(io_err(source))?;
    let matrix = decode(&bytes)?;
    let manifest = read_manifest(source)?;
    let actual = checksum(&bytes);
    if !actual.eq_ignore_ascii_case(&manifest.checksum) {
        return Err(StoreError::ChecksumMismatch {
            expected: manifest.checksum,
            actual,
        });
    }
    let report = validate(&matrix);
    if !report.duplicate_ids.is_empty() {
        return Err(StoreError::InvalidMatrix(report.to_string()));
    }
    if manifest.side != matrix.side {
        return Err(StoreError::Corrupt(format!(
            "manifest side {} disagrees with file side {}",
            manifest.side, matrix.side
        )));
    }
    Ok((matrix, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn card() -> ModelCard {
        ModelCard {
            name: "ViT-B-32".into(),
            family: "ViT".into(),
            params_millions: 151.0,
            pretrain_dataset: "WIT-400M".into(),
            resolution_px: 224,
            backbone: "ViT-B-32".into(),
        }
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{:012}", 34000 + i)).collect()
    }

    fn random_matrix(rows: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        EmbeddingMatrix::new(ids(rows), dim, data, Side::Gallery).unwrap()
    }

    #[test]
    fn normalize_unit_row_is_unchanged() {
        let m = EmbeddingMatrix::new(ids(1), 3, vec![1.0, 0.0, 0.0], Side::Probe).unwrap();
        assert_eq!(l2_normalize(&m).unwrap().row(0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_three_four_five() {
        let m = EmbeddingMatrix::new(ids(1), 2, vec![3.0, 4.0], Side::Probe).unwrap();
        let n = l2_normalize(&m).unwrap();
        assert!((n.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((n.row(0)[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn normalize_random_rows_against_scalar_loop() {
        let m = random_matrix(100, 64, 7);
        let n = l2_normalize(&m).unwrap();
        for i in 0..n.len() {
            let mut acc = 0.0f64;
            for j in 0..64 {
                let x = n.row(i)[j] as f64;
                acc += x * x;
            }
            assert!((acc.sqrt() - 1.0).abs() < 1e-6, "row {i} norm {}", acc.sqrt());
        }
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let m = EmbeddingMatrix::new(ids(2), 2, vec![1.0, 1.0, 0.0, 0.0], Side::Probe).unwrap();
        assert!(matches!(l2_normalize(&m), Err(StoreError::ZeroVectorRow(1))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(EmbeddingMatrix::new(ids(2), 3, vec![0.0; 5], Side::Probe).is_err());
        assert!(EmbeddingMatrix::new(ids(0), 0, vec![], Side::Probe).is_err());
    }

    #[test]
    fn tiny_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.ompr");
        let m = EmbeddingMatrix::new(
            vec!["a".into(), "b".into()],
            4,
            (0..8).map(|x| x as f32).collect(),
            Side::Gallery,
        )
        .unwrap();
        let stored = write_embeddings(&m, &Manifest::new(card(), Side::Gallery), &path).unwrap();
        // header 21 + ids 2*(4+1) + payload 32
        assert_eq!(fs::metadata(&path).unwrap().len(), 21 + 10 + 32);
        let (back, manifest) = read_embeddings(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(manifest, stored);
    }

    #[test]
    fn empty_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.ompr");
        let m = EmbeddingMatrix::new(vec![], 8, vec![], Side::Probe).unwrap();
        write_embeddings(&m, &Manifest::new(card(), Side::Probe), &path).unwrap();
        let (back, _) = read_embeddings(&path).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 8);
    }

    #[test]
    fn large_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.ompr");
        let m = random_matrix(409, 1152, 11);
        let stored = write_embeddings(&m, &Manifest::new(card(), Side::Gallery), &path).unwrap();
        let (back, manifest) = read_embeddings(&path).unwrap();
        assert_eq!(manifest.checksum, stored.checksum);
        let a: Vec<u32> = m.as_slice().iter().map(|x| x.to_bits()).collect();
        let b: Vec<u32> = back.as_slice().iter().map(|x| x.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.ids(), m.ids());
    }

    #[test]
    fn bad_magic() {
        let m = random_matrix(2, 4, 1);
        let mut bytes = encode(&m);
        bytes[..4].copy_from_slice(b"NOPE");
        assert!(matches!(decode(&bytes), Err(StoreError::BadMagic(m)) if &m == b"NOPE"));
        assert!(matches!(decode(b"OM"), Err(StoreError::BadMagic(_))));
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = encode(&random_matrix(2, 4, 1));
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(StoreError::UnsupportedVersion(7))));
    }

    #[test]
    fn truncated_mid_payload() {
        let bytes = encode(&random_matrix(3, 4, 1));
        let cut = &bytes[..bytes.len() - 6];
        assert!(matches!(decode(cut), Err(StoreError::TruncatedPayload { .. })));
    }

    #[test]
    fn checksum_mismatch_on_flipped_byte() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ompr");
        let m = random_matrix(3, 4, 2);
        write_embeddings(&m, &Manifest::new(card(), Side::Gallery), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_embeddings(&path),
            Err(StoreError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn manifest_sidecar_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ompr");
        write_embeddings(&random_matrix(1, 2, 3), &Manifest::new(card(), Side::Gallery), &path)
            .unwrap();
        let v: serde_json::Value =
            serde_json::from_slice(&fs::read(sidecar_path(&path)).unwrap()).unwrap();
        for key in [
            "name",
            "family",
            "params_millions",
            "pretrain_dataset",
            "resolution_px",
            "backbone",
            "side",
            "checksum",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["side"], "gallery");
    }

    #[test]
    fn write_rejects_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ompr");
        let dup = EmbeddingMatrix::new(
            vec!["034000".into(), "034000".into()],
            1,
            vec![1.0, 1.0],
            Side::Gallery,
        )
        .unwrap();
        assert!(matches!(
            write_embeddings(&dup, &Manifest::new(card(), Side::Gallery), &path),
            Err(StoreError::InvalidMatrix(_))
        ));
        let nan = EmbeddingMatrix::new(ids(1), 1, vec![f32::NAN], Side::Gallery).unwrap();
        assert!(write_embeddings(&nan, &Manifest::new(card(), Side::Gallery), &path).is_err());
    }

    #[test]
    fn validate_duplicate_id() {
        let m = EmbeddingMatrix::new(
            vec!["034000".into(), "1".into(), "034000".into(), "034000".into()],
            1,
            vec![1.0; 4],
            Side::Gallery,
        )
        .unwrap();
        assert_eq!(validate(&m).duplicate_ids, vec!["034000".to_string()]);
    }

    #[test]
    fn validate_non_finite() {
        let m = EmbeddingMatrix::new(ids(2), 2, vec![1.0, 0.0, 0.0, f32::INFINITY], Side::Probe)
            .unwrap();
        let r = validate(&m);
        assert_eq!(r.non_finite, vec![(1, 1)]);
        assert!(r.norm_deviations.is_empty());
    }

    #[test]
    fn validate_clean_normalized() {
        let m = l2_normalize(&random_matrix(20, 16, 4)).unwrap();
        assert!(validate(&m).is_clean());
        let raw = random_matrix(20, 16, 4);
        assert!(!validate(&raw).norm_deviations.is_empty());
    }
}
