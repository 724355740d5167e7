//! Probe x gallery cosine scoring, per-probe ranking, score calibration and
//! the InfoNCE diagnostic.
//!
//! Scores are accumulated in f64 with a fixed reduction order per entry:
//! element `k` of a dot product always lands in lane `k % LANES` and the lanes
//! are combined pairwise in a fixed tree. Parallelism only splits probe rows,
//! so a score matrix is bit-identical for any worker count or SIMD level.


use rayon::prelude::*;
use thiserror::Error;

use crate::store::EmbeddingMatrix;

const LANES: usize = 8;
/// Register tile: `TILE` probe rows against `TILE` gallery rows.
const TILE: usize = 4;
/// Probe rows handed to one rayon task.
const PROBE_CHUNK: usize = 32;

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Human-readable description of the ordering [`rank`] produces.
pub const TIE_POLICY: &str = "score descending, gallery index ascending";

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("dimension mismatch: probes have dim {probe}, gallery has dim {gallery}")]
    DimensionMismatch { probe: usize, gallery: usize },
    #[error("k = {k} is out of range for a gallery of {gallery}")]
    KOutOfRange { k: usize, gallery: usize },
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("batch mismatch: {0}")]
    BatchMismatch(String),
    #[error("row {0} has zero norm")]
    ZeroVectorRow(usize),
    #[error("score matrix: {0}")]
    InvalidScores(String),
    #[error("could not build worker pool: {0}")]
    WorkerPool(String),
}

pub type Result<T> = std::result::Result<T, SimilarityError>;

/// Dense probe x gallery score matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    probe_ids: Vec<String>,
    gallery_ids: Vec<String>,
    scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(probe_ids: Vec<String>, gallery_ids: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != probe_ids.len() * gallery_ids.len() {
            return Err(SimilarityError::InvalidScores(format!(
                "{} x {} ids but {} scores",
                probe_ids.len(),
                gallery_ids.len(),
                scores.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(SimilarityError::InvalidScores(format!(
                "non-finite score at flat index {i}"
            )));
        }
        Ok(Self {
            probe_ids,
            gallery_ids,
            scores,
        })
    }

    pub fn probe_ids(&self) -> &[String] {
        &self.probe_ids
    }

    pub fn gallery_ids(&self) -> &[String] {
        &self.gallery_ids
    }

    pub fn n_probes(&self) -> usize {
        self.probe_ids.len()
    }

    pub fn n_gallery(&self) -> usize {
        self.gallery_ids.len()
    }

    pub fn row(&self, probe: usize) -> &[f64] {
        let g = self.n_gallery();
        &self.scores[probe * g..(probe + 1) * g]
    }

    pub fn get(&self, probe: usize, gallery: usize) -> f64 {
        self.scores[probe * self.n_gallery() + gallery]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    /// Applies `f` to every score, keeping ids. Used for calibration.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.probe_ids.clone(),
            self.gallery_ids.clone(),
            self.scores.iter().map(|&s| f(s)).collect(),
        )
    }
}

#[inline(always)]
fn fold_lanes(acc: &[f64; LANES]) -> f64 {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

/// Reference dot product with the engine's reduction order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; LANES];
    for (k, (x, y)) in a.iter().zip(b).enumerate() {
        acc[k % LANES] += x * y;
    }
    fold_lanes(&acc)
}

/// Folds lane accumulators and the scalar tail for one tile entry.
#[inline(always)]
fn finish(mut lanes: [f64; LANES], p: &[f32], g: &[f32], from: usize) -> f64 {
    for k in from..g.len() {
        lanes[k % LANES] += f64::from(p[k]) * f64::from(g[k]);
    }
    fold_lanes(&lanes)
}

/// One tile of scores. Per-entry arithmetic is identical to [`dot`] on the
/// widened rows: f32 -> f64 widening and the f64 product are both exact.
#[inline(always)]
fn tile_generic(p: [&[f32]; TILE], g: [&[f32]; TILE], out: &mut [[f64; TILE]; TILE]) {
    let dim = g[0].len();
    let full = dim / LANES * LANES;
    let mut acc = [[[0.0f64; LANES]; TILE]; TILE];
    let mut k = 0;
    while k < full {
        for i in 0..TILE {
            let pc = &p[i][k..k + LANES];
            for j in 0..TILE {
                let gc = &g[j][k..k + LANES];
                for l in 0..LANES {
                    acc[i][j][l] += f64::from(pc[l]) * f64::from(gc[l]);
                }
            }
        }
        k += LANES;
    }
    for i in 0..TILE {
        for j in 0..TILE {
            out[i][j] = finish(acc[i][j], p[i], g[j], full);
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn tile_avx512(p: [&[f32]; TILE], g: [&[f32]; TILE], out: &mut [[f64; TILE]; TILE]) {
    use std::arch::x86_64::*;
    let dim = g[0].len();
    let full = dim / LANES * LANES;
    let mut acc = [[_mm512_setzero_pd(); TILE]; TILE];
    let mut gv = [_mm512_setzero_pd(); TILE];
    let mut k = 0;
    while k < full {
        for j in 0..TILE {
            // SAFETY: k + LANES <= full <= row length.
            gv[j] = _mm512_cvtps_pd(unsafe { _mm256_loadu_ps(g[j].as_ptr().add(k)) });
        }
        for i in 0..TILE {
            // SAFETY: as above.
            let pv = _mm512_cvtps_pd(unsafe { _mm256_loadu_ps(p[i].as_ptr().add(k)) });
            for j in 0..TILE {
                // Separate multiply and add: no fused rounding.
                acc[i][j] = _mm512_add_pd(acc[i][j], _mm512_mul_pd(pv, gv[j]));
            }
        }
        k += LANES;
    }
    for i in 0..TILE {
        for j in 0..TILE {
            let mut lanes = [0.0f64; LANES];
            // SAFETY: `lanes` holds exactly one 512-bit vector.
            unsafe { _mm512_storeu_pd(lanes.as_mut_ptr(), acc[i][j]) };
            out[i][j] = finish(lanes, p[i], g[j], full);
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn tile_avx2(p: [&[f32]; TILE], g: [&[f32]; TILE], out: &mut [[f64; TILE]; TILE]) {
    tile_generic(p, g, out)
}

#[derive(Clone, Copy)]
enum Kernel {
    Generic,
    #[cfg(target_arch = "x86_64")]
    Avx2,
    #[cfg(target_arch = "x86_64")]
    Avx512,
}

impl Kernel {
    fn detect() -> Self {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") {
                return Kernel::Avx512;
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                return Kernel::Avx2;
            }
        }
        Kernel::Generic
    }

    #[inline(always)]
    fn tile(self, p: [&[f32]; TILE], g: [&[f32]; TILE], out: &mut [[f64; TILE]; TILE]) {
        match self {
            Kernel::Generic => tile_generic(p, g, out),
            // SAFETY: the variant is only chosen after runtime detection.
            #[cfg(target_arch = "x86_64")]
            Kernel::Avx2 => unsafe { tile_avx2(p, g, out) },
            // SAFETY: as above.
            #[cfg(target_arch = "x86_64")]
            Kernel::Avx512 => unsafe { tile_avx512(p, g, out) },
        }
    }
}

/// Rows `start..start + TILE`, repeating the last row past `n`. The
/// duplicates are computed and discarded.
fn tile_rows(data: &[f32], dim: usize, start: usize, n: usize) -> [&[f32]; TILE] {
    std::array::from_fn(|b| {
        let r = (start + b).min(n - 1);
        &data[r * dim..(r + 1) * dim]
    })
}

/// Scores a run of probe rows against the whole gallery. The gallery tile
/// is the outer loop so its rows stay cached while the probes cycle.
fn score_chunk(kernel: Kernel, probes: &[f32], gallery: &[f32], dim: usize, out: &mut [f64]) {
    let n_gallery = gallery.len() / dim;
    let n_probes = probes.len() / dim;
    let mut tile = [[0.0f64; TILE]; TILE];
    for j0 in (0..n_gallery).step_by(TILE) {
        let g = tile_rows(gallery, dim, j0, n_gallery);
        let gw = TILE.min(n_gallery - j0);
        for i0 in (0..n_probes).step_by(TILE) {
            let p = tile_rows(probes, dim, i0, n_probes);
            kernel.tile(p, g, &mut tile);
            for (i, row) in tile.iter().enumerate().take(TILE.min(n_probes - i0)) {
                let base = (i0 + i) * n_gallery + j0;
                out[base..base + gw].copy_from_slice(&row[..gw]);
            }
        }
    }
}

/// Cosine scores of every probe against every gallery row. Inputs are
/// expected to be L2-normalized already, so this is a plain dot product.
/// Uses the global rayon pool.
pub fn score_matrix(probes: &EmbeddingMatrix, gallery: &EmbeddingMatrix) -> Result<ScoreMatrix> {
    if probes.dim() != gallery.dim() {
        return Err(SimilarityError::DimensionMismatch {
            probe: probes.dim(),
            gallery: gallery.dim(),
        });
    }
    let dim = probes.dim();
    let n_gallery = gallery.len();
    let mut scores = vec![0.0f64; probes.len() * n_gallery];

    if n_gallery > 0 {
        let kernel = Kernel::detect();
        scores
            .par_chunks_mut(PROBE_CHUNK * n_gallery)
            .zip(probes.as_slice().par_chunks(PROBE_CHUNK * dim))
            .for_each(|(out, rows)| score_chunk(kernel, rows, gallery.as_slice(), dim, out));
    }

    ScoreMatrix::new(probes.ids().to_vec(), gallery.ids().to_vec(), scores)
}

/// [`score_matrix`] on a dedicated pool of `workers` threads.
pub fn score_matrix_with_workers(
    probes: &EmbeddingMatrix,
    gallery: &EmbeddingMatrix,
    workers: usize,
) -> Result<ScoreMatrix> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SimilarityError::WorkerPool(e.to_string()))?;
    pool.install(|| score_matrix(probes, gallery))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopK {
    K(usize),
    All,
}

/// Per-probe ranked gallery prefixes, stored flat: probe `i` owns
/// `indices[i * depth..(i + 1) * depth]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    probe_ids: Vec<String>,
    gallery_ids: Vec<String>,
    depth: usize,
    indices: Vec<u32>,
    scores: Vec<f64>,
    pub tie_policy: &'static str,
}

impl RankingResult {
    pub fn probe_ids(&self) -> &[String] {
        &self.probe_ids
    }

    pub fn gallery_ids(&self) -> &[String] {
        &self.gallery_ids
    }

    pub fn gallery_size(&self) -> usize {
        self.gallery_ids.len()
    }

    /// Length of every per-probe list.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_probes(&self) -> usize {
        self.probe_ids.len()
    }

    pub fn indices(&self, probe: usize) -> &[u32] {
        &self.indices[probe * self.depth..(probe + 1) * self.depth]
    }

    pub fn scores(&self, probe: usize) -> &[f64] {
        &self.scores[probe * self.depth..(probe + 1) * self.depth]
    }
}

/// Integer key whose ascending order is descending score. `-0.0` and `0.0`
/// map to the same key.
#[inline]
fn descending_key(score: f64) -> u64 {
    let bits = (score + 0.0).to_bits();
    let ascending = if bits >> 63 == 1 { !bits } else { bits | (1 << 63) };
    !ascending
}

fn rank_row(row: &[f64], depth: usize, idx_out: &mut [u32], score_out: &mut [f64]) {
    // Tuple order gives ties by ascending gallery index.
    let mut items: Vec<(u64, u32)> = row.iter().enumerate().map(|(j, &s)| (descending_key(s), j as u32)).collect();
    if depth < items.len() && depth > 0 {
        items.select_nth_unstable(depth - 1);
        items.truncate(depth);
    }
    items.sort_unstable();
    for (slot, (_, j)) in items.into_iter().take(depth).enumerate() {
        idx_out[slot] = j;
        score_out[slot] = row[j as usize];
    }
}

/// Orders each probe's gallery by descending score, ties by ascending
/// gallery index, and keeps the first `k`.
pub fn rank(scores: &ScoreMatrix, k: TopK) -> Result<RankingResult> {
    let g = scores.n_gallery();
    let depth = match k {
        TopK::All => g,
        TopK::K(k) if k >= 1 && k <= g => k,
        TopK::K(k) => return Err(SimilarityError::KOutOfRange { k, gallery: g }),
    };
    let p = scores.n_probes();
    let mut indices = vec![0u32; p * depth];
    let mut out_scores = vec![0.0f64; p * depth];
    if depth > 0 {
        indices
            .par_chunks_mut(depth)
            .zip(out_scores.par_chunks_mut(depth))
            .enumerate()
            .for_each(|(i, (idx, sc))| rank_row(scores.row(i), depth, idx, sc));
    }
    Ok(RankingResult {
        probe_ids: scores.probe_ids.clone(),
        gallery_ids: scores.gallery_ids.clone(),
        depth,
        indices,
        scores: out_scores,
        tie_policy: TIE_POLICY,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Calibration {
    /// Row-wise softmax of `score / temperature`.
    Softmax { temperature: f64 },
    /// Element-wise logistic of the raw score.
    Sigmoid,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Turns raw scores into probabilities for reporting. Ranking always uses
/// the raw scores.
pub fn calibrate_scores(scores: &ScoreMatrix, mode: Calibration) -> Result<ScoreMatrix> {
    match mode {
        Calibration::Sigmoid => scores.map(sigmoid),
        Calibration::Softmax { temperature } => {
            if !(temperature.is_finite() && temperature > 0.0) {
                return Err(SimilarityError::InvalidTemperature(temperature));
            }
            let g = scores.n_gallery();
            let mut out = Vec::with_capacity(scores.scores.len());
            for i in 0..scores.n_probes() {
                let row = scores.row(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let start = out.len();
                out.extend(row.iter().map(|&s| ((s - max) / temperature).exp()));
                let z: f64 = out[start..start + g].iter().sum();
                for v in &mut out[start..] {
                    *v /= z;
                }
            }
            ScoreMatrix::new(scores.probe_ids.clone(), scores.gallery_ids.clone(), out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    temperature: f64,
    batch_size: usize,
}

impl LossConfig {
    pub fn new(temperature: f64, batch_size: usize) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(SimilarityError::InvalidTemperature(temperature));
        }
        if batch_size < 2 {
            return Err(SimilarityError::BatchMismatch(format!(
                "batch size must be at least 2, got {batch_size}"
            )));
        }
        Ok(Self {
            temperature,
            batch_size,
        })
    }

    /// Config with the default temperature.
    pub fn for_batch(batch_size: usize) -> Result<Self> {
        Self::new(DEFAULT_TEMPERATURE, batch_size)
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoNceLoss {
    pub image_to_text: f64,
    pub text_to_image: f64,
    pub total: f64,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Symmetric contrastive loss over a batch of matched pairs (row `i` of
/// each side is a positive pair). Similarities are cosine, so inputs need
/// not be normalized. Forward-only.
pub fn info_nce_loss(
    image_emb: &EmbeddingMatrix,
    text_emb: &EmbeddingMatrix,
    config: &LossConfig,
) -> Result<InfoNceLoss> {
    let b = config.batch_size;
    if image_emb.len() != b || text_emb.len() != b {
        return Err(SimilarityError::BatchMismatch(format!(
            "expected {b} rows per side, got {} images and {} texts",
            image_emb.len(),
            text_emb.len()
        )));
    }
    if image_emb.dim() != text_emb.dim() {
        return Err(SimilarityError::DimensionMismatch {
            probe: image_emb.dim(),
            gallery: text_emb.dim(),
        });
    }
    let widen_rows = |m: &EmbeddingMatrix| -> Result<Vec<Vec<f64>>> {
        m.rows()
            .enumerate()
            .map(|(i, r)| {
                let v: Vec<f64> = r.iter().map(|&x| f64::from(x)).collect();
                let n = dot(&v, &v).sqrt();
                if n < crate::store::ZERO_NORM_THRESHOLD {
                    return Err(SimilarityError::ZeroVectorRow(i));
                }
                Ok(v.into_iter().map(|x| x / n).collect())
            })
            .collect()
    };
    let images = widen_rows(image_emb)?;
    let texts = widen_rows(text_emb)?;
    let tau = config.temperature;

    // logits[i][j] = s(v_i, t_j) / tau
    let logits: Vec<Vec<f64>> = images
        .iter()
        .map(|v| texts.iter().map(|t| dot(v, t) / tau).collect())
        .collect();

    let bf = b as f64;
    let image_to_text = (0..b)
        .map(|i| log_sum_exp(logits[i].iter().copied()) - logits[i][i])
        .sum::<f64>()
        / bf;
    let text_to_image = (0..b)
        .map(|i| log_sum_exp(logits.iter().map(|row| row[i])) - logits[i][i])
        .sum::<f64>()
        / bf;
    Ok(InfoNceLoss {
        image_to_text,
        text_to_image,
        total: 0.5 * (image_to_text + text_to_image),
    })
}
