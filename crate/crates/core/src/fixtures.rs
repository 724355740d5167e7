//! Seeded synthetic probe/gallery pairs for tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::store::{EmbeddingMatrix, ModelCard, Side};

#[derive(Debug, Clone)]
pub struct Fixture {
    pub probes: EmbeddingMatrix,
    pub gallery: EmbeddingMatrix,
    /// (probe id, gallery id)
    pub truth: Vec<(String, String)>,
}

pub fn synthetic_card() -> ModelCard {
    ModelCard {
        name: "synthetic".into(),
        family: "synthetic".into(),
        params_millions: 1.0,
        pretrain_dataset: "none".into(),
        resolution_px: 224,
        backbone: "synthetic".into(),
    }
}

fn unit(v: &mut [f32]) {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    for x in v {
        *x = (f64::from(*x) / norm) as f32;
    }
}

/// Random unit gallery rows; probe `i` targets gallery row `i % n_gallery`
/// and is that row plus uniform noise of amplitude `noise`, renormalized.
/// `noise = 0` gives perfect alignment.
pub fn synthetic(n_probes: usize, n_gallery: usize, dim: usize, noise: f32, seed: u64) -> Fixture {
    assert!(n_gallery > 0 && dim > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gallery = vec![0.0f32; n_gallery * dim];
    for row in gallery.chunks_exact_mut(dim) {
        for x in row.iter_mut() {
            *x = rng.random_range(-1.0f32..1.0);
        }
        unit(row);
    }
    let mut probes = vec![0.0f32; n_probes * dim];
    let mut truth = Vec::with_capacity(n_probes);
    for (i, row) in probes.chunks_exact_mut(dim).enumerate() {
        let target = i % n_gallery;
        let g = &gallery[target * dim..(target + 1) * dim];
        for (x, &t) in row.iter_mut().zip(g) {
            *x = t + if noise > 0.0 { rng.random_range(-noise..noise) } else { 0.0 };
        }
        unit(row);
        truth.push((format!("probe-{i:05}"), format!("sku-{target:04}")));
    }
    let probe_ids = truth.iter().map(|(p, _)| p.clone()).collect();
    let gallery_ids = (0..n_gallery).map(|j| format!("sku-{j:04}")).collect();
    Fixture {
        probes: EmbeddingMatrix::new(probe_ids, dim, probes, Side::Probe).expect("consistent shape"),
        gallery: EmbeddingMatrix::new(gallery_ids, dim, gallery, Side::Gallery).expect("consistent shape"),
        truth,
    }
}
