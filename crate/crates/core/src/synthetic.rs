//! Seeded random regression instances with a known block structure.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::model::{ModalityLayout, TrainingSet, WeightU, WeightW};

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    pub layout: ModalityLayout,
    pub instances: usize,
    /// Modalities whose true weight block is zero.
    pub inert_modalities: Vec<usize>,
    /// Frames whose true temporal block is zero.
    pub inert_frames: Vec<usize>,
    /// Standard deviation of the additive target noise.
    pub noise: f64,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn new(layout: ModalityLayout, instances: usize, seed: u64) -> Self {
        Self {
            layout,
            instances,
            inert_modalities: Vec::new(),
            inert_frames: Vec::new(),
            noise: 0.1,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub data: TrainingSet,
    pub true_w: WeightW,
    pub true_u: WeightU,
}

/// Draws `X`, `E` and the true weights from standard normals and sets
/// `Ŷ = WᵀX + UᵀE + noise`. `Y` is `Ŷ − (first frame of E)`, so the
/// difference matrix stays consistent with its construction rule for frame 0.
pub fn instance(spec: &InstanceSpec) -> Result<Instance> {
    let l = &spec.layout;
    let n = spec.instances;
    let r = l.behavior_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = |rows: usize, cols: usize| DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));

    let x = normal(l.feature_dim(), n);
    let e = normal(l.difference_dim(), n);
    let mut w = normal(l.feature_dim(), r);
    let mut u = normal(l.difference_dim(), r) * 0.5;
    let noise = normal(r, n) * spec.noise;
    for &i in &spec.inert_modalities {
        for row in l.modality_rows(i) {
            w.row_mut(row).fill(0.0);
        }
    }
    for &k in &spec.inert_frames {
        u.rows_mut(k * r, r).fill(0.0);
    }
    let y_hat = w.tr_mul(&x) + u.tr_mul(&e) + noise;
    let y = &y_hat - e.rows(0, r);
    Ok(Instance {
        data: TrainingSet::new(l.clone(), x, y, y_hat, e)?,
        true_w: WeightW::new(w, l.clone())?,
        true_u: WeightU::new(u, l.clone())?,
    })
}
