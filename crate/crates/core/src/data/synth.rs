//! Synthetic multi-view data for desk-scale experiments.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{MultiViewDataset, ViewMatrix};
use crate::{Error, Result};

/// Spread of the per-class latent means; large enough that noiseless
/// classes are well separated at any latent rank.
const CLASS_MEAN_SCALE: f64 = 3.0;

#[derive(Debug, Clone)]
pub struct SynthParams {
    pub n: usize,
    pub c: usize,
    pub view_dims: Vec<usize>,
    pub latent_rank: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Generate a dataset with a shared latent class structure mapped through
/// independent per-view linear maps plus isotropic noise.
///
/// Classes are balanced up to remainder and the output is a deterministic
/// function of the parameters.
pub fn synth_generate(params: &SynthParams) -> Result<MultiViewDataset> {
    let SynthParams {
        n,
        c,
        ref view_dims,
        latent_rank,
        noise_sigma,
        seed,
    } = *params;
    if c == 0 || n < c {
        return Err(Error::InvalidParameter(format!(
            "need n >= c >= 1, got n={n}, c={c}"
        )));
    }
    if view_dims.is_empty() || view_dims.iter().any(|&p| p == 0) {
        return Err(Error::InvalidParameter(
            "view dimensions must be nonempty and positive".into(),
        ));
    }
    let min_dim = *view_dims.iter().min().unwrap();
    if latent_rank == 0 || latent_rank > c.min(min_dim) {
        return Err(Error::InvalidParameter(format!(
            "latent rank must be in 1..=min(c, min view dim) = {}, got {latent_rank}",
            c.min(min_dim)
        )));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise sigma must be >= 0, got {noise_sigma}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Latent class means.
    let mut means = Vec::with_capacity(c);
    for _ in 0..c {
        let m: Array1<f64> =
            Array1::from_shape_fn(latent_rank, |_| rng.sample::<f64, _>(StandardNormal))
                * CLASS_MEAN_SCALE;
        means.push(m);
    }

    // Per-view mixing maps.
    let mixing: Vec<Array2<f64>> = view_dims
        .iter()
        .map(|&p| {
            Array2::from_shape_fn((p, latent_rank), |_| {
                rng.sample::<f64, _>(StandardNormal) / (latent_rank as f64).sqrt()
            })
        })
        .collect();

    // Balanced labels, class j getting one extra sample while remainder lasts.
    let base = n / c;
    let extra = n % c;
    let mut labels = Vec::with_capacity(n);
    for class in 1..=c {
        let count = base + usize::from(class <= extra);
        labels.extend(std::iter::repeat(class).take(count));
    }

    let mut views = Vec::with_capacity(view_dims.len());
    for (v, &p) in view_dims.iter().enumerate() {
        let mut data = Array2::zeros((p, n));
        for i in 0..n {
            let latent = &means[labels[i] - 1];
            let clean = mixing[v].dot(latent);
            for row in 0..p {
                let noise: f64 = rng.sample(StandardNormal);
                data[[row, i]] = clean[row] + noise_sigma * noise;
            }
        }
        views.push(ViewMatrix::new(v + 1, data)?);
    }

    MultiViewDataset::new(views, labels, c)
}
