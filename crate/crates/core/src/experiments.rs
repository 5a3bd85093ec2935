//! Unconditional generation and latent traversal on a trained model.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::metrics::SampleSet;
use crate::nn::Tensor;
use crate::persistence::emit_plot;
use crate::vae::{CardiacCycle, VaeModel};

/// Rows decoded per batch during generation. Decoding is row-independent in
/// eval mode, so the chunk size does not affect the output.
const DECODE_CHUNK: usize = 256;

/// Draws `n` latent vectors from N(0, I), in draw order.
pub fn sample_latents(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect()
}

/// Decodes a list of latent vectors, preserving order.
pub fn decode_many(model: &VaeModel<f32>, zs: &[Vec<f64>]) -> Result<Vec<Vec<f32>>> {
    let d = model.latent_dim();
    let mut out = Vec::with_capacity(zs.len());
    for chunk in zs.chunks(DECODE_CHUNK) {
        let mut flat = Vec::with_capacity(chunk.len() * d);
        for z in chunk {
            if z.len() != d {
                return Err(Error::Dimension(format!("latent vector has {} entries, expected {d}", z.len())));
            }
            flat.extend_from_slice(z);
        }
        let xhat = decode_batch_f64(model, &flat, chunk.len())?;
        out.extend(xhat.rows().map(<[f32]>::to_vec));
    }
    Ok(out)
}

fn decode_batch_f64(model: &VaeModel<f32>, flat: &[f64], rows: usize) -> Result<Tensor<f32>> {
    let z = Tensor::from_f64(&[rows, model.latent_dim()], flat)?;
    model.decode_batch(&z)
}

/// `n` cycles decoded from seeded standard-normal latents.
pub fn sample_synthetic(model: &VaeModel<f32>, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::Parameter("sample count must be at least 1".into()));
    }
    let zs = sample_latents(n, model.latent_dim(), seed);
    SampleSet::new(decode_many(model, &zs)?, format!("generated(seed={seed})"))
}

/// Decodes `base_z` with coordinate `feature_index` replaced by each value.
pub fn latent_traversal(
    model: &VaeModel<f32>,
    base_z: &[f64],
    feature_index: usize,
    values: &[f64],
) -> Result<Vec<CardiacCycle>> {
    let d = model.latent_dim();
    if feature_index >= d {
        return Err(Error::Parameter(format!("feature index {feature_index} out of range 0..{}", d - 1)));
    }
    if base_z.len() != d {
        return Err(Error::Dimension(format!("base latent has {} entries, expected {d}", base_z.len())));
    }
    if values.is_empty() {
        return Err(Error::Parameter("traversal needs at least one value".into()));
    }
    let zs: Vec<Vec<f64>> = values
        .iter()
        .map(|&v| {
            let mut z = base_z.to_vec();
            z[feature_index] = v;
            z
        })
        .collect();
    Ok(decode_many(model, &zs)?.into_iter().map(CardiacCycle::new).collect())
}

/// `n` equispaced values covering `[min, max]` inclusive.
pub fn linspace(min: f64, max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![min],
        _ => (0..n).map(|i| min + (max - min) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Ten equispaced values in [-3, 3].
pub fn default_grid() -> Vec<f64> {
    linspace(-3.0, 3.0, 10)
}

/// Where the traversal starts from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseLatent {
    Zero,
    /// One draw from N(0, I) with this seed.
    Seeded(u64),
}

impl BaseLatent {
    pub fn resolve(self, dim: usize) -> Vec<f64> {
        match self {
            BaseLatent::Zero => vec![0.0; dim],
            BaseLatent::Seeded(seed) => sample_latents(1, dim, seed).remove(0),
        }
    }
}

pub fn traversal_file_name(feature_index: usize) -> String {
    format!("feature_{feature_index:02}.svg")
}

/// Traverses the given features over `grid` and writes one SVG per feature
/// into `out_dir`. Returns the written paths in feature order.
pub fn traversal_plots(
    model: &VaeModel<f32>,
    base: BaseLatent,
    features: &[usize],
    grid: &[f64],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let base_z = base.resolve(model.latent_dim());
    let mut paths = Vec::with_capacity(features.len());
    for &i in features {
        let cycles = latent_traversal(model, &base_z, i, grid)?;
        let traces: Vec<Vec<f32>> = cycles.into_iter().map(|c| c.samples).collect();
        let labels: Vec<String> = grid.iter().map(|v| format!("z{i} = {v:+.2}")).collect();
        let path = out_dir.join(traversal_file_name(i));
        emit_plot(&traces, &labels, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// One traversal plot for every latent feature.
pub fn traversal_sweep(model: &VaeModel<f32>, base: BaseLatent, grid: &[f64], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let features: Vec<usize> = (0..model.latent_dim()).collect();
    traversal_plots(model, base, &features, grid, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::Architecture;

    fn model() -> VaeModel<f32> {
        VaeModel::new(Architecture::default(), 3).unwrap()
    }

    #[test]
    fn generation_shape_and_seed() {
        let m = model();
        let a = sample_synthetic(&m, 300, 9).unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a.dim(), 400);
        let b = sample_synthetic(&m, 300, 9).unwrap();
        assert_eq!(a.cycles, b.cycles);
        let c = sample_synthetic(&m, 300, 10).unwrap();
        assert_ne!(a.cycles, c.cycles);
    }

    #[test]
    fn batched_decode_matches_single() {
        let m = model();
        let zs = sample_latents(DECODE_CHUNK + 3, 25, 1);
        let batched = decode_many(&m, &zs).unwrap();
        for k in [0, 17, DECODE_CHUNK, DECODE_CHUNK + 2] {
            assert_eq!(batched[k], m.decode(&zs[k]).unwrap().samples);
        }
        let zero = decode_many(&m, &[vec![0.0; 25]]).unwrap();
        assert_eq!(zero[0], m.decode(&[0.0; 25]).unwrap().samples);
    }

    #[test]
    fn traversal_locality() {
        let m = model();
        let base = BaseLatent::Seeded(4).resolve(25);
        let same = latent_traversal(&m, &base, 7, &[base[7]]).unwrap();
        assert_eq!(same[0].samples, m.decode(&base).unwrap().samples);
        let ten = latent_traversal(&m, &base, 7, &default_grid()).unwrap();
        assert_eq!(ten.len(), 10);
    }

    #[test]
    fn traversal_rejects_bad_index() {
        let m = model();
        assert!(matches!(latent_traversal(&m, &[0.0; 25], 25, &[1.0]), Err(Error::Parameter(_))));
        assert!(latent_traversal(&m, &[0.0; 25], 0, &[]).is_err());
    }

    #[test]
    fn grid_endpoints() {
        let g = default_grid();
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], -3.0);
        assert_eq!(g[9], 3.0);
        assert_eq!(linspace(1.0, 2.0, 1), vec![1.0]);
    }

    #[test]
    fn sweep_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        let paths = traversal_sweep(&m, BaseLatent::Zero, &[0.5], dir.path()).unwrap();
        assert_eq!(paths.len(), 25);
        let svg = std::fs::read_to_string(&paths[3]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}
