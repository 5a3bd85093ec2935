use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LayerSpec;
use crate::{CYCLE_LEN, LATENT_DIM};

/// Knobs the layer lists are generated from. The defaults give the
/// 400 -> 25 -> 400 model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub input_len: usize,
    pub latent_dim: usize,
    pub kernel: usize,
    pub pool: usize,
    pub enc_conv_channels: Vec<usize>,
    pub enc_dense_widths: Vec<usize>,
    pub dec_dense_widths: Vec<usize>,
    pub dec_conv_channels: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input_len: CYCLE_LEN,
            latent_dim: LATENT_DIM,
            kernel: 5,
            pool: 2,
            enc_conv_channels: vec![16, 32, 64, 128],
            enc_dense_widths: vec![256, 64],
            dec_dense_widths: vec![64, 128, 256],
            dec_conv_channels: vec![64, 32, 16, 1],
        }
    }
}

/// Ordered layer lists of every branch. This is what checkpoints store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_len: usize,
    pub latent_dim: usize,
    pub enc_conv: Vec<LayerSpec>,
    pub enc_dense: Vec<LayerSpec>,
    pub enc_concat: LayerSpec,
    pub mu_head: LayerSpec,
    pub logvar_head: LayerSpec,
    pub dec_dense: Vec<LayerSpec>,
    pub dec_conv: Vec<LayerSpec>,
    pub dec_concat: LayerSpec,
    pub dec_head: LayerSpec,
}

/// Per-sample widths at every join of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeReport {
    pub input: usize,
    pub enc_conv_out: usize,
    pub enc_dense_out: usize,
    pub enc_concat: usize,
    pub mu: usize,
    pub logvar: usize,
    pub dec_dense_out: usize,
    pub dec_conv_out: usize,
    pub dec_concat: usize,
    pub output: usize,
}

fn run_shapes(specs: &[LayerSpec], input: &[usize]) -> Result<Vec<usize>> {
    specs.iter().try_fold(input.to_vec(), |s, spec| spec.output_shape(&s))
}

impl Architecture {
    pub fn new(cfg: &ArchConfig) -> Result<Self> {
        let k = cfg.kernel;
        let mut enc_conv = Vec::new();
        let mut cin = 1;
        for &c in &cfg.enc_conv_channels {
            enc_conv.extend([
                LayerSpec::conv(cin, c, k),
                LayerSpec::batch_norm(c),
                LayerSpec::Relu,
                LayerSpec::MaxPool1d { width: cfg.pool },
            ]);
            cin = c;
        }
        enc_conv.push(LayerSpec::conv(cin, 1, 1));

        let mut enc_dense = Vec::new();
        let mut fin = cfg.input_len;
        for &w in &cfg.enc_dense_widths {
            enc_dense.extend([LayerSpec::dense(fin, w), LayerSpec::batch_norm(w), LayerSpec::Relu]);
            fin = w;
        }
        enc_dense.push(LayerSpec::dense(fin, cfg.latent_dim));

        let mut dec_dense = Vec::new();
        let mut fin = cfg.latent_dim;
        for &w in cfg.dec_dense_widths.iter().chain([&cfg.input_len]) {
            dec_dense.extend([LayerSpec::dense(fin, w), LayerSpec::batch_norm(w), LayerSpec::Relu]);
            fin = w;
        }

        let mut dec_conv = Vec::new();
        let mut cin = 1;
        for &c in &cfg.dec_conv_channels {
            dec_conv.extend([
                LayerSpec::conv(cin, c, k),
                LayerSpec::batch_norm(c),
                LayerSpec::Relu,
                LayerSpec::UpsampleNearest1d { factor: cfg.pool },
            ]);
            cin = c;
        }

        let joined = 2 * cfg.latent_dim;
        let arch = Architecture {
            input_len: cfg.input_len,
            latent_dim: cfg.latent_dim,
            enc_conv,
            enc_dense,
            enc_concat: LayerSpec::Concat { widths: vec![cfg.latent_dim, cfg.latent_dim] },
            mu_head: LayerSpec::dense(joined, cfg.latent_dim),
            logvar_head: LayerSpec::dense(joined, cfg.latent_dim),
            dec_dense,
            dec_conv,
            dec_concat: LayerSpec::Concat { widths: vec![cfg.input_len, cfg.input_len] },
            dec_head: LayerSpec::dense(2 * cfg.input_len, cfg.input_len),
        };
        arch.shapes()?;
        Ok(arch)
    }

    /// Runs the shape algebra over every branch and checks that the joins line up.
    pub fn shapes(&self) -> Result<ShapeReport> {
        let flat = |s: Vec<usize>| s.iter().product::<usize>();
        let (n, d) = (self.input_len, self.latent_dim);
        let enc_conv_shape = run_shapes(&self.enc_conv, &[1, n])?;
        if enc_conv_shape != [1, d] {
            return Err(Error::Parameter(format!(
                "encoder conv branch ends at {enc_conv_shape:?}, expected [1, {d}]"
            )));
        }
        let enc_dense_out = flat(run_shapes(&self.enc_dense, &[n])?);
        let enc_concat = match &self.enc_concat {
            LayerSpec::Concat { widths } if widths == &[d, enc_dense_out] => widths.iter().sum(),
            other => return Err(Error::Parameter(format!("encoder join {other:?} does not match branches"))),
        };
        let mu = flat(self.mu_head.output_shape(&[enc_concat])?);
        let logvar = flat(self.logvar_head.output_shape(&[enc_concat])?);
        if mu != d || logvar != d {
            return Err(Error::Parameter(format!("heads give ({mu}, {logvar}), expected {d}")));
        }
        let dec_dense_out = flat(run_shapes(&self.dec_dense, &[d])?);
        let dec_conv_shape = run_shapes(&self.dec_conv, &[1, d])?;
        if dec_conv_shape != [1, n] || dec_dense_out != n {
            return Err(Error::Parameter(format!(
                "decoder branches end at {dec_conv_shape:?} and [{dec_dense_out}], expected length {n}"
            )));
        }
        let dec_concat = match &self.dec_concat {
            LayerSpec::Concat { widths } if widths == &[n, n] => 2 * n,
            other => return Err(Error::Parameter(format!("decoder join {other:?} does not match branches"))),
        };
        let output = flat(self.dec_head.output_shape(&[dec_concat])?);
        if output != n {
            return Err(Error::Parameter(format!("decoder head gives {output}, expected {n}")));
        }
        Ok(ShapeReport {
            input: n,
            enc_conv_out: d,
            enc_dense_out,
            enc_concat,
            mu,
            logvar,
            dec_dense_out,
            dec_conv_out: n,
            dec_concat,
            output,
        })
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::new(&ArchConfig::default()).expect("default architecture is consistent")
    }
}
