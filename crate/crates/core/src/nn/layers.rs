use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Whether batch-norm uses batch statistics (and updates its running
/// estimates) or the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Weight initialisation scheme. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, for layers feeding a ReLU.
    He,
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanIn,
}

impl Init {
    fn bound(self, fan_in: usize) -> f64 {
        match self {
            Init::He => (6.0 / fan_in as f64).sqrt(),
            Init::FanIn => 1.0 / (fan_in as f64).sqrt(),
        }
    }
}

/// Architecture description of one layer, stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    Conv1d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize },
    Dense { in_features: usize, out_features: usize },
    BatchNorm1d { features: usize, momentum: f64, eps: f64 },
    Relu,
    MaxPool1d { width: usize },
    UpsampleNearest1d { factor: usize },
    /// Join point of two branches; `widths` are the flattened branch sizes.
    Concat { widths: Vec<usize> },
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv1d { in_channels, out_channels, kernel, stride: 1 }
    }

    pub fn dense(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Dense { in_features, out_features }
    }

    pub fn batch_norm(features: usize) -> Self {
        LayerSpec::BatchNorm1d { features, momentum: 0.1, eps: 1e-5 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        match *self {
            LayerSpec::Conv1d { in_channels, out_channels, kernel, stride } => {
                if kernel % 2 == 0 {
                    return bad(format!("conv kernel width must be odd, got {kernel}"));
                }
                if in_channels == 0 || out_channels == 0 || stride == 0 {
                    return bad("conv channels and stride must be >= 1".into());
                }
            }
            LayerSpec::Dense { in_features, out_features } => {
                if in_features == 0 || out_features == 0 {
                    return bad("dense features must be >= 1".into());
                }
            }
            LayerSpec::BatchNorm1d { features, momentum, eps } => {
                if features == 0 || !(0.0..=1.0).contains(&momentum) || eps <= 0.0 {
                    return bad(format!("batch-norm: features {features}, momentum {momentum}, eps {eps}"));
                }
            }
            LayerSpec::MaxPool1d { width } if width == 0 => return bad("pool width must be >= 1".into()),
            LayerSpec::UpsampleNearest1d { factor } if factor == 0 => {
                return bad("upsample factor must be >= 1".into())
            }
            _ => {}
        }
        Ok(())
    }

    /// Per-sample output shape (batch axis excluded) for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = || Error::dim(format!("{self:?} cannot take input shape {input:?}"));
        match (self, input) {
            (LayerSpec::Conv1d { in_channels, out_channels, stride, .. }, &[c, l]) if c == *in_channels => {
                Ok(vec![*out_channels, ops::conv_out_len(l, *stride)])
            }
            (LayerSpec::Dense { in_features, out_features }, &[n]) if n == *in_features => Ok(vec![*out_features]),
            (LayerSpec::BatchNorm1d { features, .. }, &[f]) if f == *features => Ok(input.to_vec()),
            (LayerSpec::BatchNorm1d { features, .. }, &[c, _]) if c == *features => Ok(input.to_vec()),
            (LayerSpec::Relu, _) => Ok(input.to_vec()),
            (LayerSpec::MaxPool1d { width }, &[c, l]) if *width <= l => Ok(vec![c, l / width]),
            (LayerSpec::UpsampleNearest1d { factor }, &[c, l]) => Ok(vec![c, l * factor]),
            (LayerSpec::Concat { widths }, _) => Ok(vec![widths.iter().sum()]),
            _ => Err(mismatch()),
        }
    }
}

fn uniform_param<T: Scalar, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.random_range(-bound..bound))).collect();
    Tensor::param(shape, data).expect("init shape")
}

fn no_cache(kind: &str) -> Error {
    Error::State(format!("{kind} backward called before forward"))
}

fn expect_shape<T: Scalar>(x: &Tensor<T>, rank: usize, axis1: usize, what: &str) -> Result<()> {
    if x.rank() != rank || x.shape()[1] != axis1 {
        return Err(Error::dim(format!(
            "{what}: expected rank {rank} with axis 1 = {axis1}, got {:?}",
            x.shape()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Conv1d<T: Scalar> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv1d<T> {
    fn geom(&self, len: usize) -> ConvGeom {
        ConvGeom {
            in_ch: self.in_channels,
            out_ch: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            len,
        }
    }

    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        expect_shape(x, 3, self.in_channels, "conv1d input")?;
        let (batch, len) = (x.shape()[0], x.shape()[2]);
        let g = self.geom(len);
        let mut out = Tensor::zeros(&[batch, self.out_channels, g.out_len()]);
        let per_out = self.out_channels * g.out_len();
        for (xb, ob) in x.rows().zip(out.data_mut().chunks_exact_mut(per_out)) {
            ops::conv1d_same(g, xb, self.weight.data(), self.bias.data(), ob);
        }
        Ok(out)
    }

    fn backward(&mut self, dout: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or_else(|| no_cache("conv1d"))?;
        let (batch, len) = (x.shape()[0], x.shape()[2]);
        let g = self.geom(len);
        let mut dx = Tensor::zeros(x.shape());
        let per_in = self.in_channels * len;
        let per_out = self.out_channels * g.out_len();
        if dout.len() != batch * per_out {
            return Err(Error::dim(format!("conv1d backward: gradient shape {:?}", dout.shape())));
        }
        let (w, dw) = self.weight.data_and_grad_mut();
        let dw = dw.expect("conv weight is trainable");
        let db = self.bias.grad_mut().expect("conv bias is trainable");
        for b in 0..batch {
            ops::conv1d_same_backward(
                g,
                &x.data()[b * per_in..(b + 1) * per_in],
                w,
                &dout.data()[b * per_out..(b + 1) * per_out],
                dw,
                db,
                &mut dx.data_mut()[b * per_in..(b + 1) * per_in],
            );
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
pub struct Dense<T: Scalar> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        expect_shape(x, 2, self.in_features, "dense input")?;
        let batch = x.shape()[0];
        let mut out = Tensor::zeros(&[batch, self.out_features]);
        for (xb, ob) in x.rows().zip(out.data_mut().chunks_exact_mut(self.out_features)) {
            ops::dense(xb, self.weight.data(), self.bias.data(), ob);
        }
        Ok(out)
    }

    fn backward(&mut self, dout: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or_else(|| no_cache("dense"))?;
        let batch = x.shape()[0];
        if dout.shape() != [batch, self.out_features] {
            return Err(Error::dim(format!("dense backward: gradient shape {:?}", dout.shape())));
        }
        let mut dx = Tensor::zeros(x.shape());
        let (w, dw) = self.weight.data_and_grad_mut();
        let dw = dw.expect("dense weight is trainable");
        let db = self.bias.grad_mut().expect("dense bias is trainable");
        for ((xb, gb), dxb) in x
            .rows()
            .zip(dout.data().chunks_exact(self.out_features))
            .zip(dx.data_mut().chunks_exact_mut(self.in_features))
        {
            ops::dense_backward(xb, w, gb, dw, db, dxb);
        }
        Ok(dx)
    }
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
    mode: Mode,
}

/// Batch normalisation over `[B, F]` (per feature) or `[B, C, L]` (per
/// channel, pooling batch and length).
#[derive(Debug, Clone)]
pub struct BatchNorm1d<T: Scalar> {
    pub features: usize,
    pub momentum: f64,
    pub eps: f64,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    cache: Option<BnCache<T>>,
}

/// Visits every element of feature `f` in a `[B, F]` or `[B, F, L]` buffer.
#[inline]
fn feature_indices(shape: &[usize], f: usize) -> impl Iterator<Item = usize> {
    let (batch, feats) = (shape[0], shape[1]);
    let len = if shape.len() == 3 { shape[2] } else { 1 };
    (0..batch).flat_map(move |b| {
        let base = (b * feats + f) * len;
        base..base + len
    })
}

impl<T: Scalar> BatchNorm1d<T> {
    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if !(x.rank() == 2 || x.rank() == 3) || x.shape()[1] != self.features {
            return Err(Error::dim(format!(
                "batch-norm over {} features got shape {:?}",
                self.features,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Returns the output, the cache and, in train mode, the batch (mean, unbiased var).
    #[allow(clippy::type_complexity)]
    fn apply(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, BnCache<T>, Option<(Vec<f64>, Vec<f64>)>)> {
        self.check(x)?;
        let shape = x.shape().to_vec();
        let batch = shape[0];
        if mode == Mode::Train && batch < 2 {
            return Err(Error::Parameter("batch-norm in train mode needs batch size >= 2".into()));
        }
        let n = x.len() / self.features;
        let mut out = Tensor::zeros(&shape);
        let mut xhat = vec![T::ZERO; x.len()];
        let mut inv_std = vec![0.0; self.features];
        let mut stats = (Vec::new(), Vec::new());
        let xd = x.data();
        for f in 0..self.features {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = feature_indices(&shape, f).map(|i| xd[i].to_f64()).sum::<f64>() / n as f64;
                    let var = feature_indices(&shape, f)
                        .map(|i| {
                            let d = xd[i].to_f64() - mean;
                            d * d
                        })
                        .sum::<f64>()
                        / n as f64;
                    stats.0.push(mean);
                    stats.1.push(var * n as f64 / (n - 1).max(1) as f64);
                    (mean, var)
                }
                Mode::Eval => (self.running_mean.data()[f].to_f64(), self.running_var.data()[f].to_f64()),
            };
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[f] = istd;
            let (gm, bt) = (self.gamma.data()[f].to_f64(), self.beta.data()[f].to_f64());
            let od = out.data_mut();
            for i in feature_indices(&shape, f) {
                let h = (xd[i].to_f64() - mean) * istd;
                xhat[i] = T::from_f64(h);
                od[i] = T::from_f64(gm * h + bt);
            }
        }
        let stats = (mode == Mode::Train).then_some(stats);
        Ok((out, BnCache { xhat, inv_std, shape, mode }, stats))
    }

    fn backward(&mut self, dout: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.cache.as_ref().ok_or_else(|| no_cache("batch-norm"))?;
        if dout.shape() != c.shape.as_slice() {
            return Err(Error::dim(format!("batch-norm backward: gradient shape {:?}", dout.shape())));
        }
        let n = dout.len() / self.features;
        let mut dx = Tensor::zeros(&c.shape);
        let g = dout.data();
        let mut dgamma_acc = vec![0.0; self.features];
        let mut dbeta_acc = vec![0.0; self.features];
        for f in 0..self.features {
            let gm = self.gamma.data()[f].to_f64();
            let (mut sum_g, mut sum_gx) = (0.0, 0.0);
            for i in feature_indices(&c.shape, f) {
                let gi = g[i].to_f64();
                sum_g += gi;
                sum_gx += gi * c.xhat[i].to_f64();
            }
            dgamma_acc[f] = sum_gx;
            dbeta_acc[f] = sum_g;
            let istd = c.inv_std[f];
            let dxd = dx.data_mut();
            match c.mode {
                Mode::Train => {
                    let nf = n as f64;
                    for i in feature_indices(&c.shape, f) {
                        let v = gm * istd / nf * (nf * g[i].to_f64() - sum_g - c.xhat[i].to_f64() * sum_gx);
                        dxd[i] = T::from_f64(v);
                    }
                }
                Mode::Eval => {
                    for i in feature_indices(&c.shape, f) {
                        dxd[i] = T::from_f64(g[i].to_f64() * gm * istd);
                    }
                }
            }
        }
        let dgamma = self.gamma.grad_mut().expect("gamma is trainable");
        for (d, a) in dgamma.iter_mut().zip(&dgamma_acc) {
            *d += T::from_f64(*a);
        }
        let dbeta = self.beta.grad_mut().expect("beta is trainable");
        for (d, a) in dbeta.iter_mut().zip(&dbeta_acc) {
            *d += T::from_f64(*a);
        }
        Ok(dx)
    }

    fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for (r, &v) in self.running_mean.data_mut().iter_mut().zip(mean) {
            *r = T::from_f64((1.0 - m) * r.to_f64() + m * v);
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(var) {
            *r = T::from_f64((1.0 - m) * r.to_f64() + m * v);
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu<T: Scalar> {
    input: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct MaxPool1d {
    pub width: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool1d {
    fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
        if x.rank() != 3 || self.width > x.shape()[2] {
            return Err(Error::dim(format!("maxpool width {} on shape {:?}", self.width, x.shape())));
        }
        let (batch, ch, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let out_len = len / self.width;
        let mut out = Tensor::zeros(&[batch, ch, out_len]);
        let mut arg = vec![0usize; out.len()];
        let per_out = ch * out_len;
        for (b, xb) in x.rows().enumerate() {
            let sl = b * per_out..(b + 1) * per_out;
            ops::maxpool1d(xb, ch, len, self.width, &mut out.data_mut()[sl.clone()], &mut arg[sl.clone()]);
            arg[sl].iter_mut().for_each(|a| *a += b * ch * len);
        }
        Ok((out, arg))
    }
}

#[derive(Debug, Clone)]
pub struct UpsampleNearest1d {
    pub factor: usize,
    input_shape: Option<Vec<usize>>,
}

/// One differentiable layer.
#[derive(Debug, Clone)]
pub enum Layer<T: Scalar> {
    Conv1d(Conv1d<T>),
    Dense(Dense<T>),
    BatchNorm1d(BatchNorm1d<T>),
    Relu(Relu<T>),
    MaxPool1d(MaxPool1d),
    UpsampleNearest1d(UpsampleNearest1d),
}

impl<T: Scalar> Layer<T> {
    /// Builds a freshly initialised layer. `Concat` has no layer form.
    pub fn from_spec<R: Rng + ?Sized>(spec: &LayerSpec, init: Init, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        Ok(match *spec {
            LayerSpec::Conv1d { in_channels, out_channels, kernel, stride } => {
                let bound = init.bound(in_channels * kernel);
                Layer::Conv1d(Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    weight: uniform_param(&[out_channels, in_channels, kernel], bound, rng),
                    bias: Tensor::param(&[out_channels], vec![T::ZERO; out_channels])?,
                    input: None,
                })
            }
            LayerSpec::Dense { in_features, out_features } => {
                let bound = init.bound(in_features);
                Layer::Dense(Dense {
                    in_features,
                    out_features,
                    weight: uniform_param(&[out_features, in_features], bound, rng),
                    bias: Tensor::param(&[out_features], vec![T::ZERO; out_features])?,
                    input: None,
                })
            }
            LayerSpec::BatchNorm1d { features, momentum, eps } => Layer::BatchNorm1d(BatchNorm1d {
                features,
                momentum,
                eps,
                gamma: Tensor::param(&[features], vec![T::ONE; features])?,
                beta: Tensor::param(&[features], vec![T::ZERO; features])?,
                running_mean: Tensor::zeros(&[features]),
                running_var: Tensor::full(&[features], T::ONE),
                cache: None,
            }),
            LayerSpec::Relu => Layer::Relu(Relu { input: None }),
            LayerSpec::MaxPool1d { width } => Layer::MaxPool1d(MaxPool1d { width, cache: None }),
            LayerSpec::UpsampleNearest1d { factor } => {
                Layer::UpsampleNearest1d(UpsampleNearest1d { factor, input_shape: None })
            }
            LayerSpec::Concat { .. } => {
                return Err(Error::Parameter("concat is a graph join, not a layer".into()))
            }
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv1d(c) => LayerSpec::Conv1d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
            },
            Layer::Dense(d) => LayerSpec::Dense { in_features: d.in_features, out_features: d.out_features },
            Layer::BatchNorm1d(b) => LayerSpec::BatchNorm1d { features: b.features, momentum: b.momentum, eps: b.eps },
            Layer::Relu(_) => LayerSpec::Relu,
            Layer::MaxPool1d(p) => LayerSpec::MaxPool1d { width: p.width },
            Layer::UpsampleNearest1d(u) => LayerSpec::UpsampleNearest1d { factor: u.factor },
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Layer::Conv1d(_) => "conv1d",
            Layer::Dense(_) => "dense",
            Layer::BatchNorm1d(_) => "batch-norm",
            Layer::Relu(_) => "relu",
            Layer::MaxPool1d(_) => "maxpool1d",
            Layer::UpsampleNearest1d(_) => "upsample",
        }
    }

    /// Forward pass that records what backward needs. In train mode,
    /// batch-norm also updates its running statistics.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let out = match self {
            Layer::Conv1d(c) => {
                let out = c.apply(x)?;
                c.input = Some(x.clone());
                out
            }
            Layer::Dense(d) => {
                let out = d.apply(x)?;
                d.input = Some(x.clone());
                out
            }
            Layer::BatchNorm1d(b) => {
                let (out, cache, stats) = b.apply(x, mode)?;
                if let Some((mean, var)) = stats {
                    b.update_running(&mean, &var);
                }
                b.cache = Some(cache);
                out
            }
            Layer::Relu(r) => {
                r.input = Some(x.clone());
                relu(x)
            }
            Layer::MaxPool1d(p) => {
                let (out, arg) = p.apply(x)?;
                p.cache = Some((x.shape().to_vec(), arg));
                out
            }
            Layer::UpsampleNearest1d(u) => {
                let out = upsample(x, u.factor)?;
                u.input_shape = Some(x.shape().to_vec());
                out
            }
        };
        out.check_finite(self.kind())?;
        Ok(out)
    }

    /// Eval-mode forward that touches no layer state.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out = match self {
            Layer::Conv1d(c) => c.apply(x)?,
            Layer::Dense(d) => d.apply(x)?,
            Layer::BatchNorm1d(b) => b.apply(x, Mode::Eval)?.0,
            Layer::Relu(_) => relu(x),
            Layer::MaxPool1d(p) => p.apply(x)?.0,
            Layer::UpsampleNearest1d(u) => upsample(x, u.factor)?,
        };
        out.check_finite(self.kind())?;
        Ok(out)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dout: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv1d(c) => c.backward(dout),
            Layer::Dense(d) => d.backward(dout),
            Layer::BatchNorm1d(b) => b.backward(dout),
            Layer::Relu(r) => {
                let x = r.input.as_ref().ok_or_else(|| no_cache("relu"))?;
                if x.shape() != dout.shape() {
                    return Err(Error::dim("relu backward: gradient shape".to_string()));
                }
                let data = x
                    .data()
                    .iter()
                    .zip(dout.data())
                    .map(|(&xi, &g)| if xi > T::ZERO { g } else { T::ZERO })
                    .collect();
                Tensor::new(x.shape(), data)
            }
            Layer::MaxPool1d(p) => {
                let (shape, arg) = p.cache.as_ref().ok_or_else(|| no_cache("maxpool1d"))?;
                if arg.len() != dout.len() {
                    return Err(Error::dim("maxpool backward: gradient shape".to_string()));
                }
                let mut dx = Tensor::zeros(shape);
                let d = dx.data_mut();
                for (&a, &g) in arg.iter().zip(dout.data()) {
                    d[a] += g;
                }
                Ok(dx)
            }
            Layer::UpsampleNearest1d(u) => {
                let shape = u.input_shape.as_ref().ok_or_else(|| no_cache("upsample"))?;
                let n: usize = shape.iter().product();
                if dout.len() != n * u.factor {
                    return Err(Error::dim("upsample backward: gradient shape".to_string()));
                }
                let data = dout.data().chunks_exact(u.factor).map(|c| c.iter().copied().sum()).collect();
                Tensor::new(shape, data)
            }
        }
    }

    /// Trainable parameters with their local names.
    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            Layer::Conv1d(c) => vec![("weight", &mut c.weight), ("bias", &mut c.bias)],
            Layer::Dense(d) => vec![("weight", &mut d.weight), ("bias", &mut d.bias)],
            Layer::BatchNorm1d(b) => vec![("gamma", &mut b.gamma), ("beta", &mut b.beta)],
            _ => Vec::new(),
        }
    }

    /// Parameters plus non-trainable buffers (batch-norm running statistics).
    pub fn state(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::Conv1d(c) => vec![("weight", &c.weight), ("bias", &c.bias)],
            Layer::Dense(d) => vec![("weight", &d.weight), ("bias", &d.bias)],
            Layer::BatchNorm1d(b) => vec![
                ("gamma", &b.gamma),
                ("beta", &b.beta),
                ("running_mean", &b.running_mean),
                ("running_var", &b.running_var),
            ],
            _ => Vec::new(),
        }
    }

    pub fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            Layer::Conv1d(c) => vec![("weight", &mut c.weight), ("bias", &mut c.bias)],
            Layer::Dense(d) => vec![("weight", &mut d.weight), ("bias", &mut d.bias)],
            Layer::BatchNorm1d(b) => vec![
                ("gamma", &mut b.gamma),
                ("beta", &mut b.beta),
                ("running_mean", &mut b.running_mean),
                ("running_var", &mut b.running_var),
            ],
            _ => Vec::new(),
        }
    }
}

fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::new(x.shape(), ops::relu_forward(x.data())).expect("same shape")
}

fn upsample<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        return Err(Error::dim(format!("upsample expects [B, C, L], got {:?}", x.shape())));
    }
    let s = x.shape();
    let mut out = Tensor::zeros(&[s[0], s[1], s[2] * factor]);
    ops::upsample_nearest1d(x.data(), factor, out.data_mut());
    Ok(out)
}

/// A chain of layers applied in order.
#[derive(Debug, Clone)]
pub struct Sequential<T: Scalar> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    /// Builds the chain; each weighted layer directly followed (optionally
    /// through a batch-norm) by a ReLU gets He initialisation.
    pub fn from_specs<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let feeds_relu = specs[i + 1..]
                .iter()
                .take_while(|s| !matches!(s, LayerSpec::Conv1d { .. } | LayerSpec::Dense { .. }))
                .any(|s| *s == LayerSpec::Relu);
            let init = if feeds_relu { Init::He } else { Init::FanIn };
            layers.push(Layer::from_spec(spec, init, rng)?);
        }
        Ok(Sequential { layers })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, dout: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = dout.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.params_mut().into_iter().map(move |(n, t)| (format!("{i}.{n}"), t)))
            .collect()
    }

    pub fn state(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.state().into_iter().map(move |(n, t)| (format!("{i}.{n}"), t)))
            .collect()
    }

    pub fn state_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.state_mut().into_iter().map(move |(n, t)| (format!("{i}.{n}"), t)))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// Concatenates two `[B, ...]` tensors along their flattened feature axes.
pub fn concat_features<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let batch = a.shape()[0];
    if b.shape()[0] != batch {
        return Err(Error::dim(format!("concat: batch {} vs {}", batch, b.shape()[0])));
    }
    let (fa, fb) = (a.len() / batch.max(1), b.len() / batch.max(1));
    let mut data = Vec::with_capacity(a.len() + b.len());
    for (ra, rb) in a.rows().zip(b.rows()) {
        data.extend_from_slice(ra);
        data.extend_from_slice(rb);
    }
    Tensor::new(&[batch, fa + fb], data)
}

/// Backward of [`concat_features`]: splits `[B, Fa + Fb]` back into the
/// original shapes.
pub fn split_features<T: Scalar>(g: &Tensor<T>, shape_a: &[usize], shape_b: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
    let batch = shape_a[0];
    let fa: usize = shape_a[1..].iter().product();
    let fb: usize = shape_b[1..].iter().product();
    if g.shape() != [batch, fa + fb] {
        return Err(Error::dim(format!("split: gradient shape {:?}", g.shape())));
    }
    let mut da = Vec::with_capacity(batch * fa);
    let mut db = Vec::with_capacity(batch * fb);
    for row in g.rows() {
        da.extend_from_slice(&row[..fa]);
        db.extend_from_slice(&row[fa..]);
    }
    Ok((Tensor::new(shape_a, da)?, Tensor::new(shape_b, db)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn bn(features: usize) -> Layer<f64> {
        Layer::from_spec(&LayerSpec::batch_norm(features), Init::FanIn, &mut rng()).unwrap()
    }

    #[test]
    fn batchnorm_identical_rows_give_zero() {
        let mut l = bn(3);
        let x = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]).unwrap();
        let y = l.forward(&x, Mode::Train).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batchnorm_gamma_zero_gives_beta() {
        let mut l = bn(2);
        if let Layer::BatchNorm1d(b) = &mut l {
            b.gamma.data_mut().fill(0.0);
            b.beta.data_mut().fill(0.7);
        }
        let x = Tensor::new(&[3, 2], vec![1.0, -4.0, 2.0, 9.0, 3.0, 0.5]).unwrap();
        for mode in [Mode::Train, Mode::Eval] {
            let y = l.forward(&x, mode).unwrap();
            assert!(y.data().iter().all(|v| *v == 0.7));
        }
    }

    #[test]
    fn batchnorm_two_rows() {
        let mut l: Layer<f64> =
            Layer::from_spec(&LayerSpec::BatchNorm1d { features: 1, momentum: 0.1, eps: 1e-12 }, Init::FanIn, &mut rng())
                .unwrap();
        let x = Tensor::new(&[2, 1], vec![1.0, 3.0]).unwrap();
        let y = l.forward(&x, Mode::Train).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);
        if let Layer::BatchNorm1d(b) = &l {
            // running stats: 0.9 * init + 0.1 * batch (unbiased variance 2)
            assert!((b.running_mean.data()[0] - 0.2).abs() < 1e-12);
            assert!((b.running_var.data()[0] - 1.1).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_train_needs_two_samples() {
        let mut l = bn(2);
        let x = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(l.forward(&x, Mode::Train), Err(Error::Parameter(_))));
        assert!(l.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn batchnorm_rank3_pools_over_length() {
        let mut l = bn(2);
        let x = Tensor::new(&[2, 2, 2], vec![1.0, 3.0, 10.0, 10.0, 1.0, 3.0, 20.0, 20.0]).unwrap();
        let y = l.forward(&x, Mode::Train).unwrap();
        let d = y.data();
        assert!((d[0] + d[1]).abs() < 1e-9 && d[0] < 0.0);
        assert!((d[2] + d[6]).abs() < 1e-9 && d[2] < 0.0);
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut l: Layer<f64> = Layer::from_spec(&LayerSpec::dense(2, 2), Init::FanIn, &mut rng()).unwrap();
        let g = Tensor::zeros(&[1, 2]);
        assert!(matches!(l.backward(&g), Err(Error::State(_))));
    }

    #[test]
    fn sum_loss_gives_unit_input_gradient() {
        let mut seq: Sequential<f64> = Sequential::from_specs(&[LayerSpec::UpsampleNearest1d { factor: 1 }], &mut rng()).unwrap();
        let x = Tensor::new(&[1, 1, 4], vec![0.3, -1.0, 2.0, 5.0]).unwrap();
        let y = seq.forward(&x, Mode::Train).unwrap();
        let dx = seq.backward(&Tensor::full(y.shape(), 1.0)).unwrap();
        assert_eq!(dx.data(), &[1.0; 4]);
    }

    #[test]
    fn gradients_accumulate_across_backward_calls() {
        let mut l: Layer<f64> = Layer::from_spec(&LayerSpec::dense(2, 1), Init::FanIn, &mut rng()).unwrap();
        let x = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        l.forward(&x, Mode::Train).unwrap();
        let g = Tensor::full(&[1, 1], 1.0);
        l.backward(&g).unwrap();
        l.backward(&g).unwrap();
        let params = l.params_mut();
        assert_eq!(params[0].1.grad().unwrap(), &[2.0, 4.0]);
        assert_eq!(params[1].1.grad().unwrap(), &[2.0]);
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let mut l: Layer<f64> = Layer::from_spec(&LayerSpec::MaxPool1d { width: 2 }, Init::FanIn, &mut rng()).unwrap();
        let x = Tensor::new(&[1, 1, 5], vec![2.0, 2.0, 0.0, 1.0, 9.0]).unwrap();
        l.forward(&x, Mode::Train).unwrap();
        let dx = l.backward(&Tensor::new(&[1, 1, 2], vec![3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[3.0, 0.0, 0.0, 4.0, 0.0]);
    }

    #[test]
    fn relu_backward_is_zero_at_zero() {
        let mut l: Layer<f64> = Layer::from_spec(&LayerSpec::Relu, Init::FanIn, &mut rng()).unwrap();
        let x = Tensor::new(&[1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        l.forward(&x, Mode::Train).unwrap();
        let dx = l.backward(&Tensor::full(&[1, 3], 5.0)).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(LayerSpec::conv(1, 1, 4).validate().is_err());
        assert!(LayerSpec::conv(1, 1, 5).validate().is_ok());
    }

    #[test]
    fn encoder_conv_chain_shapes() {
        let mut shape = vec![1, 400];
        let mut seen = Vec::new();
        for (cin, cout) in [(1, 16), (16, 32), (32, 64), (64, 128)] {
            for spec in [
                LayerSpec::conv(cin, cout, 5),
                LayerSpec::batch_norm(cout),
                LayerSpec::Relu,
                LayerSpec::MaxPool1d { width: 2 },
            ] {
                shape = spec.output_shape(&shape).unwrap();
            }
            seen.push(shape[1]);
        }
        assert_eq!(seen, vec![200, 100, 50, 25]);
        assert_eq!(LayerSpec::conv(128, 1, 1).output_shape(&shape).unwrap(), vec![1, 25]);
    }

    #[test]
    fn concat_split_round_trip() {
        let a = Tensor::<f64>::new(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::new(&[2, 1], vec![9.0, 8.0]).unwrap();
        let c = concat_features(&a, &b).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
        let (ga, gb) = split_features(&c, a.shape(), b.shape()).unwrap();
        assert_eq!(ga, a);
        assert_eq!(gb, b);
    }
}
