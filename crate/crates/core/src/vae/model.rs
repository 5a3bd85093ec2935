use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{vae_loss_grads, Architecture, CardiacCycle, LatentCode, LossParts, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{concat_features, split_features, Mode, Scalar, Sequential, Tensor};

/// Activations of one training forward pass.
#[derive(Debug, Clone)]
pub struct Forward<T: Scalar> {
    pub mu: Tensor<T>,
    pub logvar: Tensor<T>,
    pub z: Tensor<T>,
    pub xhat: Tensor<T>,
}

#[derive(Debug, Clone)]
struct StepCache<T: Scalar> {
    enc_conv_shape: Vec<usize>,
    enc_dense_shape: Vec<usize>,
    dec_dense_shape: Vec<usize>,
    dec_conv_shape: Vec<usize>,
    noise: Tensor<T>,
    logvar: Tensor<T>,
}

/// Encoder and decoder parameters plus the architecture they were built from.
///
/// Encoder: the cycle goes through a conv chain (ending at `[1, 25]`) and a
/// dense chain (ending at 25) in parallel; the two are concatenated to 50
/// and two dense heads give `mu` and `logvar`. Decoder: `z` goes through a
/// dense chain (to 400) and a conv/upsample chain (to `[1, 400]`), the two are
/// concatenated to 800 and a dense head maps back to 400 samples.
#[derive(Debug, Clone)]
pub struct VaeModel<T: Scalar = f32> {
    arch: Architecture,
    enc_conv: Sequential<T>,
    enc_dense: Sequential<T>,
    mu_head: Sequential<T>,
    logvar_head: Sequential<T>,
    dec_dense: Sequential<T>,
    dec_conv: Sequential<T>,
    dec_head: Sequential<T>,
    pub init_seed: u64,
    pub train_config: Option<TrainConfig>,
    cache: Option<StepCache<T>>,
}

impl<T: Scalar> VaeModel<T> {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut build = |specs: &[crate::nn::LayerSpec]| Sequential::from_specs(specs, &mut rng);
        Ok(VaeModel {
            enc_conv: build(&arch.enc_conv)?,
            enc_dense: build(&arch.enc_dense)?,
            mu_head: build(std::slice::from_ref(&arch.mu_head))?,
            logvar_head: build(std::slice::from_ref(&arch.logvar_head))?,
            dec_dense: build(&arch.dec_dense)?,
            dec_conv: build(&arch.dec_conv)?,
            dec_head: build(std::slice::from_ref(&arch.dec_head))?,
            arch,
            init_seed: seed,
            train_config: None,
            cache: None,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_len(&self) -> usize {
        self.arch.input_len
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn branches(&self) -> [(&'static str, &Sequential<T>); 7] {
        [
            ("encoder.conv", &self.enc_conv),
            ("encoder.dense", &self.enc_dense),
            ("encoder.mu", &self.mu_head),
            ("encoder.logvar", &self.logvar_head),
            ("decoder.dense", &self.dec_dense),
            ("decoder.conv", &self.dec_conv),
            ("decoder.head", &self.dec_head),
        ]
    }

    fn branches_mut(&mut self) -> [(&'static str, &mut Sequential<T>); 7] {
        [
            ("encoder.conv", &mut self.enc_conv),
            ("encoder.dense", &mut self.enc_dense),
            ("encoder.mu", &mut self.mu_head),
            ("encoder.logvar", &mut self.logvar_head),
            ("decoder.dense", &mut self.dec_dense),
            ("decoder.conv", &mut self.dec_conv),
            ("decoder.head", &mut self.dec_head),
        ]
    }

    /// Trainable parameters with stable dotted names, in a fixed order.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.branches_mut()
            .into_iter()
            .flat_map(|(prefix, seq)| {
                seq.params_mut().into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
            })
            .collect()
    }

    /// Every persisted tensor (parameters and batch-norm running statistics).
    pub fn state(&self) -> Vec<(String, &Tensor<T>)> {
        self.branches()
            .into_iter()
            .flat_map(|(prefix, seq)| seq.state().into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t)))
            .collect()
    }

    pub fn state_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.branches_mut()
            .into_iter()
            .flat_map(|(prefix, seq)| {
                seq.state_mut().into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
            })
            .collect()
    }

    pub fn num_params(&mut self) -> usize {
        self.params_mut().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for (_, seq) in self.branches_mut() {
            seq.zero_grad();
        }
    }

    fn check_batch(&self, x: &Tensor<T>, width: usize, what: &str) -> Result<usize> {
        if x.rank() != 2 || x.shape()[1] != width {
            return Err(Error::dim(format!("{what}: expected [batch, {width}], got {:?}", x.shape())));
        }
        Ok(x.shape()[0])
    }

    /// Eval-mode encoding of a `[batch, input_len]` tensor into `(mu, logvar)`.
    pub fn encode_batch(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let batch = self.check_batch(x, self.arch.input_len, "encode")?;
        let hc = self.enc_conv.infer(&x.clone().reshape(&[batch, 1, self.arch.input_len])?)?;
        let hd = self.enc_dense.infer(x)?;
        let h = concat_features(&hc, &hd)?;
        Ok((self.mu_head.infer(&h)?, self.logvar_head.infer(&h)?))
    }

    /// Eval-mode decoding of a `[batch, latent_dim]` tensor.
    pub fn decode_batch(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = self.check_batch(z, self.arch.latent_dim, "decode")?;
        z.check_finite("latent input")?;
        let dd = self.dec_dense.infer(z)?;
        let dc = self.dec_conv.infer(&z.clone().reshape(&[batch, 1, self.arch.latent_dim])?)?;
        self.dec_head.infer(&concat_features(&dd, &dc)?)
    }

    /// Posterior mean and log-variance of one cycle (eval mode).
    pub fn encode(&self, cycle: &CardiacCycle) -> Result<LatentCode> {
        cycle.validate(self.arch.input_len)?;
        let x = Tensor::new(
            &[1, self.arch.input_len],
            cycle.samples.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )?;
        let (mu, logvar) = self.encode_batch(&x)?;
        Ok(LatentCode { mu: mu.to_f64_vec(), logvar: logvar.to_f64_vec(), z: None, noise_seed: None })
    }

    /// Reconstructs one cycle from a latent vector (eval mode).
    pub fn decode(&self, z: &[f64]) -> Result<CardiacCycle> {
        if z.len() != self.arch.latent_dim {
            return Err(Error::dim(format!("decode: z has {} entries, expected {}", z.len(), self.arch.latent_dim)));
        }
        let zt = Tensor::from_f64(&[1, z.len()], z)?;
        let out = self.decode_batch(&zt)?;
        Ok(CardiacCycle::new(out.data().iter().map(|v| v.to_f64() as f32).collect()))
    }

    /// Training-graph forward pass. `noise` has the shape of `mu`.
    pub fn forward(&mut self, x: &Tensor<T>, noise: &Tensor<T>, mode: Mode) -> Result<Forward<T>> {
        let (n, d) = (self.arch.input_len, self.arch.latent_dim);
        let batch = self.check_batch(x, n, "forward")?;
        if noise.shape() != [batch, d] {
            return Err(Error::dim(format!("noise shape {:?}, expected [{batch}, {d}]", noise.shape())));
        }
        let hc = self.enc_conv.forward(&x.clone().reshape(&[batch, 1, n])?, mode)?;
        let hd = self.enc_dense.forward(x, mode)?;
        let h = concat_features(&hc, &hd)?;
        let mu = self.mu_head.forward(&h, mode)?;
        let logvar = self.logvar_head.forward(&h, mode)?;

        let zdata = mu
            .data()
            .iter()
            .zip(logvar.data())
            .zip(noise.data())
            .map(|((&m, &lv), &e)| m + (lv * T::from_f64(0.5)).exp() * e)
            .collect();
        let z = Tensor::new(&[batch, d], zdata)?;
        z.check_finite("latent sample")?;

        let dd = self.dec_dense.forward(&z, mode)?;
        let dc = self.dec_conv.forward(&z.clone().reshape(&[batch, 1, d])?, mode)?;
        let xhat = self.dec_head.forward(&concat_features(&dd, &dc)?, mode)?;

        self.cache = Some(StepCache {
            enc_conv_shape: hc.shape().to_vec(),
            enc_dense_shape: hd.shape().to_vec(),
            dec_dense_shape: dd.shape().to_vec(),
            dec_conv_shape: dc.shape().to_vec(),
            noise: noise.clone(),
            logvar: logvar.clone(),
        });
        Ok(Forward { mu, logvar, z, xhat })
    }

    /// Backpropagates gradients of the loss with respect to the
    /// reconstruction, `mu` and `logvar` into every parameter.
    pub fn backward(&mut self, dxhat: &Tensor<T>, dmu: &Tensor<T>, dlogvar: &Tensor<T>) -> Result<()> {
        let c = self.cache.clone().ok_or_else(|| Error::State("model backward called before forward".into()))?;
        let dcat = self.dec_head.backward(dxhat)?;
        let (gdd, gdc) = split_features(&dcat, &c.dec_dense_shape, &c.dec_conv_shape)?;
        let dz_dense = self.dec_dense.backward(&gdd)?;
        let dz_conv = self.dec_conv.backward(&gdc)?;

        let half = T::from_f64(0.5);
        let mut dmu_total = dmu.clone();
        let mut dlv_total = dlogvar.clone();
        for i in 0..dmu_total.len() {
            let dz = dz_dense.data()[i] + dz_conv.data()[i];
            dmu_total.data_mut()[i] += dz;
            let sd = (c.logvar.data()[i] * half).exp();
            dlv_total.data_mut()[i] += dz * c.noise.data()[i] * sd * half;
        }

        let mut dh = self.mu_head.backward(&dmu_total)?;
        let dh_lv = self.logvar_head.backward(&dlv_total)?;
        for (a, &b) in dh.data_mut().iter_mut().zip(dh_lv.data()) {
            *a += b;
        }
        let (ghc, ghd) = split_features(&dh, &c.enc_conv_shape, &c.enc_dense_shape)?;
        self.enc_conv.backward(&ghc)?;
        self.enc_dense.backward(&ghd)?;
        Ok(())
    }

    /// Forward pass and loss without touching gradients.
    pub fn loss(&mut self, x: &Tensor<T>, noise: &Tensor<T>, beta: f64, mode: Mode) -> Result<LossParts> {
        let f = self.forward(x, noise, mode)?;
        Ok(vae_loss_grads(x, &f.xhat, &f.mu, &f.logvar, beta)?.0)
    }

    /// Forward, loss and backward; gradients are accumulated, not reset.
    pub fn loss_and_backward(&mut self, x: &Tensor<T>, noise: &Tensor<T>, beta: f64) -> Result<LossParts> {
        let f = self.forward(x, noise, Mode::Train)?;
        let (parts, dxhat, dmu, dlv) = vae_loss_grads(x, &f.xhat, &f.mu, &f.logvar, beta)?;
        self.backward(&dxhat, &dmu, &dlv)?;
        Ok(parts)
    }

    /// Copy of the model with every tensor converted to another element type.
    pub fn cast<U: Scalar>(&self) -> Result<VaeModel<U>> {
        let mut out = VaeModel::<U>::new(self.arch.clone(), self.init_seed)?;
        for ((_, dst), (_, src)) in out.state_mut().into_iter().zip(self.state()) {
            *dst = src.cast();
        }
        out.train_config = self.train_config.clone();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> VaeModel<f32> {
        VaeModel::new(Architecture::default(), 3).unwrap()
    }

    fn wave() -> CardiacCycle {
        CardiacCycle::new((0..400).map(|i| ((i as f32) * 0.05).sin()).collect())
    }

    #[test]
    fn encode_gives_two_25_vectors_deterministically() {
        let m = model();
        let a = m.encode(&wave()).unwrap();
        let b = m.encode(&wave()).unwrap();
        assert_eq!((a.mu.len(), a.logvar.len()), (25, 25));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_cycle_encodes_finite() {
        let c = model().encode(&CardiacCycle::new(vec![0.0; 400])).unwrap();
        assert!(c.mu.iter().chain(&c.logvar).all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_lengths_rejected() {
        let m = model();
        assert!(matches!(m.encode(&CardiacCycle::new(vec![0.0; 399])), Err(Error::Dimension(_))));
        assert!(matches!(m.decode(&[0.0; 24]), Err(Error::Dimension(_))));
    }

    #[test]
    fn decode_gives_400_deterministically() {
        let m = model();
        let z: Vec<f64> = (0..25).map(|i| i as f64 * 0.1 - 1.2).collect();
        let a = m.decode(&z).unwrap();
        assert_eq!(a.len(), 400);
        assert_eq!(a, m.decode(&z).unwrap());
    }

    #[test]
    fn batch_and_single_encode_agree() {
        let m = model();
        let c = wave();
        let mut rows = c.samples.clone();
        rows.extend(c.samples.iter().map(|v| -v));
        let (mu, _) = m.encode_batch(&Tensor::new(&[2, 400], rows).unwrap()).unwrap();
        let single = m.encode(&c).unwrap();
        assert_eq!(&mu.to_f64_vec()[..25], single.mu.as_slice());
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut m = model();
        let g = Tensor::zeros(&[2, 25]);
        assert!(matches!(m.backward(&Tensor::zeros(&[2, 400]), &g, &g), Err(Error::State(_))));
    }

    #[test]
    fn parameter_names_are_unique() {
        let mut m = model();
        let mut names: Vec<String> = m.params_mut().into_iter().map(|(n, _)| n).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        assert!(names.contains(&"decoder.head.0.weight".to_string()));
    }
}
