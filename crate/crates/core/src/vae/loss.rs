use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

use super::{CardiacCycle, LatentCode};

/// KL divergence of `N(mu, diag(exp(logvar)))` from the standard normal,
/// in closed form: `0.5 * sum(mu^2 + exp(logvar) - logvar - 1)`.
pub fn kl_loss(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
}

/// Mean squared error over the samples of two equal-length cycles.
pub fn recon_loss(x: &CardiacCycle, xhat: &CardiacCycle) -> Result<f64> {
    if x.len() != xhat.len() {
        return Err(Error::dim(format!("recon_loss: lengths {} and {}", x.len(), xhat.len())));
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = x
        .samples
        .iter()
        .zip(&xhat.samples)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / x.len() as f64)
}

/// `z = mu + exp(logvar / 2) * noise`, with `noise` drawn by the caller.
pub fn reparameterize(code: &LatentCode, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != code.mu.len() || code.logvar.len() != code.mu.len() {
        return Err(Error::dim(format!(
            "reparameterize: mu {}, logvar {}, noise {}",
            code.mu.len(),
            code.logvar.len(),
            noise.len()
        )));
    }
    Ok(code
        .mu
        .iter()
        .zip(&code.logvar)
        .zip(noise)
        .map(|((&m, &lv), &e)| m + (lv / 2.0).exp() * e)
        .collect())
}

/// Batch-averaged loss components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub recon: f64,
    pub kl: f64,
    pub beta: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.recon + self.beta * self.kl
    }
}

/// Loss of a batch and its gradients with respect to the reconstruction,
/// the means and the log-variances.
///
/// Both terms are averaged over the batch; the reconstruction term is the
/// per-cycle mean squared error.
#[allow(clippy::type_complexity)]
pub fn vae_loss_grads<T: Scalar>(
    x: &Tensor<T>,
    xhat: &Tensor<T>,
    mu: &Tensor<T>,
    logvar: &Tensor<T>,
    beta: f64,
) -> Result<(LossParts, Tensor<T>, Tensor<T>, Tensor<T>)> {
    if x.shape() != xhat.shape() || mu.shape() != logvar.shape() || x.shape()[0] != mu.shape()[0] {
        return Err(Error::dim(format!(
            "loss: x {:?}, xhat {:?}, mu {:?}, logvar {:?}",
            x.shape(),
            xhat.shape(),
            mu.shape(),
            logvar.shape()
        )));
    }
    let batch = x.shape()[0] as f64;
    let per = (x.len() as f64 / batch).max(1.0);

    let mut recon = 0.0;
    let mut dxhat = Vec::with_capacity(x.len());
    for (&a, &b) in x.data().iter().zip(xhat.data()) {
        let d = b.to_f64() - a.to_f64();
        recon += d * d;
        dxhat.push(T::from_f64(2.0 * d / (batch * per)));
    }
    recon /= batch * per;

    let mut kl = 0.0;
    let mut dmu = Vec::with_capacity(mu.len());
    let mut dlogvar = Vec::with_capacity(mu.len());
    for (&m, &lv) in mu.data().iter().zip(logvar.data()) {
        let (m, lv) = (m.to_f64(), lv.to_f64());
        let e = lv.exp();
        kl += 0.5 * (m * m + e - lv - 1.0);
        dmu.push(T::from_f64(beta * m / batch));
        dlogvar.push(T::from_f64(beta * 0.5 * (e - 1.0) / batch));
    }
    kl /= batch;

    let parts = LossParts { recon, kl, beta };
    if !parts.total().is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((
        parts,
        Tensor::new(x.shape(), dxhat)?,
        Tensor::new(mu.shape(), dmu)?,
        Tensor::new(mu.shape(), dlogvar)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Numerical integration of `p log(p/q)` for 1-D Gaussians, as the
    /// oracle for the closed form.
    fn kl_by_quadrature(mu: f64, logvar: f64) -> f64 {
        let sd = (logvar / 2.0).exp();
        let (lo, hi) = (mu - 12.0 * sd - 12.0, mu + 12.0 * sd + 12.0);
        let steps = 200_000;
        let h = (hi - lo) / steps as f64;
        let norm = |x: f64, m: f64, s: f64| {
            let u = (x - m) / s;
            (-0.5 * u * u).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
        };
        let f = |x: f64| {
            let p = norm(x, mu, sd);
            let q = norm(x, 0.0, 1.0);
            if p > 0.0 { p * (p / q).ln() } else { 0.0 }
        };
        // composite Simpson
        let mut acc = f(lo) + f(hi);
        for i in 1..steps {
            let x = lo + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        acc * h / 3.0
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_loss(&[0.0; 25], &[0.0; 25]), 0.0);
        assert!((kl_loss(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
        let expect = (std::f64::consts::E - 2.0) / 2.0;
        assert!((kl_loss(&[0.0], &[1.0]) - expect).abs() < 1e-15);
        assert!((expect - 0.35914).abs() < 1e-5);
        assert!((kl_by_quadrature(0.0, 1.0) - expect).abs() < 1e-6);
    }

    #[test]
    fn recon_examples() {
        let zero = CardiacCycle::new(vec![0.0; 400]);
        assert_eq!(recon_loss(&zero, &zero).unwrap(), 0.0);
        let ones = CardiacCycle::new(vec![1.0; 400]);
        assert_eq!(recon_loss(&zero, &ones).unwrap(), 1.0);
        let mut spike = vec![0.0; 400];
        spike[0] = 2.0;
        assert!((recon_loss(&zero, &CardiacCycle::new(spike)).unwrap() - 0.01).abs() < 1e-15);
        assert!(matches!(
            recon_loss(&zero, &CardiacCycle::new(vec![0.0; 399])),
            Err(Error::Dimension(_))
        ));
    }

    fn code(mu: f64, logvar: f64) -> LatentCode {
        LatentCode { mu: vec![mu; 25], logvar: vec![logvar; 25], z: None, noise_seed: None }
    }

    #[test]
    fn reparameterize_examples() {
        let c = LatentCode { mu: (0..25).map(|i| i as f64).collect(), ..code(0.0, 0.3) };
        assert_eq!(reparameterize(&c, &[0.0; 25]).unwrap(), c.mu);
        let noise: Vec<f64> = (0..25).map(|i| i as f64 * 0.1 - 1.0).collect();
        let unit = LatentCode { logvar: vec![0.0; 25], ..c.clone() };
        let z = reparameterize(&unit, &noise).unwrap();
        for i in 0..25 {
            assert_eq!(z[i], c.mu[i] + noise[i]);
        }
        let z = reparameterize(&code(0.0, 4f64.ln()), &[1.0; 25]).unwrap();
        assert!(z.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn batch_loss_matches_per_sample_forms() {
        let x = Tensor::<f64>::new(&[2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let xh = Tensor::<f64>::new(&[2, 3], vec![0.5, 1.0, 2.0, 3.0, 3.0, 5.0]).unwrap();
        let mu = Tensor::<f64>::new(&[2, 1], vec![1.0, 0.0]).unwrap();
        let lv = Tensor::<f64>::new(&[2, 1], vec![0.0, 1.0]).unwrap();
        let (p, dxh, dmu, dlv) = vae_loss_grads(&x, &xh, &mu, &lv, 2.0).unwrap();
        assert!((p.recon - (0.25 / 3.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((p.kl - (0.5 + (std::f64::consts::E - 2.0) / 2.0) / 2.0).abs() < 1e-15);
        assert!((p.total() - (p.recon + 2.0 * p.kl)).abs() < 1e-15);
        assert!((dxh.data()[0] - 2.0 * 0.5 / 6.0).abs() < 1e-15);
        assert!((dmu.data()[0] - 1.0).abs() < 1e-15);
        assert!((dlv.data()[1] - (std::f64::consts::E - 1.0) / 2.0).abs() < 1e-15);
    }
}
