//! Finite-difference gradient checking in f64.
//!
//! Each check compares an analytic directional derivative `g · v` with the
//! central difference `(L(p + h v) - L(p - h v)) / 2h`. Single layers and
//! chains use the objective `L = sum(w * f(x))` with fixed random `w`; the
//! full model uses its training objective with fixed reparameterisation
//! noise. Parameters are jittered away from their initial values first so
//! batch-norm does not sit at `gamma = 1, beta = 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Init, Layer, LayerSpec, Mode, Sequential, Tensor};
use crate::error::Result;
use crate::vae::{Architecture, VaeModel};

/// Step for the central differences.
pub const STEP: f64 = 1e-7;

/// Central differences cannot resolve slopes below `eps * S / 2h`, where `S`
/// is the sum of magnitudes of the terms making up the objective. Directional
/// derivatives smaller than this many resolution units are judged on
/// absolute error against that scale rather than relative to themselves.
/// A bias feeding a train-mode batch-norm, whose gradient is exactly zero,
/// is the typical case.
const RESOLUTION_FLOOR: f64 = 1e4;

/// Worst relative error seen over a set of directions.
///
/// ReLU and max-pool make the objective piecewise smooth. A probe whose
/// step straddles a kink gives a difference quotient that moves when the
/// step is halved, while a wrong analytic gradient leaves both quotients in
/// agreement with each other. Probes of the first kind are counted in
/// `kinks` and excluded from `max_rel_err`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// Which direction produced `max_rel_err`.
    pub worst: String,
    pub checks: usize,
    pub kinks: usize,
}

/// Objective and the sum of magnitudes of its terms at `p + s v`.
type Probe<'a> = dyn FnMut(f64) -> Result<(f64, f64)> + 'a;

fn central(probe: &mut Probe<'_>, h: f64) -> Result<(f64, f64)> {
    let (lp, sp) = probe(h)?;
    let (lm, sm) = probe(-h)?;
    Ok(((lp - lm) / (2.0 * h), f64::EPSILON * sp.max(sm) / (2.0 * h)))
}

impl GradReport {
    fn record(&mut self, analytic: f64, probe: &mut Probe<'_>, what: impl FnOnce() -> String) -> Result<()> {
        let (numeric, resolution) = central(probe, STEP)?;
        let e = relative_error(analytic, numeric, RESOLUTION_FLOOR * resolution);
        if e > 1e-6 {
            // Rounding alone moves a quotient by a few resolution units, so
            // a shift only counts as step dependence well above that.
            let (half, half_resolution) = central(probe, STEP / 2.0)?;
            let shift = (numeric - half).abs();
            if shift > 0.25 * (analytic - numeric).abs() && shift > 100.0 * half_resolution {
                self.kinks += 1;
                return Ok(());
            }
        }
        if self.checks == 0 || e > self.max_rel_err {
            self.max_rel_err = e;
            self.worst = what();
        }
        self.checks += 1;
        Ok(())
    }

    pub fn merge(mut self, other: GradReport) -> GradReport {
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
        self.checks += other.checks;
        self.kinks += other.kinks;
        self
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v = normal_vec(rng, n);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn shift(t: &mut Tensor<f64>, v: &[f64], s: f64) {
    for (x, d) in t.data_mut().iter_mut().zip(v) {
        *x += s * d;
    }
}

trait Unit {
    fn fwd(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>>;
    fn bwd(&mut self, dout: &Tensor<f64>) -> Result<Tensor<f64>>;
    fn params(&mut self) -> Vec<(String, &mut Tensor<f64>)>;
}

impl Unit for Layer<f64> {
    fn fwd(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.forward(x, Mode::Train)
    }
    fn bwd(&mut self, dout: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.backward(dout)
    }
    fn params(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        self.params_mut().into_iter().map(|(n, t)| (n.to_string(), t)).collect()
    }
}

impl Unit for Sequential<f64> {
    fn fwd(&mut self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.forward(x, Mode::Train)
    }
    fn bwd(&mut self, dout: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.backward(dout)
    }
    fn params(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        self.params_mut()
    }
}

fn check_unit(unit: &mut dyn Unit, input_shape: &[usize], rng: &mut ChaCha8Rng) -> Result<GradReport> {
    for (_, p) in unit.params() {
        let jitter = normal_vec(rng, p.len());
        shift(p, &jitter, 0.1);
        p.zero_grad();
    }
    let n_in: usize = input_shape.iter().product();
    let mut x = Tensor::from_f64(input_shape, &normal_vec(rng, n_in))?;
    let y = unit.fwd(&x)?;
    let w = normal_vec(rng, y.len());
    let dx = unit.bwd(&Tensor::from_f64(y.shape(), &w)?)?.to_f64_vec();
    let grads: Vec<(String, Vec<f64>)> = unit
        .params()
        .into_iter()
        .map(|(n, p)| (n, p.grad().map(<[f64]>::to_vec).unwrap_or_default()))
        .collect();
    let objective = |unit: &mut dyn Unit, x: &Tensor<f64>| -> Result<(f64, f64)> {
        let y = unit.fwd(x)?.to_f64_vec();
        Ok((dot(&y, &w), y.iter().zip(&w).map(|(a, b)| (a * b).abs()).sum()))
    };

    let mut report = GradReport::default();
    for k in 0..3 {
        let v = unit_vec(rng, n_in);
        let mut probe = |s: f64| {
            shift(&mut x, &v, s);
            let r = objective(unit, &x);
            shift(&mut x, &v, -s);
            r
        };
        report.record(dot(&dx, &v), &mut probe, || format!("input direction {k}"))?;
    }
    for (pi, (name, g)) in grads.iter().enumerate() {
        for k in 0..2 {
            let v = unit_vec(rng, g.len());
            let mut probe = |s: f64| {
                let nudge = |unit: &mut dyn Unit, s: f64| {
                    if let Some((_, p)) = unit.params().into_iter().nth(pi) {
                        shift(p, &v, s);
                    }
                };
                nudge(unit, s);
                let r = objective(unit, &x);
                nudge(unit, -s);
                r
            };
            report.record(dot(g, &v), &mut probe, || format!("{name} direction {k}"))?;
        }
    }
    Ok(report)
}

/// Checks one layer built from `spec` (train mode) on a random batch of shape `input_shape`.
pub fn check_layer(spec: &LayerSpec, input_shape: &[usize], seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = Layer::<f64>::from_spec(spec, Init::FanIn, &mut rng)?;
    check_unit(&mut layer, input_shape, &mut rng)
}

/// Checks a chain of layers as one unit.
pub fn check_sequential(specs: &[LayerSpec], input_shape: &[usize], seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq = Sequential::<f64>::from_specs(specs, &mut rng)?;
    check_unit(&mut seq, input_shape, &mut rng)
}

/// Checks the full training objective of a model with architecture `arch`:
/// one joint direction over all parameters, one direction per parameter
/// tensor, and `coordinates` randomly chosen single parameters.
pub fn check_model(arch: &Architecture, batch: usize, beta: f64, seed: u64, coordinates: usize) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut model = VaeModel::<f64>::new(arch.clone(), seed)?;
    for (_, p) in model.params_mut() {
        let jitter = normal_vec(&mut rng, p.len());
        shift(p, &jitter, 0.02);
    }
    let x = Tensor::from_f64(&[batch, arch.input_len], &normal_vec(&mut rng, batch * arch.input_len))?;
    let noise = Tensor::from_f64(&[batch, arch.latent_dim], &normal_vec(&mut rng, batch * arch.latent_dim))?;
    model.zero_grad();
    model.loss_and_backward(&x, &noise, beta)?;
    let grads: Vec<(String, Vec<f64>)> = model
        .params_mut()
        .into_iter()
        .map(|(n, p)| (n, p.grad().map(<[f64]>::to_vec).unwrap_or_default()))
        .collect();
    // every term of the VAE objective is non-negative, so |L| is its own scale
    let loss = |m: &mut VaeModel<f64>| -> Result<(f64, f64)> {
        let l = m.loss(&x, &noise, beta, Mode::Train)?.total();
        Ok((l, l.abs()))
    };

    // each probe is a sparse direction: (tensor index, dense direction)
    let mut probes: Vec<(String, Vec<(usize, Vec<f64>)>)> = Vec::new();
    let dirs: Vec<(usize, Vec<f64>)> = grads.iter().enumerate().map(|(i, (_, g))| (i, unit_vec(&mut rng, g.len()))).collect();
    probes.push(("all parameters".into(), dirs.clone()));
    for (i, d) in dirs {
        probes.push((grads[i].0.clone(), vec![(i, d)]));
    }
    let total: usize = grads.iter().map(|(_, g)| g.len()).sum();
    for _ in 0..coordinates {
        let mut flat = rng.random_range(0..total);
        let (i, (name, g)) = grads.iter().enumerate().find(|(_, (_, g))| {
            if flat < g.len() {
                true
            } else {
                flat -= g.len();
                false
            }
        }).expect("index within total");
        let mut e = vec![0.0; g.len()];
        e[flat] = 1.0;
        probes.push((format!("{name}[{flat}]"), vec![(i, e)]));
    }

    let mut report = GradReport::default();
    for (what, dir) in probes {
        let analytic: f64 = dir.iter().map(|(i, v)| dot(&grads[*i].1, v)).sum();
        let mut probe = |s: f64| {
            let nudge = |m: &mut VaeModel<f64>, s: f64| {
                let mut params = m.params_mut();
                for (i, v) in &dir {
                    shift(params[*i].1, v, s);
                }
            };
            nudge(&mut model, s);
            let r = loss(&mut model);
            nudge(&mut model, -s);
            r
        };
        report.record(analytic, &mut probe, || what.clone())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1, 0.0) - 0.1 / 1.1).abs() < 1e-15);
        assert_eq!(relative_error(1e-12, 0.0, 1e-6), 1e-6);
        assert_eq!(relative_error(0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // f(s) = 3 s + s^2 has slope 3 at the origin
        let mut smooth = |s: f64| Ok((3.0 * s + s * s, 1.0));
        let mut r = GradReport::default();
        r.record(2.0, &mut smooth, || "bad".into()).unwrap();
        r.record(3.0, &mut smooth, || "good".into()).unwrap();
        assert!((r.max_rel_err - 1.0 / 3.0).abs() < 1e-6);
        assert_eq!(r.worst, "bad");
        assert_eq!((r.checks, r.kinks), (2, 0));
    }

    #[test]
    fn kink_inside_the_step_is_set_aside() {
        // relu shifted so the kink sits between h/2 and h from the origin
        let mut relu = |s: f64| Ok(((s - 0.7 * STEP).max(0.0), 1.0));
        let mut r = GradReport::default();
        r.record(0.0, &mut relu, || "kink".into()).unwrap();
        assert_eq!((r.checks, r.kinks), (0, 1));
    }
}
