//! Finite-channel forward simulation of a deep convolutional network with
//! iid symmetric stable weights and biases, evaluated jointly on `K` inputs.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch::{extract_patches, ConvLayerConfig, PatchMap};
use crate::rng::{domain, SeedStream};
use crate::stable::{check_alpha, sample_standard};
use crate::tensor::{Axis, AxisRole, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// Clip to `[-1, 1]`.
    HardClip,
    /// `sign(s) |s|^0.9`.
    SignedPower,
    Relu,
}

pub const SIGNED_POWER_EXPONENT: f64 = 0.9;

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::HardClip => "hard_clip",
            Activation::SignedPower => "signed_power",
            Activation::Relu => "relu",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "hard_clip" => Ok(Activation::HardClip),
            "signed_power" => Ok(Activation::SignedPower),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::config(format!("unknown activation {other:?}"))),
        }
    }

    #[inline]
    pub fn apply(&self, s: f64) -> f64 {
        match self {
            Activation::Tanh => s.tanh(),
            Activation::HardClip => s.clamp(-1.0, 1.0),
            Activation::SignedPower => s.signum() * s.abs().powf(SIGNED_POWER_EXPONENT),
            Activation::Relu => s.max(0.0),
        }
    }
}

/// An activation together with envelope constants `a, b, beta` such that
/// `|phi(s)| <= a + b |s|^beta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub activation: Activation,
    pub a: f64,
    pub b: f64,
    pub beta: f64,
}

impl ActivationSpec {
    pub fn tanh() -> Self {
        ActivationSpec { activation: Activation::Tanh, a: 1.0, b: 1.0, beta: 0.0 }
    }

    pub fn hard_clip() -> Self {
        ActivationSpec { activation: Activation::HardClip, a: 1.0, b: 1.0, beta: 0.0 }
    }

    pub fn signed_power() -> Self {
        ActivationSpec {
            activation: Activation::SignedPower,
            a: 1.0,
            b: 1.0,
            beta: SIGNED_POWER_EXPONENT,
        }
    }

    /// Outside the `beta < 1` envelope; only accepted at `alpha = 2`.
    pub fn relu() -> Self {
        ActivationSpec { activation: Activation::Relu, a: 1.0, b: 1.0, beta: 1.0 }
    }

    pub fn from_activation(activation: Activation) -> Self {
        match activation {
            Activation::Tanh => Self::tanh(),
            Activation::HardClip => Self::hard_clip(),
            Activation::SignedPower => Self::signed_power(),
            Activation::Relu => Self::relu(),
        }
    }

    pub fn name(&self) -> &'static str {
        self.activation.name()
    }

    #[inline]
    pub fn apply(&self, s: f64) -> f64 {
        self.activation.apply(s)
    }

    /// Checks the envelope bound on a log-spaced grid over `[-1e6, 1e6]`.
    pub fn check_envelope(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0 && self.beta >= 0.0) {
            return Err(Error::config("envelope needs a > 0, b > 0, beta >= 0"));
        }
        let mut grid = vec![0.0];
        for i in 0..=240 {
            let s = 10f64.powf(-6.0 + i as f64 * 0.05);
            grid.push(s);
            grid.push(-s);
        }
        for s in grid {
            let bound = self.a + self.b * s.abs().powf(self.beta);
            if self.apply(s).abs() > bound * (1.0 + 1e-12) {
                return Err(Error::config(format!(
                    "{} violates its envelope at s = {s}",
                    self.name()
                )));
            }
        }
        Ok(())
    }

    /// Envelope check plus the `beta < 1` requirement for `alpha < 2`.
    pub fn validate_for(&self, alpha: f64) -> Result<()> {
        self.check_envelope()?;
        if alpha < 2.0 && self.beta >= 1.0 {
            return Err(Error::config(format!(
                "{} has envelope exponent {} >= 1, only allowed at alpha = 2",
                self.name(),
                self.beta
            )));
        }
        Ok(())
    }
}

/// Everything needed to simulate one network family.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub alpha: f64,
    pub sigma_w: f64,
    pub sigma_b: f64,
    pub layers: Vec<ConvLayerConfig>,
    pub activation: ActivationSpec,
    /// Channel count `C` shared by layers `1..L-1`.
    pub channels: usize,
    /// Inputs with axes `(channel, spatial..., input)`.
    pub inputs: Tensor,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if !(self.sigma_w >= 0.0 && self.sigma_b >= 0.0) {
            return Err(Error::config("sigma_w and sigma_b must be non-negative"));
        }
        if self.layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        if self.channels == 0 {
            return Err(Error::config("channel count must be positive"));
        }
        self.activation.validate_for(self.alpha)?;
        let axes = self.inputs.axes();
        let s = self.layers[0].spatial_in().len();
        if axes.len() != s + 2
            || axes[0].role != AxisRole::Channel
            || axes[s + 1].role != AxisRole::Input
        {
            return Err(Error::config(format!(
                "inputs must have axes (channel, {s} spatial, input), got {:?}",
                axes
            )));
        }
        let spatial: Vec<usize> = axes[1..=s].iter().map(|a| a.extent).collect();
        if spatial != self.layers[0].spatial_in() {
            return Err(Error::config(format!(
                "input spatial extents {:?} do not match first layer {:?}",
                spatial,
                self.layers[0].spatial_in()
            )));
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[0].spatial_out() != pair[1].spatial_in() {
                return Err(Error::config(format!(
                    "layer {} output {:?} does not chain into layer {} input {:?}",
                    l + 1,
                    pair[0].spatial_out(),
                    l + 2,
                    pair[1].spatial_in()
                )));
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Number of jointly evaluated inputs `K`.
    pub fn input_count(&self) -> usize {
        *self.inputs.axes().last().map(|a| &a.extent).unwrap_or(&1)
    }

    pub fn input_channels(&self) -> usize {
        self.inputs.axes()[0].extent
    }

    /// Flattened dimension `|P^(l) x K|` of layer `l` (1-based).
    pub fn layer_dimension(&self, layer: usize) -> usize {
        self.layers[layer - 1].n_out() * self.input_count()
    }

    pub fn output_dimension(&self) -> usize {
        self.layer_dimension(self.depth())
    }

    pub fn with_channels(&self, channels: usize) -> Self {
        NetworkSpec { channels, ..self.clone() }
    }

    fn output_axes(&self) -> Vec<Axis> {
        let last = self.layers.last().expect("validated");
        let mut axes: Vec<Axis> = last
            .spatial_out()
            .iter()
            .map(|&p| Axis::new(AxisRole::Spatial, p))
            .collect();
        axes.push(Axis::new(AxisRole::Input, self.input_count()));
        axes
    }
}

/// The last-layer output of one network realization.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOutput {
    /// `f^(L)_(c,:)` over `positions x K`, one tensor per requested channel.
    pub channels: Vec<Tensor>,
    /// Last-layer bias draw of each returned channel.
    pub biases: Vec<f64>,
}

#[inline]
fn draw<R: Rng + ?Sized>(alpha: f64, sigma: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        sigma * sample_standard(alpha, rng)
    }
}

/// Computes `n_channels` output channels of one layer from its patches.
///
/// `patches` is `[fan_in][n_out]` with `fan_in = channels_in * |G|`; the
/// result is `[n_channels][n_out]`. Weights for a channel are drawn and
/// consumed before the next channel's.
fn conv_layer<R: Rng + ?Sized>(
    patches: &[f64],
    fan_in: usize,
    n_channels: usize,
    weight_scale: f64,
    spec: &NetworkSpec,
    rng: &mut R,
    biases: &mut Vec<f64>,
) -> Vec<f64> {
    let n_out = patches.len() / fan_in;
    let mut out = vec![0.0; n_channels * n_out];
    let mut weights = vec![0.0; fan_in];
    biases.clear();
    for dst in out.chunks_exact_mut(n_out) {
        for w in weights.iter_mut() {
            *w = draw(spec.alpha, spec.sigma_w, rng);
        }
        let bias = draw(spec.alpha, spec.sigma_b, rng);
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let w = w * weight_scale;
            for (o, &v) in dst.iter_mut().zip(&patches[i * n_out..(i + 1) * n_out]) {
                *o += w * v;
            }
        }
        for o in dst.iter_mut() {
            *o += bias;
        }
        biases.push(bias);
    }
    out
}

/// Runs one network realization and returns the first `n_channels_out`
/// channels of the last layer.
///
/// Layer one is unscaled; deeper layers multiply the weights by
/// `C^{-1/alpha}`. Only the `C` channels consumed by the next layer are
/// materialized at intermediate layers.
pub fn forward_finite<R: Rng + ?Sized>(
    spec: &NetworkSpec,
    n_channels_out: usize,
    rng: &mut R,
) -> Result<NetworkOutput> {
    spec.validate()?;
    if n_channels_out == 0 {
        return Err(Error::input("need at least one output channel"));
    }
    let depth = spec.depth();
    let k = spec.input_count();
    let width = |l: usize| if l == depth { n_channels_out } else { spec.channels };

    let first = &spec.layers[0];
    let x_patches = extract_patches(&spec.inputs, &first.patch_map())?;
    let mut biases = Vec::new();
    let mut field = conv_layer(
        x_patches.data(),
        spec.input_channels() * first.n_filter(),
        width(1),
        1.0,
        spec,
        rng,
        &mut biases,
    );

    let scale = (spec.channels as f64).powf(-1.0 / spec.alpha);
    for l in 2..=depth {
        let cfg = &spec.layers[l - 1];
        let map: PatchMap = cfg.patch_map();
        let block_in = map.n_in() * k;
        let block_out = map.n_filter() * map.n_out() * k;
        for v in field.iter_mut() {
            *v = spec.activation.apply(*v);
        }
        let mut patches = vec![0.0; spec.channels * block_out];
        for (c, dst) in patches.chunks_exact_mut(block_out).enumerate() {
            map.gather(&field[c * block_in..(c + 1) * block_in], k, dst);
        }
        field = conv_layer(
            &patches,
            spec.channels * map.n_filter(),
            width(l),
            scale,
            spec,
            rng,
            &mut biases,
        );
    }

    let axes = spec.output_axes();
    let n = spec.output_dimension();
    let channels = field
        .chunks_exact(n)
        .map(|c| Tensor::new(axes.clone(), c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkOutput { channels, biases })
}

/// Independent network realizations. Replica `i` uses the stream
/// `(seed, replicas, i)`, so results do not depend on thread scheduling.
pub fn sample_replicas(
    spec: &NetworkSpec,
    n_replicas: usize,
    n_channels_out: usize,
) -> Result<Vec<NetworkOutput>> {
    spec.validate()?;
    if n_replicas == 0 {
        return Err(Error::input("need at least one replica"));
    }
    let root = SeedStream::new(spec.seed).substream(domain::REPLICAS);
    (0..n_replicas)
        .into_par_iter()
        .map(|i| forward_finite(spec, n_channels_out, &mut root.substream(i as u64).rng()))
        .collect()
}

/// `sum_{c in channels} z_c (f_c - b_c 1)`: a bias-free linear combination
/// of output channels.
pub fn channel_mixture(output: &NetworkOutput, channels: &[usize], z: &[f64]) -> Result<Tensor> {
    if channels.len() != z.len() {
        return Err(Error::input("one weight per selected channel is required"));
    }
    let first = output
        .channels
        .first()
        .ok_or_else(|| Error::input("network output has no channels"))?;
    let mut acc = vec![0.0; first.len()];
    for (&c, &zc) in channels.iter().zip(z) {
        let f = output
            .channels
            .get(c)
            .ok_or_else(|| Error::input(format!("channel {c} out of range")))?;
        let b = output.biases[c];
        for (a, &v) in acc.iter_mut().zip(f.data()) {
            *a += zc * (v - b);
        }
    }
    Tensor::new(first.axes().to_vec(), acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_spec(alpha: f64, depth: usize, channels: usize) -> NetworkSpec {
        let mut layers = vec![ConvLayerConfig::new(vec![4], vec![3], vec![1], vec![1]).unwrap()];
        for _ in 1..depth {
            layers.push(ConvLayerConfig::new(vec![4], vec![3], vec![1], vec![1]).unwrap());
        }
        let inputs = Tensor::new(
            vec![
                Axis::new(AxisRole::Channel, 1),
                Axis::new(AxisRole::Spatial, 4),
                Axis::new(AxisRole::Input, 2),
            ],
            vec![0.5, 1.0, -1.0, 0.3, 1.5, -0.7, 0.25, -1.2],
        )
        .unwrap();
        NetworkSpec {
            alpha,
            sigma_w: 1.0,
            sigma_b: 1.0,
            layers,
            activation: ActivationSpec::tanh(),
            channels,
            inputs,
            seed: 17,
        }
    }

    #[test]
    fn shipped_activations_respect_envelopes() {
        for spec in [ActivationSpec::tanh(), ActivationSpec::hard_clip(), ActivationSpec::signed_power()] {
            spec.validate_for(1.5).unwrap();
        }
        assert!(ActivationSpec::relu().validate_for(1.5).is_err());
        ActivationSpec::relu().validate_for(2.0).unwrap();
        let loose = ActivationSpec { activation: Activation::SignedPower, a: 1.0, b: 0.5, beta: 0.5 };
        assert!(loose.check_envelope().is_err());
    }

    #[test]
    fn rejects_bad_networks() {
        let mut spec = toy_spec(1.5, 2, 4);
        spec.activation = ActivationSpec::relu();
        assert!(forward_finite(&spec, 1, &mut SeedStream::new(0).rng()).is_err());

        let mut spec = toy_spec(1.5, 2, 4);
        spec.layers[1] = ConvLayerConfig::new(vec![5], vec![3], vec![1], vec![1]).unwrap();
        assert!(spec.validate().is_err());

        let mut spec = toy_spec(1.5, 1, 4);
        spec.channels = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn zero_scales_give_zero_outputs() {
        let mut spec = toy_spec(1.5, 3, 8);
        spec.sigma_w = 0.0;
        spec.sigma_b = 0.0;
        let out = forward_finite(&spec, 3, &mut SeedStream::new(1).rng()).unwrap();
        assert_eq!(out.channels.len(), 3);
        assert!(out.channels.iter().all(|c| c.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_input_gives_bias_broadcast() {
        let mut spec = toy_spec(1.5, 1, 8);
        spec.inputs = spec.inputs.map(|_| 0.0);
        let out = forward_finite(&spec, 4, &mut SeedStream::new(2).rng()).unwrap();
        for (c, b) in out.channels.iter().zip(&out.biases) {
            assert!(c.data().iter().all(|v| v == b));
        }
    }

    #[test]
    fn single_layer_ignores_channel_count() {
        let a = forward_finite(&toy_spec(1.5, 1, 4), 2, &mut SeedStream::new(3).rng()).unwrap();
        let b = forward_finite(&toy_spec(1.5, 1, 400), 2, &mut SeedStream::new(3).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn replicas_are_reproducible() {
        let spec = toy_spec(1.5, 2, 16);
        let a = sample_replicas(&spec, 64, 2).unwrap();
        let b = sample_replicas(&spec, 64, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].channels[0].shape(), vec![4, 2]);
        assert_ne!(a[0], a[1]);
        let single = sample_replicas(&spec, 1, 1).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn mixture_examples() {
        let spec = toy_spec(1.5, 2, 8);
        let out = forward_finite(&spec, 2, &mut SeedStream::new(4).rng()).unwrap();
        let m = channel_mixture(&out, &[0], &[1.0]).unwrap();
        for (v, f) in m.data().iter().zip(out.channels[0].data()) {
            assert_eq!(*v, f - out.biases[0]);
        }
        let m = channel_mixture(&out, &[0, 1], &[0.0, 0.0]).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
        assert!(channel_mixture(&out, &[5], &[1.0]).is_err());
        assert!(channel_mixture(&out, &[0, 1], &[1.0]).is_err());
    }

    #[test]
    fn gaussian_layer_one_variance() {
        // St(2, sigma) is Normal(0, 2 sigma^2); at position 1 of input 1 the
        // patch is (0, 0.5, -1.0) so the variance is 2 (1 + 0.25 + 1).
        let spec = toy_spec(2.0, 1, 1);
        let outs = sample_replicas(&spec, 40_000, 1).unwrap();
        let n = outs.len() as f64;
        let var = outs.iter().map(|o| o.channels[0].data()[0].powi(2)).sum::<f64>() / n;
        assert!((var - 4.5).abs() / 4.5 < 0.03, "{var}");
    }
}
