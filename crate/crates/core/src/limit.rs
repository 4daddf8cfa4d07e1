//! Spectral measures of the infinite-channel limit.
//!
//! Layer one is exact for every channel count. Conditioned on a realized
//! previous layer the next layer is again exactly stable. The unconditional
//! limit at deeper layers integrates against the previous limiting law,
//! which is done here by Monte Carlo: each draw is a full previous-layer
//! field, and all filter offsets are sliced from that same draw.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ActivationSpec, NetworkSpec};
use crate::patch::{extract_patches, ConvLayerConfig, PatchMap};
use crate::rng::{domain, SeedStream};
use crate::spectral::{compress_measure, Atom, BiasTag, MeasureSampler, SpectralMeasure};
use crate::tensor::{square_product, AxisRole, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LimitConfig {
    /// Draws from the previous-layer law per layer.
    pub mc_samples: usize,
    /// Maximum non-bias atoms kept after each Monte Carlo layer.
    pub atom_cap: Option<usize>,
    pub seed: u64,
}

impl LimitConfig {
    pub fn new(mc_samples: usize, atom_cap: Option<usize>, seed: u64) -> Result<Self> {
        let cfg = LimitConfig { mc_samples, atom_cap, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Compression is off for networks of depth below three; deeper
    /// networks cap every layer at `mc_samples` atoms, so sampling a layer
    /// costs the same at every depth.
    pub fn with_default_cap(mc_samples: usize, depth: usize, seed: u64) -> Result<Self> {
        let cap = if depth >= 3 { Some(mc_samples) } else { None };
        Self::new(mc_samples, cap, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(Error::config("mc_samples must be at least 1"));
        }
        if self.atom_cap == Some(0) {
            return Err(Error::config("atom_cap must be at least 1"));
        }
        Ok(())
    }

    /// Stream for layer `l` (1-based) of the limit recursion.
    pub fn layer_stream(&self, layer: usize) -> SeedStream {
        SeedStream::new(self.seed).substream(domain::LIMIT).substream(layer as u64)
    }
}

fn check_prev(prev: &Tensor, cfg: &ConvLayerConfig) -> Result<(usize, usize)> {
    let s = cfg.spatial_in().len();
    let axes = prev.axes();
    if axes.len() != s + 2 || axes[s + 1].role != AxisRole::Input {
        return Err(Error::shape(format!(
            "expected (channel, {s} spatial, input) axes, got shape {:?}",
            prev.shape()
        )));
    }
    Ok((axes[0].extent, axes[s + 1].extent))
}

/// Measure with the bias pair plus one pair per `(channel, filter offset)`
/// patch slice of `patches`, each weighted by `scale_pow * ||slice||^alpha`.
fn patch_measure(
    patches: &Tensor,
    slice_len: usize,
    alpha: f64,
    sigma_b: f64,
    scale_pow: f64,
) -> Result<SpectralMeasure> {
    let mut m = SpectralMeasure::new(slice_len, alpha)?;
    m.push_bias(sigma_b)?;
    if scale_pow > 0.0 {
        for slice in patches.data().chunks_exact(slice_len) {
            m.push_scaled(slice, scale_pow)?;
        }
    }
    Ok(m)
}

/// Exact spectral measure of any layer-one channel over `positions x K`.
///
/// `x` has axes `(channel, spatial..., input)`.
pub fn gamma_first(
    x: &Tensor,
    cfg: &ConvLayerConfig,
    alpha: f64,
    sigma_w: f64,
    sigma_b: f64,
) -> Result<SpectralMeasure> {
    let (_, k) = check_prev(x, cfg)?;
    let patches = extract_patches(x, &cfg.patch_map())?;
    patch_measure(&patches, cfg.n_out() * k, alpha, sigma_b, sigma_w.powf(alpha))
}

/// Layer-one characteristic function evaluated directly as a product of
/// independent stable factors, without building a measure:
/// `exp(-sigma_b^a |<t, 1>|^a - sigma_w^a sum_{c,g} |<t, x_patch(c,g)>|^a)`.
pub fn cf_layer1_closed_form(
    x: &Tensor,
    cfg: &ConvLayerConfig,
    alpha: f64,
    sigma_w: f64,
    sigma_b: f64,
    t: &[f64],
) -> Result<f64> {
    let patches = extract_patches(x, &cfg.patch_map())?;
    product_form_cf(&patches, t, alpha, sigma_w.powf(alpha), sigma_b)
}

fn product_form_cf(patches: &Tensor, t: &[f64], alpha: f64, weight_pow: f64, sigma_b: f64) -> Result<f64> {
    let rank = patches.rank();
    let trailing = patches.shape()[rank - t_rank(patches)..].to_vec();
    let t_tensor = Tensor::from_shape(&trailing, t.to_vec())
        .map_err(|_| Error::shape(format!("probe of length {} does not match {:?}", t.len(), trailing)))?;
    let contracted: Vec<usize> = (rank - trailing.len()..rank).collect();
    // <t, patch(c, g)> for every (c, g)
    let projections = square_product(patches, &t_tensor, &contracted)?;
    let bias_term = (sigma_b * t.iter().sum::<f64>()).abs().powf(alpha);
    let weight_term: f64 = projections.data().iter().map(|v| v.abs().powf(alpha)).sum();
    Ok((-bias_term - weight_pow * weight_term).exp())
}

// spatial-out axes plus the input axis
fn t_rank(patches: &Tensor) -> usize {
    patches.axes().iter().filter(|a| matches!(a.role, AxisRole::Spatial | AxisRole::Input)).count()
}

/// Exact conditional measure of a layer given the `C` realized channels of
/// the previous layer (`prev` has axes `(channel, spatial..., input)`).
pub fn gamma_conditional(
    prev: &Tensor,
    cfg: &ConvLayerConfig,
    alpha: f64,
    sigma_w: f64,
    sigma_b: f64,
    activation: &ActivationSpec,
) -> Result<SpectralMeasure> {
    let (channels, k) = check_prev(prev, cfg)?;
    let activated = prev.map(|v| activation.apply(v));
    let patches = extract_patches(&activated, &cfg.patch_map())?;
    patch_measure(
        &patches,
        cfg.n_out() * k,
        alpha,
        sigma_b,
        sigma_w.powf(alpha) / channels as f64,
    )
}

/// Conditional characteristic function as a product of independent factors.
pub fn cf_conditional_closed_form(
    prev: &Tensor,
    cfg: &ConvLayerConfig,
    alpha: f64,
    sigma_w: f64,
    sigma_b: f64,
    activation: &ActivationSpec,
    t: &[f64],
) -> Result<f64> {
    let (channels, _) = check_prev(prev, cfg)?;
    let activated = prev.map(|v| activation.apply(v));
    let patches = extract_patches(&activated, &cfg.patch_map())?;
    product_form_cf(&patches, t, alpha, sigma_w.powf(alpha) / channels as f64, sigma_b)
}

/// Parameters shared by the Monte Carlo layer steps.
#[derive(Clone, Copy, Debug)]
pub struct LayerParams<'a> {
    pub alpha: f64,
    pub sigma_w: f64,
    pub sigma_b: f64,
    pub activation: &'a ActivationSpec,
}

impl<'a> LayerParams<'a> {
    pub fn of(spec: &'a NetworkSpec) -> Self {
        LayerParams {
            alpha: spec.alpha,
            sigma_w: spec.sigma_w,
            sigma_b: spec.sigma_b,
            activation: &spec.activation,
        }
    }
}

/// Draws `M` fields from the previous limiting law and maps every activated
/// patch slice of each draw through `to_atom_vector`, collecting one pair
/// atom per nonzero result with weight `sigma_w^a ||v||^a / M`.
#[allow(clippy::too_many_arguments)]
fn mc_integral(
    prev: &SpectralMeasure,
    map: &PatchMap,
    k: usize,
    params: &LayerParams<'_>,
    samples: usize,
    stream: &SeedStream,
    out_dim: usize,
    to_atom_vector: impl Fn(&[f64], &mut [f64]) + Sync,
) -> Vec<Atom> {
    let alpha = params.alpha;
    let weight_pow = params.sigma_w.powf(alpha) / samples as f64;
    if weight_pow == 0.0 {
        return Vec::new();
    }
    let sampler = MeasureSampler::new(prev);
    let slice_len = map.n_out() * k;
    let per_sample: Vec<Vec<Atom>> = (0..samples)
        .into_par_iter()
        .map(|m| {
            let mut rng = stream.substream(m as u64).rng();
            let mut field = sampler.sample(&mut rng);
            for v in field.iter_mut() {
                *v = params.activation.apply(*v);
            }
            let mut patches = vec![0.0; map.n_filter() * slice_len];
            map.gather(&field, k, &mut patches);
            let mut v = vec![0.0; out_dim];
            let mut atoms = Vec::with_capacity(map.n_filter());
            for slice in patches.chunks_exact(slice_len) {
                to_atom_vector(slice, &mut v);
                let n = crate::spectral::norm(&v);
                if n > 0.0 && n.is_finite() {
                    let weight = weight_pow * n.powf(alpha);
                    if weight > 0.0 {
                        atoms.push(Atom {
                            weight,
                            direction: v.iter().map(|x| x / n).collect(),
                        });
                    }
                }
            }
            atoms
        })
        .collect();
    per_sample.into_iter().flatten().collect()
}

fn finish_layer(
    mut measure: SpectralMeasure,
    atoms: Vec<Atom>,
    limit: &LimitConfig,
    stream: &SeedStream,
) -> Result<SpectralMeasure> {
    for atom in atoms {
        measure.push_atom(atom)?;
    }
    match limit.atom_cap {
        Some(cap) => compress_measure(&measure, cap, &mut stream.substream(domain::COMPRESS).rng()),
        None => Ok(measure),
    }
}

/// Monte Carlo estimate of the limiting measure of layer `l >= 2` given the
/// limiting measure of layer `l - 1` (over `|P^(l-1) x K|`).
pub fn gamma_next_mc(
    prev: &SpectralMeasure,
    cfg: &ConvLayerConfig,
    params: &LayerParams<'_>,
    limit: &LimitConfig,
    stream: &SeedStream,
) -> Result<SpectralMeasure> {
    limit.validate()?;
    let k = input_count_of(prev, cfg)?;
    if prev.is_empty() {
        return Err(Error::input("previous-layer measure is empty"));
    }
    let map = cfg.patch_map();
    let out_dim = cfg.n_out() * k;
    let mut measure = SpectralMeasure::new(out_dim, params.alpha)?;
    measure.push_bias(params.sigma_b)?;
    let atoms = mc_integral(prev, &map, k, params, limit.mc_samples, stream, out_dim, |slice, v| {
        v.copy_from_slice(slice)
    });
    finish_layer(measure, atoms, limit, stream)
}

fn input_count_of(prev: &SpectralMeasure, cfg: &ConvLayerConfig) -> Result<usize> {
    let n_in = cfg.n_in();
    if !prev.dimension().is_multiple_of(n_in) {
        return Err(Error::shape(format!(
            "measure dimension {} is not a multiple of {} input positions",
            prev.dimension(),
            n_in
        )));
    }
    Ok(prev.dimension() / n_in)
}

/// Per-layer bookkeeping line for run logs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerSummary {
    pub layer: usize,
    pub atoms: usize,
    pub total_mass: f64,
    pub bias_mass: f64,
}

impl LayerSummary {
    pub fn of(layer: usize, m: &SpectralMeasure) -> Self {
        LayerSummary {
            layer,
            atoms: m.len(),
            total_mass: m.total_mass(),
            bias_mass: m.bias_mass(),
        }
    }
}

impl fmt::Display for LayerSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "layer={} atoms={} total_mass={:.12e} bias_mass={:.12e}",
            self.layer, self.atoms, self.total_mass, self.bias_mass
        )
    }
}

/// Limiting measures of layers `1..=L`.
pub fn limit_measures(spec: &NetworkSpec, limit: &LimitConfig) -> Result<Vec<SpectralMeasure>> {
    spec.validate()?;
    limit.validate()?;
    let params = LayerParams::of(spec);
    let mut out = Vec::with_capacity(spec.depth());
    let first = gamma_first(&spec.inputs, &spec.layers[0], spec.alpha, spec.sigma_w, spec.sigma_b)?;
    log::info!("{}", LayerSummary::of(1, &first));
    out.push(first);
    for l in 2..=spec.depth() {
        let next = gamma_next_mc(&out[l - 2], &spec.layers[l - 1], &params, limit, &limit.layer_stream(l))?;
        log::info!("{}", LayerSummary::of(l, &next));
        out.push(next);
    }
    Ok(out)
}

/// Drops the bias atom and multiplies the remaining weights by
/// `||z||^alpha = sum_c |z_c|^alpha`: the limiting measure of a bias-free
/// combination `sum_c z_c (f_c - b_c 1)` of independent channels.
pub fn mixture_measure(base: &SpectralMeasure, z: &[f64]) -> Result<SpectralMeasure> {
    if base.bias() == BiasTag::Untagged {
        return Err(Error::input("mixture needs a measure with a tagged bias atom"));
    }
    let alpha = base.alpha();
    let z_norm: f64 = z.iter().map(|v| v.abs().powf(alpha)).sum();
    let mut out = if z_norm > 0.0 && !base.without_bias().is_empty() {
        base.without_bias().scaled(z_norm)?
    } else {
        SpectralMeasure::new(base.dimension(), alpha)?
    };
    out.set_bias_tag(BiasTag::Absent);
    Ok(out)
}

fn check_readout_weights(u: &Tensor, cfg: &ConvLayerConfig) -> Result<()> {
    if u.len() != cfg.n_out() {
        return Err(Error::input(format!(
            "readout weights have {} entries for {} positions",
            u.len(),
            cfg.n_out()
        )));
    }
    let total: f64 = u.data().iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::input(format!("readout weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// `v_k = sum_p u_p slice[p, k]`.
fn contract_positions(u: &[f64], slice: &[f64], v: &mut [f64]) {
    let k = v.len();
    v.fill(0.0);
    for (p, &w) in u.iter().enumerate() {
        for (o, &s) in v.iter_mut().zip(&slice[p * k..(p + 1) * k]) {
            *o += w * s;
        }
    }
}

/// Limiting measure over `R^K` of the position readout `u . f^(l)` for
/// `l >= 2`, given the limiting measure of layer `l - 1`.
pub fn readout_measure(
    prev: &SpectralMeasure,
    cfg: &ConvLayerConfig,
    params: &LayerParams<'_>,
    u: &Tensor,
    limit: &LimitConfig,
    stream: &SeedStream,
) -> Result<SpectralMeasure> {
    limit.validate()?;
    check_readout_weights(u, cfg)?;
    let k = input_count_of(prev, cfg)?;
    if prev.is_empty() {
        return Err(Error::input("previous-layer measure is empty"));
    }
    let map = cfg.patch_map();
    let mut measure = SpectralMeasure::new(k, params.alpha)?;
    measure.push_bias(params.sigma_b)?;
    let weights = u.data();
    let atoms = mc_integral(prev, &map, k, params, limit.mc_samples, stream, k, |slice, v| {
        contract_positions(weights, slice, v)
    });
    finish_layer(measure, atoms, limit, stream)
}

/// Exact readout measure at layer one.
pub fn readout_first(
    x: &Tensor,
    cfg: &ConvLayerConfig,
    alpha: f64,
    sigma_w: f64,
    sigma_b: f64,
    u: &Tensor,
) -> Result<SpectralMeasure> {
    check_readout_weights(u, cfg)?;
    let (_, k) = check_prev(x, cfg)?;
    let patches = extract_patches(x, &cfg.patch_map())?;
    let mut m = SpectralMeasure::new(k, alpha)?;
    m.push_bias(sigma_b)?;
    let scale_pow = sigma_w.powf(alpha);
    let mut v = vec![0.0; k];
    if scale_pow > 0.0 {
        for slice in patches.data().chunks_exact(cfg.n_out() * k) {
            contract_positions(u.data(), slice, &mut v);
            m.push_scaled(&v, scale_pow)?;
        }
    }
    Ok(m)
}

/// Readout measure at the last layer of `spec`, reusing already computed
/// per-layer limit measures.
pub fn readout_limit(
    spec: &NetworkSpec,
    measures: &[SpectralMeasure],
    u: &Tensor,
    limit: &LimitConfig,
) -> Result<SpectralMeasure> {
    let depth = spec.depth();
    if depth == 1 {
        return readout_first(&spec.inputs, &spec.layers[0], spec.alpha, spec.sigma_w, spec.sigma_b, u);
    }
    let stream = limit.layer_stream(depth).substream(0x5245_4144);
    readout_measure(
        &measures[depth - 2],
        &spec.layers[depth - 1],
        &LayerParams::of(spec),
        u,
        limit,
        &stream,
    )
}
