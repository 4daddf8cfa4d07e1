//! Empirical characteristic functions and the checks built on them.

use std::io::Write;
use std::time::Instant;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::limit::{mixture_measure, LimitConfig};
use crate::network::{channel_mixture, sample_replicas, NetworkOutput, NetworkSpec};
use crate::patch::ConvLayerConfig;
use crate::rng::{domain, SeedStream};
use crate::spectral::{cf_multivariate, SpectralMeasure};

/// Radii of the probe grid as multiples of the reference radius.
pub const RADIUS_SCHEDULE: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

const MAX_WIDENING: usize = 8;

/// Flat sample vectors stored row-major, one row per draw.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    dimension: usize,
    data: Vec<f64>,
}

impl SampleSet {
    pub fn new(dimension: usize, data: Vec<f64>) -> Result<Self> {
        if dimension == 0 || !data.len().is_multiple_of(dimension) {
            return Err(Error::shape(format!(
                "{} values do not form rows of length {dimension}",
                data.len()
            )));
        }
        Ok(SampleSet { dimension, data })
    }

    pub fn from_rows(dimension: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dimension);
        for r in rows {
            if r.len() != dimension {
                return Err(Error::shape(format!("row of length {} in a set of dimension {dimension}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(dimension, data)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dimension
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dimension)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Channel `channel` of every replica, flattened as `position * K + k`.
pub fn channel_samples(outputs: &[NetworkOutput], channel: usize) -> Result<SampleSet> {
    let first = outputs.first().ok_or_else(|| Error::input("no replicas"))?;
    let dim = first.channels.first().ok_or_else(|| Error::input("no channels"))?.len();
    let mut data = Vec::with_capacity(outputs.len() * dim);
    for o in outputs {
        let c = o
            .channels
            .get(channel)
            .ok_or_else(|| Error::input(format!("channel {channel} missing from a replica")))?;
        data.extend_from_slice(c.data());
    }
    SampleSet::new(dim, data)
}

/// Position readout `sum_p u_p f_(c, p, :)` of every replica, over `K`.
pub fn readout_samples(outputs: &[NetworkOutput], channel: usize, u: &[f64]) -> Result<SampleSet> {
    let full = channel_samples(outputs, channel)?;
    if full.dimension() % u.len() != 0 {
        return Err(Error::shape("readout weights do not match the output positions"));
    }
    let k = full.dimension() / u.len();
    let mut data = Vec::with_capacity(full.len() * k);
    for row in full.rows() {
        for kk in 0..k {
            data.push(u.iter().enumerate().map(|(p, w)| w * row[p * k + kk]).sum());
        }
    }
    SampleSet::new(k, data)
}

/// Bias-free channel mixture `sum_c z_c (f_c - b_c)` of every replica.
pub fn mixture_samples(outputs: &[NetworkOutput], channels: &[usize], z: &[f64]) -> Result<SampleSet> {
    let rows = outputs
        .iter()
        .map(|o| channel_mixture(o, channels, z).map(|t| t.into_data()))
        .collect::<Result<Vec<_>>>()?;
    let dim = rows.first().ok_or_else(|| Error::input("no replicas"))?.len();
    SampleSet::from_rows(dim, &rows)
}

/// Probe vectors for characteristic-function comparisons.
///
/// Index 0 is always the zero probe. Generated sets are laid out
/// direction-major with one probe per radius.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeSet {
    dimension: usize,
    probes: Vec<Vec<f64>>,
    directions: usize,
    radii: Vec<f64>,
    seed: u64,
}

fn unit_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

impl ProbeSet {
    /// Isotropic probes at radii `RADIUS_SCHEDULE * r0`, where `r0` puts the
    /// median theoretical CF along the drawn directions at one half. The
    /// radius list is widened until at least one probe has CF below 0.2 and
    /// one above 0.8.
    pub fn generate(measure: &SpectralMeasure, directions: usize, seed: u64) -> Result<Self> {
        if directions == 0 {
            return Err(Error::input("need at least one probe direction"));
        }
        let dim = measure.dimension();
        let mut rng = SeedStream::new(seed).substream(domain::PROBES).rng();
        // a line has only two unit directions, so duplicates end the search
        let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(directions);
        let mut attempts = 0;
        while dirs.len() < directions && attempts < 16 * directions {
            attempts += 1;
            let d = unit_direction(dim, &mut rng);
            if !dirs.contains(&d) {
                dirs.push(d);
            }
        }
        let exps = dirs.iter().map(|d| measure.exponent(d)).collect::<Result<Vec<_>>>()?;
        let mut sorted = exps.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        let alpha = measure.alpha();
        let degenerate = median <= 0.0 || !median.is_finite();
        let r0 = if degenerate { 1.0 } else { (std::f64::consts::LN_2 / median).powf(1.0 / alpha) };
        let mut radii: Vec<f64> = RADIUS_SCHEDULE.iter().map(|m| m * r0).collect();

        if !degenerate {
            for _ in 0..MAX_WIDENING {
                let cfs = || {
                    exps.iter()
                        .flat_map(|e| radii.iter().map(move |r| (-e * r.powf(alpha)).exp()))
                };
                let has_low = cfs().any(|c| c < 0.2);
                let has_high = cfs().any(|c| c > 0.8);
                if has_low && has_high {
                    break;
                }
                if !has_low {
                    radii.push(2.0 * radii[radii.len() - 1]);
                }
                if !has_high {
                    radii.insert(0, 0.5 * radii[0]);
                }
            }
        }

        let mut probes = vec![vec![0.0; dim]];
        for d in &dirs {
            for r in &radii {
                probes.push(d.iter().map(|x| r * x).collect());
            }
        }
        Ok(ProbeSet { dimension: dim, probes, directions: dirs.len(), radii, seed })
    }

    /// Wraps explicit probes, adding the zero probe and dropping duplicates.
    pub fn from_probes(dimension: usize, probes: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        let mut out: Vec<Vec<f64>> = vec![vec![0.0; dimension]];
        for p in probes {
            if p.len() != dimension {
                return Err(Error::shape(format!("probe of length {} in dimension {dimension}", p.len())));
            }
            if !out.contains(&p) {
                out.push(p);
            }
        }
        let n = out.len() - 1;
        Ok(ProbeSet { dimension, probes: out, directions: n, radii: vec![1.0], seed })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn probes(&self) -> &[Vec<f64>] {
        &self.probes
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Probe pairs `(t, -t')` where `t'` lies along the same direction as
    /// `t` at the next radius (cyclically).
    pub fn pairs(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let r = self.radii.len();
        let mut out = Vec::with_capacity(self.directions * r);
        for d in 0..self.directions {
            for j in 0..r {
                let t = self.probes[1 + d * r + j].clone();
                let s = self.probes[1 + d * r + (j + 1) % r].iter().map(|v| -v).collect();
                out.push((t, s));
            }
        }
        out
    }

    pub fn theoretical(&self, measure: &SpectralMeasure) -> Result<Vec<f64>> {
        self.probes.iter().map(|t| cf_multivariate(measure, t)).collect()
    }
}

/// `(1/N) sum_n exp(i <t, x_n>)`.
pub fn empirical_cf(samples: &SampleSet, t: &[f64]) -> Result<Complex64> {
    if samples.is_empty() {
        return Err(Error::input("empirical CF of an empty sample"));
    }
    if t.len() != samples.dimension() {
        return Err(Error::shape(format!(
            "probe of length {} for samples of dimension {}",
            t.len(),
            samples.dimension()
        )));
    }
    if t.iter().all(|v| *v == 0.0) {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let (mut re, mut im) = (0.0, 0.0);
    for row in samples.rows() {
        let phase: f64 = row.iter().zip(t).map(|(x, s)| x * s).sum();
        let (s, c) = phase.sin_cos();
        re += c;
        im += s;
    }
    let n = samples.len() as f64;
    Ok(Complex64::new(re / n, im / n))
}

/// Standard error of the empirical CF from `n` draws.
pub fn standard_error(n: usize) -> f64 {
    1.0 / (n as f64).sqrt()
}

/// Empirical CF at every probe; probes are evaluated in parallel, each sum
/// sequentially, so results are bitwise reproducible.
pub fn empirical_cfs(samples: &SampleSet, probes: &ProbeSet) -> Result<Vec<Complex64>> {
    probes.probes().par_iter().map(|t| empirical_cf(samples, t)).collect()
}

/// Distances between empirical and theoretical CFs over a probe set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CfDistance {
    /// `max |emp - theo|`
    pub sup: f64,
    /// mean of `|emp - theo|`
    pub mean: f64,
    pub sup_real: f64,
    pub mean_real: f64,
    /// `max |Im emp|`; nonzero only through sampling noise for symmetric laws.
    pub max_imag: f64,
}

pub fn cf_distance(empirical: &[Complex64], theoretical: &[f64]) -> Result<CfDistance> {
    if empirical.len() != theoretical.len() || empirical.is_empty() {
        return Err(Error::input(format!(
            "misaligned probe sets: {} empirical vs {} theoretical values",
            empirical.len(),
            theoretical.len()
        )));
    }
    let n = empirical.len() as f64;
    let mut d = CfDistance { sup: 0.0, mean: 0.0, sup_real: 0.0, mean_real: 0.0, max_imag: 0.0 };
    for (e, &t) in empirical.iter().zip(theoretical) {
        let m = (e - Complex64::new(t, 0.0)).norm();
        let r = (e.re - t).abs();
        d.sup = d.sup.max(m);
        d.mean += m / n;
        d.sup_real = d.sup_real.max(r);
        d.mean_real += r / n;
        d.max_imag = d.max_imag.max(e.im.abs());
    }
    Ok(d)
}

/// Empirical-vs-theoretical distance for one sample set.
pub fn compare(samples: &SampleSet, measure: &SpectralMeasure, probes: &ProbeSet) -> Result<CfDistance> {
    cf_distance(&empirical_cfs(samples, probes)?, &probes.theoretical(measure)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub channels: usize,
    pub n_replicas: usize,
    pub mc_samples: usize,
    pub sup_cf_dist: f64,
    pub mean_cf_dist: f64,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ReportMeta {
    pub config_hash: String,
    pub seed: u64,
    pub alpha: f64,
    pub activation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub meta: ReportMeta,
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_CSV_HEADER: [&str; 6] = ["C", "n_replicas", "M", "sup_cf_dist", "mean_cf_dist", "seconds"];

impl ConvergenceReport {
    /// Writes the frozen sweep schema. `seconds` is empty for untimed runs.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(SWEEP_CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            out.write_record([
                r.channels.to_string(),
                r.n_replicas.to_string(),
                r.mc_samples.to_string(),
                format!("{:.10e}", r.sup_cf_dist),
                format!("{:.10e}", r.mean_cf_dist),
                r.seconds.map(|s| format!("{s:.3}")).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Format { what: "csv", detail: e.to_string() })
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format { what: "csv", detail: e.to_string() }
}

/// Compares finite-width replicas at each channel count against the
/// limiting law `target` of the last layer.
pub fn convergence_sweep(
    spec: &NetworkSpec,
    channels: &[usize],
    n_replicas: usize,
    limit: &LimitConfig,
    target: &SpectralMeasure,
    probes: &ProbeSet,
    timing: bool,
) -> Result<ConvergenceReport> {
    if channels.is_empty() || channels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input("channel list must be non-empty and strictly increasing"));
    }
    if target.dimension() != spec.output_dimension() || probes.dimension() != target.dimension() {
        return Err(Error::shape("limit measure, probes and network output disagree in dimension"));
    }
    let theoretical = probes.theoretical(target)?;
    let mut rows = Vec::with_capacity(channels.len());
    for &c in channels {
        let start = Instant::now();
        let outputs = sample_replicas(&spec.with_channels(c), n_replicas, 1)?;
        let samples = channel_samples(&outputs, 0)?;
        let d = cf_distance(&empirical_cfs(&samples, probes)?, &theoretical)?;
        log::info!("C={c} sup_cf_dist={:.4} mean_cf_dist={:.4}", d.sup, d.mean);
        rows.push(SweepRow {
            channels: c,
            n_replicas,
            mc_samples: limit.mc_samples,
            sup_cf_dist: d.sup,
            mean_cf_dist: d.mean,
            seconds: timing.then(|| start.elapsed().as_secs_f64()),
        });
    }
    Ok(ConvergenceReport {
        meta: ReportMeta {
            config_hash: String::new(),
            seed: spec.seed,
            alpha: spec.alpha,
            activation: spec.activation.name().to_string(),
        },
        rows,
    })
}

/// `|E exp(i(<t,f1> + <s,f2>)) - E exp(i<t,f1>) E exp(i<s,f2>)|` per pair.
pub fn factorization_defects(
    f1: &SampleSet,
    f2: &SampleSet,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<Vec<f64>> {
    if f1.len() != f2.len() || f1.dimension() != f2.dimension() {
        return Err(Error::input("channel samples are not paired"));
    }
    let joint = SampleSet::new(
        2 * f1.dimension(),
        f1.rows().zip(f2.rows()).flat_map(|(a, b)| a.iter().chain(b).copied()).collect(),
    )?;
    pairs
        .par_iter()
        .map(|(t, s)| {
            let ts: Vec<f64> = t.iter().chain(s).copied().collect();
            let j = empirical_cf(&joint, &ts)?;
            let a = empirical_cf(f1, t)?;
            let b = empirical_cf(f2, s)?;
            Ok((j - a * b).norm())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IndependenceReport {
    pub channels: usize,
    pub n_replicas: usize,
    pub pairs: usize,
    pub max_defect: f64,
    pub mean_defect: f64,
    /// Same statistic with the second channel replaced by the first.
    pub control_max_defect: f64,
    pub mixture: CfDistance,
}

/// Two output channels per replica: pairwise factorization of the joint CF,
/// the dependent control `f2 = f1`, and the bias-free mixture with weights
/// `z` against the mixture measure built from `target`.
pub fn independence_check(
    spec: &NetworkSpec,
    n_replicas: usize,
    target: &SpectralMeasure,
    z: &[f64],
    probe_directions: usize,
    probe_seed: u64,
) -> Result<IndependenceReport> {
    if z.len() != 2 {
        return Err(Error::input("mixture weights must cover the two checked channels"));
    }
    let outputs = sample_replicas(spec, n_replicas, 2)?;
    let f1 = channel_samples(&outputs, 0)?;
    let f2 = channel_samples(&outputs, 1)?;
    let pairs = ProbeSet::generate(target, probe_directions, probe_seed)?.pairs();
    let defects = factorization_defects(&f1, &f2, &pairs)?;
    let control = factorization_defects(&f1, &f1, &pairs)?;

    let delta = mixture_measure(target, z)?;
    let mix = mixture_samples(&outputs, &[0, 1], z)?;
    let mix_probes = ProbeSet::generate(&delta, probe_directions, probe_seed ^ 1)?;
    let mixture = compare(&mix, &delta, &mix_probes)?;

    Ok(IndependenceReport {
        channels: spec.channels,
        n_replicas,
        pairs: pairs.len(),
        max_defect: defects.iter().copied().fold(0.0, f64::max),
        mean_defect: defects.iter().sum::<f64>() / defects.len() as f64,
        control_max_defect: control.iter().copied().fold(0.0, f64::max),
        mixture,
    })
}

/// Finite-width position readout against the limiting readout measure.
pub fn readout_check(
    spec: &NetworkSpec,
    n_replicas: usize,
    readout: &SpectralMeasure,
    u: &[f64],
    probe_directions: usize,
    probe_seed: u64,
) -> Result<CfDistance> {
    let outputs = sample_replicas(spec, n_replicas, 1)?;
    let samples = readout_samples(&outputs, 0, u)?;
    let probes = ProbeSet::generate(readout, probe_directions, probe_seed)?;
    compare(&samples, readout, &probes)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaussianOracleReport {
    /// Diagonal of `2 sum_j gamma_j s_j s_j^T` for the limit measure.
    pub limit_diagonal: Vec<f64>,
    /// Diagonal of the kernel recursion's covariance.
    pub oracle_diagonal: Vec<f64>,
    pub max_rel_diagonal: f64,
    /// Largest off-diagonal gap relative to the mean oracle variance.
    pub max_rel_offdiagonal: f64,
}

/// Flat input position feeding output position `p` through filter offset
/// `g`, or `None` when the offset lands in padding.
fn oracle_source(cfg: &ConvLayerConfig, p: usize, g: usize) -> Option<usize> {
    let dims = cfg.spatial_in().len();
    let (mut p, mut g) = (p, g);
    let mut idx = vec![0usize; dims];
    for d in (0..dims).rev() {
        let pd = p % cfg.spatial_out()[d];
        let gd = g % cfg.filter()[d];
        p /= cfg.spatial_out()[d];
        g /= cfg.filter()[d];
        let i = (pd * cfg.stride()[d] + gd) as isize - cfg.padding()[d] as isize;
        if i < 0 || i as usize >= cfg.spatial_in()[d] {
            return None;
        }
        idx[d] = i as usize;
    }
    Some(idx.iter().zip(cfg.spatial_in()).fold(0, |acc, (i, n)| acc * n + i))
}

/// Adds `scale * v v^T` for every patch vector `v` of the field `f`
/// (`[position][k]`) into the dense `cov`.
fn add_patch_outer(cfg: &ConvLayerConfig, f: &[f64], k: usize, scale: f64, cov: &mut [f64], v: &mut [f64]) {
    let n = v.len();
    for g in 0..cfg.n_filter() {
        for p in 0..cfg.n_out() {
            for kk in 0..k {
                v[p * k + kk] = oracle_source(cfg, p, g).map_or(0.0, |i| f[i * k + kk]);
            }
        }
        for a in 0..n {
            if v[a] == 0.0 {
                continue;
            }
            for b in 0..n {
                cov[a * n + b] += scale * v[a] * v[b];
            }
        }
    }
}

/// Lower Cholesky factor of a positive semidefinite matrix; columns with
/// nonpositive pivots are zeroed.
fn psd_cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for j in 0..n {
        let d = a[j * n + j] - (0..j).map(|q| l[j * n + q] * l[j * n + q]).sum::<f64>();
        if d <= 1e-12 * scale {
            continue;
        }
        let ljj = d.sqrt();
        l[j * n + j] = ljj;
        for i in j + 1..n {
            let s = a[i * n + j] - (0..j).map(|q| l[i * n + q] * l[j * n + q]).sum::<f64>();
            l[i * n + j] = s / ljj;
        }
    }
    l
}

/// Covariance of the last layer in the Gaussian case, by the kernel
/// recursion `K_l = 2 sigma_b^2 + 2 sigma_w^2 E[sum_g phi(f)_g phi(f)_g^T]`
/// with `f ~ N(0, K_{l-1})` estimated from `samples` draws. Layer one is
/// exact.
pub fn gaussian_kernel_recursion(spec: &NetworkSpec, samples: usize, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.alpha != 2.0 {
        return Err(Error::input("the Gaussian oracle needs alpha = 2"));
    }
    if samples == 0 {
        return Err(Error::input("need at least one oracle sample"));
    }
    let k = spec.input_count();
    let bias_var = 2.0 * spec.sigma_b * spec.sigma_b;
    let weight_var = 2.0 * spec.sigma_w * spec.sigma_w;

    let first = &spec.layers[0];
    let n = first.n_out() * k;
    let mut cov = vec![bias_var; n * n];
    let mut v = vec![0.0; n];
    let block = first.n_in() * k;
    for c in 0..spec.input_channels() {
        let x = &spec.inputs.data()[c * block..(c + 1) * block];
        add_patch_outer(first, x, k, weight_var, &mut cov, &mut v);
    }

    let root = SeedStream::new(seed).substream(domain::ORACLE);
    for l in 2..=spec.depth() {
        let cfg = &spec.layers[l - 1];
        let n_prev = cfg.n_in() * k;
        let chol = psd_cholesky(&cov, n_prev);
        let n = cfg.n_out() * k;
        let mut next = vec![0.0; n * n];
        let mut rng = root.substream(l as u64).rng();
        let mut z = vec![0.0; n_prev];
        let mut f = vec![0.0; n_prev];
        let mut v = vec![0.0; n];
        for _ in 0..samples {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            for i in 0..n_prev {
                let s: f64 = (0..=i).map(|j| chol[i * n_prev + j] * z[j]).sum();
                f[i] = spec.activation.apply(s);
            }
            add_patch_outer(cfg, &f, k, weight_var / samples as f64, &mut next, &mut v);
        }
        for e in next.iter_mut() {
            *e += bias_var;
        }
        cov = next;
    }
    Ok(cov)
}

/// Compares the covariance implied by the limit measure of the last layer
/// with the Gaussian kernel recursion.
pub fn gaussian_oracle_check(
    spec: &NetworkSpec,
    target: &SpectralMeasure,
    oracle_samples: usize,
    seed: u64,
) -> Result<GaussianOracleReport> {
    if spec.alpha != 2.0 || target.alpha() != 2.0 {
        return Err(Error::input("the Gaussian oracle needs alpha = 2"));
    }
    let n = target.dimension();
    if n != spec.output_dimension() {
        return Err(Error::shape("limit measure does not match the network output"));
    }
    let oracle = gaussian_kernel_recursion(spec, oracle_samples, seed)?;
    let limit: Vec<f64> = target.second_moment().iter().map(|v| 2.0 * v).collect();
    let limit_diagonal: Vec<f64> = (0..n).map(|i| limit[i * n + i]).collect();
    let oracle_diagonal: Vec<f64> = (0..n).map(|i| oracle[i * n + i]).collect();
    let max_rel_diagonal = limit_diagonal
        .iter()
        .zip(&oracle_diagonal)
        .map(|(a, b)| if *b == 0.0 { a.abs() } else { (a - b).abs() / b.abs() })
        .fold(0.0, f64::max);
    let mean_var = oracle_diagonal.iter().sum::<f64>() / n as f64;
    let max_rel_offdiagonal = limit
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs() / mean_var.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(GaussianOracleReport { limit_diagonal, oracle_diagonal, max_rel_diagonal, max_rel_offdiagonal })
}
