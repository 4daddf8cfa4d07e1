//! Symmetric multivariate stable laws with discrete spectral measures.
//!
//! Each stored [`Atom`] stands for the symmetric pair `{+s, -s}` carrying
//! half of its weight on each point, so the characteristic function is
//! `exp(-sum_j weight_j |<t, s_j>|^alpha)`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::stable::{check_alpha, sample_standard, StableParams};

/// Tolerance on `| ||s|| - 1 |` for stored directions.
pub const UNIT_NORM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub weight: f64,
    pub direction: Vec<f64>,
}

/// Where the bias contribution sits in a measure.
///
/// Measures built by the limit recursion know their bias atom; measures
/// assembled elsewhere (or read back from untagged files) do not.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BiasTag {
    Untagged,
    /// Built with a zero bias scale, so no bias atom exists.
    Absent,
    Index(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralMeasure {
    dimension: usize,
    alpha: f64,
    atoms: Vec<Atom>,
    bias: BiasTag,
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The Dirac-pair map: a nonzero `z` becomes the unit direction `z / ||z||`
/// together with `||z||`; the zero vector contributes nothing.
pub fn psi_atom(z: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = norm(z);
    if n > 0.0 && n.is_finite() {
        Some((z.iter().map(|v| v / n).collect(), n))
    } else {
        None
    }
}

impl SpectralMeasure {
    pub fn new(dimension: usize, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if dimension == 0 {
            return Err(Error::input("spectral measure dimension must be positive"));
        }
        Ok(SpectralMeasure {
            dimension,
            alpha,
            atoms: Vec::new(),
            bias: BiasTag::Untagged,
        })
    }

    pub fn from_atoms(dimension: usize, alpha: f64, atoms: Vec<Atom>) -> Result<Self> {
        let mut m = Self::new(dimension, alpha)?;
        for atom in atoms {
            m.push_atom(atom)?;
        }
        Ok(m)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn bias(&self) -> BiasTag {
        self.bias
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn bias_mass(&self) -> f64 {
        match self.bias {
            BiasTag::Index(i) => self.atoms[i].weight,
            _ => 0.0,
        }
    }

    pub fn push_atom(&mut self, atom: Atom) -> Result<()> {
        if atom.direction.len() != self.dimension {
            return Err(Error::shape(format!(
                "atom of dimension {} in a measure of dimension {}",
                atom.direction.len(),
                self.dimension
            )));
        }
        if !(atom.weight > 0.0 && atom.weight.is_finite()) {
            return Err(Error::input(format!("atom weight {} must be positive", atom.weight)));
        }
        let n = norm(&atom.direction);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::input(format!("atom direction has norm {n}, expected 1")));
        }
        self.atoms.push(atom);
        Ok(())
    }

    /// Adds `scale^alpha * ||z||^alpha` on the pair at `±z/||z||`.
    /// Returns `false` when `z` (or the resulting weight) is zero.
    pub fn push_scaled(&mut self, z: &[f64], scale_pow_alpha: f64) -> Result<bool> {
        match psi_atom(z) {
            Some((direction, n)) => {
                let weight = scale_pow_alpha * n.powf(self.alpha);
                if weight > 0.0 {
                    self.push_atom(Atom { weight, direction })?;
                    return Ok(true);
                }
                Ok(false)
            }
            None => Ok(false),
        }
    }

    /// Adds the bias pair `||scale * 1||^alpha` at `±1/||1||` and tags it.
    /// A zero `scale` marks the bias as absent.
    pub(crate) fn push_bias(&mut self, scale: f64) -> Result<()> {
        if !self.atoms.is_empty() || self.bias != BiasTag::Untagged {
            return Err(Error::input("bias atom must be the first atom"));
        }
        let ones = vec![1.0; self.dimension];
        if self.push_scaled(&ones, scale.abs().powf(self.alpha))? {
            self.bias = BiasTag::Index(0);
        } else {
            self.bias = BiasTag::Absent;
        }
        Ok(())
    }

    pub(crate) fn set_bias_tag(&mut self, tag: BiasTag) {
        self.bias = tag;
    }

    /// `sum_j weight_j |<t, s_j>|^alpha`.
    pub fn exponent(&self, t: &[f64]) -> Result<f64> {
        if t.len() != self.dimension {
            return Err(Error::shape(format!(
                "probe of dimension {} against measure of dimension {}",
                t.len(),
                self.dimension
            )));
        }
        Ok(self
            .atoms
            .iter()
            .map(|a| a.weight * dot(t, &a.direction).abs().powf(self.alpha))
            .sum())
    }

    /// Same measure with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::input(format!("scale factor {factor} must be positive")));
        }
        let mut out = self.clone();
        for a in &mut out.atoms {
            a.weight *= factor;
        }
        Ok(out)
    }

    /// Same atoms, bias tag dropped.
    pub fn without_bias(&self) -> Self {
        let mut out = self.clone();
        if let BiasTag::Index(i) = self.bias {
            out.atoms.remove(i);
        }
        out.bias = BiasTag::Untagged;
        out
    }

    /// Dense `sum_j weight_j s_j s_j^T` (row-major). At `alpha = 2` the law
    /// is Gaussian with covariance twice this matrix.
    pub fn second_moment(&self) -> Vec<f64> {
        let d = self.dimension;
        let mut out = vec![0.0; d * d];
        for a in &self.atoms {
            for i in 0..d {
                let si = a.weight * a.direction[i];
                if si == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out[i * d + j] += si * a.direction[j];
                }
            }
        }
        out
    }
}

/// `exp(-sum_j weight_j |<t, s_j>|^alpha)`.
pub fn cf_multivariate(measure: &SpectralMeasure, t: &[f64]) -> Result<f64> {
    Ok((-measure.exponent(t)?).exp())
}

/// Precomputed per-atom scales for repeated draws.
///
/// A draw is `sum_j weight_j^{1/alpha} Z_j s_j` with `Z_j` iid `St(alpha, 1)`,
/// whose characteristic function is exactly that of the measure.
#[derive(Clone, Debug)]
pub struct MeasureSampler<'a> {
    measure: &'a SpectralMeasure,
    scales: Vec<f64>,
}

impl<'a> MeasureSampler<'a> {
    pub fn new(measure: &'a SpectralMeasure) -> Self {
        let inv = 1.0 / measure.alpha;
        let scales = measure.atoms.iter().map(|a| a.weight.powf(inv)).collect();
        MeasureSampler { measure, scales }
    }

    /// An empty measure is the point mass at zero.
    pub fn is_degenerate(&self) -> bool {
        self.measure.atoms.is_empty()
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        out.fill(0.0);
        let alpha = self.measure.alpha;
        for (atom, &scale) in self.measure.atoms.iter().zip(&self.scales) {
            let z = scale * sample_standard(alpha, rng);
            for (o, s) in out.iter_mut().zip(&atom.direction) {
                *o += z * s;
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.measure.dimension];
        self.sample_into(rng, &mut out);
        out
    }
}

/// One draw from `St_D(alpha, measure)`. Empty measures yield the zero
/// vector and log a warning.
pub fn sample_multivariate<R: Rng + ?Sized>(measure: &SpectralMeasure, rng: &mut R) -> Vec<f64> {
    let sampler = MeasureSampler::new(measure);
    if sampler.is_degenerate() {
        log::warn!("sampling an empty spectral measure: degenerate draw at zero");
    }
    sampler.sample(rng)
}

/// Parameters of the one-dimensional projection `<u, A>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedStableParams {
    pub sigma: f64,
    pub tau: f64,
    pub mu: f64,
}

impl ProjectedStableParams {
    /// `None` when the projection is degenerate (`sigma = 0`).
    pub fn to_stable(&self, alpha: f64) -> Option<StableParams> {
        StableParams::new(alpha, self.tau, self.sigma, self.mu).ok()
    }
}

/// Scale, skewness and shift of `<u, A>` for `A ~ St_D(alpha, measure)`.
///
/// Sums run over both points of every stored pair, so on these symmetric
/// measures the odd integrands for skewness and shift cancel exactly.
pub fn project_1d(measure: &SpectralMeasure, u: &[f64]) -> Result<ProjectedStableParams> {
    if u.len() != measure.dimension {
        return Err(Error::shape(format!(
            "projection of dimension {} against measure of dimension {}",
            u.len(),
            measure.dimension
        )));
    }
    let alpha = measure.alpha;
    let mut scale_pow = 0.0;
    let mut skew = 0.0;
    let mut shift = 0.0;
    for atom in &measure.atoms {
        let half = 0.5 * atom.weight;
        let d = dot(u, &atom.direction);
        let mut pair_skew = 0.0;
        let mut pair_shift = 0.0;
        for x in [d, -d] {
            let p = x.abs().powf(alpha);
            scale_pow += half * p;
            pair_skew += half * p * sign(x);
            if x != 0.0 {
                pair_shift += half * x * x.abs().ln();
            }
        }
        skew += pair_skew;
        shift += pair_shift;
    }
    let sigma = scale_pow.powf(1.0 / alpha);
    let tau = if scale_pow > 0.0 { skew / scale_pow } else { 0.0 };
    let mu = if alpha == 1.0 { -2.0 / PI * shift } else { 0.0 };
    Ok(ProjectedStableParams { sigma, tau, mu })
}

/// Pair atoms at `s` and `-s` are the same atom; pick the representative
/// whose first nonzero coordinate is positive.
fn canonical_sign(atom: &Atom) -> Atom {
    let flip = atom.direction.iter().find(|v| **v != 0.0).is_some_and(|v| *v < 0.0);
    Atom {
        weight: atom.weight,
        direction: if flip { atom.direction.iter().map(|v| -v).collect() } else { atom.direction.clone() },
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Systematic resampling of the non-bias atoms down to `target` atoms of
/// equal weight; the bias atom is kept as is. Total mass is preserved and
/// the characteristic-function exponent is preserved in expectation.
pub fn compress_measure<R: Rng + ?Sized>(
    measure: &SpectralMeasure,
    target: usize,
    rng: &mut R,
) -> Result<SpectralMeasure> {
    if target == 0 {
        return Err(Error::input("compression target must be at least 1"));
    }
    let bias_index = match measure.bias {
        BiasTag::Index(i) => Some(i),
        _ => None,
    };
    let mut body: Vec<Atom> = measure
        .atoms
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != bias_index)
        .map(|(_, a)| canonical_sign(a))
        .collect();
    if body.len() <= target {
        return Ok(measure.clone());
    }
    // neighbouring directions end up in the same resampling stratum
    body.sort_by(|a, b| {
        a.direction
            .iter()
            .zip(&b.direction)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mass: f64 = body.iter().map(|a| a.weight).sum();
    let step = mass / target as f64;
    let mut out = SpectralMeasure {
        dimension: measure.dimension,
        alpha: measure.alpha,
        atoms: Vec::with_capacity(target + 1),
        bias: measure.bias,
    };
    if let Some(i) = bias_index {
        out.atoms.push(measure.atoms[i].clone());
        out.bias = BiasTag::Index(0);
    }
    let offset: f64 = rng.random::<f64>() * step;
    let mut cumulative = 0.0;
    let mut j = 0;
    for i in 0..target {
        let point = offset + i as f64 * step;
        while j + 1 < body.len() && cumulative + body[j].weight <= point {
            cumulative += body[j].weight;
            j += 1;
        }
        out.atoms.push(Atom {
            weight: step,
            direction: body[j].direction.clone(),
        });
    }
    Ok(out)
}

const HEADER_TAG: &str = "#spectral-measure";

/// Writes the measure in the line-oriented text format: a header line
/// `#spectral-measure dimension=D alpha=A total_mass=M bias=B`, then one
/// atom per line as `weight s_1 ... s_D`, all in `%.17e`.
/// `B` is `untagged`, `absent` or the bias atom index.
pub fn write_measure<W: Write>(measure: &SpectralMeasure, mut w: W) -> Result<()> {
    let bias = match measure.bias {
        BiasTag::Untagged => "untagged".to_string(),
        BiasTag::Absent => "absent".to_string(),
        BiasTag::Index(i) => i.to_string(),
    };
    writeln!(
        w,
        "{HEADER_TAG} dimension={} alpha={:.17e} total_mass={:.17e} bias={}",
        measure.dimension,
        measure.alpha,
        measure.total_mass(),
        bias
    )?;
    let mut line = String::new();
    for atom in &measure.atoms {
        line.clear();
        write!(line, "{:.17e}", atom.weight).unwrap();
        for v in &atom.direction {
            write!(line, " {v:.17e}").unwrap();
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "spectral measure file",
        detail: detail.into(),
    }
}

pub fn read_measure<R: BufRead>(r: R) -> Result<SpectralMeasure> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| format_err("empty input"))??;
    let mut fields = header.split_whitespace();
    if fields.next() != Some(HEADER_TAG) {
        return Err(format_err("missing header"));
    }
    let (mut dimension, mut alpha, mut total, mut bias) = (None, None, None, None);
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| format_err(format!("bad header field {field:?}")))?;
        match key {
            "dimension" => dimension = value.parse::<usize>().ok(),
            "alpha" => alpha = value.parse::<f64>().ok(),
            "total_mass" => total = value.parse::<f64>().ok(),
            "bias" => {
                bias = Some(match value {
                    "untagged" => BiasTag::Untagged,
                    "absent" => BiasTag::Absent,
                    v => BiasTag::Index(v.parse().map_err(|_| format_err("bad bias tag"))?),
                })
            }
            _ => return Err(format_err(format!("unknown header field {key:?}"))),
        }
    }
    let dimension = dimension.ok_or_else(|| format_err("missing dimension"))?;
    let alpha = alpha.ok_or_else(|| format_err("missing alpha"))?;
    let total = total.ok_or_else(|| format_err("missing total_mass"))?;

    let mut measure = SpectralMeasure::new(dimension, alpha)?;
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format_err(format!("atom line {}: {e}", n + 1)))?;
        if values.len() != dimension + 1 {
            return Err(format_err(format!(
                "atom line {} has {} values, expected {}",
                n + 1,
                values.len(),
                dimension + 1
            )));
        }
        measure.push_atom(Atom {
            weight: values[0],
            direction: values[1..].to_vec(),
        })?;
    }
    let bias = bias.unwrap_or(BiasTag::Untagged);
    if let BiasTag::Index(i) = bias {
        if i >= measure.len() {
            return Err(format_err("bias index out of range"));
        }
    }
    measure.bias = bias;
    if (measure.total_mass() - total).abs() > 1e-9 * total.abs().max(1.0) {
        return Err(format_err(format!(
            "total mass {} disagrees with header {}",
            measure.total_mass(),
            total
        )));
    }
    Ok(measure)
}
