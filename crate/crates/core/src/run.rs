//! Subcommand implementations shared by the command-line tool.
//!
//! Every command writes into a run directory named after the resolved
//! configuration hash and records the resolved configuration there.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::cache::ReplicaCache;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::limit::{limit_measures, readout_limit, LayerSummary, LimitConfig};
use crate::network::{sample_replicas, NetworkSpec};
use crate::spectral::{read_measure, write_measure, SpectralMeasure};
use crate::tensor::Tensor;
use crate::verify::{
    channel_samples, convergence_sweep, csv_err, empirical_cfs, gaussian_oracle_check, independence_check,
    readout_check, ProbeSet,
};

pub struct RunContext {
    pub config: RunConfig,
    pub spec: NetworkSpec,
    pub limit: LimitConfig,
    pub hash: String,
    pub dir: PathBuf,
}

impl RunContext {
    /// Resolves the configuration and prepares `base/<hash prefix>`.
    pub fn new(config: RunConfig, base: &Path) -> Result<Self> {
        let spec = config.network_spec()?;
        let limit = config.limit_config()?;
        let hash = config.hash()?;
        let dir = config.run_dir(base)?;
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("config.toml"), config.resolved_toml()?)?;
        fs::write(dir.join("config.sha256"), format!("{hash}\n"))?;
        Ok(RunContext { config, spec, limit, hash, dir })
    }

    pub fn from_file(path: &Path, base: &Path) -> Result<Self> {
        Self::new(RunConfig::load(path)?, base)
    }

    fn probe_seed(&self, offset: u64) -> u64 {
        self.config.seed.wrapping_add(offset)
    }
}

/// Outcome of one enabled acceptance check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn below(name: &'static str, value: f64, threshold: f64) -> Self {
        Check { name, value, threshold, pass: value < threshold }
    }

    fn at_least(name: &'static str, value: f64, threshold: f64) -> Self {
        Check { name, value, threshold, pass: value >= threshold }
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

fn fmt_f(v: f64) -> String {
    format!("{v:.10e}")
}

fn csv_file(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn write_checks(path: &Path, checks: &[Check]) -> Result<()> {
    let mut w = csv_file(path)?;
    w.write_record(["check", "value", "threshold", "pass"]).map_err(csv_err)?;
    for c in checks {
        w.write_record([c.name.to_string(), fmt_f(c.value), fmt_f(c.threshold), c.pass.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn measure_path(dir: &Path, layer: usize) -> PathBuf {
    dir.join(format!("layer_{layer}.measure"))
}

/// Limiting measures of every layer. Measures already stored in the run
/// directory are reused; the rest are computed and written.
pub fn limit(ctx: &RunContext) -> Result<Vec<SpectralMeasure>> {
    let depth = ctx.spec.depth();
    let paths: Vec<PathBuf> = (1..=depth).map(|l| measure_path(&ctx.dir, l)).collect();
    let measures = if paths.iter().all(|p| p.exists()) {
        log::info!("reusing cached limit measures in {}", ctx.dir.display());
        paths
            .iter()
            .map(|p| read_measure(BufReader::new(File::open(p)?)))
            .collect::<Result<Vec<_>>>()?
    } else {
        let measures = limit_measures(&ctx.spec, &ctx.limit)?;
        for (m, p) in measures.iter().zip(&paths) {
            let mut w = BufWriter::new(File::create(p)?);
            write_measure(m, &mut w)?;
            w.flush()?;
        }
        measures
    };
    let mut w = csv_file(&ctx.dir.join("layers.csv"))?;
    w.write_record(["layer", "atoms", "total_mass", "bias_mass"]).map_err(csv_err)?;
    for (l, m) in measures.iter().enumerate() {
        let s = LayerSummary::of(l + 1, m);
        w.write_record([s.layer.to_string(), s.atoms.to_string(), fmt_f(s.total_mass), fmt_f(s.bias_mass)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(measures)
}

fn replica_path(dir: &Path, channels: usize) -> PathBuf {
    dir.join(format!("replicas_C{channels}.bin"))
}

/// Simulates finite-width replicas and stores them in the binary cache.
pub fn simulate(ctx: &RunContext, channels: Option<usize>, n_channels_out: usize) -> Result<PathBuf> {
    let c = channels.unwrap_or(ctx.spec.channels);
    let outputs = sample_replicas(&ctx.spec.with_channels(c), ctx.config.verify.replicas, n_channels_out)?;
    let cache = ReplicaCache { alpha: ctx.spec.alpha, seed: ctx.spec.seed, channels: c, outputs };
    let path = replica_path(&ctx.dir, c);
    let mut w = BufWriter::new(File::create(&path)?);
    cache.write(&mut w)?;
    w.flush()?;
    Ok(path)
}

/// Convergence sweep plus the enabled independence and readout checks.
pub fn verify(ctx: &RunContext) -> Result<Vec<Check>> {
    let v = &ctx.config.verify;
    let measures = limit(ctx)?;
    let target = measures.last().ok_or_else(|| Error::config("network has no layers"))?;
    let probes = ProbeSet::generate(target, ctx.config.probes.directions, ctx.probe_seed(0))?;

    let mut report =
        convergence_sweep(&ctx.spec, &v.channel_sweep, v.replicas, &ctx.limit, target, &probes, v.timing)?;
    report.meta.config_hash = ctx.hash.clone();
    let mut w = BufWriter::new(File::create(ctx.dir.join("sweep.csv"))?);
    report.write_csv(&mut w)?;
    w.flush()?;

    let rows = &report.rows;
    let last = &rows[rows.len() - 1];
    let mut checks = vec![Check::below("sweep_final_sup", last.sup_cf_dist, v.sweep_threshold)];
    if rows.len() > 1 {
        checks.push(Check::below("sweep_final_below_first", last.sup_cf_dist, rows[0].sup_cf_dist));
    }

    let widest = ctx.spec.with_channels(last.channels);
    if v.independence {
        let r = independence_check(
            &widest,
            v.replicas,
            target,
            &v.mixture,
            ctx.config.probes.directions,
            ctx.probe_seed(1),
        )?;
        let mut w = csv_file(&ctx.dir.join("independence.csv"))?;
        w.write_record(["C", "n_replicas", "pairs", "max_defect", "mean_defect", "control_max_defect", "mixture_sup", "mixture_mean"])
            .map_err(csv_err)?;
        w.write_record([
            r.channels.to_string(),
            r.n_replicas.to_string(),
            r.pairs.to_string(),
            fmt_f(r.max_defect),
            fmt_f(r.mean_defect),
            fmt_f(r.control_max_defect),
            fmt_f(r.mixture.sup),
            fmt_f(r.mixture.mean),
        ])
        .map_err(csv_err)?;
        w.flush()?;
        checks.push(Check::below("factorization_defect", r.max_defect, v.independence_threshold));
        checks.push(Check::below("mixture_sup", r.mixture.sup, v.mixture_threshold));
        checks.push(Check::at_least("dependent_control_defect", r.control_max_defect, v.independence_threshold));
    }

    if v.readout {
        let u = ctx.config.readout_weights();
        let readout = readout_limit(&ctx.spec, &measures, &Tensor::vector(u.to_vec())?, &ctx.limit)?;
        let d = readout_check(&widest, v.replicas, &readout, u, ctx.config.probes.directions, ctx.probe_seed(2))?;
        let mut w = csv_file(&ctx.dir.join("readout.csv"))?;
        w.write_record(["C", "n_replicas", "M", "sup_cf_dist", "mean_cf_dist"]).map_err(csv_err)?;
        w.write_record([
            last.channels.to_string(),
            v.replicas.to_string(),
            ctx.limit.mc_samples.to_string(),
            fmt_f(d.sup),
            fmt_f(d.mean),
        ])
        .map_err(csv_err)?;
        w.flush()?;
        checks.push(Check::below("readout_sup", d.sup, v.readout_threshold));
    }

    write_checks(&ctx.dir.join("checks.csv"), &checks)?;
    Ok(checks)
}

/// Gaussian kernel oracle; the configuration must have `alpha = 2`.
pub fn oracle(ctx: &RunContext) -> Result<Vec<Check>> {
    let measures = limit(ctx)?;
    let target = measures.last().ok_or_else(|| Error::config("network has no layers"))?;
    let r = gaussian_oracle_check(&ctx.spec, target, ctx.config.verify.oracle_samples, ctx.config.seed)?;
    let mut w = csv_file(&ctx.dir.join("oracle.csv"))?;
    w.write_record(["entry", "limit_variance", "oracle_variance", "relative_error"]).map_err(csv_err)?;
    for (i, (a, b)) in r.limit_diagonal.iter().zip(&r.oracle_diagonal).enumerate() {
        w.write_record([i.to_string(), fmt_f(*a), fmt_f(*b), fmt_f((a - b).abs() / b.abs())])
            .map_err(csv_err)?;
    }
    w.flush()?;
    let checks = vec![Check::below("oracle_diagonal", r.max_rel_diagonal, ctx.config.verify.oracle_threshold)];
    write_checks(&ctx.dir.join("checks_oracle.csv"), &checks)?;
    Ok(checks)
}

/// Plot data: theoretical and empirical CF at every probe for the widest
/// network of the sweep. Replicas come from the binary cache when one
/// exists for that width.
pub fn report(ctx: &RunContext) -> Result<PathBuf> {
    let measures = limit(ctx)?;
    let target = measures.last().ok_or_else(|| Error::config("network has no layers"))?;
    let probes = ProbeSet::generate(target, ctx.config.probes.directions, ctx.probe_seed(0))?;
    let c = *ctx.config.verify.channel_sweep.last().unwrap_or(&ctx.spec.channels);
    let cached = replica_path(&ctx.dir, c);
    let outputs = if cached.exists() {
        ReplicaCache::read(BufReader::new(File::open(&cached)?))?.outputs
    } else {
        sample_replicas(&ctx.spec.with_channels(c), ctx.config.verify.replicas, 1)?
    };
    let samples = channel_samples(&outputs, 0)?;
    let empirical = empirical_cfs(&samples, &probes)?;
    let theoretical = probes.theoretical(target)?;
    let r = probes.radii().len();

    let path = ctx.dir.join("cf_profile.csv");
    let mut w = csv_file(&path)?;
    w.write_record(["probe", "direction", "radius", "theoretical_cf", "empirical_re", "empirical_im"])
        .map_err(csv_err)?;
    for (i, (e, t)) in empirical.iter().zip(&theoretical).enumerate() {
        let (dir, radius) = if i == 0 { (String::new(), 0.0) } else { (((i - 1) / r).to_string(), probes.radii()[(i - 1) % r]) };
        w.write_record([i.to_string(), dir, fmt_f(radius), fmt_f(*t), fmt_f(e.re), fmt_f(e.im)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(path)
}
