//! Python bindings for the `stable-cnn` crate.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use stable_cnn::config::RunConfig;
use stable_cnn::limit::{gamma_first, limit_measures, mixture_measure, readout_limit};
use stable_cnn::network::{forward_finite, sample_replicas};
use stable_cnn::spectral::{
    cf_multivariate, compress_measure, project_1d, read_measure, sample_multivariate, write_measure,
};
use stable_cnn::stable::{cf_univariate, sample_univariate};
use stable_cnn::verify::{self, ProbeSet, SampleSet};
use stable_cnn::{
    Activation, ActivationSpec, Atom, Axis, AxisRole, BiasTag, ConvLayerConfig, LimitConfig, NetworkSpec,
    SeedStream, StableParams, Tensor,
};

fn py_err(e: stable_cnn::Error) -> PyErr {
    match e {
        stable_cnn::Error::Io(e) => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn rows_to_samples(rows: &[Vec<f64>]) -> PyResult<SampleSet> {
    let dim = rows.first().map(|r| r.len()).ok_or_else(|| PyValueError::new_err("no samples"))?;
    SampleSet::from_rows(dim, rows).map_err(py_err)
}

/// Discrete spectral measure of a symmetric multivariate stable law.
#[pyclass(name = "SpectralMeasure", module = "stable_cnn", frozen)]
struct PySpectralMeasure {
    inner: stable_cnn::SpectralMeasure,
}

#[pymethods]
impl PySpectralMeasure {
    /// Pair atoms at `+-directions[j]` with total weight `weights[j]`.
    #[new]
    fn new(dimension: usize, alpha: f64, weights: Vec<f64>, directions: Vec<Vec<f64>>) -> PyResult<Self> {
        if weights.len() != directions.len() {
            return Err(PyValueError::new_err("one weight per direction is required"));
        }
        let atoms = weights
            .into_iter()
            .zip(directions)
            .map(|(weight, direction)| Atom { weight, direction })
            .collect();
        let inner = stable_cnn::SpectralMeasure::from_atoms(dimension, alpha, atoms).map_err(py_err)?;
        Ok(PySpectralMeasure { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let file = File::open(path)?;
        let inner = read_measure(BufReader::new(file)).map_err(py_err)?;
        Ok(PySpectralMeasure { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_measure(&self.inner, BufWriter::new(File::create(path)?)).map_err(py_err)
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    #[getter]
    fn total_mass(&self) -> f64 {
        self.inner.total_mass()
    }

    #[getter]
    fn bias_mass(&self) -> f64 {
        self.inner.bias_mass()
    }

    /// Index of the bias atom, or `None`.
    #[getter]
    fn bias_index(&self) -> Option<usize> {
        match self.inner.bias() {
            BiasTag::Index(i) => Some(i),
            _ => None,
        }
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.atoms().iter().map(|a| a.weight).collect()
    }

    #[getter]
    fn directions(&self) -> Vec<Vec<f64>> {
        self.inner.atoms().iter().map(|a| a.direction.clone()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "SpectralMeasure(dimension={}, alpha={}, atoms={}, total_mass={:.6})",
            self.inner.dimension(),
            self.inner.alpha(),
            self.inner.len(),
            self.inner.total_mass()
        )
    }

    /// `sum_j gamma_j |<t, s_j>|^alpha`.
    fn exponent(&self, t: Vec<f64>) -> PyResult<f64> {
        self.inner.exponent(&t).map_err(py_err)
    }

    /// Characteristic function at `t`.
    fn cf(&self, t: Vec<f64>) -> PyResult<f64> {
        cf_multivariate(&self.inner, &t).map_err(py_err)
    }

    #[pyo3(signature = (n, seed = 0))]
    fn sample(&self, py: Python<'_>, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let m = &self.inner;
        py.detach(|| {
            let mut rng = SeedStream::new(seed).rng();
            (0..n).map(|_| sample_multivariate(m, &mut rng)).collect()
        })
    }

    /// `(sigma, tau, mu)` of the law of `<u, X>`.
    fn project(&self, u: Vec<f64>) -> PyResult<(f64, f64, f64)> {
        let p = project_1d(&self.inner, &u).map_err(py_err)?;
        Ok((p.sigma, p.tau, p.mu))
    }

    #[pyo3(signature = (target, seed = 0))]
    fn compress(&self, target: usize, seed: u64) -> PyResult<Self> {
        let inner = compress_measure(&self.inner, target, &mut SeedStream::new(seed).rng()).map_err(py_err)?;
        Ok(PySpectralMeasure { inner })
    }

    /// Measure of the bias-free channel combination with weights `z`.
    fn mixture(&self, z: Vec<f64>) -> PyResult<Self> {
        Ok(PySpectralMeasure { inner: mixture_measure(&self.inner, &z).map_err(py_err)? })
    }

    /// Dense `sum_j gamma_j s_j s_j^T`, row-major.
    fn second_moment(&self) -> Vec<f64> {
        self.inner.second_moment()
    }

    /// Probe vectors for CF comparisons; the first is zero.
    #[pyo3(signature = (directions = 5, seed = 0))]
    fn probes(&self, directions: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        Ok(ProbeSet::generate(&self.inner, directions, seed).map_err(py_err)?.probes().to_vec())
    }
}

/// Convolutional network with stable weights and biases.
#[pyclass(name = "Network", module = "stable_cnn", frozen)]
struct PyNetwork {
    spec: NetworkSpec,
}

#[pymethods]
impl PyNetwork {
    /// `layers` holds `(filter, stride, padding)` triples of per-axis lists;
    /// `values` is row-major over `input_shape = (channels, spatial..., K)`.
    #[new]
    #[pyo3(signature = (alpha, sigma_w, sigma_b, channels, activation, layers, input_shape, values, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        alpha: f64,
        sigma_w: f64,
        sigma_b: f64,
        channels: usize,
        activation: &str,
        layers: Vec<(Vec<usize>, Vec<usize>, Vec<usize>)>,
        input_shape: Vec<usize>,
        values: Vec<f64>,
        seed: u64,
    ) -> PyResult<Self> {
        if input_shape.len() < 3 {
            return Err(PyValueError::new_err("input_shape is (channels, spatial..., K)"));
        }
        let spatial = input_shape[1..input_shape.len() - 1].to_vec();
        let mut axes = vec![Axis::new(AxisRole::Channel, input_shape[0])];
        axes.extend(spatial.iter().map(|&p| Axis::new(AxisRole::Spatial, p)));
        axes.push(Axis::new(AxisRole::Input, input_shape[input_shape.len() - 1]));
        let inputs = Tensor::new(axes, values).map_err(py_err)?;
        let mut spatial_in = spatial;
        let mut cfgs = Vec::with_capacity(layers.len());
        for (filter, stride, padding) in layers {
            let cfg = ConvLayerConfig::new(spatial_in, filter, stride, padding).map_err(py_err)?;
            spatial_in = cfg.spatial_out().to_vec();
            cfgs.push(cfg);
        }
        let spec = NetworkSpec {
            alpha,
            sigma_w,
            sigma_b,
            layers: cfgs,
            activation: ActivationSpec::from_activation(Activation::from_name(activation).map_err(py_err)?),
            channels,
            inputs,
            seed,
        };
        spec.validate().map_err(py_err)?;
        Ok(PyNetwork { spec })
    }

    /// Network described by a run configuration file.
    #[staticmethod]
    fn from_config(path: PathBuf) -> PyResult<Self> {
        let cfg = RunConfig::load(&path).map_err(py_err)?;
        Ok(PyNetwork { spec: cfg.network_spec().map_err(py_err)? })
    }

    #[getter]
    fn depth(&self) -> usize {
        self.spec.depth()
    }

    #[getter]
    fn output_dimension(&self) -> usize {
        self.spec.output_dimension()
    }

    fn with_channels(&self, channels: usize) -> Self {
        PyNetwork { spec: self.spec.with_channels(channels) }
    }

    /// One realization: `n_out` flattened last-layer channels.
    #[pyo3(signature = (n_out = 1, seed = 0))]
    fn forward(&self, n_out: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let out = forward_finite(&self.spec, n_out, &mut SeedStream::new(seed).rng()).map_err(py_err)?;
        Ok(out.channels.into_iter().map(|t| t.into_data()).collect())
    }

    /// `n` independent realizations, each a list of `n_out` flattened
    /// channels.
    #[pyo3(signature = (n, n_out = 1))]
    fn replicas(&self, py: Python<'_>, n: usize, n_out: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let spec = &self.spec;
        let outs = py.detach(|| sample_replicas(spec, n, n_out)).map_err(py_err)?;
        Ok(outs
            .into_iter()
            .map(|o| o.channels.into_iter().map(|t| t.into_data()).collect())
            .collect())
    }

    /// Exact limiting measure of the first layer.
    fn first_layer_measure(&self) -> PyResult<PySpectralMeasure> {
        let s = &self.spec;
        let inner = gamma_first(&s.inputs, &s.layers[0], s.alpha, s.sigma_w, s.sigma_b).map_err(py_err)?;
        Ok(PySpectralMeasure { inner })
    }

    /// Limiting measures of every layer.
    #[pyo3(signature = (mc_samples = 10_000, atom_cap = None, seed = 0))]
    fn limit(
        &self,
        py: Python<'_>,
        mc_samples: usize,
        atom_cap: Option<usize>,
        seed: u64,
    ) -> PyResult<Vec<PySpectralMeasure>> {
        let cfg = LimitConfig::new(mc_samples, atom_cap, seed).map_err(py_err)?;
        let spec = &self.spec;
        let measures = py.detach(|| limit_measures(spec, &cfg)).map_err(py_err)?;
        Ok(measures.into_iter().map(|inner| PySpectralMeasure { inner }).collect())
    }

    /// Limiting measure over the inputs of the position readout `u`.
    #[pyo3(signature = (u, mc_samples = 10_000, seed = 0))]
    fn readout(&self, py: Python<'_>, u: Vec<f64>, mc_samples: usize, seed: u64) -> PyResult<PySpectralMeasure> {
        let cfg = LimitConfig::new(mc_samples, None, seed).map_err(py_err)?;
        let spec = &self.spec;
        let u = Tensor::vector(u).map_err(py_err)?;
        let inner = py
            .detach(|| {
                let measures = limit_measures(spec, &cfg)?;
                readout_limit(spec, &measures, &u, &cfg)
            })
            .map_err(py_err)?;
        Ok(PySpectralMeasure { inner })
    }
}

/// Characteristic function of `St(alpha, tau, sigma, mu)` at `t`.
#[pyfunction]
#[pyo3(signature = (alpha, sigma, t, tau = 0.0, mu = 0.0))]
fn stable_cf(alpha: f64, sigma: f64, t: f64, tau: f64, mu: f64) -> PyResult<Complex64> {
    let p = StableParams::new(alpha, tau, sigma, mu).map_err(py_err)?;
    Ok(cf_univariate(&p, t))
}

/// `n` draws from the symmetric law `St(alpha, sigma)`.
#[pyfunction]
#[pyo3(signature = (alpha, sigma, n, seed = 0))]
fn sample_stable(alpha: f64, sigma: f64, n: usize, seed: u64) -> PyResult<Vec<f64>> {
    let p = StableParams::symmetric(alpha, sigma).map_err(py_err)?;
    let mut rng = SeedStream::new(seed).rng();
    (0..n).map(|_| sample_univariate(&p, &mut rng).map_err(py_err)).collect()
}

/// `(1/N) sum_n exp(i <t, x_n>)`.
#[pyfunction]
fn empirical_cf(samples: Vec<Vec<f64>>, t: Vec<f64>) -> PyResult<Complex64> {
    verify::empirical_cf(&rows_to_samples(&samples)?, &t).map_err(py_err)
}

/// `(sup, mean)` of `|empirical - theoretical|`.
#[pyfunction]
fn cf_distance(empirical: Vec<Complex64>, theoretical: Vec<f64>) -> PyResult<(f64, f64)> {
    let d = verify::cf_distance(&empirical, &theoretical).map_err(py_err)?;
    Ok((d.sup, d.mean))
}

#[pymodule]
#[pyo3(name = "stable_cnn")]
fn stable_cnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpectralMeasure>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(stable_cf, m)?)?;
    m.add_function(wrap_pyfunction!(sample_stable, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_cf, m)?)?;
    m.add_function(wrap_pyfunction!(cf_distance, m)?)?;
    Ok(())
}
