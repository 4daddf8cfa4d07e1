//! Convolution geometry: layer configurations, the precomputed patch index
//! map, and patch extraction with zero padding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Axis, AxisRole, Tensor};

/// Spatial geometry of one convolutional layer.
///
/// Channel counts are not part of the geometry; they live on
/// [`NetworkSpec`](crate::network::NetworkSpec) and on the tensors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerConfig {
    spatial_in: Vec<usize>,
    spatial_out: Vec<usize>,
    filter: Vec<usize>,
    stride: Vec<usize>,
    padding: Vec<usize>,
}

fn output_extent(p: usize, g: usize, stride: usize, pad: usize) -> usize {
    (p + 2 * pad - g) / stride + 1
}

impl ConvLayerConfig {
    /// Builds a config and derives the output extents.
    pub fn new(
        spatial_in: Vec<usize>,
        filter: Vec<usize>,
        stride: Vec<usize>,
        padding: Vec<usize>,
    ) -> Result<Self> {
        let s = spatial_in.len();
        if s == 0 {
            return Err(Error::config("a layer needs at least one spatial axis"));
        }
        if filter.len() != s || stride.len() != s || padding.len() != s {
            return Err(Error::config(format!(
                "spatial rank {s} disagrees with filter {filter:?}, stride {stride:?} or padding {padding:?}"
            )));
        }
        for axis in 0..s {
            let (p, g, st, pad) = (spatial_in[axis], filter[axis], stride[axis], padding[axis]);
            if p == 0 || g == 0 || st == 0 {
                return Err(Error::config(format!(
                    "axis {axis}: extents and strides must be positive"
                )));
            }
            if g > p + 2 * pad {
                return Err(Error::config(format!(
                    "axis {axis}: filter {g} does not fit input {p} with padding {pad}"
                )));
            }
        }
        let spatial_out = (0..s)
            .map(|i| output_extent(spatial_in[i], filter[i], stride[i], padding[i]))
            .collect();
        Ok(ConvLayerConfig {
            spatial_in,
            spatial_out,
            filter,
            stride,
            padding,
        })
    }

    /// Like [`new`](Self::new) but also checks a declared output shape.
    pub fn with_output(
        spatial_in: Vec<usize>,
        spatial_out: Vec<usize>,
        filter: Vec<usize>,
        stride: Vec<usize>,
        padding: Vec<usize>,
    ) -> Result<Self> {
        let cfg = Self::new(spatial_in, filter, stride, padding)?;
        if cfg.spatial_out != spatial_out {
            return Err(Error::config(format!(
                "declared output {:?} but geometry gives {:?}",
                spatial_out, cfg.spatial_out
            )));
        }
        Ok(cfg)
    }

    pub fn spatial_in(&self) -> &[usize] {
        &self.spatial_in
    }

    pub fn spatial_out(&self) -> &[usize] {
        &self.spatial_out
    }

    pub fn filter(&self) -> &[usize] {
        &self.filter
    }

    pub fn stride(&self) -> &[usize] {
        &self.stride
    }

    pub fn padding(&self) -> &[usize] {
        &self.padding
    }

    pub fn n_in(&self) -> usize {
        self.spatial_in.iter().product()
    }

    pub fn n_out(&self) -> usize {
        self.spatial_out.iter().product()
    }

    pub fn n_filter(&self) -> usize {
        self.filter.iter().product()
    }

    pub fn patch_map(&self) -> PatchMap {
        PatchMap::new(self)
    }
}

const OUT_OF_BOUNDS: usize = usize::MAX;

/// For every (filter offset, output position) pair, the flat input position
/// it reads from, or an out-of-bounds marker (read as zero).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchMap {
    config: ConvLayerConfig,
    // laid out [filter offset][output position]
    index: Vec<usize>,
}

fn unravel(mut flat: usize, extents: &[usize], out: &mut [usize]) {
    for axis in (0..extents.len()).rev() {
        out[axis] = flat % extents[axis];
        flat /= extents[axis];
    }
}

impl PatchMap {
    pub fn new(config: &ConvLayerConfig) -> Self {
        let s = config.spatial_in.len();
        let (n_g, n_p) = (config.n_filter(), config.n_out());
        let mut index = Vec::with_capacity(n_g * n_p);
        let mut g_idx = vec![0; s];
        let mut p_idx = vec![0; s];
        for g in 0..n_g {
            unravel(g, &config.filter, &mut g_idx);
            for p in 0..n_p {
                unravel(p, &config.spatial_out, &mut p_idx);
                let mut flat = 0usize;
                let mut inside = true;
                for axis in 0..s {
                    let i = (p_idx[axis] * config.stride[axis] + g_idx[axis]) as isize
                        - config.padding[axis] as isize;
                    if i < 0 || i >= config.spatial_in[axis] as isize {
                        inside = false;
                        break;
                    }
                    flat = flat * config.spatial_in[axis] + i as usize;
                }
                index.push(if inside { flat } else { OUT_OF_BOUNDS });
            }
        }
        PatchMap {
            config: config.clone(),
            index,
        }
    }

    pub fn config(&self) -> &ConvLayerConfig {
        &self.config
    }

    pub fn n_in(&self) -> usize {
        self.config.n_in()
    }

    pub fn n_out(&self) -> usize {
        self.config.n_out()
    }

    pub fn n_filter(&self) -> usize {
        self.config.n_filter()
    }

    /// Flat input position read by output position `p` at filter offset `g`.
    pub fn source(&self, p: usize, g: usize) -> Option<usize> {
        match self.index[g * self.n_out() + p] {
            OUT_OF_BOUNDS => None,
            i => Some(i),
        }
    }

    /// Gathers the patches of one channel.
    ///
    /// `src` is laid out `[input position][k]` and `dst` is filled as
    /// `[filter offset][output position][k]`.
    pub fn gather(&self, src: &[f64], k: usize, dst: &mut [f64]) {
        debug_assert_eq!(src.len(), self.n_in() * k);
        debug_assert_eq!(dst.len(), self.index.len() * k);
        for (chunk, &i) in dst.chunks_exact_mut(k).zip(&self.index) {
            if i == OUT_OF_BOUNDS {
                chunk.fill(0.0);
            } else {
                chunk.copy_from_slice(&src[i * k..(i + 1) * k]);
            }
        }
    }
}

/// Extracts every patch of `x`.
///
/// `x` has axes `(channel, spatial..., [input])`. The result has axes
/// `(channel, filter..., spatial_out..., [input])`, so each
/// `(channel, filter offset)` slice is a contiguous `positions x K` block.
pub fn extract_patches(x: &Tensor, map: &PatchMap) -> Result<Tensor> {
    let cfg = map.config();
    let s = cfg.spatial_in.len();
    let axes = x.axes();
    let has_input = axes.len() == s + 2;
    if axes.len() != s + 1 && !has_input {
        return Err(Error::shape(format!(
            "expected (channel, {s} spatial[, input]) axes, got shape {:?}",
            x.shape()
        )));
    }
    let spatial: Vec<usize> = axes[1..=s].iter().map(|a| a.extent).collect();
    if spatial != cfg.spatial_in {
        return Err(Error::shape(format!(
            "input spatial extents {:?} do not match layer input {:?}",
            spatial, cfg.spatial_in
        )));
    }
    let channels = axes[0].extent;
    let k = if has_input { axes[s + 1].extent } else { 1 };

    let block_in = map.n_in() * k;
    let block_out = map.n_filter() * map.n_out() * k;
    let mut out = vec![0.0; channels * block_out];
    for (c, dst) in out.chunks_exact_mut(block_out).enumerate() {
        map.gather(&x.data()[c * block_in..(c + 1) * block_in], k, dst);
    }

    let mut out_axes = vec![Axis::new(AxisRole::Channel, channels)];
    out_axes.extend(cfg.filter.iter().map(|&g| Axis::new(AxisRole::Filter, g)));
    out_axes.extend(cfg.spatial_out.iter().map(|&p| Axis::new(AxisRole::Spatial, p)));
    if has_input {
        out_axes.push(Axis::new(AxisRole::Input, k));
    }
    Tensor::new(out_axes, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{bias_product, square_product};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn channel_field(c: usize, spatial: &[usize], k: Option<usize>, data: Vec<f64>) -> Tensor {
        let mut axes = vec![Axis::new(AxisRole::Channel, c)];
        axes.extend(spatial.iter().map(|&p| Axis::new(AxisRole::Spatial, p)));
        if let Some(k) = k {
            axes.push(Axis::new(AxisRole::Input, k));
        }
        Tensor::new(axes, data).unwrap()
    }

    #[test]
    fn output_size_and_rejections() {
        let cfg = ConvLayerConfig::new(vec![5, 7], vec![3, 2], vec![2, 1], vec![1, 0]).unwrap();
        assert_eq!(cfg.spatial_out(), &[3, 6]);
        assert!(ConvLayerConfig::new(vec![2], vec![5], vec![1], vec![1]).is_err());
        assert!(ConvLayerConfig::new(vec![4], vec![3], vec![0], vec![0]).is_err());
        assert!(ConvLayerConfig::new(vec![4], vec![3, 1], vec![1], vec![0]).is_err());
        assert!(ConvLayerConfig::with_output(vec![4], vec![3], vec![3], vec![1], vec![1]).is_err());
        assert!(ConvLayerConfig::with_output(vec![4], vec![4], vec![3], vec![1], vec![1]).is_ok());
    }

    #[test]
    fn padded_three_tap_patches() {
        let cfg = ConvLayerConfig::new(vec![3], vec![3], vec![1], vec![1]).unwrap();
        let x = channel_field(1, &[3], None, vec![1.0, 2.0, 3.0]);
        let patches = extract_patches(&x, &cfg.patch_map()).unwrap();
        assert_eq!(patches.shape(), vec![1, 3, 3]);
        // rearrange [g][p] into per-position patches
        let d = patches.data();
        let per_position: Vec<Vec<f64>> = (0..3).map(|p| (0..3).map(|g| d[g * 3 + p]).collect()).collect();
        assert_eq!(per_position, vec![vec![0., 1., 2.], vec![1., 2., 3.], vec![2., 3., 0.]]);
    }

    #[test]
    fn full_filter_gives_single_patch() {
        let cfg = ConvLayerConfig::new(vec![2, 3], vec![2, 3], vec![1, 1], vec![0, 0]).unwrap();
        assert_eq!(cfg.n_out(), 1);
        let data: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let x = channel_field(2, &[2, 3], None, data.clone());
        let patches = extract_patches(&x, &cfg.patch_map()).unwrap();
        assert_eq!(patches.shape(), vec![2, 2, 3, 1, 1]);
        assert_eq!(patches.data(), &data[..]);
    }

    #[test]
    fn zero_input_gives_zero_patches() {
        let cfg = ConvLayerConfig::new(vec![4, 4], vec![3, 3], vec![2, 1], vec![1, 1]).unwrap();
        let x = channel_field(3, &[4, 4], Some(2), vec![0.0; 96]);
        let patches = extract_patches(&x, &cfg.patch_map()).unwrap();
        assert!(patches.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_mismatched_input() {
        let cfg = ConvLayerConfig::new(vec![4], vec![3], vec![1], vec![1]).unwrap();
        let x = channel_field(1, &[5], None, vec![0.0; 5]);
        assert!(extract_patches(&x, &cfg.patch_map()).is_err());
    }

    proptest! {
        #[test]
        fn out_of_bounds_slots_read_zero(p in 1usize..7, g in 1usize..5, stride in 1usize..3, pad in 0usize..3, seed in any::<u64>()) {
            prop_assume!(g <= p + 2 * pad);
            let cfg = ConvLayerConfig::new(vec![p], vec![g], vec![stride], vec![pad]).unwrap();
            let map = cfg.patch_map();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let k = 2;
            let data: Vec<f64> = (0..2 * p * k).map(|_| rng.random_range(1.0..2.0)).collect();
            let x = channel_field(2, &[p], Some(k), data);
            let patches = extract_patches(&x, &map).unwrap();
            let n_out = cfg.n_out();
            let mut oob_sum = 0.0;
            for c in 0..2 {
                for gi in 0..g {
                    for po in 0..n_out {
                        let i = (po * stride + gi) as isize - pad as isize;
                        let oob = i < 0 || i >= p as isize;
                        prop_assert_eq!(map.source(po, gi).is_none(), oob);
                        for kk in 0..k {
                            let v = patches.data()[((c * g + gi) * n_out + po) * k + kk];
                            if oob { oob_sum += v.abs(); } else { prop_assert!(v >= 1.0); }
                        }
                    }
                }
            }
            prop_assert_eq!(oob_sum, 0.0);
        }
    }

    // y[c', p, k] = sum_{c, g} W[c', c, g] x[c, p*stride + g - pad, k] + b[c'] with explicit loops
    #[allow(clippy::too_many_arguments)]
    fn direct_conv_2d(
        x: &[f64], c_in: usize, dims: [usize; 2], k: usize,
        w: &[f64], c_out: usize, filt: [usize; 2], stride: [usize; 2], pad: [usize; 2],
        b: &[f64], out_dims: [usize; 2],
    ) -> Vec<f64> {
        let mut y = vec![0.0; c_out * out_dims[0] * out_dims[1] * k];
        for co in 0..c_out {
            for p0 in 0..out_dims[0] {
                for p1 in 0..out_dims[1] {
                    for kk in 0..k {
                        let mut acc = b[co];
                        for ci in 0..c_in {
                            for g0 in 0..filt[0] {
                                for g1 in 0..filt[1] {
                                    let i0 = (p0 * stride[0] + g0) as isize - pad[0] as isize;
                                    let i1 = (p1 * stride[1] + g1) as isize - pad[1] as isize;
                                    if i0 < 0 || i1 < 0 || i0 >= dims[0] as isize || i1 >= dims[1] as isize {
                                        continue;
                                    }
                                    let xv = x[((ci * dims[0] + i0 as usize) * dims[1] + i1 as usize) * k + kk];
                                    let wv = w[((co * c_in + ci) * filt[0] + g0) * filt[1] + g1];
                                    acc += wv * xv;
                                }
                            }
                        }
                        y[((co * out_dims[0] + p0) * out_dims[1] + p1) * k + kk] = acc;
                    }
                }
            }
        }
        y
    }

    fn shallow_conv_via_operators(x: &Tensor, map: &PatchMap, w: &[f64], c_out: usize, b: &[f64]) -> Vec<f64> {
        let patches = extract_patches(x, map).unwrap();
        let c_in = x.axes()[0].extent;
        let s = map.config().spatial_in().len();
        let contracted: Vec<usize> = (0..=s).collect();
        let mut filt_shape = vec![c_in];
        filt_shape.extend_from_slice(map.config().filter());
        let block = c_in * map.n_filter();
        let k = x.extents_of(AxisRole::Input).first().copied().unwrap_or(1);
        let ones = Tensor::full(vec![Axis::new(AxisRole::Other, map.n_out() * k)], 1.0).unwrap();
        let mut y = Vec::new();
        for co in 0..c_out {
            let wc = Tensor::from_shape(&filt_shape, w[co * block..(co + 1) * block].to_vec()).unwrap();
            let conv = square_product(&patches, &wc, &contracted).unwrap();
            let bias = bias_product(&Tensor::vector(vec![b[co]]).unwrap(), &ones);
            y.extend(conv.data().iter().zip(bias.data()).map(|(a, c)| a + c));
        }
        y
    }

    #[test]
    fn shallow_convolution_matches_direct_loops() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for case in 0..12 {
            let two_d = case % 2 == 0;
            let dims = if two_d { [rng.random_range(2..6), rng.random_range(2..6)] } else { [1, rng.random_range(2..8)] };
            let filt = if two_d { [rng.random_range(1..=dims[0].min(3)), rng.random_range(1..=3)] } else { [1, rng.random_range(1..=3)] };
            let stride = [rng.random_range(1..3), rng.random_range(1..3)];
            let pad = if two_d { [rng.random_range(0..2), rng.random_range(0..2)] } else { [0, rng.random_range(0..2)] };
            let (c_in, c_out, k) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
            let x: Vec<f64> = (0..c_in * dims[0] * dims[1] * k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let w: Vec<f64> = (0..c_out * c_in * filt[0] * filt[1]).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..c_out).map(|_| rng.random_range(-2.0..2.0)).collect();

            let (cfg, xt) = if two_d {
                (
                    ConvLayerConfig::new(dims.to_vec(), filt.to_vec(), stride.to_vec(), pad.to_vec()).unwrap(),
                    channel_field(c_in, &dims, Some(k), x.clone()),
                )
            } else {
                (
                    ConvLayerConfig::new(vec![dims[1]], vec![filt[1]], vec![stride[1]], vec![pad[1]]).unwrap(),
                    channel_field(c_in, &[dims[1]], Some(k), x.clone()),
                )
            };
            let out_dims = if two_d {
                [cfg.spatial_out()[0], cfg.spatial_out()[1]]
            } else {
                [1, cfg.spatial_out()[0]]
            };
            let expected = direct_conv_2d(&x, c_in, dims, k, &w, c_out, filt, stride, pad, &b, out_dims);
            let got = shallow_conv_via_operators(&xt, &cfg.patch_map(), &w, c_out, &b);
            assert_eq!(got.len(), expected.len());
            for (g, e) in got.iter().zip(&expected) {
                assert!((g - e).abs() < 1e-12, "case {case}: {g} vs {e}");
            }
        }
    }
}
