//! Dense real tensors with named axis roles and the three contractions used
//! to write the network: the Frobenius product, the square product and the
//! bias (outer) product.
//!
//! Data is stored row-major over the declared axes.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AxisRole {
    Channel,
    Spatial,
    /// Filter offset inside a patch.
    Filter,
    /// Index over the `K` jointly evaluated inputs.
    Input,
    Other,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Axis {
    pub role: AxisRole,
    pub extent: usize,
}

impl Axis {
    pub fn new(role: AxisRole, extent: usize) -> Self {
        Axis { role, extent }
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    axes: Vec<Axis>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("data", &self.data)
            .finish()
    }
}

fn element_count(axes: &[Axis]) -> usize {
    axes.iter().map(|a| a.extent).product()
}

impl Tensor {
    pub fn new(axes: Vec<Axis>, data: Vec<f64>) -> Result<Self> {
        if let Some(a) = axes.iter().find(|a| a.extent == 0) {
            return Err(Error::shape(format!("axis {:?} has zero extent", a.role)));
        }
        let n = element_count(&axes);
        if data.len() != n {
            return Err(Error::shape(format!(
                "data length {} does not match shape product {}",
                data.len(),
                n
            )));
        }
        Ok(Tensor { axes, data })
    }

    pub fn full(axes: Vec<Axis>, value: f64) -> Result<Self> {
        let n = element_count(&axes);
        Tensor::new(axes, vec![value; n])
    }

    pub fn zeros(axes: Vec<Axis>) -> Result<Self> {
        Tensor::full(axes, 0.0)
    }

    /// Tensor with `Other` roles on every axis.
    pub fn from_shape(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let axes = shape.iter().map(|&e| Axis::new(AxisRole::Other, e)).collect();
        Tensor::new(axes, data)
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::from_shape(&[n], data)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.extent).collect()
    }

    pub fn rank(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Extents of the axes carrying `role`, in order.
    pub fn extents_of(&self, role: AxisRole) -> Vec<usize> {
        self.axes.iter().filter(|a| a.role == role).map(|a| a.extent).collect()
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.axes.len()];
        for i in (0..self.axes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.axes[i + 1].extent;
        }
        strides
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        if index.len() != self.rank() {
            return Err(Error::shape(format!(
                "index of rank {} into tensor of rank {}",
                index.len(),
                self.rank()
            )));
        }
        let mut flat = 0;
        for ((&i, axis), stride) in index.iter().zip(&self.axes).zip(self.strides()) {
            if i >= axis.extent {
                return Err(Error::shape(format!("index {i} out of range {}", axis.extent)));
            }
            flat += i * stride;
        }
        Ok(self.data[flat])
    }

    /// Same data under a new axis declaration with the same element count.
    pub fn reshape(self, axes: Vec<Axis>) -> Result<Self> {
        Tensor::new(axes, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            axes: self.axes.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `A_(d,:)`: the sub-tensor at position `d` of the leading axis.
    pub fn slice_leading(&self, d: usize) -> Result<Tensor> {
        let first = self
            .axes
            .first()
            .ok_or_else(|| Error::shape("cannot slice a rank-0 tensor"))?;
        if d >= first.extent {
            return Err(Error::shape(format!("slice {d} out of range {}", first.extent)));
        }
        let rest = self.axes[1..].to_vec();
        let n = element_count(&rest);
        Ok(Tensor {
            axes: rest,
            data: self.data[d * n..(d + 1) * n].to_vec(),
        })
    }

    fn same_shape(&self, other: &Tensor) -> bool {
        self.axes.len() == other.axes.len()
            && self.axes.iter().zip(&other.axes).all(|(a, b)| a.extent == b.extent)
    }
}

/// Frobenius product: the sum of entrywise products of two same-shape tensors.
pub fn frobenius(a: &Tensor, b: &Tensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::shape(format!(
            "frobenius of shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum())
}

/// Square product: contracts the axes of `a` listed in `contracted` against
/// all of `b` (whose shape must equal the contracted extents, in order).
/// The free axes of `a` form the output, in their original order.
///
/// With one free and one contracted axis this is a matrix-vector product.
pub fn square_product(a: &Tensor, b: &Tensor, contracted: &[usize]) -> Result<Tensor> {
    let rank = a.rank();
    let mut is_contracted = vec![false; rank];
    for &ax in contracted {
        if ax >= rank || is_contracted[ax] {
            return Err(Error::shape(format!("bad contracted axis list {contracted:?}")));
        }
        is_contracted[ax] = true;
    }
    let expected: Vec<usize> = contracted.iter().map(|&ax| a.axes[ax].extent).collect();
    if expected != b.shape() {
        return Err(Error::shape(format!(
            "contracted extents {:?} do not match right operand {:?}",
            expected,
            b.shape()
        )));
    }

    let free: Vec<usize> = (0..rank).filter(|&ax| !is_contracted[ax]).collect();
    let out_axes: Vec<Axis> = free.iter().map(|&ax| a.axes[ax]).collect();
    let n_out = element_count(&out_axes);
    let n_in = b.len();
    let mut out = vec![0.0; n_out];

    let m = contracted.len();
    if contracted.iter().enumerate().all(|(i, &ax)| ax == i) {
        // leading block: a is laid out as [n_in][n_out]
        for (i, &w) in b.data.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let row = &a.data[i * n_out..(i + 1) * n_out];
            for (o, &v) in out.iter_mut().zip(row) {
                *o += w * v;
            }
        }
    } else if contracted.iter().enumerate().all(|(i, &ax)| ax == rank - m + i) {
        // trailing block: a is laid out as [n_out][n_in]
        for (j, o) in out.iter_mut().enumerate() {
            *o = a.data[j * n_in..(j + 1) * n_in]
                .iter()
                .zip(&b.data)
                .map(|(x, y)| x * y)
                .sum();
        }
    } else {
        let strides = a.strides();
        let mut b_strides = vec![1; m];
        for i in (0..m.saturating_sub(1)).rev() {
            b_strides[i] = b_strides[i + 1] * expected[i + 1];
        }
        let mut index = vec![0usize; rank];
        for (flat, &v) in a.data.iter().enumerate() {
            let mut rem = flat;
            for ax in 0..rank {
                index[ax] = rem / strides[ax];
                rem %= strides[ax];
            }
            let mut o = 0;
            for &ax in &free {
                o = o * a.axes[ax].extent + index[ax];
            }
            let bi: usize = contracted.iter().zip(&b_strides).map(|(&ax, s)| index[ax] * s).sum();
            out[o] += v * b.data[bi];
        }
    }

    Tensor::new(out_axes, out)
}

/// Bias product: the outer product, with output axes `axes(a) ++ axes(b)`.
pub fn bias_product(a: &Tensor, b: &Tensor) -> Tensor {
    let mut axes = a.axes.clone();
    axes.extend_from_slice(&b.axes);
    let mut data = Vec::with_capacity(a.len() * b.len());
    for &x in &a.data {
        data.extend(b.data.iter().map(|&y| x * y));
    }
    Tensor { axes, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_shape(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::from_shape(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_shape(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn frobenius_examples() {
        let ones = Tensor::from_shape(&[2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(frobenius(&ones, &ones).unwrap(), 6.0);
        let a = t(&[2, 3], &[1.5, -2.0, 3.0, 0.1, 7.0, -9.0]);
        let zero = Tensor::from_shape(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(frobenius(&a, &zero).unwrap(), 0.0);
        assert_eq!(frobenius(&t(&[3], &[1., 2., 3.]), &t(&[3], &[4., 5., 6.])).unwrap(), 32.0);
        assert!(frobenius(&a, &t(&[3, 2], &[0.0; 6])).is_err());
    }

    #[test]
    fn square_product_examples() {
        let id = t(&[2, 2], &[1., 0., 0., 1.]);
        let x = t(&[2], &[0.3, -1.7]);
        assert_eq!(square_product(&id, &x, &[1]).unwrap().data(), &[0.3, -1.7]);

        let ones = Tensor::from_shape(&[3, 2], vec![1.0; 6]).unwrap();
        let out = square_product(&ones, &t(&[2], &[1., 1.]), &[1]).unwrap();
        assert_eq!(out.data(), &[2., 2., 2.]);

        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let out = square_product(&a, &t(&[2], &[5., 6.]), &[1]).unwrap();
        assert_eq!(out.data(), &[17., 39.]);
        assert_eq!(out.shape(), vec![2]);

        assert!(square_product(&a, &t(&[3], &[1., 1., 1.]), &[1]).is_err());
        assert!(square_product(&a, &t(&[2], &[1., 1.]), &[2]).is_err());
        assert!(square_product(&a, &t(&[2, 2], &[1.; 4]), &[1, 1]).is_err());
    }

    #[test]
    fn bias_product_examples() {
        let c = t(&[1], &[2.5]);
        let ones = Tensor::from_shape(&[3, 2], vec![1.0; 6]).unwrap();
        let out = bias_product(&c, &ones);
        assert_eq!(out.shape(), vec![1, 3, 2]);
        assert!(out.data().iter().all(|&v| v == 2.5));

        let out = bias_product(&t(&[2], &[1., 2.]), &t(&[1], &[3.]));
        assert_eq!(out.shape(), vec![2, 1]);
        assert_eq!(out.data(), &[3., 6.]);

        let out = bias_product(&t(&[2], &[0., 0.]), &t(&[2], &[4., -1.]));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn slice_leading_takes_a_row() {
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(a.slice_leading(1).unwrap().data(), &[4., 5., 6.]);
        assert!(a.slice_leading(2).is_err());
    }

    // naive triple loop over (free, contracted) index pairs
    fn naive_contract(a: &Tensor, b: &Tensor, contracted: &[usize]) -> Vec<f64> {
        let shape = a.shape();
        let free: Vec<usize> = (0..shape.len()).filter(|ax| !contracted.contains(ax)).collect();
        let n_out: usize = free.iter().map(|&ax| shape[ax]).product();
        let mut out = vec![0.0; n_out];
        let total: usize = shape.iter().product();
        for flat in 0..total {
            let mut idx = vec![0; shape.len()];
            let mut rem = flat;
            for ax in (0..shape.len()).rev() {
                idx[ax] = rem % shape[ax];
                rem /= shape[ax];
            }
            let mut o = 0;
            for &ax in &free {
                o = o * shape[ax] + idx[ax];
            }
            let mut bi = 0;
            for &ax in contracted {
                bi = bi * shape[ax] + idx[ax];
            }
            out[o] += a.data()[flat] * b.data()[bi];
        }
        out
    }

    proptest! {
        #[test]
        fn frobenius_commutes(v in prop::collection::vec(-10.0..10.0f64, 12), w in prop::collection::vec(-10.0..10.0f64, 12)) {
            let a = t(&[3, 4], &v);
            let b = t(&[3, 4], &w);
            prop_assert_eq!(frobenius(&a, &b).unwrap(), frobenius(&b, &a).unwrap());
        }

        #[test]
        fn matrix_vector_matches_double_loop(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut expected = vec![0.0; rows];
            for i in 0..rows {
                for j in 0..cols {
                    expected[i] += a[i * cols + j] * x[j];
                }
            }
            let out = square_product(&t(&[rows, cols], &a), &t(&[cols], &x), &[1]).unwrap();
            prop_assert_eq!(out.data(), &expected[..]);
        }

        #[test]
        fn general_contraction_matches_naive(seed in any::<u64>(), which in 0usize..4) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let shape = [2usize, 3, 2, 3];
            let a: Vec<f64> = (0..36).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = t(&shape, &a);
            let contracted: &[usize] = [&[0usize, 1][..], &[2, 3], &[1, 3], &[0, 2]][which];
            let b_shape: Vec<usize> = contracted.iter().map(|&ax| shape[ax]).collect();
            let n: usize = b_shape.iter().product();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = Tensor::from_shape(&b_shape, b).unwrap();
            let out = square_product(&a, &b, contracted).unwrap();
            let expected = naive_contract(&a, &b, contracted);
            for (x, y) in out.data().iter().zip(&expected) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
