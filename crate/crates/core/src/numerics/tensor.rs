use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Row-major dense tensor of 64-bit reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: Vec<usize>) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "tensor dims must be positive: {dims:?}");
        let n = dims.iter().product();
        Tensor {
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(dims: Vec<usize>, data: Vec<f64>) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "tensor dims must be positive: {dims:?}");
        assert_eq!(dims.iter().product::<usize>(), data.len(), "shape mismatch");
        Tensor { dims, data }
    }

    pub fn gaussian(dims: Vec<usize>, std: f64, rng: &mut impl Rng) -> Self {
        let mut t = Tensor::zeros(dims);
        let normal = Normal::new(0.0, std).expect("finite std");
        for v in &mut t.data {
            *v = normal.sample(rng);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// (rows, cols) of a matrix; a vector is a single column.
    pub fn shape2(&self) -> (usize, usize) {
        match self.dims.as_slice() {
            [r, c] => (*r, *c),
            [n] => (*n, 1),
            d => panic!("expected a matrix, got dims {d:?}"),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, cols) = self.shape2();
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let (_, cols) = self.shape2();
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (_, cols) = self.shape2();
        self.data[r * cols + c]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}
