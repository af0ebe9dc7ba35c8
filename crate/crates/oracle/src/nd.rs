//! Minimal owned 4-D array for the reference loops.

use maisenet_core::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Nd {
    pub dims: [usize; 4],
    pub data: Vec<f64>,
}

impl Nd {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Nd { dims, data: vec![0.0; dims.iter().product()] }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Nd { dims: t.shape().0, data: t.data().to_vec() }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape(self.dims), self.data.clone()).expect("consistent")
    }

    fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cc, hh, ww] = self.dims;
        ((n * cc + c) * hh + h) * ww + w
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.offset(n, c, h, w)]
    }

    /// Zero outside the spatial bounds.
    pub fn get_padded(&self, n: usize, c: usize, h: isize, w: isize) -> f64 {
        if h < 0 || w < 0 || h as usize >= self.dims[2] || w as usize >= self.dims[3] {
            0.0
        } else {
            self.get(n, c, h as usize, w as usize)
        }
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let o = self.offset(n, c, h, w);
        self.data[o] = v;
    }
}
