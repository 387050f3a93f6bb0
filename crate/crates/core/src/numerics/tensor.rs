use crate::{Error, Real, Result};

/// Dense row-major tensor. `grad` is populated by [`super::Tape::backward`]
/// for leaves created with `requires_grad`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<Real>,
    pub requires_grad: bool,
    pub grad: Option<Vec<Real>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<Real>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                values.len()
            )));
        }
        Ok(Tensor { shape, values, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, values: vec![0.0; numel], requires_grad: false, grad: None }
    }

    pub fn scalar(v: Real) -> Self {
        Tensor { shape: vec![], values: vec![v], requires_grad: false, grad: None }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<Real>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Row count under the 2-d view: scalars and 1-d vectors are one row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Column count under the 2-d view: a 1-d vector is a row vector.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    pub fn row(&self, i: usize) -> &[Real] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    /// Zero the gradient buffer (allocating it if absent).
    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            None => self.grad = Some(vec![0.0; self.values.len()]),
        }
    }
}
