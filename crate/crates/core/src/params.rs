//! Trainable tensors with their gradient and Adam moment buffers.

use ndarray::Array2;

use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    pub first_moment: Array2<f64>,
    pub second_moment: Array2<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, value: Array2<f64>) -> Self {
        let zeros = Array2::zeros(value.raw_dim());
        Self {
            name: name.into(),
            grad: zeros.clone(),
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }
}

/// Index of a tensor inside a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Slot(pub(crate) usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    tensors: Vec<Tensor>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Array2<f64>) -> Slot {
        self.tensors.push(Tensor::new(name, value));
        Slot(self.tensors.len() - 1)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, slot: Slot) -> &Tensor {
        &self.tensors[slot.0]
    }

    pub fn get_mut(&mut self, slot: Slot) -> &mut Tensor {
        &mut self.tensors[slot.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.fill(0.0);
        }
    }

    /// Values of every tensor, in store order, flattened row-major.
    pub fn flat_values(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.value.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.grad.iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::shape("flat parameters", self.num_scalars(), flat.len()));
        }
        let mut it = flat.iter();
        for t in &mut self.tensors {
            for v in t.value.iter_mut() {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Copies values (not optimizer state) from `other`, matching by name.
    pub fn load_values(&mut self, other: &[(String, Array2<f64>)]) -> Result<()> {
        for t in &mut self.tensors {
            let (_, value) = other
                .iter()
                .find(|(name, _)| *name == t.name)
                .ok_or_else(|| Error::ParamFile(format!("missing tensor `{}`", t.name)))?;
            if value.dim() != t.value.dim() {
                return Err(Error::shape("parameter load", format!("{:?}", t.value.dim()), format!("{:?}", value.dim())));
            }
            t.value.assign(value);
        }
        Ok(())
    }

    pub fn named_values(&self) -> Vec<(String, Array2<f64>)> {
        self.tensors.iter().map(|t| (t.name.clone(), t.value.clone())).collect()
    }

    /// One Adam update with bias correction; gradients are cleared after.
    /// A non-finite gradient aborts before any tensor is touched.
    pub fn adam_step(&mut self, learning_rate: f64) -> Result<()> {
        for t in &self.tensors {
            let bad = t.grad.iter().filter(|g| !g.is_finite()).count();
            if bad > 0 {
                return Err(Error::NonFiniteGradient {
                    name: t.name.clone(),
                    count: bad,
                    step: self.step,
                });
            }
        }
        self.step += 1;
        let t_step = self.step as i32;
        let correction1 = 1.0 - ADAM_BETA1.powi(t_step);
        let correction2 = 1.0 - ADAM_BETA2.powi(t_step);
        for t in &mut self.tensors {
            ndarray::Zip::from(&mut t.value)
                .and(&mut t.grad)
                .and(&mut t.first_moment)
                .and(&mut t.second_moment)
                .for_each(|p, g, m, v| {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * *g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * *g * *g;
                    let m_hat = *m / correction1;
                    let v_hat = *v / correction2;
                    *p -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
                    *g = 0.0;
                });
        }
        Ok(())
    }
}
