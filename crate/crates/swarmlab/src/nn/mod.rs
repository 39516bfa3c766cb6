//! Minimal dense neural-network kernel in 64-bit floats.
//!
//! Networks here are tiny (a few hidden layers of at most ~1024 units), and
//! every gradient is written out by hand, so the whole kernel is a flat
//! parameter store plus explicit forward/backward passes — no autodiff graph.
//!
//! All parameters live in a [`ParamSet`]: an ordered list of named matrices.
//! Gradients use the same container ([`GradSet`]) with identical names and
//! shapes; backward passes *accumulate* into it and callers zero it between
//! optimizer steps. The ordered flat view (`flatten` / `copy_from_flat`) is
//! what the optimizer state and checkpoints align against.

mod activation;
mod mlp;
mod optim;

pub use activation::{gelu, gelu_derivative, softplus, softplus_derivative};
pub use mlp::{
    append_mlp, glorot_tensor, init_mlp, matvec_into, mlp_backward, mlp_forward, Activation,
    MlpCache, MlpSpec,
};
pub use optim::AdamState;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A named row-major matrix. Bias vectors are stored as `rows × 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_data(name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if data.len() != rows * cols {
            return Err(Error::argument(format!(
                "tensor `{name}`: expected {rows}x{cols} = {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { name, rows, cols, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `r` as a slice (weights of one output unit).
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Ordered collection of named tensors; the canonical parameter container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ParamSet {
    tensors: Vec<Tensor2>,
}

/// Gradient storage: shape-identical to its paired [`ParamSet`]. Backward
/// passes accumulate, so call [`ParamSet::zero`] between update steps.
pub type GradSet = ParamSet;

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tensor: Tensor2) -> Result<()> {
        if self.index_of(&tensor.name).is_some() {
            return Err(Error::argument(format!(
                "duplicate tensor name `{}`",
                tensor.name
            )));
        }
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn tensors(&self) -> &[Tensor2] {
        &self.tensors
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor2> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::argument(format!("unknown tensor `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor2> {
        self.tensors
            .iter_mut()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::argument(format!("unknown tensor `{name}`")))
    }

    /// Total number of scalars across all tensors.
    pub fn flat_len(&self) -> usize {
        self.tensors.iter().map(Tensor2::len).sum()
    }

    /// Concatenate all tensors, in declaration order, into one vector.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for t in &self.tensors {
            out.extend_from_slice(&t.data);
        }
        out
    }

    /// Overwrite all tensors from a flat vector laid out like [`flatten`](Self::flatten).
    pub fn copy_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(Error::argument(format!(
                "flat view length {} does not match parameter count {}",
                flat.len(),
                self.flat_len()
            )));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let len = t.data.len();
            t.data.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// Same names and shapes, all zeros. This is how gradient sets are made.
    pub fn zeros_like(&self) -> GradSet {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor2::zeros(t.name.clone(), t.rows, t.cols))
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Elementwise `self += scale * other` over matching tensors.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) -> Result<()> {
        self.check_same_shape(other)?;
        for (t, o) in self.tensors.iter_mut().zip(&other.tensors) {
            for (a, b) in t.data.iter_mut().zip(&o.data) {
                *a += scale * b;
            }
        }
        Ok(())
    }

    /// Scale every value in place.
    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn check_same_shape(&self, other: &ParamSet) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::argument(format!(
                "parameter sets differ: {} vs {} tensors",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.name != b.name || a.rows != b.rows || a.cols != b.cols {
                return Err(Error::argument(format!(
                    "tensor mismatch: `{}` {}x{} vs `{}` {}x{}",
                    a.name, a.rows, a.cols, b.name, b.rows, b.cols
                )));
            }
        }
        Ok(())
    }

    /// Error naming the first non-finite tensor, if any.
    pub fn check_finite(&self) -> Result<()> {
        for t in &self.tensors {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "tensor `{}` contains a non-finite value",
                    t.name
                )));
            }
        }
        Ok(())
    }
}

/// Soft target update: `target = tau * online + (1 - tau) * target`, elementwise.
pub fn soft_update(target: &mut ParamSet, online: &ParamSet, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::argument(format!(
            "soft update coefficient tau must be in [0, 1], got {tau}"
        )));
    }
    target.check_same_shape(online)?;
    for (t, o) in target.tensors.iter_mut().zip(online.tensors()) {
        for (a, b) in t.data.iter_mut().zip(&o.data) {
            *a = tau * b + (1.0 - tau) * *a;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_params() -> ParamSet {
        let mut p = ParamSet::new();
        p.push(Tensor2::from_data("a", 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        p.push(Tensor2::from_data("b", 2, 1, vec![-1.0, 0.5]).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn flat_view_roundtrip() {
        let mut p = sample_params();
        let flat = p.flatten();
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5]);
        assert_eq!(flat.len(), p.flat_len());
        let doubled: Vec<f64> = flat.iter().map(|v| v * 2.0).collect();
        p.copy_from_flat(&doubled).unwrap();
        assert_eq!(p.get("b").unwrap().data, vec![-2.0, 1.0]);
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut p = sample_params();
        let err = p.push(Tensor2::zeros("a", 1, 1)).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn soft_update_full_copy_and_noop() {
        let online = sample_params();
        let mut target = online.zeros_like();
        soft_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target, online);

        let mut frozen = online.zeros_like();
        soft_update(&mut frozen, &online, 0.0).unwrap();
        assert_eq!(frozen, online.zeros_like());
    }

    #[test]
    fn soft_update_midpoint() {
        let mut online = sample_params();
        online.copy_from_flat(&vec![2.0; 6]).unwrap();
        let mut target = online.zeros_like();
        soft_update(&mut target, &online, 0.5).unwrap();
        assert_eq!(target.flatten(), vec![1.0; 6]);
    }

    #[test]
    fn soft_update_rejects_bad_tau() {
        let online = sample_params();
        let mut target = online.clone();
        assert!(soft_update(&mut target, &online, -0.1).is_err());
        assert!(soft_update(&mut target, &online, 1.1).is_err());
    }

    proptest! {
        /// Soft update is a convex combination: every element of the updated
        /// target stays between the old target and the online value.
        #[test]
        fn soft_update_stays_in_hull(
            t in proptest::collection::vec(-10.0f64..10.0, 6),
            o in proptest::collection::vec(-10.0f64..10.0, 6),
            tau in 0.0f64..=1.0,
        ) {
            let mut target = sample_params();
            target.copy_from_flat(&t).unwrap();
            let mut online = sample_params();
            online.copy_from_flat(&o).unwrap();
            soft_update(&mut target, &online, tau).unwrap();
            for ((new, old), on) in target.flatten().iter().zip(&t).zip(&o) {
                let lo = old.min(*on) - 1e-12;
                let hi = old.max(*on) + 1e-12;
                prop_assert!(*new >= lo && *new <= hi);
            }
        }
    }
}
