//! Flat parameter storage with a stable name/shape layout.
//!
//! Keeping every learnable tensor in one contiguous vector makes the SGD
//! update, gradient reduction, finite-difference checks and checkpoint I/O
//! all trivial slices over the same layout.

use serde::{Deserialize, Serialize};

use crate::num::Real;

/// Name, shape and position of one tensor inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All learnable weights and biases of a detector, tagged by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    pub data: Vec<T>,
    pub layout: Vec<ParamSpec>,
}

impl<T: Real> ParameterSet<T> {
    pub fn zeros(layout: Vec<ParamSpec>) -> Self {
        let len = layout.iter().map(|s| s.offset + s.len()).max().unwrap_or(0);
        Self { data: vec![T::zero(); len], layout }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<(&ParamSpec, &[T])> {
        let spec = self.layout.iter().find(|s| s.name == name)?;
        Some((spec, &self.data[spec.offset..spec.offset + spec.len()]))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same layout, zeroed data: a gradient/momentum buffer.
    pub fn zeros_like(&self) -> Self {
        Self { data: vec![T::zero(); self.data.len()], layout: self.layout.clone() }
    }

    /// Convert between scalar widths (used when loading f32 checkpoints into
    /// f64 nets and vice versa).
    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        ParameterSet {
            data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
            layout: self.layout.clone(),
        }
    }
}
