//! Flat parameter storage with a named tensor layout.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::handles::sha256_hex;
use crate::real::Real;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements into the flat buffer.
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl ParamLayout {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> usize {
        let spec = TensorSpec {
            name: name.into(),
            shape,
            offset: self.total,
        };
        self.total += spec.len();
        self.tensors.push(spec);
        self.tensors.len() - 1
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, idx: usize) -> &TensorSpec {
        &self.tensors[idx]
    }

    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// A layout plus its values. Gradients share the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBuffer<S = f32> {
    layout: Arc<ParamLayout>,
    data: Vec<S>,
}

impl<S: Real> ParamBuffer<S> {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let data = vec![S::zero(); layout.total()];
        Self { layout, data }
    }

    pub fn from_vec(layout: Arc<ParamLayout>, data: Vec<S>) -> Result<Self> {
        if data.len() != layout.total() {
            return Err(invalid(format!(
                "parameter buffer has {} values, layout expects {}",
                data.len(),
                layout.total()
            )));
        }
        Ok(Self { layout, data })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn tensor(&self, idx: usize) -> &[S] {
        &self.data[self.layout.get(idx).range()]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut [S] {
        let r = self.layout.get(idx).range();
        &mut self.data[r]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn cast<T: Real>(&self) -> ParamBuffer<T> {
        ParamBuffer {
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| v.cast()).collect(),
        }
    }

    pub fn map<T: Real>(&self, f: impl Fn(S) -> T) -> ParamBuffer<T> {
        ParamBuffer {
            layout: self.layout.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, k: S) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// SHA-256 over the little-endian `f32` encoding of every value.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
        sha256_hex(&bytes)
    }
}

/// Dense layer view into a parameter buffer: `y = W x + b`, `W` is `out x in`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearIdx {
    pub weight: usize,
    pub bias: usize,
    pub input: usize,
    pub output: usize,
}

impl LinearIdx {
    pub fn register(layout: &mut ParamLayout, name: &str, input: usize, output: usize) -> Self {
        let weight = layout.push(format!("{name}.weight"), vec![output, input]);
        let bias = layout.push(format!("{name}.bias"), vec![output]);
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward<S: Real>(&self, p: &ParamBuffer<S>, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.input);
        let w = p.tensor(self.weight);
        let b = p.tensor(self.bias);
        w.chunks_exact(self.input)
            .zip(b)
            .map(|(row, &bias)| {
                row.iter()
                    .zip(x)
                    .fold(bias, |acc, (&wv, &xv)| acc + wv * xv)
            })
            .collect()
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward<S: Real>(
        &self,
        p: &ParamBuffer<S>,
        x: &[S],
        g_out: &[S],
        grads: &mut ParamBuffer<S>,
    ) -> Vec<S> {
        {
            let gw = grads.tensor_mut(self.weight);
            for (row, &g) in gw.chunks_exact_mut(self.input).zip(g_out) {
                if g == S::zero() {
                    continue;
                }
                for (o, &xv) in row.iter_mut().zip(x) {
                    *o += g * xv;
                }
            }
        }
        {
            let gb = grads.tensor_mut(self.bias);
            for (o, &g) in gb.iter_mut().zip(g_out) {
                *o += g;
            }
        }
        let w = p.tensor(self.weight);
        let mut gx = vec![S::zero(); self.input];
        for (row, &g) in w.chunks_exact(self.input).zip(g_out) {
            if g == S::zero() {
                continue;
            }
            for (o, &wv) in gx.iter_mut().zip(row) {
                *o += g * wv;
            }
        }
        gx
    }
}
