//! Layers shared by the encoder and the scorers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{dropout_mask, init_glorot, DiffError, Graph, NodeId, ParamId, ParameterRegistry, Tensor};

/// Training draws dropout masks from the run generator; evaluation is the
/// identity.
pub enum Phase<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

impl Phase<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Phase::Train(_))
    }

    /// A fresh inverted-dropout mask, or `None` at evaluation time or when
    /// `rate` is zero.
    pub fn mask(&mut self, len: usize, rate: f64) -> Result<Option<Vec<f64>>, DiffError> {
        match self {
            Phase::Train(rng) if rate > 0.0 => dropout_mask(len, rate, *rng).map(Some),
            _ => Ok(None),
        }
    }

    pub fn dropout(&mut self, g: &mut Graph<'_>, x: NodeId, rate: f64) -> Result<NodeId, DiffError> {
        let len = g.value(x).len();
        match self.mask(len, rate)? {
            Some(mask) => g.dropout(x, mask),
            None => Ok(x),
        }
    }

    pub fn rng(&mut self) -> Option<&mut ChaCha8Rng> {
        match self {
            Phase::Train(rng) => Some(rng),
            Phase::Eval => None,
        }
    }
}

/// Rectified-linear feed-forward network followed by a dot product with an
/// output vector, giving a scalar score.
#[derive(Clone, Debug)]
pub struct Ffnn {
    pub layers: Vec<(ParamId, ParamId)>,
    pub output: ParamId,
}

impl Ffnn {
    pub fn register<R: Rng + ?Sized>(
        reg: &mut ParameterRegistry,
        name: &str,
        input_dim: usize,
        depth: usize,
        size: usize,
        rng: &mut R,
    ) -> Result<Self, DiffError> {
        let mut layers = Vec::with_capacity(depth);
        let mut dim = input_dim;
        for k in 0..depth {
            let w = reg.add(format!("{name}/hidden{k}/w"), init_glorot(size, dim, rng))?;
            let b = reg.add(format!("{name}/hidden{k}/b"), Tensor::zeros(vec![size]))?;
            layers.push((w, b));
            dim = size;
        }
        let out = init_glorot(1, dim, rng).into_data();
        let output = reg.add(format!("{name}/output"), Tensor::vector(out))?;
        Ok(Ffnn { layers, output })
    }

    pub fn hidden(&self, g: &mut Graph<'_>, x: NodeId, phase: &mut Phase<'_>, dropout: f64) -> Result<NodeId, DiffError> {
        let mut h = x;
        for &(w, b) in &self.layers {
            let (wn, bn) = (g.param(w), g.param(b));
            let a = g.affine(wn, h, bn)?;
            let r = g.relu(a)?;
            h = phase.dropout(g, r, dropout)?;
        }
        Ok(h)
    }

    pub fn score(&self, g: &mut Graph<'_>, x: NodeId, phase: &mut Phase<'_>, dropout: f64) -> Result<NodeId, DiffError> {
        let h = self.hidden(g, x, phase, dropout)?;
        let w = g.param(self.output);
        g.dot(w, h)
    }
}
