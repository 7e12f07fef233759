//! Fully connected network over a flat parameter slice.
//!
//! Layer `l` occupies `out × in` weights (column-major) followed by `out`
//! biases. Hidden layers use a rectifier; the output layer is linear.
//! Batches are matrices with one sample per column.

use nalgebra::{DMatrix, DMatrixView, DVectorView};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LearnError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    sizes: Vec<usize>,
}

/// Layer inputs recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<DMatrix<f64>>,
    pub output: DMatrix<f64>,
}

impl MlpShape {
    pub fn new(sizes: Vec<usize>) -> Result<Self, LearnError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(LearnError::InvalidConfig(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Self { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.sizes.windows(2).map(move |w| {
            let o = off;
            off += w[1] * w[0] + w[1];
            (o, w[0], w[1])
        })
    }

    /// Glorot-uniform weights, zero biases; the last layer is scaled by
    /// `last_scale`.
    pub fn init(&self, rng: &mut impl Rng, last_scale: f64) -> Vec<f64> {
        let n = self.sizes.len() - 1;
        let mut p = Vec::with_capacity(self.param_count());
        for (l, (_, fan_in, fan_out)) in self.layers().enumerate() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let scale = if l + 1 == n { last_scale } else { 1.0 };
            p.extend((0..fan_in * fan_out).map(|_| scale * rng.gen_range(-bound..=bound)));
            p.extend(std::iter::repeat(0.0).take(fan_out));
        }
        p
    }

    pub fn forward(&self, params: &[f64], x: DMatrix<f64>) -> Result<Tape, LearnError> {
        self.check(params, x.nrows())?;
        let n = self.sizes.len() - 1;
        let mut inputs = Vec::with_capacity(n);
        let mut a = x;
        for (l, (off, fin, fout)) in self.layers().enumerate() {
            let w = DMatrixView::from_slice(&params[off..off + fin * fout], fout, fin);
            let b = DVectorView::from_slice(&params[off + fin * fout..off + fin * fout + fout], fout);
            let mut z = w * &a;
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if l + 1 < n {
                z.apply(|v| *v = v.max(0.0));
            }
            inputs.push(a);
            a = z;
        }
        Ok(Tape { inputs, output: a })
    }

    /// Accumulates parameter gradients into `grad` and returns the
    /// gradient with respect to the network input.
    pub fn backward(&self, params: &[f64], tape: &Tape, dout: DMatrix<f64>, grad: &mut [f64]) -> DMatrix<f64> {
        let layers: Vec<_> = self.layers().collect();
        let n = layers.len();
        let mut delta = dout;
        for l in (0..n).rev() {
            let (off, fin, fout) = layers[l];
            if l + 1 < n {
                // rectifier mask from this layer's output, i.e. the next layer's input
                delta.zip_apply(&tape.inputs[l + 1], |d, a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            let a = &tape.inputs[l];
            let gw = &delta * a.transpose();
            for (g, v) in grad[off..off + fin * fout].iter_mut().zip(gw.as_slice()) {
                *g += v;
            }
            for (r, g) in grad[off + fin * fout..off + fin * fout + fout].iter_mut().enumerate() {
                *g += delta.row(r).sum();
            }
            let w = DMatrixView::from_slice(&params[off..off + fin * fout], fout, fin);
            delta = w.transpose() * delta;
        }
        delta
    }

    fn check(&self, params: &[f64], rows: usize) -> Result<(), LearnError> {
        if params.len() != self.param_count() {
            return Err(LearnError::DimensionMismatch {
                what: "parameters",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        if rows != self.input_dim() {
            return Err(LearnError::DimensionMismatch {
                what: "network input",
                expected: self.input_dim(),
                got: rows,
            });
        }
        Ok(())
    }
}

/// A network together with its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub shape: MlpShape,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn new(shape: MlpShape, rng: &mut impl Rng) -> Self {
        let params = shape.init(rng, 1.0);
        Self { shape, params }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, LearnError> {
        let tape = self.shape.forward(&self.params, DMatrix::from_column_slice(x.len(), 1, x))?;
        Ok(tape.output.as_slice().to_vec())
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if self.params.len() != self.shape.param_count() {
            return Err(LearnError::DimensionMismatch {
                what: "parameters",
                expected: self.shape.param_count(),
                got: self.params.len(),
            });
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(LearnError::InvalidConfig("non-finite weights".into()));
        }
        Ok(())
    }
}
