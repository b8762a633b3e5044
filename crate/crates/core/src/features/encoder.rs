//! Per-point MLP encoders and the projection head, stored as flat parameter
//! vectors.
//!
//! Layer `i` occupies `inputs × outputs` weights (row-major, one row per
//! input unit) followed by `outputs` biases. Hidden layers use ReLU; the
//! final layer is linear and its output rows are L2-normalized.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::context::Contexts;
use crate::autodiff::{normalize_rows, Gradients, Tape, Var};
use crate::error::{Error, Result};

pub const FEATURE_DIM: usize = 32;
pub const HIDDEN_WIDTHS: [usize; 2] = [64, 64];
pub const HEAD_HIDDEN: usize = 32;

const CHECKPOINT_MAGIC: &[u8; 8] = b"BYOCENC1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerShape {
    pub const fn new(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs }
    }

    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Layer shapes of a feature encoder over `input_dim`-dimensional contexts.
pub fn encoder_shapes(input_dim: usize) -> Vec<LayerShape> {
    vec![
        LayerShape::new(input_dim, HIDDEN_WIDTHS[0]),
        LayerShape::new(HIDDEN_WIDTHS[0], HIDDEN_WIDTHS[1]),
        LayerShape::new(HIDDEN_WIDTHS[1], FEATURE_DIM),
    ]
}

pub fn head_shapes() -> Vec<LayerShape> {
    vec![
        LayerShape::new(FEATURE_DIM, HEAD_HIDDEN),
        LayerShape::new(HEAD_HIDDEN, FEATURE_DIM),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub seed: u64,
    pub shapes: Vec<LayerShape>,
    pub values: Vec<f64>,
}

/// Parameter nodes of one network recorded on a tape.
#[derive(Debug, Clone)]
pub struct TapeParams {
    layers: Vec<(Var, Var)>,
    shapes: Vec<LayerShape>,
}

impl TapeParams {
    /// Flattens the gradients of every layer in the parameter layout.
    pub fn flat_gradient(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.shapes.iter().map(LayerShape::param_count).sum());
        for (&(w, b), s) in self.layers.iter().zip(&self.shapes) {
            let gw = grads.get_or_zeros(w, s.inputs, s.outputs);
            for r in 0..s.inputs {
                out.extend(gw.row(r).iter());
            }
            out.extend(grads.get_or_zeros(b, 1, s.outputs).iter());
        }
        out
    }
}

impl EncoderParams {
    /// He-scaled Gaussian weights (variance `2 / fan_in`) and zero biases.
    pub fn random_init(seed: u64, shapes: &[LayerShape]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(shapes.iter().map(LayerShape::param_count).sum());
        for s in shapes {
            let normal = Normal::new(0.0, (2.0 / s.inputs.max(1) as f64).sqrt())
                .expect("finite standard deviation");
            values.extend((0..s.inputs * s.outputs).map(|_| normal.sample(&mut rng)));
            values.extend(std::iter::repeat_n(0.0, s.outputs));
        }
        Self {
            seed,
            shapes: shapes.to_vec(),
            values,
        }
    }

    pub fn zeros(shapes: &[LayerShape]) -> Self {
        let n = shapes.iter().map(LayerShape::param_count).sum();
        Self {
            seed: 0,
            shapes: shapes.to_vec(),
            values: vec![0.0; n],
        }
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    pub fn input_dim(&self) -> usize {
        self.shapes.first().map_or(0, |s| s.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().map_or(0, |s| s.outputs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() {
            return Err(Error::param("network has no layers"));
        }
        for pair in self.shapes.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::param(format!(
                    "layer widths do not chain: {} then {}",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        let expected: usize = self.shapes.iter().map(LayerShape::param_count).sum();
        if expected != self.values.len() {
            return Err(Error::param(format!(
                "shapes need {expected} parameters, vector has {}",
                self.values.len()
            )));
        }
        Ok(())
    }

    /// Weight matrix (`inputs × outputs`) and bias row of layer `i`.
    pub fn layer(&self, i: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let offset: usize = self.shapes[..i].iter().map(LayerShape::param_count).sum();
        let s = self.shapes[i];
        let nw = s.inputs * s.outputs;
        let w = DMatrix::from_row_slice(s.inputs, s.outputs, &self.values[offset..offset + nw]);
        let b = DMatrix::from_row_slice(1, s.outputs, &self.values[offset + nw..offset + nw + s.outputs]);
        (w, b)
    }

    /// Forward pass over one input row per point; returns unit-norm rows.
    pub fn forward(&self, input: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if input.ncols() != self.input_dim() {
            return Err(Error::param(format!(
                "input has {} columns, network expects {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        let mut x = input.clone();
        let last = self.shapes.len() - 1;
        for i in 0..self.shapes.len() {
            let (w, b) = self.layer(i);
            x = &x * &w;
            for mut row in x.row_iter_mut() {
                row += &b;
            }
            if i < last {
                x.apply(|v| *v = v.max(0.0));
            }
        }
        Ok(normalize_rows(&x))
    }

    /// Records the parameters as tape leaves.
    pub fn to_tape(&self, tape: &mut Tape) -> TapeParams {
        let layers = (0..self.shapes.len())
            .map(|i| {
                let (w, b) = self.layer(i);
                (tape.param(w), tape.param(b))
            })
            .collect();
        TapeParams {
            layers,
            shapes: self.shapes.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.shapes.len() + 8 * self.values.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.shapes.len() as u32).to_le_bytes());
        for s in &self.shapes {
            out.extend_from_slice(&(s.inputs as u32).to_le_bytes());
            out.extend_from_slice(&(s.outputs as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses one checkpoint record from the front of `bytes`, returning it
    /// and the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Input("not an encoder checkpoint (bad magic)".into()));
        }
        let seed = r.u64()?;
        let n_layers = r.u32()? as usize;
        let mut shapes = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            let inputs = r.u32()? as usize;
            let outputs = r.u32()? as usize;
            shapes.push(LayerShape::new(inputs, outputs));
        }
        let n = r.u64()? as usize;
        let payload = r.take(n.checked_mul(8).ok_or_else(|| Error::Input("parameter count overflows".into()))?)?;
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let params = Self { seed, shapes, values };
        params
            .validate()
            .map_err(|e| Error::Input(format!("corrupt checkpoint: {e}")))?;
        Ok((params, r.pos))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let (params, used) = Self::from_bytes(&bytes)?;
        if used != bytes.len() {
            return Err(Error::Input(format!(
                "{}: {} trailing bytes after checkpoint",
                path.display(),
                bytes.len() - used
            )));
        }
        Ok(params)
    }
}

pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Input("checkpoint truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Records the forward pass on the tape; output rows are unit-norm.
pub fn forward_on_tape(tape: &mut Tape, params: &TapeParams, input: Var) -> Var {
    let mut x = input;
    let last = params.layers.len() - 1;
    for (i, &(w, b)) in params.layers.iter().enumerate() {
        let xw = tape.matmul(x, w);
        x = tape.add_row(xw, b);
        if i < last {
            x = tape.relu(x);
        }
    }
    tape.normalize_rows(x)
}

/// Encodes every context row into a unit-norm feature.
pub fn encode(params: &EncoderParams, contexts: &Contexts) -> Result<DMatrix<f64>> {
    params.forward(&contexts.data)
}

/// The projection head applied to a single feature vector.
pub fn project_head(head: &EncoderParams, g: &[f64]) -> Result<Vec<f64>> {
    if head.input_dim() != FEATURE_DIM || head.output_dim() != FEATURE_DIM {
        return Err(Error::param(format!(
            "head must map {FEATURE_DIM} to {FEATURE_DIM} dimensions"
        )));
    }
    let row = DMatrix::from_row_slice(1, g.len(), g);
    Ok(head.forward(&row)?.row(0).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Forward pass with explicit loops over the flat layout.
    fn naive_forward(p: &EncoderParams, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut offset = 0;
        for (li, s) in p.shapes.iter().enumerate() {
            let mut next = vec![0.0; s.outputs];
            for (o, out) in next.iter_mut().enumerate() {
                let mut acc = p.values[offset + s.inputs * s.outputs + o];
                for (i, xi) in cur.iter().enumerate() {
                    acc += xi * p.values[offset + i * s.outputs + o];
                }
                *out = if li + 1 < p.shapes.len() { acc.max(0.0) } else { acc };
            }
            offset += s.param_count();
            cur = next;
        }
        let n = cur.iter().map(|v| v * v).sum::<f64>().sqrt();
        cur.iter().map(|v| v / n).collect()
    }

    fn random_rows(seed: u64, n: usize, d: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn same_seed_same_params() {
        let a = EncoderParams::random_init(5, &encoder_shapes(75));
        let b = EncoderParams::random_init(5, &encoder_shapes(75));
        assert_eq!(a.values, b.values);
        let c = EncoderParams::random_init(6, &encoder_shapes(75));
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn init_variance_matches_fan_in() {
        let shapes = [LayerShape::new(200, 64), LayerShape::new(64, 200)];
        let p = EncoderParams::random_init(11, &shapes);
        let mut offset = 0;
        for s in &shapes {
            let w = &p.values[offset..offset + s.inputs * s.outputs];
            let mean = w.iter().sum::<f64>() / w.len() as f64;
            let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
            let want = 2.0 / s.inputs as f64;
            assert!(w.len() >= 10_000);
            assert!((var / want - 1.0).abs() < 0.2, "variance {var} vs {want}");
            offset += s.param_count();
        }
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let p = EncoderParams::random_init(3, &encoder_shapes(15));
        let x = random_rows(4, 20, 15);
        let out = p.forward(&x).unwrap();
        for r in 0..x.nrows() {
            let row: Vec<f64> = x.row(r).iter().copied().collect();
            let want = naive_forward(&p, &row);
            for c in 0..FEATURE_DIM {
                assert!((out[(r, c)] - want[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn head_output_is_unit_norm_and_matches_oracle() {
        let head = EncoderParams::random_init(8, &head_shapes());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let g: Vec<f64> = (0..FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z = project_head(&head, &g).unwrap();
            assert_eq!(z, project_head(&head, &g).unwrap());
            let n: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
            let want = naive_forward(&head, &g);
            for (a, b) in z.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        assert!(project_head(&head, &[0.0; 5]).is_err());
    }

    #[test]
    fn zero_params_collapse_all_features() {
        let p = EncoderParams::zeros(&encoder_shapes(15));
        let out = p.forward(&random_rows(1, 10, 15)).unwrap();
        for r in 1..out.nrows() {
            assert_eq!(out.row(r), out.row(0));
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = EncoderParams::random_init(1, &encoder_shapes(15));
        assert!(p.forward(&random_rows(1, 3, 14)).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let p = EncoderParams::random_init(77, &encoder_shapes(75));
        let bytes = p.to_bytes();
        let (q, used) = EncoderParams::from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(p.seed, q.seed);
        assert_eq!(p.shapes, q.shapes);
        assert!(p.values.iter().zip(&q.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(EncoderParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(EncoderParams::from_bytes(&bad).is_err());
    }

    #[test]
    fn tape_forward_matches_direct_forward() {
        let p = EncoderParams::random_init(2, &encoder_shapes(15));
        let x = random_rows(3, 6, 15);
        let mut tape = Tape::new();
        let tp = p.to_tape(&mut tape);
        let input = tape.constant(x.clone());
        let out = forward_on_tape(&mut tape, &tp, input);
        assert!((tape.value(out) - p.forward(&x).unwrap()).amax() < 1e-12);
    }

    #[test]
    fn tape_gradient_matches_finite_differences() {
        let shapes = [LayerShape::new(5, 7), LayerShape::new(7, 4)];
        let p = EncoderParams::random_init(21, &shapes);
        let x = random_rows(22, 4, 5);
        let target = random_rows(23, 4, 4);
        let objective = |p: &EncoderParams| {
            let y = p.forward(&x).unwrap();
            y.component_mul(&target).sum()
        };
        let mut tape = Tape::new();
        let tp = p.to_tape(&mut tape);
        let input = tape.constant(x.clone());
        let y = forward_on_tape(&mut tape, &tp, input);
        let t = tape.constant(target.clone());
        let prod = tape.mul(y, t);
        let s = tape.sum(prod);
        let grad = tp.flat_gradient(&tape.backward(s));
        let h = 1e-5;
        for i in 0..p.param_count() {
            let mut plus = p.clone();
            plus.values[i] += h;
            let mut minus = p.clone();
            minus.values[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-6);
            assert!((fd - grad[i]).abs() / denom < 1e-4, "param {i}: {fd} vs {}", grad[i]);
        }
    }
}
