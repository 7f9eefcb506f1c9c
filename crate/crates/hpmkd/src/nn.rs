//! Dense feed-forward training core.
//!
//! Models are rectifier MLPs with an identity output layer, trained by
//! SGD with momentum on externally supplied logit gradients. Everything is
//! f64 and deterministically initialized from a seed, so two models built
//! from the same `(layer_sizes, seed)` are bit-identical.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

const SERIAL_MAGIC: &[u8; 4] = b"HPMD";
const SERIAL_VERSION: u32 = 1;

/// Parameter count of an architecture without building the model.
pub fn arch_param_count(layer_sizes: &[usize]) -> u64 {
    layer_sizes
        .windows(2)
        .map(|w| (w[0] as u64 + 1) * w[1] as u64)
        .sum()
}

/// Dense feed-forward network: per-layer weight matrices and bias vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layer_sizes: Vec<usize>,
    /// Layer i maps layer_sizes[i] -> layer_sizes[i+1]; row-major (out x in).
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    seed: u64,
}

impl Model {
    /// Deterministic construction: weights uniform in
    /// ±sqrt(6 / (fan_in + fan_out)), biases zero.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 layer sizes, got {}",
                layer_sizes.len()
            )));
        }
        if let Some(bad) = layer_sizes.iter().find(|&&s| s == 0) {
            return Err(Error::InvalidSpec(format!(
                "layer sizes must be positive, got {bad}"
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut mat = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_in * fan_out {
                mat.push(rng.range_f64(-limit, limit));
            }
            weights.push(mat);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            seed,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn param_count(&self) -> u64 {
        arch_param_count(&self.layer_sizes)
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    /// Logits for a batch; rows are samples.
    pub fn forward(&self, features: &Matrix) -> Result<Matrix> {
        Ok(self.forward_all(features)?.pop().unwrap())
    }

    /// Logits plus penultimate-layer activations (for embedding export).
    pub fn forward_with_penultimate(&self, features: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut acts = self.forward_all(features)?;
        let logits = acts.pop().unwrap();
        let penultimate = acts.pop().unwrap();
        Ok((logits, penultimate))
    }

    /// All layer activations including the input; last entry is the logits.
    /// Hidden layers apply the rectifier, the output layer is affine.
    fn forward_all(&self, features: &Matrix) -> Result<Vec<Matrix>> {
        if features.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "features have {} columns, model expects {}",
                features.cols(),
                self.input_dim()
            )));
        }
        let n = features.rows();
        let mut acts: Vec<Matrix> = Vec::with_capacity(self.layer_count() + 1);
        acts.push(features.clone());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (in_dim, out_dim) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let prev = acts.last().unwrap();
            let mut next = Matrix::zeros(n, out_dim);
            let last_layer = l + 1 == self.layer_sizes.len() - 1;
            for i in 0..n {
                let x = prev.row(i);
                let out = next.row_mut(i);
                for o in 0..out_dim {
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    let mut sum = b[o];
                    for (wv, xv) in row.iter().zip(x) {
                        sum += wv * xv;
                    }
                    out[o] = if last_layer { sum } else { sum.max(0.0) };
                }
            }
            acts.push(next);
        }
        Ok(acts)
    }

    /// Versioned binary container: magic, version, seed, layer sizes, then
    /// per-layer row-major weights and biases as 64-bit little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SERIAL_MAGIC);
        out.extend_from_slice(&SERIAL_VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.layer_sizes.len() as u32).to_le_bytes());
        for &s in &self.layer_sizes {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for v in w {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != SERIAL_MAGIC {
            return Err(Error::InvalidSpec("bad model magic".into()));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != SERIAL_VERSION {
            return Err(Error::InvalidSpec(format!(
                "unsupported model container version {version}"
            )));
        }
        let seed = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        let n_sizes = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        if n_sizes < 2 {
            return Err(Error::InvalidSpec("model container has < 2 layers".into()));
        }
        let mut layer_sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            let s = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
            if s == 0 {
                return Err(Error::InvalidSpec("zero layer size in container".into()));
            }
            layer_sizes.push(s);
        }
        let mut weights = Vec::with_capacity(n_sizes - 1);
        let mut biases = Vec::with_capacity(n_sizes - 1);
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut mat = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_in * fan_out {
                mat.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
            }
            let mut bias = Vec::with_capacity(fan_out);
            for _ in 0..fan_out {
                bias.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
            }
            if mat.iter().chain(&bias).any(|v| !v.is_finite()) {
                return Err(Error::InvalidSpec(
                    "non-finite parameter in container".into(),
                ));
            }
            weights.push(mat);
            biases.push(bias);
        }
        if cur.pos != bytes.len() {
            return Err(Error::InvalidSpec("trailing bytes in container".into()));
        }
        Ok(Self {
            layer_sizes,
            weights,
            biases,
            seed,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::InvalidSpec("truncated model container".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// SGD-with-momentum state; velocity buffers mirror model parameters.
#[derive(Debug, Clone)]
pub struct OptState {
    learning_rate: f64,
    momentum: f64,
    vel_w: Vec<Vec<f64>>,
    vel_b: Vec<Vec<f64>>,
}

impl OptState {
    pub fn new(model: &Model, learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidParameter(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            vel_w: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            vel_b: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn velocity_w(&self) -> &[Vec<f64>] {
        &self.vel_w
    }
}

/// Training mini-batch: features with matching integer labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::InvalidInput("batch must be non-empty".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if !features.all_finite() {
            return Err(Error::InvalidInput(
                "batch features contain non-finite values".into(),
            ));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-layer parameter gradients, shaped like the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// Backpropagates a loss gradient given on the logits down to every
/// parameter. The caller owns the loss definition; any batch-mean factor
/// must already be folded into `dloss_dlogits`.
pub fn backprop(model: &Model, features: &Matrix, dloss_dlogits: &Matrix) -> Result<Gradients> {
    let acts = model.forward_all(features)?;
    let logits = acts.last().unwrap();
    if dloss_dlogits.rows() != logits.rows() || dloss_dlogits.cols() != logits.cols() {
        return Err(Error::Shape(format!(
            "logit gradient is {}x{}, logits are {}x{}",
            dloss_dlogits.rows(),
            dloss_dlogits.cols(),
            logits.rows(),
            logits.cols()
        )));
    }
    let n = features.rows();
    let layers = model.layer_count();
    let mut grad_w: Vec<Vec<f64>> = model.weights.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut grad_b: Vec<Vec<f64>> = model.biases.iter().map(|b| vec![0.0; b.len()]).collect();

    // dz for the current layer, batch-shaped; starts at the logits.
    let mut dz = dloss_dlogits.clone();
    for l in (0..layers).rev() {
        let (in_dim, out_dim) = (model.layer_sizes[l], model.layer_sizes[l + 1]);
        let prev = &acts[l];
        let gw = &mut grad_w[l];
        let gb = &mut grad_b[l];
        for i in 0..n {
            let d = dz.row(i);
            let x = prev.row(i);
            for o in 0..out_dim {
                let dv = d[o];
                if dv == 0.0 {
                    continue;
                }
                gb[o] += dv;
                let row = &mut gw[o * in_dim..(o + 1) * in_dim];
                for (g, xv) in row.iter_mut().zip(x) {
                    *g += dv * xv;
                }
            }
        }
        if l > 0 {
            // Push through the affine map, then mask by the rectifier of the
            // previous layer (prev > 0 iff its pre-activation was positive).
            let w = &model.weights[l];
            let mut dprev = Matrix::zeros(n, in_dim);
            for i in 0..n {
                let d = dz.row(i);
                let mask = prev.row(i);
                let out = dprev.row_mut(i);
                for o in 0..out_dim {
                    let dv = d[o];
                    if dv == 0.0 {
                        continue;
                    }
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    for (j, wv) in row.iter().enumerate() {
                        out[j] += dv * wv;
                    }
                }
                for (j, g) in out.iter_mut().enumerate() {
                    if mask[j] <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            dz = dprev;
        }
    }
    Ok(Gradients {
        weights: grad_w,
        biases: grad_b,
    })
}

/// One optimizer step: v <- momentum * v + grad; params <- params - lr * v.
pub fn train_step(
    model: &mut Model,
    opt: &mut OptState,
    batch: &Batch,
    dloss_dlogits: &Matrix,
) -> Result<()> {
    let grads = backprop(model, &batch.features, dloss_dlogits)?;
    for (layer, (gw, gb)) in grads.weights.iter().zip(&grads.biases).enumerate() {
        if gw.iter().chain(gb).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { layer });
        }
    }
    let (lr, m) = (opt.learning_rate, opt.momentum);
    for l in 0..model.layer_count() {
        for (v, g) in opt.vel_w[l].iter_mut().zip(&grads.weights[l]) {
            *v = m * *v + g;
        }
        for (p, v) in model.weights[l].iter_mut().zip(&opt.vel_w[l]) {
            *p -= lr * v;
        }
        for (v, g) in opt.vel_b[l].iter_mut().zip(&grads.biases[l]) {
            *v = m * *v + g;
        }
        for (p, v) in model.biases[l].iter_mut().zip(&opt.vel_b[l]) {
            *p -= lr * v;
        }
    }
    Ok(())
}

/// Tempered softmax over one logit row, numerically stable under large
/// magnitudes (shifted-max form).
pub fn softmax_temp(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidTemperature(temperature));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite logits".into()));
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut out: Vec<f64> = logits
        .iter()
        .map(|&z| ((z - max) / temperature).exp())
        .collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Row-wise tempered softmax of a logit matrix.
pub fn softmax_temp_rows(logits: &Matrix, temperature: f64) -> Result<Matrix> {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let p = softmax_temp(logits.row(i), temperature)?;
        out.row_mut(i).copy_from_slice(&p);
    }
    Ok(out)
}

/// log softmax(z / T) for one row, via the shifted log-sum-exp.
pub(crate) fn log_softmax_temp(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse: f64 = logits
        .iter()
        .map(|&z| ((z - max) / temperature).exp())
        .sum::<f64>()
        .ln();
    logits
        .iter()
        .map(|&z| (z - max) / temperature - lse)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seed_bit_identical() {
        let a = Model::new(&[2, 2], 42).unwrap();
        let b = Model::new(&[2, 2], 42).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let c = Model::new(&[2, 2], 43).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn param_count_values() {
        // 20*64+64 + 64*32+32 + 32*2+2
        let m = Model::new(&[20, 64, 32, 2], 0).unwrap();
        assert_eq!(m.param_count(), 3490);
        let tiny = Model::new(&[2, 2], 1).unwrap();
        assert_eq!(tiny.param_count(), 6);
        // The [14,256,128,64,2] teacher: 14*256+256 + 256*128+128 + 128*64+64 + 64*2+2.
        assert_eq!(arch_param_count(&[14, 256, 128, 64, 2]), 45122);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(Model::new(&[5], 0), Err(Error::InvalidSpec(_))));
        assert!(matches!(Model::new(&[], 0), Err(Error::InvalidSpec(_))));
        assert!(matches!(
            Model::new(&[3, 0, 2], 0),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn forward_zero_params_zero_logits() {
        let mut m = Model::new(&[3, 4, 2], 9).unwrap();
        for w in m.weights_mut() {
            w.fill(0.0);
        }
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.5, 0.5]);
        let y = m.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_hand_arithmetic() {
        // Single [1,1] layer, w=2, b=1, input 3 -> logit 7.
        let mut m = Model::new(&[1, 1], 0).unwrap();
        m.weights_mut()[0][0] = 2.0;
        m.biases_mut()[0][0] = 1.0;
        let y = m.forward(&Matrix::from_vec(1, 1, vec![3.0])).unwrap();
        assert_eq!(y.get(0, 0), 7.0);
    }

    #[test]
    fn forward_batch_shape() {
        let m = Model::new(&[4, 8, 3], 5).unwrap();
        let x = Matrix::zeros(7, 4);
        let y = m.forward(&x).unwrap();
        assert_eq!((y.rows(), y.cols()), (7, 3));
        assert!(m.forward(&Matrix::zeros(7, 5)).is_err());
    }

    #[test]
    fn softmax_temp_cases() {
        let p = softmax_temp(&[0.0, 0.0], 4.0).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);

        let p = softmax_temp(&[2.0f64.ln(), 0.0], 1.0).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);

        // No overflow for huge logits.
        let p = softmax_temp(&[1000.0, 0.0], 1.0).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(p[0] > 1.0 - 1e-12 && p[1] < 1e-12);

        assert!(matches!(
            softmax_temp(&[0.0], 0.0),
            Err(Error::InvalidTemperature(_))
        ));
        assert!(matches!(
            softmax_temp(&[0.0], -1.0),
            Err(Error::InvalidTemperature(_))
        ));
    }

    #[test]
    fn train_step_zero_gradient_is_fixed_point() {
        let mut m = Model::new(&[3, 4, 2], 7).unwrap();
        let before = m.to_bytes();
        let mut opt = OptState::new(&m, 0.1, 0.9).unwrap();
        let batch = Batch::new(Matrix::zeros(2, 3), vec![0, 1]).unwrap();
        train_step(&mut m, &mut opt, &batch, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(m.to_bytes(), before);
        assert!(opt
            .velocity_w()
            .iter()
            .all(|v| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn train_step_momentum_zero_is_plain_sgd() {
        let mut m = Model::new(&[1, 1], 0).unwrap();
        m.weights_mut()[0][0] = 1.0;
        m.biases_mut()[0][0] = 0.0;
        let mut opt = OptState::new(&m, 0.5, 0.0).unwrap();
        let batch = Batch::new(Matrix::from_vec(1, 1, vec![2.0]), vec![0]).unwrap();
        // dL/dlogit = 3 -> dw = 3*2 = 6, db = 3.
        train_step(&mut m, &mut opt, &batch, &Matrix::from_vec(1, 1, vec![3.0])).unwrap();
        assert!((m.weights()[0][0] - (1.0 - 0.5 * 6.0)).abs() < 1e-15);
        assert!((m.biases()[0][0] - (0.0 - 0.5 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn train_step_momentum_unrolls() {
        // Constant gradient g for two steps, momentum 0.9, lr 0.1:
        // displacement = -0.1 * (g + 1.9 g).
        let mut m = Model::new(&[1, 1], 0).unwrap();
        m.weights_mut()[0][0] = 0.0;
        m.biases_mut()[0][0] = 0.0;
        let mut opt = OptState::new(&m, 0.1, 0.9).unwrap();
        // Input 1.0 so dw == dlogit; bias grad equals dlogit too.
        let batch = Batch::new(Matrix::from_vec(1, 1, vec![1.0]), vec![0]).unwrap();
        let g = 0.7;
        for _ in 0..2 {
            train_step(&mut m, &mut opt, &batch, &Matrix::from_vec(1, 1, vec![g])).unwrap();
        }
        let expect = -0.1 * (g + 1.9 * g);
        assert!((m.weights()[0][0] - expect).abs() < 1e-15);
        assert!((m.biases()[0][0] - expect).abs() < 1e-15);
    }

    #[test]
    fn train_step_rejects_non_finite_gradient() {
        let mut m = Model::new(&[2, 3, 2], 1).unwrap();
        let mut opt = OptState::new(&m, 0.1, 0.9).unwrap();
        let batch = Batch::new(Matrix::from_vec(1, 2, vec![1.0, 1.0]), vec![0]).unwrap();
        let bad = Matrix::from_vec(1, 2, vec![f64::NAN, 0.0]);
        match train_step(&mut m, &mut opt, &batch, &bad) {
            Err(Error::NonFiniteGradient { .. }) => {}
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }

    #[test]
    fn serialization_roundtrip() {
        let m = Model::new(&[5, 8, 3], 99).unwrap();
        let bytes = m.to_bytes();
        let back = Model::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
        assert!(Model::from_bytes(&bytes[..10]).is_err());
        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(Model::from_bytes(&corrupt).is_err());
    }

    #[test]
    fn penultimate_activations_shape() {
        let m = Model::new(&[4, 6, 5, 3], 2).unwrap();
        let x = Matrix::zeros(3, 4);
        let (logits, emb) = m.forward_with_penultimate(&x).unwrap();
        assert_eq!((logits.rows(), logits.cols()), (3, 3));
        assert_eq!((emb.rows(), emb.cols()), (3, 5));
    }
}
