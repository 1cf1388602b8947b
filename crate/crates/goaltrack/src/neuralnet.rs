//! Hand-rolled fully-connected Q-network.
//!
//! A stack of dense layers with rectified-linear hidden activations and a
//! linear output head, everything in double precision. The backward pass is
//! specialised to the TD objective: the loss is the batch mean of squared TD
//! errors, targets come from a frozen copy of the network, and gradients
//! flow only through the online network's value of the taken action.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::env::StateVec;
use crate::{Error, Result};

/// One dense layer; `weights` is row-major `[outputs][inputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub inputs: usize,
    pub outputs: usize,
}

/// Q-network parameters: the layer stack.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetParams {
    pub layers: Vec<DenseLayer>,
}

/// Gradients shaped like a [`QNetParams`], one (weights, biases) pair per
/// layer.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// One stored experience.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: StateVec,
    pub action: usize,
    pub reward: f64,
    pub next_state: StateVec,
    pub done: bool,
}

/// A batch of transitions sampled from replay memory.
pub type TransitionBatch = [Transition];

impl QNetParams {
    /// Builds a network with Xavier-uniform weights (`±sqrt(6/(fan_in +
    /// fan_out))`) and zero biases.
    ///
    /// `layer_sizes` runs input first, e.g. `[3, 128, 128, 810]`.
    pub fn new_seeded<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        Self::check_sizes(layer_sizes)?;
        let mut layers = Vec::with_capacity(layer_sizes.len() - 1);
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            layers.push(DenseLayer {
                weights,
                biases: vec![0.0; fan_out],
                inputs: fan_in,
                outputs: fan_out,
            });
        }
        Ok(Self { layers })
    }

    /// Builds an all-zero network of the given shape.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| DenseLayer {
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
                inputs: w[0],
                outputs: w[1],
            })
            .collect();
        Ok(Self { layers })
    }

    fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "layer sizes must list at least input and output, all positive; got {layer_sizes:?}"
            )));
        }
        Ok(())
    }

    /// Layer widths, input first.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].inputs];
        sizes.extend(self.layers.iter().map(|l| l.outputs));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").outputs
    }

    /// Q-values for a state, one per action.
    pub fn forward(&self, state: &StateVec) -> Result<Vec<f64>> {
        self.forward_slice(&state.as_array())
    }

    /// Q-values for an arbitrary input vector.
    pub fn forward_slice(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input length {} does not match network input {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut activ = input.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            activ = layer.affine(&activ, li < last);
        }
        Ok(activ)
    }

    /// Forward pass keeping each layer's activation for backprop. The
    /// returned vector starts with the input itself.
    fn forward_cached(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let next = layer.affine(acts.last().expect("non-empty"), li < last);
            acts.push(next);
        }
        acts
    }
}

impl DenseLayer {
    fn affine(&self, input: &[f64], relu: bool) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.inputs);
        let mut out = Vec::with_capacity(self.outputs);
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.biases[o];
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out.push(if relu { acc.max(0.0) } else { acc });
        }
        out
    }
}

impl QNetGrads {
    /// Zero gradients shaped like `net`.
    pub fn zeros_like(net: &QNetParams) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    assert!(!values.is_empty(), "argmax of an empty slice");
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// TD loss and its gradient over a batch.
///
/// Per sample the target is `y = r + gamma * max_a Q(s', a; theta_star)`,
/// collapsing to `y = r` on terminal transitions; the loss is the batch mean
/// of `(Q(s, a; theta) - y)^2`. Targets are treated as constants, so the
/// gradient only flows through `Q(s, a; theta)`.
pub fn td_loss_grad(
    batch: &TransitionBatch,
    theta: &QNetParams,
    theta_star: &QNetParams,
    gamma: f64,
) -> Result<(f64, QNetGrads)> {
    assert!(!batch.is_empty(), "empty transition batch");
    debug_assert!(gamma > 0.0 && gamma <= 1.0, "gamma = {gamma} outside (0, 1]");
    let mut grads = QNetGrads::zeros_like(theta);
    let mut loss = 0.0;
    let inv_batch = 1.0 / batch.len() as f64;
    let n_actions = theta.output_dim();

    for tr in batch {
        if tr.action >= n_actions {
            return Err(Error::ShapeMismatch(format!(
                "transition action index {} outside 0..{n_actions}",
                tr.action
            )));
        }
        let acts = theta.forward_cached(&tr.state.as_array());
        let q_sel = acts.last().expect("output layer")[tr.action];
        let y = if tr.done {
            tr.reward
        } else {
            let q_next = theta_star.forward(&tr.next_state)?;
            tr.reward + gamma * q_next[argmax(&q_next)]
        };
        let td = q_sel - y;
        loss += td * td * inv_batch;

        // output delta is one-hot: d(mean td^2)/d(q_sel) = 2*td/B
        let mut delta = vec![0.0; n_actions];
        delta[tr.action] = 2.0 * td * inv_batch;

        for li in (0..theta.layers.len()).rev() {
            let layer = &theta.layers[li];
            let input = &acts[li];
            let gw = &mut grads.weights[li];
            let gb = &mut grads.biases[li];
            let mut delta_prev = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for i in 0..layer.inputs {
                    grow[i] += d * input[i];
                    delta_prev[i] += d * row[i];
                }
            }
            if li > 0 {
                // mask by the rectifier: units that were clamped at zero
                // pass no gradient
                for (dp, &a) in delta_prev.iter_mut().zip(input.iter()) {
                    if a <= 0.0 {
                        *dp = 0.0;
                    }
                }
                delta = delta_prev;
            }
        }
    }
    Ok((loss, grads))
}

/// RMSprop accumulator state and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    /// Per-weight squared-gradient running averages, one vec per layer.
    pub sq_weights: Vec<Vec<f64>>,
    /// Per-bias squared-gradient running averages.
    pub sq_biases: Vec<Vec<f64>>,
    /// Accumulator decay.
    pub rho: f64,
    /// Denominator stabiliser.
    pub epsilon: f64,
    /// Learning rate.
    pub learning_rate: f64,
}

impl OptimState {
    /// Fresh accumulators with the stock decay (0.99) and stabiliser (1e-8).
    pub fn new(net: &QNetParams, learning_rate: f64) -> Self {
        Self::with(net, learning_rate, 0.99, 1e-8)
    }

    pub fn with(net: &QNetParams, learning_rate: f64, rho: f64, epsilon: f64) -> Self {
        assert!(rho > 0.0 && rho < 1.0, "rho = {rho} outside (0, 1)");
        Self {
            sq_weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            sq_biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
            rho,
            epsilon,
            learning_rate,
        }
    }
}

/// One RMSprop update: `v <- rho*v + (1-rho)*g^2`, then
/// `theta <- theta - lr * g / sqrt(v + eps)`, elementwise.
pub fn rmsprop_step(theta: &mut QNetParams, grads: &QNetGrads, opt: &mut OptimState) {
    assert_eq!(theta.layers.len(), grads.weights.len(), "layer count mismatch");
    for (li, layer) in theta.layers.iter_mut().enumerate() {
        assert_eq!(layer.weights.len(), grads.weights[li].len(), "weight shape mismatch");
        assert_eq!(layer.biases.len(), grads.biases[li].len(), "bias shape mismatch");
        update_block(
            &mut layer.weights,
            &grads.weights[li],
            &mut opt.sq_weights[li],
            opt.rho,
            opt.epsilon,
            opt.learning_rate,
        );
        update_block(
            &mut layer.biases,
            &grads.biases[li],
            &mut opt.sq_biases[li],
            opt.rho,
            opt.epsilon,
            opt.learning_rate,
        );
    }
}

fn update_block(params: &mut [f64], grads: &[f64], sq: &mut [f64], rho: f64, eps: f64, lr: f64) {
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(sq.iter_mut()) {
        *v = rho * *v + (1.0 - rho) * g * g;
        *p -= lr * g / (*v + eps).sqrt();
    }
}

// ---------------------------------------------------------------------------
// checkpoint serialization
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"GTCK";
const CKPT_VERSION: u32 = 1;

/// Writes parameters and optimizer state to a versioned little-endian binary
/// file. The layout is: magic `GTCK`, format version, layer sizes, RMSprop
/// hyperparameters, then per-layer weights, biases, and squared-gradient
/// accumulators, all as IEEE-754 doubles.
pub fn save_checkpoint(path: &Path, params: &QNetParams, optim: &OptimState) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    let sizes = params.layer_sizes();
    w.write_all(&(sizes.len() as u32).to_le_bytes())?;
    for s in &sizes {
        w.write_all(&(*s as u64).to_le_bytes())?;
    }
    for v in [optim.rho, optim.epsilon, optim.learning_rate] {
        w.write_all(&v.to_le_bytes())?;
    }
    for (li, layer) in params.layers.iter().enumerate() {
        write_f64s(&mut w, &layer.weights)?;
        write_f64s(&mut w, &layer.biases)?;
        write_f64s(&mut w, &optim.sq_weights[li])?;
        write_f64s(&mut w, &optim.sq_biases[li])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(QNetParams, OptimState)> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let n_sizes = read_u32(&mut r)? as usize;
    if !(2..=64).contains(&n_sizes) {
        return Err(Error::Checkpoint(format!(
            "{}: implausible layer count {n_sizes}",
            path.display()
        )));
    }
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        sizes.push(read_u64(&mut r)? as usize);
    }
    let rho = read_f64(&mut r)?;
    let epsilon = read_f64(&mut r)?;
    let learning_rate = read_f64(&mut r)?;

    let mut params = QNetParams::zeros(&sizes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut optim = OptimState::with(&params, learning_rate, rho, epsilon);
    for (li, layer) in params.layers.iter_mut().enumerate() {
        read_f64s(&mut r, &mut layer.weights)?;
        read_f64s(&mut r, &mut layer.biases)?;
        read_f64s(&mut r, &mut optim.sq_weights[li])?;
        read_f64s(&mut r, &mut optim.sq_biases[li])?;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint(format!(
            "{}: trailing bytes after checkpoint payload",
            path.display()
        )));
    }
    Ok((params, optim))
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, out: &mut [f64]) -> Result<()> {
    let mut buf = [0u8; 8];
    for v in out {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s(dx: f64, dy: f64, dz: f64) -> StateVec {
        StateVec::new(dx, dy, dz)
    }

    fn random_transitions(n: usize, n_actions: usize, seed: u64) -> Vec<Transition> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Transition {
                state: s(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                ),
                action: rng.random_range(0..n_actions),
                reward: rng.random_range(-1.0..1.0),
                next_state: s(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                ),
                done: i % 3 == 0,
            })
            .collect()
    }

    #[test]
    fn zero_network_outputs_zeros() {
        let net = QNetParams::zeros(&[3, 16, 5]).unwrap();
        let out = net.forward(&s(1.0, -2.0, 0.5)).unwrap();
        assert_eq!(out, vec![0.0; 5]);
    }

    #[test]
    fn identity_padded_layer_passes_first_component() {
        let mut net = QNetParams::zeros(&[3, 5]).unwrap();
        for i in 0..3 {
            net.layers[0].weights[i * 3 + i] = 1.0;
        }
        let out = net.forward(&s(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(out[0], 1.0);
        assert_eq!(out[1], 0.0);
        assert_eq!(out.len(), 5);
    }

    #[test]
    fn default_shape_outputs_one_q_per_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = QNetParams::new_seeded(&[3, 128, 128, 810], &mut rng).unwrap();
        let out = net.forward(&s(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(out.len(), 810);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let net = QNetParams::zeros(&[3, 4]).unwrap();
        assert!(matches!(
            net.forward_slice(&[1.0, 2.0]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn xavier_init_respects_bounds_and_zero_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = QNetParams::new_seeded(&[3, 8, 5], &mut rng).unwrap();
        for layer in &net.layers {
            let bound = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            assert!(layer.weights.iter().all(|w| w.abs() <= bound));
            assert!(layer.biases.iter().all(|&b| b == 0.0));
        }
        assert_eq!(net.layer_sizes(), vec![3, 8, 5]);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.0, 3.0, 1.0, 3.0]), 1);
        assert_eq!(argmax(&[-1.0]), 0);
        assert_eq!(argmax(&[2.0, 2.0, 2.0]), 0);
    }

    #[test]
    fn scalar_net_loss_and_gradient_by_hand() {
        // Q = w * s_x with s = (1, 0, 0): a terminal transition with zero
        // reward gives loss = w^2 and dloss/dw = 2w
        let w = 0.7;
        let mut net = QNetParams::zeros(&[3, 1]).unwrap();
        net.layers[0].weights[0] = w;
        let batch = [Transition {
            state: s(1.0, 0.0, 0.0),
            action: 0,
            reward: 0.0,
            next_state: s(0.0, 0.0, 0.0),
            done: true,
        }];
        let (loss, grads) = td_loss_grad(&batch, &net, &net, 0.1).unwrap();
        assert!((loss - w * w).abs() < 1e-15);
        assert!((grads.weights[0][0] - 2.0 * w).abs() < 1e-15);
        // the untouched input components see no gradient
        assert_eq!(grads.weights[0][1], 0.0);
        assert_eq!(grads.weights[0][2], 0.0);
    }

    #[test]
    fn perfect_predictions_give_zero_gradient() {
        let net = QNetParams::zeros(&[3, 4, 2]).unwrap();
        let batch = [Transition {
            state: s(0.3, -0.7, 0.1),
            action: 1,
            reward: 0.0,
            next_state: s(0.0, 0.0, 0.0),
            done: true,
        }];
        let (loss, grads) = td_loss_grad(&batch, &net, &net, 0.5).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.weights.iter().flatten().all(|&g| g == 0.0));
        assert!(grads.biases.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn out_of_range_action_index_is_rejected() {
        let net = QNetParams::zeros(&[3, 2]).unwrap();
        let batch = [Transition {
            state: s(0.0, 0.0, 0.0),
            action: 2,
            reward: 0.0,
            next_state: s(0.0, 0.0, 0.0),
            done: true,
        }];
        assert!(td_loss_grad(&batch, &net, &net, 0.5).is_err());
    }

    /// Central finite differences over every parameter of a small random
    /// net; the analytic gradient must agree coordinate by coordinate.
    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let theta = QNetParams::new_seeded(&[3, 8, 5], &mut rng).unwrap();
        let theta_star = QNetParams::new_seeded(&[3, 8, 5], &mut rng).unwrap();
        let batch = random_transitions(6, 5, 7);
        let gamma = 0.9;
        let (_, grads) = td_loss_grad(&batch, &theta, &theta_star, gamma).unwrap();

        let h = 1e-5;
        let loss_at = |net: &QNetParams| td_loss_grad(&batch, net, &theta_star, gamma).unwrap().0;
        let mut checked = 0usize;
        for li in 0..theta.layers.len() {
            for wi in 0..theta.layers[li].weights.len() {
                let mut plus = theta.clone();
                plus.layers[li].weights[wi] += h;
                let mut minus = theta.clone();
                minus.layers[li].weights[wi] -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let an = grads.weights[li][wi];
                let rel = (an - fd).abs() / (an.abs() + fd.abs()).max(1e-8);
                assert!(rel < 1e-4, "layer {li} weight {wi}: analytic {an} fd {fd}");
                checked += 1;
            }
            for bi in 0..theta.layers[li].biases.len() {
                let mut plus = theta.clone();
                plus.layers[li].biases[bi] += h;
                let mut minus = theta.clone();
                minus.layers[li].biases[bi] -= h;
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let an = grads.biases[li][bi];
                let rel = (an - fd).abs() / (an.abs() + fd.abs()).max(1e-8);
                assert!(rel < 1e-4, "layer {li} bias {bi}: analytic {an} fd {fd}");
                checked += 1;
            }
        }
        assert_eq!(checked, 3 * 8 + 8 + 8 * 5 + 5);
    }

    #[test]
    fn rmsprop_zero_gradient_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = QNetParams::new_seeded(&[3, 4, 2], &mut rng).unwrap();
        let before = net.clone();
        let grads = QNetGrads::zeros_like(&net);
        let mut opt = OptimState::new(&net, 1e-4);
        rmsprop_step(&mut net, &grads, &mut opt);
        assert_eq!(net, before);
    }

    #[test]
    fn rmsprop_first_step_matches_hand_formula() {
        let mut net = QNetParams::zeros(&[2, 2]).unwrap();
        let mut grads = QNetGrads::zeros_like(&net);
        grads.weights[0] = vec![0.5, -1.25, 3.0, 0.0];
        grads.biases[0] = vec![2.0, -0.001];
        let (lr, rho, eps) = (1e-4, 0.99, 1e-8);
        let mut opt = OptimState::with(&net, lr, rho, eps);
        rmsprop_step(&mut net, &grads.clone(), &mut opt);
        for (i, &g) in grads.weights[0].iter().enumerate() {
            let expected = -lr * g / ((1.0 - rho) * g * g + eps).sqrt();
            assert!(
                (net.layers[0].weights[i] - expected).abs() < 1e-12,
                "weight {i}"
            );
        }
        for (i, &g) in grads.biases[0].iter().enumerate() {
            let expected = -lr * g / ((1.0 - rho) * g * g + eps).sqrt();
            assert!((net.layers[0].biases[i] - expected).abs() < 1e-12, "bias {i}");
        }
    }

    #[test]
    fn rmsprop_step_is_linear_in_learning_rate() {
        let grads = {
            let net = QNetParams::zeros(&[2, 3]).unwrap();
            let mut g = QNetGrads::zeros_like(&net);
            g.weights[0].iter_mut().enumerate().for_each(|(i, w)| *w = i as f64 - 2.5);
            g.biases[0] = vec![1.0, -2.0, 0.5];
            g
        };
        let step = |lr: f64| -> Vec<f64> {
            let mut net = QNetParams::zeros(&[2, 3]).unwrap();
            let mut opt = OptimState::with(&net, lr, 0.99, 1e-8);
            rmsprop_step(&mut net, &grads, &mut opt);
            net.layers[0]
                .weights
                .iter()
                .chain(&net.layers[0].biases)
                .copied()
                .collect()
        };
        let one = step(1e-4);
        let two = step(2e-4);
        for (a, b) in one.iter().zip(&two) {
            assert_eq!(*b, 2.0 * a);
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut net = QNetParams::new_seeded(&[3, 16, 16, 10], &mut rng).unwrap();
        let mut opt = OptimState::new(&net, 1e-4);
        // run a few updates so the accumulators are non-trivial
        let batch = random_transitions(8, 10, 4);
        for _ in 0..5 {
            let theta_star = net.clone();
            let (_, grads) = td_loss_grad(&batch, &net, &theta_star, 0.1).unwrap();
            rmsprop_step(&mut net, &grads, &mut opt);
        }
        save_checkpoint(&path, &net, &opt).unwrap();
        let (net2, opt2) = load_checkpoint(&path).unwrap();
        assert_eq!(net2, net);
        assert_eq!(opt2, opt);

        // a second save produces byte-identical files
        let path2 = dir.path().join("net2.ckpt");
        save_checkpoint(&path2, &net, &opt).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }

    proptest! {
        /// Adding a constant to every output bias shifts all Q-values
        /// equally, so the argmax action never changes.
        #[test]
        fn argmax_invariant_under_output_bias_shift(
            seed in 0u64..500, shift in -10.0f64..10.0,
            x in -5.0f64..5.0, y in -5.0f64..5.0, z in -5.0f64..5.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = QNetParams::new_seeded(&[3, 8, 6], &mut rng).unwrap();
            let mut shifted = net.clone();
            for b in shifted.layers.last_mut().unwrap().biases.iter_mut() {
                *b += shift;
            }
            let q0 = net.forward(&s(x, y, z)).unwrap();
            let q1 = shifted.forward(&s(x, y, z)).unwrap();
            prop_assert_eq!(argmax(&q0), argmax(&q1));
        }

        /// On f(t) = t^2 the iterate magnitude shrinks monotonically once
        /// the accumulator has warmed up, for any lr <= 1e-2.
        #[test]
        fn rmsprop_converges_on_quadratic(
            theta0 in 0.3f64..5.0,
            lr_exp in -4.0f64..-2.0,
        ) {
            let lr = 10f64.powf(lr_exp);
            let mut net = QNetParams::zeros(&[1, 1]).unwrap();
            net.layers[0].weights[0] = theta0;
            let mut opt = OptimState::with(&net, lr, 0.99, 1e-8);
            let mut prev = f64::INFINITY;
            for step in 0..300 {
                let t = net.layers[0].weights[0];
                let mut grads = QNetGrads::zeros_like(&net);
                grads.weights[0][0] = 2.0 * t;
                rmsprop_step(&mut net, &grads, &mut opt);
                let cur = net.layers[0].weights[0].abs();
                if step >= 10 {
                    prop_assert!(cur < prev, "step {step}: |theta| {cur} >= {prev}");
                }
                prev = cur;
            }
        }
    }
}
