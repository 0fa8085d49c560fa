use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamMoments};
use super::FeatureError;

/// `34 → 16 → 8 → 16 → 34`.
pub const LAYER_SIZES: [usize; 5] = [34, 16, 8, 16, 34];
pub const INIT_SCALE: f64 = 0.1;

/// Fully connected autoencoder with tanh hidden layers and a linear output.
///
/// Parameters live in one flat buffer, layer by layer, each layer as a
/// row-major `outputs × inputs` weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Autoencoder {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Parameter-shaped gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    sizes: Vec<usize>,
    values: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn layer_ranges(sizes: &[usize], layer: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let start: usize = sizes.windows(2).take(layer).map(|w| w[0] * w[1] + w[1]).sum();
    let (i, o) = (sizes[layer], sizes[layer + 1]);
    (start..start + i * o, start + i * o..start + i * o + o)
}

macro_rules! layer_accessors {
    ($ty:ty, $field:ident) => {
        impl $ty {
            pub fn sizes(&self) -> &[usize] {
                &self.sizes
            }

            pub fn layer_count(&self) -> usize {
                self.sizes.len() - 1
            }

            /// Row-major `outputs × inputs`.
            pub fn weights(&self, layer: usize) -> &[f64] {
                &self.$field[layer_ranges(&self.sizes, layer).0]
            }

            pub fn bias(&self, layer: usize) -> &[f64] {
                &self.$field[layer_ranges(&self.sizes, layer).1]
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.$field
            }

            pub fn as_mut_slice(&mut self) -> &mut [f64] {
                &mut self.$field
            }
        }
    };
}

layer_accessors!(Autoencoder, params);
layer_accessors!(Gradients, values);

/// Latent code and reconstruction of one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub latent: Vec<f64>,
    pub reconstruction: Vec<f64>,
}

/// Mean squared error over the vector entries.
pub fn loss(reconstruction: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(reconstruction.len(), x.len());
    reconstruction.iter().zip(x).map(|(r, v)| (r - v) * (r - v)).sum::<f64>() / x.len() as f64
}

impl Autoencoder {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 3, "need at least one hidden layer");
        Autoencoder { sizes: sizes.to_vec(), params: vec![0.0; param_count(sizes)] }
    }

    /// Every parameter drawn from `uniform(-scale, scale)`.
    pub fn init_uniform(sizes: &[usize], seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ae = Self::zeros(sizes);
        ae.params.iter_mut().for_each(|p| *p = rng.gen_range(-scale..scale));
        ae
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 3 && params.len() == param_count(sizes)).then(|| Autoencoder { sizes: sizes.to_vec(), params })
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    /// Index into the activations (0 = input) of the narrowest hidden layer.
    pub fn latent_index(&self) -> usize {
        let hidden = &self.sizes[1..self.sizes.len() - 1];
        1 + hidden.iter().enumerate().min_by_key(|&(i, &w)| (w, i)).map(|(i, _)| i).unwrap()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients { sizes: self.sizes.clone(), values: vec![0.0; self.params.len()] }
    }

    /// Fills `acts[0..=L]` with the input and every layer's output.
    fn activations(&self, x: &[f64], acts: &mut [Vec<f64>]) {
        acts[0].clear();
        acts[0].extend_from_slice(x);
        let last = self.layer_count() - 1;
        for l in 0..self.layer_count() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = (self.weights(l), self.bias(l));
            let (inputs, rest) = acts.split_at_mut(l + 1);
            let input = &inputs[l];
            let out = &mut rest[0];
            out.clear();
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = b[o] + row.iter().zip(input).map(|(wi, xi)| wi * xi).sum::<f64>();
                out.push(if l == last { z } else { z.tanh() });
            }
        }
    }

    fn buffers(&self) -> Vec<Vec<f64>> {
        self.sizes.iter().map(|&n| Vec::with_capacity(n)).collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward, FeatureError> {
        if x.len() != self.input_len() {
            return Err(FeatureError::Shape { expected: self.input_len(), got: x.len() });
        }
        let mut acts = self.buffers();
        self.activations(x, &mut acts);
        let latent = acts[self.latent_index()].clone();
        let reconstruction = acts.pop().unwrap();
        if latent.iter().chain(&reconstruction).any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite("forward pass".into()));
        }
        Ok(Forward { latent, reconstruction })
    }

    /// Mean over the batch of the per-sample MSE.
    pub fn batch_loss<R: AsRef<[f64]>>(&self, batch: &[R]) -> Result<f64, FeatureError> {
        let mut total = 0.0;
        for x in batch {
            total += loss(&self.forward(x.as_ref())?.reconstruction, x.as_ref());
        }
        Ok(total / batch.len() as f64)
    }

    /// Batch loss and its gradient with respect to every parameter.
    pub fn loss_and_gradients<R: AsRef<[f64]>>(&self, batch: &[R]) -> Result<(f64, Gradients), FeatureError> {
        if batch.is_empty() {
            return Err(FeatureError::CorpusTooSmall { needed: 1, got: 0 });
        }
        let mut grads = self.zero_gradients();
        let mut acts = self.buffers();
        let widest = *self.sizes.iter().max().unwrap();
        let mut delta = Vec::with_capacity(widest);
        let mut prev = Vec::with_capacity(widest);
        let out_len = *self.sizes.last().unwrap();
        let scale = 2.0 / (out_len as f64 * batch.len() as f64);
        let mut total = 0.0;

        for x in batch {
            let x = x.as_ref();
            if x.len() != self.input_len() {
                return Err(FeatureError::Shape { expected: self.input_len(), got: x.len() });
            }
            self.activations(x, &mut acts);
            let y = acts.last().unwrap();
            total += loss(y, x);
            delta.clear();
            delta.extend(y.iter().zip(x).map(|(r, v)| scale * (r - v)));

            for l in (0..self.layer_count()).rev() {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let input = &acts[l];
                let (wr, br) = layer_ranges(&self.sizes, l);
                let gw = &mut grads.values[wr.clone()];
                for o in 0..n_out {
                    let d = delta[o];
                    for (g, a) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                for (g, d) in grads.values[br].iter_mut().zip(&delta) {
                    *g += d;
                }
                if l > 0 {
                    let w = &self.params[wr];
                    prev.clear();
                    prev.extend((0..n_in).map(|i| {
                        let back: f64 = (0..n_out).map(|o| w[o * n_in + i] * delta[o]).sum();
                        back * (1.0 - input[i] * input[i])
                    }));
                    std::mem::swap(&mut delta, &mut prev);
                }
            }
        }
        if grads.values.iter().any(|g| !g.is_finite()) {
            return Err(FeatureError::NonFinite("gradient".into()));
        }
        Ok((total / batch.len() as f64, grads))
    }

    pub fn gradients<R: AsRef<[f64]>>(&self, batch: &[R]) -> Result<Gradients, FeatureError> {
        self.loss_and_gradients(batch).map(|(_, g)| g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        AeTrainConfig { epochs: 2000, lr: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedAutoencoder {
    pub model: Autoencoder,
    /// `(epoch, loss)`: the loss before the update of each epoch, then the
    /// final loss at index `epochs`.
    pub history: Vec<(usize, f64)>,
}

impl TrainedAutoencoder {
    pub fn initial_loss(&self) -> f64 {
        self.history[0].1
    }

    pub fn final_loss(&self) -> f64 {
        self.history.last().unwrap().1
    }
}

/// Full-batch Adam on the standard architecture.
pub fn train_autoencoder<R: AsRef<[f64]>>(batch: &[R], cfg: &AeTrainConfig) -> Result<TrainedAutoencoder, FeatureError> {
    train_with_sizes(&LAYER_SIZES, batch, cfg)
}

pub fn train_with_sizes<R: AsRef<[f64]>>(
    sizes: &[usize],
    batch: &[R],
    cfg: &AeTrainConfig,
) -> Result<TrainedAutoencoder, FeatureError> {
    let latent = *sizes[1..sizes.len() - 1].iter().min().unwrap();
    if batch.len() < latent {
        return Err(FeatureError::CorpusTooSmall { needed: latent, got: batch.len() });
    }
    // Gradient sums run in a fixed sample order, so any permutation of the
    // corpus trains bit-identically.
    let mut sorted: Vec<&[f64]> = batch.iter().map(AsRef::as_ref).collect();
    sorted.sort_by(|a, b| {
        a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(a.len().cmp(&b.len()))
    });
    let batch = &sorted[..];
    let mut model = Autoencoder::init_uniform(sizes, cfg.seed, INIT_SCALE);
    let mut moments = AdamMoments::zeros(model.params.len());
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (l, grads) = model.loss_and_gradients(batch).map_err(|_| FeatureError::Divergence { epoch })?;
        if !l.is_finite() {
            return Err(FeatureError::Divergence { epoch });
        }
        history.push((epoch, l));
        adam_step(&mut model.params, &grads.values, &mut moments, epoch as u64 + 1, cfg.lr)
            .map_err(|_| FeatureError::Divergence { epoch })?;
    }
    let last = model.batch_loss(batch).map_err(|_| FeatureError::Divergence { epoch: cfg.epochs })?;
    if !last.is_finite() {
        return Err(FeatureError::Divergence { epoch: cfg.epochs });
    }
    history.push((cfg.epochs, last));
    Ok(TrainedAutoencoder { model, history })
}
