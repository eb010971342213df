//! Dense feed-forward networks with manual reverse-mode gradients and Adam.
//!
//! Hidden layers use ReLU, the output layer is linear. Batches are laid out
//! as `(examples, features)`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `(out, in)`.
    #[serde(with = "codec::array2")]
    pub weight: Array2<f64>,
    #[serde(with = "codec::array1")]
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

/// Network parameters. Also used to hold gradients and optimizer moments,
/// which share the same shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Layer inputs recorded by [`Mlp::forward_cached`]; `acts[0]` is the batch
/// input and `acts[L]` the network output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub acts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("cache holds at least the input")
    }
}

impl Mlp {
    /// Layer widths `[in, hidden.., out]`, all parameters zero.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output widths");
        Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    /// Fan-in scaled uniform initialization, `U(-1/sqrt(in), 1/sqrt(in))`.
    pub fn new_uniform<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs() as f64).sqrt();
            layer.weight.mapv_inplace(|_| rng.random_range(-bound..bound));
            layer.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        net
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::Shape(format!(
                    "layer {i}: bias length {} != {}",
                    l.bias.len(),
                    l.outputs()
                )));
            }
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer {} emits {} values but layer {} expects {}",
                    i,
                    w[0].outputs(),
                    i + 1,
                    w[1].inputs()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Dense::outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let last = self.layers.len() - 1;
        let mut x = affine(&self.layers[0], input);
        if last > 0 {
            relu_inplace(&mut x);
        }
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            x = affine(layer, x.view());
            if i < last {
                relu_inplace(&mut x);
            }
        }
        Ok(x)
    }

    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, input: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&input)?;
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = affine(layer, acts[i].view());
            if i < last {
                relu_inplace(&mut y);
            }
            acts.push(y);
        }
        Ok(ForwardCache { acts })
    }

    /// Gradients of `sum(upstream ⊙ output)` with respect to every parameter
    /// and to the input batch.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<(Mlp, Array2<f64>)> {
        if cache.acts.len() != self.layers.len() + 1 {
            return Err(Error::Shape("forward cache does not match the network depth".into()));
        }
        if upstream.dim() != cache.output().dim() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.dim(),
                cache.output().dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.to_owned();
        for i in (0..self.layers.len()).rev() {
            if i < last {
                Zip::from(&mut g).and(&cache.acts[i + 1]).for_each(|g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            let weight = g.t().dot(&cache.acts[i]);
            let bias = g.sum_axis(Axis(0));
            let next = g.dot(&self.layers[i].weight);
            grads.push(Dense { weight, bias });
            g = next;
        }
        grads.reverse();
        Ok((Mlp { layers: grads }, g))
    }

    pub fn is_congruent(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len())
    }

    /// Parameter blocks as flat slices: weight then bias for each layer.
    pub fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Mlp, scale: f64) -> Result<()> {
        if !self.is_congruent(other) {
            return Err(Error::Shape("networks are not congruent".into()));
        }
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
        Ok(())
    }

    /// SHA-256 over shapes and parameter bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for s in self.sizes() {
            h.update((s as u64).to_le_bytes());
        }
        for block in self.blocks() {
            for v in block {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

fn affine(layer: &Dense, x: ArrayView2<f64>) -> Array2<f64> {
    let mut y = x.dot(&layer.weight.t());
    y += &layer.bias;
    y
}

fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Polyak averaging, `target <- (1 - tau) target + tau online`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !target.is_congruent(online) {
        return Err(Error::Shape("target and online networks differ in shape".into()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Domain(format!("polyak coefficient {tau} outside [0, 1]")));
    }
    for (t, o) in target.blocks_mut().into_iter().zip(online.blocks()) {
        t.iter_mut().zip(o).for_each(|(t, &o)| *t = (1.0 - tau) * *t + tau * o);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one parameter set, stored as flat blocks congruent to
/// the parameters (see [`Mlp::blocks`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub hyper: AdamParams,
    pub step: u64,
    #[serde(with = "blocks_codec")]
    pub m: Vec<Vec<f64>>,
    #[serde(with = "blocks_codec")]
    pub v: Vec<Vec<f64>>,
}

mod blocks_codec {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Block(#[serde(with = "crate::codec::vec_f64")] Vec<f64>);

    pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let blocks: Vec<Block> = v.iter().map(|b| Block(b.clone())).collect();
        blocks.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        Ok(Vec::<Block>::deserialize(d)?.into_iter().map(|b| b.0).collect())
    }
}

impl Adam {
    pub fn new(hyper: AdamParams, block_lens: &[usize]) -> Self {
        Self {
            hyper,
            step: 0,
            m: block_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: block_lens.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_net(hyper: AdamParams, net: &Mlp) -> Self {
        let lens: Vec<usize> = net.blocks().iter().map(|b| b.len()).collect();
        Self::new(hyper, &lens)
    }

    /// One bias-corrected Adam update of `params` given `grads`.
    pub fn update_blocks(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape("optimizer state does not match parameters".into()));
        }
        for ((p, g), m) in params.iter().zip(&grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(Error::Shape("optimizer block length mismatch".into()));
            }
        }
        self.step += 1;
        let AdamParams { lr, beta1, beta2, eps } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn update(&mut self, net: &mut Mlp, grads: &Mlp) -> Result<()> {
        if !net.is_congruent(grads) {
            return Err(Error::Shape("gradients do not match network".into()));
        }
        self.update_blocks(net.blocks_mut(), grads.blocks())
    }

    pub fn update_scalar(&mut self, param: &mut f64, grad: f64) -> Result<()> {
        self.update_blocks(vec![std::slice::from_mut(param)], vec![&[grad]])
    }
}
