//! Feed-forward embedding network with an L2-normalized output, trained
//! with Adam and decoupled weight decay.
//!
//! Parameters live in one flat vector. Layer `l` occupies a weight block of
//! `out × in` values (row-major) followed by `out` bias values, so
//! gradients, optimizer moments and checkpoints share a single layout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{EmbeddingMatrix, NORM_EPS};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HHCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Default hidden and output widths appended to the input width.
pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_EMBED: usize = 64;

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl LayerShape {
    fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    fn len(&self) -> usize {
        self.weight_len() + self.outputs
    }
}

fn layer_shapes(widths: &[usize]) -> Vec<LayerShape> {
    let mut offset = 0;
    widths
        .windows(2)
        .map(|w| {
            let shape = LayerShape {
                inputs: w[0],
                outputs: w[1],
                offset,
            };
            offset += shape.len();
            shape
        })
        .collect()
}

/// MLP `widths[0] → … → widths[last]` with tanh between layers and row-wise
/// L2 normalization of the output.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Intermediates of a forward pass needed by [`EncoderModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of every layer; entry 0 is the raw batch, later entries are
    /// tanh activations.
    layer_inputs: Vec<Array2<f64>>,
    /// Normalized output rows.
    unit: Array2<f64>,
    /// `sqrt(|v|^2 + eps)` for each pre-normalization row `v`.
    norms: Array1<f64>,
}

impl EncoderModel {
    /// Xavier-uniform weights and zero biases drawn from `seed`.
    pub fn new(widths: &[usize], seed: u64) -> Result<Self> {
        Self::check_widths(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = layer_shapes(widths);
        let total = shapes.last().map_or(0, |s| s.offset + s.len());
        let mut params = vec![0.0; total];
        for s in &shapes {
            let bound = (6.0 / (s.inputs + s.outputs) as f64).sqrt();
            for p in &mut params[s.offset..s.offset + s.weight_len()] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
        })
    }

    /// Single linear layer `dim → dim` with identity weights and zero bias.
    pub fn identity(dim: usize) -> Result<Self> {
        let mut model = Self::new(&[dim, dim], 0)?;
        model.params.iter_mut().for_each(|p| *p = 0.0);
        for i in 0..dim {
            model.params[i * dim + i] = 1.0;
        }
        Ok(model)
    }

    /// `[D_in, 128, 64]`.
    pub fn default_widths(input_dim: usize) -> Vec<usize> {
        vec![input_dim, DEFAULT_HIDDEN, DEFAULT_EMBED]
    }

    pub fn from_parts(widths: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        Self::check_widths(&widths)?;
        let expect: usize = layer_shapes(&widths).iter().map(LayerShape::len).sum();
        if params.len() != expect {
            return Err(Error::Validation(format!(
                "{} parameters supplied for widths {widths:?}, expected {expect}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(Self { widths, params })
    }

    fn check_widths(widths: &[usize]) -> Result<()> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Parameter(format!(
                "encoder needs at least two nonzero widths, got {widths:?}"
            )));
        }
        Ok(())
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer(&self, s: &LayerShape) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let w = &self.params[s.offset..s.offset + s.weight_len()];
        let b = &self.params[s.offset + s.weight_len()..s.offset + s.len()];
        (
            ArrayView2::from_shape((s.outputs, s.inputs), w).unwrap(),
            ArrayView1::from(b),
        )
    }

    /// Embeds a `B × D_in` batch and keeps what backward needs.
    pub fn forward(&self, inputs: ArrayView2<'_, f64>) -> Result<(EmbeddingMatrix, ForwardCache)> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::Parameter(format!(
                "input has {} columns, encoder expects {}",
                inputs.ncols(),
                self.input_dim()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite encoder input".into()));
        }
        let shapes = layer_shapes(&self.widths);
        let mut layer_inputs = Vec::with_capacity(shapes.len());
        let mut x = inputs.to_owned();
        for (l, s) in shapes.iter().enumerate() {
            let (w, b) = self.layer(s);
            let mut z = x.dot(&w.t());
            z += &b;
            layer_inputs.push(x);
            if l + 1 < shapes.len() {
                z.mapv_inplace(f64::tanh);
            }
            x = z;
        }
        let norms: Array1<f64> = x
            .outer_iter()
            .map(|row| (row.dot(&row) + NORM_EPS).sqrt())
            .collect();
        for (mut row, &n) in x.outer_iter_mut().zip(norms.iter()) {
            row /= n;
        }
        let emb = EmbeddingMatrix::new(x.clone())?;
        Ok((
            emb,
            ForwardCache {
                layer_inputs,
                unit: x,
                norms,
            },
        ))
    }

    /// Forward pass without keeping intermediates.
    pub fn embed(&self, inputs: ArrayView2<'_, f64>) -> Result<EmbeddingMatrix> {
        Ok(self.forward(inputs)?.0)
    }

    /// Gradient of a loss with respect to all parameters, given its
    /// gradient with respect to the normalized embeddings. Contributions
    /// are summed over the batch.
    pub fn backward(&self, cache: &ForwardCache, grad_emb: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let shapes = layer_shapes(&self.widths);
        if grad_emb.dim() != cache.unit.dim() || cache.layer_inputs.len() != shapes.len() {
            return Err(Error::Parameter(format!(
                "gradient shape {:?} does not match the forward cache {:?}",
                grad_emb.dim(),
                cache.unit.dim()
            )));
        }
        // d(v/n)/dv = (I - u u^T) / n
        let mut g = grad_emb.to_owned();
        for ((mut gr, u), &n) in g.outer_iter_mut().zip(cache.unit.outer_iter()).zip(cache.norms.iter()) {
            let along = u.dot(&gr);
            gr.scaled_add(-along, &u);
            gr /= n;
        }

        let mut grads = vec![0.0; self.params.len()];
        for (l, s) in shapes.iter().enumerate().rev() {
            let x = &cache.layer_inputs[l];
            let gw = g.t().dot(x);
            let gb = g.sum_axis(Axis(0));
            let (wslot, bslot) = grads[s.offset..s.offset + s.len()].split_at_mut(s.weight_len());
            wslot.copy_from_slice(gw.as_standard_layout().as_slice().unwrap());
            bslot.copy_from_slice(gb.as_slice().unwrap());
            if l > 0 {
                let (w, _) = self.layer(s);
                let mut gx = g.dot(&w);
                // x = tanh(z) for every layer input after the first
                gx.zip_mut_with(x, |gv, &h| *gv *= 1.0 - h * h);
                g = gx;
            }
        }
        Ok(grads)
    }
}

/// Adam moments plus the step learning-rate schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epoch used to look up the scheduled learning rate.
    pub epoch: u64,
}

impl OptimizerState {
    pub fn new(num_params: usize, base_lr: f64, weight_decay: f64, decay_factor: f64, decay_every: u64) -> Self {
        Self {
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step: 0,
            base_lr,
            weight_decay,
            decay_factor,
            decay_every: decay_every.max(1),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epoch: 0,
        }
    }

    /// `base_lr * decay_factor^(epoch / decay_every)`.
    pub fn lr_at(&self, epoch: u64) -> f64 {
        self.base_lr * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }

    pub fn current_lr(&self) -> f64 {
        self.lr_at(self.epoch)
    }
}

/// One AdamW update: `θ ← θ − lr·wd·θ`, then the bias-corrected Adam step.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut OptimizerState) -> Result<()> {
    if grads.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(Error::Parameter(format!(
            "{} gradients / {} moments for {} parameters",
            grads.len(),
            state.first_moment.len(),
            params.len()
        )));
    }
    state.step += 1;
    let lr = state.current_lr();
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *p -= lr * state.weight_decay * *p;
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Model, optimizer state and epoch counter as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: EncoderModel,
    pub optimizer: OptimizerState,
    pub epoch: u64,
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    (0..n).map(|_| get_f64(r)).collect()
}

impl Checkpoint {
    /// Layout (little-endian): `"HHCK"`, u32 version, u32 layer-width
    /// count, u32 widths, u64 parameter count, f64 parameters, optimizer
    /// (u64 step, f64 base_lr, f64 weight_decay, f64 decay_factor,
    /// u64 decay_every, f64 beta1, f64 beta2, f64 eps, u64 schedule epoch,
    /// f64 first moments, f64 second moments), u64 epoch counter.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        put_u32(&mut w, CHECKPOINT_VERSION)?;
        put_u32(&mut w, self.model.widths.len() as u32)?;
        for &width in &self.model.widths {
            put_u32(&mut w, width as u32)?;
        }
        put_u64(&mut w, self.model.params.len() as u64)?;
        for &p in &self.model.params {
            put_f64(&mut w, p)?;
        }
        let o = &self.optimizer;
        put_u64(&mut w, o.step)?;
        for v in [o.base_lr, o.weight_decay, o.decay_factor] {
            put_f64(&mut w, v)?;
        }
        put_u64(&mut w, o.decay_every)?;
        for v in [o.beta1, o.beta2, o.eps] {
            put_f64(&mut w, v)?;
        }
        put_u64(&mut w, o.epoch)?;
        for &v in o.first_moment.iter().chain(&o.second_moment) {
            put_f64(&mut w, v)?;
        }
        put_u64(&mut w, self.epoch)?;
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("checkpoint too short".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let version = get_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let n_widths = get_u32(&mut r)? as usize;
        if n_widths > 1024 {
            return Err(Error::Format(format!("implausible layer count {n_widths}")));
        }
        let widths = (0..n_widths)
            .map(|_| get_u32(&mut r).map(|v| v as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        let n_params = get_u64(&mut r)? as usize;
        let expect: usize = layer_shapes(&widths).iter().map(LayerShape::len).sum();
        if n_params != expect {
            return Err(Error::Format(format!(
                "checkpoint declares {n_params} parameters, widths imply {expect}"
            )));
        }
        let params = get_f64s(&mut r, n_params)?;
        let step = get_u64(&mut r)?;
        let base_lr = get_f64(&mut r)?;
        let weight_decay = get_f64(&mut r)?;
        let decay_factor = get_f64(&mut r)?;
        let decay_every = get_u64(&mut r)?;
        let beta1 = get_f64(&mut r)?;
        let beta2 = get_f64(&mut r)?;
        let eps = get_f64(&mut r)?;
        let sched_epoch = get_u64(&mut r)?;
        let first_moment = get_f64s(&mut r, n_params)?;
        let second_moment = get_f64s(&mut r, n_params)?;
        let epoch = get_u64(&mut r)?;
        Ok(Self {
            model: EncoderModel::from_parts(widths, params)?,
            optimizer: OptimizerState {
                first_moment,
                second_moment,
                step,
                base_lr,
                weight_decay,
                decay_factor,
                decay_every,
                beta1,
                beta2,
                eps,
                epoch: sched_epoch,
            },
            epoch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
