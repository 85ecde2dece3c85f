//! Define-once, run-many computation graphs with reverse-mode gradients.
//!
//! A [`Program`] is an ordered list of layer applications over registers.
//! Running it in train mode records the cached intermediates ([`Execution`])
//! that [`Program::backward`] consumes in exact reverse order to populate
//! parameter gradients. Running it in infer mode uses batch-norm running
//! statistics and records nothing that training would need.
//!
//! Parameters live in a [`Params`] registry under stable dotted names, which
//! is also the unit of checkpoint serialization. Parameter values are kept on
//! the `f32` grid at all times (initialization and every update round through
//! `f32`), so writing and re-reading a checkpoint is lossless.

use crate::error::{Error, Result};
use crate::layers::{self, BnCache};
use crate::rng::Rng;
use crate::tensor::{Fill, Shape, Tensor};

/// Handle to one named parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Optimizers update trainable entries; batch-norm running statistics
    /// are registered non-trainable and updated by the forward pass itself.
    pub trainable: bool,
}

/// Named parameter registry.
#[derive(Debug, Clone, Default)]
pub struct Params {
    entries: Vec<ParamEntry>,
}

impl Params {
    pub fn register(&mut self, name: impl Into<String>, mut value: Tensor, trainable: bool) -> ParamId {
        round_to_f32(&mut value);
        if trainable {
            value.alloc_grad();
        }
        self.entries.push(ParamEntry { name: name.into(), value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn by_name(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.value.zero_grad();
        }
    }

    fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor) {
        let entry = &mut self.entries[id.0];
        entry.value.alloc_grad();
        let g = entry.value.grad_mut().unwrap();
        for (a, b) in g.iter_mut().zip(grad.data()) {
            *a += b;
        }
    }

    fn accumulate_grad_slice(&mut self, id: ParamId, grad: &[f64]) {
        let entry = &mut self.entries[id.0];
        entry.value.alloc_grad();
        let g = entry.value.grad_mut().unwrap();
        for (a, b) in g.iter_mut().zip(grad) {
            *a += b;
        }
    }
}

/// Snap a tensor's values onto the `f32` grid.
pub fn round_to_f32(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = *v as f32 as f64;
    }
}

/// Register index inside a program. Registers `0..n_inputs` are the program
/// inputs; instruction `i` writes register `n_inputs + i`.
pub type Reg = usize;

/// One layer application.
#[derive(Debug, Clone)]
pub enum Op {
    Conv {
        weights: ParamId,
        bias: Option<ParamId>,
        stride: usize,
        pad: (usize, usize),
    },
    BatchNorm {
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
        momentum: f64,
        epsilon: f64,
    },
    LeakyRelu { alpha: f64 },
    Sigmoid,
    MaxPool { window: usize, stride: usize },
    Upsample { factor: usize },
    Crop { top: usize, bottom: usize, left: usize, right: usize },
    /// Elementwise sum of two registers.
    Add,
    /// Channel concatenation of two registers (first's channels lead).
    ConcatChannels,
    Clamp01,
}

#[derive(Debug, Clone)]
pub struct Instr {
    pub op: Op,
    pub inputs: Vec<Reg>,
    /// Builder-assigned stage name, used in error messages.
    pub stage: String,
}

/// Forward/backward mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone)]
pub struct Program {
    pub n_inputs: usize,
    pub instrs: Vec<Instr>,
    /// Named probe points for inspecting intermediate shapes and values.
    pub taps: Vec<(String, Reg)>,
}

enum NodeCache {
    None,
    MaxPool(Vec<usize>),
    Bn(BnCache),
}

/// The recorded result of one forward pass: every register value plus the
/// per-instruction caches backward needs. Consumed by [`Program::backward`].
pub struct Execution {
    pub values: Vec<Tensor>,
    caches: Vec<NodeCache>,
    mode: Mode,
}

impl Execution {
    pub fn output(&self, reg: Reg) -> &Tensor {
        &self.values[reg]
    }

    pub fn tap<'a>(&'a self, program: &Program, name: &str) -> Option<&'a Tensor> {
        program
            .taps
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, reg)| &self.values[*reg])
    }
}

struct BnUpdate {
    running_mean: ParamId,
    running_var: ParamId,
    mean: Vec<f64>,
    var: Vec<f64>,
    momentum: f64,
}

impl Program {
    pub fn last_reg(&self) -> Reg {
        self.n_inputs + self.instrs.len() - 1
    }

    /// Train-mode forward: batch statistics drive normalization layers and
    /// running statistics are folded in place.
    pub fn run_train(&self, params: &mut Params, inputs: Vec<Tensor>) -> Result<Execution> {
        let (exec, updates) = self.run_impl(params, inputs, Mode::Train)?;
        for u in updates {
            apply_bn_update(params, u);
        }
        Ok(exec)
    }

    /// Infer-mode forward: read-only over parameters, shareable across
    /// threads. Not usable for backward.
    pub fn run_infer(&self, params: &Params, inputs: Vec<Tensor>) -> Result<Execution> {
        let (exec, _) = self.run_impl(params, inputs, Mode::Infer)?;
        Ok(exec)
    }

    fn run_impl(
        &self,
        params: &Params,
        inputs: Vec<Tensor>,
        mode: Mode,
    ) -> Result<(Execution, Vec<BnUpdate>)> {
        if inputs.len() != self.n_inputs {
            return Err(Error::Param(format!(
                "program expects {} inputs, got {}",
                self.n_inputs,
                inputs.len()
            )));
        }
        let mut values = inputs;
        values.reserve(self.instrs.len());
        let mut caches = Vec::with_capacity(self.instrs.len());
        let mut updates = Vec::new();

        for instr in &self.instrs {
            let a = &values[instr.inputs[0]];
            let (out, cache) = match &instr.op {
                Op::Conv { weights, bias, stride, pad } => {
                    let w = params.get(*weights);
                    let b = bias.map(|id| params.get(id));
                    let y = layers::conv_forward(a, w, b, *stride, *pad)
                        .map_err(|e| stage_err(&instr.stage, e))?;
                    (y, NodeCache::None)
                }
                Op::BatchNorm { gamma, beta, running_mean, running_var, momentum, epsilon } => {
                    let g = params.get(*gamma).data();
                    let b = params.get(*beta).data();
                    match mode {
                        Mode::Train => {
                            let (y, cache) =
                                layers::batchnorm_forward_train(a, g, b, *epsilon)
                                    .map_err(|e| stage_err(&instr.stage, e))?;
                            updates.push(BnUpdate {
                                running_mean: *running_mean,
                                running_var: *running_var,
                                mean: cache.mean.clone(),
                                var: cache.var.clone(),
                                momentum: *momentum,
                            });
                            (y, NodeCache::Bn(cache))
                        }
                        Mode::Infer => {
                            let rm = params.get(*running_mean).data();
                            let rv = params.get(*running_var).data();
                            let y = layers::batchnorm_forward_infer(a, g, b, rm, rv, *epsilon)
                                .map_err(|e| stage_err(&instr.stage, e))?;
                            (y, NodeCache::None)
                        }
                    }
                }
                Op::LeakyRelu { alpha } => (layers::leaky_relu(a, *alpha), NodeCache::None),
                Op::Sigmoid => (layers::sigmoid(a), NodeCache::None),
                Op::MaxPool { window, stride } => {
                    let (y, argmax) = layers::maxpool_forward(a, *window, *stride)
                        .map_err(|e| stage_err(&instr.stage, e))?;
                    (y, NodeCache::MaxPool(argmax))
                }
                Op::Upsample { factor } => (layers::upsample_nearest(a, *factor), NodeCache::None),
                Op::Crop { top, bottom, left, right } => {
                    let y = a
                        .crop2d(((*top, *bottom), (*left, *right)))
                        .map_err(|e| stage_err(&instr.stage, e))?;
                    (y, NodeCache::None)
                }
                Op::Add => {
                    let b = &values[instr.inputs[1]];
                    (a.add(b).map_err(|e| stage_err(&instr.stage, e))?, NodeCache::None)
                }
                Op::ConcatChannels => {
                    let b = &values[instr.inputs[1]];
                    (
                        Tensor::concat_channels(a, b).map_err(|e| stage_err(&instr.stage, e))?,
                        NodeCache::None,
                    )
                }
                Op::Clamp01 => (layers::clamp01(a), NodeCache::None),
            };
            values.push(out);
            caches.push(cache);
        }
        Ok((Execution { values, caches, mode }, updates))
    }

    /// Reverse-mode sweep. `seeds` are `(register, upstream gradient)` pairs;
    /// parameter gradients accumulate into `params` and the gradients with
    /// respect to the program inputs are returned. Consumes the execution,
    /// so a tape cannot be walked twice.
    pub fn backward(
        &self,
        exec: Execution,
        params: &mut Params,
        seeds: Vec<(Reg, Tensor)>,
    ) -> Result<Vec<Option<Tensor>>> {
        if exec.mode != Mode::Train {
            return Err(Error::State("backward requires a train-mode forward pass".into()));
        }
        if seeds.is_empty() {
            return Err(Error::State("backward called with no gradient seeds".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..exec.values.len()).map(|_| None).collect();
        for (reg, seed) in seeds {
            if seed.shape() != exec.values[reg].shape() {
                return Err(Error::Shape(format!(
                    "seed for register {reg} has shape {}, value has {}",
                    seed.shape(),
                    exec.values[reg].shape()
                )));
            }
            accumulate(&mut grads[reg], &seed);
        }

        for (i, instr) in self.instrs.iter().enumerate().rev() {
            let out_reg = self.n_inputs + i;
            let Some(grad_out) = grads[out_reg].take() else {
                continue;
            };
            let x = &exec.values[instr.inputs[0]];
            match &instr.op {
                Op::Conv { weights, bias, stride, pad } => {
                    let w = params.get(*weights).clone();
                    let g = layers::conv_backward(x, &w, bias.is_some(), *stride, *pad, &grad_out)?;
                    params.accumulate_grad(*weights, &g.weights);
                    if let (Some(bid), Some(gb)) = (bias, g.bias) {
                        params.accumulate_grad(*bid, &gb);
                    }
                    accumulate(&mut grads[instr.inputs[0]], &g.input);
                }
                Op::BatchNorm { gamma, beta, .. } => {
                    let NodeCache::Bn(cache) = &exec.caches[i] else {
                        return Err(Error::State("batchnorm cache missing".into()));
                    };
                    let g = params.get(*gamma).data().to_vec();
                    let (gx, ggamma, gbeta) = layers::batchnorm_backward(x, &g, cache, &grad_out);
                    params.accumulate_grad_slice(*gamma, &ggamma);
                    params.accumulate_grad_slice(*beta, &gbeta);
                    accumulate(&mut grads[instr.inputs[0]], &gx);
                }
                Op::LeakyRelu { alpha } => {
                    let gx = layers::leaky_relu_backward(x, *alpha, &grad_out);
                    accumulate(&mut grads[instr.inputs[0]], &gx);
                }
                Op::Sigmoid => {
                    let y = &exec.values[out_reg];
                    let gx = layers::sigmoid_backward(y, &grad_out);
                    accumulate(&mut grads[instr.inputs[0]], &gx);
                }
                Op::MaxPool { .. } => {
                    let NodeCache::MaxPool(argmax) = &exec.caches[i] else {
                        return Err(Error::State("maxpool cache missing".into()));
                    };
                    let gx = layers::maxpool_backward(&grad_out, argmax, x.shape());
                    accumulate(&mut grads[instr.inputs[0]], &gx);
                }
                Op::Upsample { factor } => {
                    let gx = layers::upsample_backward(&grad_out, *factor, x.shape());
                    accumulate(&mut grads[instr.inputs[0]], &gx);
                }
                Op::Crop { top, left, .. } => {
                    let mut gx = Tensor::zeros(x.shape());
                    let gs = grad_out.shape();
                    for n in 0..gs.batch {
                        for c in 0..gs.channels {
                            let src = grad_out.plane(n, c);
                            let xw = x.shape().width;
                            let dst = gx.plane_mut(n, c);
                            for y in 0..gs.height {
                                let doff = (y + top) * xw + left;
                                for (d, s) in dst[doff..doff + gs.width]
                                    .iter_mut()
                                    .zip(&src[y * gs.width..(y + 1) * gs.width])
                                {
                                    *d += s;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[instr.inputs[0]], &gx);
                }
                Op::Add => {
                    accumulate(&mut grads[instr.inputs[0]], &grad_out);
                    accumulate(&mut grads[instr.inputs[1]], &grad_out);
                }
                Op::ConcatChannels => {
                    let ca = exec.values[instr.inputs[0]].shape().channels;
                    let cb = exec.values[instr.inputs[1]].shape().channels;
                    let ga = grad_out.slice_channels(0, ca)?;
                    let gb = grad_out.slice_channels(ca, ca + cb)?;
                    accumulate(&mut grads[instr.inputs[0]], &ga);
                    accumulate(&mut grads[instr.inputs[1]], &gb);
                }
                Op::Clamp01 => {
                    let gx = layers::clamp01_backward(x, &grad_out);
                    accumulate(&mut grads[instr.inputs[0]], &gx);
                }
            }
        }
        Ok(grads.into_iter().take(self.n_inputs).collect())
    }
}

fn accumulate(slot: &mut Option<Tensor>, grad: &Tensor) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(grad.data()) {
                *a += b;
            }
        }
        None => *slot = Some(grad.clone()),
    }
}

fn apply_bn_update(params: &mut Params, u: BnUpdate) {
    let m = u.momentum;
    {
        let rm = params.get_mut(u.running_mean);
        for (r, b) in rm.data_mut().iter_mut().zip(&u.mean) {
            *r = (m * *r + (1.0 - m) * b) as f32 as f64;
        }
    }
    let rv = params.get_mut(u.running_var);
    for (r, b) in rv.data_mut().iter_mut().zip(&u.var) {
        *r = (m * *r + (1.0 - m) * b) as f32 as f64;
    }
}

fn stage_err(stage: &str, e: Error) -> Error {
    match e {
        Error::Shape(msg) => Error::Shape(format!("[{stage}] {msg}")),
        Error::Param(msg) => Error::Param(format!("[{stage}] {msg}")),
        other => other,
    }
}

/// Incrementally assembles a [`Program`] plus its [`Params`], tracking
/// per-register `(channels, height, width)` so geometry errors surface at
/// build time with the offending stage named.
pub struct GraphBuilder {
    pub params: Params,
    n_inputs: usize,
    instrs: Vec<Instr>,
    taps: Vec<(String, Reg)>,
    /// (channels, height, width) per register; batch is runtime-determined.
    shapes: Vec<(usize, usize, usize)>,
}

impl GraphBuilder {
    pub fn new(inputs: &[(usize, usize, usize)]) -> Self {
        GraphBuilder {
            params: Params::default(),
            n_inputs: inputs.len(),
            instrs: Vec::new(),
            taps: Vec::new(),
            shapes: inputs.to_vec(),
        }
    }

    pub fn shape(&self, reg: Reg) -> (usize, usize, usize) {
        self.shapes[reg]
    }

    pub fn finish(self) -> (Program, Params) {
        (
            Program { n_inputs: self.n_inputs, instrs: self.instrs, taps: self.taps },
            self.params,
        )
    }

    pub fn tap(&mut self, name: impl Into<String>, reg: Reg) {
        self.taps.push((name.into(), reg));
    }

    fn push(&mut self, stage: &str, op: Op, inputs: Vec<Reg>, out_shape: (usize, usize, usize)) -> Reg {
        self.instrs.push(Instr { op, inputs, stage: stage.to_string() });
        self.shapes.push(out_shape);
        self.n_inputs + self.instrs.len() - 1
    }

    /// Conventional convolution; weights drawn He-normal, bias zeros.
    pub fn conv(
        &mut self,
        stage: &str,
        x: Reg,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Result<Reg> {
        let (c, h, w) = self.shapes[x];
        let oh = checked_out_dim(stage, h, kernel, stride, pad)?;
        let ow = checked_out_dim(stage, w, kernel, stride, pad)?;
        let weights = Tensor::new(
            Shape::new(out_channels, c, kernel, kernel),
            Fill::HeNormal { fan_in: c * kernel * kernel },
            rng,
        )?;
        let wid = self.params.register(format!("{stage}.weight"), weights, true);
        let bid = if bias {
            let b = Tensor::zeros(Shape::new(1, 1, 1, out_channels));
            Some(self.params.register(format!("{stage}.bias"), b, true))
        } else {
            None
        };
        Ok(self.push(
            stage,
            Op::Conv { weights: wid, bias: bid, stride, pad: (pad, pad) },
            vec![x],
            (out_channels, oh, ow),
        ))
    }

    /// Spatially separable convolution: 1xK (d -> D, width padding) then Kx1
    /// (D -> D, height padding, stride). No bias; these stages feed batch norm.
    pub fn sepconv(
        &mut self,
        stage: &str,
        x: Reg,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Result<Reg> {
        let (c, h, w) = self.shapes[x];
        let pad = kernel / 2;
        let mid_w = checked_out_dim(stage, w, kernel, 1, pad)?;
        let oh = checked_out_dim(stage, h, kernel, stride, pad)?;
        let ow = checked_out_dim(stage, mid_w, 1, stride, 0)?;
        let w_row = Tensor::new(
            Shape::new(out_channels, c, 1, kernel),
            Fill::HeNormal { fan_in: c * kernel },
            rng,
        )?;
        let w_col = Tensor::new(
            Shape::new(out_channels, out_channels, kernel, 1),
            Fill::HeNormal { fan_in: out_channels * kernel },
            rng,
        )?;
        let row_id = self.params.register(format!("{stage}.row_weight"), w_row, true);
        let col_id = self.params.register(format!("{stage}.col_weight"), w_col, true);
        let mid = self.push(
            stage,
            Op::Conv { weights: row_id, bias: None, stride: 1, pad: (0, pad) },
            vec![x],
            (out_channels, h, mid_w),
        );
        Ok(self.push(
            stage,
            Op::Conv { weights: col_id, bias: None, stride, pad: (pad, 0) },
            vec![mid],
            (out_channels, oh, ow),
        ))
    }

    /// Nearest-neighbor upsample by `factor` followed by a size-preserving
    /// stride-1 convolution.
    pub fn resized_conv(
        &mut self,
        stage: &str,
        x: Reg,
        out_channels: usize,
        kernel: usize,
        factor: usize,
        rng: &mut Rng,
    ) -> Result<Reg> {
        let up = self.upsample(stage, x, factor);
        self.conv(stage, up, out_channels, kernel, 1, kernel / 2, false, rng)
    }

    pub fn upsample(&mut self, stage: &str, x: Reg, factor: usize) -> Reg {
        let (c, h, w) = self.shapes[x];
        self.push(stage, Op::Upsample { factor }, vec![x], (c, h * factor, w * factor))
    }

    pub fn batchnorm(&mut self, stage: &str, x: Reg) -> Reg {
        let (c, h, w) = self.shapes[x];
        let gamma = self.params.register(
            format!("{stage}.bn_gamma"),
            Tensor::full(Shape::new(1, 1, 1, c), 1.0),
            true,
        );
        let beta = self.params.register(
            format!("{stage}.bn_beta"),
            Tensor::zeros(Shape::new(1, 1, 1, c)),
            true,
        );
        let running_mean = self.params.register(
            format!("{stage}.bn_running_mean"),
            Tensor::zeros(Shape::new(1, 1, 1, c)),
            false,
        );
        let running_var = self.params.register(
            format!("{stage}.bn_running_var"),
            Tensor::full(Shape::new(1, 1, 1, c), 1.0),
            false,
        );
        self.push(
            stage,
            Op::BatchNorm {
                gamma,
                beta,
                running_mean,
                running_var,
                momentum: 0.99,
                epsilon: 1e-5,
            },
            vec![x],
            (c, h, w),
        )
    }

    pub fn leaky_relu(&mut self, stage: &str, x: Reg, alpha: f64) -> Reg {
        let s = self.shapes[x];
        self.push(stage, Op::LeakyRelu { alpha }, vec![x], s)
    }

    pub fn sigmoid(&mut self, stage: &str, x: Reg) -> Reg {
        let s = self.shapes[x];
        self.push(stage, Op::Sigmoid, vec![x], s)
    }

    pub fn clamp01(&mut self, stage: &str, x: Reg) -> Reg {
        let s = self.shapes[x];
        self.push(stage, Op::Clamp01, vec![x], s)
    }

    pub fn maxpool(&mut self, stage: &str, x: Reg, window: usize, stride: usize) -> Result<Reg> {
        let (c, h, w) = self.shapes[x];
        let oh = checked_out_dim(stage, h, window, stride, 0)?;
        let ow = checked_out_dim(stage, w, window, stride, 0)?;
        Ok(self.push(stage, Op::MaxPool { window, stride }, vec![x], (c, oh, ow)))
    }

    /// Crop symmetrically (extra pixel on the trailing side) down to target.
    pub fn crop_to(&mut self, stage: &str, x: Reg, target: (usize, usize)) -> Result<Reg> {
        let (c, h, w) = self.shapes[x];
        let (th, tw) = target;
        if th > h || tw > w {
            return Err(Error::Shape(format!(
                "[{stage}] cannot crop {h}x{w} up to {th}x{tw}"
            )));
        }
        let dh = h - th;
        let dw = w - tw;
        let (top, bottom) = (dh / 2, dh - dh / 2);
        let (left, right) = (dw / 2, dw - dw / 2);
        Ok(self.push(stage, Op::Crop { top, bottom, left, right }, vec![x], (c, th, tw)))
    }

    pub fn add(&mut self, stage: &str, a: Reg, b: Reg) -> Result<Reg> {
        if self.shapes[a] != self.shapes[b] {
            return Err(Error::Shape(format!(
                "[{stage}] add operands disagree: {:?} vs {:?}",
                self.shapes[a], self.shapes[b]
            )));
        }
        let s = self.shapes[a];
        Ok(self.push(stage, Op::Add, vec![a, b], s))
    }

    pub fn concat(&mut self, stage: &str, a: Reg, b: Reg) -> Result<Reg> {
        let (ca, ha, wa) = self.shapes[a];
        let (cb, hb, wb) = self.shapes[b];
        if (ha, wa) != (hb, wb) {
            return Err(Error::Shape(format!(
                "[{stage}] concat spatial mismatch: {ha}x{wa} vs {hb}x{wb}"
            )));
        }
        Ok(self.push(stage, Op::ConcatChannels, vec![a, b], (ca + cb, ha, wa)))
    }
}

fn checked_out_dim(stage: &str, input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let out = layers::out_dim(input, kernel, stride, pad)
        .map_err(|e| stage_err(stage, e))?;
    if out == 0 {
        return Err(Error::Shape(format!("[{stage}] output dimension collapsed to zero")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_without_forward_is_a_state_error() {
        let mut b = GraphBuilder::new(&[(1, 4, 4)]);
        let y = b.leaky_relu("act", 0, 0.1);
        let (program, mut params) = b.finish();
        let exec = program
            .run_infer(&params, vec![Tensor::zeros(Shape::new(1, 1, 4, 4))])
            .unwrap();
        let seed = Tensor::full(Shape::new(1, 1, 4, 4), 1.0);
        assert!(program.backward(exec, &mut params, vec![(y, seed)]).is_err());
    }

    #[test]
    fn single_leaky_relu_backward() {
        let mut b = GraphBuilder::new(&[(1, 1, 1)]);
        let y = b.leaky_relu("act", 0, 0.1);
        let (program, mut params) = b.finish();
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![-3.0]).unwrap();
        let exec = program.run_train(&mut params, vec![x]).unwrap();
        let seed = Tensor::full(Shape::new(1, 1, 1, 1), 1.0);
        let input_grads = program.backward(exec, &mut params, vec![(y, seed)]).unwrap();
        let g = input_grads[0].as_ref().unwrap();
        assert!((g.data()[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn zero_upstream_grad_zeroes_param_grads() {
        let mut rng = Rng::new(2);
        let mut b = GraphBuilder::new(&[(2, 4, 4)]);
        let y = b.conv("conv", 0, 3, 3, 1, 1, true, &mut rng).unwrap();
        let (program, mut params) = b.finish();
        let x = Tensor::new(Shape::new(1, 2, 4, 4), Fill::Uniform { lo: -1.0, hi: 1.0 }, &mut rng)
            .unwrap();
        let exec = program.run_train(&mut params, vec![x]).unwrap();
        let seed = Tensor::zeros(Shape::new(1, 3, 4, 4));
        program.backward(exec, &mut params, vec![(y, seed)]).unwrap();
        for entry in params.entries() {
            if let Some(g) = entry.value.grad() {
                assert!(g.iter().all(|&v| v == 0.0), "{}", entry.name);
            }
        }
    }

    #[test]
    fn residual_add_routes_gradient_to_both_branches() {
        // y = x + leaky_relu(x); dy/dx = 1 + slope
        let mut b = GraphBuilder::new(&[(1, 2, 2)]);
        let act = b.leaky_relu("act", 0, 0.5);
        let y = b.add("sum", 0, act).unwrap();
        let (program, mut params) = b.finish();
        let x = Tensor::full(Shape::new(1, 1, 2, 2), 2.0);
        let exec = program.run_train(&mut params, vec![x]).unwrap();
        let seed = Tensor::full(Shape::new(1, 1, 2, 2), 1.0);
        let gx = program.backward(exec, &mut params, vec![(y, seed)]).unwrap();
        for &v in gx[0].as_ref().unwrap().data() {
            assert!((v - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn concat_backward_splits_channels() {
        let mut b = GraphBuilder::new(&[(1, 2, 2), (2, 2, 2)]);
        let y = b.concat("cat", 0, 1).unwrap();
        let (program, mut params) = b.finish();
        let a = Tensor::zeros(Shape::new(1, 1, 2, 2));
        let bt = Tensor::zeros(Shape::new(1, 2, 2, 2));
        let exec = program.run_train(&mut params, vec![a, bt]).unwrap();
        let mut seed = Tensor::zeros(Shape::new(1, 3, 2, 2));
        seed.plane_mut(0, 0).iter_mut().for_each(|v| *v = 1.0);
        seed.plane_mut(0, 2).iter_mut().for_each(|v| *v = 5.0);
        let gx = program.backward(exec, &mut params, vec![(y, seed)]).unwrap();
        assert!(gx[0].as_ref().unwrap().data().iter().all(|&v| v == 1.0));
        let gb = gx[1].as_ref().unwrap();
        assert!(gb.plane(0, 0).iter().all(|&v| v == 0.0));
        assert!(gb.plane(0, 1).iter().all(|&v| v == 5.0));
    }

    #[test]
    fn params_are_f32_exact() {
        let mut rng = Rng::new(3);
        let mut b = GraphBuilder::new(&[(4, 4, 4)]);
        b.conv("conv", 0, 4, 3, 1, 1, false, &mut rng).unwrap();
        let (_, params) = b.finish();
        for entry in params.entries() {
            for &v in entry.value.data() {
                assert_eq!(v, v as f32 as f64);
            }
        }
    }
}
