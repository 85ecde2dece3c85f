//! The two-block detection network.
//!
//! A main block turns the depth image into a first likelihood map `C`; a
//! hypothesis reinforcement block consumes the image concatenated with `C`
//! and emits a correction that is added back onto `C` and clamped to `[0,1]`,
//! yielding the polished map. Both blocks are encoder-decoder stacks of
//! residual blocks:
//!
//! * `ECB` (encoding): bottleneck with a spatially separable mid stage and a
//!   projected shortcut; stride on the first 1x1 downsamples.
//! * `DCB` (decoding): same topology, but the mid stage and the shortcut are
//!   resized convolutions that upsample by the block factor.
//! * `IB` (identity): size-preserving bottleneck with an identity shortcut.
//!
//! Spatially separable convolutions appear only where the cost model says
//! they win: the KxK mid stages, where input and output depth are equal and
//! the `d > D/(K-1)` condition holds. The 7x7 stems (depth 1 or 2 in) and all
//! 1x1 convolutions stay conventional.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Execution, GraphBuilder, Mode, Params, Program, Reg};
use crate::tensor::Tensor;
#[cfg(test)]
use crate::tensor::Shape;

/// Negative slope shared by every Leaky ReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Residual block family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Encode,
    Decode,
    Identity,
}

/// One residual block: `filters` are the three internal layer widths
/// `(a, b, c)`; `c` is the output channel count.
#[derive(Debug, Clone, Copy)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub filters: (usize, usize, usize),
    pub kernel: usize,
    pub stride: usize,
}

/// Append one residual block to `builder`, returning the output register.
pub fn build_block(
    builder: &mut GraphBuilder,
    stage: &str,
    x: Reg,
    spec: &BlockSpec,
    rng: &mut Rng,
) -> Result<Reg> {
    let (a, b, c) = spec.filters;
    let k = spec.kernel;
    let s = spec.stride;
    let main1 = format!("{stage}.main1");
    let main2 = format!("{stage}.main2");
    let main3 = format!("{stage}.main3");
    let short = format!("{stage}.shortcut");

    let main = match spec.kind {
        BlockKind::Encode | BlockKind::Identity => {
            let stride1 = if spec.kind == BlockKind::Encode { s } else { 1 };
            let m = builder.conv(&main1, x, a, 1, stride1, 0, false, rng)?;
            let m = builder.batchnorm(&main1, m);
            let m = builder.leaky_relu(&main1, m, LEAKY_SLOPE);
            let m = builder.sepconv(&main2, m, b, k, 1, rng)?;
            let m = builder.batchnorm(&main2, m);
            let m = builder.leaky_relu(&main2, m, LEAKY_SLOPE);
            let m = builder.conv(&main3, m, c, 1, 1, 0, false, rng)?;
            builder.batchnorm(&main3, m)
        }
        BlockKind::Decode => {
            let m = builder.conv(&main1, x, a, 1, 1, 0, false, rng)?;
            let m = builder.batchnorm(&main1, m);
            let m = builder.leaky_relu(&main1, m, LEAKY_SLOPE);
            let m = builder.resized_conv(&main2, m, b, k, s, rng)?;
            let m = builder.batchnorm(&main2, m);
            let m = builder.leaky_relu(&main2, m, LEAKY_SLOPE);
            let m = builder.conv(&main3, m, c, 1, 1, 0, false, rng)?;
            builder.batchnorm(&main3, m)
        }
    };

    let joined = match spec.kind {
        BlockKind::Encode => {
            let sc = builder.conv(&short, x, c, 1, s, 0, false, rng)?;
            let sc = builder.batchnorm(&short, sc);
            builder.add(stage, main, sc)?
        }
        BlockKind::Decode => {
            let sc = builder.resized_conv(&short, x, c, 1, s, rng)?;
            let sc = builder.batchnorm(&short, sc);
            builder.add(stage, main, sc)?
        }
        BlockKind::Identity => {
            let (in_c, _, _) = builder.shape(x);
            if in_c != c {
                return Err(Error::Shape(format!(
                    "[{stage}] identity block needs input channels {c}, got {in_c}"
                )));
            }
            builder.add(stage, main, x)?
        }
    };
    Ok(builder.leaky_relu(stage, joined, LEAKY_SLOPE))
}

fn scaled(base: usize, scale: f64) -> usize {
    ((base as f64 * scale).round() as usize).max(1)
}

fn ecb_ib(
    builder: &mut GraphBuilder,
    prefix: &str,
    idx: usize,
    x: Reg,
    filters: (usize, usize, usize),
    stride: usize,
    rng: &mut Rng,
) -> Result<Reg> {
    let ecb = build_block(
        builder,
        &format!("{prefix}.ecb{idx}"),
        x,
        &BlockSpec { kind: BlockKind::Encode, filters, kernel: 3, stride },
        rng,
    )?;
    builder.tap(format!("{prefix}.ecb{idx}"), ecb);
    let ib = build_block(
        builder,
        &format!("{prefix}.ib{idx}"),
        ecb,
        &BlockSpec { kind: BlockKind::Identity, filters, kernel: 3, stride: 1 },
        rng,
    )?;
    builder.tap(format!("{prefix}.ib{idx}"), ib);
    Ok(ib)
}

fn dcb_ib(
    builder: &mut GraphBuilder,
    prefix: &str,
    idx: usize,
    x: Reg,
    filters: (usize, usize, usize),
    stride: usize,
    rng: &mut Rng,
) -> Result<Reg> {
    let dcb = build_block(
        builder,
        &format!("{prefix}.dcb{idx}"),
        x,
        &BlockSpec { kind: BlockKind::Decode, filters, kernel: 3, stride },
        rng,
    )?;
    builder.tap(format!("{prefix}.dcb{idx}"), dcb);
    let ib = build_block(
        builder,
        &format!("{prefix}.ib{idx}"),
        dcb,
        &BlockSpec { kind: BlockKind::Identity, filters, kernel: 3, stride: 1 },
        rng,
    )?;
    builder.tap(format!("{prefix}.ib{idx}"), ib);
    Ok(ib)
}

/// Shared stem: 7x7 stride-2 convolution, batch norm, Leaky ReLU, 3x3
/// stride-3 max pooling.
fn stem(
    builder: &mut GraphBuilder,
    prefix: &str,
    x: Reg,
    width: usize,
    rng: &mut Rng,
) -> Result<Reg> {
    let stage = format!("{prefix}.stem");
    let c = builder.conv(&stage, x, width, 7, 2, 3, false, rng)?;
    builder.tap(format!("{prefix}.stem"), c);
    let c = builder.batchnorm(&stage, c);
    let c = builder.leaky_relu(&stage, c, LEAKY_SLOPE);
    let p = builder.maxpool(&format!("{prefix}.pool"), c, 3, 3)?;
    builder.tap(format!("{prefix}.pool"), p);
    Ok(p)
}

/// Append the main block to `builder`. `x` must be a single-channel register
/// of size `(h, w)`; the result is the first likelihood map at the same size.
pub fn build_main_block(
    builder: &mut GraphBuilder,
    x: Reg,
    scale: f64,
    rng: &mut Rng,
) -> Result<Reg> {
    let (_, h, w) = builder.shape(x);
    let base = scaled(64, scale);
    let mut cur = stem(builder, "mb", x, base, rng)?;

    let enc = [(64, 64, 256, 1), (128, 128, 512, 2), (256, 256, 1024, 2)];
    for (i, (a, b, c, s)) in enc.into_iter().enumerate() {
        cur = ecb_ib(
            builder,
            "mb",
            i + 1,
            cur,
            (scaled(a, scale), scaled(b, scale), scaled(c, scale)),
            s,
            rng,
        )?;
    }
    let dec = [(1024, 1024, 256, 1), (512, 512, 128, 2), (256, 256, 64, 2)];
    for (i, (a, b, c, s)) in dec.into_iter().enumerate() {
        cur = dcb_ib(
            builder,
            "mb",
            i + 3 + 1,
            cur,
            (scaled(a, scale), scaled(b, scale), scaled(c, scale)),
            s,
            rng,
        )?;
    }

    // Decoder tail: crop so that x3 upsampling followed by the x2 resized
    // convolution lands exactly back on (h, w) after the final crop.
    let target = (h.div_ceil(6), w.div_ceil(6));
    let cur = builder.crop_to("mb.pre_crop", cur, target)?;
    builder.tap("mb.pre_crop", cur);
    let cur = builder.upsample("mb.upsample", cur, 3);
    builder.tap("mb.upsample", cur);
    let cur = builder.resized_conv("mb.deconv", cur, base, 7, 2, rng)?;
    builder.tap("mb.deconv", cur);
    let cur = builder.crop_to("mb.post_crop", cur, (h, w))?;
    builder.tap("mb.post_crop", cur);
    let cur = builder.batchnorm("mb.tail", cur);
    let cur = builder.leaky_relu("mb.tail", cur, LEAKY_SLOPE);
    let cur = builder.conv("mb.head", cur, 1, 3, 1, 1, true, rng)?;
    let out = builder.sigmoid("mb.head", cur);
    builder.tap("mb.out", out);
    Ok(out)
}

/// Append the hypothesis reinforcement block. `x` must be a two-channel
/// register (image concatenated with the first likelihood map).
pub fn build_hrb(builder: &mut GraphBuilder, x: Reg, scale: f64, rng: &mut Rng) -> Result<Reg> {
    let (channels, h, w) = builder.shape(x);
    if channels != 2 {
        return Err(Error::Shape(format!(
            "hypothesis reinforcement block expects 2 input channels, got {channels}"
        )));
    }
    let base = scaled(64, scale);
    let mut cur = stem(builder, "hrb", x, base, rng)?;

    cur = ecb_ib(builder, "hrb", 1, cur, (scaled(64, scale), scaled(64, scale), scaled(256, scale)), 1, rng)?;
    cur = ecb_ib(builder, "hrb", 2, cur, (scaled(128, scale), scaled(128, scale), scaled(512, scale)), 2, rng)?;
    cur = dcb_ib(builder, "hrb", 3, cur, (scaled(512, scale), scaled(512, scale), scaled(128, scale)), 2, rng)?;
    cur = dcb_ib(builder, "hrb", 4, cur, (scaled(256, scale), scaled(256, scale), scaled(64, scale)), 2, rng)?;

    let cur = builder.upsample("hrb.upsample", cur, 3);
    builder.tap("hrb.upsample", cur);
    let cur = builder.crop_to("hrb.crop", cur, (h, w))?;
    builder.tap("hrb.crop", cur);
    let cur = builder.conv("hrb.tail", cur, base, 3, 1, 1, false, rng)?;
    builder.tap("hrb.tail", cur);
    let cur = builder.batchnorm("hrb.tail", cur);
    let cur = builder.leaky_relu("hrb.tail", cur, LEAKY_SLOPE);
    let cur = builder.conv("hrb.head", cur, 1, 3, 1, 1, true, rng)?;
    let out = builder.sigmoid("hrb.head", cur);
    builder.tap("hrb.out", out);
    Ok(out)
}

/// Training metadata carried in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainMeta {
    pub epoch: u32,
    /// 0 = untrained, 1 = adaptive phase, 2 = momentum phase.
    pub stage: u32,
    pub best_val_loss: f64,
}

impl Default for TrainMeta {
    fn default() -> Self {
        TrainMeta { epoch: 0, stage: 0, best_val_loss: f64::INFINITY }
    }
}

/// The assembled detection network: program, named parameters and geometry.
pub struct NetworkGraph {
    pub params: Params,
    program: Program,
    height: usize,
    width: usize,
    scale: f64,
    map_reg: Reg,
    polished_reg: Reg,
    pub meta: TrainMeta,
}

/// Result registers of a training forward pass.
pub struct ForwardRegs {
    pub map: Reg,
    pub polished: Reg,
}

impl NetworkGraph {
    /// Build a freshly initialized network for `(height, width)` inputs with
    /// the given channel-width multiplier (`1.0` reproduces the full-size
    /// architecture tables).
    pub fn build(height: usize, width: usize, scale: f64, rng: &mut Rng) -> Result<NetworkGraph> {
        if scale <= 0.0 {
            return Err(Error::Param(format!("scale must be positive, got {scale}")));
        }
        let mut builder = GraphBuilder::new(&[(1, height, width)]);
        let map = build_main_block(&mut builder, 0, scale, rng)?;
        let cat = builder.concat("join.concat", 0, map)?;
        let hrb = build_hrb(&mut builder, cat, scale, rng)?;
        let sum = builder.add("join.adder", hrb, map)?;
        let polished = builder.clamp01("join.clamp", sum);
        builder.tap("out.polished", polished);
        let (program, params) = builder.finish();
        Ok(NetworkGraph {
            params,
            program,
            height,
            width,
            scale,
            map_reg: map,
            polished_reg: polished,
            meta: TrainMeta::default(),
        })
    }

    pub fn geometry(&self) -> (usize, usize, f64) {
        (self.height, self.width, self.scale)
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn regs(&self) -> ForwardRegs {
        ForwardRegs { map: self.map_reg, polished: self.polished_reg }
    }

    fn validate_input(&self, image: &Tensor) -> Result<()> {
        let s = image.shape();
        if s.channels != 1 || s.height != self.height || s.width != self.width {
            return Err(Error::Shape(format!(
                "network built for {}x{} single-channel input, got {s}",
                self.height, self.width
            )));
        }
        if s.batch == 0 {
            return Err(Error::Validation("empty batch".into()));
        }
        if image.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Validation(
                "input depth image must be normalized to [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Inference forward pass: returns the first and polished likelihood maps.
    /// Read-only; batch-norm layers use their running statistics.
    pub fn infer(&self, image: &Tensor) -> Result<(Tensor, Tensor)> {
        self.validate_input(image)?;
        let exec = self.program.run_infer(&self.params, vec![image.clone()])?;
        Ok((
            exec.output(self.map_reg).clone(),
            exec.output(self.polished_reg).clone(),
        ))
    }

    /// Train-mode forward pass; the execution can be fed to [`Self::backward`].
    pub fn forward_train(&mut self, image: &Tensor) -> Result<Execution> {
        self.validate_input(image)?;
        self.program.run_train(&mut self.params, vec![image.clone()])
    }

    /// Infer-mode forward that also exposes the full execution (for taps).
    pub fn run_probe(&self, image: &Tensor) -> Result<Execution> {
        self.validate_input(image)?;
        self.program.run_infer(&self.params, vec![image.clone()])
    }

    /// Reverse pass seeding gradients on both likelihood maps.
    pub fn backward(
        &mut self,
        exec: Execution,
        grad_map: Tensor,
        grad_polished: Tensor,
    ) -> Result<()> {
        self.program.backward(
            exec,
            &mut self.params,
            vec![(self.map_reg, grad_map), (self.polished_reg, grad_polished)],
        )?;
        Ok(())
    }

    /// Run in the given mode and return the execution (test/probe helper).
    pub fn run_mode(&mut self, image: &Tensor, mode: Mode) -> Result<Execution> {
        self.validate_input(image)?;
        match mode {
            Mode::Train => self.program.run_train(&mut self.params, vec![image.clone()]),
            Mode::Infer => self.program.run_infer(&self.params, vec![image.clone()]),
        }
    }

    /// Polished likelihood maps for a batch of frames, optionally computed on
    /// several threads. A network in inference mode is read-only, so results
    /// are identical for any worker count.
    pub fn infer_polished_maps(&self, images: &[Tensor], jobs: usize) -> Result<Vec<Tensor>> {
        if jobs <= 1 || images.len() < 2 {
            return images.iter().map(|img| Ok(self.infer(img)?.1)).collect();
        }
        let chunk = images.len().div_ceil(jobs);
        let results: Vec<Result<Vec<Tensor>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = images
                .chunks(chunk)
                .map(|block| {
                    scope.spawn(move || {
                        block.iter().map(|img| Ok(self.infer(img)?.1)).collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("inference worker panicked")).collect()
        });
        let mut maps = Vec::with_capacity(images.len());
        for r in results {
            maps.extend(r?);
        }
        Ok(maps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Fill;

    #[test]
    fn ecb_shape_follows_table() {
        let mut rng = Rng::new(1);
        let mut b = GraphBuilder::new(&[(64, 40, 53)]);
        let out = build_block(
            &mut b,
            "ecb",
            0,
            &BlockSpec { kind: BlockKind::Encode, filters: (64, 64, 256), kernel: 3, stride: 1 },
            &mut rng,
        )
        .unwrap();
        assert_eq!(b.shape(out), (256, 40, 53));
    }

    #[test]
    fn dcb_shape_follows_table() {
        let mut rng = Rng::new(2);
        let mut b = GraphBuilder::new(&[(512, 20, 27)]);
        let out = build_block(
            &mut b,
            "dcb",
            0,
            &BlockSpec { kind: BlockKind::Decode, filters: (512, 512, 128), kernel: 3, stride: 2 },
            &mut rng,
        )
        .unwrap();
        assert_eq!(b.shape(out), (128, 40, 54));
    }

    #[test]
    fn ib_rejects_channel_mismatch() {
        let mut rng = Rng::new(3);
        let mut b = GraphBuilder::new(&[(32, 8, 8)]);
        let err = build_block(
            &mut b,
            "ib",
            0,
            &BlockSpec { kind: BlockKind::Identity, filters: (16, 16, 64), kernel: 3, stride: 1 },
            &mut rng,
        );
        assert!(err.is_err());
    }

    #[test]
    fn ib_with_zero_main_path_is_leaky_relu() {
        let mut rng = Rng::new(4);
        let mut b = GraphBuilder::new(&[(8, 5, 5)]);
        let out = build_block(
            &mut b,
            "ib",
            0,
            &BlockSpec { kind: BlockKind::Identity, filters: (4, 4, 8), kernel: 3, stride: 1 },
            &mut rng,
        )
        .unwrap();
        let (program, mut params) = b.finish();
        // Zero the final 1x1 of the main path: its batch-norm output is then
        // exactly zero in infer mode, so the block reduces to lrelu(x).
        for entry in params.entries_mut() {
            if entry.name.starts_with("ib.main3.weight") {
                entry.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let x = Tensor::new(
            Shape::new(1, 8, 5, 5),
            Fill::Uniform { lo: -1.0, hi: 1.0 },
            &mut rng,
        )
        .unwrap();
        let exec = program.run_infer(&params, vec![x.clone()]).unwrap();
        let expected = crate::layers::leaky_relu(&x, LEAKY_SLOPE);
        assert!(exec.output(out).max_abs_diff(&expected) < 1e-9);
    }

    #[test]
    fn desk_scale_network_builds_and_runs() {
        let mut rng = Rng::new(5);
        let net = NetworkGraph::build(60, 80, 0.25, &mut rng).unwrap();
        let image = Tensor::full(Shape::new(1, 1, 60, 80), 0.5);
        let (map, polished) = net.infer(&image).unwrap();
        assert_eq!(map.shape(), Shape::new(1, 1, 60, 80));
        assert_eq!(polished.shape(), Shape::new(1, 1, 60, 80));
        assert!(map.is_finite() && polished.is_finite());
        assert!(map.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(polished.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn unnormalized_input_is_rejected() {
        let mut rng = Rng::new(6);
        let net = NetworkGraph::build(24, 32, 0.125, &mut rng).unwrap();
        let image = Tensor::full(Shape::new(1, 1, 24, 32), 2.0);
        assert!(matches!(net.infer(&image), Err(Error::Validation(_))));
    }

    #[test]
    fn adder_identity_when_correction_is_zero() {
        // If the reinforcement output were identically zero, the polished map
        // would equal the first map: clamp01(0 + C) = C for C in [0, 1].
        let c = Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        let zero = Tensor::zeros(c.shape());
        let sum = zero.add(&c).unwrap();
        let polished = crate::layers::clamp01(&sum);
        assert_eq!(polished.data(), c.data());
    }

    #[test]
    fn zero_person_frame_smoke() {
        let mut rng = Rng::new(7);
        let net = NetworkGraph::build(24, 32, 0.125, &mut rng).unwrap();
        let image = Tensor::zeros(Shape::new(1, 1, 24, 32));
        let (map, polished) = net.infer(&image).unwrap();
        assert!(map.is_finite() && polished.is_finite());
    }
}
