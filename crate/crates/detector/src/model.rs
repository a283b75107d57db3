//! Network definition: a static graph of convolution, Mish, residual add,
//! concatenation, SPP pooling and upsampling nodes, with reverse-mode
//! gradients evaluated node by node.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use tinydet_core::grid::{GridGeometry, GridPrediction};

use crate::error::{DetectorError, Result};
use crate::ops::{self, ConvGeom};
use crate::tensor::Tensor;

/// Output stride of the single detection head.
pub const HEAD_STRIDE: usize = 8;

/// Initial bias of the objectness logits, a prior of about 2% per slot.
const OBJECTNESS_PRIOR_LOGIT: f32 = -4.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Square input side in pixels; a multiple of 8.
    pub input_size: usize,
    pub n_anchors: usize,
    pub n_classes: usize,
    /// Widths of the stem and of stages A, B and C.
    pub channel_plan: [usize; 4],
    /// Residual blocks in stages A, B and C.
    pub res_block_counts: [usize; 3],
    /// Max-pool windows of the SPP block (stride 1, same padding).
    pub spp_pool_sizes: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 416,
            n_anchors: 6,
            n_classes: 2,
            channel_plan: [32, 64, 128, 256],
            res_block_counts: [1, 2, 2],
            spp_pool_sizes: vec![5, 9, 13],
        }
    }
}

impl ModelConfig {
    pub fn with_input_size(input_size: usize) -> Self {
        Self { input_size, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % HEAD_STRIDE != 0 {
            return Err(DetectorError::Config(format!("input_size {} is not a positive multiple of {HEAD_STRIDE}", self.input_size)));
        }
        if self.n_anchors == 0 || self.n_classes == 0 {
            return Err(DetectorError::Config("n_anchors and n_classes must be positive".into()));
        }
        if self.channel_plan.iter().any(|&c| c < 2) {
            return Err(DetectorError::Config(format!("channel widths must be at least 2, got {:?}", self.channel_plan)));
        }
        if self.spp_pool_sizes.iter().any(|&k| k == 0 || k % 2 == 0) {
            return Err(DetectorError::Config(format!("SPP windows must be odd, got {:?}", self.spp_pool_sizes)));
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.input_size / HEAD_STRIDE
    }

    /// Channels per output cell, `n_anchors * (5 + n_classes)`.
    pub fn head_channels(&self) -> usize {
        self.n_anchors * (5 + self.n_classes)
    }

    pub fn geometry(&self) -> Result<GridGeometry> {
        Ok(GridGeometry::new(self.input_size, HEAD_STRIDE, self.n_anchors, self.n_classes)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Backbone,
    Neck,
    Head,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    #[serde(skip)]
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Input,
    Conv {
        conv: usize,
        src: usize,
    },
    Mish {
        src: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Concat {
        srcs: Vec<usize>,
    },
    MaxPool {
        k: usize,
        src: usize,
    },
    /// Nearest-neighbour x2, cropped to the node's own size.
    Upsample {
        src: usize,
    },
}

/// A graph node with its per-sample output shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub op: Op,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub nodes: Vec<Node>,
    pub convs: Vec<ConvSpec>,
    pub params: Vec<Param>,
    pub output: usize,
}

/// Per-parameter gradient buffers, parallel to `Model::params`.
#[derive(Debug, Clone)]
pub struct Grads(pub Vec<Vec<f32>>);

impl Grads {
    pub fn zero(&mut self) {
        for g in &mut self.0 {
            g.fill(0.0);
        }
    }
}

/// Every node output of one forward pass, kept for the backward pass.
pub struct Activations {
    pub outputs: Vec<Tensor>,
    pool_args: Vec<Option<Vec<u32>>>,
}

impl Activations {
    pub fn output(&self, model: &Model) -> &Tensor {
        &self.outputs[model.output]
    }
}

struct Builder {
    nodes: Vec<Node>,
    convs: Vec<ConvSpec>,
    params: Vec<Param>,
    rng: ChaCha8Rng,
}

enum Init {
    He,
    Zero,
    Head,
}

impl Builder {
    fn push(&mut self, op: Op, c: usize, h: usize, w: usize) -> usize {
        self.nodes.push(Node { op, c, h, w });
        self.nodes.len() - 1
    }

    fn conv_raw(&mut self, src: usize, cout: usize, k: usize, stride: usize, group: ParamGroup, init: Init) -> usize {
        let (cin, h, w) = (self.nodes[src].c, self.nodes[src].h, self.nodes[src].w);
        let g = ConvGeom::new(cin, cout, k, stride, h, w);
        let n = self.convs.len();
        let fan_in = cin * k * k;
        let weights: Vec<f32> = match init {
            Init::He => {
                let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                (0..cout * fan_in).map(|_| dist.sample(&mut self.rng) as f32).collect()
            }
            Init::Zero => vec![0.0; cout * fan_in],
            Init::Head => {
                let dist = Normal::new(0.0, 0.01).expect("positive std");
                (0..cout * fan_in).map(|_| dist.sample(&mut self.rng) as f32).collect()
            }
        };
        self.params.push(Param { name: format!("conv{n}.weight"), shape: vec![cout, cin, k, k], group, data: weights });
        self.params.push(Param { name: format!("conv{n}.bias"), shape: vec![cout], group, data: vec![0.0; cout] });
        let spec = ConvSpec { cin, cout, k, stride, weight: self.params.len() - 2, bias: self.params.len() - 1 };
        self.convs.push(spec);
        self.push(Op::Conv { conv: n, src }, cout, g.ho, g.wo)
    }

    /// Convolution followed by Mish.
    fn cbm(&mut self, src: usize, cout: usize, k: usize, stride: usize, group: ParamGroup) -> usize {
        let c = self.conv_raw(src, cout, k, stride, group, Init::He);
        self.mish(c)
    }

    fn mish(&mut self, src: usize) -> usize {
        let n = &self.nodes[src];
        let (c, h, w) = (n.c, n.h, n.w);
        self.push(Op::Mish { src }, c, h, w)
    }

    /// `x + mish(conv3x3(mish(conv1x1(x))))`, second convolution zero-initialised
    /// so every block starts as the identity.
    fn res_block(&mut self, x: usize, group: ParamGroup) -> usize {
        let c = self.nodes[x].c;
        let a = self.cbm(x, (c / 2).max(1), 1, 1, group);
        let b = self.conv_raw(a, c, 3, 1, group, Init::Zero);
        let b = self.mish(b);
        let n = &self.nodes[x];
        let (h, w) = (n.h, n.w);
        self.push(Op::Add { a: x, b }, c, h, w)
    }

    fn concat(&mut self, srcs: Vec<usize>) -> usize {
        let (h, w) = (self.nodes[srcs[0]].h, self.nodes[srcs[0]].w);
        let c = srcs.iter().map(|&s| self.nodes[s].c).sum();
        self.push(Op::Concat { srcs }, c, h, w)
    }
}

/// Builds the network with deterministic initial weights (seed 0).
pub fn build_model(config: ModelConfig) -> Result<Model> {
    build_model_seeded(config, 0)
}

pub fn build_model_seeded(config: ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let [c0, c1, c2, c3] = config.channel_plan;
    let s = config.input_size;
    let mut b = Builder { nodes: Vec::new(), convs: Vec::new(), params: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) };
    use ParamGroup::*;

    let input = b.push(Op::Input, 3, s, s);
    let x = b.cbm(input, c0, 3, 1, Backbone);
    let x = b.cbm(x, c0, 3, 2, Backbone);
    let mut x = b.cbm(x, c1, 3, 2, Backbone);
    for _ in 0..config.res_block_counts[0] {
        x = b.res_block(x, Backbone);
    }
    let mut x = b.cbm(x, c2, 3, 2, Backbone);
    for _ in 0..config.res_block_counts[1] {
        x = b.res_block(x, Backbone);
    }
    let shallow = x;
    let down = b.cbm(shallow, c3, 3, 2, Backbone);
    let mut x = down;
    for _ in 0..config.res_block_counts[2] {
        x = b.res_block(x, Backbone);
    }
    // Cross-layer concatenation: the stage input joins the residual output.
    let cat = b.concat(vec![down, x]);
    let deep = b.cbm(cat, c3, 1, 1, Backbone);

    let x = b.cbm(deep, c3 / 2, 1, 1, Neck);
    let x = b.cbm(x, c3, 3, 1, Neck);
    let x = b.cbm(x, c3 / 2, 1, 1, Neck);
    let mut pyramid = vec![x];
    for &k in &config.spp_pool_sizes {
        let n = &b.nodes[x];
        let (c, h, w) = (n.c, n.h, n.w);
        pyramid.push(b.push(Op::MaxPool { k, src: x }, c, h, w));
    }
    let x = b.concat(pyramid);
    let x = b.cbm(x, c3 / 2, 1, 1, Neck);
    let x = b.cbm(x, c2 / 2, 1, 1, Neck);
    let (h8, w8) = (b.nodes[shallow].h, b.nodes[shallow].w);
    let c = b.nodes[x].c;
    let up = b.push(Op::Upsample { src: x }, c, h8, w8);
    let lateral = b.cbm(shallow, c2 / 2, 1, 1, Neck);
    let x = b.concat(vec![up, lateral]);
    let x = b.cbm(x, c2, 3, 1, Neck);
    let x = b.cbm(x, c2 / 2, 1, 1, Neck);
    let x = b.cbm(x, c2, 3, 1, Neck);
    let out = b.conv_raw(x, config.head_channels(), 1, 1, Head, Init::Head);

    let mut model = Model { config, nodes: b.nodes, convs: b.convs, params: b.params, output: out };
    let slot = 5 + model.config.n_classes;
    let head_bias = model.convs.last().expect("head conv").bias;
    for a in 0..model.config.n_anchors {
        model.params[head_bias].data[a * slot + 4] = OBJECTNESS_PRIOR_LOGIT;
    }
    debug_assert_eq!((model.nodes[out].h, model.nodes[out].w), (model.config.grid_side(), model.config.grid_side()));
    Ok(model)
}

fn accumulate(slot: &mut Option<Tensor>, t: Tensor) {
    match slot {
        Some(e) => e.add_assign(&t),
        None => *slot = Some(t),
    }
}

impl Model {
    pub fn geometry(&self) -> GridGeometry {
        self.config.geometry().expect("validated at build time")
    }

    pub fn n_weights(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(self.params.iter().map(|p| vec![0.0; p.data.len()]).collect())
    }

    fn conv_geom(&self, spec: &ConvSpec, src: usize) -> ConvGeom {
        let n = &self.nodes[src];
        ConvGeom::new(spec.cin, spec.cout, spec.k, spec.stride, n.h, n.w)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = self.config.input_size;
        if (x.c, x.h, x.w) != (3, s, s) {
            return Err(DetectorError::Shape(format!("expected N x 3 x {s} x {s} input, got {:?}", x.shape())));
        }
        if !x.all_finite() {
            return Err(DetectorError::Input("non-finite input pixel".into()));
        }
        Ok(())
    }

    /// Runs every node, keeping all intermediate outputs.
    pub fn forward_train(&self, x: &Tensor) -> Result<Activations> {
        self.check_input(x)?;
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        let mut pool_args = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let mut arg = None;
            let out = match &node.op {
                Op::Input => x.clone(),
                Op::Conv { conv, src } => {
                    let spec = &self.convs[*conv];
                    let g = self.conv_geom(spec, *src);
                    ops::conv_forward(&outputs[*src], &self.params[spec.weight].data, &self.params[spec.bias].data, &g)
                }
                Op::Mish { src } => ops::mish_forward(&outputs[*src]),
                Op::Add { a, b } => {
                    let mut t = outputs[*a].clone();
                    t.add_assign(&outputs[*b]);
                    t
                }
                Op::Concat { srcs } => {
                    let parts: Vec<&Tensor> = srcs.iter().map(|&s| &outputs[s]).collect();
                    ops::concat_forward(&parts)
                }
                Op::MaxPool { k, src } => {
                    let (t, a) = ops::maxpool_forward(&outputs[*src], *k);
                    arg = Some(a);
                    t
                }
                Op::Upsample { src } => ops::upsample2_forward(&outputs[*src], node.h, node.w),
            };
            outputs.push(out);
            pool_args.push(arg);
        }
        Ok(Activations { outputs, pool_args })
    }

    /// Which nodes lead to a trainable parameter and so need an input gradient.
    fn needs_grad(&self, trainable: &dyn Fn(ParamGroup) -> bool) -> Vec<bool> {
        let mut need = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            need[i] = match &node.op {
                Op::Input => false,
                Op::Conv { conv, src } => trainable(self.params[self.convs[*conv].weight].group) || need[*src],
                Op::Mish { src } | Op::MaxPool { src, .. } | Op::Upsample { src } => need[*src],
                Op::Add { a, b } => need[*a] || need[*b],
                Op::Concat { srcs } => srcs.iter().any(|&s| need[s]),
            };
        }
        need
    }

    /// Back-propagates `d_out` (gradient w.r.t. the head output) and
    /// accumulates gradients of trainable parameters into `grads`.
    pub fn backward(&self, acts: &Activations, d_out: Tensor, grads: &mut Grads, trainable: &dyn Fn(ParamGroup) -> bool) {
        let need = self.needs_grad(trainable);
        let mut g: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        g[self.output] = Some(d_out);
        for i in (0..self.nodes.len()).rev() {
            let Some(dy) = g[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Conv { conv, src } => {
                    let spec = self.convs[*conv];
                    let geom = self.conv_geom(&spec, *src);
                    let train_here = trainable(self.params[spec.weight].group);
                    let (lo, hi) = grads.0.split_at_mut(spec.bias);
                    let dw = train_here.then(|| (lo[spec.weight].as_mut_slice(), hi[0].as_mut_slice()));
                    if let Some(dx) = ops::conv_backward(&acts.outputs[*src], &dy, &self.params[spec.weight].data, &geom, dw, need[*src]) {
                        accumulate(&mut g[*src], dx);
                    }
                }
                Op::Mish { src } => {
                    if need[*src] {
                        accumulate(&mut g[*src], ops::mish_backward(&acts.outputs[*src], &dy));
                    }
                }
                Op::Add { a, b } => {
                    if need[*b] {
                        accumulate(&mut g[*b], dy.clone());
                    }
                    if need[*a] {
                        accumulate(&mut g[*a], dy);
                    }
                }
                Op::Concat { srcs } => {
                    let channels: Vec<usize> = srcs.iter().map(|&s| self.nodes[s].c).collect();
                    for (s, part) in srcs.iter().zip(ops::concat_backward(&dy, &channels)) {
                        if need[*s] {
                            accumulate(&mut g[*s], part);
                        }
                    }
                }
                Op::MaxPool { src, .. } => {
                    if need[*src] {
                        accumulate(&mut g[*src], ops::maxpool_backward(&dy, acts.pool_args[i].as_ref().expect("pool indices")));
                    }
                }
                Op::Upsample { src } => {
                    if need[*src] {
                        let n = &self.nodes[*src];
                        accumulate(&mut g[*src], ops::upsample2_backward(&dy, n.h, n.w));
                    }
                }
            }
        }
    }

    /// Evaluation-mode forward pass: one prediction grid per batch entry.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<GridPrediction>> {
        let acts = self.forward_train(x)?;
        let out = acts.output(self);
        (0..out.n).map(|i| self.to_grid(out, i)).collect()
    }

    /// Converts sample `i` of a head output (`C x side x side`) to the
    /// cell-major grid layout.
    pub fn to_grid(&self, out: &Tensor, i: usize) -> Result<GridPrediction> {
        let geom = self.geometry();
        let (side, ch) = (geom.side, geom.cell_channels());
        let src = out.sample(i);
        let mut values = vec![0.0f64; geom.len()];
        for c in 0..ch {
            for cell in 0..side * side {
                values[cell * ch + c] = src[c * side * side + cell] as f64;
            }
        }
        let pred = GridPrediction::from_values(geom, values)?;
        if pred.values.iter().any(|v| !v.is_finite()) {
            return Err(DetectorError::Input("network produced non-finite outputs".into()));
        }
        Ok(pred)
    }

    /// Inverse of [`Model::to_grid`] for gradients: per-sample grid
    /// gradients back to a head-shaped tensor.
    pub fn grid_grads_to_tensor(&self, grads: &[Vec<f64>]) -> Tensor {
        let geom = self.geometry();
        let (side, ch) = (geom.side, geom.cell_channels());
        let mut t = Tensor::zeros(grads.len(), ch, side, side);
        for (i, g) in grads.iter().enumerate() {
            let dst = t.sample_mut(i);
            for c in 0..ch {
                for cell in 0..side * side {
                    dst[c * side * side + cell] = g[cell * ch + c] as f32;
                }
            }
        }
        t
    }

    pub fn params_in(&self, group: ParamGroup) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(move |p| p.group == group)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_shape_follows_input() {
        for s in [64, 72, 320] {
            let m = build_model(ModelConfig { input_size: s, channel_plan: [4, 8, 8, 8], ..Default::default() }).unwrap();
            let n = &m.nodes[m.output];
            assert_eq!((n.c, n.h, n.w), (42, s / 8, s / 8));
        }
        assert!(build_model(ModelConfig::with_input_size(417)).is_err());
        assert!(build_model(ModelConfig { spp_pool_sizes: vec![4], ..Default::default() }).is_err());
    }

    #[test]
    fn groups_are_ordered() {
        let m = build_model(ModelConfig { input_size: 32, channel_plan: [4, 8, 8, 8], ..Default::default() }).unwrap();
        let groups: Vec<ParamGroup> = m.params.iter().map(|p| p.group).collect();
        let first_neck = groups.iter().position(|&g| g == ParamGroup::Neck).unwrap();
        assert!(groups[..first_neck].iter().all(|&g| g == ParamGroup::Backbone));
        assert_eq!(*groups.last().unwrap(), ParamGroup::Head);
    }
}
