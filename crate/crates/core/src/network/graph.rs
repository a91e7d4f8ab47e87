//! Executable layer graph with a reverse-mode tape.
//!
//! A graph is a list of primitive nodes in topological order. Every node
//! reads the outputs of earlier nodes, so the forward pass is a single sweep
//! and the backward pass a single reverse sweep accumulating gradients.

use std::fmt;

use crate::error::{EngineError, Result};
use crate::flexops::{
    downsample_gather, downsample_gather_backward, flex_conv_backward_split,
    flex_conv_forward_split, flex_max_pool, flex_max_pool_backward, flex_upsample,
    flex_upsample_backward, pointwise_conv, pointwise_conv_backward, FlexConvParams, PoolRecord,
};
use crate::rng::Rng;
use crate::sampling::ResolutionHierarchy;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    FlexConv,
    PointwiseConv,
    FlexMaxPoolDownsample,
    FlexUpsample,
    ResNetBlock,
    AttachLocation,
    ReLU,
    SoftmaxClassifier,
    GlobalPool,
    Dense,
}

/// Human-readable layer description; composite kinds such as `ResNetBlock`
/// expand into several nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub level: usize,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}(level {}, {} -> {}, k={})",
            self.kind, self.level, self.c_in, self.c_out, self.k
        )
    }
}

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Op {
    Input,
    AttachLocation,
    /// Weights `c_out x c_in` at `offset`, then `c_out` biases.
    Pointwise { offset: usize, c_in: usize, c_out: usize },
    /// Theta `c_out x c_in x dim` at `offset`, then theta_b `c_out x c_in`.
    FlexConv { offset: usize, c_in: usize, c_out: usize, k: usize },
    Relu,
    Add,
    Concat,
    /// Pool at the node's input level, keep the rows selected for `level + 1`.
    PoolDown,
    /// From `level + 1` back to `level`.
    Upsample,
    GlobalMaxPool,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    /// Resolution level of the node's output.
    pub level: usize,
    pub width: usize,
    pub name: String,
}

/// Flat parameter vector with named views.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub values: Vec<f64>,
    views: Vec<ParamView>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamView {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn views(&self) -> &[ParamView] {
        &self.views
    }

    fn alloc(&mut self, name: String, len: usize) -> usize {
        let offset = self.values.len();
        self.values.resize(offset + len, 0.0);
        self.views.push(ParamView { name, offset, len });
        offset
    }
}

#[derive(Debug, Clone, Default)]
struct Tape {
    activations: Vec<Matrix>,
    records: Vec<Option<PoolRecord>>,
    /// Level-0 row count of the recorded pass.
    sizes: Vec<usize>,
}

/// Which locations a graph feeds into its flex layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LocationMode {
    /// Coordinates as stored in the hierarchy.
    #[default]
    Raw,
    /// Each level centered and scaled to unit RMS radius before use.
    PerLevelNormalized,
}

#[derive(Debug, Clone)]
pub struct LayerGraph {
    pub(crate) layers: Vec<LayerSpec>,
    pub(crate) nodes: Vec<Node>,
    pub(crate) skips: Vec<(NodeId, NodeId)>,
    pub params: ParamStore,
    pub(crate) dim: usize,
    pub(crate) input_width: usize,
    pub(crate) depth: usize,
    pub(crate) description: String,
    pub location_mode: LocationMode,
    tape: Option<Tape>,
}

/// Incremental graph construction with shape validation.
pub(crate) struct GraphBuilder {
    nodes: Vec<Node>,
    layers: Vec<LayerSpec>,
    skips: Vec<(NodeId, NodeId)>,
    params: ParamStore,
    dim: usize,
    input_width: usize,
    depth: usize,
}

impl GraphBuilder {
    pub fn new(dim: usize, input_width: usize) -> Result<Self> {
        if dim == 0 || input_width == 0 {
            return Err(EngineError::config("spatial dimension and input width must be positive"));
        }
        let mut b = Self {
            nodes: Vec::new(),
            layers: Vec::new(),
            skips: Vec::new(),
            params: ParamStore {
                values: Vec::new(),
                views: Vec::new(),
            },
            dim,
            input_width,
            depth: 0,
        };
        b.push(Op::Input, vec![], 0, input_width, "input".into());
        Ok(b)
    }

    pub fn input(&self) -> NodeId {
        0
    }

    pub fn width(&self, id: NodeId) -> usize {
        self.nodes[id].width
    }

    pub fn level(&self, id: NodeId) -> usize {
        self.nodes[id].level
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, level: usize, width: usize, name: String) -> NodeId {
        self.depth = self.depth.max(level);
        self.nodes.push(Node {
            op,
            inputs,
            level,
            width,
            name,
        });
        self.nodes.len() - 1
    }

    fn spec(&mut self, kind: LayerKind, c_in: usize, c_out: usize, k: usize, level: usize) {
        self.layers.push(LayerSpec {
            kind,
            c_in,
            c_out,
            k,
            level,
        });
    }

    pub fn attach_location(&mut self, x: NodeId) -> NodeId {
        let (level, w) = (self.level(x), self.width(x));
        self.spec(LayerKind::AttachLocation, w, w + self.dim, 0, level);
        let name = format!("attach#{}", self.nodes.len());
        self.push(Op::AttachLocation, vec![x], level, w + self.dim, name)
    }

    fn pointwise_node(&mut self, x: NodeId, c_out: usize, kind: LayerKind) -> Result<NodeId> {
        if c_out == 0 {
            return Err(EngineError::config("pointwise layer needs a positive width"));
        }
        let (level, c_in) = (self.level(x), self.width(x));
        let name = format!("{kind:?}#{}", self.nodes.len());
        let offset = self.params.alloc(name.clone(), c_out * c_in + c_out);
        self.spec(kind, c_in, c_out, 0, level);
        Ok(self.push(Op::Pointwise { offset, c_in, c_out }, vec![x], level, c_out, name))
    }

    pub fn pointwise(&mut self, x: NodeId, c_out: usize) -> Result<NodeId> {
        self.pointwise_node(x, c_out, LayerKind::PointwiseConv)
    }

    pub fn dense(&mut self, x: NodeId, c_out: usize) -> Result<NodeId> {
        self.pointwise_node(x, c_out, LayerKind::Dense)
    }

    pub fn classifier(&mut self, x: NodeId, classes: usize) -> Result<NodeId> {
        self.pointwise_node(x, classes, LayerKind::SoftmaxClassifier)
    }

    pub fn flex_conv(&mut self, x: NodeId, c_out: usize, k: usize) -> Result<NodeId> {
        if c_out == 0 || k == 0 {
            return Err(EngineError::config("flex-conv needs positive width and k"));
        }
        let (level, c_in) = (self.level(x), self.width(x));
        let name = format!("flexconv#{}", self.nodes.len());
        let len = crate::flexops::param_count(c_in, c_out, self.dim);
        let offset = self.params.alloc(name.clone(), len);
        self.spec(LayerKind::FlexConv, c_in, c_out, k, level);
        Ok(self.push(Op::FlexConv { offset, c_in, c_out, k }, vec![x], level, c_out, name))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let (level, w) = (self.level(x), self.width(x));
        self.spec(LayerKind::ReLU, w, w, 0, level);
        let name = format!("relu#{}", self.nodes.len());
        self.push(Op::Relu, vec![x], level, w, name)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.level(a) != self.level(b) || self.width(a) != self.width(b) {
            return Err(EngineError::config(format!(
                "cannot add {}x{} to {}x{} (level x width)",
                self.level(a),
                self.width(a),
                self.level(b),
                self.width(b)
            )));
        }
        let name = format!("add#{}", self.nodes.len());
        Ok(self.push(Op::Add, vec![a, b], self.level(a), self.width(a), name))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.level(a) != self.level(b) {
            return Err(EngineError::config(format!(
                "cannot concatenate level {} with level {}",
                self.level(a),
                self.level(b)
            )));
        }
        let name = format!("concat#{}", self.nodes.len());
        let w = self.width(a) + self.width(b);
        Ok(self.push(Op::Concat, vec![a, b], self.level(a), w, name))
    }

    /// pointwise -> ReLU -> flex -> ReLU -> flex, added to the block input.
    pub fn resnet_block(&mut self, x: NodeId, k: usize) -> Result<NodeId> {
        let (level, w) = (self.level(x), self.width(x));
        self.spec(LayerKind::ResNetBlock, w, w, k, level);
        let h = self.pointwise(x, w)?;
        let h = self.relu(h);
        let h = self.flex_conv(h, w, k)?;
        let h = self.relu(h);
        let h = self.flex_conv(h, w, k)?;
        self.add(x, h)
    }

    pub fn pool_down(&mut self, x: NodeId) -> NodeId {
        let (level, w) = (self.level(x), self.width(x));
        self.spec(LayerKind::FlexMaxPoolDownsample, w, w, 0, level);
        let name = format!("pooldown#{}", self.nodes.len());
        self.push(Op::PoolDown, vec![x], level + 1, w, name)
    }

    pub fn upsample(&mut self, x: NodeId) -> Result<NodeId> {
        let (level, w) = (self.level(x), self.width(x));
        if level == 0 {
            return Err(EngineError::config("cannot upsample from level 0"));
        }
        self.spec(LayerKind::FlexUpsample, w, w, 0, level - 1);
        let name = format!("upsample#{}", self.nodes.len());
        Ok(self.push(Op::Upsample, vec![x], level - 1, w, name))
    }

    pub fn global_pool(&mut self, x: NodeId) -> NodeId {
        let (level, w) = (self.level(x), self.width(x));
        self.spec(LayerKind::GlobalPool, w, w, 0, level);
        let name = format!("globalpool#{}", self.nodes.len());
        self.push(Op::GlobalMaxPool, vec![x], level, w, name)
    }

    pub fn skip(&mut self, encoder: NodeId, decoder: NodeId) -> Result<()> {
        if self.level(encoder) != self.level(decoder) {
            return Err(EngineError::config("skip connection must join equal resolutions"));
        }
        self.skips.push((encoder, decoder));
        Ok(())
    }

    pub fn finish(self, description: String) -> LayerGraph {
        LayerGraph {
            layers: self.layers,
            nodes: self.nodes,
            skips: self.skips,
            params: self.params,
            dim: self.dim,
            input_width: self.input_width,
            depth: self.depth,
            description,
            location_mode: LocationMode::Raw,
            tape: None,
        }
    }
}

fn normalized(locations: &Matrix) -> Matrix {
    let (n, d) = locations.shape();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(locations.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut out = locations.clone();
    let mut sq = 0.0;
    for i in 0..n {
        for (v, m) in out.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
            sq += *v * *v;
        }
    }
    let rms = (sq / n as f64).sqrt();
    if rms > 0.0 {
        out.scale(1.0 / rms);
    }
    out
}

impl LayerGraph {
    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn skip_connections(&self) -> &[(NodeId, NodeId)] {
        &self.skips
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Number of subsampling steps the graph needs from a hierarchy.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.nodes.last().map_or(0, |n| n.width)
    }

    /// Architecture fingerprint echoed into checkpoints.
    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }

    /// Node output widths, in node order.
    pub fn node_widths(&self) -> Vec<(String, usize, usize)> {
        self.nodes
            .iter()
            .map(|n| (n.name.clone(), n.level, n.width))
            .collect()
    }

    /// Draws fresh parameters. Flex weights use `theta ~ U(-s, s)` with
    /// `s = 1 / (k sqrt(C a))`, `a` the mean neighbor distance at level 0,
    /// and `theta_b ~ U(-b, b)` with `b = 1 / (k sqrt(C))`. Pointwise and
    /// dense weights use He-uniform bounds with zero bias.
    pub fn initialize(&mut self, hierarchy: &ResolutionHierarchy, rng: &mut Rng) -> Result<()> {
        let level0 = hierarchy.level(0);
        let locations = self.level_locations(hierarchy, 0);
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, row) in level0.neighbors.rows().enumerate() {
            for &j in &row[1..] {
                total += crate::neighborhood::squared_distance(locations.row(i), locations.row(j)).sqrt();
                count += 1;
            }
        }
        let avg = if count > 0 && total > 0.0 { total / count as f64 } else { 1.0 };
        let dim = self.dim;
        let values = &mut self.params.values;
        for node in &self.nodes {
            match node.op {
                Op::Pointwise { offset, c_in, c_out } => {
                    let bound = (6.0 / c_in as f64).sqrt();
                    for v in &mut values[offset..offset + c_out * c_in] {
                        *v = rng.uniform_range(-bound, bound);
                    }
                    values[offset + c_out * c_in..offset + c_out * c_in + c_out].fill(0.0);
                }
                Op::FlexConv { offset, c_in, c_out, k } => {
                    let s = 1.0 / (k as f64 * (c_in as f64 * avg).sqrt());
                    let b = 1.0 / (k as f64 * (c_in as f64).sqrt());
                    let n_theta = c_out * c_in * dim;
                    for v in &mut values[offset..offset + n_theta] {
                        *v = rng.uniform_range(-s, s);
                    }
                    for v in &mut values[offset + n_theta..offset + n_theta + c_out * c_in] {
                        *v = rng.uniform_range(-b, b);
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn level_locations(&self, hierarchy: &ResolutionHierarchy, level: usize) -> Matrix {
        let raw = &hierarchy.level(level).cloud.locations;
        match self.location_mode {
            LocationMode::Raw => raw.clone(),
            LocationMode::PerLevelNormalized => normalized(raw),
        }
    }

    fn check_inputs(&self, hierarchy: &ResolutionHierarchy, features: &Matrix) -> Result<()> {
        if hierarchy.depth() < self.depth {
            return Err(EngineError::shape(format!(
                "graph needs {} subsampling levels, hierarchy has {}",
                self.depth,
                hierarchy.depth()
            )));
        }
        if hierarchy.level(0).cloud.dim() != self.dim {
            return Err(EngineError::shape(format!(
                "graph expects {}-D locations, hierarchy has {}-D",
                self.dim,
                hierarchy.level(0).cloud.dim()
            )));
        }
        let n = hierarchy.level(0).cloud.len();
        if features.shape() != (n, self.input_width) {
            return Err(EngineError::shape(format!(
                "input features are {}x{}, expected {n}x{}",
                features.rows(),
                features.cols(),
                self.input_width
            )));
        }
        for node in &self.nodes {
            if let Op::FlexConv { k, .. } = node.op {
                let level = hierarchy.level(node.level);
                let expected = k.min(level.cloud.len());
                if level.neighbors.k() != expected {
                    return Err(EngineError::shape(format!(
                        "{} expects k={expected} at level {}, hierarchy has k={}",
                        node.name,
                        node.level,
                        level.neighbors.k()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Runs the graph and records activations for [`LayerGraph::backward`].
    pub fn forward(&mut self, hierarchy: &ResolutionHierarchy, features: &Matrix) -> Result<Matrix> {
        self.check_inputs(hierarchy, features)?;
        let locations: Vec<Matrix> = (0..=self.depth)
            .map(|l| self.level_locations(hierarchy, l))
            .collect();
        let mut acts: Vec<Matrix> = Vec::with_capacity(self.nodes.len());
        let mut records: Vec<Option<PoolRecord>> = vec![None; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            let input = |slot: usize| &acts[node.inputs[slot]];
            let out = match node.op {
                Op::Input => features.clone(),
                Op::AttachLocation => input(0).hcat(&locations[node.level])?,
                Op::Pointwise { offset, c_in, c_out } => {
                    let (w, b) = pointwise_view(&self.params.values, offset, c_in, c_out)?;
                    pointwise_conv(input(0), &w, b)?
                }
                Op::FlexConv { offset, c_in, c_out, .. } => {
                    let p = flex_view(&self.params.values, offset, c_in, c_out, self.dim)?;
                    let locs = &locations[node.level];
                    let nb = &hierarchy.level(node.level).neighbors;
                    flex_conv_forward_split(input(0), locs, locs, nb, &p)?
                }
                Op::Relu => {
                    let mut x = input(0).clone();
                    x.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                    x
                }
                Op::Add => {
                    let mut x = input(0).clone();
                    x.add_assign(input(1));
                    x
                }
                Op::Concat => input(0).hcat(input(1))?,
                Op::PoolDown => {
                    let from = node.level - 1;
                    let (pooled, rec) = flex_max_pool(input(0), &hierarchy.level(from).neighbors)?;
                    records[id] = Some(rec);
                    let sel = hierarchy.level(node.level).selection.as_ref().ok_or_else(|| {
                        EngineError::shape(format!("level {} has no selection", node.level))
                    })?;
                    downsample_gather(&pooled, sel)?
                }
                Op::Upsample => {
                    let coarse = node.level + 1;
                    let sel = hierarchy.level(coarse).selection.as_ref().ok_or_else(|| {
                        EngineError::shape(format!("level {coarse} has no selection"))
                    })?;
                    let fine = hierarchy.level(node.level);
                    let (up, rec) = flex_upsample(input(0), sel, &fine.neighbors, fine.cloud.len())?;
                    records[id] = Some(rec);
                    up
                }
                Op::GlobalMaxPool => {
                    let x = input(0);
                    let mut out = Matrix::zeros(1, x.cols());
                    let mut arg = vec![0usize; x.cols()];
                    for c in 0..x.cols() {
                        let mut best = x.get(0, c);
                        for i in 1..x.rows() {
                            if x.get(i, c) > best {
                                best = x.get(i, c);
                                arg[c] = i;
                            }
                        }
                        out.set(0, c, best);
                    }
                    records[id] = Some(PoolRecord::new(x.cols(), x.rows(), arg));
                    out
                }
            };
            if !out.is_finite() {
                return Err(EngineError::non_finite(format!("forward output of {}", node.name)));
            }
            acts.push(out);
        }
        let logits = acts.last().cloned().expect("graph has an input node");
        self.tape = Some(Tape {
            activations: acts,
            records,
            sizes: hierarchy.sizes(),
        });
        Ok(logits)
    }

    /// Gradient of the loss with respect to every parameter, given the
    /// gradient with respect to the graph output. Consumes the tape.
    pub fn backward(&mut self, hierarchy: &ResolutionHierarchy, output_grad: &Matrix) -> Result<Vec<f64>> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| EngineError::config("backward called without a recorded forward pass"))?;
        if tape.sizes != hierarchy.sizes() {
            return Err(EngineError::shape("hierarchy differs from the recorded forward pass"));
        }
        let last = self.nodes.len() - 1;
        if output_grad.shape() != tape.activations[last].shape() {
            return Err(EngineError::shape(format!(
                "output gradient is {:?}, graph output is {:?}",
                output_grad.shape(),
                tape.activations[last].shape()
            )));
        }
        let locations: Vec<Matrix> = (0..=self.depth)
            .map(|l| self.level_locations(hierarchy, l))
            .collect();
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[last] = Some(output_grad.clone());
        let mut d_params = vec![0.0; self.params.len()];

        for id in (0..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let act = |slot: usize| &tape.activations[node.inputs[slot]];
            let mut input_grads: Vec<Matrix> = Vec::with_capacity(2);
            match node.op {
                Op::Input => continue,
                Op::AttachLocation => {
                    let (df, _) = g.split_cols(act(0).cols());
                    input_grads.push(df);
                }
                Op::Pointwise { offset, c_in, c_out } => {
                    let (w, _) = pointwise_view(&self.params.values, offset, c_in, c_out)?;
                    let pg = pointwise_conv_backward(&g, act(0), &w)?;
                    accumulate(&mut d_params[offset..], pg.d_weights.as_slice());
                    accumulate(&mut d_params[offset + c_out * c_in..], &pg.d_bias);
                    input_grads.push(pg.d_features);
                }
                Op::FlexConv { offset, c_in, c_out, .. } => {
                    let p = flex_view(&self.params.values, offset, c_in, c_out, self.dim)?;
                    let locs = &locations[node.level];
                    let nb = &hierarchy.level(node.level).neighbors;
                    let fg = flex_conv_backward_split(&g, act(0), locs, locs, nb, &p, false)?;
                    accumulate(&mut d_params[offset..], &fg.d_theta);
                    accumulate(&mut d_params[offset + fg.d_theta.len()..], &fg.d_theta_b);
                    input_grads.push(fg.d_features);
                }
                Op::Relu => {
                    let mut d = g;
                    for (v, &x) in d.as_mut_slice().iter_mut().zip(act(0).as_slice()) {
                        if x <= 0.0 {
                            *v = 0.0;
                        }
                    }
                    input_grads.push(d);
                }
                Op::Add => {
                    input_grads.push(g.clone());
                    input_grads.push(g);
                }
                Op::Concat => {
                    let (a, b) = g.split_cols(act(0).cols());
                    input_grads.push(a);
                    input_grads.push(b);
                }
                Op::PoolDown => {
                    let from = node.level - 1;
                    let sel = hierarchy.level(node.level).selection.as_ref().expect("checked in forward");
                    let d_pooled = downsample_gather_backward(&g, sel, hierarchy.level(from).cloud.len())?;
                    let rec = tape.records[id].as_ref().expect("pool record");
                    input_grads.push(flex_max_pool_backward(&d_pooled, rec)?);
                }
                Op::Upsample => {
                    let sel = hierarchy.level(node.level + 1).selection.as_ref().expect("checked in forward");
                    let rec = tape.records[id].as_ref().expect("pool record");
                    input_grads.push(flex_upsample_backward(&g, rec, sel)?);
                }
                Op::GlobalMaxPool => {
                    let rec = tape.records[id].as_ref().expect("pool record");
                    input_grads.push(flex_max_pool_backward(&g, rec)?);
                }
            }
            for (slot, d) in input_grads.into_iter().enumerate() {
                if !d.is_finite() {
                    return Err(EngineError::non_finite(format!(
                        "gradient flowing out of {} (input {slot})",
                        node.name
                    )));
                }
                let target = node.inputs[slot];
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&d),
                    empty => *empty = Some(d),
                }
            }
        }
        if let Some(view) = self
            .params
            .views
            .iter()
            .find(|v| d_params[v.offset..v.offset + v.len].iter().any(|x| !x.is_finite()))
        {
            return Err(EngineError::non_finite(format!("parameter gradient of {}", view.name)));
        }
        Ok(d_params)
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

fn pointwise_view(values: &[f64], offset: usize, c_in: usize, c_out: usize) -> Result<(Matrix, &[f64])> {
    let w = Matrix::from_vec(c_out, c_in, values[offset..offset + c_out * c_in].to_vec())?;
    let b = &values[offset + c_out * c_in..offset + c_out * c_in + c_out];
    Ok((w, b))
}

fn flex_view(values: &[f64], offset: usize, c_in: usize, c_out: usize, dim: usize) -> Result<FlexConvParams> {
    let n_theta = c_out * c_in * dim;
    FlexConvParams::new(
        c_in,
        c_out,
        dim,
        values[offset..offset + n_theta].to_vec(),
        values[offset + n_theta..offset + n_theta + c_out * c_in].to_vec(),
    )
}
