//! Late-fusion network: a 3D residual CNN over the volume, an MLP over the
//! tabular features, concatenation of both embeddings, and an MLP head.
//!
//! All learnable weights live in one flat `f64` vector whose canonical
//! ordering is given by [`Layout`]; gradients share that layout, which keeps
//! optimizer steps, finite-difference checks and checkpoints trivial.
//!
//! Vision graph (per volume, one input channel):
//!
//! ```text
//! stem conv3³ → act → maxpool2
//! for each stage s: blocks_per_stage × residual block, then maxpool2 unless last
//! global average pool → fully connected → vision embedding
//! ```
//!
//! A residual block computes `skip(x) + conv2(act(conv1(x)))`, where `skip`
//! is the identity when channel counts agree and a 1×1×1 projection
//! otherwise.

pub mod checkpoint;
pub mod layers;

use std::borrow::Borrow;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::FeatureVector;
use crate::volume::{voxel_count, Shape3, Volume};
use layers::{Activation, KERNEL_VOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classify,
    Regress,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Classify => "classify",
            Task::Regress => "regress",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    TabularOnly,
    VisionOnly,
    Multimodal,
}

impl Modality {
    pub fn uses_vision(self) -> bool {
        matches!(self, Modality::VisionOnly | Modality::Multimodal)
    }

    pub fn uses_tabular(self) -> bool {
        matches!(self, Modality::TabularOnly | Modality::Multimodal)
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::TabularOnly => "tabular_only",
            Modality::VisionOnly => "vision_only",
            Modality::Multimodal => "multimodal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_shape: Shape3,
    pub vision_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub vision_embed_dim: usize,
    pub tabular_hidden: Vec<usize>,
    pub tabular_embed_dim: usize,
    pub fusion_hidden: Vec<usize>,
    pub task: Task,
    pub modality: Modality,
    pub vision_activation: Activation,
    pub tabular_activation: Activation,
    pub fusion_activation: Activation,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_shape: [24, 24, 24],
            vision_channels: vec![8, 16, 32],
            blocks_per_stage: 1,
            vision_embed_dim: 32,
            tabular_hidden: vec![16, 16],
            tabular_embed_dim: 8,
            fusion_hidden: vec![16],
            task: Task::Classify,
            modality: Modality::Multimodal,
            vision_activation: Activation::Relu,
            tabular_activation: Activation::Gelu,
            fusion_activation: Activation::Gelu,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model: {m}")));
        if self.vision_channels.is_empty() {
            return bad("vision_channels must name at least one stage".into());
        }
        for (name, widths) in [
            ("vision_channels", &self.vision_channels),
            ("tabular_hidden", &self.tabular_hidden),
            ("fusion_hidden", &self.fusion_hidden),
        ] {
            if widths.contains(&0) {
                return bad(format!("{name} contains a zero-width layer"));
            }
        }
        if self.blocks_per_stage == 0 {
            return bad("blocks_per_stage must be > 0".into());
        }
        if self.vision_embed_dim == 0 || self.tabular_embed_dim == 0 {
            return bad("embedding dimensions must be > 0".into());
        }
        let min_side = 1usize << self.vision_channels.len();
        if self.input_shape.iter().any(|&d| d < min_side) {
            return bad(format!(
                "input_shape {:?} too small for {} pooling steps",
                self.input_shape,
                self.vision_channels.len()
            ));
        }
        Ok(())
    }

    /// Length of the fused embedding fed to the head.
    pub fn fusion_input_dim(&self) -> usize {
        let mut n = 0;
        if self.modality.uses_vision() {
            n += self.vision_embed_dim;
        }
        if self.modality.uses_tabular() {
            n += self.tabular_embed_dim;
        }
        n
    }
}

/// One named tensor inside the flat parameter vector. Biases are stored as
/// `rows × 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub fan_in: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Affine {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct BlockLayout {
    conv1: Affine,
    conv2: Affine,
    proj: Option<usize>,
    c_in: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct VisionLayout {
    stem: Affine,
    stages: Vec<Vec<BlockLayout>>,
    fc: Affine,
}

/// Canonical parameter ordering: vision (stem, stages, fc), tabular MLP,
/// fusion MLP. Within each layer the weight precedes its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    vision: Option<VisionLayout>,
    tabular: Option<Vec<Affine>>,
    fusion: Vec<Affine>,
    pub total: usize,
}

struct LayoutBuilder {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) -> usize {
        self.tensors.push(TensorSpec {
            name,
            rows,
            cols,
            offset: self.total,
            fan_in,
        });
        self.total += rows * cols;
        self.tensors.len() - 1
    }

    fn affine(&mut self, name: &str, out: usize, fan_in: usize) -> Affine {
        let w = self.push(format!("{name}.weight"), out, fan_in, fan_in);
        let b = self.push(format!("{name}.bias"), out, 1, fan_in);
        Affine { w, b }
    }

    fn mlp(&mut self, prefix: &str, input: usize, hidden: &[usize], out: usize) -> Vec<Affine> {
        let mut layers = Vec::new();
        let mut prev = input;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(self.affine(&format!("{prefix}.hidden{i}"), h, prev));
            prev = h;
        }
        layers.push(self.affine(&format!("{prefix}.out"), out, prev));
        layers
    }
}

impl Layout {
    pub fn new(config: &ModelConfig) -> Layout {
        let mut b = LayoutBuilder {
            tensors: Vec::new(),
            total: 0,
        };
        let vision = config.modality.uses_vision().then(|| {
            let c0 = config.vision_channels[0];
            let stem = b.affine("vision.stem", c0, KERNEL_VOL);
            let mut prev = c0;
            let mut stages = Vec::new();
            for (s, &width) in config.vision_channels.iter().enumerate() {
                let mut blocks = Vec::new();
                for k in 0..config.blocks_per_stage {
                    let name = format!("vision.stage{s}.block{k}");
                    let conv1 = b.affine(&format!("{name}.conv1"), width, prev * KERNEL_VOL);
                    let conv2 = b.affine(&format!("{name}.conv2"), width, width * KERNEL_VOL);
                    let proj = (prev != width).then(|| b.push(format!("{name}.proj.weight"), width, prev, prev));
                    blocks.push(BlockLayout {
                        conv1,
                        conv2,
                        proj,
                        c_in: prev,
                    });
                    prev = width;
                }
                stages.push(blocks);
            }
            let fc = b.affine("vision.fc", config.vision_embed_dim, prev);
            VisionLayout { stem, stages, fc }
        });
        let tabular = config.modality.uses_tabular().then(|| {
            b.mlp("tabular", FeatureVector::LEN, &config.tabular_hidden, config.tabular_embed_dim)
        });
        let fusion = b.mlp("fusion", config.fusion_input_dim(), &config.fusion_hidden, 1);
        Layout {
            tensors: b.tensors,
            vision,
            tabular,
            fusion,
            total: b.total,
        }
    }

    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModelParams {
    pub config: ModelConfig,
    pub layout: Layout,
    pub values: Vec<f64>,
}

/// Fan-in scaled uniform initialization, `U(−1/√fan_in, 1/√fan_in)`.
pub fn init_model(config: &ModelConfig) -> Result<FusionModelParams> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let mut values = vec![0.0; layout.total];
    for t in &layout.tensors {
        let bound = 1.0 / (t.fan_in as f64).sqrt();
        for v in &mut values[t.range()] {
            *v = rng.gen_range(-bound..bound);
        }
    }
    Ok(FusionModelParams {
        config: config.clone(),
        layout,
        values,
    })
}

impl FusionModelParams {
    pub fn from_values(config: &ModelConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        if values.len() != layout.total {
            return Err(Error::Shape(format!(
                "{} parameter values for a layout of {}",
                values.len(),
                layout.total
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("parameters contain non-finite values".into()));
        }
        Ok(FusionModelParams {
            config: config.clone(),
            layout,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.find(name).map(|t| &self.values[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.find(name)?.range();
        Some(&mut self.values[range])
    }

    fn mat(&self, idx: usize) -> ArrayView2<'_, f64> {
        let t = &self.layout.tensors[idx];
        ArrayView2::from_shape((t.rows, t.cols), &self.values[t.range()]).expect("layout shapes")
    }

    fn vec(&self, idx: usize) -> ArrayView1<'_, f64> {
        let t = &self.layout.tensors[idx];
        ArrayView1::from_shape(t.rows, &self.values[t.range()]).expect("layout shapes")
    }
}

fn grad_mat<'a>(layout: &Layout, grad: &'a mut [f64], idx: usize) -> ArrayViewMut2<'a, f64> {
    let t = &layout.tensors[idx];
    ArrayViewMut2::from_shape((t.rows, t.cols), &mut grad[t.range()]).expect("layout shapes")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Sigmoid probability (classify) or normalized RFS (regress).
    pub output: f64,
    /// Pre-head value: the logit for classification, equal to `output` for regression.
    pub raw: f64,
    pub vision_embedding: Option<Vec<f64>>,
    pub tabular_embedding: Option<Vec<f64>>,
}

struct BlockTrace {
    x: Array2<f64>,
    col1: Array2<f64>,
    pre1: Array2<f64>,
    col2: Array2<f64>,
    shape: Shape3,
}

struct StageTrace {
    blocks: Vec<BlockTrace>,
    pool: Option<(Vec<usize>, usize)>,
}

struct VisionTrace {
    stem_col: Array2<f64>,
    stem_pre: Array2<f64>,
    stem_pool: Vec<usize>,
    stem_voxels: usize,
    stages: Vec<StageTrace>,
    gap_voxels: usize,
    gap: Array1<f64>,
}

struct MlpTrace {
    inputs: Vec<Array1<f64>>,
    pres: Vec<Array1<f64>>,
}

struct Trace {
    vision: Option<VisionTrace>,
    tabular: Option<MlpTrace>,
    fusion: MlpTrace,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mlp_forward(params: &FusionModelParams, layers: &[Affine], act: Activation, x: Array1<f64>) -> (Array1<f64>, MlpTrace) {
    let mut trace = MlpTrace {
        inputs: Vec::with_capacity(layers.len()),
        pres: Vec::with_capacity(layers.len()),
    };
    let mut h = x;
    for (i, l) in layers.iter().enumerate() {
        let pre = layers::dense_forward(params.mat(l.w), params.vec(l.b), &h);
        trace.inputs.push(h);
        h = if i + 1 < layers.len() { act.map1(&pre) } else { pre.clone() };
        trace.pres.push(pre);
    }
    (h, trace)
}

fn mlp_backward(
    params: &FusionModelParams,
    layers: &[Affine],
    act: Activation,
    trace: &MlpTrace,
    dout: Array1<f64>,
    grad: &mut [f64],
) -> Array1<f64> {
    let mut d = dout;
    for (i, l) in layers.iter().enumerate().rev() {
        if i + 1 < layers.len() {
            act.backprop(&mut d, &trace.pres[i]);
        }
        let (gw, gb) = split_affine(&params.layout, grad, *l);
        d = layers::dense_backward(params.mat(l.w), &trace.inputs[i], &d, gw, gb);
    }
    d
}

/// Disjoint gradient views for a weight and its bias (stored adjacently).
fn split_affine<'a>(layout: &Layout, grad: &'a mut [f64], a: Affine) -> (ArrayViewMut2<'a, f64>, ArrayViewMut1<'a, f64>) {
    let tw = &layout.tensors[a.w];
    let tb = &layout.tensors[a.b];
    debug_assert_eq!(tb.offset, tw.offset + tw.len());
    let (head, tail) = grad[tw.offset..tb.offset + tb.len()].split_at_mut(tw.len());
    (
        ArrayViewMut2::from_shape((tw.rows, tw.cols), head).expect("layout shapes"),
        ArrayViewMut1::from_shape(tb.rows, tail).expect("layout shapes"),
    )
}

fn block_forward(params: &FusionModelParams, b: &BlockLayout, act: Activation, x: Array2<f64>, shape: Shape3) -> (Array2<f64>, BlockTrace) {
    let col1 = layers::im2col(&x, shape);
    let pre1 = layers::conv_forward(params.mat(b.conv1.w), params.vec(b.conv1.b), &col1);
    let a1 = act.map(&pre1);
    let col2 = layers::im2col(&a1, shape);
    let branch = layers::conv_forward(params.mat(b.conv2.w), params.vec(b.conv2.b), &col2);
    let skip = match b.proj {
        Some(p) => params.mat(p).dot(&x),
        None => x.clone(),
    };
    let y = skip + branch;
    (
        y,
        BlockTrace {
            x,
            col1,
            pre1,
            col2,
            shape,
        },
    )
}

fn block_backward(
    params: &FusionModelParams,
    b: &BlockLayout,
    act: Activation,
    t: &BlockTrace,
    dy: Array2<f64>,
    grad: &mut [f64],
) -> Array2<f64> {
    let width = params.layout.tensors[b.conv2.w].rows;
    let (gw, gb) = split_affine(&params.layout, grad, b.conv2);
    let dcol2 = layers::conv_backward(params.mat(b.conv2.w), &t.col2, &dy, gw, Some(gb));
    let mut da1 = layers::col2im(&dcol2, width, t.shape);
    act.backprop(&mut da1, &t.pre1);
    let (gw, gb) = split_affine(&params.layout, grad, b.conv1);
    let dcol1 = layers::conv_backward(params.mat(b.conv1.w), &t.col1, &da1, gw, Some(gb));
    let mut dx = layers::col2im(&dcol1, b.c_in, t.shape);
    match b.proj {
        Some(p) => {
            let mut gp = grad_mat(&params.layout, grad, p);
            ndarray::linalg::general_mat_mul(1.0, &dy, &t.x.t(), 1.0, &mut gp);
            dx += &params.mat(p).t().dot(&dy);
        }
        None => dx += &dy,
    }
    dx
}

fn vision_forward(params: &FusionModelParams, v: &VisionLayout, volume: &Volume) -> (Array1<f64>, VisionTrace) {
    let act = params.config.vision_activation;
    let mut shape = volume.shape();
    let input = Array2::from_shape_vec(
        (1, voxel_count(shape)),
        volume.data().iter().map(|&x| x as f64).collect(),
    )
    .expect("volume length matches shape");
    let stem_col = layers::im2col(&input, shape);
    let stem_pre = layers::conv_forward(params.mat(v.stem.w), params.vec(v.stem.b), &stem_col);
    let stem_voxels = voxel_count(shape);
    let (mut x, stem_pool) = layers::maxpool_forward(&act.map(&stem_pre), shape);
    shape = layers::pooled_shape(shape);

    let mut stages = Vec::with_capacity(v.stages.len());
    for (s, blocks) in v.stages.iter().enumerate() {
        let mut traces = Vec::with_capacity(blocks.len());
        for b in blocks {
            let (y, t) = block_forward(params, b, act, x, shape);
            traces.push(t);
            x = y;
        }
        let pool = if s + 1 < v.stages.len() {
            let in_voxels = voxel_count(shape);
            let (p, arg) = layers::maxpool_forward(&x, shape);
            x = p;
            shape = layers::pooled_shape(shape);
            Some((arg, in_voxels))
        } else {
            None
        };
        stages.push(StageTrace { blocks: traces, pool });
    }
    let gap = layers::global_avg_pool(&x);
    let embedding = layers::dense_forward(params.mat(v.fc.w), params.vec(v.fc.b), &gap);
    (
        embedding,
        VisionTrace {
            stem_col,
            stem_pre,
            stem_pool,
            stem_voxels,
            stages,
            gap_voxels: voxel_count(shape),
            gap,
        },
    )
}

fn vision_backward(params: &FusionModelParams, v: &VisionLayout, t: &VisionTrace, demb: Array1<f64>, grad: &mut [f64]) {
    let act = params.config.vision_activation;
    let (gw, gb) = split_affine(&params.layout, grad, v.fc);
    let dgap = layers::dense_backward(params.mat(v.fc.w), &t.gap, &demb, gw, gb);
    let mut dx = layers::global_avg_pool_backward(&dgap, t.gap_voxels);
    for (blocks, st) in v.stages.iter().zip(&t.stages).rev() {
        if let Some((arg, in_voxels)) = &st.pool {
            dx = layers::maxpool_backward(&dx, arg, *in_voxels);
        }
        for (b, bt) in blocks.iter().zip(&st.blocks).rev() {
            dx = block_backward(params, b, act, bt, dx, grad);
        }
    }
    let mut dstem = layers::maxpool_backward(&dx, &t.stem_pool, t.stem_voxels);
    act.backprop(&mut dstem, &t.stem_pre);
    let (gw, gb) = split_affine(&params.layout, grad, v.stem);
    let mut gw = gw;
    ndarray::linalg::general_mat_mul(1.0, &dstem, &t.stem_col.t(), 1.0, &mut gw);
    let mut gb = gb;
    gb += &dstem.sum_axis(ndarray::Axis(1));
}

fn forward_trace(params: &FusionModelParams, volume: &Volume, features: &FeatureVector) -> Result<(ForwardOutput, Trace)> {
    let cfg = &params.config;
    let (vision_emb, vision_trace) = match &params.layout.vision {
        Some(v) => {
            if volume.shape() != cfg.input_shape {
                return Err(Error::Shape(format!(
                    "volume {:?} does not match model input {:?}",
                    volume.shape(),
                    cfg.input_shape
                )));
            }
            let (e, t) = vision_forward(params, v, volume);
            (Some(e), Some(t))
        }
        None => (None, None),
    };
    let (tab_emb, tab_trace) = match &params.layout.tabular {
        Some(layers) => {
            let x = Array1::from_vec(features.0.to_vec());
            let (e, t) = mlp_forward(params, layers, cfg.tabular_activation, x);
            (Some(e), Some(t))
        }
        None => (None, None),
    };
    let mut fused = Vec::with_capacity(cfg.fusion_input_dim());
    if let Some(e) = &vision_emb {
        fused.extend(e.iter().copied());
    }
    if let Some(e) = &tab_emb {
        fused.extend(e.iter().copied());
    }
    let (out, fusion_trace) = mlp_forward(params, &params.layout.fusion, cfg.fusion_activation, Array1::from_vec(fused));
    let raw = out[0];
    let output = match cfg.task {
        Task::Classify => sigmoid(raw),
        Task::Regress => raw,
    };
    Ok((
        ForwardOutput {
            output,
            raw,
            vision_embedding: vision_emb.map(|e| e.to_vec()),
            tabular_embedding: tab_emb.map(|e| e.to_vec()),
        },
        Trace {
            vision: vision_trace,
            tabular: tab_trace,
            fusion: fusion_trace,
        },
    ))
}

/// Pure forward pass. The volume is ignored (and not shape-checked) by a
/// tabular-only model; the features are ignored by a vision-only model.
pub fn forward(params: &FusionModelParams, volume: &Volume, features: &FeatureVector) -> Result<ForwardOutput> {
    forward_trace(params, volume, features).map(|(o, _)| o)
}

fn backward(params: &FusionModelParams, trace: &Trace, draw: f64, grad: &mut [f64]) {
    let cfg = &params.config;
    let dfused = mlp_backward(
        params,
        &params.layout.fusion,
        cfg.fusion_activation,
        &trace.fusion,
        Array1::from_elem(1, draw),
        grad,
    );
    let mut offset = 0;
    if let (Some(v), Some(t)) = (&params.layout.vision, &trace.vision) {
        let d = dfused.slice(ndarray::s![0..cfg.vision_embed_dim]).to_owned();
        offset = cfg.vision_embed_dim;
        vision_backward(params, v, t, d, grad);
    }
    if let (Some(l), Some(t)) = (&params.layout.tabular, &trace.tabular) {
        let d = dfused.slice(ndarray::s![offset..offset + cfg.tabular_embed_dim]).to_owned();
        mlp_backward(params, l, cfg.tabular_activation, t, d, grad);
    }
}

/// One training example: preprocessed volume and features plus a target
/// (relapse flag for classification, RFS / rfs_cap for regression).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub volume: Volume,
    pub features: FeatureVector,
    pub target: f64,
}

/// Per-sample loss and its derivative w.r.t. the pre-head value.
fn loss_terms(task: Task, raw: f64, target: f64) -> (f64, f64) {
    match task {
        Task::Classify => {
            // softplus(z) − t·z, stable for large |z|
            let softplus = if raw > 0.0 {
                raw + (-raw).exp().ln_1p()
            } else {
                raw.exp().ln_1p()
            };
            (softplus - target * raw, sigmoid(raw) - target)
        }
        Task::Regress => {
            let e = raw - target;
            (e * e, 2.0 * e)
        }
    }
}

/// Mean loss over the batch (BCE for classification, squared error for
/// regression) and its exact gradient in the canonical parameter layout.
pub fn loss_and_grad<S: Borrow<Sample>>(params: &FusionModelParams, batch: &[S]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Argument("loss over an empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut total = 0.0;
    for s in batch {
        let s = s.borrow();
        let (out, trace) = forward_trace(params, &s.volume, &s.features)?;
        let (loss, draw) = loss_terms(params.config.task, out.raw, s.target);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { record_id: s.id.clone() });
        }
        total += loss;
        backward(params, &trace, draw * scale, &mut grad);
    }
    Ok((total * scale, grad))
}

/// Mean loss only.
pub fn loss<S: Borrow<Sample>>(params: &FusionModelParams, batch: &[S]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Argument("loss over an empty batch".into()));
    }
    let mut total = 0.0;
    for s in batch {
        let s = s.borrow();
        let out = forward(params, &s.volume, &s.features)?;
        let (l, _) = loss_terms(params.config.task, out.raw, s.target);
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { record_id: s.id.clone() });
        }
        total += l;
    }
    Ok(total / batch.len() as f64)
}
