//! Two-stream KNN-graph feature extractor and the embedding cost matrix.
//!
//! Each stream stacks residual edge-convolution blocks: for an anchor `i`
//! with neighbors `j`, the edge feature `[h_i, h_j - h_i]` passes through a
//! small MLP, the results are averaged over the neighbors and added to the
//! (possibly linearly projected) anchor feature. A final linear layer maps to
//! the embedding dimension.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elements::{Element2D, Element3D, SemanticClass, Taxonomy};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// `x * sigmoid(x)`; smooth, with `silu(0) = 0`.
    Silu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub blocks: usize,
    pub dim: usize,
    pub neighbors: usize,
    /// Dense layers per edge MLP.
    pub mlp_depth: usize,
    pub activation: Activation,
    /// Rebuild the KNN graph on the current features before every block.
    pub dynamic_graph: bool,
    pub num_classes: usize,
    /// Multiplier applied to map coordinates (relative to the submap origin).
    pub map_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            blocks: 12,
            dim: 128,
            neighbors: 4,
            mlp_depth: 2,
            activation: Activation::Silu,
            dynamic_graph: false,
            num_classes: 4,
            map_scale: 1.0,
        }
    }
}

impl EncoderConfig {
    /// Reduced network for desk-scale training.
    pub fn desk() -> Self {
        Self { blocks: 4, dim: 64, ..Self::default() }
    }

    pub fn input_dim(&self) -> usize {
        6 + self.num_classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.dim == 0 || self.neighbors == 0 || self.mlp_depth == 0 {
            return Err(Error::Config(format!("degenerate encoder config {self:?}")));
        }
        if !(self.map_scale > 0.0) {
            return Err(Error::Config("map_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Affine layer `y = W x + b` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    fn init(rng: &mut impl Rng, input: usize, output: usize) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = DMatrix::from_fn(output, input, |_, _| rng.random_range(-bound..bound));
        let bias = DVector::from_fn(output, |_, _| rng.random_range(-bound..bound));
        Self { weight, bias }
    }

    fn zeros(input: usize, output: usize) -> Self {
        Self { weight: DMatrix::zeros(output, input), bias: DVector::zeros(output) }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Row-wise `X W^T + 1 b^T`.
    fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * self.weight.transpose();
        for mut row in y.row_iter_mut() {
            row += self.bias.transpose();
        }
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&self, x: &DMatrix<f64>, dy: &DMatrix<f64>, grad: &mut Dense) -> DMatrix<f64> {
        grad.weight += dy.transpose() * x;
        for row in dy.row_iter() {
            grad.bias += row.transpose();
        }
        dy * &self.weight
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub layers: Vec<Dense>,
    /// Linear shortcut when the block changes the feature width.
    pub shortcut: Option<Dense>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamWeights {
    pub blocks: Vec<Block>,
    pub projection: Dense,
}

impl StreamWeights {
    fn build(cfg: &EncoderConfig, mut make: impl FnMut(usize, usize) -> Dense) -> Self {
        let mut blocks = Vec::with_capacity(cfg.blocks);
        let mut width = cfg.input_dim();
        for _ in 0..cfg.blocks {
            let mut layers = Vec::with_capacity(cfg.mlp_depth);
            let mut input = 2 * width;
            for _ in 0..cfg.mlp_depth {
                layers.push(make(input, cfg.dim));
                input = cfg.dim;
            }
            let shortcut = (width != cfg.dim).then(|| make(width, cfg.dim));
            blocks.push(Block { layers, shortcut });
            width = cfg.dim;
        }
        let projection = make(cfg.dim, cfg.dim);
        Self { blocks, projection }
    }

    fn denses(&self) -> Vec<&Dense> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.layers.iter());
            out.extend(b.shortcut.iter());
        }
        out.push(&self.projection);
        out
    }

    fn denses_mut(&mut self) -> Vec<&mut Dense> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.extend(b.layers.iter_mut());
            out.extend(b.shortcut.iter_mut());
        }
        out.push(&mut self.projection);
        out
    }

    fn check(&self, cfg: &EncoderConfig) -> Result<()> {
        let expected = StreamWeights::build(cfg, Dense::zeros);
        let ok = self.blocks.len() == expected.blocks.len()
            && self.denses().iter().zip(expected.denses()).all(|(a, b)| {
                a.weight.shape() == b.weight.shape() && a.bias.len() == b.bias.len()
            })
            && self.denses().len() == expected.denses().len();
        if ok {
            Ok(())
        } else {
            Err(Error::Config("stream weights do not match the encoder configuration".into()))
        }
    }
}

/// Which of the two encoder streams to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// 2D observations.
    Image,
    /// 3D map elements.
    Map,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub config: EncoderConfig,
    pub image: StreamWeights,
    pub map: StreamWeights,
}

impl EncoderWeights {
    /// Uniform `±1/sqrt(fan_in)` initialization from a seed.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut image_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let mut map_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        Ok(Self {
            config,
            image: StreamWeights::build(&config, |i, o| Dense::init(&mut image_rng, i, o)),
            map: StreamWeights::build(&config, |i, o| Dense::init(&mut map_rng, i, o)),
        })
    }

    pub fn zeros(config: EncoderConfig) -> Self {
        Self {
            config,
            image: StreamWeights::build(&config, Dense::zeros),
            map: StreamWeights::build(&config, Dense::zeros),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    pub fn stream(&self, s: Stream) -> &StreamWeights {
        match s {
            Stream::Image => &self.image,
            Stream::Map => &self.map,
        }
    }

    pub fn stream_mut(&mut self, s: Stream) -> &mut StreamWeights {
        match s {
            Stream::Image => &mut self.image,
            Stream::Map => &mut self.map,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.image.check(&self.config)?;
        self.map.check(&self.config)
    }

    /// Every parameter tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for d in self.image.denses().into_iter().chain(self.map.denses()) {
            out.push(d.weight.as_slice());
            out.push(d.bias.as_slice());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        let (image, map) = (&mut self.image, &mut self.map);
        for d in image.denses_mut().into_iter().chain(map.denses_mut()) {
            out.push(d.weight.as_mut_slice());
            out.push(d.bias.as_mut_slice());
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += scale * other`, parameter-wise.
    pub fn add_scaled(&mut self, other: &EncoderWeights, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn encode_image(&self, elements: &[Element2D]) -> Result<(EmbeddingSet, StreamCache)> {
        let x = inputs_2d(elements, self.config.num_classes)?;
        let classes = elements.iter().map(|e| e.class).collect();
        encode(&x, classes, self, Stream::Image)
    }

    pub fn encode_map(&self, elements: &[Element3D], origin: &Vec3) -> Result<(EmbeddingSet, StreamCache)> {
        let x = inputs_3d(elements, origin, self.config.num_classes, self.config.map_scale)?;
        let classes = elements.iter().map(|e| e.class).collect();
        encode(&x, classes, self, Stream::Map)
    }
}

/// Embeddings, one row per element, with each element's class.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub z: DMatrix<f64>,
    pub classes: Vec<SemanticClass>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }
}

fn one_hot_into(v: &mut [f64], class: SemanticClass, c: usize) -> Result<()> {
    if class.0 >= c {
        return Err(Error::Config(format!("class {} exceeds one-hot length {c}", class.0)));
    }
    v[6 + class.0] = 1.0;
    Ok(())
}

/// `[bearing, direction, one-hot]`.
pub fn build_input_2d(e: &Element2D, num_classes: usize) -> Result<DVector<f64>> {
    let mut v = DVector::zeros(6 + num_classes);
    v.fixed_rows_mut::<3>(0).copy_from(e.bearing.as_vector());
    v.fixed_rows_mut::<3>(3).copy_from(&e.direction);
    one_hot_into(v.as_mut_slice(), e.class, num_classes)?;
    Ok(v)
}

/// `[scale * (point - origin), direction, one-hot]`.
pub fn build_input_3d(e: &Element3D, origin: &Vec3, num_classes: usize, scale: f64) -> Result<DVector<f64>> {
    let mut v = DVector::zeros(6 + num_classes);
    v.fixed_rows_mut::<3>(0).copy_from(&((e.point - origin) * scale));
    v.fixed_rows_mut::<3>(3).copy_from(&e.direction);
    one_hot_into(v.as_mut_slice(), e.class, num_classes)?;
    Ok(v)
}

fn stack(rows: Vec<DVector<f64>>, dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), dim);
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).copy_from(&r.transpose());
    }
    m
}

pub fn inputs_2d(elements: &[Element2D], num_classes: usize) -> Result<DMatrix<f64>> {
    let rows = elements
        .iter()
        .map(|e| build_input_2d(e, num_classes))
        .collect::<Result<Vec<_>>>()?;
    Ok(stack(rows, 6 + num_classes))
}

pub fn inputs_3d(elements: &[Element3D], origin: &Vec3, num_classes: usize, scale: f64) -> Result<DMatrix<f64>> {
    let rows = elements
        .iter()
        .map(|e| build_input_3d(e, origin, num_classes, scale))
        .collect::<Result<Vec<_>>>()?;
    Ok(stack(rows, 6 + num_classes))
}

/// Classes of the taxonomy in input order, for convenience in tests.
pub fn classes_of(tax: &Taxonomy) -> Vec<SemanticClass> {
    tax.classes().collect()
}

/// `k` nearest rows of `x` for every row, Euclidean, self excluded, ties to
/// the lower index. Short lists are padded with the nearest neighbor; a lone
/// element is its own neighbor.
pub fn knn_graph(x: &DMatrix<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = x.nrows();
    (0..n)
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| ((x.row(i) - x.row(j)).norm_squared(), j))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut out: Vec<usize> = cand.iter().take(k).map(|c| c.1).collect();
            let fill = out.first().copied().unwrap_or(i);
            out.resize(k, fill);
            out
        })
        .collect()
}

struct BlockCache {
    input: DMatrix<f64>,
    neighbors: Vec<Vec<usize>>,
    edges: DMatrix<f64>,
    /// Pre-activations of each MLP layer.
    pre: Vec<DMatrix<f64>>,
    /// Post-activations of each MLP layer.
    post: Vec<DMatrix<f64>>,
}

/// Forward intermediates needed by [`encode_backward`].
pub struct StreamCache {
    stream: Stream,
    blocks: Vec<BlockCache>,
    last: DMatrix<f64>,
}

impl StreamCache {
    pub fn stream(&self) -> Stream {
        self.stream
    }

    pub fn neighbors(&self, block: usize) -> &[Vec<usize>] {
        &self.blocks[block].neighbors
    }
}

fn edge_features(h: &DMatrix<f64>, neighbors: &[Vec<usize>], k: usize) -> DMatrix<f64> {
    let (n, d) = h.shape();
    let mut e = DMatrix::zeros(n * k, 2 * d);
    for i in 0..n {
        for (q, &j) in neighbors[i].iter().enumerate() {
            let row = i * k + q;
            for c in 0..d {
                let hi = h[(i, c)];
                e[(row, c)] = hi;
                e[(row, d + c)] = h[(j, c)] - hi;
            }
        }
    }
    e
}

/// Runs one stream over `inputs` (`n x (6 + C)`).
pub fn encode(
    inputs: &DMatrix<f64>,
    classes: Vec<SemanticClass>,
    weights: &EncoderWeights,
    stream: Stream,
) -> Result<(EmbeddingSet, StreamCache)> {
    let cfg = &weights.config;
    let sw = weights.stream(stream);
    sw.check(cfg)?;
    if inputs.ncols() != cfg.input_dim() {
        return Err(Error::Config(format!(
            "input width {} does not match encoder input {}",
            inputs.ncols(),
            cfg.input_dim()
        )));
    }
    if classes.len() != inputs.nrows() {
        return Err(Error::ShapeMismatch("class list and input rows differ".into()));
    }
    let n = inputs.nrows();
    let k = cfg.neighbors;
    let static_graph = knn_graph(inputs, k);
    let mut h = inputs.clone();
    let mut caches = Vec::with_capacity(sw.blocks.len());
    for block in &sw.blocks {
        let neighbors = if cfg.dynamic_graph && !caches.is_empty() {
            knn_graph(&h, k)
        } else {
            static_graph.clone()
        };
        let edges = edge_features(&h, &neighbors, k);
        let mut pre = Vec::with_capacity(block.layers.len());
        let mut post = Vec::with_capacity(block.layers.len());
        let mut x = edges.clone();
        for layer in &block.layers {
            let a = layer.forward(&x);
            let y = a.map(|v| cfg.activation.apply(v));
            pre.push(a);
            post.push(y.clone());
            x = y;
        }
        let mut pooled = DMatrix::zeros(n, cfg.dim);
        for i in 0..n {
            for q in 0..k {
                let r = x.row(i * k + q) / k as f64;
                let mut dst = pooled.row_mut(i);
                dst += r;
            }
        }
        let next = match &block.shortcut {
            Some(s) => s.forward(&h) + pooled,
            None => &h + pooled,
        };
        caches.push(BlockCache { input: h, neighbors, edges, pre, post });
        h = next;
    }
    let z = sw.projection.forward(&h);
    if n > 0 && !z.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("encoder produced non-finite embeddings".into()));
    }
    Ok((EmbeddingSet { z, classes }, StreamCache { stream, blocks: caches, last: h }))
}

/// Reverse-mode gradients of one stream. The KNN indices are constants.
///
/// Returns the weight gradient (only the cached stream is populated) and the
/// gradient with respect to the inputs.
pub fn encode_backward(
    cache: &StreamCache,
    weights: &EncoderWeights,
    upstream: &DMatrix<f64>,
) -> Result<(EncoderWeights, DMatrix<f64>)> {
    let mut grad = weights.zeros_like();
    let dx = encode_backward_into(cache, weights, upstream, &mut grad)?;
    Ok((grad, dx))
}

/// As [`encode_backward`], accumulating into an existing gradient.
pub fn encode_backward_into(
    cache: &StreamCache,
    weights: &EncoderWeights,
    upstream: &DMatrix<f64>,
    grad: &mut EncoderWeights,
) -> Result<DMatrix<f64>> {
    let cfg = &weights.config;
    let sw = weights.stream(cache.stream);
    let gw = grad.stream_mut(cache.stream);
    if upstream.shape() != (cache.last.nrows(), cfg.dim) {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient {:?} does not match embeddings ({}, {})",
            upstream.shape(),
            cache.last.nrows(),
            cfg.dim
        )));
    }
    let k = cfg.neighbors;
    let mut dh = sw.projection.backward(&cache.last, upstream, &mut gw.projection);
    for (b, block) in sw.blocks.iter().enumerate().rev() {
        let bc = &cache.blocks[b];
        let n = bc.input.nrows();
        let d = bc.input.ncols();
        let mut dinput = match &block.shortcut {
            Some(s) => s.backward(&bc.input, &dh, gw.blocks[b].shortcut.as_mut().expect("shape checked")),
            None => dh.clone(),
        };
        let mut dy = DMatrix::zeros(n * k, cfg.dim);
        for i in 0..n {
            for q in 0..k {
                dy.row_mut(i * k + q).copy_from(&(dh.row(i) / k as f64));
            }
        }
        for l in (0..block.layers.len()).rev() {
            let da = dy.zip_map(&bc.pre[l], |g, a| g * cfg.activation.derivative(a));
            let x = if l == 0 { &bc.edges } else { &bc.post[l - 1] };
            dy = block.layers[l].backward(x, &da, &mut gw.blocks[b].layers[l]);
        }
        for i in 0..n {
            for (q, &j) in bc.neighbors[i].iter().enumerate() {
                let row = i * k + q;
                for c in 0..d {
                    let g_anchor = dy[(row, c)];
                    let g_delta = dy[(row, d + c)];
                    dinput[(i, c)] += g_anchor - g_delta;
                    dinput[(j, c)] += g_delta;
                }
            }
        }
        dh = dinput;
    }
    Ok(dh)
}

/// Pairwise L2 distances between embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(pub DMatrix<f64>);

pub fn cost_matrix(zf: &DMatrix<f64>, zp: &DMatrix<f64>) -> Result<CostMatrix> {
    if zf.ncols() != zp.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "embedding widths differ: {} vs {}",
            zf.ncols(),
            zp.ncols()
        )));
    }
    Ok(CostMatrix(DMatrix::from_fn(zf.nrows(), zp.nrows(), |i, j| {
        (zf.row(i) - zp.row(j)).norm()
    })))
}

/// Gradients of a scalar with respect to both embedding sets given its
/// gradient on the cost matrix. Zero-distance entries contribute nothing.
pub fn cost_matrix_backward(
    zf: &DMatrix<f64>,
    zp: &DMatrix<f64>,
    cost: &CostMatrix,
    upstream: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut dzf = DMatrix::zeros(zf.nrows(), zf.ncols());
    let mut dzp = DMatrix::zeros(zp.nrows(), zp.ncols());
    for i in 0..zf.nrows() {
        for j in 0..zp.nrows() {
            let m = cost.0[(i, j)];
            let g = upstream[(i, j)];
            if m <= 0.0 || g == 0.0 {
                continue;
            }
            let diff = (zf.row(i) - zp.row(j)) * (g / m);
            let mut a = dzf.row_mut(i);
            a += &diff;
            let mut b = dzp.row_mut(j);
            b -= &diff;
        }
    }
    (dzf, dzp)
}
