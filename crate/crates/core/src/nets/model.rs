//! The toy pose network.
//!
//! ```text
//! scene ──3DGC──relu──h1──3DGC──relu──h2 ─┬─ max over all points ─ g
//!                                          └─ [max, mean] over object points ─ latent
//! seg:   [h1, h2, g, s] per point → 2 logits (s: relative neighbour spacing)
//! rec:   [latent, onehot] → hidden → M×3 points (relative to the object mean)
//! rot:   [latent, moments] → hidden → v1,  [latent, moments] → hidden → v2
//! res:   10·(object points − mean) → per-point MLP → max → [·, onehot] → hidden → (t, s)
//! ```
//!
//! Every branch after segmentation sees only the object rows: the labelled ones
//! during training, the predicted ones at inference.
//!
//! The latent concatenates max and mean pooling. 3DGC features are local, so
//! the max alone cannot tell two faces of the same shape but different area
//! apart; the mean weighs each face by its point count. The rotation heads
//! also see the second moments of the centered object points, which turn with
//! the object and give its long axes directly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn3d::{pool_rows, Aggregation, GconvCache, GcnLayer, GcnLayerConfig, NeighborGraph, PoolMode, Pooled};
use crate::geom::{centroid, Vec3};
use crate::nets::dense::{relu, relu_backward, Dense};
use crate::tensor::Tensor;

/// Reconstruction and residual outputs are multiplied by this, so that a unit
/// activation is 10 cm.
const OUTPUT_SCALE: f64 = 0.1;
/// Centered coordinates are multiplied by this before the residual head.
const RES_INPUT_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_categories: usize,
    pub n_neighbors: usize,
    pub kernel_size: usize,
    pub conv1_channels: usize,
    /// Output channels of the second 3DGC layer; the latent is twice this.
    pub conv2_channels: usize,
    pub rec_hidden: usize,
    pub rec_points: usize,
    pub rot_hidden: usize,
    pub res_point_hidden: usize,
    pub res_hidden: usize,
    pub aggregation: Aggregation,
}

impl ModelConfig {
    pub fn new(n_categories: usize) -> ModelConfig {
        ModelConfig {
            n_categories,
            n_neighbors: 8,
            kernel_size: 3,
            conv1_channels: 8,
            conv2_channels: 32,
            rec_hidden: 128,
            rec_points: 256,
            rot_hidden: 128,
            res_point_hidden: 32,
            res_hidden: 64,
            aggregation: Aggregation::Max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.n_categories,
            self.n_neighbors,
            self.kernel_size,
            self.conv1_channels,
            self.conv2_channels,
            self.rec_hidden,
            self.rec_points,
            self.rot_hidden,
            self.res_point_hidden,
            self.res_hidden,
        ];
        if sizes.contains(&0) {
            return Err(Error::InvalidParameter(format!("model sizes must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Width of the pooled object feature.
    pub fn latent(&self) -> usize {
        2 * self.conv2_channels
    }

    fn conv(&self, cin: usize, cout: usize) -> GcnLayerConfig {
        GcnLayerConfig {
            n_neighbors: self.n_neighbors,
            in_channels: cin,
            out_channels: cout,
            kernel_size: self.kernel_size,
            aggregation: self.aggregation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub config: ModelConfig,
    pub conv1: GcnLayer,
    pub conv2: GcnLayer,
    pub seg: Dense,
    pub rec1: Dense,
    pub rec2: Dense,
    pub rot1a: Dense,
    pub rot1b: Dense,
    pub rot2a: Dense,
    pub rot2b: Dense,
    pub res1: Dense,
    pub res2: Dense,
    pub res3: Dense,
    pub res4: Dense,
}

/// Network outputs for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[n_points, 2]`: background, object.
    pub seg_logits: Vec<f64>,
    /// Rows treated as the object by the later branches.
    pub object_rows: Vec<usize>,
    /// Mean of the object rows.
    pub object_mean: Vec3,
    /// Reconstructed points relative to `object_mean`.
    pub reconstruction: Vec<Vec3>,
    pub v1: Vec3,
    pub v2: Vec3,
    pub t_residual: Vec3,
    pub s_residual: Vec3,
}

/// Gradients of a scalar loss with respect to the outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads {
    pub seg_logits: Vec<f64>,
    pub reconstruction: Vec<Vec3>,
    pub v1: Vec3,
    pub v2: Vec3,
    pub t_residual: Vec3,
    pub s_residual: Vec3,
}

impl OutputGrads {
    pub fn zeros(out: &ForwardOutput) -> OutputGrads {
        OutputGrads {
            seg_logits: vec![0.0; out.seg_logits.len()],
            reconstruction: vec![Vec3::ZERO; out.reconstruction.len()],
            v1: Vec3::ZERO,
            v2: Vec3::ZERO,
            t_residual: Vec3::ZERO,
            s_residual: Vec3::ZERO,
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    graph: NeighborGraph,
    conv1: GconvCache,
    h1: Vec<f64>,
    conv2: GconvCache,
    h2: Vec<f64>,
    global: Pooled,
    seg_in: Vec<f64>,
    latent_max: Pooled,
    rec_in: Vec<f64>,
    rec_h: Vec<f64>,
    rot_in: Vec<f64>,
    rot1_h: Vec<f64>,
    rot2_h: Vec<f64>,
    res_in: Vec<f64>,
    res_h1: Vec<f64>,
    res_h2: Vec<f64>,
    res_pool: Pooled,
    res_in3: Vec<f64>,
    res_h3: Vec<f64>,
}

/// `ln(d_p / median d)` where `d_p` is the mean distance of point `p` to its
/// graph neighbours: a shift- and scale-invariant sparsity cue.
pub fn relative_spacing(points: &[Vec3], graph: &NeighborGraph) -> Vec<f64> {
    let spacing: Vec<f64> = (0..graph.n_points())
        .map(|p| {
            let nbrs = graph.neighbors(p);
            nbrs.iter().map(|&q| points[q].distance(points[p])).sum::<f64>() / nbrs.len() as f64
        })
        .collect();
    let mut sorted = spacing.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    if !(median > 0.0) {
        return vec![0.0; spacing.len()];
    }
    spacing.iter().map(|&d| if d > 0.0 { (d / median).ln() } else { 0.0 }).collect()
}

/// Number of second-moment features.
const MOMENTS: usize = 6;

/// Upper triangle of the covariance of the centered points, divided by its
/// trace so that only orientation and proportions remain.
fn second_moments(points: &[Vec3], mean: Vec3) -> [f64; MOMENTS] {
    let mut m = [0.0; MOMENTS];
    for &p in points {
        let d = (p - mean).to_array();
        let prods = [d[0] * d[0], d[1] * d[1], d[2] * d[2], d[0] * d[1], d[0] * d[2], d[1] * d[2]];
        add_into(&mut m, &prods);
    }
    let trace = m[0] + m[1] + m[2];
    if trace > 0.0 {
        m.map(|x| x / trace)
    } else {
        m
    }
}

fn relu_vec(mut v: Vec<f64>) -> Vec<f64> {
    relu(&mut v);
    v
}

fn vec3_at(v: &[f64], i: usize) -> Vec3 {
    Vec3::new(v[i], v[i + 1], v[i + 2])
}

fn onehot(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

/// Routes a pooled-vector gradient back to the winning rows.
fn unpool(pool: &Pooled, grad: &[f64], channels: usize, target: &mut [f64]) {
    let arg = pool.argmax.as_ref().expect("max pooling");
    for c in 0..channels {
        target[arg[c] * channels + c] += grad[c];
    }
}

impl ToyModel {
    pub fn random<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<ToyModel> {
        config.validate()?;
        let c = &config;
        let k = c.n_categories;
        Ok(ToyModel {
            conv1: GcnLayer::random(c.conv(1, c.conv1_channels), rng)?,
            conv2: GcnLayer::random(c.conv(c.conv1_channels, c.conv2_channels), rng)?,
            seg: Dense::random(c.conv1_channels + 2 * c.conv2_channels + 1, 2, rng),
            rec1: Dense::random(c.latent() + k, c.rec_hidden, rng),
            rec2: Dense::random(c.rec_hidden, 3 * c.rec_points, rng),
            rot1a: Dense::random(c.latent() + MOMENTS, c.rot_hidden, rng),
            rot1b: Dense::random(c.rot_hidden, 3, rng),
            rot2a: Dense::random(c.latent() + MOMENTS, c.rot_hidden, rng),
            rot2b: Dense::random(c.rot_hidden, 3, rng),
            res1: Dense::random(3, c.res_point_hidden, rng),
            res2: Dense::random(c.res_point_hidden, c.res_hidden, rng),
            res3: Dense::random(c.res_hidden + k, c.res_hidden, rng),
            res4: Dense::random(c.res_hidden, 6, rng),
            config,
        })
    }

    /// A model of the same layout with every parameter zero (a gradient accumulator).
    pub fn zeros_like(&self) -> ToyModel {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    pub fn tensor_names() -> [&'static str; 28] {
        [
            "conv1.directions",
            "conv1.weights",
            "conv1.center",
            "conv2.directions",
            "conv2.weights",
            "conv2.center",
            "seg.weight",
            "seg.bias",
            "rec1.weight",
            "rec1.bias",
            "rec2.weight",
            "rec2.bias",
            "rot1a.weight",
            "rot1a.bias",
            "rot1b.weight",
            "rot1b.bias",
            "rot2a.weight",
            "rot2a.bias",
            "rot2b.weight",
            "rot2b.bias",
            "res1.weight",
            "res1.bias",
            "res2.weight",
            "res2.bias",
            "res3.weight",
            "res3.bias",
            "res4.weight",
            "res4.bias",
        ]
    }

    /// All parameter tensors, in [`ToyModel::tensor_names`] order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![
            &self.conv1.directions,
            &self.conv1.weights,
            &self.conv1.center,
            &self.conv2.directions,
            &self.conv2.weights,
            &self.conv2.center,
        ];
        for d in self.dense_layers() {
            v.push(&d.weight);
            v.push(&d.bias);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![
            &mut self.conv1.directions,
            &mut self.conv1.weights,
            &mut self.conv1.center,
            &mut self.conv2.directions,
            &mut self.conv2.weights,
            &mut self.conv2.center,
        ];
        for d in [
            &mut self.seg,
            &mut self.rec1,
            &mut self.rec2,
            &mut self.rot1a,
            &mut self.rot1b,
            &mut self.rot2a,
            &mut self.rot2b,
            &mut self.res1,
            &mut self.res2,
            &mut self.res3,
            &mut self.res4,
        ] {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
        }
        v
    }

    fn dense_layers(&self) -> [&Dense; 11] {
        [
            &self.seg, &self.rec1, &self.rec2, &self.rot1a, &self.rot1b, &self.rot2a, &self.rot2b, &self.res1,
            &self.res2, &self.res3, &self.res4,
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Adds `scale · other` to every parameter.
    pub fn axpy(&mut self, scale: f64, other: &ToyModel) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(scale, b);
        }
    }

    /// Projects the 3DGC kernel directions back to unit length.
    pub fn renormalize(&mut self) {
        self.conv1.renormalize();
        self.conv2.renormalize();
    }

    /// Runs the network. With `object_mask` the object rows are taken from it
    /// (teacher forcing), otherwise from the predicted segmentation.
    pub fn forward(
        &self,
        points: &[Vec3],
        category: usize,
        object_mask: Option<&[bool]>,
    ) -> Result<(ForwardOutput, ForwardCache)> {
        let c = &self.config;
        if category >= c.n_categories {
            return Err(Error::InvalidParameter(format!(
                "category index {category} out of range for {} categories",
                c.n_categories
            )));
        }
        if points.len() < c.n_neighbors + 1 {
            return Err(Error::InvalidParameter(format!(
                "{} points is too few for {} neighbours",
                points.len(),
                c.n_neighbors
            )));
        }
        if let Some(m) = object_mask {
            if m.len() != points.len() {
                return Err(Error::Shape(format!("mask has {} entries for {} points", m.len(), points.len())));
            }
        }
        let np = points.len();
        let (c1, l) = (c.conv1_channels, c.conv2_channels);

        let graph = NeighborGraph::build(points, c.n_neighbors)?;
        let (h1, conv1) = self.conv1.forward(&graph, &vec![1.0; np])?;
        let h1 = relu_vec(h1);
        let (h2, conv2) = self.conv2.forward(&graph, &h1)?;
        let h2 = relu_vec(h2);
        let all: Vec<usize> = (0..np).collect();
        let global = pool_rows(&h2, l, &all, PoolMode::Max)?;

        let spacing = relative_spacing(points, &graph);
        let width = c1 + 2 * l + 1;
        let mut seg_in = Vec::with_capacity(np * width);
        for p in 0..np {
            seg_in.extend_from_slice(&h1[p * c1..(p + 1) * c1]);
            seg_in.extend_from_slice(&h2[p * l..(p + 1) * l]);
            seg_in.extend_from_slice(&global.values);
            seg_in.push(spacing[p]);
        }
        let seg_logits = self.seg.forward_rows(&seg_in);

        let object_rows: Vec<usize> = match object_mask {
            Some(m) => (0..np).filter(|&p| m[p]).collect(),
            None => (0..np).filter(|&p| seg_logits[2 * p + 1] > seg_logits[2 * p]).collect(),
        };
        if object_rows.is_empty() {
            return Err(Error::SegmentationEmpty);
        }
        let object_points: Vec<Vec3> = object_rows.iter().map(|&p| points[p]).collect();
        let object_mean = centroid(&object_points)?;

        let latent_max = pool_rows(&h2, l, &object_rows, PoolMode::Max)?;
        let mut latent = latent_max.values.clone();
        latent.extend(pool_rows(&h2, l, &object_rows, PoolMode::Mean)?.values);
        let mut rec_in = latent.clone();
        rec_in.extend(onehot(c.n_categories, category));
        let rec_h = relu_vec(self.rec1.forward(&rec_in));
        let rec_out = self.rec2.forward(&rec_h);
        let reconstruction = (0..c.rec_points).map(|i| vec3_at(&rec_out, 3 * i) * OUTPUT_SCALE).collect();

        let mut rot_in = latent.clone();
        rot_in.extend(second_moments(&object_points, object_mean));
        let rot1_h = relu_vec(self.rot1a.forward(&rot_in));
        let v1 = self.rot1b.forward(&rot1_h);
        let rot2_h = relu_vec(self.rot2a.forward(&rot_in));
        let v2 = self.rot2b.forward(&rot2_h);

        let res_in: Vec<f64> = object_points
            .iter()
            .flat_map(|&p| ((p - object_mean) * RES_INPUT_SCALE).to_array())
            .collect();
        let res_h1 = relu_vec(self.res1.forward_rows(&res_in));
        let res_h2 = relu_vec(self.res2.forward_rows(&res_h1));
        let rows: Vec<usize> = (0..object_points.len()).collect();
        let res_pool = pool_rows(&res_h2, c.res_hidden, &rows, PoolMode::Max)?;
        let mut res_in3 = res_pool.values.clone();
        res_in3.extend(onehot(c.n_categories, category));
        let res_h3 = relu_vec(self.res3.forward(&res_in3));
        let res_out = self.res4.forward(&res_h3);

        let out = ForwardOutput {
            seg_logits,
            object_rows,
            object_mean,
            reconstruction,
            v1: vec3_at(&v1, 0),
            v2: vec3_at(&v2, 0),
            t_residual: vec3_at(&res_out, 0) * OUTPUT_SCALE,
            s_residual: vec3_at(&res_out, 3) * OUTPUT_SCALE,
        };
        let cache = ForwardCache {
            graph,
            conv1,
            h1,
            conv2,
            h2,
            global,
            seg_in,
            latent_max,
            rec_in,
            rec_h,
            rot_in,
            rot1_h,
            rot2_h,
            res_in,
            res_h1,
            res_h2,
            res_pool,
            res_in3,
            res_h3,
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients of the loss into `grads`.
    pub fn backward(&self, out: &ForwardOutput, cache: &ForwardCache, g: &OutputGrads, grads: &mut ToyModel) -> Result<()> {
        let c = &self.config;
        let (c1, l) = (c.conv1_channels, c.conv2_channels);
        let np = cache.graph.n_points();
        if g.seg_logits.len() != 2 * np || g.reconstruction.len() != c.rec_points {
            return Err(Error::Shape("output gradients do not match the forward pass".into()));
        }
        let mut gh1 = vec![0.0; np * c1];
        let mut gh2 = vec![0.0; np * l];
        let mut gglobal = vec![0.0; l];

        let gseg_in = self.seg.backward_rows(&cache.seg_in, &g.seg_logits, &mut grads.seg);
        let width = c1 + 2 * l + 1;
        for p in 0..np {
            let row = &gseg_in[p * width..(p + 1) * width];
            add_into(&mut gh1[p * c1..(p + 1) * c1], &row[..c1]);
            add_into(&mut gh2[p * l..(p + 1) * l], &row[c1..c1 + l]);
            add_into(&mut gglobal, &row[c1 + l..c1 + 2 * l]);
        }
        unpool(&cache.global, &gglobal, l, &mut gh2);

        let mut glatent = vec![0.0; 2 * l];
        let grec: Vec<f64> = g
            .reconstruction
            .iter()
            .flat_map(|v| (*v * OUTPUT_SCALE).to_array())
            .collect();
        let mut grec_h = self.rec2.backward(&cache.rec_h, &grec, &mut grads.rec2);
        relu_backward(&cache.rec_h, &mut grec_h);
        let grec_in = self.rec1.backward(&cache.rec_in, &grec_h, &mut grads.rec1);
        add_into(&mut glatent, &grec_in[..2 * l]);

        let mut g1h = self.rot1b.backward(&cache.rot1_h, &g.v1.to_array(), &mut grads.rot1b);
        relu_backward(&cache.rot1_h, &mut g1h);
        add_into(&mut glatent, &self.rot1a.backward(&cache.rot_in, &g1h, &mut grads.rot1a)[..2 * l]);
        let mut g2h = self.rot2b.backward(&cache.rot2_h, &g.v2.to_array(), &mut grads.rot2b);
        relu_backward(&cache.rot2_h, &mut g2h);
        add_into(&mut glatent, &self.rot2a.backward(&cache.rot_in, &g2h, &mut grads.rot2a)[..2 * l]);
        unpool(&cache.latent_max, &glatent[..l], l, &mut gh2);
        let share = 1.0 / out.object_rows.len() as f64;
        for &r in &out.object_rows {
            for (a, b) in gh2[r * l..(r + 1) * l].iter_mut().zip(&glatent[l..]) {
                *a += b * share;
            }
        }

        relu_backward(&cache.h2, &mut gh2);
        let gh1_conv = self.conv2.backward(&cache.graph, &cache.conv2, &gh2, &mut grads.conv2)?;
        add_into(&mut gh1, &gh1_conv);
        relu_backward(&cache.h1, &mut gh1);
        self.conv1.backward(&cache.graph, &cache.conv1, &gh1, &mut grads.conv1)?;

        let mut gres = (g.t_residual * OUTPUT_SCALE).to_array().to_vec();
        gres.extend((g.s_residual * OUTPUT_SCALE).to_array());
        let mut gh3 = self.res4.backward(&cache.res_h3, &gres, &mut grads.res4);
        relu_backward(&cache.res_h3, &mut gh3);
        let gin3 = self.res3.backward(&cache.res_in3, &gh3, &mut grads.res3);
        let n_obj = out.object_rows.len();
        let mut gh2r = vec![0.0; n_obj * c.res_hidden];
        unpool(&cache.res_pool, &gin3[..c.res_hidden], c.res_hidden, &mut gh2r);
        relu_backward(&cache.res_h2, &mut gh2r);
        let mut gh1r = self.res2.backward_rows(&cache.res_h1, &gh2r, &mut grads.res2);
        relu_backward(&cache.res_h1, &mut gh1r);
        self.res1.backward_rows(&cache.res_in, &gh1r, &mut grads.res1);
        Ok(())
    }
}
