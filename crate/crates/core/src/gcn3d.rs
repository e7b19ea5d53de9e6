//! 3D graph convolution (3DGC).
//!
//! A kernel is a set of `m` weighted unit direction vectors. At every point the
//! kernel is matched against the unit vectors pointing from the point to its `n`
//! nearest neighbours: each kernel direction picks the neighbour whose
//! `cos(kernel, direction) · feature` is largest, and the weighted sum of these
//! matches plus a weighted centre term is the response. Only normalized
//! neighbour directions enter, so responses are unchanged by translating or
//! uniformly scaling the cloud.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::geom::{k_nearest_neighbors, Vec3};
use crate::tensor::Tensor;

/// Weighted unit kernel vectors of one (output, input) channel pair.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    directions: Vec<Vec3>,
    pub weights: Vec<f64>,
    pub center_weight: f64,
}

impl KernelSet {
    /// Directions are normalized; zero directions are rejected.
    pub fn new(directions: Vec<Vec3>, weights: Vec<f64>, center_weight: f64) -> Result<Self> {
        if directions.is_empty() || directions.len() != weights.len() {
            return Err(Error::Shape(format!(
                "kernel needs m >= 1 directions with one weight each, got {} and {}",
                directions.len(),
                weights.len()
            )));
        }
        let directions = directions
            .into_iter()
            .map(|d| {
                d.normalized()
                    .ok_or_else(|| Error::InvalidParameter("zero kernel direction".into()))
            })
            .collect::<Result<_>>()?;
        Ok(KernelSet {
            directions,
            weights,
            center_weight,
        })
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.directions
    }

    pub fn m(&self) -> usize {
        self.directions.len()
    }
}

/// How the matches of one kernel direction against the neighbours are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Best-matching neighbour per kernel direction.
    #[default]
    Max,
    /// Sum over all (kernel direction, neighbour) pairs.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GcnLayerConfig {
    pub n_neighbors: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Kernel vectors per (output, input) channel pair.
    pub kernel_size: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl GcnLayerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_neighbors == 0
            || self.in_channels == 0
            || self.out_channels == 0
            || self.kernel_size == 0
        {
            return Err(Error::InvalidParameter(format!("invalid 3DGC layer config {self:?}")));
        }
        if self.n_neighbors >= u16::MAX as usize {
            return Err(Error::InvalidParameter("too many neighbours".into()));
        }
        Ok(())
    }
}

/// Unit vectors from `points[index]` to its `n` nearest neighbours.
///
/// A neighbour coinciding with the centre yields the zero vector.
pub fn neighbor_directions(points: &[Vec3], index: usize, n: usize) -> Result<Vec<Vec3>> {
    let nbrs = k_nearest_neighbors(points, index, n)?;
    let c = points[index];
    Ok(nbrs
        .into_iter()
        .map(|j| (points[j] - c).normalized().unwrap_or(Vec3::ZERO))
        .collect())
}

/// k-NN graph of one cloud with the normalized edge directions.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    n: usize,
    indices: Vec<usize>,
    directions: Vec<Vec3>,
}

impl NeighborGraph {
    pub fn build(points: &[Vec3], n: usize) -> Result<Self> {
        if points.len() < n + 1 {
            return Err(Error::InvalidParameter(format!(
                "{} points is too few for {n} neighbours",
                points.len()
            )));
        }
        let mut indices = Vec::with_capacity(points.len() * n);
        let mut directions = Vec::with_capacity(points.len() * n);
        for (p, &c) in points.iter().enumerate() {
            for j in k_nearest_neighbors(points, p, n)? {
                indices.push(j);
                directions.push((points[j] - c).normalized().unwrap_or(Vec3::ZERO));
            }
        }
        Ok(NeighborGraph {
            n,
            indices,
            directions,
        })
    }

    pub fn n_points(&self) -> usize {
        self.indices.len() / self.n
    }

    pub fn n_neighbors(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, p: usize) -> &[usize] {
        &self.indices[p * self.n..(p + 1) * self.n]
    }

    pub fn directions(&self, p: usize) -> &[Vec3] {
        &self.directions[p * self.n..(p + 1) * self.n]
    }
}

fn is_zero(v: Vec3) -> bool {
    v.x == 0.0 && v.y == 0.0 && v.z == 0.0
}

/// Response of one kernel at one point (max aggregation).
///
/// Zero entries of `dirs` are excluded from the matching.
pub fn gconv_response(
    kernel: &KernelSet,
    dirs: &[Vec3],
    center_feature: f64,
    neighbor_features: &[f64],
) -> Result<f64> {
    if dirs.len() != neighbor_features.len() {
        return Err(Error::Shape(format!(
            "{} directions but {} neighbour features",
            dirs.len(),
            neighbor_features.len()
        )));
    }
    let mut out = kernel.center_weight * center_feature;
    for (k, w) in kernel.directions.iter().zip(&kernel.weights) {
        let best = dirs
            .iter()
            .zip(neighbor_features)
            .filter(|(d, _)| !is_zero(**d))
            .map(|(d, f)| k.dot(*d) * f)
            .fold(f64::NEG_INFINITY, f64::max);
        if best.is_finite() {
            out += w * best;
        }
    }
    Ok(out)
}

const NO_MATCH: u16 = u16::MAX;

/// Values kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone, Default)]
pub struct GconvCache {
    input: Vec<f64>,
    /// Selected neighbour slot per (point, out, in, kernel vector); max aggregation only.
    argmax: Vec<u16>,
    n_points: usize,
}

impl GconvCache {
    pub fn is_empty(&self) -> bool {
        self.n_points == 0
    }
}

/// One 3DGC layer: a [`KernelSet`] for every (output, input) channel pair.
///
/// Parameters are stored flat: `directions` is `[out, in, m, 3]`, `weights`
/// is `[out, in, m]` and `center` is `[out, in]`. The same struct doubles as
/// the gradient accumulator of a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    pub config: GcnLayerConfig,
    pub directions: Tensor,
    pub weights: Tensor,
    pub center: Tensor,
}

impl GcnLayer {
    pub fn zeros(config: GcnLayerConfig) -> Result<Self> {
        config.validate()?;
        let (o, i, m) = (config.out_channels, config.in_channels, config.kernel_size);
        Ok(GcnLayer {
            config,
            directions: Tensor::zeros(&[o, i, m, 3]),
            weights: Tensor::zeros(&[o, i, m]),
            center: Tensor::zeros(&[o, i]),
        })
    }

    /// Random unit directions, weights uniform in `±1/sqrt(in·(m+1))`.
    pub fn random<R: Rng + ?Sized>(config: GcnLayerConfig, rng: &mut R) -> Result<Self> {
        let mut layer = Self::zeros(config)?;
        for d in layer.directions.data.iter_mut() {
            *d = StandardNormal.sample(rng);
        }
        layer.renormalize();
        let bound = 1.0 / ((config.in_channels * (config.kernel_size + 1)) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        for w in layer.weights.data.iter_mut().chain(layer.center.data.iter_mut()) {
            *w = dist.sample(rng);
        }
        Ok(layer)
    }

    fn pair(&self, co: usize, ci: usize) -> usize {
        co * self.config.in_channels + ci
    }

    pub fn kernel(&self, co: usize, ci: usize) -> KernelSet {
        let m = self.config.kernel_size;
        let base = self.pair(co, ci) * m;
        let d = &self.directions.data;
        KernelSet {
            directions: (base..base + m)
                .map(|k| Vec3::new(d[3 * k], d[3 * k + 1], d[3 * k + 2]))
                .collect(),
            weights: self.weights.data[base..base + m].to_vec(),
            center_weight: self.center.data[self.pair(co, ci)],
        }
    }

    pub fn set_kernel(&mut self, co: usize, ci: usize, kernel: &KernelSet) -> Result<()> {
        let m = self.config.kernel_size;
        if kernel.m() != m {
            return Err(Error::Shape(format!("kernel has {} vectors, layer expects {m}", kernel.m())));
        }
        let base = self.pair(co, ci) * m;
        for (k, d) in kernel.directions.iter().enumerate() {
            self.directions.data[3 * (base + k)..3 * (base + k) + 3].copy_from_slice(&d.to_array());
        }
        self.weights.data[base..base + m].copy_from_slice(&kernel.weights);
        let p = self.pair(co, ci);
        self.center.data[p] = kernel.center_weight;
        Ok(())
    }

    /// Projects every kernel direction back onto the unit sphere.
    pub fn renormalize(&mut self) {
        for d in self.directions.data.chunks_exact_mut(3) {
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if n > 0.0 {
                d.iter_mut().for_each(|x| *x /= n);
            } else {
                d.copy_from_slice(&[1.0, 0.0, 0.0]);
            }
        }
    }

    /// Unit kernel vectors and the norms of the stored (raw) vectors.
    fn unit_directions(&self) -> (Vec<Vec3>, Vec<f64>) {
        self.directions
            .data
            .chunks_exact(3)
            .map(|d| {
                let v = Vec3::new(d[0], d[1], d[2]);
                let n = v.norm();
                (v / n, n)
            })
            .unzip()
    }

    fn check_input(&self, graph: &NeighborGraph, features: &[f64]) -> Result<()> {
        let cin = self.config.in_channels;
        if features.len() != graph.n_points() * cin {
            return Err(Error::Shape(format!(
                "expected {} points × {cin} channels, got {} values",
                graph.n_points(),
                features.len()
            )));
        }
        if graph.n_neighbors() != self.config.n_neighbors {
            return Err(Error::Shape(format!(
                "graph has {} neighbours, layer expects {}",
                graph.n_neighbors(),
                self.config.n_neighbors
            )));
        }
        Ok(())
    }

    /// Output features `[n_points, out_channels]` for row-major input `[n_points, in_channels]`.
    pub fn forward(&self, graph: &NeighborGraph, features: &[f64]) -> Result<(Vec<f64>, GconvCache)> {
        self.check_input(graph, features)?;
        let GcnLayerConfig {
            in_channels: cin,
            out_channels: cout,
            kernel_size: m,
            n_neighbors: n,
            aggregation,
        } = self.config;
        let np = graph.n_points();
        let (units, _) = self.unit_directions();
        let w = &self.weights.data;
        let cw = &self.center.data;
        let mut out = vec![0.0; np * cout];
        let max_mode = aggregation == Aggregation::Max;
        let mut argmax = if max_mode {
            vec![NO_MATCH; np * cout * cin * m]
        } else {
            Vec::new()
        };
        let mut nf = vec![0.0; cin * n];
        let mut valid = Vec::with_capacity(n);
        for p in 0..np {
            let nbrs = graph.neighbors(p);
            let dirs = graph.directions(p);
            valid.clear();
            valid.extend((0..n).filter(|&j| !is_zero(dirs[j])));
            for ci in 0..cin {
                for (j, &q) in nbrs.iter().enumerate() {
                    nf[ci * n + j] = features[q * cin + ci];
                }
            }
            let fp = &features[p * cin..(p + 1) * cin];
            for co in 0..cout {
                let mut acc = 0.0;
                for ci in 0..cin {
                    let pair = co * cin + ci;
                    acc += cw[pair] * fp[ci];
                    let nfc = &nf[ci * n..(ci + 1) * n];
                    for i in 0..m {
                        let kidx = pair * m + i;
                        let k = units[kidx];
                        if max_mode {
                            let mut best = f64::NEG_INFINITY;
                            let mut arg = NO_MATCH;
                            for &j in &valid {
                                let v = k.dot(dirs[j]) * nfc[j];
                                if v > best {
                                    best = v;
                                    arg = j as u16;
                                }
                            }
                            if arg != NO_MATCH {
                                acc += w[kidx] * best;
                                argmax[((p * cout + co) * cin + ci) * m + i] = arg;
                            }
                        } else {
                            let s: f64 = valid.iter().map(|&j| k.dot(dirs[j]) * nfc[j]).sum();
                            acc += w[kidx] * s;
                        }
                    }
                }
                out[p * cout + co] = acc;
            }
        }
        Ok((
            out,
            GconvCache {
                input: features.to_vec(),
                argmax,
                n_points: np,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` and returns d loss / d input features.
    ///
    /// The neighbour chosen by each max is held fixed at its forward-time value.
    /// Direction gradients are taken with respect to the stored vectors through their
    /// normalization, which at unit length is the projection onto the sphere's tangent plane.
    pub fn backward(
        &self,
        graph: &NeighborGraph,
        cache: &GconvCache,
        upstream: &[f64],
        grads: &mut GcnLayer,
    ) -> Result<Vec<f64>> {
        if cache.is_empty() {
            return Err(Error::State("3DGC backward called without a forward cache"));
        }
        let GcnLayerConfig {
            in_channels: cin,
            out_channels: cout,
            kernel_size: m,
            n_neighbors: n,
            aggregation,
        } = self.config;
        let np = cache.n_points;
        if graph.n_points() != np || upstream.len() != np * cout {
            return Err(Error::Shape("backward inputs do not match the forward pass".into()));
        }
        if grads.config.in_channels != cin
            || grads.config.out_channels != cout
            || grads.config.kernel_size != m
        {
            return Err(Error::Shape("gradient accumulator has a different layout".into()));
        }
        let features = &cache.input;
        let (units, norms) = self.unit_directions();
        let w = &self.weights.data;
        let cw = &self.center.data;
        let mut gx = vec![0.0; np * cin];
        for p in 0..np {
            let nbrs = graph.neighbors(p);
            let dirs = graph.directions(p);
            for co in 0..cout {
                let g = upstream[p * cout + co];
                if g == 0.0 {
                    continue;
                }
                for ci in 0..cin {
                    let pair = co * cin + ci;
                    grads.center.data[pair] += g * features[p * cin + ci];
                    gx[p * cin + ci] += g * cw[pair];
                    for i in 0..m {
                        let kidx = pair * m + i;
                        let k = units[kidx];
                        let mut visit = |j: usize, gx: &mut [f64]| {
                            let d = dirs[j];
                            let q = nbrs[j];
                            let c = k.dot(d);
                            let fq = features[q * cin + ci];
                            grads.weights.data[kidx] += g * c * fq;
                            gx[q * cin + ci] += g * w[kidx] * c;
                            let gd = (d - k * c) * (g * w[kidx] * fq / norms[kidx]);
                            let gdir = &mut grads.directions.data[3 * kidx..3 * kidx + 3];
                            gdir[0] += gd.x;
                            gdir[1] += gd.y;
                            gdir[2] += gd.z;
                        };
                        match aggregation {
                            Aggregation::Max => {
                                let arg = cache.argmax[((p * cout + co) * cin + ci) * m + i];
                                if arg != NO_MATCH {
                                    visit(arg as usize, &mut gx);
                                }
                            }
                            Aggregation::Sum => {
                                for j in 0..n {
                                    if !is_zero(dirs[j]) {
                                        visit(j, &mut gx);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Max,
    Mean,
}

/// Channelwise pooled vector and, for max pooling, the winning row per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub values: Vec<f64>,
    pub argmax: Option<Vec<usize>>,
}

/// Pools the given `rows` of a row-major `[_, channels]` matrix.
pub fn pool_rows(features: &[f64], channels: usize, rows: &[usize], mode: PoolMode) -> Result<Pooled> {
    if rows.is_empty() || channels == 0 {
        return Err(Error::EmptyInput("pooling over no points"));
    }
    match mode {
        PoolMode::Max => {
            let mut values = vec![f64::NEG_INFINITY; channels];
            let mut argmax = vec![rows[0]; channels];
            for &r in rows {
                let row = &features[r * channels..(r + 1) * channels];
                for c in 0..channels {
                    if row[c] > values[c] {
                        values[c] = row[c];
                        argmax[c] = r;
                    }
                }
            }
            Ok(Pooled {
                values,
                argmax: Some(argmax),
            })
        }
        PoolMode::Mean => {
            let mut values = vec![0.0; channels];
            for &r in rows {
                for (v, x) in values.iter_mut().zip(&features[r * channels..(r + 1) * channels]) {
                    *v += x;
                }
            }
            let inv = 1.0 / rows.len() as f64;
            values.iter_mut().for_each(|v| *v *= inv);
            Ok(Pooled { values, argmax: None })
        }
    }
}

/// Pools all rows of a row-major `[_, channels]` feature matrix.
pub fn pool_features(features: &[f64], channels: usize, mode: PoolMode) -> Result<Vec<f64>> {
    if channels == 0 || !features.len().is_multiple_of(channels) {
        return Err(Error::Shape(format!(
            "{} values do not form rows of {channels} channels",
            features.len()
        )));
    }
    let rows: Vec<usize> = (0..features.len() / channels).collect();
    Ok(pool_rows(features, channels, &rows, mode)?.values)
}
