//! The three-layer capsule network: convolution, primary capsules, class
//! capsules reached by routing, plus the masked reconstruction decoder.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::loss::{margin_loss_node, reconstruction_loss_node, RECONSTRUCTION_SCALE};
use super::routing::{self, argmax, outcome_for_sample, sample_slice, ClassCapsuleOutput, RoutingNodes, RoutingOutcome};
use super::squash::{norm, squash_node};
use super::ModelError;
use crate::tensor::{Graph, NodeId, ReduceKind, Result, Tensor, TensorError};

pub const CONV1_WEIGHT: &str = "conv1.weight";
pub const CONV1_BIAS: &str = "conv1.bias";
pub const PRIMARY_WEIGHT: &str = "primary.weight";
pub const PRIMARY_BIAS: &str = "primary.bias";
pub const ROUTING_WEIGHT: &str = "routing.weight";

/// Bound of the uniform initialization of the vote transforms.
pub const ROUTING_INIT_BOUND: f64 = 0.1;

/// Maps primary capsule ids to (block, row, col): `id = block·H·W + row·W + col`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapsuleLayout {
    pub blocks: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CapsuleCoords {
    pub block: usize,
    pub row: usize,
    pub col: usize,
}

impl CapsuleLayout {
    pub fn from_config(cfg: &ModelConfig) -> Self {
        let (grid_h, grid_w) = cfg.grid();
        CapsuleLayout { blocks: cfg.primary_blocks, grid_h, grid_w }
    }

    pub fn len(&self) -> usize {
        self.blocks * self.grid_h * self.grid_w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self, id: usize) -> CapsuleCoords {
        let site = self.grid_h * self.grid_w;
        CapsuleCoords { block: id / site, row: (id % site) / self.grid_w, col: id % self.grid_w }
    }

    pub fn id(&self, c: CapsuleCoords) -> usize {
        (c.block * self.grid_h + c.row) * self.grid_w + c.col
    }
}

/// Squashed primary-capsule activity vectors `u: [N1, P1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimaryCapsuleOutput {
    pub u: Tensor,
    pub layout: CapsuleLayout,
}

impl PrimaryCapsuleOutput {
    pub fn vector(&self, id: usize) -> &[f64] {
        let p = self.u.shape()[1];
        &self.u.data()[id * p..(id + 1) * p]
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.u.data().chunks_exact(self.u.shape()[1]).map(norm).collect()
    }
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `[1, H, W]`
    pub image: Tensor,
    /// First convolution after relu, `[C1, H1, W1]`.
    pub conv_features: Tensor,
    /// Primary convolution output before squashing, `[blocks·P1, gh, gw]`.
    pub primary_features: Tensor,
    pub primary: PrimaryCapsuleOutput,
    /// `û: [N1, M, R]`
    pub votes: Tensor,
    pub routing: RoutingOutcome,
    pub predicted: usize,
    /// Flattened `[H·W]` decoder output.
    pub reconstruction: Tensor,
    /// Class whose capsule fed the decoder.
    pub reconstruction_class: usize,
}

impl ForwardTrace {
    pub fn class_output(&self) -> &ClassCapsuleOutput {
        &self.routing.class
    }
}

/// Which class capsule each sample keeps when decoding.
#[derive(Debug, Clone, Copy)]
pub enum DecodeTarget<'a> {
    /// Use the given classes (training uses the true labels).
    Classes(&'a [usize]),
    /// Use each sample's predicted class.
    Predicted,
    /// Skip the decoder.
    Skip,
}

/// Graph nodes of a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardNodes {
    pub conv_features: NodeId,
    pub primary_features: NodeId,
    /// `[B, N1, P1]`
    pub primary: NodeId,
    /// `[B, N1, M, R]`
    pub votes: NodeId,
    pub routing: RoutingNodes,
    /// `[B, M]`
    pub lengths: NodeId,
    pub predicted: Vec<usize>,
    /// `[B, H·W]`, present unless decoding was skipped.
    pub reconstruction: Option<NodeId>,
    pub reconstruction_classes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LossNodes {
    pub margin: NodeId,
    pub reconstruction: NodeId,
    /// `margin + RECONSTRUCTION_SCALE · reconstruction`
    pub total: NodeId,
}

/// Parameter names and shapes, in canonical order.
pub fn parameter_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let k1 = cfg.conv1_kernel;
    let k2 = cfg.primary_kernel;
    let c2 = cfg.primary_channels();
    let mut shapes = vec![
        (CONV1_WEIGHT.to_string(), vec![cfg.conv1_channels, 1, k1, k1]),
        (CONV1_BIAS.to_string(), vec![cfg.conv1_channels]),
        (PRIMARY_WEIGHT.to_string(), vec![c2, cfg.conv1_channels, k2, k2]),
        (PRIMARY_BIAS.to_string(), vec![c2]),
        (ROUTING_WEIGHT.to_string(), vec![cfg.num_primary(), cfg.classes, cfg.class_dim, cfg.primary_dim]),
    ];
    let mut width = cfg.classes * cfg.class_dim;
    for (layer, &out) in cfg.decoder_hidden.iter().chain(std::iter::once(&cfg.pixels())).enumerate() {
        shapes.push((format!("decoder.{layer}.weight"), vec![out, width]));
        shapes.push((format!("decoder.{layer}.bias"), vec![out]));
        width = out;
    }
    shapes
}

/// Gather indices turning `[B, blocks·P1, gh, gw]` features into `[B, N1, P1]` capsules.
fn primary_gather_index(cfg: &ModelConfig, batch: usize) -> Vec<usize> {
    let layout = CapsuleLayout::from_config(cfg);
    let (gh, gw, p) = (layout.grid_h, layout.grid_w, cfg.primary_dim);
    let channels = cfg.primary_channels();
    let n1 = layout.len();
    let mut index = Vec::with_capacity(batch * n1 * p);
    for b in 0..batch {
        for id in 0..n1 {
            let CapsuleCoords { block, row, col } = layout.coords(id);
            for d in 0..p {
                index.push(((b * channels + block * p + d) * gh + row) * gw + col);
            }
        }
    }
    index
}

/// Primary capsules from stride-2 convolution features `[C, gh, gw]`.
pub fn primary_capsules(cfg: &ModelConfig, features: &Tensor) -> Result<PrimaryCapsuleOutput> {
    let (gh, gw) = cfg.grid();
    if features.shape() != [cfg.primary_channels(), gh, gw] {
        return Err(TensorError::Dimension {
            op: "primary_capsules",
            detail: format!("expected [{}, {gh}, {gw}], got {:?}", cfg.primary_channels(), features.shape()),
        });
    }
    let mut g = Graph::new();
    let mut shape = vec![1];
    shape.extend_from_slice(features.shape());
    let f = g.constant(features.clone().reshape(&shape)?);
    let u = primary_nodes(cfg, &mut g, f)?;
    Ok(PrimaryCapsuleOutput { u: sample_slice(g.value(u), 0), layout: CapsuleLayout::from_config(cfg) })
}

fn primary_nodes(cfg: &ModelConfig, g: &mut Graph, features: NodeId) -> Result<NodeId> {
    let batch = g.value(features).shape()[0];
    let index = primary_gather_index(cfg, batch);
    let caps = g.gather(features, index, &[batch, cfg.num_primary(), cfg.primary_dim])?;
    squash_node(g, caps)
}

/// Decoder on `[B, M, R]` class vectors, keeping only `targets[b]` per sample.
pub fn decoder_nodes(cfg: &ModelConfig, g: &mut Graph, params: &[NodeId], v: NodeId, targets: &[usize]) -> Result<NodeId> {
    let (batch, m, r) = match *g.value(v).shape() {
        [b, m, r] => (b, m, r),
        ref s => return Err(TensorError::Dimension { op: "decode", detail: format!("class vectors must be [B,M,R], got {s:?}") }),
    };
    if targets.len() != batch {
        return Err(TensorError::Dimension { op: "decode", detail: format!("{} targets for batch {batch}", targets.len()) });
    }
    let mut mask = vec![0.0; batch * m * r];
    for (b, &t) in targets.iter().enumerate() {
        if t >= m {
            return Err(TensorError::Contract { op: "decode", detail: format!("target {t} outside [0, {m})") });
        }
        mask[(b * m + t) * r..(b * m + t + 1) * r].fill(1.0);
    }
    let mask = g.constant(Tensor::new(vec![batch, m, r], mask)?);
    let masked = g.mul(v, mask)?;
    let mut h = g.reshape(masked, &[batch, m * r])?;
    let layers = cfg.decoder_hidden.len() + 1;
    for layer in 0..layers {
        let (w, b) = (params[5 + 2 * layer], params[6 + 2 * layer]);
        h = g.linear(h, w, b)?;
        h = if layer + 1 < layers { g.relu(h) } else { g.sigmoid(h) };
    }
    Ok(h)
}

/// Records a forward pass on `[B, 1, H, W]` images. `params` are nodes in
/// [`parameter_shapes`] order.
pub fn forward_nodes(
    cfg: &ModelConfig,
    g: &mut Graph,
    params: &[NodeId],
    images: NodeId,
    target: DecodeTarget<'_>,
) -> Result<ForwardNodes> {
    let shape = g.value(images).shape().to_vec();
    if shape.len() != 4 || shape[1] != 1 || shape[2] != cfg.input_height || shape[3] != cfg.input_width {
        return Err(TensorError::Dimension {
            op: "forward",
            detail: format!("expected [B, 1, {}, {}] images, got {shape:?}", cfg.input_height, cfg.input_width),
        });
    }
    let batch = shape[0];
    let conv = g.conv2d(images, params[0], params[1], cfg.conv1_stride)?;
    let conv_features = g.relu(conv);
    let primary_features = g.conv2d(conv_features, params[2], params[3], cfg.primary_stride)?;
    let primary = primary_nodes(cfg, g, primary_features)?;
    let votes = g.batched_matvec(params[4], primary)?;
    let routing = routing::route_nodes(g, votes, cfg.routing_iters, cfg.norm_axis)?;
    let lengths = g.reduce(ReduceKind::Norm2, routing.v, Some(2))?;
    let predicted: Vec<usize> = g.value(lengths).data().chunks_exact(cfg.classes).map(argmax).collect();
    let classes = match target {
        DecodeTarget::Classes(c) => {
            if c.len() != batch {
                return Err(TensorError::Dimension { op: "forward", detail: format!("{} labels for batch {batch}", c.len()) });
            }
            c.to_vec()
        }
        DecodeTarget::Predicted | DecodeTarget::Skip => predicted.clone(),
    };
    let reconstruction = match target {
        DecodeTarget::Skip => None,
        _ => Some(decoder_nodes(cfg, g, params, routing.v, &classes)?),
    };
    Ok(ForwardNodes {
        conv_features,
        primary_features,
        primary,
        votes,
        routing,
        lengths,
        predicted,
        reconstruction,
        reconstruction_classes: classes,
    })
}

/// Training objective on a recorded forward pass that decoded with `labels`.
pub fn loss_nodes(g: &mut Graph, fwd: &ForwardNodes, images: NodeId, labels: &[usize]) -> Result<LossNodes> {
    let recon =
        fwd.reconstruction.ok_or_else(|| TensorError::Contract { op: "loss", detail: "forward pass skipped the decoder".into() })?;
    let margin = margin_loss_node(g, fwd.lengths, labels)?;
    let batch = g.value(images).shape()[0];
    let pixels = g.value(recon).shape()[1];
    let flat = g.reshape(images, &[batch, pixels])?;
    let reconstruction = reconstruction_loss_node(g, flat, recon)?;
    let scaled = g.affine(reconstruction, RECONSTRUCTION_SCALE, 0.0);
    let total = g.add(margin, scaled)?;
    Ok(LossNodes { margin, reconstruction, total })
}

/// A capsule network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CapsNet {
    config: ModelConfig,
    params: Vec<(String, Tensor)>,
}

impl CapsNet {
    /// Seeded initialization: conv and decoder weights uniform in
    /// `±1/sqrt(fan_in)`, vote transforms uniform in `±0.1`, biases zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = parameter_shapes(&config)
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with(".bias") {
                    vec![0.0; n]
                } else {
                    let bound = if name == ROUTING_WEIGHT {
                        ROUTING_INIT_BOUND
                    } else {
                        let fan_in: usize = shape[1..].iter().product();
                        1.0 / (fan_in as f64).sqrt()
                    };
                    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
                };
                (name, Tensor::from_parts(shape, data))
            })
            .collect();
        Ok(CapsNet { config, params })
    }

    /// All parameters zero.
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let params = parameter_shapes(&config)
            .into_iter()
            .map(|(name, shape)| {
                let t = Tensor::zeros(&shape);
                (name, t)
            })
            .collect();
        Ok(CapsNet { config, params })
    }

    /// Validates names, order and shapes against `config`.
    pub fn from_params(config: ModelConfig, params: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = parameter_shapes(&config);
        if params.len() != expected.len() {
            return Err(ModelError::Parameters(format!("expected {} tensors, got {}", expected.len(), params.len())));
        }
        for ((name, tensor), (exp_name, exp_shape)) in params.iter().zip(&expected) {
            if name != exp_name {
                return Err(ModelError::Parameters(format!("expected tensor {exp_name}, found {name}")));
            }
            if tensor.shape() != exp_shape.as_slice() {
                return Err(ModelError::Shape { tensor: name.clone(), expected: exp_shape.clone(), found: tensor.shape().to_vec() });
            }
        }
        Ok(CapsNet { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|(_, t)| t)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn layout(&self) -> CapsuleLayout {
        CapsuleLayout::from_config(&self.config)
    }

    /// Inserts parameters as trainable leaves.
    pub fn param_nodes(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params.iter().map(|(_, t)| g.param(t.clone())).collect()
    }

    /// Inserts parameters as constants (inference).
    pub fn constant_nodes(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params.iter().map(|(_, t)| g.constant(t.clone())).collect()
    }

    fn batch_images(&self, images: &Tensor) -> Result<Tensor> {
        let (h, w) = (self.config.input_height, self.config.input_width);
        match images.shape() {
            [1, hh, ww] if *hh == h && *ww == w => images.clone().reshape(&[1, 1, h, w]),
            [_, 1, hh, ww] if *hh == h && *ww == w => Ok(images.clone()),
            s => Err(TensorError::Dimension { op: "forward", detail: format!("expected [1, {h}, {w}] or [B, 1, {h}, {w}], got {s:?}") }),
        }
    }

    /// Full trace of one `[1, H, W]` image. Decodes with `label` when given,
    /// otherwise with the prediction.
    pub fn forward(&self, image: &Tensor, label: Option<usize>) -> Result<ForwardTrace> {
        if image.rank() != 3 {
            return Err(TensorError::Dimension { op: "forward", detail: format!("expected [1, H, W], got {:?}", image.shape()) });
        }
        let labels = label.map(|l| vec![l]);
        let mut traces = self.forward_traces(image, labels.as_deref())?;
        Ok(traces.pop().expect("one trace per image"))
    }

    /// Traces for a `[B, 1, H, W]` batch.
    pub fn forward_traces(&self, images: &Tensor, labels: Option<&[usize]>) -> Result<Vec<ForwardTrace>> {
        let images = self.batch_images(images)?;
        let mut g = Graph::new();
        let params = self.constant_nodes(&mut g);
        let x = g.constant(images);
        let target = labels.map_or(DecodeTarget::Predicted, DecodeTarget::Classes);
        let fwd = forward_nodes(&self.config, &mut g, &params, x, target)?;
        let recon = fwd.reconstruction.expect("decoder requested");
        let batch = g.value(x).shape()[0];
        let layout = self.layout();
        Ok((0..batch)
            .map(|b| {
                let image = sample_slice(g.value(x), b);
                ForwardTrace {
                    image,
                    conv_features: sample_slice(g.value(fwd.conv_features), b),
                    primary_features: sample_slice(g.value(fwd.primary_features), b),
                    primary: PrimaryCapsuleOutput { u: sample_slice(g.value(fwd.primary), b), layout },
                    votes: sample_slice(g.value(fwd.votes), b),
                    routing: outcome_for_sample(&g, &fwd.routing, b),
                    predicted: fwd.predicted[b],
                    reconstruction: sample_slice(g.value(recon), b),
                    reconstruction_class: fwd.reconstruction_classes[b],
                }
            })
            .collect())
    }

    /// Class capsule outputs of a `[B, 1, H, W]` batch, decoder skipped.
    pub fn classify(&self, images: &Tensor) -> Result<Vec<ClassCapsuleOutput>> {
        let images = self.batch_images(images)?;
        let mut g = Graph::new();
        let params = self.constant_nodes(&mut g);
        let x = g.constant(images);
        let fwd = forward_nodes(&self.config, &mut g, &params, x, DecodeTarget::Skip)?;
        let v = g.value(fwd.routing.v);
        Ok((0..v.shape()[0]).map(|b| ClassCapsuleOutput::from_vectors(sample_slice(v, b))).collect())
    }

    /// Decoder output for `[M, R]` class vectors masked to `target`.
    pub fn decode(&self, v: &Tensor, target: usize) -> Result<Tensor> {
        let mut shape = vec![1];
        shape.extend_from_slice(v.shape());
        let batch = v.clone().reshape(&shape)?;
        let mut out = self.decode_batch(&batch, &[target])?;
        Ok(out.pop().expect("one reconstruction"))
    }

    /// Decoder outputs for `[B, M, R]` class vectors.
    pub fn decode_batch(&self, v: &Tensor, targets: &[usize]) -> Result<Vec<Tensor>> {
        let (m, r) = (self.config.classes, self.config.class_dim);
        if v.rank() != 3 || v.shape()[1] != m || v.shape()[2] != r {
            return Err(TensorError::Dimension { op: "decode", detail: format!("expected [B, {m}, {r}], got {:?}", v.shape()) });
        }
        let mut g = Graph::new();
        let params = self.constant_nodes(&mut g);
        let vn = g.constant(v.clone());
        let recon = decoder_nodes(&self.config, &mut g, &params, vn, targets)?;
        let out = g.value(recon);
        Ok((0..out.shape()[0]).map(|b| sample_slice(out, b)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::kernels;

    fn random_image(cfg: &ModelConfig, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![1, cfg.input_height, cfg.input_width], (0..cfg.pixels()).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn layout_is_a_bijection() {
        let layout = CapsuleLayout::from_config(&ModelConfig::default());
        assert_eq!(layout.len(), 1152);
        let mut seen = vec![false; layout.len()];
        for id in 0..layout.len() {
            let c = layout.coords(id);
            assert!(c.block < 32 && c.row < 6 && c.col < 6);
            assert_eq!(layout.id(c), id);
            assert!(!std::mem::replace(&mut seen[id], true));
        }
    }

    #[test]
    fn primary_capsules_from_features() {
        let cfg = ModelConfig::default();
        let zero = primary_capsules(&cfg, &Tensor::zeros(&[256, 6, 6])).unwrap();
        assert!(zero.u.data().iter().all(|&x| x == 0.0));

        let mut f = Tensor::zeros(&[256, 6, 6]);
        // block 5, site (2, 3), first channel of the block
        let off = f.offset(&[5 * 8, 2, 3]);
        f.data_mut()[off] = 1.0;
        let caps = primary_capsules(&cfg, &f).unwrap();
        let lengths = caps.lengths();
        let id = caps.layout.id(CapsuleCoords { block: 5, row: 2, col: 3 });
        assert!((lengths[id] - 0.5).abs() < 1e-15);
        assert_eq!(lengths.iter().filter(|&&l| l != 0.0).count(), 1);
        assert!(primary_capsules(&cfg, &Tensor::zeros(&[255, 6, 6])).is_err());
    }

    #[test]
    fn zero_model_ties_break_to_class_zero() {
        let cfg = ModelConfig::tiny();
        let model = CapsNet::zeros(cfg.clone()).unwrap();
        let trace = model.forward(&random_image(&cfg, 1), None).unwrap();
        let l = &trace.class_output().lengths;
        assert!(l.iter().all(|&x| x == l[0]));
        assert_eq!(trace.predicted, 0);
        assert_eq!(trace.routing.history.len(), cfg.routing_iters);
    }

    #[test]
    fn trace_is_consistent() {
        let cfg = ModelConfig::tiny();
        let model = CapsNet::new(cfg.clone(), 3).unwrap();
        let trace = model.forward(&random_image(&cfg, 2), None).unwrap();
        assert_eq!(trace.predicted, argmax(&trace.class_output().lengths));
        assert_eq!(trace.reconstruction_class, trace.predicted);
        assert!(trace.class_output().lengths.iter().all(|&l| l < 1.0));
        assert!(trace.primary.lengths().iter().all(|&l| l < 1.0));
        assert!(trace.reconstruction.data().iter().all(|&p| p > 0.0 && p < 1.0));
        // votes are W·u exactly
        let w = model.param(ROUTING_WEIGHT).unwrap();
        assert_eq!(trace.votes, kernels::batched_matvec(w, &trace.primary.u).unwrap());
        let labelled = model.forward(&trace.image, Some(2)).unwrap();
        assert_eq!(labelled.reconstruction_class, 2);
        assert!(model.forward(&Tensor::zeros(&[1, 7, 8]), None).is_err());
    }

    #[test]
    fn decoder_only_sees_target_capsule() {
        let cfg = ModelConfig::tiny();
        let model = CapsNet::new(cfg.clone(), 4).unwrap();
        let v = Tensor::new(vec![3, 2], vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap();
        let base = model.decode(&v, 1).unwrap();
        let mut other = v.clone();
        other.data_mut()[0] = 0.9;
        other.data_mut()[5] = -0.7;
        assert_eq!(model.decode(&other, 1).unwrap(), base);
        let zero = Tensor::zeros(&[3, 2]);
        assert_eq!(model.decode(&zero, 0).unwrap(), model.decode(&zero, 0).unwrap());
        assert!(matches!(model.decode(&v, 3), Err(TensorError::Contract { .. })));
    }

    #[test]
    fn batch_and_single_forward_agree() {
        let cfg = ModelConfig::tiny();
        let model = CapsNet::new(cfg.clone(), 5).unwrap();
        let a = random_image(&cfg, 10);
        let b = random_image(&cfg, 11);
        let mut data = a.data().to_vec();
        data.extend_from_slice(b.data());
        let batch = Tensor::new(vec![2, 1, 8, 8], data).unwrap();
        let traces = model.forward_traces(&batch, None).unwrap();
        let single = model.forward(&b, None).unwrap();
        assert_eq!(traces[1].routing, single.routing);
        assert_eq!(traces[1].reconstruction, single.reconstruction);
    }

    #[test]
    fn parameter_shapes_default() {
        let shapes = parameter_shapes(&ModelConfig::default());
        let find = |n: &str| shapes.iter().find(|(m, _)| m == n).unwrap().1.clone();
        assert_eq!(find(ROUTING_WEIGHT), vec![1152, 10, 2, 8]);
        assert_eq!(find("decoder.0.weight"), vec![512, 20]);
        assert_eq!(find("decoder.2.weight"), vec![784, 1024]);
    }
}
