use std::cmp::Ordering;

use super::config::{BottleneckKind, EncoderKind, HeadKind, ModelConfig};
use super::params::{LayerNorm, Linear, ParamBuilder, ParamStore};
use super::{CorrespondenceMap, Prediction};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::rng;
use crate::tensor::{Graph, Mat, Var};

const LEAKY_SLOPE: f64 = 0.2;
const EDGE_LAYERS: usize = 3;

struct EdgeConv {
    center: Linear,
    edge: Linear,
    bias: usize,
}

enum Encoder {
    Dgcnn {
        layers: Vec<EdgeConv>,
        proj: Linear,
    },
    PointNet {
        local: [Linear; 2],
        global: Linear,
        proj: Linear,
    },
}

struct SfaBlock {
    norm_attn: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm_ff: LayerNorm,
    ff_in: Linear,
    ff_out: Linear,
}

enum Head {
    Attention { blocks: Vec<SfaBlock>, logits: Linear },
    Mlp { blocks: [Linear; 3], logits: Linear },
    Decoder { layers: [Linear; 3] },
}

/// A network with its parameters.
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    encoder: Encoder,
    head: Head,
}

/// Tape of one forward pass, kept for the backward pass.
pub struct ForwardPass {
    pub graph: Graph,
    pub input: Var,
    pub features: Var,
    /// `M × 3` correspondence points.
    pub output: Var,
    /// `M × N` correspondence map (absent for the autoencoder).
    pub map: Option<Var>,
}

impl ForwardPass {
    pub fn output_points(&self) -> Vec<Point3> {
        self.graph.value(self.output).to_points()
    }
}

impl Model {
    /// Builds the layout and draws initial parameters from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::seeded(config.seed);
        let mut b = ParamBuilder::new(
            &mut r,
            format!("uniform(+-1/sqrt(fan_in)), zero bias, seed {}", config.seed),
        );
        let (h, l) = (config.hidden_dim, config.feature_dim);

        let encoder = match config.encoder {
            EncoderKind::Dgcnn => {
                let mut layers = Vec::with_capacity(EDGE_LAYERS);
                let mut width = 3;
                for i in 0..EDGE_LAYERS {
                    // W·[x_i, x_j − x_i] split into its center and edge halves
                    let fan_in = 2 * width;
                    let center = b.linear_with_fan_in(&format!("encoder.edge{i}.center"), width, h, fan_in, false);
                    let edge = b.linear_with_fan_in(&format!("encoder.edge{i}.edge"), width, h, fan_in, false);
                    let bias = b.bias(&format!("encoder.edge{i}"), h);
                    layers.push(EdgeConv { center, edge, bias });
                    width = h;
                }
                let proj = b.linear("encoder.proj", EDGE_LAYERS * h, l, true);
                Encoder::Dgcnn { layers, proj }
            }
            EncoderKind::Pointnet => Encoder::PointNet {
                local: [
                    b.linear("encoder.mlp0", 3, h, true),
                    b.linear("encoder.mlp1", h, h, true),
                ],
                global: b.linear("encoder.mlp2", h, 2 * h, true),
                proj: b.linear("encoder.proj", 3 * h, l, true),
            },
        };

        let m = config.m_output;
        let head = match (config.bottleneck, config.head) {
            (BottleneckKind::PerPoint, HeadKind::Attn) => {
                let blocks = (0..config.sfa_blocks)
                    .map(|i| {
                        let p = format!("head.sfa{i}");
                        SfaBlock {
                            norm_attn: b.layer_norm(&format!("{p}.norm_attn"), l),
                            query: b.linear(&format!("{p}.query"), l, l, true),
                            key: b.linear(&format!("{p}.key"), l, l, true),
                            value: b.linear(&format!("{p}.value"), l, l, true),
                            out: b.linear(&format!("{p}.out"), l, l, true),
                            norm_ff: b.layer_norm(&format!("{p}.norm_ff"), l),
                            ff_in: b.linear(&format!("{p}.ff_in"), l, 2 * l, true),
                            ff_out: b.linear(&format!("{p}.ff_out"), 2 * l, l, true),
                        }
                    })
                    .collect();
                Head::Attention {
                    blocks,
                    logits: b.linear("head.logits", l, m, true),
                }
            }
            (BottleneckKind::PerPoint, HeadKind::Mlp) => Head::Mlp {
                blocks: [
                    b.linear("head.mlp0", l, l, true),
                    b.linear("head.mlp1", l, l, true),
                    b.linear("head.mlp2", l, l, true),
                ],
                logits: b.linear("head.logits", l, m, true),
            },
            (BottleneckKind::Global, _) => Head::Decoder {
                layers: [
                    b.linear("decoder.fc0", l, 4 * l, true),
                    b.linear("decoder.fc1", 4 * l, 8 * l, true),
                    b.linear("decoder.fc2", 8 * l, 3 * m, true),
                ],
            },
        };

        let params = b.finish();
        Ok(Self {
            config,
            params,
            encoder,
            head,
        })
    }

    /// Rebuilds a model from stored tensors.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Mat)>) -> Result<Self> {
        let mut model = Self::new(config)?;
        model.params.load(tensors)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_input(&self, n: usize) -> Result<()> {
        if n < self.config.min_points() {
            return Err(Error::invalid(format!(
                "{} input points; the {:?} encoder needs at least {}",
                n,
                self.config.encoder,
                self.config.min_points()
            )));
        }
        Ok(())
    }

    /// Records a full forward pass on a fresh tape.
    pub fn forward_graph(&self, points: &[Point3]) -> Result<ForwardPass> {
        self.check_input(points.len())?;
        let mut g = Graph::new();
        let input = g.input(Mat::from_points(points));
        let features = self.encode_on(&mut g, input);
        let (output, map) = match &self.head {
            Head::Attention { blocks, logits } => {
                let mut h = features;
                for block in blocks {
                    h = self.sfa_block(&mut g, block, h);
                }
                let (out, map) = self.correspondence(&mut g, logits, h, input)?;
                (out, Some(map))
            }
            Head::Mlp { blocks, logits } => {
                let mut h = features;
                for layer in blocks {
                    let z = layer.forward(&mut g, &self.params, h);
                    h = g.leaky_relu(z, LEAKY_SLOPE);
                }
                let (out, map) = self.correspondence(&mut g, logits, h, input)?;
                (out, Some(map))
            }
            Head::Decoder { layers } => {
                let mut h = g.col_max(features);
                for (i, layer) in layers.iter().enumerate() {
                    h = layer.forward(&mut g, &self.params, h);
                    if i + 1 < layers.len() {
                        h = g.relu(h);
                    }
                }
                if !g.value(h).is_finite() {
                    return Err(Error::NonFinite("decoder output".into()));
                }
                (g.reshape(h, self.config.m_output, 3), None)
            }
        };
        Ok(ForwardPass {
            graph: g,
            input,
            features,
            output,
            map,
        })
    }

    /// Per-point `N × L` encoder features.
    pub fn encode(&self, points: &[Point3]) -> Result<Mat> {
        self.check_input(points.len())?;
        let mut g = Graph::new();
        let input = g.input(Mat::from_points(points));
        let f = self.encode_on(&mut g, input);
        Ok(g.value(f).clone())
    }

    /// Inference: correspondence points (and map, for per-point heads).
    pub fn forward(&self, points: &[Point3]) -> Result<Prediction> {
        let pass = self.forward_graph(points)?;
        Ok(Prediction {
            points: pass.output_points(),
            map: pass
                .map
                .map(|m| CorrespondenceMap::from_mat(pass.graph.value(m).clone())),
        })
    }

    /// Encoder followed by the correspondence-map head.
    pub fn correspondence_forward(&self, points: &[Point3]) -> Result<(Vec<Point3>, CorrespondenceMap)> {
        if self.config.bottleneck != BottleneckKind::PerPoint {
            return Err(Error::invalid("correspondence forward needs a per-point bottleneck"));
        }
        let p = self.forward(points)?;
        Ok((p.points, p.map.expect("per-point heads emit a map")))
    }

    /// Encoder, global max-pool and fully connected decoder.
    pub fn autoencoder_forward(&self, points: &[Point3]) -> Result<Vec<Point3>> {
        if self.config.bottleneck != BottleneckKind::Global {
            return Err(Error::invalid("autoencoder forward needs a global bottleneck"));
        }
        Ok(self.forward(points)?.points)
    }

    fn encode_on(&self, g: &mut Graph, input: Var) -> Var {
        let p = &self.params;
        match &self.encoder {
            Encoder::Dgcnn { layers, proj } => {
                let k = self.config.graph_k;
                let mut h = input;
                let mut outs = Vec::with_capacity(layers.len());
                for layer in layers {
                    let nbrs = feature_knn(g.value(h), k);
                    let xc = layer.center.forward(g, p, h);
                    let xe = layer.edge.forward(g, p, h);
                    let center = g.sub(xc, xe);
                    let bias = g.param(layer.bias, p.get(layer.bias));
                    h = g.edge_max(center, xe, bias, &nbrs, k, LEAKY_SLOPE);
                    outs.push(h);
                }
                let cat = g.concat_cols(&outs);
                let z = proj.forward(g, p, cat);
                g.leaky_relu(z, LEAKY_SLOPE)
            }
            Encoder::PointNet {
                local,
                global,
                proj,
            } => {
                let n = g.value(input).rows();
                let mut h = input;
                for layer in local {
                    let z = layer.forward(g, p, h);
                    h = g.leaky_relu(z, LEAKY_SLOPE);
                }
                let z = global.forward(g, p, h);
                let z = g.leaky_relu(z, LEAKY_SLOPE);
                let pooled = g.col_max(z);
                let pooled = g.broadcast_rows(pooled, n);
                let cat = g.concat_cols(&[h, pooled]);
                let z = proj.forward(g, p, cat);
                g.leaky_relu(z, LEAKY_SLOPE)
            }
        }
    }

    fn sfa_block(&self, g: &mut Graph, block: &SfaBlock, h: Var) -> Var {
        let p = &self.params;
        let heads = self.config.attention_heads;
        let width = self.config.feature_dim / heads;
        let a = block.norm_attn.forward(g, p, h);
        let q = block.query.forward(g, p, a);
        let k = block.key.forward(g, p, a);
        let v = block.value.forward(g, p, a);
        let mut per_head = Vec::with_capacity(heads);
        for i in 0..heads {
            let (qh, kh, vh) = (
                g.slice_cols(q, i * width, width),
                g.slice_cols(k, i * width, width),
                g.slice_cols(v, i * width, width),
            );
            let scores = g.matmul_t(qh, false, kh, true);
            let scores = g.scale(scores, 1.0 / (width as f64).sqrt());
            let attn = g.softmax_rows(scores);
            per_head.push(g.matmul(attn, vh));
        }
        let cat = if heads == 1 {
            per_head[0]
        } else {
            g.concat_cols(&per_head)
        };
        let o = block.out.forward(g, p, cat);
        let h = g.add(h, o);
        let a = block.norm_ff.forward(g, p, h);
        let f = block.ff_in.forward(g, p, a);
        let f = g.relu(f);
        let f = block.ff_out.forward(g, p, f);
        g.add(h, f)
    }

    /// Projects per-point features to `M` logits, normalizes over inputs and
    /// takes the weighted combination of input points.
    fn correspondence(
        &self,
        g: &mut Graph,
        logits: &Linear,
        h: Var,
        input: Var,
    ) -> Result<(Var, Var)> {
        let z = logits.forward(g, &self.params, h);
        if !g.value(z).is_finite() {
            return Err(Error::NonFinite("correspondence logits".into()));
        }
        let zt = g.transpose(z);
        let map = g.softmax_rows(zt);
        let out = g.matmul(map, input);
        Ok((out, map))
    }
}

/// `k` nearest rows of `x` to each row (itself included), by squared
/// Euclidean distance with ties to the lowest index. Row-major `n × k`.
pub(crate) fn feature_knn(x: &Mat, k: usize) -> Vec<usize> {
    let n = x.rows();
    let norms: Vec<f64> = (0..n).map(|i| x.row(i).iter().map(|v| v * v).sum()).collect();
    let mut gram = Mat::zeros(n, n);
    crate::tensor::gemm(1.0, x, false, x, true, 0.0, &mut gram);
    let mut out = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
    };
    for i in 0..n {
        cand.clear();
        let row = gram.row(i);
        cand.extend((0..n).map(|j| ((norms[i] + norms[j] - 2.0 * row[j]).max(0.0), j)));
        if k < n {
            cand.select_nth_unstable_by(k - 1, cmp);
        }
        let top = &mut cand[..k];
        top.sort_unstable_by(cmp);
        out.extend(top.iter().map(|&(_, j)| j));
    }
    out
}
