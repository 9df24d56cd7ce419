//! Two-branch manipulation detector.
//!
//! An edge-supervised branch (RGB backbone whose per-stage features are
//! Sobel-filtered, refined by edge residual blocks and accumulated at
//! stride 4) and a noise-sensitive branch (constrained 5×5 convolution
//! followed by a second backbone) are fused by dual attention at stride 16.
//! The fused logit map is upsampled and squashed into the segmentation map;
//! its global maximum is the image-level score.

pub mod attention;
pub mod bayar;
pub mod input;
pub mod layers;
pub mod params;
pub mod sobel;

use mvss_tensor::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use attention::{DualAttention, DualAttentionOutput};
use bayar::ProjectionWarning;
pub use input::{ImageTensor, FUSION_STRIDE};
use layers::{Backbone, Conv, EdgeResidualBlock};
use params::{Bound, ParamId, ParamStore};

/// Output stride of the edge map.
pub const EDGE_STRIDE: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone_stage_channels: [usize; 4],
    pub erb_channels: usize,
    pub da_reduced_channels: usize,
    pub input_size: usize,
    pub norm_groups: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone_stage_channels: [16, 32, 64, 64],
            erb_channels: 16,
            da_reduced_channels: 8,
            input_size: 128,
            norm_groups: 4,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let g = self.norm_groups;
        if g == 0 {
            return Err(Error::Config("norm_groups must be positive".into()));
        }
        for (i, &c) in self.backbone_stage_channels.iter().enumerate() {
            if c == 0 || c % g != 0 {
                return Err(Error::Config(format!(
                    "stage {} width {c} must be a positive multiple of norm_groups {g}",
                    i + 1
                )));
            }
        }
        if self.erb_channels == 0 || self.erb_channels % g != 0 {
            return Err(Error::Config(format!(
                "erb_channels {} must be a positive multiple of norm_groups {g}",
                self.erb_channels
            )));
        }
        if self.da_reduced_channels == 0 {
            return Err(Error::Config("da_reduced_channels must be positive".into()));
        }
        if self.input_size == 0 || self.input_size % FUSION_STRIDE != 0 {
            return Err(Error::Config(format!(
                "input_size {} must be a positive multiple of {FUSION_STRIDE}",
                self.input_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    esb_backbone: Backbone,
    stage_erbs: Vec<EdgeResidualBlock>,
    combine_erbs: Vec<EdgeResidualBlock>,
    edge_head: Conv,
    bayar: ParamId,
    nsb_backbone: Backbone,
    fusion: DualAttention,
}

/// Outputs of the edge-supervised branch.
pub struct EsbOutput<'t> {
    pub stage_features: Vec<Var<'t>>,
    /// Last-stage backbone features, stride 16.
    pub deep: Var<'t>,
    /// Single-channel logits at stride 4.
    pub edge_logits: Var<'t>,
}

/// Every head of a differentiable forward pass.
pub struct ForwardOutput<'t> {
    /// Fused logit map at stride 16.
    pub fused_logits: Var<'t>,
    /// `[batch, 1, H, W]` probabilities.
    pub seg_map: Var<'t>,
    pub edge_logits: Var<'t>,
    /// `[batch, 1, H/4, W/4]` probabilities.
    pub edge_map: Var<'t>,
    /// `[batch]`, global max of `seg_map`.
    pub image_score: Var<'t>,
}

/// Detached model output.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `[batch, 1, H, W]`
    pub seg_map: Tensor,
    /// `[batch, 1, H/4, W/4]`
    pub edge_map: Tensor,
    pub image_score: Vec<f64>,
}

impl Prediction {
    pub fn batch(&self) -> usize {
        self.image_score.len()
    }

    pub fn seg(&self, index: usize) -> &[f64] {
        self.seg_map.outer(index)
    }

    pub fn edge(&self, index: usize) -> &[f64] {
        self.edge_map.outer(index)
    }
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let widths = config.backbone_stage_channels;
        let groups = config.norm_groups;
        let erb = config.erb_channels;

        let esb_backbone = Backbone::new(&mut store, &mut rng, "esb.backbone", 3, widths, groups);
        let stage_erbs = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                EdgeResidualBlock::new(&mut store, &mut rng, &format!("esb.edge.stage{}", i + 1), c, erb, groups)
            })
            .collect();
        let combine_erbs = (1..widths.len())
            .map(|i| EdgeResidualBlock::new(&mut store, &mut rng, &format!("esb.edge.combine{i}"), erb, erb, groups))
            .collect();
        let edge_head = Conv::pointwise(&mut store, &mut rng, "esb.edge.head", erb, 1, 1, true);

        let bayar = store.add("nsb.bayar.weight", bayar::init_kernel(&mut rng, 3, 3));
        let nsb_backbone = Backbone::new(&mut store, &mut rng, "nsb.backbone", 3, widths, groups);

        let fusion = DualAttention::new(&mut store, &mut rng, "fusion", 2 * widths[3], config.da_reduced_channels);

        Ok(Self {
            config,
            params: store,
            esb_backbone,
            stage_erbs,
            combine_erbs,
            edge_head,
            bayar,
            nsb_backbone,
            fusion,
        })
    }

    /// Rebuilds a model and overwrites its parameters by name.
    pub fn with_params<'a>(
        config: ModelConfig,
        named: impl IntoIterator<Item = (&'a str, Tensor)>,
    ) -> Result<Self> {
        let mut model = Self::new(config)?;
        let mut seen = vec![false; model.params.len()];
        for (name, tensor) in named {
            let id = model
                .params
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            if tensor.shape() != model.params.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, model expects {:?}",
                    tensor.shape(),
                    model.params.get(id).shape()
                )));
            }
            *model.params.get_mut(id) = tensor;
            seen[id.index()] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            let name = model.params.iter().nth(missing).map(|(_, n, _)| n.to_owned());
            return Err(Error::Checkpoint(format!("missing parameter {}", name.unwrap_or_default())));
        }
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

    pub fn bayar_kernel(&self) -> &Tensor {
        self.params.get(self.bayar)
    }

    pub fn bayar_param(&self) -> ParamId {
        self.bayar
    }

    /// Re-applies the constrained-convolution projection.
    pub fn project_bayar(&mut self) -> Result<Vec<ProjectionWarning>> {
        bayar::bayar_project(self.params.get_mut(self.bayar))
    }

    pub fn stage_erbs(&self) -> &[EdgeResidualBlock] {
        &self.stage_erbs
    }

    pub fn combine_erbs(&self) -> &[EdgeResidualBlock] {
        &self.combine_erbs
    }

    pub fn edge_head(&self) -> &Conv {
        &self.edge_head
    }

    /// Parameters that reach the loss only through the edge map.
    pub fn edge_exclusive_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self
            .stage_erbs
            .iter()
            .chain(&self.combine_erbs)
            .flat_map(EdgeResidualBlock::params)
            .collect();
        ids.push(self.edge_head.weight);
        ids.extend(self.edge_head.bias);
        ids
    }

    pub fn esb_forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> EsbOutput<'t> {
        let feats = self.esb_backbone.forward(p, x);
        let s = feats[0].shape();
        let (h4, w4) = (s[2], s[3]);
        let mut stream = self.stage_erbs[0].forward(p, sobel::sobel_forward(feats[0]));
        for (i, combine) in self.combine_erbs.iter().enumerate() {
            let refined = self.stage_erbs[i + 1]
                .forward(p, sobel::sobel_forward(feats[i + 1]))
                .resize_bilinear(h4, w4);
            stream = combine.forward(p, stream.add(refined));
        }
        EsbOutput {
            deep: *feats.last().expect("four stages"),
            edge_logits: self.edge_head.forward(p, stream),
            stage_features: feats,
        }
    }

    /// Constrained convolution output that feeds the noise backbone.
    pub fn noise_view<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        bayar::bayar_forward(x, p.var(self.bayar))
    }

    pub fn nsb_forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let feats = self.nsb_backbone.forward(p, self.noise_view(p, x));
        *feats.last().expect("four stages")
    }

    pub fn dual_attention_forward<'t>(
        &self,
        p: &Bound<'t>,
        esb: Var<'t>,
        nsb: Var<'t>,
    ) -> Result<DualAttentionOutput<'t>> {
        self.fusion.forward(p, esb, nsb)
    }

    pub fn fusion(&self) -> &DualAttention {
        &self.fusion
    }

    /// Differentiable forward pass over a validated batch.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: &ImageTensor) -> Result<ForwardOutput<'t>> {
        let tape = p.vars().first().map(|v| v.tape()).expect("model has parameters");
        let input = tape.constant(x.tensor().clone());
        let esb = self.esb_forward(p, input);
        let nsb = self.nsb_forward(p, input);
        let fused = self.dual_attention_forward(p, esb.deep, nsb)?;
        let seg_map = fused
            .logits
            .resize_bilinear(x.height(), x.width())
            .sigmoid();
        Ok(ForwardOutput {
            fused_logits: fused.logits,
            seg_map,
            edge_logits: esb.edge_logits,
            edge_map: esb.edge_logits.sigmoid(),
            image_score: seg_map.max_per_sample(),
        })
    }

    /// Inference without gradient bookkeeping.
    pub fn predict(&self, x: &ImageTensor) -> Result<Prediction> {
        let tape = Tape::no_grad();
        let bound = self.params.bind(&tape);
        let out = self.forward(&bound, x)?;
        Ok(Prediction {
            seg_map: (*out.seg_map.value()).clone(),
            edge_map: (*out.edge_map.value()).clone(),
            image_score: out.image_score.value().data().to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_param_names_unique() {
        let m = Model::new(ModelConfig::default()).unwrap();
        assert!(m.params().numel() > 100_000);
        assert!(bayar::satisfies_constraint(m.bayar_kernel(), 1e-12));
        assert!(m.params().id("fusion.gamma_position").is_some());
    }

    #[test]
    fn rejects_widths_not_divisible_by_groups() {
        let cfg = ModelConfig {
            backbone_stage_channels: [6, 32, 64, 64],
            ..ModelConfig::default()
        };
        assert!(Model::new(cfg).unwrap_err().is_config());
    }

    #[test]
    fn with_params_round_trip_and_shape_check() {
        let cfg = ModelConfig {
            backbone_stage_channels: [4, 4, 8, 8],
            erb_channels: 4,
            da_reduced_channels: 2,
            input_size: 32,
            norm_groups: 2,
            seed: 3,
        };
        let m = Model::new(cfg.clone()).unwrap();
        let named: Vec<_> = m.params().iter().map(|(_, n, t)| (n, t.clone())).collect();
        let m2 = Model::with_params(cfg.clone(), named.iter().map(|(n, t)| (*n, t.clone()))).unwrap();
        assert_eq!(m.params(), m2.params());

        let mut bad = named.clone();
        bad[0].1 = Tensor::zeros(&[1]);
        assert!(Model::with_params(cfg.clone(), bad.iter().map(|(n, t)| (*n, t.clone()))).is_err());
        assert!(Model::with_params(cfg, named.iter().skip(1).map(|(n, t)| (*n, t.clone()))).is_err());
    }
}
