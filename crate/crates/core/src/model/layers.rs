use mvss_tensor::{Conv2dOpts, Tensor, Var};
use rand::Rng;

use super::params::{kaiming_normal, Bound, ParamId, ParamStore};

pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub opts: Conv2dOpts,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        opts: Conv2dOpts,
        bias: bool,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_normal(rng, &[out_channels, in_channels, kernel, kernel]),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels])));
        Self { weight, bias, opts }
    }

    /// 3×3 convolution that preserves the spatial size at stride 1.
    pub fn same3x3(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        dilation: usize,
        bias: bool,
    ) -> Self {
        let opts = Conv2dOpts::new(stride, dilation, dilation);
        Self::new(store, rng, name, in_channels, out_channels, 3, opts, bias)
    }

    pub fn pointwise(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        bias: bool,
    ) -> Self {
        let opts = Conv2dOpts::new(stride, 0, 1);
        Self::new(store, rng, name, in_channels, out_channels, 1, opts, bias)
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        x.conv2d(p.var(self.weight), self.bias.map(|b| p.var(b)), self.opts)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            groups,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        x.group_norm(p.var(self.gamma), p.var(self.beta), self.groups, NORM_EPS)
    }
}

/// Two 3×3 convolutions with normalisation and a (projected) skip path.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    conv1: Conv,
    norm1: GroupNorm,
    conv2: Conv,
    norm2: GroupNorm,
    skip: Option<(Conv, GroupNorm)>,
}

impl ResidualBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        dilation: usize,
        groups: usize,
    ) -> Self {
        let conv1 = Conv::same3x3(store, rng, &format!("{name}.conv1"), in_channels, out_channels, stride, dilation, false);
        let norm1 = GroupNorm::new(store, &format!("{name}.norm1"), out_channels, groups);
        let conv2 = Conv::same3x3(store, rng, &format!("{name}.conv2"), out_channels, out_channels, 1, dilation, false);
        let norm2 = GroupNorm::new(store, &format!("{name}.norm2"), out_channels, groups);
        let skip = (stride != 1 || in_channels != out_channels).then(|| {
            (
                Conv::pointwise(store, rng, &format!("{name}.skip"), in_channels, out_channels, stride, false),
                GroupNorm::new(store, &format!("{name}.skip_norm"), out_channels, groups),
            )
        });
        Self {
            conv1,
            norm1,
            conv2,
            norm2,
            skip,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let h = self.norm1.forward(p, self.conv1.forward(p, x)).relu();
        let h = self.norm2.forward(p, self.conv2.forward(p, h));
        let shortcut = match &self.skip {
            Some((conv, norm)) => norm.forward(p, conv.forward(p, x)),
            None => x,
        };
        h.add(shortcut).relu()
    }
}

/// Four-stage residual encoder with output strides 4, 8, 16, 16.
///
/// The stem reaches stride 4 with two stride-2 convolutions; the last stage
/// keeps stride 16 and dilates instead.
#[derive(Clone, Debug)]
pub struct Backbone {
    stem1: Conv,
    stem_norm1: GroupNorm,
    stem2: Conv,
    stem_norm2: GroupNorm,
    stages: Vec<ResidualBlock>,
}

pub const STAGE_STRIDES: [usize; 4] = [4, 8, 16, 16];

impl Backbone {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        widths: [usize; 4],
        groups: usize,
    ) -> Self {
        let stem1 = Conv::same3x3(store, rng, &format!("{name}.stem1"), in_channels, widths[0], 2, 1, false);
        let stem_norm1 = GroupNorm::new(store, &format!("{name}.stem_norm1"), widths[0], groups);
        let stem2 = Conv::same3x3(store, rng, &format!("{name}.stem2"), widths[0], widths[0], 2, 1, false);
        let stem_norm2 = GroupNorm::new(store, &format!("{name}.stem_norm2"), widths[0], groups);
        let plan = [(1, 1), (2, 1), (2, 1), (1, 2)];
        let mut stages = Vec::with_capacity(4);
        let mut prev = widths[0];
        for (i, ((stride, dilation), width)) in plan.into_iter().zip(widths).enumerate() {
            stages.push(ResidualBlock::new(
                store,
                rng,
                &format!("{name}.stage{}", i + 1),
                prev,
                width,
                stride,
                dilation,
                groups,
            ));
            prev = width;
        }
        Self {
            stem1,
            stem_norm1,
            stem2,
            stem_norm2,
            stages,
        }
    }

    /// Features after each of the four stages.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Vec<Var<'t>> {
        let h = self.stem_norm1.forward(p, self.stem1.forward(p, x)).relu();
        let mut h = self.stem_norm2.forward(p, self.stem2.forward(p, h)).relu();
        let mut feats = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            h = stage.forward(p, h);
            feats.push(h);
        }
        feats
    }
}

/// Edge residual block: `conv3x3 → norm → relu → conv3x3` plus a skip
/// that is a 1×1 projection when the channel count changes.
#[derive(Clone, Debug)]
pub struct EdgeResidualBlock {
    pub conv1: Conv,
    pub norm: GroupNorm,
    pub conv2: Conv,
    pub proj: Option<Conv>,
}

impl EdgeResidualBlock {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        groups: usize,
    ) -> Self {
        Self {
            conv1: Conv::same3x3(store, rng, &format!("{name}.conv1"), in_channels, out_channels, 1, 1, false),
            norm: GroupNorm::new(store, &format!("{name}.norm"), out_channels, groups),
            conv2: Conv::same3x3(store, rng, &format!("{name}.conv2"), out_channels, out_channels, 1, 1, true),
            proj: (in_channels != out_channels)
                .then(|| Conv::pointwise(store, rng, &format!("{name}.proj"), in_channels, out_channels, 1, false)),
        }
    }

    pub fn transform<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        let h = self.norm.forward(p, self.conv1.forward(p, x)).relu();
        self.conv2.forward(p, h)
    }

    pub fn project<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        match &self.proj {
            Some(conv) => conv.forward(p, x),
            None => x,
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        self.transform(p, x).add(self.project(p, x))
    }

    /// Parameters of the residual transform (not the projection).
    pub fn transform_params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.conv1.weight, self.norm.gamma, self.norm.beta, self.conv2.weight];
        ids.extend(self.conv2.bias);
        ids
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = self.transform_params();
        if let Some(p) = &self.proj {
            ids.push(p.weight);
        }
        ids
    }
}
