//! Position + channel self-attention fusion of the two branches.

use mvss_tensor::{Tensor, Var};
use rand::Rng;

use super::layers::Conv;
use super::params::{Bound, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct DualAttention {
    pub query: Conv,
    pub key: Conv,
    pub value: Conv,
    pub gamma_position: ParamId,
    pub gamma_channel: ParamId,
    pub head: Conv,
}

/// Fused logits plus the attention matrices that produced them.
pub struct DualAttentionOutput<'t> {
    /// `[batch, 1, h, w]`
    pub logits: Var<'t>,
    /// `[batch, N, N]`, row `n` holds the weights position `n` puts on every position.
    pub position_attention: Var<'t>,
    /// `[batch, C, C]`
    pub channel_attention: Var<'t>,
}

impl DualAttention {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, channels: usize, reduced: usize) -> Self {
        Self {
            query: Conv::pointwise(store, rng, &format!("{name}.query"), channels, reduced, 1, true),
            key: Conv::pointwise(store, rng, &format!("{name}.key"), channels, reduced, 1, true),
            value: Conv::pointwise(store, rng, &format!("{name}.value"), channels, channels, 1, true),
            gamma_position: store.add(format!("{name}.gamma_position"), Tensor::zeros(&[1])),
            gamma_channel: store.add(format!("{name}.gamma_channel"), Tensor::zeros(&[1])),
            head: Conv::pointwise(store, rng, &format!("{name}.head"), channels, 1, 1, true),
        }
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, esb: Var<'t>, nsb: Var<'t>) -> Result<DualAttentionOutput<'t>> {
        let (se, sn) = (esb.shape(), nsb.shape());
        if se != sn {
            return Err(Error::Config(format!(
                "branch features differ in shape: {se:?} vs {sn:?}"
            )));
        }
        let x = esb.concat_channels(nsb);
        let [b, c, h, w] = [se[0], 2 * se[1], se[2], se[3]];
        let n = h * w;

        let q = self.query.forward(p, x);
        let r = q.shape()[1];
        let q = q.reshape(&[b, r, n]);
        let k = self.key.forward(p, x).reshape(&[b, r, n]);
        let v = self.value.forward(p, x).reshape(&[b, c, n]);
        let position_attention = q.bmm(true, k, false).softmax_last();
        let attended = v.bmm(false, position_attention, true).reshape(&[b, c, h, w]);
        let pa = attended.mul_scalar(p.var(self.gamma_position)).add(x);

        let flat = x.reshape(&[b, c, n]);
        let channel_attention = flat.bmm(false, flat, true).row_max_minus().softmax_last();
        let attended = channel_attention.bmm(false, flat, false).reshape(&[b, c, h, w]);
        let ca = attended.mul_scalar(p.var(self.gamma_channel)).add(x);

        Ok(DualAttentionOutput {
            logits: self.head.forward(p, pa.add(ca)),
            position_attention,
            channel_attention,
        })
    }
}
