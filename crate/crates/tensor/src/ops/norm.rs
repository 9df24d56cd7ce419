use crate::{Tensor, Var};

impl<'t> Var<'t> {
    /// Group normalization over `[n, c, h, w]` with per-channel affine
    /// `gamma`/`beta` of shape `[c]`. Statistics are per sample, so samples
    /// never interact.
    pub fn group_norm(self, gamma: Var<'t>, beta: Var<'t>, groups: usize, eps: f64) -> Var<'t> {
        let x = self.value();
        let (gv, bv) = (gamma.value(), beta.value());
        let [n, c, h, w] = x.dims4();
        assert!(groups > 0 && c % groups == 0, "{c} channels not divisible into {groups} groups");
        assert_eq!(gv.len(), c, "gamma length mismatch");
        assert_eq!(bv.len(), c, "beta length mismatch");
        let per_channel = h * w;
        let per_group = (c / groups) * per_channel;

        let mut xhat = Tensor::zeros(x.shape());
        let mut inv_std = vec![0.0; n * groups];
        let mut out = Tensor::zeros(x.shape());
        for b in 0..n {
            for g in 0..groups {
                let start = (b * c + g * (c / groups)) * per_channel;
                let seg = &x.data()[start..start + per_group];
                let mean = seg.iter().sum::<f64>() / per_group as f64;
                let var = seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / per_group as f64;
                let istd = 1.0 / (var + eps).sqrt();
                inv_std[b * groups + g] = istd;
                let xh = &mut xhat.data_mut()[start..start + per_group];
                for (dst, v) in xh.iter_mut().zip(seg) {
                    *dst = (v - mean) * istd;
                }
            }
            for ch in 0..c {
                let start = (b * c + ch) * per_channel;
                let (gm, bt) = (gv.data()[ch], bv.data()[ch]);
                for i in start..start + per_channel {
                    out.data_mut()[i] = xhat.data()[i] * gm + bt;
                }
            }
        }

        self.tape().op(out, &[self, gamma, beta], move |grad, needs| {
            let gd = grad.data();
            let xh = xhat.data();
            let mut dgamma = needs[1].then(|| Tensor::zeros(&[c]));
            let mut dbeta = needs[2].then(|| Tensor::zeros(&[c]));
            for b in 0..n {
                for ch in 0..c {
                    let start = (b * c + ch) * per_channel;
                    let range = start..start + per_channel;
                    if let Some(dg) = dgamma.as_mut() {
                        dg.data_mut()[ch] +=
                            gd[range.clone()].iter().zip(&xh[range.clone()]).map(|(a, b)| a * b).sum::<f64>();
                    }
                    if let Some(db) = dbeta.as_mut() {
                        db.data_mut()[ch] += gd[range].iter().sum::<f64>();
                    }
                }
            }
            let dx = needs[0].then(|| {
                let mut dx = Tensor::zeros(xhat.shape());
                let cpg = c / groups;
                for b in 0..n {
                    for g in 0..groups {
                        let start = (b * c + g * cpg) * per_channel;
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for i in 0..per_group {
                            let ch = g * cpg + i / per_channel;
                            let d = gd[start + i] * gv.data()[ch];
                            mean_d += d;
                            mean_dx += d * xh[start + i];
                        }
                        mean_d /= per_group as f64;
                        mean_dx /= per_group as f64;
                        let istd = inv_std[b * groups + g];
                        for i in 0..per_group {
                            let ch = g * cpg + i / per_channel;
                            let d = gd[start + i] * gv.data()[ch];
                            dx.data_mut()[start + i] = istd * (d - mean_d - xh[start + i] * mean_dx);
                        }
                    }
                }
                dx
            });
            vec![dx, dgamma, dbeta]
        })
    }
}
