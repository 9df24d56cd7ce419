use crate::gemm::{gemm, Mat};
use crate::{Tensor, Var};

fn operand<'a>(data: &'a [f64], shape: &[usize], transposed: bool) -> Mat<'a> {
    Mat {
        data,
        rows: shape[1],
        cols: shape[2],
        transposed,
    }
}

impl<'t> Var<'t> {
    /// Batched matrix product `op(self) · op(other)` over rank-3 tensors,
    /// where `op` optionally transposes the two trailing axes.
    pub fn bmm(self, trans_self: bool, other: Var<'t>, trans_other: bool) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        assert_eq!(sa.len(), 3, "bmm expects rank-3 operands");
        assert_eq!(sb.len(), 3, "bmm expects rank-3 operands");
        assert_eq!(sa[0], sb[0], "bmm batch mismatch");
        let batch = sa[0];
        let (m, k) = if trans_self { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (k2, n) = if trans_other { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        assert_eq!(k, k2, "bmm inner dimension mismatch");

        let mut out = Tensor::zeros(&[batch, m, n]);
        for i in 0..batch {
            gemm(
                operand(a.outer(i), &sa, trans_self),
                operand(b.outer(i), &sb, trans_other),
                out.outer_mut(i),
                0.0,
            );
        }

        self.tape().op(out, &[self, other], move |grad, needs| {
            let gshape = [batch, m, n];
            let da = needs[0].then(|| {
                let mut da = Tensor::zeros(&sa);
                for i in 0..batch {
                    let g = operand(grad.outer(i), &gshape, false);
                    let opb = operand(b.outer(i), &sb, trans_other);
                    if trans_self {
                        gemm(opb, g.t(), da.outer_mut(i), 0.0);
                    } else {
                        gemm(g, opb.t(), da.outer_mut(i), 0.0);
                    }
                }
                da
            });
            let db = needs[1].then(|| {
                let mut db = Tensor::zeros(&sb);
                for i in 0..batch {
                    let g = operand(grad.outer(i), &gshape, false);
                    let opa = operand(a.outer(i), &sa, trans_self);
                    if trans_other {
                        gemm(g.t(), opa, db.outer_mut(i), 0.0);
                    } else {
                        gemm(opa.t(), g, db.outer_mut(i), 0.0);
                    }
                }
                db
            });
            vec![da, db]
        })
    }
}
