use std::rc::Rc;

use crate::{Tape, Tensor, Var};

impl<'t> Var<'t> {
    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "add: shape mismatch");
        let out = a.zip_map(&b, |x, y| x + y);
        self.tape()
            .op(out, &[self, other], |g, _| vec![Some(g.clone()), Some(g.clone())])
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "mul: shape mismatch");
        let out = a.zip_map(&b, |x, y| x * y);
        self.tape().op(out, &[self, other], move |g, needs| {
            vec![
                needs[0].then(|| g.zip_map(&b, |d, y| d * y)),
                needs[1].then(|| g.zip_map(&a, |d, x| d * x)),
            ]
        })
    }

    pub fn scale(self, factor: f64) -> Var<'t> {
        let out = self.value().map(|x| x * factor);
        self.tape()
            .op(out, &[self], move |g, _| vec![Some(g.map(|d| d * factor))])
    }

    /// Multiplies every element by a single-element variable.
    pub fn mul_scalar(self, s: Var<'t>) -> Var<'t> {
        let (x, sv) = (self.value(), s.value());
        assert_eq!(sv.len(), 1, "mul_scalar expects a single-element factor");
        let factor = sv.data()[0];
        let out = x.map(|v| v * factor);
        let shape = sv.shape().to_vec();
        self.tape().op(out, &[self, s], move |g, needs| {
            vec![
                needs[0].then(|| g.map(|d| d * factor)),
                needs[1].then(|| {
                    let dot = g.data().iter().zip(x.data()).map(|(d, v)| d * v).sum();
                    Tensor::new(&shape, vec![dot])
                }),
            ]
        })
    }

    pub fn relu(self) -> Var<'t> {
        let x = self.value();
        let out = x.map(|v| v.max(0.0));
        self.tape().op(out, &[self], move |g, _| {
            vec![Some(g.zip_map(&x, |d, v| if v > 0.0 { d } else { 0.0 }))]
        })
    }

    pub fn sigmoid(self) -> Var<'t> {
        let out = Rc::new(self.value().map(sigmoid));
        let y = out.clone();
        self.tape().op((*out).clone(), &[self], move |g, _| {
            vec![Some(g.zip_map(&y, |d, s| d * s * (1.0 - s)))]
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let original = self.shape();
        let out = (*self.value()).clone().reshape(shape);
        self.tape().op(out, &[self], move |g, _| {
            vec![Some(g.clone().reshape(&original))]
        })
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(self) -> Var<'t> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.tape().op(Tensor::scalar(x.sum()), &[self], move |g, _| {
            vec![Some(Tensor::full(&shape, g.data()[0]))]
        })
    }

    /// `Σ weights[i] · x[i]` over the flattened tensor.
    pub fn weighted_sum(self, weights: &[f64]) -> Var<'t> {
        let x = self.value();
        assert_eq!(weights.len(), x.len(), "weighted_sum: length mismatch");
        let total = x.data().iter().zip(weights).map(|(v, w)| v * w).sum();
        let shape = x.shape().to_vec();
        let weights = weights.to_vec();
        self.tape().op(Tensor::scalar(total), &[self], move |g, _| {
            let d = g.data()[0];
            vec![Some(Tensor::new(
                &shape,
                weights.iter().map(|w| w * d).collect(),
            ))]
        })
    }

    /// Per-sample maximum over all non-leading axes, shape `[n]`.
    ///
    /// The gradient is routed to the first maximal element in row-major order.
    pub fn max_per_sample(self) -> Var<'t> {
        let x = self.value();
        let n = x.shape()[0];
        let mut argmax = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        for b in 0..n {
            let (idx, val) = first_argmax(x.outer(b));
            argmax.push(idx);
            out.push(val);
        }
        let shape = x.shape().to_vec();
        let stride = x.len() / n;
        self.tape().op(Tensor::new(&[n], out), &[self], move |g, _| {
            let mut dx = Tensor::zeros(&shape);
            for (b, &idx) in argmax.iter().enumerate() {
                dx.data_mut()[b * stride + idx] = g.data()[b];
            }
            vec![Some(dx)]
        })
    }

    /// Softmax over the last axis.
    pub fn softmax_last(self) -> Var<'t> {
        let x = self.value();
        let cols = *x.shape().last().expect("softmax on rank-0 tensor");
        let mut out = (*x).clone();
        for row in out.data_mut().chunks_mut(cols) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let y = Rc::new(out);
        let y2 = y.clone();
        self.tape().op((*y).clone(), &[self], move |g, _| {
            let mut dx = Tensor::zeros(y2.shape());
            for ((dxr, yr), gr) in dx
                .data_mut()
                .chunks_mut(cols)
                .zip(y2.data().chunks(cols))
                .zip(g.data().chunks(cols))
            {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for ((d, &s), &gg) in dxr.iter_mut().zip(yr).zip(gr) {
                    *d = s * (gg - dot);
                }
            }
            vec![Some(dx)]
        })
    }

    /// `max(row) - x` along the last axis.
    pub fn row_max_minus(self) -> Var<'t> {
        let x = self.value();
        let cols = *x.shape().last().expect("row_max_minus on rank-0 tensor");
        let mut out = (*x).clone();
        let mut argmax = Vec::with_capacity(x.len() / cols);
        for row in out.data_mut().chunks_mut(cols) {
            let (idx, m) = first_argmax(row);
            argmax.push(idx);
            for v in row.iter_mut() {
                *v = m - *v;
            }
        }
        let shape = x.shape().to_vec();
        self.tape().op(out, &[self], move |g, _| {
            let mut dx = Tensor::zeros(&shape);
            for ((dxr, gr), &idx) in dx
                .data_mut()
                .chunks_mut(cols)
                .zip(g.data().chunks(cols))
                .zip(&argmax)
            {
                let total: f64 = gr.iter().sum();
                for (d, &gg) in dxr.iter_mut().zip(gr) {
                    *d = -gg;
                }
                dxr[idx] += total;
            }
            vec![Some(dx)]
        })
    }

    /// Concatenates along axis 1.
    pub fn concat_channels(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        assert_eq!(sa.len(), sb.len(), "concat: rank mismatch");
        assert_eq!(sa[0], sb[0], "concat: batch mismatch");
        assert_eq!(sa[2..], sb[2..], "concat: trailing dims mismatch");
        let n = sa[0];
        let (la, lb) = (a.len() / n, b.len() / n);
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..n {
            data.extend_from_slice(a.outer(i));
            data.extend_from_slice(b.outer(i));
        }
        let mut shape = sa.clone();
        shape[1] += sb[1];
        self.tape()
            .op(Tensor::new(&shape, data), &[self, other], move |g, needs| {
                let mut ga = needs[0].then(|| Tensor::zeros(&sa));
                let mut gb = needs[1].then(|| Tensor::zeros(&sb));
                for i in 0..n {
                    let row = g.outer(i);
                    if let Some(ga) = ga.as_mut() {
                        ga.outer_mut(i).copy_from_slice(&row[..la]);
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb.outer_mut(i).copy_from_slice(&row[la..la + lb]);
                    }
                }
                vec![ga, gb]
            })
    }
}

impl Tape {
    /// Sum of equally shaped variables.
    pub fn add_all<'t>(&'t self, vars: &[Var<'t>]) -> Var<'t> {
        assert!(!vars.is_empty(), "add_all needs at least one input");
        let mut acc = (*vars[0].value()).clone();
        for v in &vars[1..] {
            acc.add_assign(&v.value());
        }
        let k = vars.len();
        self.op(acc, vars, move |g, _| vec![Some(g.clone()); k])
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index and value of the first maximum; NaN never wins.
pub fn first_argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}
