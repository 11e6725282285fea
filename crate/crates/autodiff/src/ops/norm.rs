use crate::error::{shape_err, Result};
use crate::{Real, Tensor};

impl<F: Real> Tensor<F> {
    /// Normalizes each row over the last axis to zero mean and unit variance
    /// (biased estimator), then applies the optional affine `gamma`, `beta`.
    pub fn layer_norm(&self, gamma: Option<&Tensor<F>>, beta: Option<&Tensor<F>>, eps: F) -> Result<Tensor<F>> {
        let Some(&d) = self.shape().last() else {
            return shape_err("layer_norm", "rank-0 tensor");
        };
        for p in [gamma, beta].into_iter().flatten() {
            if p.shape() != [d] {
                return shape_err(
                    "layer_norm",
                    format!("affine parameter shape {:?}, expected [{d}]", p.shape()),
                );
            }
        }
        let rows = self.numel() / d;
        let df = F::from_usize(d).expect("width fits");
        let mut xhat = vec![F::zero(); rows * d];
        let mut inv_std = vec![F::zero(); rows];
        {
            let x = self.data();
            for r in 0..rows {
                let row = &x[r * d..(r + 1) * d];
                let mean = row.iter().fold(F::zero(), |a, &v| a + v) / df;
                let var = row.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / df;
                let is = F::one() / (var + eps).sqrt();
                inv_std[r] = is;
                for (o, &v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                    *o = (v - mean) * is;
                }
            }
        }
        let mut out = xhat.clone();
        let g_vals = gamma.map(|g| g.to_vec());
        let b_vals = beta.map(|b| b.to_vec());
        for row in out.chunks_mut(d) {
            if let Some(gv) = &g_vals {
                row.iter_mut().zip(gv).for_each(|(o, &g)| *o *= g);
            }
            if let Some(bv) = &b_vals {
                row.iter_mut().zip(bv).for_each(|(o, &b)| *o += b);
            }
        }
        let mut inputs = vec![self.clone()];
        inputs.extend(gamma.cloned());
        inputs.extend(beta.cloned());
        let has_gamma = gamma.is_some();
        let has_beta = beta.is_some();
        Tensor::from_op("layer_norm", out, self.shape().to_vec(), inputs, move |g, needs| {
            let mut gx = needs[0].then(|| vec![F::zero(); rows * d]);
            let mut ggamma = vec![F::zero(); d];
            let mut gbeta = vec![F::zero(); d];
            let mut dxhat = vec![F::zero(); d];
            for r in 0..rows {
                let gr = &g[r * d..(r + 1) * d];
                let xr = &xhat[r * d..(r + 1) * d];
                for j in 0..d {
                    ggamma[j] += gr[j] * xr[j];
                    gbeta[j] += gr[j];
                    dxhat[j] = match &g_vals {
                        Some(gv) => gr[j] * gv[j],
                        None => gr[j],
                    };
                }
                if let Some(gx) = gx.as_mut() {
                    let sum_d = dxhat.iter().fold(F::zero(), |a, &v| a + v);
                    let sum_dx = dxhat.iter().zip(xr).fold(F::zero(), |a, (&u, &v)| a + u * v);
                    let scale = inv_std[r] / df;
                    for j in 0..d {
                        gx[r * d + j] = scale * (df * dxhat[j] - sum_d - xr[j] * sum_dx);
                    }
                }
            }
            let mut grads = vec![gx];
            if has_gamma {
                grads.push(Some(ggamma));
            }
            if has_beta {
                grads.push(Some(gbeta));
            }
            grads
        })
    }

    /// Softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<F>> {
        if axis >= self.ndim() {
            return shape_err(
                "softmax",
                format!("axis {axis} out of range for shape {:?}", self.shape()),
            );
        }
        let k = self.dim(axis);
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let outer: usize = self.shape()[..axis].iter().product();
        let mut out = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * k + j) * inner + i;
                let max = (0..k).fold(F::neg_infinity(), |m, j| m.max(out[idx(j)]));
                let mut total = F::zero();
                for j in 0..k {
                    let e = (out[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..k {
                    out[idx(j)] /= total;
                }
            }
        }
        let y = out.clone();
        Tensor::from_op(
            "softmax",
            out,
            self.shape().to_vec(),
            vec![self.clone()],
            move |g, _| {
                let mut gx = vec![F::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * k + j) * inner + i;
                        let dot = (0..k).fold(F::zero(), |a, j| a + g[idx(j)] * y[idx(j)]);
                        for j in 0..k {
                            gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use crate::Tensor;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let x = Tensor::<f64>::full(&[3, 5], 0.7).unwrap();
        for v in x.softmax(1).unwrap().to_vec() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_over_leading_axis() {
        let x = Tensor::<f64>::new(vec![0.0, 1.0, 0.0, 1.0], &[2, 2]).unwrap();
        let y = x.softmax(0).unwrap().to_vec();
        assert_eq!(y, vec![0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let x = Tensor::<f64>::new(vec![1.0, 2.0, 4.0, 8.0, -3.0, 0.5, 0.5, 9.0], &[2, 4]).unwrap();
        let y = x.layer_norm(None, None, 0.0).unwrap().to_vec();
        for row in y.chunks(4) {
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn layer_norm_rejects_bad_affine() {
        let x = Tensor::<f32>::zeros(&[2, 4]);
        let g = Tensor::<f32>::zeros(&[3]);
        assert!(x.layer_norm(Some(&g), None, 1e-5).is_err());
    }
}
