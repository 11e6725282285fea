use crate::error::{shape_err, Result};
use crate::{Real, Tensor};

impl<F: Real> Tensor<F> {
    /// Depthwise 1-D convolution of `self[L x D]` with `kernel[w x D]`.
    ///
    /// `kernel[j]` weights the input `j` steps in the past. With `causal` the
    /// sequence is zero-padded on the left so `y[t]` only sees `x[..=t]`;
    /// otherwise the window is centred on `t`. Output length is `L`.
    pub fn depthwise_conv1d(&self, kernel: &Tensor<F>, causal: bool) -> Result<Tensor<F>> {
        let (len, d) = match *self.shape() {
            [l, d] => (l, d),
            ref s => return shape_err("depthwise_conv1d", format!("input shape {s:?}")),
        };
        let w = match *kernel.shape() {
            [w, kd] if kd == d && w >= 1 => w,
            ref s => return shape_err("depthwise_conv1d", format!("kernel shape {s:?} for {d} channels")),
        };
        let shift = if causal { 0 } else { (w - 1) / 2 };
        // Source index of tap j at output t, if inside the sequence.
        let src = move |t: usize, j: usize| (t + shift).checked_sub(j).filter(|&s| s < len);

        let mut out = vec![F::zero(); len * d];
        {
            let (x, k) = (self.data(), kernel.data());
            for t in 0..len {
                let row = &mut out[t * d..(t + 1) * d];
                for j in 0..w {
                    if let Some(s) = src(t, j) {
                        let (xs, kj) = (&x[s * d..(s + 1) * d], &k[j * d..(j + 1) * d]);
                        for c in 0..d {
                            row[c] += kj[c] * xs[c];
                        }
                    }
                }
            }
        }
        let (xc, kc) = (self.clone(), kernel.clone());
        Tensor::from_op(
            "depthwise_conv1d",
            out,
            vec![len, d],
            vec![self.clone(), kernel.clone()],
            move |g, needs| {
                let (x, k) = (xc.data(), kc.data());
                let mut gx = needs[0].then(|| vec![F::zero(); len * d]);
                let mut gk = needs[1].then(|| vec![F::zero(); w * d]);
                for t in 0..len {
                    let gt = &g[t * d..(t + 1) * d];
                    for j in 0..w {
                        let Some(s) = src(t, j) else { continue };
                        if let Some(gx) = gx.as_mut() {
                            for c in 0..d {
                                gx[s * d + c] += gt[c] * k[j * d + c];
                            }
                        }
                        if let Some(gk) = gk.as_mut() {
                            for c in 0..d {
                                gk[j * d + c] += gt[c] * x[s * d + c];
                            }
                        }
                    }
                }
                vec![gx, gk]
            },
        )
    }
}
