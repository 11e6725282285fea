use crate::error::{shape_err, Result};
use crate::{Real, Tensor};

fn as_matrix<F: Real>(op: &'static str, t: &Tensor<F>) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        ref s => shape_err(op, format!("expected a matrix, got shape {s:?}")),
    }
}

impl<F: Real> Tensor<F> {
    /// Matrix product `self[m x k] * other[k x n]`.
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        let (m, k) = as_matrix("matmul", self)?;
        let (k2, n) = as_matrix("matmul", other)?;
        if k != k2 {
            return shape_err("matmul", format!("inner dimensions {k} and {k2} disagree"));
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(
            m,
            k,
            n,
            F::one(),
            &self.data(),
            (k, 1),
            &other.data(),
            (n, 1),
            F::zero(),
            &mut out,
        );
        let (a, b) = (self.clone(), other.clone());
        Tensor::from_op(
            "matmul",
            out,
            vec![m, n],
            vec![self.clone(), other.clone()],
            move |g, needs| {
                let ga = needs[0].then(|| {
                    let mut ga = vec![F::zero(); m * k];
                    F::gemm(m, n, k, F::one(), g, (n, 1), &b.data(), (1, n), F::zero(), &mut ga);
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![F::zero(); k * n];
                    F::gemm(k, m, n, F::one(), &a.data(), (1, k), g, (n, 1), F::zero(), &mut gb);
                    gb
                });
                vec![ga, gb]
            },
        )
    }

    /// `self[m x k] * other[n x k]^T`, the layout of a `[out x in]` weight.
    pub fn matmul_nt(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        let (m, k) = as_matrix("matmul_nt", self)?;
        let (n, k2) = as_matrix("matmul_nt", other)?;
        if k != k2 {
            return shape_err("matmul_nt", format!("inner dimensions {k} and {k2} disagree"));
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(
            m,
            k,
            n,
            F::one(),
            &self.data(),
            (k, 1),
            &other.data(),
            (1, k),
            F::zero(),
            &mut out,
        );
        let (a, w) = (self.clone(), other.clone());
        Tensor::from_op(
            "matmul_nt",
            out,
            vec![m, n],
            vec![self.clone(), other.clone()],
            move |g, needs| {
                let ga = needs[0].then(|| {
                    let mut ga = vec![F::zero(); m * k];
                    F::gemm(m, n, k, F::one(), g, (n, 1), &w.data(), (k, 1), F::zero(), &mut ga);
                    ga
                });
                let gw = needs[1].then(|| {
                    let mut gw = vec![F::zero(); n * k];
                    F::gemm(n, m, k, F::one(), g, (1, n), &a.data(), (k, 1), F::zero(), &mut gw);
                    gw
                });
                vec![ga, gw]
            },
        )
    }

    /// Affine map `x W^T + b` with `W` stored as `[out x in]`.
    pub fn linear(&self, weight: &Tensor<F>, bias: Option<&Tensor<F>>) -> Result<Tensor<F>> {
        let y = self.matmul_nt(weight)?;
        match bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }

    /// Transpose of a matrix.
    pub fn transpose(&self) -> Result<Tensor<F>> {
        let (r, c) = as_matrix("transpose", self)?;
        let transpose = move |src: &[F]| {
            let mut out = vec![F::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = src[i * c + j];
                }
            }
            out
        };
        let out = transpose(&self.data());
        Tensor::from_op("transpose", out, vec![c, r], vec![self.clone()], move |g, _| {
            // The gradient is the transpose of a [c x r] matrix.
            let mut back = vec![F::zero(); r * c];
            for j in 0..c {
                for i in 0..r {
                    back[i * c + j] = g[j * r + i];
                }
            }
            vec![Some(back)]
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::Tensor;

    #[test]
    fn identity_times_matrix() {
        let i = Tensor::<f64>::new(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let a = Tensor::<f64>::new(vec![0.3, -2.0, 5.5, 1e-3], &[2, 2]).unwrap();
        assert_eq!(i.matmul(&a).unwrap().to_vec(), a.to_vec());
    }

    #[test]
    fn hand_evaluated_product() {
        let a = Tensor::<f32>::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = Tensor::<f32>::new(vec![1.0, 1.0], &[2, 1]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.to_vec(), vec![3.0, 7.0]);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(crate::Error::Shape { .. })));
    }

    #[test]
    fn matmul_nt_matches_explicit_transpose() {
        let a = Tensor::<f64>::new((0..6).map(f64::from).collect(), &[2, 3]).unwrap();
        let w = Tensor::<f64>::new((0..12).map(|v| f64::from(v) * 0.5 - 2.0).collect(), &[4, 3]).unwrap();
        let direct = a.matmul_nt(&w).unwrap().to_vec();
        let via_t = a.matmul(&w.transpose().unwrap()).unwrap().to_vec();
        assert_eq!(direct, via_t);
    }
}
