use crate::error::{shape_err, Result};
use crate::{Real, Tensor};

impl<F: Real> Tensor<F> {
    /// Sum of all elements (sequential, index order) as a rank-0 tensor.
    pub fn sum(&self) -> Result<Tensor<F>> {
        let n = self.numel();
        let total = self.data().iter().fold(F::zero(), |acc, &v| acc + v);
        Tensor::from_op("sum", vec![total], vec![], vec![self.clone()], move |g, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Result<Tensor<F>> {
        let n = self.numel();
        if n == 0 {
            return shape_err("mean", "empty tensor");
        }
        self.sum()?.scale(F::one() / F::from_usize(n).expect("count fits"))
    }

    /// Sums over the last axis, dropping it.
    pub fn sum_last(&self) -> Result<Tensor<F>> {
        let Some((&k, lead)) = self.shape().split_last() else {
            return shape_err("sum_last", "rank-0 tensor");
        };
        let rows = self.numel() / k.max(1);
        let out: Vec<F> = self
            .data()
            .chunks(k.max(1))
            .take(rows)
            .map(|r| r.iter().fold(F::zero(), |a, &v| a + v))
            .collect();
        Tensor::from_op("sum_last", out, lead.to_vec(), vec![self.clone()], move |g, _| {
            vec![Some(g.iter().flat_map(|&v| std::iter::repeat_n(v, k)).collect())]
        })
    }

    /// Mean squared difference against a same-shaped tensor.
    pub fn mse(&self, target: &Tensor<F>) -> Result<Tensor<F>> {
        if self.shape() != target.shape() {
            return shape_err("mse", format!("{:?} vs {:?}", self.shape(), target.shape()));
        }
        self.sub(target)?.square()?.mean()
    }
}
