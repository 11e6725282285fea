use crate::error::{shape_err, Result};
use crate::{Real, Tensor};

impl<F: Real> Tensor<F> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<F>> {
        if shape.iter().product::<usize>() != self.numel() {
            return shape_err("reshape", format!("{:?} -> {shape:?}", self.shape()));
        }
        Tensor::from_op("reshape", self.to_vec(), shape.to_vec(), vec![self.clone()], |g, _| {
            vec![Some(g.to_vec())]
        })
    }

    /// Stacks tensors along axis 0; trailing dimensions must agree.
    pub fn concat_rows(parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
        let Some(first) = parts.first() else {
            return shape_err("concat_rows", "no inputs");
        };
        let Some((_, tail)) = first.shape().split_first() else {
            return shape_err("concat_rows", "rank-0 input");
        };
        let mut rows = 0;
        for p in parts {
            match p.shape().split_first() {
                Some((&r, t)) if t == tail => rows += r,
                _ => return shape_err("concat_rows", format!("{:?} vs {:?}", p.shape(), first.shape())),
            }
        }
        let mut out = Vec::with_capacity(parts.iter().map(|p| p.numel()).sum());
        for p in parts {
            out.extend_from_slice(&p.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(tail);
        let sizes: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
        let inputs = parts.iter().map(|&p| p.clone()).collect();
        Tensor::from_op("concat_rows", out, shape, inputs, move |g, needs| {
            let mut offset = 0;
            sizes
                .iter()
                .zip(needs)
                .map(|(&n, &need)| {
                    let part = need.then(|| g[offset..offset + n].to_vec());
                    offset += n;
                    part
                })
                .collect()
        })
    }

    /// Rows `start..start + count` along axis 0.
    pub fn slice_rows(&self, start: usize, count: usize) -> Result<Tensor<F>> {
        let Some((&rows, tail)) = self.shape().split_first() else {
            return shape_err("slice_rows", "rank-0 input");
        };
        if start + count > rows {
            return shape_err("slice_rows", format!("rows {start}..{} of {rows}", start + count));
        }
        let stride: usize = tail.iter().product();
        let out = self.data()[start * stride..(start + count) * stride].to_vec();
        let mut shape = vec![count];
        shape.extend_from_slice(tail);
        let total = self.numel();
        Tensor::from_op("slice_rows", out, shape, vec![self.clone()], move |g, _| {
            let mut full = vec![F::zero(); total];
            full[start * stride..(start + count) * stride].copy_from_slice(g);
            vec![Some(full)]
        })
    }

    /// Entries `start..start + count` of the last axis.
    pub fn narrow_last(&self, start: usize, count: usize) -> Result<Tensor<F>> {
        let Some(&k) = self.shape().last() else {
            return shape_err("narrow_last", "rank-0 input");
        };
        if start + count > k {
            return shape_err("narrow_last", format!("columns {start}..{} of {k}", start + count));
        }
        let rows = self.numel() / k.max(1);
        let mut out = Vec::with_capacity(rows * count);
        for r in self.data().chunks(k).take(rows) {
            out.extend_from_slice(&r[start..start + count]);
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = count;
        Tensor::from_op("narrow_last", out, shape, vec![self.clone()], move |g, _| {
            let mut full = vec![F::zero(); rows * k];
            for (dst, src) in full.chunks_mut(k).zip(g.chunks(count.max(1))) {
                dst[start..start + count].copy_from_slice(&src[..count]);
            }
            vec![Some(full)]
        })
    }
}
