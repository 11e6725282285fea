use super::{broadcast, reduce_broadcast, Broadcast};
use crate::error::{shape_err, Result};
use crate::{Real, Tensor};

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }

    #[inline]
    fn apply<F: Real>(self, x: F, y: F) -> F {
        match self {
            BinOp::Add => x + y,
            BinOp::Sub => x - y,
            BinOp::Mul => x * y,
            BinOp::Div => x / y,
        }
    }
}

fn binary<F: Real>(op: BinOp, a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    let Some(mode) = broadcast(a.shape(), b.shape()) else {
        return shape_err(
            op.name(),
            format!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()),
        );
    };
    let (big, na, nb) = match mode {
        Broadcast::Same | Broadcast::Right => (a.shape().to_vec(), a.numel(), b.numel()),
        Broadcast::Left => (b.shape().to_vec(), a.numel(), b.numel()),
    };
    let n = na.max(nb);
    let out: Vec<F> = {
        let (ad, bd) = (a.data(), b.data());
        (0..n).map(|i| op.apply(ad[i % na], bd[i % nb])).collect()
    };
    let (ac, bc) = (a.clone(), b.clone());
    Tensor::from_op(op.name(), out, big, vec![a.clone(), b.clone()], move |g, needs| {
        let (ad, bd) = (ac.data(), bc.data());
        let mut ga = needs[0].then(|| vec![F::zero(); n]);
        let mut gb = needs[1].then(|| vec![F::zero(); n]);
        for i in 0..n {
            let (x, y) = (ad[i % na], bd[i % nb]);
            let (dx, dy) = match op {
                BinOp::Add => (g[i], g[i]),
                BinOp::Sub => (g[i], -g[i]),
                BinOp::Mul => (g[i] * y, g[i] * x),
                BinOp::Div => (g[i] / y, -g[i] * x / (y * y)),
            };
            if let Some(ga) = ga.as_mut() {
                ga[i] = dx;
            }
            if let Some(gb) = gb.as_mut() {
                gb[i] = dy;
            }
        }
        vec![
            ga.map(|v| if na == n { v } else { reduce_broadcast(&v, na) }),
            gb.map(|v| if nb == n { v } else { reduce_broadcast(&v, nb) }),
        ]
    })
}

/// Elementwise op whose derivative is expressed through input and output.
fn unary<F: Real>(
    t: &Tensor<F>,
    op: &'static str,
    f: impl Fn(F) -> F,
    df: impl Fn(F, F) -> F + Send + Sync + 'static,
) -> Result<Tensor<F>> {
    let out: Vec<F> = t.data().iter().map(|&x| f(x)).collect();
    let saved_out = out.clone();
    let input = t.clone();
    Tensor::from_op(op, out, t.shape().to_vec(), vec![t.clone()], move |g, _| {
        let x = input.data();
        let grad = g
            .iter()
            .zip(x.iter().zip(&saved_out))
            .map(|(&g, (&x, &y))| g * df(x, y))
            .collect();
        vec![Some(grad)]
    })
}

#[inline]
fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[inline]
fn softplus<F: Real>(x: F) -> F {
    // log(1 + e^x) without overflow for large x.
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

impl<F: Real> Tensor<F> {
    pub fn add(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        binary(BinOp::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        binary(BinOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        binary(BinOp::Mul, self, other)
    }

    pub fn div(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        binary(BinOp::Div, self, other)
    }

    pub fn neg(&self) -> Result<Tensor<F>> {
        self.scale(-F::one())
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, c: F) -> Result<Tensor<F>> {
        unary(self, "scale", |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: F) -> Result<Tensor<F>> {
        unary(self, "add_scalar", |x| x + c, |_, _| F::one())
    }

    pub fn square(&self) -> Result<Tensor<F>> {
        unary(self, "square", |x| x * x, |x, _| x + x)
    }

    pub fn exp(&self) -> Result<Tensor<F>> {
        unary(self, "exp", F::exp, |_, y| y)
    }

    pub fn sigmoid(&self) -> Result<Tensor<F>> {
        unary(self, "sigmoid", sigmoid, |_, y| y * (F::one() - y))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self) -> Result<Tensor<F>> {
        unary(
            self,
            "silu",
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (F::one() + x * (F::one() - s))
            },
        )
    }

    pub fn softplus(&self) -> Result<Tensor<F>> {
        unary(self, "softplus", softplus, |x, _| sigmoid(x))
    }

    /// `min(x, c)`; the gradient is zero where the clamp is active.
    pub fn clamp_max(&self, c: F) -> Result<Tensor<F>> {
        unary(
            self,
            "clamp_max",
            |x| x.min(c),
            move |x, _| if x < c { F::one() } else { F::zero() },
        )
    }

    /// `max(x, c)`; the gradient is zero where the clamp is active.
    pub fn clamp_min(&self, c: F) -> Result<Tensor<F>> {
        unary(
            self,
            "clamp_min",
            |x| x.max(c),
            move |x, _| if x > c { F::one() } else { F::zero() },
        )
    }
}
