//! Selective state space layer and the Mamba block built on it.
//!
//! The continuous system `h' = A h + B x, y = C h + D x` is discretized with
//! the bilinear (Tustin) transform at an input-dependent step `Δ`:
//!
//! ```text
//! Ā = (I − Δ/2·A)⁻¹ (I + Δ/2·A)
//! B̄ = (I − Δ/2·A)⁻¹ Δ B
//! ```
//!
//! `A` is diagonal per channel, so inside the scan both inverses reduce to a
//! scalar division per state. `D` is an undiscretized skip term.

use gamba_autodiff::{is_grad_enabled, Real, Tensor};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{self, LayerNorm, Linear, NamedParams};

/// Bilinear discretization of a dense system.
///
/// `a` is `n x n` and `b` is `n x m`, both row-major. Returns `(Ā, B̄)`.
pub fn discretize(a: &[f64], b: &[f64], n: usize, m: usize, delta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n || b.len() != n * m {
        return Err(Error::Usage(format!(
            "discretize: A has {} entries for n = {n}, B has {} for n x m = {n} x {m}",
            a.len(),
            b.len()
        )));
    }
    let half = 0.5 * delta;
    let mut lhs = vec![0.0; n * n];
    let mut plus = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let eye = if i == j { 1.0 } else { 0.0 };
            lhs[i * n + j] = eye - half * a[i * n + j];
            plus[i * n + j] = eye + half * a[i * n + j];
        }
    }
    let scaled_b: Vec<f64> = b.iter().map(|v| delta * v).collect();
    let a_bar = solve(&lhs, &plus, n, n)?;
    let b_bar = solve(&lhs, &scaled_b, n, m)?;
    Ok((a_bar, b_bar))
}

/// Solves `lhs · X = rhs` by Gaussian elimination with partial pivoting.
fn solve(lhs: &[f64], rhs: &[f64], n: usize, cols: usize) -> Result<Vec<f64>> {
    let mut a = lhs.to_vec();
    let mut x = rhs.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty range");
        if a[pivot * n + col].abs() < 1e-300 {
            return Err(Error::Numerical("singular (I - Δ/2·A) in discretize".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            for k in 0..cols {
                x.swap(col * cols + k, pivot * cols + k);
            }
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = a[row * n + col] / a[col * n + col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            for k in 0..cols {
                x[row * cols + k] -= factor * x[col * cols + k];
            }
        }
    }
    for row in 0..n {
        let p = a[row * n + row];
        x[row * cols..(row + 1) * cols].iter_mut().for_each(|v| *v /= p);
    }
    Ok(x)
}

/// Runs the selective recurrence over a sequence.
///
/// Shapes: `x`, `delta` are `[L x Di]`, `a` is `[Di x n]` (continuous, negative),
/// `b`, `c` are `[L x n]` and `d` is `[Di]`. For every channel `i` and step `k`
///
/// ```text
/// h_k = Ā_k h_{k-1} + B̄_k x_k,   y_k = C_k · h_k + D x_k,   h_0 = 0
/// ```
///
/// with `Ā_k`, `B̄_k` the bilinear discretization at step `delta[k, i]`.
/// Cost is `O(L · Di · n)`; the backward pass replays the stored states.
pub fn selective_scan_kernel<F: Real>(
    x: &Tensor<F>,
    delta: &Tensor<F>,
    a: &Tensor<F>,
    b: &Tensor<F>,
    c: &Tensor<F>,
    d: &Tensor<F>,
) -> Result<Tensor<F>> {
    let (len, di) = match *x.shape() {
        [l, di] => (l, di),
        ref s => return Err(scan_shape(format!("x shape {s:?}"))),
    };
    let n = match *a.shape() {
        [rows, n] if rows == di => n,
        ref s => return Err(scan_shape(format!("A shape {s:?} for {di} channels"))),
    };
    if delta.shape() != [len, di] {
        return Err(scan_shape(format!("delta shape {:?}", delta.shape())));
    }
    for (name, t) in [("B", b), ("C", c)] {
        if t.shape() != [len, n] {
            return Err(scan_shape(format!(
                "{name} shape {:?}, expected [{len}, {n}]",
                t.shape()
            )));
        }
    }
    if d.shape() != [di] {
        return Err(scan_shape(format!("D shape {:?}", d.shape())));
    }

    let inputs = vec![x.clone(), delta.clone(), a.clone(), b.clone(), c.clone(), d.clone()];
    let keep_states = is_grad_enabled() && inputs.iter().any(Tensor::requires_grad);
    let half = F::lit(0.5);

    let mut y = vec![F::zero(); len * di];
    let mut states = if keep_states {
        vec![F::zero(); len * di * n]
    } else {
        Vec::new()
    };
    {
        let (xv, dv, av, bv, cv, skip) = (x.data(), delta.data(), a.data(), b.data(), c.data(), d.data());
        let mut h = vec![F::zero(); di * n];
        for t in 0..len {
            let (bt, ct) = (&bv[t * n..(t + 1) * n], &cv[t * n..(t + 1) * n]);
            for ch in 0..di {
                let dt = dv[t * di + ch];
                let xin = xv[t * di + ch];
                let hc = &mut h[ch * n..(ch + 1) * n];
                let ac = &av[ch * n..(ch + 1) * n];
                let mut acc = F::zero();
                for s in 0..n {
                    let u = half * dt * ac[s];
                    let inv = F::one() / (F::one() - u);
                    let a_bar = (F::one() + u) * inv;
                    let b_bar = dt * inv * bt[s];
                    hc[s] = a_bar * hc[s] + b_bar * xin;
                    acc += ct[s] * hc[s];
                }
                y[t * di + ch] = acc + skip[ch] * xin;
                if keep_states {
                    states[(t * di + ch) * n..(t * di + ch + 1) * n].copy_from_slice(hc);
                }
            }
        }
    }

    let saved = inputs.clone();
    Ok(Tensor::from_op(
        "selective_scan",
        y,
        vec![len, di],
        inputs,
        move |g, _| {
            let (xv, dv, av, bv, cv, skip) = (
                saved[0].data(),
                saved[1].data(),
                saved[2].data(),
                saved[3].data(),
                saved[4].data(),
                saved[5].data(),
            );
            let mut gx = vec![F::zero(); len * di];
            let mut gdelta = vec![F::zero(); len * di];
            let mut ga = vec![F::zero(); di * n];
            let mut gb = vec![F::zero(); len * n];
            let mut gc = vec![F::zero(); len * n];
            let mut gd = vec![F::zero(); di];
            // Gradient flowing into h_k from later steps.
            let mut carry = vec![F::zero(); di * n];
            let two = F::lit(2.0);
            for t in (0..len).rev() {
                let (bt, ct) = (&bv[t * n..(t + 1) * n], &cv[t * n..(t + 1) * n]);
                for ch in 0..di {
                    let gy = g[t * di + ch];
                    let dt = dv[t * di + ch];
                    let xin = xv[t * di + ch];
                    gd[ch] += gy * xin;
                    let mut gxin = gy * skip[ch];
                    let mut gdt = F::zero();
                    let base = (t * di + ch) * n;
                    for s in 0..n {
                        let a = av[ch * n + s];
                        let u = half * dt * a;
                        let inv = F::one() / (F::one() - u);
                        let a_bar = (F::one() + u) * inv;
                        let b_bar = dt * inv * bt[s];
                        let h = states[base + s];
                        let h_prev = if t > 0 { states[base - di * n + s] } else { F::zero() };
                        let gh = carry[ch * n + s] + gy * ct[s];
                        gc[t * n + s] += gy * h;
                        let g_abar = gh * h_prev;
                        let g_bbar = gh * xin;
                        gxin += gh * b_bar;
                        carry[ch * n + s] = gh * a_bar;
                        let inv2 = inv * inv;
                        let gu = g_abar * two * inv2 + g_bbar * dt * bt[s] * inv2;
                        gdt += gu * half * a + g_bbar * bt[s] * inv;
                        ga[ch * n + s] += gu * half * dt;
                        gb[t * n + s] += g_bbar * dt * inv;
                    }
                    gx[t * di + ch] = gxin;
                    gdelta[t * di + ch] = gdt;
                }
            }
            vec![Some(gx), Some(gdelta), Some(ga), Some(gb), Some(gc), Some(gd)]
        },
    )?)
}

fn scan_shape(detail: String) -> Error {
    Error::Tensor(gamba_autodiff::Error::Shape {
        op: "selective_scan",
        detail,
    })
}

/// Input-dependent SSM parameters of one block.
///
/// `x_proj` maps each token to `[Δ_low | B | C]`; `dt_proj` lifts the
/// low-rank `Δ_low` to one step per channel, made positive by softplus.
/// `A = −exp(a_log)` keeps the continuous system stable.
#[derive(Debug, Clone)]
pub struct SsmCore<F: Real> {
    pub x_proj: Linear<F>,
    pub dt_proj: Linear<F>,
    pub a_log: Tensor<F>,
    pub d: Tensor<F>,
    pub d_state: usize,
    pub dt_rank: usize,
}

impl<F: Real> SsmCore<F> {
    pub const DT_MIN: f64 = 1e-3;
    pub const DT_MAX: f64 = 1e-1;

    pub fn new(d_inner: usize, d_state: usize, dt_rank: usize, rng: &mut impl Rng) -> Result<Self> {
        let x_proj = Linear::new(d_inner, dt_rank + 2 * d_state, false, rng)?;
        let mut dt_proj = Linear::new(dt_rank, d_inner, true, rng)?;
        // Bias so that softplus(bias) is log-uniform in [DT_MIN, DT_MAX].
        let (lo, hi) = (Self::DT_MIN.ln(), Self::DT_MAX.ln());
        let bias = (0..d_inner).map(|_| {
            let dt: f64 = rng.random_range(lo..hi).exp();
            dt + (-(-dt).exp_m1()).ln()
        });
        dt_proj.bias = Some(nn::param_from(bias, &[d_inner])?);
        let a_log = nn::param_from(
            (0..d_inner).flat_map(|_| (1..=d_state).map(|s| (s as f64).ln())),
            &[d_inner, d_state],
        )?;
        Ok(Self {
            x_proj,
            dt_proj,
            a_log,
            d: nn::constant(&[d_inner], 1.0)?,
            d_state,
            dt_rank,
        })
    }

    /// The continuous state matrix diagonal, `[Di x n]`.
    pub fn a(&self) -> Result<Tensor<F>> {
        Ok(self.a_log.exp()?.neg()?)
    }

    /// Per-token `(Δ, B, C)` for input `x[L x Di]`.
    pub fn project(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
        let dbc = self.x_proj.forward(x)?;
        let dt_low = dbc.narrow_last(0, self.dt_rank)?;
        let b = dbc.narrow_last(self.dt_rank, self.d_state)?;
        let c = dbc.narrow_last(self.dt_rank + self.d_state, self.d_state)?;
        let delta = self.dt_proj.forward(&dt_low)?.softplus()?;
        Ok((delta, b, c))
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams<F>) {
        self.x_proj.collect(&format!("{prefix}.x_proj"), out);
        self.dt_proj.collect(&format!("{prefix}.dt_proj"), out);
        out.push((format!("{prefix}.a_log"), self.a_log.clone()));
        out.push((format!("{prefix}.d"), self.d.clone()));
    }
}

/// Selective scan of `x[L x Di]` with parameters computed from `x` itself.
pub fn selective_scan<F: Real>(x: &Tensor<F>, core: &SsmCore<F>) -> Result<Tensor<F>> {
    let (delta, b, c) = core.project(x)?;
    selective_scan_kernel(x, &delta, &core.a()?, &b, &c, &core.d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MambaConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub expand: usize,
    pub conv_width: usize,
}

impl MambaConfig {
    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn dt_rank(&self) -> usize {
        self.d_model.div_ceil(16)
    }
}

/// Pre-norm Mamba block with a residual connection:
///
/// ```text
/// u = LN(x)
/// y = out_proj( scan(silu(conv(in_proj u))) * silu(gate_proj u) )
/// return x + y
/// ```
#[derive(Debug, Clone)]
pub struct MambaBlockParams<F: Real> {
    pub norm: LayerNorm<F>,
    pub in_proj: Linear<F>,
    pub gate_proj: Linear<F>,
    /// Causal depthwise kernel, `[conv_width x Di]`.
    pub conv_kernel: Tensor<F>,
    pub ssm: SsmCore<F>,
    pub out_proj: Linear<F>,
}

impl<F: Real> MambaBlockParams<F> {
    pub fn new(cfg: MambaConfig, rng: &mut impl Rng) -> Result<Self> {
        let di = cfg.d_inner();
        let bound = 1.0 / (cfg.conv_width as f64).sqrt();
        Ok(Self {
            norm: LayerNorm::new(cfg.d_model)?,
            in_proj: Linear::new(cfg.d_model, di, false, rng)?,
            gate_proj: Linear::new(cfg.d_model, di, false, rng)?,
            conv_kernel: nn::uniform(&[cfg.conv_width, di], bound, rng)?,
            ssm: SsmCore::new(di, cfg.d_state, cfg.dt_rank(), rng)?,
            out_proj: Linear::new(di, cfg.d_model, false, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let u = self.norm.forward(x)?;
        let inner = self
            .in_proj
            .forward(&u)?
            .depthwise_conv1d(&self.conv_kernel, true)?
            .silu()?;
        let gate = self.gate_proj.forward(&u)?.silu()?;
        let y = selective_scan(&inner, &self.ssm)?.mul(&gate)?;
        Ok(x.add(&self.out_proj.forward(&y)?)?)
    }

    pub fn collect(&self, prefix: &str, out: &mut NamedParams<F>) {
        self.norm.collect(&format!("{prefix}.norm"), out);
        self.in_proj.collect(&format!("{prefix}.in_proj"), out);
        self.gate_proj.collect(&format!("{prefix}.gate_proj"), out);
        out.push((format!("{prefix}.conv_kernel"), self.conv_kernel.clone()));
        self.ssm.collect(&format!("{prefix}.ssm"), out);
        self.out_proj.collect(&format!("{prefix}.out_proj"), out);
    }
}

/// Applies the block to `x[L x D]`.
pub fn mamba_block<F: Real>(x: &Tensor<F>, params: &MambaBlockParams<F>) -> Result<Tensor<F>> {
    params.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_state_matrix() {
        let (a_bar, b_bar) = discretize(&[0.0], &[3.0], 1, 1, 0.1).unwrap();
        assert_eq!(a_bar, vec![1.0]);
        assert!((b_bar[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn scalar_hand_case() {
        // (1 + 1/2·(−1)) / (1 − 1/2·(−1)) = 0.5 / 1.5; B̄ = 1 / 1.5.
        let (a_bar, b_bar) = discretize(&[-1.0], &[1.0], 1, 1, 1.0).unwrap();
        assert!((a_bar[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((b_bar[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dense_matches_diagonal_entries() {
        let a = [-1.0, 0.0, 0.0, -4.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        let (a_bar, b_bar) = discretize(&a, &b, 2, 2, 0.5).unwrap();
        let u = |ai: f64| 0.25 * ai;
        assert!((a_bar[0] - (1.0 + u(-1.0)) / (1.0 - u(-1.0))).abs() < 1e-14);
        assert!((a_bar[3] - (1.0 + u(-4.0)) / (1.0 - u(-4.0))).abs() < 1e-14);
        assert_eq!(a_bar[1], 0.0);
        assert!((b_bar[2] - 0.5 * 3.0 / (1.0 - u(-4.0))).abs() < 1e-14);
    }

    #[test]
    fn singular_system_is_reported() {
        // I − Δ/2·A = 0 for A = 2, Δ = 1.
        assert!(matches!(
            discretize(&[2.0], &[1.0], 1, 1, 1.0),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn delta_stays_positive_and_a_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let core = SsmCore::<f64>::new(8, 4, 2, &mut rng).unwrap();
        assert!(core.a().unwrap().to_vec().iter().all(|&v| v < 0.0));
        let x = nn::normal::<f64>(&[5, 8], 3.0, &mut rng).unwrap();
        let (delta, _, _) = core.project(&x).unwrap();
        assert!(delta.to_vec().iter().all(|&v| v > 0.0));
        let init = core.dt_proj.bias.as_ref().unwrap().to_vec();
        for b in init {
            let dt = b.max(0.0) + (-b.abs()).exp().ln_1p();
            assert!((SsmCore::<f64>::DT_MIN - 1e-12..=SsmCore::<f64>::DT_MAX + 1e-12).contains(&dt));
        }
    }

    #[test]
    fn single_step_unrolls() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = |shape: &[usize], rng: &mut ChaCha8Rng| nn::normal::<f64>(shape, 1.0, rng).unwrap();
        let (x, b, c, d) = (
            t(&[1, 1], &mut rng),
            t(&[1, 2], &mut rng),
            t(&[1, 2], &mut rng),
            t(&[1], &mut rng),
        );
        let delta = Tensor::new(vec![0.3], &[1, 1]).unwrap();
        let a = Tensor::new(vec![-1.0, -2.0], &[1, 2]).unwrap();
        let y = selective_scan_kernel(&x, &delta, &a, &b, &c, &d).unwrap().to_vec()[0];
        let (xv, bv, cv, dv) = (x.to_vec()[0], b.to_vec(), c.to_vec(), d.to_vec()[0]);
        let mut expected = dv * xv;
        for s in 0..2 {
            let (_, b_bar) = discretize(&[-(s as f64 + 1.0)], &[bv[s]], 1, 1, 0.3).unwrap();
            expected += cv[s] * b_bar[0] * xv;
        }
        assert!((y - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let core = SsmCore::<f32>::new(6, 4, 1, &mut rng).unwrap();
        let x = Tensor::zeros(&[10, 6]);
        assert!(selective_scan(&x, &core).unwrap().to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_only_block_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = MambaConfig {
            d_model: 4,
            d_state: 2,
            expand: 2,
            conv_width: 4,
        };
        let block = MambaBlockParams::<f64>::new(cfg, &mut rng).unwrap();
        let mut params = Vec::new();
        block.collect("b", &mut params);
        for (_, p) in &params {
            p.update_data(|d| d.iter_mut().for_each(|v| *v = 0.0)).unwrap();
        }
        let x = nn::normal::<f64>(&[7, 4], 1.0, &mut rng).unwrap();
        assert_eq!(mamba_block(&x, &block).unwrap().to_vec(), x.to_vec());
    }
}
