//! Differentiable operations, implemented as inherent methods on [`Tensor`].
//!
//! [`Tensor`]: crate::Tensor

mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod shape;

/// How the smaller operand of a binary op repeats over the larger one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// The right operand repeats over the leading axes of the left one.
    Right,
    /// The left operand repeats over the leading axes of the right one.
    Left,
}

/// Broadcasting over leading axes only: one shape must be a suffix of the
/// other, or hold a single element.
pub(crate) fn broadcast(a: &[usize], b: &[usize]) -> Option<Broadcast> {
    let numel = |s: &[usize]| s.iter().product::<usize>();
    if a == b {
        Some(Broadcast::Same)
    } else if b.len() <= a.len() && (a.ends_with(b) || numel(b) == 1) {
        Some(Broadcast::Right)
    } else if a.len() <= b.len() && (b.ends_with(a) || numel(a) == 1) {
        Some(Broadcast::Left)
    } else {
        None
    }
}

/// Sums a gradient of the broadcast (large) shape back onto `small_len`
/// elements, in index order.
pub(crate) fn reduce_broadcast<F: crate::Real>(g: &[F], small_len: usize) -> Vec<F> {
    let mut out = vec![F::zero(); small_len];
    for chunk in g.chunks(small_len) {
        out.iter_mut().zip(chunk).for_each(|(o, &v)| *o += v);
    }
    out
}
