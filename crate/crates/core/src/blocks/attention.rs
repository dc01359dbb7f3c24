use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

fn widths(tape: &Tape, q: Var, k: Var, v: Var) -> Result<(usize, usize)> {
    let (sq, sk, sv) = (tape.value(q).shape(), tape.value(k).shape(), tape.value(v).shape());
    let last = |s: &[usize]| s.last().copied().unwrap_or(0);
    let tokens = |s: &[usize]| if s.len() >= 2 { s[s.len() - 2] } else { 0 };
    if last(sq) != last(sk) || last(sq) == 0 {
        return Err(Error::shape("attention", sq, sk));
    }
    if tokens(sk) != tokens(sv) || tokens(sk) == 0 {
        return Err(Error::shape("attention", sk, sv));
    }
    Ok((last(sq), tokens(sk)))
}

/// `softmax(Q Kᵀ / √d)` with rows over the keys.
///
/// Token matrices are `(N, d)` or batched `(B, N, d)`.
pub fn attention_weights(tape: &mut Tape, q: Var, k: Var) -> Result<Var> {
    let d = *tape.value(q).shape().last().unwrap_or(&0);
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / libm::sqrt(d as f64))?;
    let axis = tape.value(scaled).rank() - 1;
    tape.softmax(scaled, axis)
}

/// Single-head scaled dot-product attention `softmax(Q Kᵀ / √d) V`.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    widths(tape, q, k, v)?;
    let w = attention_weights(tape, q, k)?;
    tape.matmul(w, v)
}

/// Splits the feature axis into `heads` equal slices, attends per slice and
/// concatenates the results.
pub fn multi_head_attention(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let (d, _) = widths(tape, q, k, v)?;
    let dv = *tape.value(v).shape().last().unwrap();
    if heads <= 1 {
        return attention(tape, q, k, v);
    }
    if d % heads != 0 || dv % heads != 0 {
        return Err(Error::InvalidArgument(alloc::format!(
            "widths {}/{} not divisible by {} heads",
            d,
            dv,
            heads
        )));
    }
    let (hd, hv) = (d / heads, dv / heads);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_last(q, h * hd, hd)?;
        let kh = tape.slice_last(k, h * hd, hd)?;
        let vh = tape.slice_last(v, h * hv, hv)?;
        outs.push(attention(tape, qh, kh, vh)?);
    }
    tape.concat_last(&outs)
}
