//! Closed-form parameter and FLOP counts. All arithmetic is checked; a count
//! that does not fit in `u64` is an error, never a wrapped value.
//!
//! FLOPs count one multiply-add as two operations. Bias additions are not
//! counted.

use crate::error::{Error, Result};

fn validate(in_dims: &[usize], out_dims: &[usize]) -> Result<()> {
    if in_dims.is_empty() || in_dims.len() != out_dims.len() {
        return Err(Error::InvalidArgument(format!(
            "in_dims {in_dims:?} and out_dims {out_dims:?} must be non-empty and equally long"
        )));
    }
    if in_dims.iter().chain(out_dims).any(|&d| d == 0) {
        return Err(Error::InvalidArgument("all dims must be >= 1".into()));
    }
    Ok(())
}

fn mul(a: u64, b: u64, what: &'static str) -> Result<u64> {
    a.checked_mul(b).ok_or(Error::CountOverflow(what))
}

fn add(a: u64, b: u64, what: &'static str) -> Result<u64> {
    a.checked_add(b).ok_or(Error::CountOverflow(what))
}

fn product(dims: &[usize], what: &'static str) -> Result<u64> {
    dims.iter()
        .try_fold(1u64, |acc, &d| mul(acc, d as u64, what))
}

/// `Σ_k D_k·H_k`, plus `Σ_k H_k` with biases.
pub fn param_count(in_dims: &[usize], out_dims: &[usize], with_bias: bool) -> Result<u64> {
    validate(in_dims, out_dims)?;
    const WHAT: &str = "NdLinear parameter count";
    in_dims
        .iter()
        .zip(out_dims)
        .try_fold(0u64, |acc, (&d, &h)| {
            let mut term = mul(d as u64, h as u64, WHAT)?;
            if with_bias {
                term = add(term, h as u64, WHAT)?;
            }
            add(acc, term, WHAT)
        })
}

/// Parameters of the flattened dense layer: `ΠD_k·ΠH_k`, plus `ΠH_k` with
/// bias.
pub fn dense_param_count(in_dims: &[usize], out_dims: &[usize], with_bias: bool) -> Result<u64> {
    validate(in_dims, out_dims)?;
    const WHAT: &str = "dense parameter count";
    let d = product(in_dims, WHAT)?;
    let h = product(out_dims, WHAT)?;
    let weights = mul(d, h, WHAT)?;
    if with_bias {
        add(weights, h, WHAT)
    } else {
        Ok(weights)
    }
}

/// `2B·Σ_k (Π_{j<k} H_j)(Π_{j>k} D_j)·D_k·H_k`.
pub fn flop_count(batch: usize, in_dims: &[usize], out_dims: &[usize]) -> Result<u64> {
    validate(in_dims, out_dims)?;
    if batch == 0 {
        return Err(Error::InvalidArgument("batch must be >= 1".into()));
    }
    const WHAT: &str = "NdLinear FLOP count";
    let n = in_dims.len();
    let mut total = 0u64;
    for k in 0..n {
        let done = product(&out_dims[..k], WHAT)?;
        let pending = product(&in_dims[k + 1..], WHAT)?;
        let term = mul(
            mul(done, pending, WHAT)?,
            mul(in_dims[k] as u64, out_dims[k] as u64, WHAT)?,
            WHAT,
        )?;
        total = add(total, term, WHAT)?;
    }
    mul(mul(2, batch as u64, WHAT)?, total, WHAT)
}

/// `2B·ΠD_k·ΠH_k`.
pub fn dense_flop_count(batch: usize, in_dims: &[usize], out_dims: &[usize]) -> Result<u64> {
    validate(in_dims, out_dims)?;
    if batch == 0 {
        return Err(Error::InvalidArgument("batch must be >= 1".into()));
    }
    const WHAT: &str = "dense FLOP count";
    let d = product(in_dims, WHAT)?;
    let h = product(out_dims, WHAT)?;
    mul(mul(2, batch as u64, WHAT)?, mul(d, h, WHAT)?, WHAT)
}
