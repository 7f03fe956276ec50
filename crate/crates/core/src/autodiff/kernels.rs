//! Plain array kernels. The tape records these; the backward pass reuses them.
//!
//! Convolutions are cross-correlations over the last axis of a `(B, C, T)`
//! array with an odd kernel, stride 1 and `(K - 1) / 2` zeros on each side,
//! lowered to a single matrix product over an unfolded input.

use crate::array::{channel_layout, Array};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn dims3<S: Scalar>(a: &Array<S>, what: &str) -> Result<(usize, usize, usize)> {
    match a.shape() {
        &[b, c, t] => Ok((b, c, t)),
        s => Err(Error::shape(format!("{what} must be 3-d, got {s:?}"))),
    }
}

fn kernel_padding(k: usize) -> Result<usize> {
    if k % 2 == 0 {
        return Err(Error::shape(format!("kernel size must be odd, got {k}")));
    }
    Ok((k - 1) / 2)
}

/// Unfolds `(B, Cin, T)` into a `(Cin*K) x (B*T)` matrix.
fn im2col<S: Scalar>(x: &[S], b: usize, cin: usize, t: usize, k: usize) -> Vec<S> {
    let pad = (k - 1) / 2;
    let bt = b * t;
    let mut col = vec![S::zero(); cin * k * bt];
    for i in 0..cin {
        for kk in 0..k {
            let row = &mut col[(i * k + kk) * bt..(i * k + kk + 1) * bt];
            for bi in 0..b {
                let src = &x[(bi * cin + i) * t..(bi * cin + i + 1) * t];
                let dst = &mut row[bi * t..(bi + 1) * t];
                // dst[tt] = src[tt + kk - pad] when in range
                let lo = pad.saturating_sub(kk);
                let hi = (t + pad).saturating_sub(kk).min(t);
                for tt in lo..hi {
                    dst[tt] = src[tt + kk - pad];
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: accumulates a `(Cin*K) x (B*T)` matrix back into `(B, Cin, T)`.
fn col2im<S: Scalar>(col: &[S], b: usize, cin: usize, t: usize, k: usize) -> Vec<S> {
    let pad = (k - 1) / 2;
    let bt = b * t;
    let mut x = vec![S::zero(); b * cin * t];
    for i in 0..cin {
        for kk in 0..k {
            let row = &col[(i * k + kk) * bt..(i * k + kk + 1) * bt];
            for bi in 0..b {
                let dst = &mut x[(bi * cin + i) * t..(bi * cin + i + 1) * t];
                let src = &row[bi * t..(bi + 1) * t];
                let lo = pad.saturating_sub(kk);
                let hi = (t + pad).saturating_sub(kk).min(t);
                for tt in lo..hi {
                    dst[tt + kk - pad] += src[tt];
                }
            }
        }
    }
    x
}

/// `(B, C, T)` -> `C x (B*T)`.
fn to_channel_major<S: Scalar>(x: &[S], b: usize, c: usize, t: usize) -> Vec<S> {
    let bt = b * t;
    let mut out = vec![S::zero(); c * bt];
    for bi in 0..b {
        for ci in 0..c {
            out[ci * bt + bi * t..ci * bt + (bi + 1) * t]
                .copy_from_slice(&x[(bi * c + ci) * t..(bi * c + ci + 1) * t]);
        }
    }
    out
}

/// `C x (B*T)` -> `(B, C, T)`.
fn from_channel_major<S: Scalar>(x: &[S], b: usize, c: usize, t: usize) -> Vec<S> {
    let bt = b * t;
    let mut out = vec![S::zero(); c * bt];
    for bi in 0..b {
        for ci in 0..c {
            out[(bi * c + ci) * t..(bi * c + ci + 1) * t]
                .copy_from_slice(&x[ci * bt + bi * t..ci * bt + (bi + 1) * t]);
        }
    }
    out
}

/// `y[b,o,t] = sum_{i,k} w[o,i,k] * x[b,i,t+k-pad]`.
pub fn conv1d<S: Scalar>(x: &Array<S>, w: &Array<S>) -> Result<Array<S>> {
    let (b, cin, t) = dims3(x, "conv1d input")?;
    let (cout, wcin, k) = dims3(w, "conv1d weight")?;
    if wcin != cin {
        return Err(Error::shape(format!("conv1d expects {wcin} input channels, got {cin}")));
    }
    kernel_padding(k)?;
    let bt = b * t;
    let ck = cin * k;
    let col = im2col(x.data(), b, cin, t, k);
    let mut y2 = vec![S::zero(); cout * bt];
    if bt > 0 && ck > 0 && cout > 0 {
        unsafe {
            S::gemm(
                cout,
                ck,
                bt,
                S::one(),
                w.data().as_ptr(),
                ck as isize,
                1,
                col.as_ptr(),
                bt as isize,
                1,
                S::zero(),
                y2.as_mut_ptr(),
                bt as isize,
                1,
            );
        }
    }
    Ok(Array::from_parts(vec![b, cout, t], from_channel_major(&y2, b, cout, t)))
}

/// Gradient of `conv1d` with respect to its input, given the output cotangent `g`.
pub fn conv1d_input_grad<S: Scalar>(g: &Array<S>, w: &Array<S>) -> Result<Array<S>> {
    let (b, cout, t) = dims3(g, "conv1d cotangent")?;
    let (wcout, cin, k) = dims3(w, "conv1d weight")?;
    if wcout != cout {
        return Err(Error::shape(format!("conv1d cotangent has {cout} channels, weight {wcout}")));
    }
    kernel_padding(k)?;
    let bt = b * t;
    let ck = cin * k;
    let g2 = to_channel_major(g.data(), b, cout, t);
    let mut dcol = vec![S::zero(); ck * bt];
    if bt > 0 && ck > 0 && cout > 0 {
        unsafe {
            S::gemm(
                ck,
                cout,
                bt,
                S::one(),
                w.data().as_ptr(),
                1,
                ck as isize,
                g2.as_ptr(),
                bt as isize,
                1,
                S::zero(),
                dcol.as_mut_ptr(),
                bt as isize,
                1,
            );
        }
    }
    Ok(Array::from_parts(vec![b, cin, t], col2im(&dcol, b, cin, t, k)))
}

/// Gradient of `conv1d` with respect to its weight, given input `x` and cotangent `g`.
pub fn conv1d_weight_grad<S: Scalar>(x: &Array<S>, g: &Array<S>, k: usize) -> Result<Array<S>> {
    let (b, cin, t) = dims3(x, "conv1d input")?;
    let (gb, cout, gt) = dims3(g, "conv1d cotangent")?;
    if gb != b || gt != t {
        return Err(Error::shape(format!(
            "conv1d input {:?} and cotangent {:?} disagree",
            x.shape(),
            g.shape()
        )));
    }
    kernel_padding(k)?;
    let bt = b * t;
    let ck = cin * k;
    let col = im2col(x.data(), b, cin, t, k);
    let g2 = to_channel_major(g.data(), b, cout, t);
    let mut gw = vec![S::zero(); cout * ck];
    if bt > 0 && ck > 0 && cout > 0 {
        unsafe {
            S::gemm(
                cout,
                bt,
                ck,
                S::one(),
                g2.as_ptr(),
                bt as isize,
                1,
                col.as_ptr(),
                1,
                bt as isize,
                S::zero(),
                gw.as_mut_ptr(),
                ck as isize,
                1,
            );
        }
    }
    Ok(Array::from_parts(vec![cout, cin, k], gw))
}

/// `op(a) * op(b)` for 2-d arrays, where `op` optionally transposes.
pub fn matmul<S: Scalar>(a: &Array<S>, b: &Array<S>, ta: bool, tb: bool) -> Result<Array<S>> {
    let (ar, ac) = match a.shape() {
        &[r, c] => (r, c),
        s => return Err(Error::shape(format!("matmul lhs must be 2-d, got {s:?}"))),
    };
    let (br, bc) = match b.shape() {
        &[r, c] => (r, c),
        s => return Err(Error::shape(format!("matmul rhs must be 2-d, got {s:?}"))),
    };
    let (m, k, rsa, csa) = if ta { (ac, ar, 1, ac as isize) } else { (ar, ac, ac as isize, 1) };
    let (k2, n, rsb, csb) = if tb { (bc, br, 1, bc as isize) } else { (br, bc, bc as isize, 1) };
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner dims differ: {:?}{} x {:?}{}",
            a.shape(),
            if ta { "^T" } else { "" },
            b.shape(),
            if tb { "^T" } else { "" }
        )));
    }
    let mut c = vec![S::zero(); m * n];
    if m > 0 && n > 0 && k > 0 {
        unsafe {
            S::gemm(
                m,
                k,
                n,
                S::one(),
                a.data().as_ptr(),
                rsa,
                csa,
                b.data().as_ptr(),
                rsb,
                csb,
                S::zero(),
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Ok(Array::from_parts(vec![m, n], c))
}

/// Adds `bias[c]` to every element of channel `c` (axis 1).
pub fn add_bias<S: Scalar>(y: &Array<S>, bias: &Array<S>) -> Result<Array<S>> {
    let (outer, c, inner) = y.channel_layout()?;
    if bias.shape() != [c] {
        return Err(Error::shape(format!("bias {:?} does not match {c} channels", bias.shape())));
    }
    let mut out = y.to_vec();
    let bd = bias.data();
    for o in 0..outer {
        for ci in 0..c {
            let start = (o * c + ci) * inner;
            for v in &mut out[start..start + inner] {
                *v += bd[ci];
            }
        }
    }
    Ok(Array::from_parts(y.shape().to_vec(), out))
}

/// Sums every axis except axis 1, giving a `(C)` vector.
pub fn channel_sum<S: Scalar>(x: &Array<S>) -> Result<Array<S>> {
    let (outer, c, inner) = x.channel_layout()?;
    let mut out = vec![S::zero(); c];
    let xd = x.data();
    for o in 0..outer {
        for (ci, acc) in out.iter_mut().enumerate() {
            let start = (o * c + ci) * inner;
            *acc += xd[start..start + inner].iter().copied().sum::<S>();
        }
    }
    Ok(Array::from_parts(vec![c], out))
}

/// Repeats a `(C)` vector along every axis except axis 1 of `shape`.
pub fn broadcast_channel<S: Scalar>(v: &Array<S>, shape: &[usize]) -> Result<Array<S>> {
    let (outer, c, inner) = channel_layout(shape)?;
    if v.shape() != [c] {
        return Err(Error::shape(format!("cannot broadcast {:?} over {shape:?}", v.shape())));
    }
    let mut out = Vec::with_capacity(outer * c * inner);
    for _ in 0..outer {
        for &val in v.data() {
            out.extend(std::iter::repeat_n(val, inner));
        }
    }
    Ok(Array::from_parts(shape.to_vec(), out))
}

/// Channels `start..start+len` along axis 1.
pub fn narrow<S: Scalar>(x: &Array<S>, start: usize, len: usize) -> Result<Array<S>> {
    let (outer, c, inner) = x.channel_layout()?;
    if start + len > c {
        return Err(Error::shape(format!("narrow {start}+{len} exceeds {c} channels")));
    }
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * c + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[1] = len;
    Ok(Array::from_parts(shape, out))
}

/// Embeds `x` at channel offset `start` of a zero array with `total` channels.
pub fn pad_channels<S: Scalar>(x: &Array<S>, start: usize, total: usize) -> Result<Array<S>> {
    let (outer, c, inner) = x.channel_layout()?;
    if start + c > total {
        return Err(Error::shape(format!("pad {start}+{c} exceeds {total} channels")));
    }
    let mut out = vec![S::zero(); outer * total * inner];
    for o in 0..outer {
        let dst = (o * total + start) * inner;
        out[dst..dst + c * inner].copy_from_slice(&x.data()[o * c * inner..(o + 1) * c * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[1] = total;
    Ok(Array::from_parts(shape, out))
}

/// Concatenation along axis 1.
pub fn concat<S: Scalar>(parts: &[&Array<S>]) -> Result<Array<S>> {
    let first = parts.first().ok_or_else(|| Error::shape("concat of nothing"))?;
    let (outer, _, inner) = first.channel_layout()?;
    let mut total = 0;
    for p in parts {
        let (o, c, i) = p.channel_layout()?;
        if o != outer || i != inner || p.ndim() != first.ndim() {
            return Err(Error::shape(format!(
                "concat shapes disagree: {:?} vs {:?}",
                first.shape(),
                p.shape()
            )));
        }
        total += c;
    }
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let c = p.dim(1);
            out.extend_from_slice(&p.data()[o * c * inner..(o + 1) * c * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[1] = total;
    Ok(Array::from_parts(shape, out))
}

pub fn leaky_relu<S: Scalar>(x: &Array<S>, slope: S) -> Array<S> {
    x.map(|v| if v > S::zero() { v } else { slope * v })
}

/// Derivative mask of [`leaky_relu`]: 1 where `x > 0`, `slope` elsewhere.
pub fn leaky_relu_slope<S: Scalar>(x: &Array<S>, slope: S) -> Array<S> {
    x.map(|v| if v > S::zero() { S::one() } else { slope })
}

pub fn sigmoid<S: Scalar>(x: &Array<S>) -> Array<S> {
    x.map(|v| {
        if v >= S::zero() {
            S::one() / (S::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (S::one() + e)
        }
    })
}

pub fn tanh<S: Scalar>(x: &Array<S>) -> Array<S> {
    x.map(|v| v.tanh())
}

/// `sum(mask * x^2)`.
pub fn masked_sq_norm<S: Scalar>(x: &Array<S>, mask: &Array<S>) -> Result<S> {
    if x.shape() != mask.shape() {
        return Err(Error::shape(format!(
            "mask {:?} does not match {:?}",
            mask.shape(),
            x.shape()
        )));
    }
    Ok(x.data().iter().zip(mask.data()).map(|(&v, &m)| m * v * v).sum())
}
