use super::graph::{Graph, Var};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// `scores = softmax(Q·Kᵀ / √d)` row-wise and `out = scores · V`.
///
/// `q` is `[L × d]`, `k` and `v` are `[N × d]`; returns (`[L × N]`, `[L × d]`).
pub fn scaled_dot_attention<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
) -> Result<(Var, Var)> {
    let (qs, ks, vs) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 {
        return Err(Error::shape("attention", "rank-2 Q, K, V", (qs, ks, vs)));
    }
    let d = qs[1];
    if ks[1] != d || ks[0] != vs[0] {
        return Err(Error::shape(
            "attention",
            format!("K [N, {d}], V [N, _]"),
            (ks, vs),
        ));
    }
    let kt = g.transpose(k)?;
    let logits = g.matmul(q, kt)?;
    let logits = g.scale(logits, T::one() / T::of(d as f64).sqrt())?;
    let scores = g.softmax_rows(logits)?;
    let out = g.matmul(scores, v)?;
    Ok((scores, out))
}

/// Tensor-level convenience wrapper around [`scaled_dot_attention`].
pub fn attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let (s, o) = scaled_dot_attention(&mut g, qv, kv, vv)?;
    Ok((g.value(s).clone(), g.value(o).clone()))
}
