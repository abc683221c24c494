use crate::autodiff::{Element, Tape, Var};

use super::plan::{AttentionMessages, RelationalMessages, WeightedMessages};
use super::ModelError;

/// LeakyReLU slope for attention logits.
pub const ATTENTION_SLOPE: f64 = 0.2;

/// `A h w` for the sparse operator `A` of `m`, aggregating on the narrower
/// side of `w`.
fn propagate<T: Element>(tape: &mut Tape<T>, h: Var, w: Var, m: &WeightedMessages) -> Result<Var, ModelError> {
    let (f_in, f_out) = tape.shape(w);
    if f_in <= f_out {
        let ah = tape.sparse_matmul(h, &m.operator())?;
        Ok(tape.matmul(ah, w)?)
    } else {
        let hw = tape.matmul(h, w)?;
        Ok(tape.sparse_matmul(hw, &m.operator())?)
    }
}

fn check_rows<T: Element>(tape: &Tape<T>, h: Var, n: usize) -> Result<(), ModelError> {
    let rows = tape.shape(h).0;
    if rows != n {
        return Err(ModelError::ConfigMismatch(format!(
            "layer input has {rows} rows, graph has {n} nodes"
        )));
    }
    Ok(())
}

/// Graph convolution `A_hat H W (+ b)` with the normalization baked into `m`
/// (see [`gcn_messages`](super::gcn_messages)). No activation.
pub fn gcn_layer<T: Element>(
    tape: &mut Tape<T>,
    h: Var,
    w: Var,
    bias: Option<Var>,
    m: &WeightedMessages,
) -> Result<Var, ModelError> {
    check_rows(tape, h, m.n_nodes)?;
    let out = propagate(tape, h, w, m)?;
    match bias {
        Some(b) => Ok(tape.add(out, b)?),
        None => Ok(out),
    }
}

/// Weights of one attention head: `w` is `[f_in x f]`, `a` is `[2f x 1]` with
/// the destination half first.
#[derive(Clone, Copy, Debug)]
pub struct AttentionHead {
    pub w: Var,
    pub a: Var,
}

/// Multi-head graph attention with concatenated heads. Returns the
/// pre-activation output and each head's attention weights, one per message
/// of `m`.
pub fn gat_layer<T: Element>(
    tape: &mut Tape<T>,
    h: Var,
    heads: &[AttentionHead],
    bias: Option<Var>,
    m: &AttentionMessages,
) -> Result<(Var, Vec<Var>), ModelError> {
    check_rows(tape, h, m.n_nodes)?;
    if heads.is_empty() {
        return Err(ModelError::ConfigMismatch(
            "attention layer needs at least one head".into(),
        ));
    }
    let mut outs = Vec::with_capacity(heads.len());
    let mut alphas = Vec::with_capacity(heads.len());
    for head in heads {
        let wh = tape.matmul(h, head.w)?;
        let f = tape.shape(wh).1;
        if tape.shape(head.a) != (2 * f, 1) {
            return Err(ModelError::ConfigMismatch(format!(
                "attention vector must be [{} x 1]",
                2 * f
            )));
        }
        let a_dst = tape.gather(head.a, (0..f).collect::<Vec<_>>().into())?;
        let a_src = tape.gather(head.a, (f..2 * f).collect::<Vec<_>>().into())?;
        let s_dst = tape.matmul(wh, a_dst)?;
        let s_src = tape.matmul(wh, a_src)?;
        let e_dst = tape.gather(s_dst, m.dst.clone())?;
        let e_src = tape.gather(s_src, m.src.clone())?;
        let e = tape.add(e_dst, e_src)?;
        let e = tape.leaky_relu(e, ATTENTION_SLOPE);
        let alpha = tape.segment_softmax(e, m.offsets.clone())?;
        let msg = tape.gather(wh, m.src.clone())?;
        let msg = tape.mul(msg, alpha)?;
        outs.push(tape.scatter_add_rows(msg, m.dst.clone(), m.n_nodes)?);
        alphas.push(alpha);
    }
    let out = if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)?
    };
    let out = match bias {
        Some(b) => tape.add(out, b)?,
        None => out,
    };
    Ok((out, alphas))
}

/// Relational graph convolution
/// `H W_0 + sum_r scale_r * sum_{j in N_i^r} W_r h_j / |N_i^r|`.
pub fn rgcn_layer<T: Element>(
    tape: &mut Tape<T>,
    h: Var,
    w0: Var,
    w_rel: &[Var],
    scales: Option<&[Var]>,
    bias: Option<Var>,
    m: &RelationalMessages,
) -> Result<Var, ModelError> {
    check_rows(tape, h, m.n_nodes)?;
    if w_rel.len() < m.relations.len() {
        return Err(ModelError::MissingRelationWeight(w_rel.len()));
    }
    let mut out = tape.matmul(h, w0)?;
    for (r, msgs) in m.relations.iter().enumerate() {
        if msgs.is_empty() {
            continue;
        }
        let term = propagate(tape, h, w_rel[r], msgs)?;
        let term = match scales {
            Some(s) => tape.mul(term, s[r])?,
            None => term,
        };
        out = tape.add(out, term)?;
    }
    match bias {
        Some(b) => Ok(tape.add(out, b)?),
        None => Ok(out),
    }
}
