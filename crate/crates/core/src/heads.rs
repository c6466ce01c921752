//! Prediction heads on top of the passage encoding, and span decoding.

use crate::corpus::SlotType;
use crate::error::{Error, Result};
use crate::nn::{dot, matvec_acc, matvec_t_acc, outer_acc, sigmoid, softmax, Affine, HasParams, Initializer, Parameter};

/// Per-slot change probability: `sigmoid(e · W_i)` for all slots at once.
#[derive(Debug, Clone, PartialEq)]
pub struct CarryoverHead {
    /// `[encoding_dim × slots]`
    pub weight: Parameter,
}

impl CarryoverHead {
    pub fn new(encoding_dim: usize, slots: usize, init: &mut Initializer) -> Self {
        CarryoverHead {
            weight: init.uniform("carryover.weight", &[encoding_dim, slots]),
        }
    }

    pub fn slots(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn logits(&self, e: &[f64]) -> Result<Vec<f64>> {
        let dim = self.weight.value.shape()[0];
        if e.len() != dim {
            return Err(Error::shape("carryover_probs", dim, e.len()));
        }
        let mut out = vec![0.0; self.slots()];
        matvec_acc(e, self.weight.value.data(), &mut out);
        Ok(out)
    }

    /// Probability of CHANGE for every slot.
    pub fn probs(&self, e: &[f64]) -> Result<Vec<f64>> {
        Ok(self.logits(e)?.into_iter().map(sigmoid).collect())
    }

    /// Accumulates `dW`; returns `dL/de`.
    pub fn backward(&mut self, e: &[f64], dlogits: &[f64]) -> Vec<f64> {
        outer_acc(e, dlogits, self.weight.grad.data_mut());
        let mut de = vec![0.0; e.len()];
        matvec_t_acc(self.weight.value.data(), dlogits, &mut de);
        de
    }
}

impl HasParams for CarryoverHead {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.weight]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight]
    }
}

/// Distribution over {Yes, No, DontCare, Span} from `A · (e ; q_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeHead {
    pub affine: Affine,
}

impl TypeHead {
    pub fn new(encoding_dim: usize, question_dim: usize, init: &mut Initializer) -> Self {
        TypeHead {
            affine: Affine::new("type", encoding_dim + question_dim, SlotType::ALL.len(), init),
        }
    }

    fn input(e: &[f64], q: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(e.len() + q.len());
        x.extend_from_slice(e);
        x.extend_from_slice(q);
        x
    }

    pub fn logits(&self, e: &[f64], q: &[f64]) -> Result<Vec<f64>> {
        self.affine.forward(&Self::input(e, q))
    }

    pub fn probs(&self, e: &[f64], q: &[f64]) -> Result<[f64; 4]> {
        let p = softmax(&self.logits(e, q)?);
        Ok([p[0], p[1], p[2], p[3]])
    }

    /// Returns `(dL/de, dL/dq)`.
    pub fn backward(&mut self, e: &[f64], q: &[f64], dlogits: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let dx = self.affine.backward(&Self::input(e, q), dlogits)?;
        let (de, dq) = dx.split_at(e.len());
        Ok((de.to_vec(), dq.to_vec()))
    }
}

impl HasParams for TypeHead {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.affine.weight, &self.affine.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.affine.weight, &mut self.affine.bias]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanEdge {
    Start,
    End,
}

/// Start/end position classifiers `softmax_x(d_x Θ q_j)` with independent
/// `Θ` for each edge.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanHead {
    /// `[encoding_dim × question_dim]`
    pub start: Parameter,
    pub end: Parameter,
}

impl SpanHead {
    pub fn new(encoding_dim: usize, question_dim: usize, init: &mut Initializer) -> Self {
        SpanHead {
            start: init.uniform("span.start", &[encoding_dim, question_dim]),
            end: init.uniform("span.end", &[encoding_dim, question_dim]),
        }
    }

    fn theta(&self, edge: SpanEdge) -> &Parameter {
        match edge {
            SpanEdge::Start => &self.start,
            SpanEdge::End => &self.end,
        }
    }

    /// Unnormalized scores `d_x Θ q` for every position.
    pub fn scores(&self, tokens: &[Vec<f64>], q: &[f64], edge: SpanEdge) -> Result<Vec<f64>> {
        let theta = &self.theta(edge).value;
        let (h, k) = (theta.shape()[0], theta.shape()[1]);
        if q.len() != k {
            return Err(Error::shape("span_distributions", format!("question of length {k}"), q.len()));
        }
        if let Some(bad) = tokens.iter().find(|d| d.len() != h) {
            return Err(Error::shape("span_distributions", format!("token encoding of length {h}"), bad.len()));
        }
        let mut u = vec![0.0; h];
        matvec_t_acc(theta.data(), q, &mut u);
        Ok(tokens.iter().map(|d| dot(d, &u)).collect())
    }

    /// `(P_start, P_end)` over all positions.
    pub fn distributions(&self, tokens: &[Vec<f64>], q: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if tokens.is_empty() {
            return Err(Error::shape("span_distributions", "at least one position", 0));
        }
        Ok((
            softmax(&self.scores(tokens, q, SpanEdge::Start)?),
            softmax(&self.scores(tokens, q, SpanEdge::End)?),
        ))
    }

    /// Backward from score gradients of one edge. Accumulates `dΘ` and adds
    /// into `dtokens` and `dq`.
    pub fn backward(
        &mut self,
        tokens: &[Vec<f64>],
        q: &[f64],
        edge: SpanEdge,
        dscores: &[f64],
        dtokens: &mut [Vec<f64>],
        dq: &mut [f64],
    ) {
        let theta = match edge {
            SpanEdge::Start => &mut self.start,
            SpanEdge::End => &mut self.end,
        };
        let h = theta.value.shape()[0];
        let mut u = vec![0.0; h];
        matvec_t_acc(theta.value.data(), q, &mut u);
        let mut du = vec![0.0; h];
        for ((d, &ds), dd) in tokens.iter().zip(dscores).zip(dtokens.iter_mut()) {
            for a in 0..h {
                du[a] += ds * d[a];
                dd[a] += ds * u[a];
            }
        }
        outer_acc(&du, q, theta.grad.data_mut());
        matvec_acc(&du, theta.value.data(), dq);
    }
}

impl HasParams for SpanHead {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.start, &self.end]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.start, &mut self.end]
    }
}

/// Best span `(i, j)` with `i ≤ j` (and `j - i < max_len` when set)
/// maximizing `p_start[i] · p_end[j]`. Ties go to the smallest `i`, then the
/// smallest `j`.
///
/// Runs in O(L): a sliding-window maximum of `p_end` gives each start's best
/// partner, so the products compared are exactly those an exhaustive search
/// would compare.
pub fn decode_span(p_start: &[f64], p_end: &[f64], max_len: Option<usize>) -> (usize, usize) {
    assert_eq!(p_start.len(), p_end.len(), "span distributions differ in length");
    assert!(!p_start.is_empty(), "empty span distributions");
    decode_range(p_start, p_end, 0, p_start.len(), max_len).expect("non-empty range")
}

/// Like [`decode_span`] but only over spans that contain no blocked
/// position. `None` when every position is blocked.
pub fn decode_span_excluding(
    p_start: &[f64],
    p_end: &[f64],
    max_len: Option<usize>,
    blocked: &[bool],
) -> Option<(usize, usize)> {
    assert_eq!(p_start.len(), p_end.len(), "span distributions differ in length");
    assert_eq!(p_start.len(), blocked.len(), "mask length differs");
    let mut best: Option<((usize, usize), f64)> = None;
    let mut i = 0;
    while i < blocked.len() {
        if blocked[i] {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < blocked.len() && !blocked[j] {
            j += 1;
        }
        if let Some((s, e)) = decode_range(p_start, p_end, i, j, max_len) {
            let score = p_start[s] * p_end[e];
            // segments arrive in ascending start order: strict > keeps the
            // lexicographically smallest pair on ties
            if best.map_or(true, |(_, b)| score > b) {
                best = Some(((s, e), score));
            }
        }
        i = j;
    }
    best.map(|(span, _)| span)
}

/// Decodes within positions `lo..hi`.
fn decode_range(p_start: &[f64], p_end: &[f64], lo: usize, hi: usize, max_len: Option<usize>) -> Option<(usize, usize)> {
    if lo >= hi {
        return None;
    }
    let window = max_len.unwrap_or(usize::MAX).max(1);
    let n = hi - lo;

    // best_end[k] = max p_end over [lo+k, min(hi, lo+k+window) - 1]
    let mut best_end = vec![0.0; n];
    let mut deque: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    for k in (0..n).rev() {
        let pos = lo + k;
        while deque.back().is_some_and(|&b| p_end[b] <= p_end[pos]) {
            deque.pop_back();
        }
        deque.push_back(pos);
        let limit = pos.saturating_add(window);
        while deque.front().is_some_and(|&f| f >= limit) {
            deque.pop_front();
        }
        best_end[k] = p_end[*deque.front().unwrap()];
    }

    let mut top = f64::NEG_INFINITY;
    let mut start = lo;
    for k in 0..n {
        let score = p_start[lo + k] * best_end[k];
        if score > top {
            top = score;
            start = lo + k;
        }
    }
    let last = hi.min(start.saturating_add(window));
    let end = (start..last)
        .find(|&j| p_start[start] * p_end[j] == top)
        .unwrap_or(start);
    Some((start, end))
}
