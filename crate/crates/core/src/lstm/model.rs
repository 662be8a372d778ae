//! Forward pass, sequence loss and backpropagation through time.
//!
//! Gates, for `z = [x; h_prev]`:
//!
//! ```text
//! i = σ(W_i z + b_i)   f = σ(W_f z + b_f)   o = σ(W_o z + b_o)
//! g = tanh(W_g z + b_g)
//! c = f ⊙ c_prev + i ⊙ g
//! h = o ⊙ tanh(c)
//! logits = W_head h + b_head
//! ```

use super::matrix::axpy;
use super::params::LstmParams;
use crate::codec::{EncodedSequence, EncodedStep};
use crate::error::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[target]` via log-sum-exp.
fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// Index of the largest logit; ties go to the lowest id.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn check_step(params: &LstmParams, step: &EncodedStep) -> Result<(), ModelError> {
    if step.token_id >= params.shape.vocab {
        return Err(ModelError::ShapeMismatch(format!(
            "token id {} outside vocabulary of {}",
            step.token_id, params.shape.vocab
        )));
    }
    if let Some(levels) = step.taxonomy {
        for (level, (idx, size)) in levels.iter().zip(params.shape.taxonomy_sizes).enumerate() {
            if *idx >= size {
                return Err(ModelError::ShapeMismatch(format!(
                    "taxonomy level {} index {idx} outside {size} categories",
                    level + 1
                )));
            }
        }
    }
    Ok(())
}

/// Taxonomy table rows for a step; row 0 stands for "no taxonomy position".
fn taxonomy_rows(step: &EncodedStep) -> [usize; 3] {
    match step.taxonomy {
        Some([a, b, c]) => [a + 1, b + 1, c + 1],
        None => [0; 3],
    }
}

/// Writes the concatenated input embedding of `step` into `x`.
fn embed(params: &LstmParams, step: &EncodedStep, x: &mut [f64]) {
    let d = params.shape.dims;
    let (tok, rest) = x.split_at_mut(d.token);
    tok.copy_from_slice(params.token_embedding.row(step.token_id));
    let (val, rest) = rest.split_at_mut(d.value);
    for (j, v) in val.iter_mut().enumerate() {
        *v = params.value_weight.data[j] * step.value_feature + params.value_bias.data[j];
    }
    for (level, row) in taxonomy_rows(step).into_iter().enumerate() {
        let dst = &mut rest[level * d.taxonomy..(level + 1) * d.taxonomy];
        dst.copy_from_slice(params.taxonomy_embeddings[level].row(row));
    }
}

/// Activations of one time step, kept for the backward pass.
#[derive(Debug, Clone)]
struct StepCache {
    z: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    logits: Vec<f64>,
}

fn step_forward(params: &LstmParams, input: &EncodedStep, state: &LstmState) -> (StepCache, LstmState) {
    let hidden = params.shape.hidden();
    let d_in = params.shape.input_dim();
    let mut z = vec![0.0; d_in + hidden];
    embed(params, input, &mut z[..d_in]);
    z[d_in..].copy_from_slice(&state.h);

    let mut i = vec![0.0; hidden];
    let mut f = vec![0.0; hidden];
    let mut o = vec![0.0; hidden];
    let mut g = vec![0.0; hidden];
    params.w_input.affine(&z, &params.b_input.data, &mut i);
    params.w_forget.affine(&z, &params.b_forget.data, &mut f);
    params.w_output.affine(&z, &params.b_output.data, &mut o);
    params.w_candidate.affine(&z, &params.b_candidate.data, &mut g);
    i.iter_mut().for_each(|v| *v = sigmoid(*v));
    f.iter_mut().for_each(|v| *v = sigmoid(*v));
    o.iter_mut().for_each(|v| *v = sigmoid(*v));
    g.iter_mut().for_each(|v| *v = v.tanh());

    let c: Vec<f64> = (0..hidden).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..hidden).map(|k| o[k] * tanh_c[k]).collect();
    let mut logits = vec![0.0; params.shape.vocab];
    params.head_weight.affine(&h, &params.head_bias.data, &mut logits);

    let next = LstmState { h: h.clone(), c };
    let cache = StepCache {
        z,
        i,
        f,
        o,
        g,
        c_prev: state.c.clone(),
        tanh_c,
        h,
        logits,
    };
    (cache, next)
}

/// One LSTM step: returns the next-token logits and the new state.
pub fn forward_step(
    params: &LstmParams,
    input: &EncodedStep,
    state: &LstmState,
) -> Result<(Vec<f64>, LstmState), ModelError> {
    let hidden = params.shape.hidden();
    if state.h.len() != hidden || state.c.len() != hidden {
        return Err(ModelError::ShapeMismatch(format!(
            "state has h={} c={}, model hidden size is {hidden}",
            state.h.len(),
            state.c.len()
        )));
    }
    check_step(params, input)?;
    let (cache, next) = step_forward(params, input, state);
    Ok((cache.logits, next))
}

/// Runs a prefix through the model and returns the final logits and state.
pub fn forward_prefix(params: &LstmParams, steps: &[EncodedStep]) -> Result<(Vec<f64>, LstmState), ModelError> {
    let mut state = LstmState::zeros(params.shape.hidden());
    let mut logits = params.head_bias.data.clone();
    for step in steps {
        let (l, s) = forward_step(params, step, &state)?;
        logits = l;
        state = s;
    }
    Ok((logits, state))
}

fn check_sequence(params: &LstmParams, seq: &EncodedSequence) -> Result<(), ModelError> {
    if seq.steps.len() < 2 {
        return Err(ModelError::DegenerateSequence(seq.steps.len()));
    }
    seq.steps.iter().try_for_each(|s| check_step(params, s))
}

/// Mean cross-entropy of predicting `steps[t + 1]` from `steps[..=t]`.
pub fn sequence_loss(params: &LstmParams, seq: &EncodedSequence) -> Result<f64, ModelError> {
    check_sequence(params, seq)?;
    let mut state = LstmState::zeros(params.shape.hidden());
    let mut total = 0.0;
    let n = seq.steps.len() - 1;
    for t in 0..n {
        let (cache, next) = step_forward(params, &seq.steps[t], &state);
        total += cross_entropy(&cache.logits, seq.steps[t + 1].token_id);
        state = next;
    }
    Ok(total / n as f64)
}

/// Fraction of positions where the argmax prediction equals the next token.
/// The first `skip` targets of every sequence are fed but not scored: with a
/// symptom header the symptom token is an input the model is never asked to
/// guess, so callers pass `header_len - 1` to score only real predictions.
pub fn next_token_accuracy(params: &LstmParams, seqs: &[EncodedSequence], skip: usize) -> Result<f64, ModelError> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for seq in seqs {
        check_sequence(params, seq)?;
        let mut state = LstmState::zeros(params.shape.hidden());
        for t in 0..seq.steps.len() - 1 {
            let (cache, next) = step_forward(params, &seq.steps[t], &state);
            if t >= skip {
                hits += usize::from(argmax(&cache.logits) == seq.steps[t + 1].token_id);
                total += 1;
            }
            state = next;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Loss and its exact gradient with respect to every parameter.
pub fn backward(params: &LstmParams, seq: &EncodedSequence) -> Result<(f64, LstmParams), ModelError> {
    check_sequence(params, seq)?;
    let hidden = params.shape.hidden();
    let d = params.shape.dims;
    let d_in = params.shape.input_dim();
    let n = seq.steps.len() - 1;
    let scale = 1.0 / n as f64;

    let mut caches = Vec::with_capacity(n);
    let mut state = LstmState::zeros(hidden);
    let mut loss = 0.0;
    for t in 0..n {
        let (cache, next) = step_forward(params, &seq.steps[t], &state);
        loss += cross_entropy(&cache.logits, seq.steps[t + 1].token_id);
        caches.push(cache);
        state = next;
    }
    loss *= scale;

    let mut grads = params.zeros_like();
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dz = vec![0.0; d_in + hidden];
    let mut da = [
        vec![0.0; hidden],
        vec![0.0; hidden],
        vec![0.0; hidden],
        vec![0.0; hidden],
    ];

    for t in (0..n).rev() {
        let cache = &caches[t];
        let mut dlogits = softmax(&cache.logits);
        dlogits[seq.steps[t + 1].token_id] -= 1.0;
        dlogits.iter_mut().for_each(|v| *v *= scale);

        grads.head_weight.add_outer(&dlogits, &cache.h);
        axpy(1.0, &dlogits, &mut grads.head_bias.data);
        let mut dh = dh_next.clone();
        params.head_weight.add_transpose_mul(&dlogits, &mut dh);

        let [da_i, da_f, da_o, da_g] = &mut da;
        for k in 0..hidden {
            let (i, f, o, g) = (cache.i[k], cache.f[k], cache.o[k], cache.g[k]);
            let tc = cache.tanh_c[k];
            let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
            da_o[k] = dh[k] * tc * o * (1.0 - o);
            da_i[k] = dc * g * i * (1.0 - i);
            da_f[k] = dc * cache.c_prev[k] * f * (1.0 - f);
            da_g[k] = dc * i * (1.0 - g * g);
            dc_next[k] = dc * f;
        }

        dz.fill(0.0);
        let gates = [
            (&params.w_input, &mut grads.w_input, &mut grads.b_input, &da[0]),
            (&params.w_forget, &mut grads.w_forget, &mut grads.b_forget, &da[1]),
            (&params.w_output, &mut grads.w_output, &mut grads.b_output, &da[2]),
            (&params.w_candidate, &mut grads.w_candidate, &mut grads.b_candidate, &da[3]),
        ];
        for (w, gw, gb, delta) in gates {
            gw.add_outer(delta, &cache.z);
            axpy(1.0, delta, &mut gb.data);
            w.add_transpose_mul(delta, &mut dz);
        }
        dh_next.copy_from_slice(&dz[d_in..]);

        let step = &seq.steps[t];
        let dx = &dz[..d_in];
        axpy(1.0, &dx[..d.token], grads.token_embedding.row_mut(step.token_id));
        let dval = &dx[d.token..d.token + d.value];
        axpy(step.value_feature, dval, &mut grads.value_weight.data);
        axpy(1.0, dval, &mut grads.value_bias.data);
        let tax = &dx[d.token + d.value..];
        for (level, row) in taxonomy_rows(step).into_iter().enumerate() {
            let src = &tax[level * d.taxonomy..(level + 1) * d.taxonomy];
            axpy(1.0, src, grads.taxonomy_embeddings[level].row_mut(row));
        }
    }

    if let Some(name) = grads.first_non_finite() {
        return Err(ModelError::NonFinite(name));
    }
    Ok((loss, grads))
}
