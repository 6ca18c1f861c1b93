//! Encoder forward passes on the gradient tape.
//!
//! Each encoder maps embedded input rows `[T, E]` to hidden states
//! `[T, hidden]` with the shared hidden width from the config.

use super::{EncoderConfig, EncoderKind};
use crate::error::Result;
use crate::tensor::{ParameterStore, Tape, TapeBinding, Tensor, Var};

pub(super) fn encode(
    config: &EncoderConfig,
    tape: &mut Tape,
    binding: &mut TapeBinding,
    params: &ParameterStore,
    lookup: Var,
    t_len: usize,
) -> Result<Var> {
    match config.kind {
        EncoderKind::Projection => {
            let w = binding.param(tape, params, "proj.w")?;
            let b = binding.param(tape, params, "proj.b")?;
            let h = tape.matmul(lookup, w)?;
            let h = tape.add(h, b)?;
            tape.relu(h)
        }
        EncoderKind::Cnn => {
            let mut branches = Vec::with_capacity(config.kernel_sizes.len());
            for &k in &config.kernel_sizes {
                let kernel = binding.param(tape, params, &format!("cnn.k{k}.w"))?;
                let bias = binding.param(tape, params, &format!("cnn.k{k}.b"))?;
                let conv = tape.conv1d_same(lookup, kernel)?;
                let conv = tape.add(conv, bias)?;
                branches.push(tape.relu(conv)?);
            }
            tape.concat_last(&branches)
        }
        EncoderKind::Bilstm => {
            let fwd = run_lstm(config, tape, binding, params, lookup, t_len, "fwd", false)?;
            let bwd = run_lstm(config, tape, binding, params, lookup, t_len, "bwd", true)?;
            let rows: Vec<Var> = (0..t_len)
                .map(|t| tape.concat_last(&[fwd[t], bwd[t]]))
                .collect::<Result<_>>()?;
            tape.stack_rows(&rows)
        }
    }
}

/// Standard four-gate LSTM recurrence over one direction, returning the
/// per-position states indexed by original position.
#[allow(clippy::too_many_arguments)]
fn run_lstm(
    config: &EncoderConfig,
    tape: &mut Tape,
    binding: &mut TapeBinding,
    params: &ParameterStore,
    lookup: Var,
    t_len: usize,
    dir: &str,
    reversed: bool,
) -> Result<Vec<Var>> {
    let h_size = config.direction_size();
    let w_x = binding.param(tape, params, &format!("lstm.{dir}.w_x"))?;
    let w_h = binding.param(tape, params, &format!("lstm.{dir}.w_h"))?;
    let b = binding.param(tape, params, &format!("lstm.{dir}.b"))?;

    let mut h = tape.leaf(Tensor::zeros(vec![h_size]))?;
    let mut c = tape.leaf(Tensor::zeros(vec![h_size]))?;
    let mut states = vec![h; t_len];

    let order: Vec<usize> = if reversed {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for t in order {
        let x = tape.slice_row(lookup, t)?;
        let from_x = tape.matmul(w_x, x)?;
        let from_h = tape.matmul(w_h, h)?;
        let gates = tape.add(from_x, from_h)?;
        let gates = tape.add(gates, b)?;

        // Gate layout: [input, forget, cell, output].
        let i_gate = tape.slice(gates, 0, h_size)?;
        let i_gate = tape.sigmoid(i_gate)?;
        let f_gate = tape.slice(gates, h_size, h_size)?;
        let f_gate = tape.sigmoid(f_gate)?;
        let g_gate = tape.slice(gates, 2 * h_size, h_size)?;
        let g_gate = tape.tanh(g_gate)?;
        let o_gate = tape.slice(gates, 3 * h_size, h_size)?;
        let o_gate = tape.sigmoid(o_gate)?;

        let keep = tape.hadamard(f_gate, c)?;
        let write = tape.hadamard(i_gate, g_gate)?;
        c = tape.add(keep, write)?;
        let c_act = tape.tanh(c)?;
        h = tape.hadamard(o_gate, c_act)?;
        states[t] = h;
    }
    Ok(states)
}
