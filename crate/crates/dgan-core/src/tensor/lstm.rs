//! LSTM cell composed from tape primitives, so its backward pass needs no
//! dedicated rule.

use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// Cell parameters. Gates are packed along the first dimension in the order
/// input, forget, cell-candidate, output: `w_ih` is `[4u, d]`, `w_hh` is
/// `[4u, u]`, `bias` is `[4u]`.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

impl LstmParams {
    /// Hidden width `u`.
    pub fn units(&self) -> usize {
        self.w_hh.shape()[1]
    }

    /// Input width `d`.
    pub fn input_dim(&self) -> usize {
        self.w_ih.shape()[1]
    }

    /// Zero state of the right width.
    pub fn zero_state(&self) -> LstmState {
        LstmState {
            h: Tensor::zeros(&[self.units()]),
            c: Tensor::zeros(&[self.units()]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

/// One LSTM step: standard gates (i, f, o sigmoid; g tanh),
/// `c' = f*c + i*g`, `h' = o*tanh(c')`.
pub fn lstm_cell(
    tape: &mut Tape,
    params: &LstmParams,
    x: &Tensor,
    state: &LstmState,
) -> Result<LstmState> {
    let u = params.units();
    let d = params.input_dim();
    if params.w_ih.shape() != [4 * u, d]
        || params.w_hh.shape() != [4 * u, u]
        || params.bias.shape() != [4 * u]
    {
        return Err(Error::shape(
            "lstm_cell",
            format!(
                "inconsistent params: w_ih {:?}, w_hh {:?}, bias {:?}",
                params.w_ih.shape(),
                params.w_hh.shape(),
                params.bias.shape()
            ),
        ));
    }
    if x.shape() != [d] || state.h.shape() != [u] || state.c.shape() != [u] {
        return Err(Error::shape(
            "lstm_cell",
            format!(
                "expected x [{d}], h/c [{u}]; got x {:?}, h {:?}, c {:?}",
                x.shape(),
                state.h.shape(),
                state.c.shape()
            ),
        ));
    }
    let zx = tape.matvec(&params.w_ih, x)?;
    let zh = tape.matvec(&params.w_hh, &state.h)?;
    let z = tape.add(&zx, &zh)?;
    let z = tape.add(&z, &params.bias)?;
    let gi = tape.slice_last(&z, 0, u)?;
    let gf = tape.slice_last(&z, u, u)?;
    let gg = tape.slice_last(&z, 2 * u, u)?;
    let go = tape.slice_last(&z, 3 * u, u)?;
    let i = tape.sigmoid(&gi)?;
    let f = tape.sigmoid(&gf)?;
    let g = tape.tanh(&gg)?;
    let o = tape.sigmoid(&go)?;
    let fc = tape.mul(&f, &state.c)?;
    let ig = tape.mul(&i, &g)?;
    let c = tape.add(&fc, &ig)?;
    let tc = tape.tanh(&c)?;
    let h = tape.mul(&o, &tc)?;
    Ok(LstmState { h, c })
}
