//! LSTM cell with an exact backward pass.
//!
//! Gate pre-activations are laid out `[input | forget | candidate | output]`,
//! each `hidden` wide:
//!
//! - `i = σ(a_i)`, `f = σ(a_f)`, `g = tanh(a_g)`, `o = σ(a_o)`
//! - `c = f ⊙ c_prev + i ⊙ g`
//! - `h = o ⊙ tanh(c)`

use super::loss::sigmoid;
use super::ops::{add_assign, matmat_acc, matmat_t_acc, matvec_acc, matvec_t_acc, outer_acc, outer_many_acc, transpose};
use super::tensor::{HasParams, Initializer, Parameter, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `[input × 4·hidden]`
    pub w_input: Parameter,
    /// `[hidden × 4·hidden]`
    pub w_hidden: Parameter,
    /// `[4·hidden]`
    pub bias: Parameter,
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Post-activation gates `[i | f | g | o]`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmCell {
    pub fn new(name: &str, input: usize, hidden: usize, init: &mut Initializer) -> Self {
        LstmCell {
            w_input: init.uniform(format!("{name}.w_input"), &[input, 4 * hidden]),
            w_hidden: init.uniform(format!("{name}.w_hidden"), &[hidden, 4 * hidden]),
            bias: init.uniform(format!("{name}.bias"), &[4 * hidden]),
        }
    }

    fn w_hidden_t(&self) -> Vec<f64> {
        let hs = self.hidden_size();
        transpose(self.w_hidden.value.data(), hs, 4 * hs)
    }

    pub fn input_size(&self) -> usize {
        self.w_input.value.shape()[0]
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hidden.value.shape()[0]
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<LstmStep> {
        let hs = self.hidden_size();
        if x.len() != self.input_size() {
            return Err(Error::shape("lstm_cell", format!("x of length {}", self.input_size()), x.len()));
        }
        if h_prev.len() != hs || c_prev.len() != hs {
            return Err(Error::shape(
                "lstm_cell",
                format!("state of length {hs}"),
                format!("{}/{}", h_prev.len(), c_prev.len()),
            ));
        }

        let mut gates = self.bias.value.data().to_vec();
        matvec_acc(x, self.w_input.value.data(), &mut gates);
        Ok(self.finish_step(x, h_prev, c_prev, gates))
    }

    /// Adds the recurrent term to `gates` (bias and input term already in)
    /// and applies the cell update.
    fn finish_step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64], mut gates: Vec<f64>) -> LstmStep {
        let hs = self.hidden_size();
        matvec_acc(h_prev, self.w_hidden.value.data(), &mut gates);
        for (k, a) in gates.iter_mut().enumerate() {
            *a = if (2 * hs..3 * hs).contains(&k) { a.tanh() } else { sigmoid(*a) };
        }

        let mut c = vec![0.0; hs];
        let mut tanh_c = vec![0.0; hs];
        let mut h = vec![0.0; hs];
        for j in 0..hs {
            let (i, f, g, o) = (gates[j], gates[hs + j], gates[2 * hs + j], gates[3 * hs + j]);
            c[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
        LstmStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            c,
            tanh_c,
            h,
        }
    }

    /// Backward through one step given `dL/dh` and `dL/dc` at its outputs.
    /// Accumulates parameter gradients; returns `(dx, dh_prev, dc_prev)`.
    pub fn step_backward(&mut self, step: &LstmStep, dh: &[f64], dc: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let wt = self.w_hidden_t();
        let (da, dh_prev, dc_prev) = self.recurrent_backward(step, dh, dc, &wt);
        outer_acc(&step.x, &da, self.w_input.grad.data_mut());
        let mut dx = vec![0.0; step.x.len()];
        matvec_t_acc(self.w_input.value.data(), &da, &mut dx);
        (dx, dh_prev, dc_prev)
    }

    /// Backward through the gates and the recurrent weights; returns
    /// `(dL/da, dh_prev, dc_prev)`. The input-weight terms are left to the
    /// caller.
    fn recurrent_backward(
        &mut self,
        step: &LstmStep,
        dh: &[f64],
        dc: &[f64],
        w_hidden_t: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hs = self.hidden_size();
        let g = &step.gates;
        let mut da = vec![0.0; 4 * hs];
        let mut dc_prev = vec![0.0; hs];
        for j in 0..hs {
            let (i, f, cand, o) = (g[j], g[hs + j], g[2 * hs + j], g[3 * hs + j]);
            let tc = step.tanh_c[j];
            let dc_total = dc[j] + dh[j] * o * (1.0 - tc * tc);
            da[j] = dc_total * cand * i * (1.0 - i);
            da[hs + j] = dc_total * step.c_prev[j] * f * (1.0 - f);
            da[2 * hs + j] = dc_total * i * (1.0 - cand * cand);
            da[3 * hs + j] = dh[j] * tc * o * (1.0 - o);
            dc_prev[j] = dc_total * f;
        }

        outer_acc(&step.h_prev, &da, self.w_hidden.grad.data_mut());
        add_assign(self.bias.grad.data_mut(), &da);
        let mut dh_prev = vec![0.0; hs];
        matvec_acc(&da, w_hidden_t, &mut dh_prev);
        (da, dh_prev, dc_prev)
    }

    /// Runs the cell over `xs` from a zero state.
    pub fn run<'a, I>(&self, xs: I) -> Result<Vec<LstmStep>>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let hs = self.hidden_size();
        let xs: Vec<&[f64]> = xs.into_iter().collect();
        if let Some(bad) = xs.iter().find(|x| x.len() != self.input_size()) {
            return Err(Error::shape("lstm_cell", format!("x of length {}", self.input_size()), bad.len()));
        }
        // input terms for the whole sequence at once, then the recurrence
        let mut pre = vec![self.bias.value.data().to_vec(); xs.len()];
        matmat_acc(&xs, self.w_input.value.data(), &mut pre);
        let zero = vec![0.0; hs];
        let mut steps: Vec<LstmStep> = Vec::with_capacity(xs.len());
        for (x, gates) in xs.iter().zip(pre) {
            let step = match steps.last() {
                Some(prev) => self.finish_step(x, &prev.h, &prev.c, gates),
                None => self.finish_step(x, &zero, &zero, gates),
            };
            steps.push(step);
        }
        Ok(steps)
    }

    /// Backpropagation through time for [`LstmCell::run`]. `dhs[t]` is the
    /// loss gradient w.r.t. the output `h` of step `t`. Returns `dL/dx_t`.
    pub fn run_backward(&mut self, steps: &[LstmStep], dhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let hs = self.hidden_size();
        let wt = self.w_hidden_t();
        let mut das = vec![Vec::new(); steps.len()];
        let mut dh_next = vec![0.0; hs];
        let mut dc_next = vec![0.0; hs];
        for t in (0..steps.len()).rev() {
            let mut dh = dhs[t].clone();
            add_assign(&mut dh, &dh_next);
            let (da, dh_prev, dc_prev) = self.recurrent_backward(&steps[t], &dh, &dc_next, &wt);
            das[t] = da;
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        let xs: Vec<&[f64]> = steps.iter().map(|s| s.x.as_slice()).collect();
        outer_many_acc(&xs, &das, self.w_input.grad.data_mut());
        let mut dxs = vec![vec![0.0; self.input_size()]; steps.len()];
        matmat_t_acc(self.w_input.value.data(), &das, &mut dxs);
        dxs
    }
}

impl HasParams for LstmCell {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.w_input, &self.w_hidden, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }
}

/// One LSTM step on tensors: returns `(h, c)`.
pub fn lstm_cell(x: &Tensor, h_prev: &Tensor, c_prev: &Tensor, cell: &LstmCell) -> Result<(Tensor, Tensor)> {
    let step = cell.step(x.data(), h_prev.data(), c_prev.data())?;
    Ok((Tensor::vector(step.h), Tensor::vector(step.c)))
}
