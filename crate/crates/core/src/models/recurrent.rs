//! LSTM (gate order i, f, g, o) and vanilla tanh RNN.

use super::{ModelConfig, ParamSpec, Readout};
use crate::error::Result;
use crate::numeric::{Graph, Tensor, Var};

pub(super) fn declare(c: &ModelConfig, gates: usize) -> Vec<ParamSpec> {
    let h = c.model_dim;
    vec![
        ParamSpec::weight("cell.input_weight", c.input_dim, gates * h),
        ParamSpec::weight("cell.hidden_weight", h, gates * h),
        ParamSpec::bias("cell.bias", gates * h),
        ParamSpec::weight("head.weight", h, c.num_classes),
        ParamSpec::bias("head.bias", c.num_classes),
    ]
}

fn readout(c: &ModelConfig, g: &mut Graph, p: &[Var], states: Vec<Var>) -> Result<Var> {
    let summary = match c.readout {
        Readout::Final => *states.last().expect("nonempty sequence"),
        Readout::Mean => {
            let n = states.len();
            let mut acc = states[0];
            for &s in &states[1..] {
                acc = g.add(acc, s)?;
            }
            g.scale(acc, 1.0 / n as f64)?
        }
    };
    Ok(g.linear(summary, p[3], p[4])?)
}

pub(super) fn lstm_forward(c: &ModelConfig, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
    let hd = c.model_dim;
    let t = g.value(x).rows();
    let xw = g.matmul(x, p[0])?;
    let mut h = g.constant(Tensor::zeros(&[1, hd]));
    let mut cell = g.constant(Tensor::zeros(&[1, hd]));
    let mut states = Vec::with_capacity(t);
    for step in 0..t {
        let xt = g.slice(xw, 0, step, step + 1)?;
        let hw = g.matmul(h, p[1])?;
        let z = g.add(xt, hw)?;
        let z = g.add(z, p[2])?;
        let zi = g.slice(z, 1, 0, hd)?;
        let zf = g.slice(z, 1, hd, 2 * hd)?;
        let zg = g.slice(z, 1, 2 * hd, 3 * hd)?;
        let zo = g.slice(z, 1, 3 * hd, 4 * hd)?;
        let i = g.sigmoid(zi)?;
        let f = g.sigmoid(zf)?;
        let gg = g.tanh(zg)?;
        let o = g.sigmoid(zo)?;
        let keep = g.mul(f, cell)?;
        let write = g.mul(i, gg)?;
        cell = g.add(keep, write)?;
        let ct = g.tanh(cell)?;
        h = g.mul(o, ct)?;
        states.push(h);
    }
    readout(c, g, p, states)
}

pub(super) fn rnn_forward(c: &ModelConfig, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
    let t = g.value(x).rows();
    let xw = g.matmul(x, p[0])?;
    let mut h = g.constant(Tensor::zeros(&[1, c.model_dim]));
    let mut states = Vec::with_capacity(t);
    for step in 0..t {
        let xt = g.slice(xw, 0, step, step + 1)?;
        let hw = g.matmul(h, p[1])?;
        let z = g.add(xt, hw)?;
        let z = g.add(z, p[2])?;
        h = g.tanh(z)?;
        states.push(h);
    }
    readout(c, g, p, states)
}
