use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::init::{glorot_uniform, orthogonal};
use super::{axpy, dot, sigmoid, Real, Tensor};
use crate::error::{Error, Result};

/// Samples per work unit; gradients are summed chunk by chunk in index
/// order, so results do not depend on the thread count.
const CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    /// Gate blocks ordered input, forget, candidate, output.
    Lstm,
    /// Gate blocks ordered update, reset, candidate.
    Gru,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Lstm => "LSTM",
            CellKind::Gru => "GRU",
        })
    }
}

/// One direction of a recurrent layer. `w` is `input_dim × G·hidden`, `u` is
/// `hidden × G·hidden`, `b` is `G·hidden`, all row-major with gate blocks
/// side by side along the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Rnn<T> {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub w: Vec<T>,
    pub u: Vec<T>,
    pub b: Vec<T>,
}

/// Per-sequence forward values. Everything is stored in processing order.
#[derive(Debug, Clone)]
pub struct RnnCache<T> {
    /// Activated gates per step.
    gates: Vec<T>,
    /// LSTM cell state and its tanh; empty for GRU.
    c: Vec<T>,
    tc: Vec<T>,
    h: Vec<T>,
}

impl<T> RnnCache<T> {
    pub fn hidden_states(&self) -> &[T] {
        &self.h
    }
}

impl<T: Real> Rnn<T> {
    pub fn zeros(kind: CellKind, input_dim: usize, hidden: usize) -> Self {
        let g = kind.gates() * hidden;
        Self {
            kind,
            input_dim,
            hidden,
            w: vec![T::zero(); input_dim * g],
            u: vec![T::zero(); hidden * g],
            b: vec![T::zero(); g],
        }
    }

    /// Glorot input kernel, orthogonal recurrent kernel, zero bias except
    /// a forget-gate bias of one for LSTM.
    pub fn init(kind: CellKind, input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let g = kind.gates() * hidden;
        let cast = |v: Vec<f64>| v.into_iter().map(T::lit).collect::<Vec<T>>();
        let w = cast(glorot_uniform(rng, input_dim, g));
        let u = cast(orthogonal(rng, hidden, g));
        let mut b = vec![T::zero(); g];
        if kind == CellKind::Lstm {
            b[hidden..2 * hidden].iter_mut().for_each(|v| *v = T::one());
        }
        Self {
            kind,
            input_dim,
            hidden,
            w,
            u,
            b,
        }
    }

    pub fn param_count(&self) -> usize {
        self.kind.gates() * self.hidden * (self.input_dim + self.hidden + 1)
    }

    fn check(&self) -> Result<()> {
        let g = self.kind.gates() * self.hidden;
        if self.w.len() != self.input_dim * g
            || self.u.len() != self.hidden * g
            || self.b.len() != g
        {
            return Err(Error::Shape(format!(
                "{} parameters do not match input {} / hidden {}",
                self.kind, self.input_dim, self.hidden
            )));
        }
        Ok(())
    }

    /// All hidden states for a `[batch, time, input_dim]` input, zero
    /// initial state.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check()?;
        check_input(x, self.input_dim)?;
        let (b, t) = (x.batch(), x.time());
        let mut out = Vec::with_capacity(b * t * self.hidden);
        for i in 0..b {
            out.extend(self.run(x.sample(i), t, false).h);
        }
        Tensor::new(vec![b, t, self.hidden], out)
    }

    /// Runs one sequence (`steps × input_dim`, time order). With `reverse`
    /// the steps are taken from the last frame to the first.
    pub fn run(&self, x: &[T], steps: usize, reverse: bool) -> RnnCache<T> {
        let (d, h) = (self.input_dim, self.hidden);
        let g = self.kind.gates() * h;
        let mut gates = vec![T::zero(); steps * g];
        for s in 0..steps {
            let t = if reverse { steps - 1 - s } else { s };
            let row = &mut gates[s * g..(s + 1) * g];
            row.copy_from_slice(&self.b);
            for (k, &xk) in x[t * d..(t + 1) * d].iter().enumerate() {
                axpy(xk, &self.w[k * g..(k + 1) * g], row);
            }
        }

        let mut hs = vec![T::zero(); steps * h];
        let mut prev = vec![T::zero(); h];
        let one = T::one();
        match self.kind {
            CellKind::Lstm => {
                let mut cs = vec![T::zero(); steps * h];
                let mut tcs = vec![T::zero(); steps * h];
                let mut c_prev = vec![T::zero(); h];
                for s in 0..steps {
                    let a = &mut gates[s * g..(s + 1) * g];
                    for (k, &hk) in prev.iter().enumerate() {
                        axpy(hk, &self.u[k * g..(k + 1) * g], a);
                    }
                    for j in 0..h {
                        let i = sigmoid(a[j]);
                        let f = sigmoid(a[h + j]);
                        let gg = a[2 * h + j].tanh();
                        let o = sigmoid(a[3 * h + j]);
                        a[j] = i;
                        a[h + j] = f;
                        a[2 * h + j] = gg;
                        a[3 * h + j] = o;
                        let c = f * c_prev[j] + i * gg;
                        let tc = c.tanh();
                        cs[s * h + j] = c;
                        tcs[s * h + j] = tc;
                        hs[s * h + j] = o * tc;
                    }
                    prev.copy_from_slice(&hs[s * h..(s + 1) * h]);
                    c_prev.copy_from_slice(&cs[s * h..(s + 1) * h]);
                }
                RnnCache {
                    gates,
                    c: cs,
                    tc: tcs,
                    h: hs,
                }
            }
            CellKind::Gru => {
                let mut rh = vec![T::zero(); h];
                for s in 0..steps {
                    let a = &mut gates[s * g..(s + 1) * g];
                    for (k, &hk) in prev.iter().enumerate() {
                        axpy(hk, &self.u[k * g..k * g + 2 * h], &mut a[..2 * h]);
                    }
                    for v in &mut a[..2 * h] {
                        *v = sigmoid(*v);
                    }
                    for k in 0..h {
                        rh[k] = a[h + k] * prev[k];
                    }
                    for (k, &r) in rh.iter().enumerate() {
                        axpy(r, &self.u[k * g + 2 * h..(k + 1) * g], &mut a[2 * h..]);
                    }
                    for j in 0..h {
                        let z = a[j];
                        let n = a[2 * h + j].tanh();
                        a[2 * h + j] = n;
                        hs[s * h + j] = (one - z) * n + z * prev[j];
                    }
                    prev.copy_from_slice(&hs[s * h..(s + 1) * h]);
                }
                RnnCache {
                    gates,
                    c: Vec::new(),
                    tc: Vec::new(),
                    h: hs,
                }
            }
        }
    }

    /// Backpropagation through time for one sequence. `dh` holds the
    /// gradient of every emitted hidden state in processing order; parameter
    /// gradients are added to `grads` (w, u, b) and input gradients to `dx`
    /// (time order).
    pub fn backprop(
        &self,
        x: &[T],
        cache: &RnnCache<T>,
        dh: &[T],
        reverse: bool,
        grads: &mut [Vec<T>; 3],
        dx: &mut [T],
    ) {
        let (d, h) = (self.input_dim, self.hidden);
        let g = self.kind.gates() * h;
        let steps = cache.h.len() / h.max(1);
        let zeros = vec![T::zero(); h];
        let one = T::one();
        let [gw, gu, gb] = grads;
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];
        let mut da = vec![T::zero(); g];
        let mut drh = vec![T::zero(); h];
        let mut dhp = vec![T::zero(); h];

        for s in (0..steps).rev() {
            let t = if reverse { steps - 1 - s } else { s };
            let a = &cache.gates[s * g..(s + 1) * g];
            let h_prev = if s > 0 {
                &cache.h[(s - 1) * h..s * h]
            } else {
                &zeros[..]
            };
            match self.kind {
                CellKind::Lstm => {
                    let c_prev = if s > 0 {
                        &cache.c[(s - 1) * h..s * h]
                    } else {
                        &zeros[..]
                    };
                    for j in 0..h {
                        let (i, f, gg, o) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                        let tc = cache.tc[s * h + j];
                        let dhj = dh[s * h + j] + dh_next[j];
                        let dc = dc_next[j] + dhj * o * (one - tc * tc);
                        da[j] = dc * gg * i * (one - i);
                        da[h + j] = dc * c_prev[j] * f * (one - f);
                        da[2 * h + j] = dc * i * (one - gg * gg);
                        da[3 * h + j] = dhj * tc * o * (one - o);
                        dc_next[j] = dc * f;
                    }
                    for k in 0..h {
                        axpy(h_prev[k], &da, &mut gu[k * g..(k + 1) * g]);
                        dh_next[k] = dot(&self.u[k * g..(k + 1) * g], &da);
                    }
                }
                CellKind::Gru => {
                    for j in 0..h {
                        let (z, n) = (a[j], a[2 * h + j]);
                        let dhj = dh[s * h + j] + dh_next[j];
                        da[2 * h + j] = dhj * (one - z) * (one - n * n);
                        da[j] = dhj * (h_prev[j] - n) * z * (one - z);
                        dhp[j] = dhj * z;
                    }
                    for k in 0..h {
                        drh[k] = dot(&self.u[k * g + 2 * h..(k + 1) * g], &da[2 * h..]);
                    }
                    for k in 0..h {
                        let r = a[h + k];
                        da[h + k] = drh[k] * h_prev[k] * r * (one - r);
                        dhp[k] += drh[k] * r;
                    }
                    for k in 0..h {
                        let r = a[h + k];
                        axpy(
                            r * h_prev[k],
                            &da[2 * h..],
                            &mut gu[k * g + 2 * h..(k + 1) * g],
                        );
                        axpy(h_prev[k], &da[..2 * h], &mut gu[k * g..k * g + 2 * h]);
                        dhp[k] += dot(&self.u[k * g..k * g + 2 * h], &da[..2 * h]);
                    }
                    dh_next.copy_from_slice(&dhp);
                }
            }
            axpy(one, &da, gb);
            for k in 0..d {
                axpy(x[t * d + k], &da, &mut gw[k * g..(k + 1) * g]);
                dx[t * d + k] += dot(&self.w[k * g..(k + 1) * g], &da);
            }
        }
    }

    fn zero_grads(&self) -> [Vec<T>; 3] {
        [
            vec![T::zero(); self.w.len()],
            vec![T::zero(); self.u.len()],
            vec![T::zero(); self.b.len()],
        ]
    }
}

fn check_input<T: Real>(x: &Tensor<T>, d: usize) -> Result<()> {
    if !x.is_sequence() || x.features() != d {
        return Err(Error::Shape(format!(
            "recurrent layer expects [batch, time, {d}], got {:?}",
            x.shape()
        )));
    }
    if x.time() == 0 {
        return Err(Error::Shape("empty sequence".into()));
    }
    Ok(())
}

/// Forward and backward cells over the same input; outputs are concatenated
/// `[forward ; backward]` per time step, with the backward direction's
/// states re-aligned to input time.
#[derive(Debug, Clone, PartialEq)]
pub struct BiRnn<T> {
    pub fwd: Rnn<T>,
    pub bwd: Rnn<T>,
    /// Emit every step, or only the final state of each direction.
    pub return_sequences: bool,
}

#[derive(Debug, Clone)]
pub struct BiRnnCache<T> {
    x: Tensor<T>,
    samples: Vec<(RnnCache<T>, RnnCache<T>)>,
}

impl<T: Real> BiRnn<T> {
    pub fn init(
        kind: CellKind,
        input_dim: usize,
        hidden: usize,
        return_sequences: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fwd = Rnn::init(kind, input_dim, hidden, rng);
        let bwd = Rnn::init(kind, input_dim, hidden, rng);
        Self {
            fwd,
            bwd,
            return_sequences,
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn param_count(&self) -> usize {
        self.fwd.param_count() + self.bwd.param_count()
    }

    pub fn params(&self) -> Vec<&[T]> {
        vec![
            &self.fwd.w,
            &self.fwd.u,
            &self.fwd.b,
            &self.bwd.w,
            &self.bwd.u,
            &self.bwd.b,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            &mut self.fwd.w,
            &mut self.fwd.u,
            &mut self.fwd.b,
            &mut self.bwd.w,
            &mut self.bwd.u,
            &mut self.bwd.b,
        ]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BiRnnCache<T>)> {
        self.fwd.check()?;
        self.bwd.check()?;
        if self.fwd.input_dim != self.bwd.input_dim || self.fwd.hidden != self.bwd.hidden {
            return Err(Error::Shape(
                "bidirectional halves disagree in shape".into(),
            ));
        }
        check_input(x, self.fwd.input_dim)?;
        let (b, t, h) = (x.batch(), x.time(), self.fwd.hidden);
        let samples: Vec<(RnnCache<T>, RnnCache<T>)> = (0..b)
            .into_par_iter()
            .map(|i| {
                let xi = x.sample(i);
                (self.fwd.run(xi, t, false), self.bwd.run(xi, t, true))
            })
            .collect();

        let y = if self.return_sequences {
            let mut out = vec![T::zero(); b * t * 2 * h];
            for (i, (f, r)) in samples.iter().enumerate() {
                for s in 0..t {
                    let row = &mut out[(i * t + s) * 2 * h..(i * t + s + 1) * 2 * h];
                    row[..h].copy_from_slice(&f.h[s * h..(s + 1) * h]);
                    let rs = t - 1 - s;
                    row[h..].copy_from_slice(&r.h[rs * h..(rs + 1) * h]);
                }
            }
            Tensor::new(vec![b, t, 2 * h], out)?
        } else {
            let mut out = Vec::with_capacity(b * 2 * h);
            for (f, r) in &samples {
                out.extend_from_slice(&f.h[(t - 1) * h..]);
                out.extend_from_slice(&r.h[(t - 1) * h..]);
            }
            Tensor::new(vec![b, 2 * h], out)?
        };
        Ok((
            y,
            BiRnnCache {
                x: x.clone(),
                samples,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &BiRnnCache<T>,
        dy: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<Vec<T>>)> {
        let x = &cache.x;
        let (b, t, d, h) = (x.batch(), x.time(), x.features(), self.fwd.hidden);
        let expect = if self.return_sequences {
            vec![b, t, 2 * h]
        } else {
            vec![b, 2 * h]
        };
        if dy.shape() != expect.as_slice() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?}, expected {expect:?}",
                dy.shape()
            )));
        }

        let chunks: Vec<(Vec<T>, [Vec<T>; 3], [Vec<T>; 3])> = (0..b.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(b);
                let mut gf = self.fwd.zero_grads();
                let mut gb = self.bwd.zero_grads();
                let mut dx = vec![T::zero(); (hi - lo) * t * d];
                let mut dhf = vec![T::zero(); t * h];
                let mut dhb = vec![T::zero(); t * h];
                for i in lo..hi {
                    let dyi = dy.sample(i);
                    if self.return_sequences {
                        for s in 0..t {
                            let row = &dyi[s * 2 * h..(s + 1) * 2 * h];
                            dhf[s * h..(s + 1) * h].copy_from_slice(&row[..h]);
                            let rs = t - 1 - s;
                            dhb[rs * h..(rs + 1) * h].copy_from_slice(&row[h..]);
                        }
                    } else {
                        dhf[(t - 1) * h..].copy_from_slice(&dyi[..h]);
                        dhb[(t - 1) * h..].copy_from_slice(&dyi[h..]);
                    }
                    let xi = x.sample(i);
                    let dxi = &mut dx[(i - lo) * t * d..(i - lo + 1) * t * d];
                    let (cf, cb) = &cache.samples[i];
                    self.fwd.backprop(xi, cf, &dhf, false, &mut gf, dxi);
                    self.bwd.backprop(xi, cb, &dhb, true, &mut gb, dxi);
                }
                (dx, gf, gb)
            })
            .collect();

        let mut dx = Vec::with_capacity(b * t * d);
        let mut gf = self.fwd.zero_grads();
        let mut gb = self.bwd.zero_grads();
        for (cdx, cf, cb) in chunks {
            dx.extend(cdx);
            for (acc, part) in gf
                .iter_mut()
                .chain(gb.iter_mut())
                .zip(cf.iter().chain(cb.iter()))
            {
                axpy(T::one(), part, acc);
            }
        }
        let [a, b_, c] = gf;
        let [d_, e, f] = gb;
        Ok((
            Tensor::new(x.shape().to_vec(), dx)?,
            vec![a, b_, c, d_, e, f],
        ))
    }
}
