//! Central finite-difference checks of every layer's backward pass in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    Activation, BatchNorm, BiLGNet, BiLGNetConfig, BiRnn, CellKind, Context, Dense, Dropout, Layer,
    Mode, Rnn, Tensor, Upstream,
};
use crate::error::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so that gradients that are
/// zero up to rounding do not count as mismatches.
pub const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Compares `analytic` with central differences of `loss`. `set(i, v)`
/// stores `v` into the i-th perturbed value and returns the previous one.
fn compare(
    analytic: &[f64],
    len: usize,
    mut set: impl FnMut(usize, f64) -> f64,
    mut loss: impl FnMut() -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..len {
        let v = set(i, f64::NAN);
        set(i, v + STEP);
        let up = loss();
        set(i, v - STEP);
        let down = loss();
        set(i, v);
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// Checks a layer's input and parameter gradients under the loss
/// `sum(layer(x) ⊙ r)` for a random `r`.
pub fn check_layer(
    name: &str,
    layer: &Layer<f64>,
    x: &Tensor<f64>,
    mode: Mode,
    seed: u64,
) -> Result<CheckResult> {
    let run = |layer: &Layer<f64>, x: &Tensor<f64>| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ctx = match mode {
            Mode::Train => Context::train(&mut rng),
            Mode::Infer => Context::infer(),
        };
        layer.forward(x, &mut ctx)
    };
    let (y, cache) = run(layer, x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = random_tensor(&mut rng, y.shape().to_vec());
    let (dx, grads) = layer.backward(&cache, &r)?;

    let mut layer = layer.clone();
    let mut x = x.clone();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (p, g) in grads.iter().enumerate() {
        let len = g.len();
        let cell = std::cell::RefCell::new(&mut layer);
        let e = compare(
            g,
            len,
            |i, v| {
                let mut l = cell.borrow_mut();
                let mut params = l.params_mut();
                let old = params[p][i];
                params[p][i] = v;
                old
            },
            || weighted_sum(&run(&cell.borrow(), &x).unwrap().0, &r),
        );
        worst = worst.max(e);
        checked += len;
    }
    let len = x.data().len();
    let cell = std::cell::RefCell::new(&mut x);
    let e = compare(
        dx.data(),
        len,
        |i, v| {
            let mut t = cell.borrow_mut();
            let old = t.data()[i];
            t.data_mut()[i] = v;
            old
        },
        || weighted_sum(&run(&layer, &cell.borrow()).unwrap().0, &r),
    );
    worst = worst.max(e);
    checked += len;
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_error: worst,
        checked,
    })
}

/// Checks one unidirectional cell (forward or reversed) under
/// `sum(h ⊙ r)` over all hidden states.
pub fn check_cell(
    name: &str,
    cell: &Rnn<f64>,
    x: &Tensor<f64>,
    reverse: bool,
    seed: u64,
) -> CheckResult {
    let (b, t, d) = (x.batch(), x.time(), x.features());
    let h = cell.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random_tensor(&mut rng, vec![b, t, h]);
    let loss = |cell: &Rnn<f64>, x: &Tensor<f64>| -> f64 {
        (0..b)
            .map(|i| {
                let c = cell.run(x.sample(i), t, reverse);
                c.hidden_states()
                    .iter()
                    .zip(r.sample(i))
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum()
    };
    let mut grads = [
        vec![0.0; cell.w.len()],
        vec![0.0; cell.u.len()],
        vec![0.0; cell.b.len()],
    ];
    let mut dx = vec![0.0; b * t * d];
    for i in 0..b {
        let c = cell.run(x.sample(i), t, reverse);
        cell.backprop(
            x.sample(i),
            &c,
            r.sample(i),
            reverse,
            &mut grads,
            &mut dx[i * t * d..(i + 1) * t * d],
        );
    }

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut c = cell.clone();
    for (p, g) in grads.iter().enumerate() {
        let cc = std::cell::RefCell::new(&mut c);
        worst = worst.max(compare(
            g,
            g.len(),
            |i, v| {
                let mut c = cc.borrow_mut();
                let arr = match p {
                    0 => &mut c.w,
                    1 => &mut c.u,
                    _ => &mut c.b,
                };
                let old = arr[i];
                arr[i] = v;
                old
            },
            || loss(&cc.borrow(), x),
        ));
        checked += g.len();
    }
    let mut xm = x.clone();
    let cx = std::cell::RefCell::new(&mut xm);
    worst = worst.max(compare(
        &dx,
        dx.len(),
        |i, v| {
            let mut t = cx.borrow_mut();
            let old = t.data()[i];
            t.data_mut()[i] = v;
            old
        },
        || loss(cell, &cx.borrow()),
    ));
    checked += dx.len();
    CheckResult {
        name: name.to_string(),
        max_rel_error: worst,
        checked,
    }
}

/// Softmax output layer with mean cross-entropy, differentiated through the
/// fused (probs − onehot) path; also checks that path elementwise against
/// the closed form.
pub fn check_softmax_ce(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n) = (rng.random_range(1..=3), rng.random_range(1..=6));
    let mut dense = Dense::<f64>::init(n, 7, Activation::Softmax, &mut rng);
    dense
        .b
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-0.5..0.5));
    let x = random_tensor(&mut rng, vec![b, n]);
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..7)).collect();

    let loss = |d: &Dense<f64>, x: &Tensor<f64>| -> f64 {
        let (p, _) = d.forward(x).unwrap();
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -p.data()[i * 7 + l].max(1e-12).ln())
            .sum::<f64>()
            / b as f64
    };
    let (p, cache) = dense.forward(&x)?;
    let mut dz = p.data().to_vec();
    for (i, &l) in labels.iter().enumerate() {
        dz[i * 7 + l] -= 1.0;
    }
    dz.iter_mut().for_each(|v| *v /= b as f64);

    // Logit gradient against finite differences of the loss in the logits.
    let mut worst: f64 = 0.0;
    let mut logits: Vec<f64> = {
        let lin = Dense {
            activation: Activation::None,
            ..dense.clone()
        };
        lin.forward(&x)?.0.into_data()
    };
    let ce = |z: &[f64]| -> f64 {
        let mut p = z.to_vec();
        super::softmax_rows(&mut p, 7);
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -p[i * 7 + l].ln())
            .sum::<f64>()
            / b as f64
    };
    let cl = std::cell::RefCell::new(&mut logits);
    worst = worst.max(compare(
        &dz,
        dz.len(),
        |i, v| {
            let mut z = cl.borrow_mut();
            let old = z[i];
            z[i] = v;
            old
        },
        || ce(&cl.borrow()),
    ));

    let (dx, grads) = dense.backward_linear(&cache, &dz)?;
    let mut checked = dz.len();
    let cd = std::cell::RefCell::new(&mut dense);
    for (p, g) in grads.iter().enumerate() {
        worst = worst.max(compare(
            g,
            g.len(),
            |i, v| {
                let mut d = cd.borrow_mut();
                let arr = if p == 0 { &mut d.w } else { &mut d.b };
                let old = arr[i];
                arr[i] = v;
                old
            },
            || loss(&cd.borrow(), &x),
        ));
        checked += g.len();
    }
    let mut xm = x.clone();
    let cx = std::cell::RefCell::new(&mut xm);
    let dense = cd.into_inner();
    worst = worst.max(compare(
        dx.data(),
        dx.data().len(),
        |i, v| {
            let mut t = cx.borrow_mut();
            let old = t.data()[i];
            t.data_mut()[i] = v;
            old
        },
        || loss(dense, &cx.borrow()),
    ));
    checked += dx.data().len();
    Ok(CheckResult {
        name: "softmax+cross-entropy".into(),
        max_rel_error: worst,
        checked,
    })
}

/// Whole small network in training mode (batch statistics, fixed dropout
/// mask) under mean cross-entropy.
pub fn check_model(seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, t, d) = (
        rng.random_range(2..=3),
        rng.random_range(2..=5),
        rng.random_range(1..=4),
    );
    let model = BiLGNet::<f64>::build(&BiLGNetConfig::small(d), seed)?;
    let x = random_tensor(&mut rng, vec![b, t, d]);
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..7)).collect();
    let loss = |m: &BiLGNet<f64>, x: &Tensor<f64>| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tape = m.forward(x, &mut Context::train(&mut rng)).unwrap();
        let p = tape.output();
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -p.data()[i * 7 + l].ln())
            .sum::<f64>()
            / b as f64
    };
    let mut drng = ChaCha8Rng::seed_from_u64(seed);
    let tape = model.forward(&x, &mut Context::train(&mut drng))?;
    let grads = model.backward(&tape, Upstream::Labels(&labels))?;

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut m = model.clone();
    let cm = std::cell::RefCell::new(&mut m);
    for (p, g) in grads.params.iter().enumerate() {
        worst = worst.max(compare(
            g,
            g.len(),
            |i, v| {
                let mut m = cm.borrow_mut();
                let mut params = m.params_mut();
                let old = params[p][i];
                params[p][i] = v;
                old
            },
            || loss(&cm.borrow(), &x),
        ));
        checked += g.len();
    }
    let mut xm = x.clone();
    let cx = std::cell::RefCell::new(&mut xm);
    worst = worst.max(compare(
        grads.input.data(),
        x.data().len(),
        |i, v| {
            let mut t = cx.borrow_mut();
            let old = t.data()[i];
            t.data_mut()[i] = v;
            old
        },
        || loss(&model, &cx.borrow()),
    ));
    checked += x.data().len();
    Ok(CheckResult {
        name: "BiLGNet (small, train mode)".into(),
        max_rel_error: worst,
        checked,
    })
}

/// Every layer type on random small shapes (hidden ≤ 8, time ≤ 5,
/// batch ≤ 3) drawn from `seed`.
pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let dims = |rng: &mut ChaCha8Rng| {
        (
            rng.random_range(1..=3usize),
            rng.random_range(1..=5usize),
            rng.random_range(1..=6usize),
            rng.random_range(1..=8usize),
        )
    };

    for (act, name) in [
        (Activation::None, "dense (linear)"),
        (Activation::Relu, "dense (relu)"),
        (Activation::Softmax, "dense (softmax)"),
    ] {
        let (b, _, n, o) = dims(&mut rng);
        let mut dense = Dense::<f64>::init(n, o, act, &mut rng);
        let mut x = random_tensor(&mut rng, vec![b, n]);
        if act == Activation::Relu {
            // Keep every pre-activation away from the kink.
            let lin = Dense {
                activation: Activation::None,
                ..dense.clone()
            };
            let z = lin.forward(&x)?.0;
            for (j, bj) in dense.b.iter_mut().enumerate() {
                let col = z.data().iter().skip(j).step_by(o);
                let nearest =
                    col.fold(f64::INFINITY, |m, v| if v.abs() < m.abs() { *v } else { m });
                if nearest.abs() < 0.05 {
                    *bj += 0.1f64.copysign(nearest);
                }
            }
            x = x.clone();
        }
        out.push(check_layer(
            name,
            &Layer::Dense(dense),
            &x,
            Mode::Train,
            seed,
        )?);
    }

    for (mode, name) in [
        (Mode::Train, "batch norm (train)"),
        (Mode::Infer, "batch norm (infer)"),
    ] {
        let (b, t, f, _) = dims(&mut rng);
        let mut bn = BatchNorm::<f64>::new(f);
        for v in bn.gamma.iter_mut().chain(bn.beta.iter_mut()) {
            *v = rng.random_range(0.5..1.5);
        }
        for v in bn.running_mean.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        for v in bn.running_var.iter_mut() {
            *v = rng.random_range(0.5..2.0);
        }
        bn.initialized = true;
        let x = random_tensor(&mut rng, vec![b.max(2), t, f]);
        out.push(check_layer(name, &Layer::BatchNorm(bn), &x, mode, seed)?);
    }

    let (b, t, f, _) = dims(&mut rng);
    let x = random_tensor(&mut rng, vec![b, t, f]);
    let drop = Layer::Dropout(Dropout::new(0.5)?);
    out.push(check_layer(
        "dropout (inference path)",
        &drop,
        &x,
        Mode::Infer,
        seed,
    )?);
    out.push(check_layer(
        "dropout (fixed mask)",
        &drop,
        &x,
        Mode::Train,
        seed,
    )?);

    for kind in [CellKind::Lstm, CellKind::Gru] {
        for reverse in [false, true] {
            let (b, t, d, h) = dims(&mut rng);
            let cell = Rnn::<f64>::init(kind, d, h, &mut rng);
            let mut cell = cell;
            cell.b
                .iter_mut()
                .for_each(|v| *v += rng.random_range(-0.5..0.5));
            let x = random_tensor(&mut rng, vec![b, t, d]);
            let name = format!("{kind}{}", if reverse { " (reversed)" } else { "" });
            out.push(check_cell(&name, &cell, &x, reverse, seed));
        }
        for seq in [true, false] {
            let (b, t, d, h) = dims(&mut rng);
            let layer = BiRnn::<f64>::init(kind, d, h, seq, &mut rng);
            let x = random_tensor(&mut rng, vec![b, t, d]);
            let name = format!(
                "Bi{kind} ({})",
                if seq { "sequence" } else { "final state" }
            );
            out.push(check_layer(
                &name,
                &Layer::Recurrent(layer),
                &x,
                Mode::Train,
                seed,
            )?);
        }
    }

    out.push(check_softmax_ce(seed)?);
    out.push(check_model(seed)?);
    Ok(out)
}
