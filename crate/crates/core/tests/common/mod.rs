//! Central finite-difference gradient checks shared by the gradient tests
//! and the acceptance suite.

#![allow(dead_code)]

use std::rc::Rc;

use gvit::graph::{gcn_layer, AdjacencyMode, ChainAdjacency, GasGroup, GraphMeta, SensorGraph, SENSOR_CHANNELS};
use gvit::model::{encoder_block, mha, BlockWeights, GViTConfig, GViTModel, MhaWeights, NormPlacement};
use gvit::tensor::{Tape, Tensor, Var};
use gvit::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const TRIALS: usize = 10;

pub type Builder = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// Gradient norms below this are under the resolution of a 1e-5 central
/// difference and are compared absolutely (e.g. the key bias, whose
/// gradient softmax cancels).
pub const NORM_FLOOR: f64 = 1e-5;

/// `‖a − b‖ / max(‖a‖, ‖b‖, NORM_FLOOR)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(NORM_FLOOR)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    // stay clear of the ReLU kink at zero
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() < 0.05 { v + 0.1f64.copysign(v) } else { v }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces a non-scalar output to a scalar through a fixed random weighting.
fn scalarize(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var> {
    if tape.value(out).numel() == 1 {
        return Ok(out);
    }
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn evaluate(f: &Builder, inputs: &[Tensor], weights: &Option<Tensor>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let out = match weights {
        Some(w) => scalarize(&mut tape, out, w)?,
        None => out,
    };
    tape.value(out).item()
}

/// Worst norm-wise relative error, per input, between reverse-mode and
/// central finite-difference gradients.
pub fn check_gradients(f: &Builder, inputs: &[Tensor], rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let weights = (tape.value(out).numel() > 1).then(|| random_tensor(rng, tape.value(out).shape()));
    let loss = match &weights {
        Some(w) => scalarize(&mut tape, out, w)?,
        None => out,
    };
    let grads = tape.backward(loss)?;
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(&tape, *v);
        let mut numeric = Vec::with_capacity(analytic.numel());
        for j in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= FD_STEP;
            numeric.push((evaluate(f, &plus, &weights)? - evaluate(f, &minus, &weights)?) / (2.0 * FD_STEP));
        }
        worst = worst.max(relative_error(analytic.data(), &numeric));
    }
    Ok(worst)
}

/// One gradient case: a name, an input-shape generator and the op under test.
pub struct OpCase {
    pub name: &'static str,
    pub shapes: Box<dyn Fn(&mut ChaCha8Rng) -> Vec<Vec<usize>>>,
    pub build: Box<Builder>,
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=6)
}

fn case(
    name: &'static str,
    shapes: impl Fn(&mut ChaCha8Rng) -> Vec<Vec<usize>> + 'static,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
) -> OpCase {
    OpCase {
        name,
        shapes: Box::new(shapes),
        build: Box::new(build),
    }
}

fn propagation(n: usize, mode: AdjacencyMode) -> Rc<gvit::tensor::Tridiagonal> {
    Rc::new(ChainAdjacency::new(n).unwrap().normalize(mode))
}

fn mha_weights(v: &[Var]) -> MhaWeights<Var> {
    MhaWeights {
        w_q: v[1],
        b_q: v[2],
        w_k: v[3],
        b_k: v[4],
        w_v: v[5],
        b_v: v[6],
        w_out: v[7],
        b_out: v[8],
    }
}

fn mha_shapes(t: usize, d: usize) -> Vec<Vec<usize>> {
    let mut s = vec![vec![t, d]];
    for _ in 0..4 {
        s.push(vec![d, d]);
        s.push(vec![d]);
    }
    s
}

fn block_case(name: &'static str, placement: NormPlacement) -> OpCase {
    case(
        name,
        |r| {
            let (t, d, h) = (dim(r), 4, 6);
            let mut s = vec![vec![t, d], vec![d], vec![d]];
            s.extend(mha_shapes(t, d).into_iter().skip(1));
            s.extend([vec![d], vec![d], vec![d, h], vec![h], vec![h, d], vec![d]]);
            s
        },
        move |tape, v| {
            let w = BlockWeights {
                norm1_gain: v[1],
                norm1_bias: v[2],
                attn: MhaWeights {
                    w_q: v[3],
                    b_q: v[4],
                    w_k: v[5],
                    b_k: v[6],
                    w_v: v[7],
                    b_v: v[8],
                    w_out: v[9],
                    b_out: v[10],
                },
                norm2_gain: v[11],
                norm2_bias: v[12],
                mlp_w1: v[13],
                mlp_b1: v[14],
                mlp_w2: v[15],
                mlp_b2: v[16],
            };
            encoder_block(tape, v[0], &w, 2, placement, 1e-5)
        },
    )
}

/// Every differentiable op, plus the composite layers built from them.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        case(
            "matmul",
            |r| {
                let (m, k, n) = (dim(r), dim(r), dim(r));
                vec![vec![m, k], vec![k, n]]
            },
            |t, v| t.matmul(v[0], v[1]),
        ),
        case(
            "matmul_nt",
            |r| {
                let (m, k, n) = (dim(r), dim(r), dim(r));
                vec![vec![m, k], vec![n, k]]
            },
            |t, v| t.matmul_nt(v[0], v[1]),
        ),
        case(
            "add",
            |r| {
                let s = vec![dim(r), dim(r)];
                vec![s.clone(), s]
            },
            |t, v| t.add(v[0], v[1]),
        ),
        case(
            "mul",
            |r| {
                let s = vec![dim(r), dim(r)];
                vec![s.clone(), s]
            },
            |t, v| t.mul(v[0], v[1]),
        ),
        case(
            "add_row",
            |r| {
                let (m, n) = (dim(r), dim(r));
                vec![vec![m, n], vec![n]]
            },
            |t, v| t.add_row(v[0], v[1]),
        ),
        case("scale", |r| vec![vec![dim(r), dim(r)]], |t, v| Ok(t.scale(v[0], -1.7))),
        case("relu", |r| vec![vec![dim(r), dim(r)]], |t, v| Ok(t.relu(v[0]))),
        case("gelu", |r| vec![vec![dim(r), dim(r)]], |t, v| Ok(t.gelu(v[0]))),
        case("softmax_rows", |r| vec![vec![dim(r), dim(r)]], |t, v| t.softmax_rows(v[0])),
        case(
            "layer_norm_rows",
            |r| {
                let (m, n) = (dim(r), r.random_range(2..=6));
                vec![vec![m, n], vec![n], vec![n]]
            },
            |t, v| t.layer_norm_rows(v[0], v[1], v[2], 1e-5),
        ),
        case("sum", |r| vec![vec![dim(r), dim(r)]], |t, v| Ok(t.sum(v[0]))),
        case(
            "concat_cols",
            |r| {
                let m = dim(r);
                vec![vec![m, dim(r)], vec![m, dim(r)], vec![m, dim(r)]]
            },
            |t, v| t.concat_cols(v),
        ),
        case(
            "concat_rows",
            |r| {
                let n = dim(r);
                vec![vec![dim(r), n], vec![dim(r), n]]
            },
            |t, v| t.concat_rows(v),
        ),
        case(
            "slice_cols",
            |r| vec![vec![dim(r), r.random_range(3..=6)]],
            |t, v| t.slice_cols(v[0], 1, 2),
        ),
        case(
            "slice_rows",
            |r| vec![vec![r.random_range(3..=6), dim(r)]],
            |t, v| t.slice_rows(v[0], 1, 2),
        ),
        case(
            "propagate_symmetric",
            |r| vec![vec![dim(r), dim(r)]],
            |t, v| {
                let n = t.value(v[0]).rows();
                t.propagate(propagation(n, AdjacencyMode::Symmetric), v[0])
            },
        ),
        case(
            "propagate_row",
            |r| vec![vec![dim(r), dim(r)]],
            |t, v| {
                let n = t.value(v[0]).rows();
                t.propagate(propagation(n, AdjacencyMode::Row), v[0])
            },
        ),
        case("pool_rows", |r| vec![vec![dim(r), dim(r)]], |t, v| t.pool_rows(v[0], 4)),
        case(
            "rmse",
            |r| {
                let s = vec![dim(r), 2];
                vec![s.clone(), s]
            },
            |t, v| t.rmse(v[0], v[1]),
        ),
        case(
            "gcn_layer",
            |r| {
                let (n, f, o) = (dim(r), dim(r), dim(r));
                vec![vec![n, f], vec![f, o]]
            },
            |t, v| {
                let n = t.value(v[0]).rows();
                gcn_layer(t, v[0], &propagation(n, AdjacencyMode::Symmetric), v[1])
            },
        ),
        case("mha", |r| mha_shapes(dim(r), 6), |t, v| mha(t, v[0], &mha_weights(v), 2)),
        block_case("encoder_block_pre", NormPlacement::Pre),
        block_case("encoder_block_post", NormPlacement::Post),
    ]
}

/// Worst relative error of `case` over [`TRIALS`] random draws.
pub fn run_case(case: &OpCase, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let shapes = (case.shapes)(&mut rng);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
        worst = worst.max(check_gradients(&*case.build, &inputs, &mut rng)?);
    }
    Ok(worst)
}

pub fn reduced_config() -> GViTConfig {
    GViTConfig {
        gcn_layers: 2,
        gcn_filters: 6,
        d_model: 12,
        pooled_nodes: 8,
        encoder_blocks: 2,
        attention_heads: 2,
        mlp_hidden: 24,
        seed: 21,
        ..GViTConfig::default()
    }
}

pub fn random_graph(n: usize, seed: u64) -> SensorGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SensorGraph::new(
        random_tensor(&mut rng, &[n, SENSOR_CHANNELS]),
        [0.4, 0.7],
        [213.3, 14.0],
        GasGroup::CoEthylene,
        GraphMeta {
            source: "random".into(),
            start_row: 0,
            end_row: n,
        },
    )
    .unwrap()
}

fn model_loss(model: &GViTModel, g: &SensorGraph, track: bool) -> Result<(Tape, Vec<Var>, Var)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, track);
    let out = model.forward_on(&mut tape, &bound, g)?;
    let target = tape.constant(Tensor::matrix(1, 2, g.targets().to_vec())?);
    let loss = tape.rmse(out, target)?;
    Ok((tape, bound.vars().to_vec(), loss))
}

/// Gradient check of the RMSE loss through the whole model with respect to
/// every parameter, pooled into one norm-wise relative error.
pub fn check_model_gradients(model: &GViTModel, g: &SensorGraph) -> Result<f64> {
    let (tape, vars, loss) = model_loss(model, g, true)?;
    let grads = tape.backward(loss)?;
    let mut analytic = Vec::new();
    for v in &vars {
        analytic.extend_from_slice(grads.get_or_zeros(&tape, *v).data());
    }
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut probe = model.clone();
    for p in 0..model.params().len() {
        for j in 0..model.params()[p].numel() {
            let orig = model.params()[p].data()[j];
            probe.params_mut()[p].data_mut()[j] = orig + FD_STEP;
            let (t, _, l) = model_loss(&probe, g, false)?;
            let up = t.value(l).item()?;
            probe.params_mut()[p].data_mut()[j] = orig - FD_STEP;
            let (t, _, l) = model_loss(&probe, g, false)?;
            let down = t.value(l).item()?;
            probe.params_mut()[p].data_mut()[j] = orig;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(relative_error(&analytic, &numeric))
}
