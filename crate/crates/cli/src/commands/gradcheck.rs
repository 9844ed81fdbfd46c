//! `hnpm gradcheck`: every differentiable operation against the central
//! finite-difference oracle, plus the full training loss.

use clap::Args;

use hnpm_core::loss::{total_loss, LossConfig};
use hnpm_core::model::{encode_batch, init_params, EncoderSpec, ParamSet, StudentTeacher};
use hnpm_core::rng::RngStream;
use hnpm_core::tensor::{finite_diff_grad, max_rel_err, Tape, Tensor, ValueId};
use hnpm_core::{Error, Result};

const TOLERANCE: f64 = 1e-5;
const FD_EPS: f64 = 1e-5;

#[derive(Args)]
pub struct GradcheckArgs {
    /// Check a single operation by name, or `all`.
    #[arg(long, default_value = "all")]
    pub ops: String,
    /// Random trials per operation.
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    /// Perturb the analytic gradients before comparison; the run must
    /// then fail. Sensitivity fixture for the checker itself.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

/// Random values with a margin away from zero (keeps relu and max-abs
/// subgradients off their kinks).
fn away_from_zero(rng: &mut RngStream, n: usize, margin: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let x = rng.uniform(-1.0, 1.0);
            x + margin * x.signum()
        })
        .collect()
}

/// Compare tape gradients against finite differences for one scalar
/// function of `x0`, with every other input held fixed.
fn check<F>(build: F, x0: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, ValueId) -> Result<ValueId>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(&x0.clone().with_trainable(true));
    let loss = build(&mut tape, x)?;
    tape.backward(loss)?;
    let analytic = tape
        .grad(x)
        .ok_or_else(|| Error::contract("gradcheck: input gradient missing"))?
        .to_vec();
    let numeric = finite_diff_grad(
        |probe| {
            let mut tape = Tape::new();
            let x = tape.leaf(probe);
            let loss = build(&mut tape, x)?;
            Ok(tape.scalar_value(loss))
        },
        x0,
        FD_EPS,
    )?;
    Ok(max_rel_err(&analytic, numeric.values()))
}

fn check_elementwise(rng: &mut RngStream, kind: &str) -> Result<f64> {
    let x0 = Tensor::new(away_from_zero(rng, 6, 0.15), vec![2, 3])?;
    let other = Tensor::new(away_from_zero(rng, 6, 0.15), vec![2, 3])?;
    match kind {
        "add" | "sub" | "mul" => check(
            move |tape, x| {
                let y = tape.leaf(&other);
                let z = match kind {
                    "add" => tape.add(x, y)?,
                    "sub" => tape.sub(x, y)?,
                    _ => tape.mul(x, y)?,
                };
                let sq = tape.square(z);
                tape.sum(sq, None)
            },
            &x0,
        ),
        "square" => check(
            |tape, x| {
                let sq = tape.square(x);
                tape.sum(sq, None)
            },
            &x0,
        ),
        "relu" => check(
            |tape, x| {
                let r = tape.relu(x);
                let sq = tape.square(r);
                tape.sum(sq, None)
            },
            &x0,
        ),
        "log" => {
            let pos = Tensor::new(
                (0..6).map(|_| rng.uniform(0.2, 2.0)).collect(),
                vec![2, 3],
            )?;
            check(
                |tape, x| {
                    let l = tape.log(x)?;
                    tape.sum(l, None)
                },
                &pos,
            )
        }
        other => Err(Error::config(format!("unknown elementwise kind {other}"))),
    }
}

fn check_matmul(rng: &mut RngStream) -> Result<f64> {
    let a0 = Tensor::new(away_from_zero(rng, 6, 0.1), vec![2, 3])?;
    let b0 = Tensor::new(away_from_zero(rng, 12, 0.1), vec![3, 4])?;
    let e1 = check(
        {
            let b0 = b0.clone();
            move |tape, a| {
                let b = tape.leaf(&b0);
                let c = tape.matmul(a, b)?;
                let sq = tape.square(c);
                tape.sum(sq, None)
            }
        },
        &a0,
    )?;
    let e2 = check(
        move |tape, b| {
            let a = tape.leaf(&a0);
            let c = tape.matmul(a, b)?;
            let sq = tape.square(c);
            tape.sum(sq, None)
        },
        &b0,
    )?;
    Ok(e1.max(e2))
}

fn check_add_bias(rng: &mut RngStream) -> Result<f64> {
    let m = Tensor::new(away_from_zero(rng, 8, 0.1), vec![4, 2])?;
    let b0 = Tensor::vector(away_from_zero(rng, 2, 0.1));
    check(
        move |tape, bias| {
            let mat = tape.leaf(&m);
            let y = tape.add_bias(mat, bias)?;
            let sq = tape.square(y);
            tape.sum(sq, None)
        },
        &b0,
    )
}

fn check_inf_norm(rng: &mut RngStream) -> Result<f64> {
    // clear argmax margin per row
    let mut values = away_from_zero(rng, 12, 0.1);
    for row in 0..3 {
        let peak = row * 4 + (rng.below(4));
        values[peak] = 3.0 + rng.uniform(0.0, 1.0);
    }
    let x0 = Tensor::new(values, vec![3, 4])?;
    check(
        |tape, x| {
            let n = tape.inf_norm_normalize(x)?;
            let sq = tape.square(n);
            tape.sum(sq, None)
        },
        &x0,
    )
}

fn check_reduce(rng: &mut RngStream, kind: &str) -> Result<f64> {
    let x0 = Tensor::new(away_from_zero(rng, 12, 0.2), vec![3, 4])?;
    check(
        move |tape, x| {
            let r = match kind {
                "sum" => tape.sum(x, Some(1))?,
                "mean" => tape.mean(x, Some(0))?,
                _ => tape.max_abs(x, Some(1))?,
            };
            let sq = tape.square(r);
            tape.sum(sq, None)
        },
        &x0,
    )
}

fn check_detach(rng: &mut RngStream) -> Result<f64> {
    let y0 = Tensor::vector(away_from_zero(rng, 5, 0.1));
    let x0 = Tensor::vector(away_from_zero(rng, 5, 0.1));
    // gradient flows to x and must be identically absent behind detach
    let mut tape = Tape::new();
    let x = tape.leaf(&x0.clone().with_trainable(true));
    let y = tape.leaf(&y0.clone().with_trainable(true));
    let yd = tape.detach(y);
    let prod = tape.mul(x, yd)?;
    let loss = tape.sum(prod, None)?;
    tape.backward(loss)?;
    if tape.grad(y).unwrap().iter().any(|&g| g != 0.0) {
        return Ok(1.0); // leak: force a failure
    }
    let analytic = tape.grad(x).unwrap().to_vec();
    let numeric = finite_diff_grad(
        |probe| {
            let mut tape = Tape::new();
            let x = tape.leaf(probe);
            let y = tape.leaf(&y0);
            let yd = tape.detach(y);
            let prod = tape.mul(x, yd)?;
            let loss = tape.sum(prod, None)?;
            Ok(tape.scalar_value(loss))
        },
        &x0,
        FD_EPS,
    )?;
    Ok(max_rel_err(&analytic, numeric.values()))
}

fn check_softmax_ce(rng: &mut RngStream) -> Result<f64> {
    let logits = Tensor::new(
        (0..12).map(|_| rng.uniform(-2.0, 2.0)).collect(),
        vec![4, 3],
    )?;
    let labels: Vec<usize> = (0..4).map(|_| rng.below(3)).collect();
    check(
        move |tape, x| tape.softmax_cross_entropy(x, &labels),
        &logits,
    )
}

fn check_conv2d(rng: &mut RngStream) -> Result<f64> {
    let x0 = Tensor::new(away_from_zero(rng, 2 * 4 * 4, 0.1), vec![1, 2, 4, 4])?;
    let w0 = Tensor::new(away_from_zero(rng, 3 * 2 * 9, 0.1), vec![3, 2, 3, 3])?;
    let b0 = Tensor::vector(away_from_zero(rng, 3, 0.1));
    let (w1, b1) = (w0.clone(), b0.clone());
    let x1 = x0.clone();
    let e1 = check(
        move |tape, x| {
            let w = tape.leaf(&w1);
            let b = tape.leaf(&b1);
            let y = tape.conv2d(x, w, b, 2, 1)?;
            let sq = tape.square(y);
            tape.sum(sq, None)
        },
        &x0,
    )?;
    let e2 = check(
        move |tape, w| {
            let x = tape.leaf(&x1);
            let b = tape.leaf(&b0);
            let y = tape.conv2d(x, w, b, 1, 1)?;
            let sq = tape.square(y);
            tape.sum(sq, None)
        },
        &w0,
    )?;
    Ok(e1.max(e2))
}

fn check_mean_pool(rng: &mut RngStream) -> Result<f64> {
    let x0 = Tensor::new(away_from_zero(rng, 2 * 2 * 3 * 3, 0.1), vec![2, 2, 3, 3])?;
    check(
        |tape, x| {
            let p = tape.mean_pool_spatial(x)?;
            let sq = tape.square(p);
            tape.sum(sq, None)
        },
        &x0,
    )
}

fn check_encoder(rng: &mut RngStream) -> Result<f64> {
    let spec = EncoderSpec::vector(6, vec![8], 1, 4);
    let params = init_params(&spec, rng.next_u64())?;
    let batch = Tensor::new(
        (0..3 * 6).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        vec![3, 6],
    )?;
    let mut tape = Tape::new();
    let (rep, bound) = encode_batch(&mut tape, &spec, &params, &batch)?;
    let loss = tape.mean(rep, None)?;
    tape.backward(loss)?;
    let analytic = bound.grads(&tape);

    let mut worst = 0.0f64;
    for (slot, (name, tensor)) in params.iter().enumerate() {
        let numeric = finite_diff_grad(
            |probe| {
                let entries: Vec<(String, Tensor)> = params
                    .iter()
                    .map(|(n, t)| (n.to_string(), if n == name { probe.clone() } else { t.clone() }))
                    .collect();
                let p = ParamSet::from_entries(entries);
                let mut tape = Tape::new();
                let (rep, _) = encode_batch(&mut tape, &spec, &p, &batch)?;
                let loss = tape.mean(rep, None)?;
                Ok(tape.scalar_value(loss))
            },
            tensor,
            FD_EPS,
        )?;
        worst = worst.max(max_rel_err(&analytic[slot], numeric.values()));
    }
    Ok(worst)
}

/// Clustered batch: near-duplicate pairs keep the mined sets nonempty
/// and far from the threshold boundary.
fn mining_batch(rng: &mut RngStream, n: usize, dim: usize) -> Tensor {
    let mut values = Vec::with_capacity(n * dim);
    let mut anchor: Vec<f64> = Vec::new();
    for i in 0..n {
        if i % 2 == 0 {
            anchor = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
            values.extend_from_slice(&anchor);
        } else {
            for &a in &anchor {
                values.push(a + rng.uniform(-0.02, 0.02));
            }
        }
    }
    Tensor::new(values, vec![n, dim]).expect("mining batch geometry")
}

/// Full training loss over the flattened teacher parameters, on batches
/// of 8 samples with 16-dimensional representations.
fn check_total_loss(rng: &mut RngStream) -> Result<f64> {
    let spec = EncoderSpec::vector(6, vec![10], 1, 16);
    let st = StudentTeacher::new(spec.clone(), rng.next_u64(), 0.5)?;
    let raw = mining_batch(rng, 8, 6);
    let aug = {
        let mut values = raw.values().to_vec();
        for v in values.iter_mut() {
            *v += rng.uniform(-0.05, 0.05);
        }
        Tensor::new(values, raw.shape().to_vec())?
    };
    let cfg = LossConfig::default();

    let mut tape = Tape::new();
    let views = st.two_view_forward(&mut tape, &raw, &aug, true)?;
    let out = total_loss(&mut tape, views.teacher_rep, views.student_rep, &cfg)?;
    if out.sets.mean_size() == 0.0 {
        return Err(Error::contract("gradcheck: mining batch produced no negatives"));
    }
    for i in 0..out.sets.anchors() {
        for &d in out.sets.dissims(i) {
            if (d - cfg.threshold).abs() < 1e-3 {
                return Err(Error::contract("gradcheck: dissimilarity too close to threshold"));
            }
        }
    }
    tape.backward(out.loss)?;
    let analytic: Vec<f64> = views
        .teacher_params
        .grads(&tape)
        .into_iter()
        .flatten()
        .collect();

    let flat = Tensor::vector(st.teacher().flat());
    let numeric = finite_diff_grad(
        |probe| {
            let mut teacher = st.teacher().clone();
            teacher.set_flat(probe.values())?;
            let st2 = StudentTeacher::from_parts(
                spec.clone(),
                teacher,
                st.student().clone(),
                st.tau(),
            )?;
            let mut tape = Tape::new();
            let views = st2.two_view_forward(&mut tape, &raw, &aug, true)?;
            let out = total_loss(&mut tape, views.teacher_rep, views.student_rep, &cfg)?;
            Ok(tape.scalar_value(out.loss))
        },
        &flat,
        FD_EPS,
    )?;
    Ok(max_rel_err(&analytic, numeric.values()))
}

pub const OP_NAMES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "square",
    "log",
    "relu",
    "matmul",
    "add_bias",
    "inf_norm_normalize",
    "reduce_sum",
    "reduce_mean",
    "reduce_max_abs",
    "detach",
    "softmax_cross_entropy",
    "conv2d",
    "mean_pool_spatial",
    "encoder",
    "total_loss",
];

fn run_op(name: &str, rng: &mut RngStream) -> Result<f64> {
    match name {
        "add" | "sub" | "mul" | "square" | "log" | "relu" => check_elementwise(rng, name),
        "matmul" => check_matmul(rng),
        "add_bias" => check_add_bias(rng),
        "inf_norm_normalize" => check_inf_norm(rng),
        "reduce_sum" => check_reduce(rng, "sum"),
        "reduce_mean" => check_reduce(rng, "mean"),
        "reduce_max_abs" => check_reduce(rng, "max_abs"),
        "detach" => check_detach(rng),
        "softmax_cross_entropy" => check_softmax_ce(rng),
        "conv2d" => check_conv2d(rng),
        "mean_pool_spatial" => check_mean_pool(rng),
        "encoder" => check_encoder(rng),
        "total_loss" => check_total_loss(rng),
        other => Err(Error::config(format!("unknown op '{other}'"))),
    }
}

pub fn run(args: GradcheckArgs) -> Result<i32> {
    let selected: Vec<&str> = if args.ops == "all" {
        OP_NAMES.to_vec()
    } else if OP_NAMES.contains(&args.ops.as_str()) {
        vec![OP_NAMES[OP_NAMES.iter().position(|&n| n == args.ops).unwrap()]]
    } else {
        return Err(Error::config(format!(
            "unknown op '{}'; available: all, {}",
            args.ops,
            OP_NAMES.join(", ")
        )));
    };
    if args.trials == 0 {
        return Err(Error::config("--trials must be positive"));
    }

    println!("{:<24} {:>7} {:>15}   status", "op", "trials", "worst rel err");
    let mut failures = Vec::new();
    for name in selected {
        let mut worst = 0.0f64;
        for trial in 0..args.trials {
            let mut rng = RngStream::new(0xAD_5EED).derive_named(name).derive(trial as u64);
            let mut err = run_op(name, &mut rng)?;
            if args.inject_fault {
                err += 1e-3;
            }
            worst = worst.max(err);
        }
        let pass = worst < TOLERANCE;
        println!(
            "{:<24} {:>7} {:>15.3e}   {}",
            name,
            args.trials,
            worst,
            if pass { "pass" } else { "FAIL" }
        );
        if !pass {
            failures.push((name, worst));
        }
    }
    if failures.is_empty() {
        Ok(0)
    } else {
        eprintln!("gradcheck failures:");
        for (name, err) in failures {
            eprintln!("  {name}: worst rel err {err:.3e} >= {TOLERANCE:.0e}");
        }
        Ok(1)
    }
}
