//! Central-difference verification of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{uniform, BoundParams, ParamStore};
use super::tape::{Primitive, Tape, Var};
use super::tensor::Tensor;
use crate::error::{invalid, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

fn scalar_of(tape: &Tape, v: Var) -> Result<f64> {
    let t = tape.value(v);
    if !t.is_scalar() {
        return Err(invalid!(
            "gradient check needs a scalar function, got shape {:?}",
            t.shape()
        ));
    }
    Ok(t.item())
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Max over coordinates of `|analytic - central difference| / max(1, |analytic|)`
/// for a function of a single tensor.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |point: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.param(point);
        let out = f(&mut tape, v)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let root = f(&mut tape, xv)?;
    scalar_of(&tape, root)?;
    let grads = tape.backward(root)?;
    let analytic = grads.wrt(xv).expect("leaf gradient").clone();

    let mut worst = 0.0_f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Same measure taken over every scalar of every parameter in `params`.
pub fn grad_check_params<F>(params: &ParamStore, f: F, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let out = f(&mut tape, &bound)?;
        scalar_of(&tape, out)
    };

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let root = f(&mut tape, &bound)?;
    scalar_of(&tape, root)?;
    let grads = bound.collect(&tape.backward(root)?);

    let mut worst = 0.0_f64;
    let mut probe = params.clone();
    for (name, value) in params.iter() {
        let analytic = grads.get(name).expect("every bound param has a gradient");
        for i in 0..value.numel() {
            let orig = value.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + h;
            let fp = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - h;
            let fm = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            worst = worst.max(rel_err(analytic.data()[i], (fp - fm) / (2.0 * h)));
        }
    }
    Ok(worst)
}

/// Worst `grad_check` error of primitive `p` over `trials` random inputs.
///
/// The output is reduced to a scalar through a random weighted sum. Binary
/// primitives are checked with respect to each operand in turn (and, for the
/// elementwise ones, with a broadcast row operand).
pub fn primitive_grad_check(p: Primitive, trials: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..trials {
        let a = uniform(&[3, 4], 1.5, &mut rng);
        let cases: Vec<(Tensor, Vec<Tensor>, usize)> = match p {
            Primitive::MatMul => vec![
                (a.clone(), vec![uniform(&[4, 2], 1.5, &mut rng)], 0),
                (uniform(&[4, 2], 1.5, &mut rng), vec![a.clone()], 1),
            ],
            Primitive::Add | Primitive::Sub | Primitive::Mul => vec![
                (a.clone(), vec![uniform(&[3, 4], 1.5, &mut rng)], 0),
                (a.clone(), vec![uniform(&[3, 4], 1.5, &mut rng)], 1),
                (uniform(&[4], 1.5, &mut rng), vec![a.clone()], 1),
            ],
            Primitive::Concat => vec![(a.clone(), vec![uniform(&[3, 3], 1.5, &mut rng)], 0)],
            Primitive::Log => vec![(a.map(|v| 1.25 + 0.5 * v), vec![], 0)],
            // keep clear of the kink at zero
            Primitive::Relu => vec![(
                a.map(|v| if v.abs() < 0.1 { v + 0.2_f64.copysign(v) } else { v }),
                vec![],
                0,
            )],
            _ => vec![(a.clone(), vec![], 0)],
        };
        for (x, others, slot) in cases {
            let build = |tape: &mut Tape, v: Var| -> Result<Var> {
                let mut inputs: Vec<Var> = others.iter().map(|o| tape.constant(o.clone())).collect();
                inputs.insert(slot, v);
                if p == Primitive::Concat {
                    inputs.push(v);
                }
                tape.apply(p, &inputs)
            };
            let mut probe = Tape::new();
            let v = probe.param(x.clone());
            let out = build(&mut probe, v)?;
            let weights = Tensor::new(
                probe.shape(out).to_vec(),
                (0..probe.value(out).numel())
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect(),
            )?;
            let err = grad_check(
                |tape, v| {
                    let out = build(tape, v)?;
                    let w = tape.constant(weights.clone());
                    let prod = tape.mul(out, w)?;
                    tape.sum(prod)
                },
                &x,
                DEFAULT_STEP,
            )?;
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive() {
        for p in Primitive::ALL {
            let err = primitive_grad_check(p, 3, 11).unwrap();
            assert!(err < 1e-6, "{p}: {err}");
        }
    }

    #[test]
    fn sum_of_sines() {
        let x = Tensor::vector(vec![0.3, -1.1, 2.4, 5.0]);
        let err = grad_check(
            |t, v| {
                let s = t.sin(v)?;
                t.sum(s)
            },
            &x,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::vector(vec![0.3, -1.1, 2.4]);
        let err = grad_check(
            |t, v| {
                let s = t.scale(v, 3.0)?;
                t.sum(s)
            },
            &x,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn rejects_non_scalar_function() {
        let x = Tensor::vector(vec![0.3, -1.1]);
        assert!(grad_check(|t, v| t.sin(v), &x, DEFAULT_STEP).is_err());
    }
}
