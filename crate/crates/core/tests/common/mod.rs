#![allow(dead_code)]

use dyngcn_core::tape::Tape;
use dyngcn_core::{gradcheck, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Max relative error between autodiff and central differences for `sum(w ⊙ op(x))`
/// with fixed random weights `w`, so every output coordinate matters.
pub fn grad_check(
    x: &Tensor<f64>,
    seed: u64,
    op: impl Fn(&mut Tape<f64>, Var) -> Result<Var>,
) -> f64 {
    let mut r = rng(seed ^ 0x9e37);
    let probe = {
        let mut t = Tape::new();
        let v = t.constant(x.clone());
        let y = op(&mut t, v).unwrap();
        t.value(y).shape().to_vec()
    };
    let w = rand_tensor(&probe, &mut r);
    let objective = |t: &mut Tape<f64>, y: Var| {
        let wv = t.constant(w.clone());
        let p = t.mul(y, wv).unwrap();
        t.sum(p)
    };
    let mut t = Tape::new();
    let xv = t.leaf(x.clone(), true);
    let y = op(&mut t, xv).unwrap();
    let loss = objective(&mut t, y);
    let grads = t.backward(loss).unwrap();
    let auto = grads.get(xv).unwrap().to_vec();
    let fd = gradcheck::finite_difference_grad(
        |xx| {
            let mut t = Tape::new();
            let v = t.constant(xx.clone());
            let y = op(&mut t, v)?;
            let l = objective(&mut t, y);
            Ok(t.value(l).data()[0])
        },
        x,
        1e-5,
    )
    .unwrap();
    gradcheck::max_relative_error(&auto, fd.data(), 1e-6)
}
