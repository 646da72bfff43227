//! Fit a small MLP to `sin(3x)` with the tape and Adam, after checking its gradient
//! against central differences.

use adrbc::nn::gradcheck::{finite_difference, relative_error};
use adrbc::nn::{grad, Activation, Mat, MlpParams, OptimState};
use adrbc::rng::stream;
use adrbc::Result;
use rand::Rng;

fn main() -> Result<()> {
    let mut rng = stream(0, 0);
    let xs: Vec<f64> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = Mat::from_vec(128, 1, xs.clone())?;
    let y = Mat::from_vec(128, 1, xs.iter().map(|v| (3.0 * v).sin()).collect())?;

    let loss = |net: &MlpParams, tape: &mut adrbc::nn::Tape, vars: &[adrbc::nn::Var]| {
        let inp = tape.constant(x.clone());
        let target = tape.constant(y.clone());
        let out = net.bind(vars).apply(tape, inp);
        let d = tape.sub(out, target);
        let sq = tape.square(d);
        tape.mean(sq)
    };

    let mut net = MlpParams::init(&[1, 32, 32, 1], Activation::Tanh, Activation::Identity, &mut rng);

    let (_, analytic) = grad(&net, |t, v| Ok(loss(&net, t, v)))?;
    let numeric = finite_difference(&net, 1e-5, |p| grad(p, |t, v| Ok(loss(p, t, v))).map(|r| r.0))?;
    println!("gradient check: relative error {:.2e}", relative_error(&analytic, &numeric));

    let mut opt = OptimState::new(&net, 1e-2);
    for it in 0..=2000 {
        let (l, g) = grad(&net, |t, v| Ok(loss(&net, t, v)))?;
        opt.adam_step(&mut net, &g)?;
        if it % 500 == 0 {
            println!("iter {it:>5}  mse {l:.5}");
        }
    }
    Ok(())
}
