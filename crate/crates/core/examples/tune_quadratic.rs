//! Scratch: convergence of the single-block quadratic-Gaussian experiment.
use flowdro_core::datasets::{generate_dataset, DatasetSpec};
use flowdro_core::dro::{train_lfd, LfdTrainConfig};
use flowdro_core::risks::Potential;
use flowdro_core::nn::Activation;
use std::time::Instant;

fn main() {
    let p = generate_dataset(&DatasetSpec::Gaussian { mean: vec![0.0, 0.0], var: vec![1.0, 1.0] }, 2048, 42).unwrap();
    let v = Potential::half_squared_norm(2);
    let gamma = 0.5;
    for (hidden, epochs, lr, act) in [
        (vec![32usize], 1000, 1e-2, Activation::Softplus { beta: 20.0 }),
        (vec![64], 1000, 1e-2, Activation::Softplus { beta: 20.0 }),
        (vec![64], 1500, 1e-2, Activation::Softplus { beta: 20.0 }),
        (vec![64], 1500, 1e-2, Activation::Tanh),
    ] {
        let mut cfg = LfdTrainConfig::single_block(gamma, epochs, lr, 7);
        cfg.hidden = hidden.clone();
        cfg.activation = act;
        let t0 = Instant::now();
        let (chain, report) = train_lfd(&v, &p, &cfg).unwrap();
        let q = chain.push_forward(&p).unwrap();
        let mut mse = 0.0; let mut maxerr: f64 = 0.0;
        for i in 0..p.len() {
            let x = p.point(i); let y = q.point(i);
            let e: f64 = x.iter().zip(y).map(|(xi, yi)| { let t = yi - xi / (1.0 + gamma); t * t }).sum();
            mse += e / p.len() as f64;
            maxerr = maxerr.max(e.sqrt());
        }
        println!(
            "hidden={hidden:?} act={act:?} epochs={epochs} lr={lr}: mse={mse:.3e}, maxerr={maxerr:.3e}, be_resid={:.3e}, w2={:.4}, {}s",
            maxerr * (1.0 + gamma), report.achieved_w2, t0.elapsed().as_secs_f32()
        );
    }
}
