//! Scratch: flow-LFD vs PGD risk at matched W2 budget, across seeds.
use flowdro_core::datasets::{generate_dataset, DatasetSpec};
use flowdro_core::dro::{train_lfd, LfdTrainConfig};
use flowdro_core::measures::w2_assignment;
use flowdro_core::nn::Activation;
use flowdro_core::risks::*;
use flowdro_core::rng;
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let mut wins = 0; let mut total = 0; let mut budget_fail = 0;
    for seed in 0..20u64 {
        let spec = DatasetSpec::GaussianMixture {
            means: vec![vec![-1.0, 0.0], vec![1.0, 0.0]],
            variances: vec![vec![0.25, 0.25], vec![0.25, 0.25]],
            weights: vec![0.5, 0.5],
        };
        let p = generate_dataset(&spec, 256, 1000 + seed).unwrap();
        let mut r = rng::substream(seed, "clf-init");
        let mut clf = MLPClassifier::new(2, &[32], 2, Activation::Tanh, &mut r).unwrap();
        train_classifier(&mut clf, &p, &ClassifierTrainConfig::full_batch(300, 5e-3, seed)).unwrap();
        let model = RiskModel::CrossEntropy(clf);

        let v = Potential::negated_loss(model.clone());
        let mut cfg = LfdTrainConfig::single_block(0.15, 800, 5e-3, seed);
        cfg.hidden = vec![32];
        cfg.activation = Activation::Softplus { beta: 20.0 };
        let (chain, _report) = train_lfd(&v, &p, &cfg).unwrap();
        let q_flow = chain.push_forward(&p).unwrap();
        let (eps_flow, _) = w2_assignment(&p, &q_flow).unwrap();

        let q_pgd = pgd_attack_measure(&model, &p, &PgdConfig::l2(eps_flow)).unwrap();
        let (eps_pgd, _) = w2_assignment(&p, &q_pgd).unwrap();
        let rel = (eps_pgd - eps_flow).abs() / eps_flow;
        if rel > 0.02 { budget_fail += 1; }

        let risk_flow = risk_eval(&model, &q_flow).unwrap();
        let risk_pgd = risk_eval(&model, &q_pgd).unwrap();
        total += 1;
        if risk_flow >= risk_pgd - 1e-3 { wins += 1; }
        println!("seed {seed}: eps_flow={eps_flow:.4} eps_pgd={eps_pgd:.4} (rel {rel:.4}) risk_flow={risk_flow:.4} risk_pgd={risk_pgd:.4} {}", if risk_flow >= risk_pgd - 1e-3 {"WIN"} else {"LOSS"});
    }
    println!("wins {wins}/{total}, budget mismatches {budget_fail}, elapsed {:.1}s", t0.elapsed().as_secs_f32());
}
