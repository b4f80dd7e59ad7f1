//! Flow blocks and chains: integration accuracy, objective gradients,
//! counters, and serialization.

use flowdro_core::autodiff::finite_difference_grad;
use flowdro_core::flow::{
    block_objective, block_objective_grad, FlowBlock, FlowChain, IntegratorConfig,
    IntegratorMethod, VelocityField,
};
use flowdro_core::measures::{w2_assignment, EmpiricalMeasure};
use flowdro_core::nn::Activation;
use flowdro_core::risks::Potential;
use flowdro_core::rng;

fn decay_field(dim: usize) -> VelocityField {
    // f(x) = −x, exact affine field.
    let rows: Vec<Vec<f64>> = (0..dim)
        .map(|i| (0..dim).map(|j| if i == j { -1.0 } else { 0.0 }).collect())
        .collect();
    VelocityField::affine(dim, &rows, &vec![0.0; dim]).unwrap()
}

#[test]
fn constant_field_single_euler_step_translates() {
    let c = [0.7, -0.2];
    let block =
        FlowBlock::new(VelocityField::constant(&c).unwrap(), IntegratorConfig::euler(1), 1.0)
            .unwrap();
    let (end, _) = block.integrate_point(&[1.0, 2.0], false).unwrap();
    assert_eq!(end, vec![1.7, 1.8]);
}

#[test]
fn zero_field_is_identity_for_all_methods() {
    let zero = VelocityField::constant(&[0.0, 0.0]).unwrap();
    for cfg in [IntegratorConfig::euler(1), IntegratorConfig::euler(5), IntegratorConfig::rk4(3)] {
        let block = FlowBlock::new(zero.clone(), cfg, 1.0).unwrap();
        let (end, _) = block.integrate_point(&[0.3, -0.9], false).unwrap();
        assert_eq!(end, vec![0.3, -0.9]);
    }
}

#[test]
fn rk4_integrates_linear_decay_accurately() {
    // ẋ = −x over [0,1): exact endpoint e⁻¹·x.
    let block = FlowBlock::new(decay_field(2), IntegratorConfig::rk4(3), 1.0).unwrap();
    let x = [1.0, -2.0];
    let (end, _) = block.integrate_point(&x, false).unwrap();
    for (e, x0) in end.iter().zip(&x) {
        assert!((e - (-1.0_f64).exp() * x0).abs() < 1e-3, "{e} vs {}", (-1.0_f64).exp() * x0);
    }
}

#[test]
fn integrator_convergence_orders() {
    // Empirical order on f(x) = −x: log2(err(S)/err(2S)).
    let exact = (-1.0_f64).exp();
    let err = |method: IntegratorMethod, s: usize| -> f64 {
        let block =
            FlowBlock::new(decay_field(1), IntegratorConfig { method, substeps: s }, 1.0).unwrap();
        let (end, _) = block.integrate_point(&[1.0], false).unwrap();
        (end[0] - exact).abs()
    };
    for s in [2usize, 4, 8] {
        let slope = (err(IntegratorMethod::Rk4, s) / err(IntegratorMethod::Rk4, 2 * s)).log2();
        assert!(slope >= 3.5, "rk4 slope {slope} at S={s}");
        let slope_e = (err(IntegratorMethod::Euler, s) / err(IntegratorMethod::Euler, 2 * s)).log2();
        assert!(slope_e >= 0.9, "euler slope {slope_e} at S={s}");
    }
}

#[test]
fn trajectory_matches_plain_endpoint_and_has_s_plus_1_states() {
    let mut r = rng::seeded(4);
    let field = VelocityField::new(2, &[8], Activation::Tanh, true, &mut r).unwrap();
    // Give the net non-trivial output.
    let flat: Vec<f64> = field
        .mlp
        .store
        .flatten()
        .iter()
        .enumerate()
        .map(|(i, v)| v + 0.01 * (i as f64).sin())
        .collect();
    let mut field = field;
    field.mlp.store.set_from_flat(&flat).unwrap();
    let block = FlowBlock::new(field, IntegratorConfig::rk4(4), 1.0).unwrap();

    let x = [0.4, -1.1];
    let (plain, _) = block.integrate_point(&x, false).unwrap();
    let (with_traj, traj) = block.integrate_point(&x, true).unwrap();
    let traj = traj.unwrap();
    assert_eq!(traj.len(), 5);
    assert_eq!(plain, with_traj);
    assert_eq!(traj.last().unwrap(), &plain);
    assert_eq!(traj[0], x.to_vec());
}

#[test]
fn field_eval_counter_matches_4s_per_rk4_point() {
    let block = FlowBlock::new(decay_field(2), IntegratorConfig::rk4(3), 1.0).unwrap();
    block.field.reset_eval_count();
    let pts: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, 0.0]).collect();
    let p = EmpiricalMeasure::uniform_from_rows(&pts).unwrap();
    let chain = FlowChain::new(vec![block]).unwrap();
    chain.push_forward(&p).unwrap();
    assert_eq!(chain.eval_count(), 4 * 3 * 7);

    let euler = FlowBlock::new(decay_field(2), IntegratorConfig::euler(5), 1.0).unwrap();
    euler.field.reset_eval_count();
    euler.integrate_batch(p.points()).unwrap();
    assert_eq!(euler.field.eval_count(), 5 * 7);
}

#[test]
fn push_forward_chain_composition_and_weights() {
    let mut r = rng::seeded(9);
    let rows: Vec<Vec<f64>> = (0..20).map(|_| rng::normal_vec(&mut r, 2)).collect();
    let p = EmpiricalMeasure::uniform_from_rows(&rows)
        .unwrap()
        .with_labels((0..20).map(|i| i % 2).collect())
        .unwrap();

    // Empty chain → P unchanged.
    let idchain = FlowChain::identity();
    let q = idchain.push_forward(&p).unwrap();
    assert_eq!(q.points().data(), p.points().data());

    // Single constant-field Euler block → uniform translation.
    let c = [0.5, 0.5];
    let b = FlowBlock::new(VelocityField::constant(&c).unwrap(), IntegratorConfig::euler(1), 1.0)
        .unwrap();
    let chain1 = FlowChain::new(vec![b.clone()]).unwrap();
    let q1 = chain1.push_forward(&p).unwrap();
    for i in 0..p.len() {
        assert_eq!(q1.point(i)[0], p.point(i)[0] + 0.5);
        assert_eq!(q1.point(i)[1], p.point(i)[1] + 0.5);
    }
    assert_eq!(q1.weights(), p.weights());
    assert_eq!(q1.labels(), p.labels());

    // Two blocks equal sequential application, pointwise to 1e-12 (bitwise here).
    let b2 = FlowBlock::new(decay_field(2), IntegratorConfig::rk4(2), 1.0).unwrap();
    let chain2 = FlowChain::new(vec![b.clone(), b2.clone()]).unwrap();
    let q2 = chain2.push_forward(&p).unwrap();
    for i in 0..p.len() {
        let step1 = b.integrate_point(p.point(i), false).unwrap().0;
        let step2 = b2.integrate_point(&step1, false).unwrap().0;
        for (a, e) in q2.point(i).iter().zip(&step2) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn transport_cost_cases_and_monge_bound() {
    let mut r = rng::seeded(14);
    let rows: Vec<Vec<f64>> = (0..15).map(|_| rng::normal_vec(&mut r, 2)).collect();
    let p = EmpiricalMeasure::uniform_from_rows(&rows).unwrap();

    assert_eq!(FlowChain::identity().transport_cost(&p).unwrap(), 0.0);

    let c = [0.3, -0.4];
    let chain = FlowChain::new(vec![FlowBlock::new(
        VelocityField::constant(&c).unwrap(),
        IntegratorConfig::euler(1),
        1.0,
    )
    .unwrap()])
    .unwrap();
    assert!((chain.transport_cost(&p).unwrap() - 0.25).abs() < 1e-12);

    // Monge bound: cost ≥ W2²(P, T_#P) via assignment.
    let mut r2 = rng::seeded(15);
    let field = {
        let mut f = VelocityField::new(2, &[6], Activation::Tanh, false, &mut r2).unwrap();
        let flat: Vec<f64> =
            f.mlp.store.flatten().iter().map(|v| v + 0.3).collect();
        f.mlp.store.set_from_flat(&flat).unwrap();
        f
    };
    let chain2 =
        FlowChain::new(vec![FlowBlock::new(field, IntegratorConfig::rk4(2), 1.0).unwrap()])
            .unwrap();
    let cost = chain2.transport_cost(&p).unwrap();
    let q = chain2.push_forward(&p).unwrap();
    let (w2, _) = w2_assignment(&p, &q).unwrap();
    assert!(cost >= w2 * w2 - 1e-9);
}

#[test]
fn block_objective_examples() {
    // f ≡ 0: objective = E_batch[V(x)].
    let zero = VelocityField::constant(&[0.0, 0.0]).unwrap();
    let block = FlowBlock::new(zero, IntegratorConfig::euler(1), 1.0).unwrap();
    let v = Potential::half_squared_norm(2);
    let batch = EmpiricalMeasure::uniform_from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
    let obj = block_objective(&block, &v, &batch).unwrap();
    let expect = 0.5 * (1.0 + 4.0) / 2.0;
    assert!((obj - expect).abs() < 1e-12);

    // Single point (1,0), γ=1, f ≡ 0 → V = 0.5.
    let single = EmpiricalMeasure::uniform_from_rows(&[vec![1.0, 0.0]]).unwrap();
    assert!((block_objective(&block, &v, &single).unwrap() - 0.5).abs() < 1e-15);

    // γ → ∞: objective → E[V(T(x))] for a moving field.
    let c = [0.5, 0.0];
    let mover = FlowBlock::new(
        VelocityField::constant(&c).unwrap(),
        IntegratorConfig::euler(1),
        1e12,
    )
    .unwrap();
    let obj_inf = block_objective(&mover, &v, &single).unwrap();
    let expect_inf = 0.5 * (1.5_f64 * 1.5); // V(T(x)) with T(x) = (1.5, 0)
    assert!((obj_inf - expect_inf).abs() < 1e-9);
}

#[test]
fn block_objective_grad_matches_finite_differences() {
    let mut r = rng::seeded(23);
    for trial in 0..3 {
        let field = VelocityField::new(2, &[5], Activation::Tanh, true, &mut r).unwrap();
        let mut block = FlowBlock::new(
            field,
            if trial % 2 == 0 { IntegratorConfig::rk4(2) } else { IntegratorConfig::euler(3) },
            0.7,
        )
        .unwrap();
        // Perturb away from the zero-init stationary point.
        let flat: Vec<f64> = block
            .field
            .mlp
            .store
            .flatten()
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.05 * ((i + trial) as f64).cos())
            .collect();
        block.field.mlp.store.set_from_flat(&flat).unwrap();

        let rows: Vec<Vec<f64>> = (0..6).map(|_| rng::normal_vec(&mut r, 2)).collect();
        let batch = EmpiricalMeasure::uniform_from_rows(&rows).unwrap();
        let v = Potential::quadratic(vec![0.2, -0.1], 1.3);

        block.field.mlp.store.zero_grads();
        block_objective_grad(&mut block, &v, &batch).unwrap();
        let grad = block.field.mlp.store.flatten_grads();

        let theta0 = block.field.mlp.store.flatten();
        let mut probe = block.clone();
        let fd = finite_difference_grad(
            |theta| {
                probe.field.mlp.store.set_from_flat(theta).unwrap();
                block_objective(&probe, &v, &batch).unwrap()
            },
            &theta0,
            1e-5,
        );
        for (g, f) in grad.iter().zip(&fd) {
            let denom = f.abs().max(1e-4);
            assert!((g - f).abs() / denom < 1e-4, "grad {g} vs fd {f} (trial {trial})");
        }
    }
}

#[test]
fn fresh_block_with_constant_potential_has_zero_gradient() {
    // Zero-init block is the identity; with a constant potential the
    // objective is insensitive to θ, so the exact gradient is zero.
    let mut r = rng::seeded(31);
    let field = VelocityField::new(2, &[8], Activation::Tanh, false, &mut r).unwrap();
    let mut block = FlowBlock::new(field, IntegratorConfig::euler(1), 1.0).unwrap();
    let batch = EmpiricalMeasure::uniform_from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
    let v = Potential::linear(vec![0.0, 0.0]);
    block_objective_grad(&mut block, &v, &batch).unwrap();
    assert!(block.field.mlp.store.flatten_grads().iter().all(|&g| g == 0.0));
}

#[test]
fn duplicated_batch_leaves_gradient_unchanged() {
    let mut r = rng::seeded(37);
    let field = VelocityField::new(2, &[4], Activation::Tanh, false, &mut r).unwrap();
    let mut block = FlowBlock::new(field, IntegratorConfig::euler(2), 0.5).unwrap();
    let flat: Vec<f64> =
        block.field.mlp.store.flatten().iter().map(|v| v + 0.1).collect();
    block.field.mlp.store.set_from_flat(&flat).unwrap();

    let rows: Vec<Vec<f64>> = (0..4).map(|_| rng::normal_vec(&mut r, 2)).collect();
    let batch = EmpiricalMeasure::uniform_from_rows(&rows).unwrap();
    let mut doubled_rows = rows.clone();
    doubled_rows.extend(rows.clone());
    let doubled = EmpiricalMeasure::uniform_from_rows(&doubled_rows).unwrap();
    let v = Potential::half_squared_norm(2);

    block_objective_grad(&mut block, &v, &batch).unwrap();
    let g1 = block.field.mlp.store.flatten_grads();
    block.field.mlp.store.zero_grads();
    block_objective_grad(&mut block, &v, &doubled).unwrap();
    let g2 = block.field.mlp.store.flatten_grads();
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn non_finite_state_reports_substep() {
    let huge = VelocityField::affine(1, &[vec![1e200]], &[0.0]).unwrap();
    let block = FlowBlock::new(huge, IntegratorConfig::euler(2), 1.0).unwrap();
    let err = block.integrate_point(&[2.0], false).unwrap_err();
    let msg = format!("{err}");
    assert!(msg.contains("substep 1"), "unexpected message: {msg}");
}

#[test]
fn chain_serialization_round_trips_bitwise() {
    let mut r = rng::seeded(41);
    let mut blocks = Vec::new();
    for k in 0..2 {
        let mut field = VelocityField::new(
            2,
            &[6],
            if k == 0 { Activation::Tanh } else { Activation::Softplus { beta: 20.0 } },
            k == 1,
            &mut r,
        )
        .unwrap();
        let flat: Vec<f64> =
            field.mlp.store.flatten().iter().map(|v| v + 0.2).collect();
        field.mlp.store.set_from_flat(&flat).unwrap();
        blocks.push(
            FlowBlock::new(
                field,
                if k == 0 { IntegratorConfig::euler(1) } else { IntegratorConfig::rk4(3) },
                0.5 + k as f64,
            )
            .unwrap(),
        );
    }
    let chain = FlowChain::new(blocks).unwrap();
    let dir = tempfile::tempdir().unwrap();
    chain.save(dir.path()).unwrap();
    let loaded = FlowChain::load(dir.path()).unwrap();
    assert_eq!(loaded.len(), chain.len());
    let x = [0.25, -0.75];
    assert_eq!(chain.map_point(&x).unwrap(), loaded.map_point(&x).unwrap());
    assert_eq!(loaded.blocks[1].integrator.substeps, 3);
    assert_eq!(loaded.blocks[1].gamma, 1.5);
}
