use deepcat_core::seeded_rng;
use deepcat_rl::network::{Example, NetworkConfig, QNetwork};
use deepcat_rl::StateSnapshot;
use ndarray::Array2;
use rand::Rng;

fn tiny(seed: u64) -> QNetwork {
    let mut cfg = NetworkConfig::new(2, 5).with_width(8);
    cfg.seed = seed;
    QNetwork::new(cfg).unwrap()
}

fn random_state<R: Rng>(t: usize, rng: &mut R) -> StateSnapshot {
    StateSnapshot {
        tuples: Array2::from_shape_fn((t, 4), |_| rng.random_range(-2.0..2.0)),
        psi: Array2::from_shape_fn((5, 11), |_| rng.random_range(0.0..1.0)),
        available: vec![true; 5],
    }
}

/// Plain re-evaluation of the loss, independent of the backward pass.
fn loss(net: &QNetwork, batch: &[Example<'_>]) -> f64 {
    batch
        .iter()
        .map(|e| {
            let q = net.forward(e.state).unwrap()[e.action];
            (q - e.target).powi(2)
        })
        .sum::<f64>()
        / batch.len() as f64
}

fn perturbed(net: &QNetwork, layer: usize, idx: usize, is_bias: bool, delta: f64) -> QNetwork {
    let mut p = net.clone();
    let mut layers = p.layers_mut();
    let l = &mut layers[layer];
    if is_bias {
        l.bias[idx] += delta;
    } else {
        let cols = l.n_in();
        l.weight[(idx / cols, idx % cols)] += delta;
    }
    p
}

#[test]
fn every_weight_matches_central_differences() {
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..3u64 {
        let net = tiny(seed);
        let mut rng = seeded_rng(100 + seed);
        let states: Vec<StateSnapshot> = [0, 1, 3, 6].iter().map(|&t| random_state(t, &mut rng)).collect();
        let batch: Vec<Example<'_>> = states
            .iter()
            .map(|s| Example {
                state: s,
                action: rng.random_range(0..5),
                target: rng.random_range(-5.0..0.0),
            })
            .collect();
        let (l0, grads) = net.loss_and_gradients(&batch).unwrap();
        assert!((l0 - loss(&net, &batch)).abs() < 1e-12);
        for (li, g) in grads.iter().enumerate() {
            let entries = (0..g.weight.len())
                .map(|i| (i, false, g.weight.as_slice().unwrap()[i]))
                .chain((0..g.bias.len()).map(|i| (i, true, g.bias[i])));
            for (idx, is_bias, analytic) in entries {
                let up = loss(&perturbed(&net, li, idx, is_bias, h), &batch);
                let down = loss(&perturbed(&net, li, idx, is_bias, -h), &batch);
                let numeric = (up - down) / (2.0 * h);
                // below 1e-6 the difference quotient itself carries ~1e-11 of rounding noise
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    rel < 1e-4,
                    "seed {seed} layer {li} idx {idx} bias {is_bias}: analytic {analytic} numeric {numeric}"
                );
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    assert!(checked > 2000);
    println!("checked {checked} parameters, worst relative error {worst:.2e}");
}

#[test]
fn duplicated_example_doubles_its_contribution() {
    let net = tiny(7);
    let mut rng = seeded_rng(8);
    let a = random_state(2, &mut rng);
    let b = random_state(4, &mut rng);
    let ea = Example {
        state: &a,
        action: 1,
        target: -2.0,
    };
    let eb = Example {
        state: &b,
        action: 3,
        target: -1.0,
    };
    // summed (not averaged) gradients: |batch| × mean-loss gradient
    let summed = |batch: &[Example<'_>]| {
        let (_, g) = net.loss_and_gradients(batch).unwrap();
        let n = batch.len() as f64;
        g.into_iter()
            .flat_map(|l| l.weight.into_iter().chain(l.bias))
            .map(|v| v * n)
            .collect::<Vec<f64>>()
    };
    let ga = summed(&[ea]);
    let gb = summed(&[eb]);
    let gaab = summed(&[ea, ea, eb]);
    for i in 0..ga.len() {
        let want = 2.0 * ga[i] + gb[i];
        assert!((gaab[i] - want).abs() < 1e-10 * (1.0 + want.abs()), "{i}");
    }
}
