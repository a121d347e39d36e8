mod oracle;

use deepcat_core::normal;
use deepcat_core::posterior::posterior_predictive;
use deepcat_core::selection::ImportanceWeights;
use deepcat_core::{seeded_rng, ItemBank, SunPosterior};
use oracle::{GridPosterior, Obs};
use rand::Rng;

fn random_obs<R: Rng>(k: usize, t: usize, rng: &mut R) -> Vec<Obs> {
    (0..t)
        .map(|_| {
            let b = (0..k)
                .map(|_| {
                    let mag = rng.random_range(0.3..3.0);
                    if rng.random::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                })
                .collect();
            Obs {
                b,
                d: rng.random_range(-1.5..1.5),
                y: rng.random_range(0..=1),
            }
        })
        .collect()
}

fn posterior_from(k: usize, obs: &[Obs]) -> SunPosterior {
    obs.iter().enumerate().fold(SunPosterior::prior(k), |p, (i, o)| {
        p.update_raw(&o.b, o.d, i, o.y).unwrap()
    })
}

#[test]
fn single_item_posterior_matches_quadrature() {
    let obs = vec![Obs {
        b: vec![1.0],
        d: 0.0,
        y: 1,
    }];
    let grid = GridPosterior::default_for(1, &obs);
    let s = posterior_from(1, &obs).sample(100_000, &mut seeded_rng(1)).unwrap();
    let m = s.moments().unwrap();
    // closed form: E = 1/sqrt(pi) for θ ~ 2 φ(θ) Φ(θ)
    assert!((grid.mean()[0] - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-8);
    assert!((m.mean[0] - grid.mean()[0]).abs() < 0.02);
    assert!((m.var[0] - grid.var()[0]).abs() < 0.02);
}

#[test]
fn random_small_posteriors_match_quadrature() {
    let mut rng = seeded_rng(2);
    for case in 0..12 {
        let k = 1 + case % 2;
        let t = rng.random_range(1..=5);
        let obs = random_obs(k, t, &mut rng);
        let grid = GridPosterior::default_for(k, &obs);
        let s = posterior_from(k, &obs)
            .sample(100_000, &mut seeded_rng(100 + case as u64))
            .unwrap();
        let m = s.moments().unwrap();
        let (gm, gv) = (grid.mean(), grid.var());
        for c in 0..k {
            assert!(
                (m.mean[c] - gm[c]).abs() < 0.02,
                "case {case} mean {c}: {} vs {}",
                m.mean[c],
                gm[c]
            );
            assert!(
                (m.var[c] - gv[c]).abs() < 0.02,
                "case {case} var {c}: {} vs {}",
                m.var[c],
                gv[c]
            );
        }
    }
}

#[test]
fn sun_density_integrates_to_one() {
    let mut rng = seeded_rng(3);
    for t in 1..=3 {
        for _ in 0..3 {
            let obs = random_obs(1, t, &mut rng);
            let params = posterior_from(1, &obs).sun_params().unwrap();
            let density = params.density_evaluator().unwrap();
            let n = 2001;
            let h = 20.0 / (n - 1) as f64;
            let mut total = 0.0;
            for i in 0..n {
                let x = -10.0 + h * i as f64;
                let c = if i == 0 || i == n - 1 {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                total += c * h / 3.0 * density.eval(&[x]).unwrap();
            }
            assert!((total - 1.0).abs() < 1e-4, "T={t}: {total}");
        }
    }
}

#[test]
fn sun_density_matches_normalised_likelihood() {
    let obs = vec![
        Obs {
            b: vec![1.2],
            d: 0.3,
            y: 1,
        },
        Obs {
            b: vec![-0.7],
            d: -0.5,
            y: 0,
        },
    ];
    let params = posterior_from(1, &obs).sun_params().unwrap();
    let grid = GridPosterior::new(1, &obs, 4001, 10.0);
    // grid weights are density × Simpson weight; compare at an interior node
    let h = 20.0 / 4000.0;
    let i = 2000; // θ = 0, Simpson coefficient 2
    let dens = grid.weights[i] / (2.0 * h / 3.0);
    let want = params.density(&grid.points[i]).unwrap();
    assert!((dens - want).abs() < 1e-6 * want.max(1.0), "{dens} vs {want}");
}

#[test]
fn predictive_on_prior_matches_closed_form() {
    let mut rng = seeded_rng(4);
    let s = SunPosterior::prior(3).sample(100_000, &mut rng).unwrap();
    for _ in 0..10 {
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d = rng.random_range(-1.5..1.5);
        let norm2: f64 = b.iter().map(|v| v * v).sum();
        let want = normal::cdf(d / (norm2 + 1.0).sqrt());
        let probs: Vec<f64> = s
            .rows()
            .map(|th| normal::cdf(d + b.iter().zip(th).map(|(x, t)| x * t).sum::<f64>()))
            .collect();
        let mean = probs.iter().sum::<f64>() / probs.len() as f64;
        let sd = (probs.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (probs.len() - 1) as f64).sqrt();
        let se = sd / (probs.len() as f64).sqrt();
        let got = posterior_predictive(&b, d, &s).unwrap();
        assert!((got - want).abs() < 3.0 * se + 1e-12, "{got} vs {want} (se {se})");
    }
}

#[test]
fn history_order_does_not_change_the_law() {
    let mut rng = seeded_rng(5);
    let obs = random_obs(2, 5, &mut rng);
    let mut rev = obs.clone();
    rev.reverse();
    let m = 100_000;
    let a = posterior_from(2, &obs).sample(m, &mut seeded_rng(6)).unwrap();
    let b = posterior_from(2, &rev).sample(m, &mut seeded_rng(7)).unwrap();
    let (ma, mb) = (a.moments().unwrap(), b.moments().unwrap());
    for c in 0..2 {
        let se = ((ma.var[c] + mb.var[c]) / m as f64).sqrt();
        assert!((ma.mean[c] - mb.mean[c]).abs() < 3.0 * se, "coord {c}");
    }
}

#[test]
fn reweighted_draws_track_the_updated_posterior() {
    let bank = deepcat_core::mirt::generate_bank(&deepcat_core::BankGenConfig {
        n_items: 40,
        n_factors: 3,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    let mut rng = seeded_rng(9);
    for trial in 0..20 {
        let k = 1 + trial % 3;
        let sub = ItemBank::new_lenient(
            (0..40).map(|j| bank.loading_row(j)[..k].to_vec()).collect(),
            bank.intercepts().to_vec(),
            None,
        )
        .unwrap();
        let t = rng.random_range(0..=10);
        let mut post = SunPosterior::prior(k);
        for j in 0..t {
            post = post.update_item(&sub, j, rng.random_range(0..=1)).unwrap();
        }
        let cand = 20 + trial;
        let y = rng.random_range(0..=1);
        let current = post.sample(10_000, &mut seeded_rng(1000 + trial as u64)).unwrap();
        let w = ImportanceWeights::for_response(&sub, cand, y, &current);
        let approx = w.weighted_mean(&current);
        let updated = post
            .update_item(&sub, cand, y)
            .unwrap()
            .sample(100_000, &mut seeded_rng(2000 + trial as u64))
            .unwrap()
            .moments()
            .unwrap();
        for c in 0..k {
            // self-normalised estimator error scales as sd / sqrt(ESS)
            let se = (updated.var[c] / w.ess + updated.var[c] / 100_000.0).sqrt();
            let diff = (approx[c] - updated.mean[c]).abs();
            assert!(diff < 4.5 * se, "trial {trial} coord {c}: diff {diff} se {se}");
        }
    }
}
