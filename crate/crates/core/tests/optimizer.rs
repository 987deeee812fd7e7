use std::time::Instant;

use bdc_estim::bfgs::{self, bfgs_update, bfgs_update_in_place, minimize, newton_step, StopReason, TrainConfig};
use bdc_estim::cfnn::{self, InitScheme, Topology};
use bdc_estim::dataset::Dataset;
use bdc_estim::linalg::{dot, SquareMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SquareMatrix {
    let a: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let v: f64 = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum();
            m.set(i, j, v + if i == j { n as f64 * 0.1 } else { 0.0 });
        }
    }
    m
}

#[test]
fn hand_examples_exact() {
    let id = SquareMatrix::identity(3);
    assert_eq!(bfgs_update(&id, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], 1e-10).unwrap(), id);
    let h = bfgs_update(&SquareMatrix::identity(2), &[1.0, 0.0], &[2.0, 0.0], 1e-10).unwrap();
    assert_eq!(h, SquareMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 1.0]]));
    assert_eq!(h.asymmetry(), 0.0);
}

#[test]
fn quadratic_terminates_in_n_plus_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 5;
    let a = random_spd(&mut rng, n);
    let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x_star = bdc_estim::linalg::Cholesky::new(&a).unwrap().solve(&b);
    let mut f = |w: &[f64], g: &mut [f64]| {
        let aw = a.mul_vec(w);
        for i in 0..n {
            g[i] = aw[i] - b[i];
        }
        // shifted so the minimum value is 1
        0.5 * dot(w, &aw) - dot(&b, w) + 0.5 * dot(&b, &x_star) + 1.0
    };
    let config = TrainConfig {
        grad_tol: 1e-12,
        loss_goal: 1e-300,
        wolfe_c1: 1e-10,
        wolfe_c2: 1e-8,
        ..TrainConfig::default()
    };
    let min = minimize(&mut f, vec![0.0; n], &config).unwrap();
    let err = min
        .w
        .iter()
        .zip(&x_star)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-10, "error {err:e}");
    assert!(min.iterations() <= n + 1, "{} iterations", min.iterations());
}

fn rosenbrock(w: &[f64], g: &mut [f64]) -> f64 {
    let (x, y) = (w[0], w[1]);
    g[0] = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
    g[1] = 200.0 * (y - x * x);
    (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
}

#[test]
fn rosenbrock_from_standard_start() {
    let config = TrainConfig {
        grad_tol: 1e-9,
        loss_goal: 1e-300,
        max_iterations: 200,
        ..TrainConfig::default()
    };
    let min = minimize(&mut rosenbrock, vec![-1.2, 1.0], &config).unwrap();
    assert_ne!(min.history.stop, Some(StopReason::MaxIterations));
    assert!(
        (min.w[0] - 1.0).abs() < 1e-6 && (min.w[1] - 1.0).abs() < 1e-6,
        "{:?}",
        min.w
    );
    let losses: Vec<f64> = min.history.records.iter().map(|r| r.loss).collect();
    assert!(losses.windows(2).all(|w| w[1] <= w[0]));
    assert!(min.history.records.iter().all(|r| r.asymmetry <= 1e-10));
}

#[test]
fn planted_network_is_recovered() {
    let topo = Topology::cascade(vec![2, 4, 2]).unwrap();
    let planted = cfnn::init_weights(&topo, 9, InitScheme::UniformScaled)
        .iter()
        .map(|w| 2.0 * w)
        .collect::<Vec<_>>();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows = 40;
    let inputs: Vec<f64> = (0..rows * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut targets = Vec::new();
    for r in 0..rows {
        targets.extend(cfnn::forward(&topo, &planted, &inputs[2 * r..2 * r + 2]).unwrap());
    }
    let ds = Dataset::from_normalized(inputs, targets, 2, 2).unwrap();
    let w0: Vec<f64> = planted.iter().map(|w| w + rng.random_range(-0.2..0.2)).collect();
    let config = TrainConfig {
        loss_goal: 1e-10,
        grad_tol: 1e-10,
        ..TrainConfig::default()
    };
    let min = bfgs::train(&topo, &ds, w0.clone(), &config).unwrap();
    assert!(min.loss <= 1e-8, "loss {:e}", min.loss);
    let again = bfgs::train(&topo, &ds, w0, &config).unwrap();
    assert_eq!(min.history, again.history);
    assert_eq!(min.w, again.w);
    let losses: Vec<f64> = min.history.records.iter().map(|r| r.loss).collect();
    assert!(losses.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn update_cost_is_quadratic() {
    let setup = |n: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = s.iter().map(|x| 2.0 * x + 0.01).collect();
        (s, y)
    };
    let time_batch = |s: &[f64], y: &[f64]| {
        let mut h = SquareMatrix::identity(s.len());
        let t = Instant::now();
        for _ in 0..200 {
            bfgs_update_in_place(&mut h, s, y, 1e-10).unwrap();
            h = std::hint::black_box(h);
        }
        t.elapsed().as_secs_f64()
    };
    let (s1, y1) = setup(150);
    let (s2, y2) = setup(300);
    // interleaved so both sizes see the same background load; best of many
    let (mut small, mut large) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..25 {
        small = small.min(time_batch(&s1, &y1));
        large = large.min(time_batch(&s2, &y2));
    }
    let ratio = large / small;
    assert!(ratio <= 4.5, "doubling n scaled update time by {ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn newton_residual_on_random_spd(seed in any::<u64>(), n in 1usize..=50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_spd(&mut rng, n);
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = newton_step(&h, &g).unwrap();
        let hp = h.mul_vec(&p);
        let res: f64 = hp.iter().zip(&g).map(|(a, b)| (a + b).powi(2)).sum::<f64>().sqrt();
        let gn: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(res <= 1e-10 * gn, "residual {res:e}");
        prop_assert!(dot(&p, &g) < 0.0);
    }

    #[test]
    fn updates_stay_symmetric_and_definite(seed in any::<u64>(), n in 2usize..12, steps in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(&mut rng, n);
        let mut h = SquareMatrix::identity(n);
        for _ in 0..steps {
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = a.mul_vec(&s);
            bfgs_update_in_place(&mut h, &s, &y, 1e-10).unwrap();
            prop_assert_eq!(h.asymmetry(), 0.0);
            prop_assert!(bdc_estim::linalg::Cholesky::new(&h).is_some());
        }
    }

    #[test]
    fn accepted_steps_satisfy_sufficient_decrease(x0 in -2.0f64..2.0, y0 in -1.0f64..3.0) {
        let config = TrainConfig { max_iterations: 30, loss_goal: 1e-300, ..TrainConfig::default() };
        let mut g0 = [0.0; 2];
        let f0 = rosenbrock(&[x0, y0], &mut g0);
        let min = minimize(&mut rosenbrock, vec![x0, y0], &config).unwrap();
        let mut prev = f0;
        for r in &min.history.records {
            prop_assert!(r.loss <= prev);
            prop_assert!(r.alpha > 0.0);
            prev = r.loss;
        }
    }
}
