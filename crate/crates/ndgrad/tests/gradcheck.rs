//! Gradient correctness against central finite differences, plus the
//! determinism and finiteness invariants of the engine.

use ndgrad::gaussian::{gaussian_log_prob, tanh_squash_log_prob};
use ndgrad::graph::{Graph, Var};
use ndgrad::mlp::{Head, Mlp, MlpOut, MlpSpec};
use ndgrad::seed;
use ndgrad::tensor::{Real, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// One randomly shaped test case: an MLP, a batch, and fixed noise/targets
/// for the Gaussian-head loss terms.
struct Case {
    mlp: Mlp<f64>,
    x: Tensor<f64>,
    target: Tensor<f64>,
    noise: Tensor<f64>,
}

fn random_case(case_seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
    let input = rng.gen_range(2..=5usize);
    let hidden = rng.gen_range(3..=8usize);
    let depth_hidden = rng.gen_range(1..=2usize);
    let gaussian = rng.gen::<bool>();
    let out_half = rng.gen_range(1..=3usize);
    let out = if gaussian { out_half * 2 } else { out_half };

    let mut widths = vec![input];
    widths.extend(std::iter::repeat(hidden).take(depth_hidden));
    widths.push(out);
    let head = if gaussian {
        Head::Gaussian { min_log_std: -5.0, max_log_std: 2.0 }
    } else {
        Head::Plain
    };
    let mlp = Mlp::init(MlpSpec::new(widths, head), seed::derive_indexed(case_seed, "weights", 0));

    let batch = rng.gen_range(2..=4usize);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect() };
    Case {
        x: Tensor::new(vec![batch, input], draw(batch * input)),
        target: Tensor::new(vec![batch, out_half], draw(batch * out_half)),
        noise: Tensor::new(vec![batch, out_half], draw(batch * out_half)),
        mlp,
    }
}

/// Scalar loss exercising every op the networks rely on. For plain heads the
/// loss is mean(y^2); for Gaussian heads it is the mean log density of a
/// fixed target plus the mean squashed log density of a fixed
/// reparameterized sample.
fn case_loss(g: &Graph<f64>, case: &Case, vars: &ndgrad::mlp::MlpVars) -> Var {
    let x = g.input_const(&case.x);
    match case.mlp.apply(g, vars, x) {
        MlpOut::Plain(y) => g.mean_all(g.mul(y, y)),
        MlpOut::Gaussian { mean, log_std } => {
            let target = g.input_const(&case.target);
            let lp_target = g.mean_all(gaussian_log_prob(g, target, mean, log_std));
            let xi = g.input_const(&case.noise);
            let u = g.add(mean, g.mul(g.exp(log_std), xi));
            let (_, lp_squash) = tanh_squash_log_prob(g, u, mean, log_std);
            g.add(lp_target, g.mean_all(lp_squash))
        }
    }
}

fn loss_value(case: &Case) -> f64 {
    let g = Graph::new();
    let vars = case.mlp.bind(&g);
    g.scalar_value(case_loss(&g, case, &vars))
}

fn backward_grads(case: &Case) -> Vec<Vec<f64>> {
    let g = Graph::new();
    let vars = case.mlp.bind(&g);
    let loss = case_loss(&g, case, &vars);
    g.backward(loss);
    vars.vars.iter().map(|&v| g.grad(v).expect("reachable leaf must have a grad")).collect()
}

fn max_rel_err_for_case(case: &mut Case) -> f64 {
    let analytic = backward_grads(case);
    let mut worst = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        for ei in 0..grads.len() {
            let orig = case.mlp.params()[pi].data()[ei];
            case.mlp.params_mut()[pi].data_mut()[ei] = orig + FD_STEP;
            let up = loss_value(case);
            case.mlp.params_mut()[pi].data_mut()[ei] = orig - FD_STEP;
            let down = loss_value(case);
            case.mlp.params_mut()[pi].data_mut()[ei] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads[ei], fd));
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences_over_100_configs() {
    let started = std::time::Instant::now();
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let mut case = random_case(seed::derive_indexed(0x5eed_cafe, "gradcheck", i));
        let err = max_rel_err_for_case(&mut case);
        assert!(err <= TOLERANCE, "config {i}: max relative error {err} exceeds {TOLERANCE}");
        worst = worst.max(err);
    }
    let elapsed = started.elapsed();
    println!("gradcheck: 100 configs, worst relative error {worst:.3e}, {elapsed:.2?}");
    assert!(elapsed.as_secs() < 60, "gradient suite took {elapsed:?}");
}

#[test]
fn minimum_and_concat_gradients_match_finite_differences() {
    // Twin networks joined by an elementwise minimum, inputs concatenated
    // from two halves — the same graph shapes the critic pair uses.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let spec = MlpSpec::new(vec![4, 6, 1], Head::Plain);
    let mut m1 = Mlp::<f64>::init(spec.clone(), 1);
    let mut m2 = Mlp::<f64>::init(spec, 2);
    let batch = 3usize;
    let left = Tensor::new(vec![batch, 3], (0..9).map(|_| rng.gen::<f64>() - 0.5).collect());
    let right = Tensor::new(vec![batch, 1], (0..3).map(|_| rng.gen::<f64>() - 0.5).collect());

    let eval = |m1: &Mlp<f64>, m2: &Mlp<f64>, want_grads: bool| -> (f64, Vec<Vec<f64>>) {
        let g = Graph::new();
        let v1 = m1.bind(&g);
        let v2 = m2.bind(&g);
        let x = g.concat_cols(&[g.input_const(&left), g.input_const(&right)]);
        let q1 = m1.apply(&g, &v1, x).plain();
        let q2 = m2.apply(&g, &v2, x).plain();
        let loss = g.mean_all(g.minimum(q1, q2));
        let value = g.scalar_value(loss);
        if !want_grads {
            return (value, Vec::new());
        }
        g.backward(loss);
        let grads = v1.vars.iter().chain(&v2.vars).map(|&v| g.grad(v).unwrap()).collect();
        (value, grads)
    };

    let (_, analytic) = eval(&m1, &m2, true);
    let n1 = m1.params().len();
    for (pi, grads) in analytic.iter().enumerate() {
        for ei in 0..grads.len() {
            let nudge = |m1: &mut Mlp<f64>, m2: &mut Mlp<f64>, d: f64| {
                let p = if pi < n1 { &mut m1.params_mut()[pi] } else { &mut m2.params_mut()[pi - n1] };
                p.data_mut()[ei] += d;
            };
            nudge(&mut m1, &mut m2, FD_STEP);
            let up = eval(&m1, &m2, false).0;
            nudge(&mut m1, &mut m2, -2.0 * FD_STEP);
            let down = eval(&m1, &m2, false).0;
            nudge(&mut m1, &mut m2, FD_STEP);
            let fd = (up - down) / (2.0 * FD_STEP);
            assert!(rel_err(grads[ei], fd) <= TOLERANCE, "param {pi} entry {ei}: ad {} fd {fd}", grads[ei]);
        }
    }
}

fn forward_backward_bits<T: Real>(seed: u64) -> Vec<T> {
    let spec = MlpSpec::new(vec![3, 16, 16, 4], Head::Gaussian { min_log_std: -10.0, max_log_std: 2.0 });
    let mlp = Mlp::<T>::init(spec, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    let x = Tensor::new(vec![5, 3], (0..15).map(|_| T::from_f64(rng.gen::<f64>() * 2.0 - 1.0)).collect());
    let xi = Tensor::new(vec![5, 2], (0..10).map(|_| T::from_f64(rng.gen::<f64>() * 2.0 - 1.0)).collect());

    let g = Graph::new();
    let vars = mlp.bind(&g);
    let xv = g.input_const(&x);
    let (mean, log_std) = match mlp.apply(&g, &vars, xv) {
        MlpOut::Gaussian { mean, log_std } => (mean, log_std),
        _ => unreachable!(),
    };
    let u = g.add(mean, g.mul(g.exp(log_std), g.input_const(&xi)));
    let (a, lp) = tanh_squash_log_prob(&g, u, mean, log_std);
    let loss = g.mean_all(lp);
    g.backward(loss);

    let mut bits = g.value_data(a);
    bits.push(g.scalar_value(loss));
    for &v in &vars.vars {
        bits.extend(g.grad(v).unwrap());
    }
    bits
}

#[test]
fn identical_seeds_give_bit_identical_results() {
    let a64 = forward_backward_bits::<f64>(2024);
    let b64 = forward_backward_bits::<f64>(2024);
    assert!(a64.iter().zip(&b64).all(|(x, y)| x.to_bits() == y.to_bits()));

    let a32 = forward_backward_bits::<f32>(2024);
    let b32 = forward_backward_bits::<f32>(2024);
    assert!(a32.iter().zip(&b32).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn no_nan_or_inf_on_finite_inputs() {
    for seed in 0..20u64 {
        let bits = forward_backward_bits::<f32>(seed);
        assert!(bits.iter().all(|v| v.is_finite()), "seed {seed} produced non-finite values");
    }
}

#[test]
fn every_reachable_grad_leaf_is_populated() {
    let case = random_case(424242);
    let g = Graph::new();
    let vars = case.mlp.bind(&g);
    let loss = case_loss(&g, &case, &vars);
    g.backward(loss);
    for &v in &vars.vars {
        assert!(g.grad(v).is_some());
    }
}
