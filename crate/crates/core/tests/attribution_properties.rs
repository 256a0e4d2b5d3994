use osrkit_core::attribution::{attribute_batch, attribute_values, AttributionConfig, Method};
use osrkit_core::nn::{Activation, DenseNetSpec, ModelParams};
use osrkit_core::{RngState, Tensor};
use proptest::prelude::*;

const ACTIVATIONS: [Activation; 5] = [
    Activation::Relu,
    Activation::LeakyRelu { alpha: 0.1 },
    Activation::Tanh,
    Activation::Sigmoid,
    Activation::Identity,
];

/// Random net with non-zero biases.
fn net(widths: Vec<usize>, act: Activation, seed: u64) -> ModelParams {
    let mut rng = RngState::new(seed);
    let mut m = ModelParams::init(
        DenseNetSpec::uniform(widths, act, 0.0, Activation::Identity),
        &mut rng,
    )
    .unwrap();
    for layer in m.layers_mut() {
        layer
            .bias
            .data_mut()
            .iter_mut()
            .for_each(|b| *b = rng.uniform_range(-0.3, 0.3));
    }
    m
}

fn zero_biases(m: &mut ModelParams) {
    for layer in m.layers_mut() {
        layer.bias.data_mut().iter_mut().for_each(|b| *b = 0.0);
    }
}

fn input(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngState::new(seed ^ 0x5eed);
    (0..d).map(|_| rng.uniform()).collect()
}

fn logit(m: &ModelParams, x: &[f64], y: usize) -> f64 {
    m.predict(x).unwrap().logits[y]
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

fn arb_case() -> impl Strategy<Value = (Vec<usize>, usize, u64)> {
    (
        2usize..7,
        1usize..3,
        2usize..5,
        0usize..ACTIVATIONS.len(),
        any::<u64>(),
    )
        .prop_map(|(d, depth, c, act, seed)| {
            let mut widths = vec![d];
            widths.extend((0..depth).map(|i| 3 + (seed as usize >> (4 * i)) % 5));
            widths.push(c);
            (widths, act, seed)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn saliency_matches_finite_differences((widths, act, seed) in arb_case()) {
        let m = net(widths.clone(), ACTIVATIONS[act], seed);
        let x = input(widths[0], seed);
        let y = m.predict(&x).unwrap().class;
        let cfg = AttributionConfig::default();
        let g = attribute_values(&m, Method::Saliency, &x, y, &cfg, &mut RngState::new(0)).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let (mut p, mut q) = (x.clone(), x.clone());
            p[i] += h;
            q[i] -= h;
            let fd = (logit(&m, &p, y) - logit(&m, &q, y)) / (2.0 * h);
            // kinks are allowed to disagree only if a unit sits within h of zero
            if ACTIVATIONS[act].is_rectifier() && ACTIVATIONS[act] != Activation::Identity {
                let t = m.trace(&x).unwrap();
                if t.pre.iter().flatten().any(|z| z.abs() < 1e-4) {
                    return Ok(());
                }
            }
            prop_assert!(close(g[i], fd, 1e-5), "i={i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn input_x_gradient_is_elementwise_product((widths, act, seed) in arb_case()) {
        let m = net(widths.clone(), ACTIVATIONS[act], seed);
        let x = input(widths[0], seed);
        let y = m.predict(&x).unwrap().class;
        let cfg = AttributionConfig::default();
        let mut rng = RngState::new(0);
        let g = attribute_values(&m, Method::Saliency, &x, y, &cfg, &mut rng).unwrap();
        let ixg = attribute_values(&m, Method::InputXGradient, &x, y, &cfg, &mut rng).unwrap();
        for i in 0..x.len() {
            prop_assert_eq!(ixg[i], g[i] * x[i]);
        }
    }

    #[test]
    fn deeplift_sums_to_output_difference((widths, act, seed) in arb_case()) {
        let m = net(widths.clone(), ACTIVATIONS[act], seed);
        let x = input(widths[0], seed);
        let y = m.predict(&x).unwrap().class;
        let cfg = AttributionConfig::default();
        let a = attribute_values(&m, Method::DeepliftRescale, &x, y, &cfg, &mut RngState::new(0)).unwrap();
        let zero = vec![0.0; x.len()];
        let expected = logit(&m, &x, y) - logit(&m, &zero, y);
        prop_assert!(close(a.iter().sum::<f64>(), expected, 1e-7));
    }

    #[test]
    fn lrp_conserves_relevance_without_biases((widths, act, seed) in arb_case()) {
        let act = ACTIVATIONS[act];
        prop_assume!(act.is_rectifier());
        let mut m = net(widths.clone(), act, seed);
        zero_biases(&mut m);
        let x = input(widths[0], seed);
        let y = m.predict(&x).unwrap().class;
        let cfg = AttributionConfig { lrp_epsilon: 1e-12, ..AttributionConfig::default() };
        let r = attribute_values(&m, Method::LrpEpsilon, &x, y, &cfg, &mut RngState::new(0)).unwrap();
        prop_assert!(close(r.iter().sum::<f64>(), logit(&m, &x, y), 1e-6));
    }

    #[test]
    fn ig_approaches_completeness_with_more_steps((widths, seed) in arb_case().prop_map(|(w, _, s)| (w, s))) {
        // smooth units, so the Riemann error shrinks like 1/m
        let m = net(widths.clone(), Activation::Tanh, seed);
        let x = input(widths[0], seed);
        let y = m.predict(&x).unwrap().class;
        let zero = vec![0.0; x.len()];
        let target = logit(&m, &x, y) - logit(&m, &zero, y);
        let err = |steps| {
            let cfg = AttributionConfig { ig_steps: steps, ..AttributionConfig::default() };
            let a = attribute_values(&m, Method::IntegratedGradients, &x, y, &cfg, &mut RngState::new(0)).unwrap();
            (a.iter().sum::<f64>() - target).abs()
        };
        let (coarse, fine) = (err(16), err(1024));
        prop_assert!(fine <= coarse + 1e-12);
        prop_assert!(fine <= 1e-2 * target.abs().max(1.0));
    }

    #[test]
    fn batch_rows_match_single_inputs((widths, act, seed) in arb_case()) {
        let m = net(widths.clone(), ACTIVATIONS[act], seed);
        let d = widths[0];
        let x0 = input(d, seed);
        let y = m.predict(&x0).unwrap().class;
        let mut rows = vec![x0.clone()];
        let mut rng = RngState::new(seed);
        for _ in 0..4 {
            let r: Vec<f64> = x0.iter().map(|v| v + rng.uniform_range(-0.01, 0.01)).collect();
            if m.predict(&r).unwrap().class == y {
                rows.push(r);
            }
        }
        let xs = Tensor::from_rows(&rows).unwrap();
        let cfg = AttributionConfig::default();
        for method in Method::ALL {
            if method == Method::LrpEpsilon && !ACTIVATIONS[act].is_rectifier() {
                continue;
            }
            let batch = attribute_batch(&m, method, &xs, y, &cfg, &mut RngState::new(3)).unwrap();
            if method.is_stochastic() {
                let again = attribute_batch(&m, method, &xs, y, &cfg, &mut RngState::new(3)).unwrap();
                prop_assert_eq!(&batch, &again);
                continue;
            }
            for (i, r) in rows.iter().enumerate() {
                let single = attribute_values(&m, method, r, y, &cfg, &mut RngState::new(0)).unwrap();
                for (a, b) in batch.row(i).iter().zip(&single) {
                    prop_assert!(close(*a, *b, 1e-12), "{method}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn normalized_attributions_have_unit_norm((widths, act, seed) in arb_case()) {
        let m = net(widths.clone(), ACTIVATIONS[act], seed);
        let x = input(widths[0], seed);
        let y = m.predict(&x).unwrap().class;
        let cfg = AttributionConfig { normalize: true, ..AttributionConfig::default() };
        for method in [Method::Saliency, Method::IntegratedGradients, Method::SmoothGrad] {
            let a = attribute_values(&m, method, &x, y, &cfg, &mut RngState::new(1)).unwrap();
            let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn smoothgrad_depends_only_on_the_stream() {
    // smooth units: a piecewise-linear net can give every noisy copy the same gradient
    let m = net(vec![4, 6, 3], Activation::Tanh, 9);
    let x = input(4, 9);
    let y = m.predict(&x).unwrap().class;
    let cfg = AttributionConfig::default();
    let a = attribute_values(&m, Method::SmoothGrad, &x, y, &cfg, &mut RngState::new(5)).unwrap();
    let b = attribute_values(&m, Method::SmoothGrad, &x, y, &cfg, &mut RngState::new(5)).unwrap();
    let c = attribute_values(&m, Method::SmoothGrad, &x, y, &cfg, &mut RngState::new(6)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn wrong_class_and_width_are_rejected() {
    let m = net(vec![4, 6, 3], Activation::Relu, 2);
    let x = input(4, 2);
    let y = m.predict(&x).unwrap().class;
    let cfg = AttributionConfig::default();
    let mut rng = RngState::new(0);
    assert!(attribute_values(&m, Method::Saliency, &x, (y + 1) % 3, &cfg, &mut rng).is_err());
    assert!(attribute_values(&m, Method::Saliency, &x[..3], y, &cfg, &mut rng).is_err());
    let bad_baseline = AttributionConfig {
        ig_baseline: Some(vec![0.0; 3]),
        ..AttributionConfig::default()
    };
    assert!(attribute_values(
        &m,
        Method::IntegratedGradients,
        &x,
        y,
        &bad_baseline,
        &mut rng
    )
    .is_err());
}
