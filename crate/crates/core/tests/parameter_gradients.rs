use osrkit_core::autodiff::Graph;
use osrkit_core::nn::{Activation, DenseNetSpec, ModelParams};
use osrkit_core::{RngState, Tensor};
use proptest::prelude::*;

fn loss(m: &ModelParams, x: &Tensor, targets: &[usize]) -> f64 {
    let mut g = Graph::new();
    let bound = m.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let out = m
        .forward_graph(&mut g, &bound, xv, false, &mut RngState::new(0))
        .unwrap();
    let l = g.softmax_cross_entropy(out, targets).unwrap();
    g.value(l).data()[0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Cross-entropy gradients for every weight and bias against central
    /// differences, on smooth nets so no kink sits inside the stencil.
    #[test]
    fn cross_entropy_parameter_gradients(seed in any::<u64>(), tanh in any::<bool>(), n in 1usize..5) {
        let act = if tanh { Activation::Tanh } else { Activation::Sigmoid };
        let mut rng = RngState::new(seed);
        let mut m = ModelParams::init(DenseNetSpec::uniform(vec![3, 5, 4, 3], act, 0.0, Activation::Identity), &mut rng).unwrap();
        for layer in m.layers_mut() {
            layer.bias.data_mut().iter_mut().for_each(|b| *b = rng.uniform_range(-0.5, 0.5));
        }
        let x = Tensor::matrix(n, 3, (0..3 * n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
        let targets: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();

        let grads = {
            let mut g = Graph::new();
            let bound = m.bind(&mut g, true);
            let xv = g.constant(x.clone());
            let out = m.forward_graph(&mut g, &bound, xv, false, &mut RngState::new(0)).unwrap();
            let l = g.softmax_cross_entropy(out, &targets).unwrap();
            g.backward(l).unwrap();
            bound.gradients(&mut g)
        };

        let h = 1e-6;
        for (t, grad) in grads.tensors.iter().enumerate() {
            let grad = grad.as_ref().expect("every parameter reached");
            for k in 0..grad.len() {
                let mut p = m.clone();
                let mut q = m.clone();
                let at = |mm: &mut ModelParams, delta: f64| {
                    let layer = &mut mm.layers_mut()[t / 2];
                    let tensor = if t % 2 == 0 { &mut layer.weight } else { &mut layer.bias };
                    tensor.data_mut()[k] += delta;
                };
                at(&mut p, h);
                at(&mut q, -h);
                let fd = (loss(&p, &x, &targets) - loss(&q, &x, &targets)) / (2.0 * h);
                let a = grad.data()[k];
                prop_assert!((a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1e-2), "param {t}[{k}]: {a} vs {fd}");
            }
        }
    }
}
