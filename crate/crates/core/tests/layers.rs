mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resemote_core::model::ResidualSpec;
use resemote_core::nn::{Mode, ResidualBlock, SeBlock, ShortcutKind};
use resemote_core::{Graph, ModelConfig, ResEmoteNet, Tensor};

fn randn(dims: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(dims.to_vec(), std, rng).unwrap()
}

#[test]
fn se_matches_stepwise_recomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..100 {
        let reduction = rng.gen_range(1..=4);
        let hidden = rng.gen_range(1..=4);
        let c = reduction * hidden;
        let dims = [rng.gen_range(1..=3), c, rng.gen_range(1..=6), rng.gen_range(1..=6)];
        let x = randn(&dims, 1.0, &mut rng);
        let w1 = randn(&[hidden, c], 1.0, &mut rng);
        let w2 = randn(&[c, hidden], 1.0, &mut rng);
        let se = SeBlock::from_weights(w1.clone(), w2.clone(), reduction).unwrap();

        let mut g = Graph::no_grad();
        let xv = g.leaf(&x);
        let gate = se.gate(&mut g, xv).unwrap();
        let y = se.forward(&mut g, xv).unwrap();
        let (expect, gates) = common::se_by_hand(x.values(), dims, w1.values(), w2.values(), hidden);
        assert!(common::max_abs_diff(g.value(y).values(), &expect) <= 1e-12);
        assert!(common::max_abs_diff(g.value(gate).values(), &gates) <= 1e-12);
        assert!(g.value(gate).values().iter().all(|&s| s > 0.0 && s < 1.0));
    }
}

#[test]
fn zero_weight_se_halves_input_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = randn(&[2, 8, 5, 5], 3.0, &mut rng);
    let se = SeBlock::from_weights(Tensor::zeros([2, 8]).unwrap(), Tensor::zeros([8, 2]).unwrap(), 4).unwrap();
    let mut g = Graph::no_grad();
    let xv = g.leaf(&x);
    let y = se.forward(&mut g, xv).unwrap();
    for (out, inp) in g.value(y).values().iter().zip(x.values()) {
        assert_eq!(out.to_bits(), (0.5 * inp).to_bits());
    }
}

fn zero_branch(block: &mut ResidualBlock<f64>) {
    block.bn_b.gamma = Tensor::zeros(block.bn_b.gamma.dims().to_vec()).unwrap();
    block.bn_b.beta = Tensor::zeros(block.bn_b.beta.dims().to_vec()).unwrap();
}

#[test]
fn zeroed_residual_branch_is_identity_on_non_negative_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for mode in [Mode::Eval, Mode::Train] {
        let mut block = ResidualBlock::<f64>::new(6, 6, 1, &mut rng).unwrap();
        zero_branch(&mut block);
        block.set_mode(mode);
        let x = randn(&[2, 6, 5, 5], 1.0, &mut rng).map(f64::abs);
        let mut g = Graph::no_grad();
        let xv = g.leaf(&x);
        let y = match mode {
            Mode::Train => block.forward(&mut g, xv),
            Mode::Eval => block.forward_eval(&mut g, xv),
        }
        .unwrap();
        let same = g
            .value(y)
            .values()
            .iter()
            .zip(x.values())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "{mode:?}");
    }
}

#[test]
fn zeroed_residual_branch_passes_projection_through_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut block = ResidualBlock::<f64>::with_shortcut(4, 8, 2, ShortcutKind::Projection, &mut rng).unwrap();
    zero_branch(&mut block);
    block.set_mode(Mode::Eval);
    let x = randn(&[2, 4, 6, 6], 1.0, &mut rng);
    let mut g = Graph::no_grad();
    let xv = g.leaf(&x);
    let y = block.forward_eval(&mut g, xv).unwrap();
    let s = block.shortcut_eval(&mut g, xv).unwrap();
    let r = g.relu(s).unwrap();
    assert_eq!(g.value(y).values(), g.value(r).values());
    assert_eq!(g.dims(y), [2, 8, 3, 3]);
}

#[test]
fn parameter_count_matches_layer_formulas() {
    let default = ModelConfig::default();
    assert_eq!(common::parameter_count(&default), 77_496_839);
    let tiny = ModelConfig::tiny();
    assert_eq!(
        ResEmoteNet::<f32>::build(&tiny).unwrap().parameter_count(),
        common::parameter_count(&tiny)
    );
    let mut odd = ModelConfig::tiny();
    odd.residual = vec![ResidualSpec::new(8, 12, 2), ResidualSpec::new(12, 12, 1)];
    odd.input_size = 32;
    odd.aap_output = (2, 1);
    assert_eq!(
        ResEmoteNet::<f32>::build(&odd).unwrap().parameter_count(),
        common::parameter_count(&odd)
    );
}

#[test]
fn default_network_counts_and_shapes() {
    let net = ResEmoteNet::<f32>::build(&ModelConfig::default()).unwrap();
    assert_eq!(net.parameter_count(), 77_496_839);
    let x = Tensor::<f32>::zeros([1, 3, 64, 64]).unwrap();
    let logits = net.infer(&x).unwrap();
    assert_eq!(logits.values.dims(), [1, 7]);
}

#[test]
fn network_errors_name_the_stage() {
    let net = ResEmoteNet::<f64>::build(&ModelConfig::tiny()).unwrap();
    let err = net.infer(&Tensor::zeros([1, 3, 15, 16]).unwrap()).unwrap_err();
    assert!(err.to_string().starts_with("stage input"), "{err}");
    let err = net.infer(&Tensor::zeros([1, 1, 16, 16]).unwrap()).unwrap_err();
    assert!(err.to_string().contains("input"), "{err}");
}
