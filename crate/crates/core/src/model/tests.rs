use super::*;
use crate::numerics::grad_check;
use crate::testutil::toy_model;

fn zero_all(model: &mut SummarizerModel, prefix: &str) {
    let names: Vec<String> = model
        .params
        .names()
        .filter(|n| n.starts_with(prefix))
        .map(str::to_string)
        .collect();
    for n in names {
        model.params.get_mut(&n).unwrap().data_mut().fill(0.0);
    }
}

#[test]
fn encode_shape_and_determinism() {
    let m = toy_model(8, 1);
    let out = m.encode(&[5, 6, 7, 8]).unwrap();
    assert_eq!(out.states.shape(), &[4, 8]);
    assert_eq!(out.final_state.shape(), &[8]);
    assert_eq!(m.encode(&[5, 6, 7, 8]).unwrap(), out);
    assert!(matches!(m.encode(&[]), Err(ModelError::EmptyInput)));
}

#[test]
fn encoder_is_order_sensitive() {
    let m = toy_model(8, 2);
    let a = m.encode(&[5, 6, 7]).unwrap();
    let b = m.encode(&[6, 5, 7]).unwrap();
    assert_ne!(a.final_state, b.final_state);
}

#[test]
fn zero_hook_weights_give_one_half() {
    let mut m = toy_model(8, 3);
    zero_all(&mut m, "hook.");
    let enc = m.encode(&[5, 6, 7, 8, 9, 10]).unwrap();
    let probs = m.hook_forward(&enc).unwrap();
    assert_eq!(probs, vec![0.5; 6]);
}

#[test]
fn prior_application() {
    let h = apply_prior(&[0.9, 0.8], &[0]).unwrap();
    assert_eq!(h.effective, vec![0.0, 0.8]);
    let h = apply_prior(&[0.9, 0.8], &[0, 1]).unwrap();
    assert_eq!(h.effective, vec![0.0, 0.0]);
    let h = apply_prior(&[0.9, 0.8], &[]).unwrap();
    assert_eq!(h.effective, h.model_probs);
    assert!(matches!(
        apply_prior(&[0.5], &[1]),
        Err(ModelError::OutOfRange { pos: 1, len: 1 })
    ));
}

#[test]
fn masked_copy_renormalizes_raw_attention() {
    // hidden_dim 1: scores are query * state_i, so pick states = log([.2,.3,.5])
    // and scale the projection so the query is exactly one.
    let vocab = crate::testutil::toy_vocab();
    let mut m = SummarizerModel::new(ModelConfig::new(vocab.len(), 1), vocab, 4).unwrap();
    let states = Tensor::matrix(3, 1, vec![0.2f64.ln(), 0.3f64.ln(), 0.5f64.ln()]).unwrap();
    let enc = EncoderOutput {
        states,
        final_state: Tensor::vector(vec![0.1]),
        source_ids: vec![5, 6, 7],
    };
    let hook = HookState::free(vec![1.0, 0.0, 1.0]);
    let probe = m.decode_step(&enc, &hook, 1, &enc.final_state).unwrap();
    let q = probe.state.data()[0] * m.params.get("attn.proj").unwrap().data()[0];
    m.params.get_mut("attn.proj").unwrap().data_mut()[0] /= q;

    let step = m.decode_step(&enc, &hook, 1, &enc.final_state).unwrap();
    for (a, e) in step.attention.iter().zip([0.2, 0.3, 0.5]) {
        assert!((a - e).abs() < 1e-12, "{:?}", step.attention);
    }
    assert_eq!(step.copy_dist[1], 0.0);
    assert!((step.copy_dist[0] - 2.0 / 7.0).abs() < 1e-12);
    assert!((step.copy_dist[2] - 5.0 / 7.0).abs() < 1e-12);
}

#[test]
fn saturated_switch_returns_generation_distribution() {
    let mut m = toy_model(6, 5);
    m.params.get_mut("switch.b").unwrap().data_mut()[0] = 40.0;
    zero_all(&mut m, "switch.w");
    let enc = m.encode(&[5, 6, 7]).unwrap();
    let hook = HookState::free(vec![0.7, 1.0, 0.2]);
    let step = m.decode_step(&enc, &hook, 1, &enc.final_state).unwrap();
    assert_eq!(step.switch, 1.0);
    assert_eq!(step.output_dist, step.gen_dist);
}

#[test]
fn empty_support_falls_back_to_generation() {
    let m = toy_model(6, 6);
    let enc = m.encode(&[5, 6, 7]).unwrap();
    let hook = apply_prior(&[0.5, 0.5, 0.5], &[0, 1, 2]).unwrap();
    let step = m.decode_step(&enc, &hook, 1, &enc.final_state).unwrap();
    assert!(step.copy_support_empty);
    assert_eq!(step.switch, 1.0);
    assert_eq!(step.output_dist, step.gen_dist);
    assert!(step.copy_dist.iter().all(|&c| c == 0.0));
}

#[test]
fn hook_length_must_match_source() {
    let m = toy_model(4, 7);
    let enc = m.encode(&[5, 6, 7]).unwrap();
    let hook = HookState::free(vec![1.0; 2]);
    assert!(matches!(
        m.decode_step(&enc, &hook, 1, &enc.final_state),
        Err(ModelError::LengthMismatch {
            expected: 3,
            got: 2
        })
    ));
}

#[test]
fn mixture_normalizes_and_matches_recombination() {
    let mut prng = Prng::new(99);
    for seed in 0..1000u64 {
        let m = toy_model(4, seed);
        let n = 2 + prng.below(5);
        let ids: Vec<usize> = (0..n).map(|_| 5 + prng.below(7)).collect();
        let enc = m.encode(&ids).unwrap();
        let probs: Vec<f64> = (0..n).map(|_| prng.uniform()).collect();
        let deselected: Vec<usize> = (0..n).filter(|_| prng.uniform() < 0.4).collect();
        let hook = apply_prior(&probs, &deselected).unwrap();
        let step = m
            .decode_step(&enc, &hook, 1 + prng.below(10), &enc.final_state)
            .unwrap();
        assert!((step.output_dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((step.attention.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        if !step.copy_support_empty {
            assert!((step.copy_dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for &d in &deselected {
            assert_eq!(step.copy_dist[d].to_bits(), 0.0f64.to_bits());
        }
        let again = recombine(&step, &enc.source_ids).unwrap();
        for (a, b) in again.iter().zip(&step.output_dist) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn decode_step_is_deterministic() {
    let m = toy_model(6, 8);
    let enc = m.encode(&[5, 9, 7, 6]).unwrap();
    let hook = HookState::free(vec![0.3, 1.0, 0.0, 0.9]);
    let a = m.decode_step(&enc, &hook, 5, &enc.final_state).unwrap();
    let b = m.decode_step(&enc, &hook, 5, &enc.final_state).unwrap();
    assert_eq!(a, b);
}

#[test]
fn decode_step_loss_gradients_match_finite_differences() {
    let m = toy_model(4, 10);
    let ids = [5, 6, 7, 11];
    let hook = HookState::free(vec![1.0, 0.4, 0.0, 1.0]);
    let err = grad_check(
        |tape: &mut Tape, params: &ParamStore| -> Result<Var, ModelError> {
            let net = ForwardNet::bind(tape, params)?;
            let enc = net.encode(tape, &ids)?;
            let step = net.step(tape, &enc, &hook, 1, enc.final_state)?;
            let p = tape.gather(step.output_dist, &[7])?;
            let lp = tape.log(p)?;
            Ok(tape.affine(lp, -1.0, 0.0)?)
        },
        &m.params,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn checkpoint_roundtrip() {
    let m = toy_model(5, 12);
    let bytes = m.to_checkpoint().unwrap();
    let back = SummarizerModel::from_checkpoint(&bytes).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.to_checkpoint().unwrap(), bytes);
}
