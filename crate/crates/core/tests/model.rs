use normshare::data::{build_vocabularies, TaskDataset, TaskKind, TokenPair, Vocabulary};
use normshare::model::{
    build_model, load_checkpoint, save_checkpoint, Component, ComponentParams, HyperParams, Mode,
    ModelTask, MultiTaskModel, SharingConfig,
};
use numcore::{gradient_check_with, seeded_rng, FiniteDifference, ParamId, Tape, Tensor};

fn vocab_of_size(n: usize) -> Vocabulary {
    // four specials plus n - 4 letters
    Vocabulary::from_symbols((0..n - 4).map(|i| char::from(b'a' + i as u8).to_string()))
}

fn tasks(n: usize) -> Vec<ModelTask> {
    (0..n)
        .map(|i| ModelTask::new(format!("task{i}"), TaskKind::Normalization, "xx"))
        .collect()
}

fn model(
    config: &str,
    n_tasks: usize,
    embed: usize,
    hidden: usize,
    vocab: usize,
) -> MultiTaskModel<f64> {
    let v = vocab_of_size(vocab);
    build_model(
        SharingConfig::parse(config).unwrap(),
        tasks(n_tasks),
        v.clone(),
        v,
        HyperParams::tiny(embed, hidden),
        11,
    )
    .unwrap()
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let m = model("", 1, 8, 12, 20);
    let pairs = [TokenPair::new("abc", "abd"), TokenPair::new("fedcb", "fe")];
    let refs: Vec<&TokenPair> = pairs.iter().collect();
    let ids: Vec<ParamId> = m.params().ids().collect();
    let tensors: Vec<Tensor<f64>> = ids.iter().map(|&id| m.params().get(id).clone()).collect();
    // gradients of deep LSTM weights are ~1e-9, below the rounding noise of
    // an h = 1e-5 central difference; the extrapolated estimator resolves them
    let err = gradient_check_with(
        |t, vars| {
            for (&id, &v) in ids.iter().zip(vars) {
                t.bind(id, v)?;
            }
            m.forward_loss(t, 0, &refs, &mut Mode::Eval)
                .map_err(|e| numcore::NumError::Contract(e.to_string()))
        },
        &tensors,
        FiniteDifference::Richardson { step: 1e-2 },
    )
    .unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn sharing_accounting_for_seadp() {
    let full = model("SEATDP", 2, 6, 8, 12);
    let seadp = model("SEADP", 2, 6, 8, 12);
    let t_size = 12 * 6;
    assert_eq!(seadp.total_parameters(), full.total_parameters() + t_size);
    let counts = seadp.count_parameters();
    assert_eq!(counts[&Component::T], (2, t_size));
    assert_eq!(counts[&Component::S], (1, t_size));
}

#[test]
fn accounting_formula_over_all_configs() {
    for config in SharingConfig::enumerate() {
        let m = model(&config.to_string(), 3, 4, 6, 10);
        let counts = m.count_parameters();
        let total: usize = counts.values().map(|&(n, s)| n * s).sum();
        assert_eq!(total, m.total_parameters());
        for c in Component::ALL {
            let expected = if config.shares(c) { 1 } else { 3 };
            assert_eq!(counts[&c].0, expected, "{config} {c}");
        }
    }
}

#[test]
fn zero_weights_give_zero_states_and_uniform_logits() {
    let mut m = model("", 1, 4, 6, 30);
    m.fill_parameters(0.0);
    let mut t = Tape::new();
    let enc = m
        .encode(&mut t, 0, &[vec![4, 5, 6]], &mut Mode::Eval)
        .unwrap();
    assert!(t.value(enc.states).iter().all(|&x| x == 0.0));
    let p = TokenPair::new("abc", "abc");
    let loss = m.forward_loss(&mut t, 0, &[&p], &mut Mode::Eval).unwrap();
    assert!((t.value(loss)[0] - 30f64.ln()).abs() < 1e-12);
}

#[test]
fn reversing_input_with_swapped_directions_reverses_states() {
    let m = model("", 1, 5, 8, 12);
    let mut swapped = m.clone();
    let ComponentParams::Encoder {
        forward, backward, ..
    } = *m.component(0, Component::E).unwrap()
    else {
        panic!("E is an encoder")
    };
    for (a, b) in [
        (forward.wx, backward.wx),
        (forward.wh, backward.wh),
        (forward.b, backward.b),
    ] {
        let (ta, tb) = (m.params().get(a).clone(), m.params().get(b).clone());
        *swapped.params_mut().get_mut(a) = tb;
        *swapped.params_mut().get_mut(b) = ta;
    }
    let input = vec![4, 7, 9];
    let reversed: Vec<usize> = input.iter().rev().copied().collect();
    // one tape per model: a tape caches parameter bindings by id
    let (mut ta, mut tb) = (Tape::new(), Tape::new());
    let a = m.encode(&mut ta, 0, &[input], &mut Mode::Eval).unwrap();
    let b = swapped
        .encode(&mut tb, 0, &[reversed], &mut Mode::Eval)
        .unwrap();
    let (sa, sb) = (ta.value(a.states).to_vec(), tb.value(b.states).to_vec());
    let half = 4;
    for pos in 0..3 {
        let row_a = &sa[pos * 8..pos * 8 + 8];
        let row_b = &sb[(2 - pos) * 8..(2 - pos) * 8 + 8];
        for k in 0..half {
            assert!((row_a[k] - row_b[half + k]).abs() < 1e-15);
            assert!((row_a[half + k] - row_b[k]).abs() < 1e-15);
        }
    }
}

#[test]
fn attention_weights_are_a_simplex() {
    let m = model("", 1, 5, 8, 12);
    let mut t = Tape::new();
    let enc = m
        .encode(&mut t, 0, &[vec![4, 5, 6, 7], vec![8]], &mut Mode::Eval)
        .unwrap();
    let mem = m.attention_memory(&mut t, 0, &enc).unwrap();
    let (ctx, w) = m.attend(&mut t, 0, &mem, enc.init.h).unwrap();
    assert_eq!(t.shape(ctx), &[2, 8]);
    let w = t.value(w).to_vec();
    assert!((w[..4].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(w[4], 1.0, "single real position takes all the weight");
    assert!(w[5..].iter().all(|&x| x == 0.0));
}

#[test]
fn identical_states_give_uniform_attention() {
    let m = model("", 1, 5, 8, 12);
    let mut t = Tape::new();
    let enc = m
        .encode(&mut t, 0, &[vec![4, 4, 4]], &mut Mode::Eval)
        .unwrap();
    // the bidirectional states differ by position, so attend over a constant memory
    let states = t.constant(vec![3, 8], vec![0.3; 24]).unwrap();
    let proj = t.constant(vec![3, 8], vec![0.1; 24]).unwrap();
    let mem = normshare::model::Memory {
        states,
        projected: proj,
        mask: None,
        batch: 1,
        len: 3,
    };
    let (_, w) = m.attend(&mut t, 0, &mem, enc.init.h).unwrap();
    for &x in t.value(w) {
        assert!((x - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn padding_does_not_change_per_sequence_loss() {
    let m = model("", 1, 5, 8, 12);
    let a = TokenPair::new("abcde", "abc");
    let b = TokenPair::new("fg", "fghij");
    let mut t = Tape::new();
    let (sa, na) = m.nll_sum(&mut t, 0, &[&a], &mut Mode::Eval).unwrap();
    let (sb, nb) = m.nll_sum(&mut t, 0, &[&b], &mut Mode::Eval).unwrap();
    let (sab, nab) = m.nll_sum(&mut t, 0, &[&a, &b], &mut Mode::Eval).unwrap();
    assert_eq!(na + nb, nab);
    assert!((t.value(sa)[0] + t.value(sb)[0] - t.value(sab)[0]).abs() < 1e-10);
    let (sba, _) = m.nll_sum(&mut t, 0, &[&b, &a], &mut Mode::Eval).unwrap();
    assert!((t.value(sab)[0] - t.value(sba)[0]).abs() < 1e-12);
}

#[test]
fn full_share_is_task_agnostic() {
    let m = model("SEATDP", 3, 5, 8, 12);
    let p = TokenPair::new("abc", "cab");
    let mut t = Tape::new();
    let losses: Vec<f64> = (0..3)
        .map(|task| {
            let l = m
                .forward_loss(&mut t, task, &[&p], &mut Mode::Eval)
                .unwrap();
            t.value(l)[0]
        })
        .collect();
    assert!(losses.iter().all(|&l| l.to_bits() == losses[0].to_bits()));
}

#[test]
fn dropout_only_in_training_mode() {
    let m = model("", 1, 5, 8, 12);
    let p = TokenPair::new("abc", "cab");
    let mut t = Tape::new();
    let e1 = m.forward_loss(&mut t, 0, &[&p], &mut Mode::Eval).unwrap();
    let e2 = m.forward_loss(&mut t, 0, &[&p], &mut Mode::Eval).unwrap();
    assert_eq!(t.value(e1), t.value(e2));
    let mut rng = seeded_rng(3);
    let tr = m
        .forward_loss(&mut t, 0, &[&p], &mut Mode::Train(&mut rng))
        .unwrap();
    assert_ne!(t.value(e1), t.value(tr));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let d = TaskDataset::new(
        "EN",
        TaskKind::G2p,
        "en",
        vec![TokenPair::new("house", "h aU s")],
    );
    let (src, tgt) = build_vocabularies(&[&d], None);
    let m: MultiTaskModel<f64> = build_model(
        SharingConfig::parse("SEADP").unwrap(),
        vec![
            ModelTask::new("EN", TaskKind::G2p, "en"),
            ModelTask::new("EN2", TaskKind::G2p, "en"),
        ],
        src,
        tgt,
        HyperParams::tiny(4, 6),
        99,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&m, &path).unwrap();
    let back: MultiTaskModel<f64> = load_checkpoint(&path).unwrap();
    assert_eq!(back.config, m.config);
    assert_eq!(back.tasks, m.tasks);
    assert_eq!(back.tgt_vocab, m.tgt_vocab);
    for ((_, n1, t1), (_, n2, t2)) in m.params().iter().zip(back.params().iter()) {
        assert_eq!(n1, n2);
        let bits = |t: &Tensor<f64>| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(t1), bits(t2));
    }
}
