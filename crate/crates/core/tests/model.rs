use std::collections::{BTreeMap, BTreeSet};

use ctxppi_core::autodiff::{grad_check, sigmoid, xavier_limit, AutodiffError, Matrix, Tape, Var};
use ctxppi_core::kg::{assemble_metagraph, ContextGraph, GlobalPpi, KnowledgeGraph};
use ctxppi_core::model::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("P{i:02}")).collect()
}

/// Two contexts over a 12-protein global network, three metagraph nodes.
fn toy_kg(ctx_a_edges: Vec<(usize, usize)>) -> KnowledgeGraph {
    let p = names(12);
    let pairs: Vec<(String, String)> = (0..11).map(|i| (p[i].clone(), p[i + 1].clone())).collect();
    let (global, _) = GlobalPpi::from_pairs(pairs);
    let a = ContextGraph::new("sA", (0..6).collect(), ctx_a_edges).unwrap();
    let b = ContextGraph::new(
        "sB",
        (4..12).collect(),
        vec![
            (0, 1),
            (1, 2),
            (2, 3),
            (3, 4),
            (4, 5),
            (5, 6),
            (6, 7),
            (0, 7),
        ],
    )
    .unwrap();
    let hierarchy: BTreeMap<String, String> = [
        ("sA".to_string(), "Micro".to_string()),
        ("sB".to_string(), "Micro".to_string()),
    ]
    .into();
    let lr: BTreeSet<(String, String)> = [("sA".to_string(), "sB".to_string())].into();
    let meta = assemble_metagraph(&lr, &hierarchy).unwrap();
    KnowledgeGraph::new(global, vec![a, b], meta).unwrap()
}

fn ring6() -> Vec<(usize, usize)> {
    vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)]
}

fn small_config() -> ModelConfig {
    ModelConfig {
        latent_dim: 4,
        n_protein_layers: 2,
        n_attention_heads: 2,
        n_metagraph_layers: 1,
        seed: 7,
    }
}

#[test]
fn init_is_deterministic_and_xavier_bounded() {
    let kg = toy_kg(ring6());
    let cfg = ModelConfig::default();
    let a = init_params(&cfg, &kg).unwrap();
    let b = init_params(&cfg, &kg).unwrap();
    assert_eq!(a, b);
    assert_eq!(cfg.head_dim(), 16);
    for (name, m) in a.named_tensors() {
        if name.ends_with("features") || name == "broadcast_bias" {
            continue;
        }
        let limit = xavier_limit(m.rows(), m.cols());
        assert!(
            m.as_slice().iter().all(|v| v.abs() <= limit),
            "{name} exceeds {limit}"
        );
    }
    let other = init_params(&ModelConfig { seed: 8, ..cfg }, &kg).unwrap();
    assert_ne!(a, other);
}

#[test]
fn config_validation() {
    let bad = ModelConfig {
        latent_dim: 5,
        ..small_config()
    };
    assert!(matches!(bad.validate(), Err(ModelError::Config(_))));
    let zero = ModelConfig {
        n_metagraph_layers: 0,
        ..small_config()
    };
    assert!(zero.validate().is_err());
}

#[test]
fn single_node_attention_weight_is_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let layer = AttentionLayer::init(3, 1, 3, &mut rng);
    let h = Matrix::from_rows(&[vec![0.3, -0.2, 0.9]]).unwrap();
    let (out, _, weights) = context_attention_layer(&h, &[], &layer, true).unwrap();
    assert_eq!(weights[0].as_slice(), &[1.0]);
    let wh = h.matmul(&layer.heads[0].weight).unwrap();
    let expected = wh.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v });
    assert!(out.max_abs_diff(&expected) < 1e-12);
}

#[test]
fn isolated_nodes_are_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let layer = AttentionLayer::init(3, 2, 2, &mut rng);
    let h = Matrix::from_rows(&[vec![0.1, 0.2, 0.3], vec![-0.5, 0.4, 0.0]]).unwrap();
    let mut h2 = h.clone();
    h2.set(1, 0, 3.0);
    let (a, _, _) = context_attention_layer(&h, &[], &layer, true).unwrap();
    let (b, _, _) = context_attention_layer(&h2, &[], &layer, true).unwrap();
    assert_eq!(a.row(0), b.row(0));
    assert_ne!(a.row(1), b.row(1));
}

#[test]
fn star_center_weights_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layer = AttentionLayer::init(4, 2, 2, &mut rng);
    let h = Matrix::xavier_uniform(6, 4, &mut rng);
    let edges: Vec<(usize, usize)> = (1..6).map(|i| (0, i)).collect();
    let (_, index, weights) = context_attention_layer(&h, &edges, &layer, false).unwrap();
    for w in &weights {
        let center: f64 = index
            .dst
            .iter()
            .zip(w.as_slice())
            .filter(|(&d, _)| d == 0)
            .map(|(_, &a)| a)
            .sum();
        assert!((center - 1.0).abs() < 1e-9);
        // Direct evaluation of the center's softmax.
        let head = &layer.heads[weights.iter().position(|x| std::ptr::eq(x, w)).unwrap()];
        let z = h.matmul(&head.weight).unwrap();
        let score = |i: usize, j: usize| {
            let s: f64 = (0..z.cols())
                .map(|k| {
                    head.att_dst.get(k, 0) * z.get(i, k) + head.att_src.get(k, 0) * z.get(j, k)
                })
                .sum();
            if s > 0.0 {
                s
            } else {
                LEAKY_SLOPE * s
            }
        };
        let denom: f64 = (0..6).map(|j| score(0, j).exp()).sum();
        for (e, (&d, &s)) in index.dst.iter().zip(index.src.iter()).enumerate() {
            if d == 0 {
                assert!((w.as_slice()[e] - score(0, s).exp() / denom).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn missing_self_loop_is_an_invariant_violation() {
    let mut tape = Tape::new();
    let h = tape.constant(Matrix::zeros(2, 2));
    let w = tape.constant(Matrix::identity(2));
    let a = tape.constant(Matrix::zeros(2, 1));
    let heads = [HeadVars {
        weight: w,
        att_dst: a,
        att_src: a,
    }];
    let edges = EdgeIndex {
        n_nodes: 2,
        src: vec![0, 1].into(),
        dst: vec![1, 0].into(),
    };
    let err = attention_layer_on_tape(&mut tape, h, &edges, &heads, true, "t", &mut Vec::new());
    assert!(matches!(err, Err(ModelError::Invariant(_))));
}

#[test]
fn bridge_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let score = Matrix::xavier_uniform(3, 1, &mut rng);
    let weight = Matrix::xavier_uniform(3, 3, &mut rng);
    let one = Matrix::from_rows(&[vec![0.2, -0.4, 0.7]]).unwrap();
    let (msg, w) = bridge_pool(&one, &score, &weight).unwrap();
    assert_eq!(w, vec![1.0]);
    assert!(msg.max_abs_diff(&one.matmul(&weight).unwrap()) < 1e-15);

    let two = Matrix::from_rows(&[vec![0.2, -0.4, 0.7], vec![0.2, -0.4, 0.7]]).unwrap();
    let (_, w) = bridge_pool(&two, &score, &weight).unwrap();
    assert_eq!(w, vec![0.5, 0.5]);

    let empty = Matrix::zeros(0, 3);
    assert!(matches!(
        bridge_pool(&empty, &score, &weight),
        Err(ModelError::Contract(_))
    ));
}

proptest! {
    #[test]
    fn bridge_weights_are_a_distribution(
        rows in 1usize..8,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = Matrix::from_vec(rows, 3, (0..rows * 3).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let score = Matrix::xavier_uniform(3, 1, &mut rng);
        let weight = Matrix::xavier_uniform(3, 3, &mut rng);
        let (_, w) = bridge_pool(&h, &score, &weight).unwrap();
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn metagraph_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let layers = vec![AttentionLayer::init(4, 2, 2, &mut rng)];
    let cells = Matrix::xavier_uniform(3, 4, &mut rng);

    // No edges: each node is just its own projection.
    let alone = metagraph_propagate(&cells, &[], &layers).unwrap();
    for i in 0..3 {
        let single = Matrix::from_rows(&[cells.row(i).to_vec()]).unwrap();
        let r = metagraph_propagate(&single, &[], &layers).unwrap();
        assert_eq!(r.row(0), alone.row(i));
    }

    // Symmetric pair with equal inputs.
    let equal = Matrix::from_rows(&[cells.row(0).to_vec(), cells.row(0).to_vec()]).unwrap();
    let out = metagraph_propagate(&equal, &[(0, 1)], &layers).unwrap();
    assert!(out
        .row(0)
        .iter()
        .zip(out.row(1))
        .all(|(a, b)| (a - b).abs() < 1e-15));

    // Subtype 0 feeds celltype 2.
    let edges = [(0, 2), (1, 2)];
    let before = metagraph_propagate(&cells, &edges, &layers).unwrap();
    let mut moved = cells.clone();
    moved.set(0, 0, moved.get(0, 0) + 0.5);
    let after = metagraph_propagate(&moved, &edges, &layers).unwrap();
    assert!(before.row(2) != after.row(2));
}

#[test]
fn broadcast_examples() {
    let d = 3;
    let proteins = Matrix::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.0, 1.0, 1.0]]).unwrap();
    // W = [I; 0], zero subtype, zero bias -> leaky_relu(protein).
    let mut w = Matrix::zeros(2 * d, d);
    for i in 0..d {
        w.set(i, i, 1.0);
    }
    let zero = Matrix::zeros(1, d);
    let out = broadcast_cell_to_protein(&proteins, &zero, &w, &zero).unwrap();
    assert_eq!(out.shape(), (2, d));
    assert_eq!(out.row(0), &[0.5, -0.2, 2.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = Matrix::xavier_uniform(2 * d, d, &mut rng);
    let one = Matrix::from_rows(&[proteins.row(0).to_vec()]).unwrap();
    let s1 = Matrix::from_rows(&[vec![0.3, 0.1, -0.2]]).unwrap();
    let s2 = Matrix::from_rows(&[vec![-0.6, 0.4, 0.9]]).unwrap();
    let a = broadcast_cell_to_protein(&one, &s1, &w, &zero).unwrap();
    let b = broadcast_cell_to_protein(&one, &s2, &w, &zero).unwrap();
    assert_ne!(a, b);
}

#[test]
fn forward_covers_every_pair_and_node() {
    let kg = toy_kg(ring6());
    let cfg = small_config();
    let params = init_params(&cfg, &kg).unwrap();
    let table = forward(&kg, &params, &cfg).unwrap();
    assert_eq!(table.n_protein_entries(), 6 + 8);
    assert_eq!(
        table.n_protein_entries(),
        kg.total_protein_representations()
    );
    assert_eq!(table.cell_nodes(), &["Micro", "sA", "sB"]);
    assert!(table.is_finite());
    assert_eq!(table.dim(), 4);
    assert_eq!(table.protein_matrix().cols(), table.cell_matrix().cols());
    // P04 is active in both contexts and gets two distinct embeddings.
    let both = table.contexts_of("P04");
    assert_eq!(both.len(), 2);
    assert_ne!(both[0].1, both[1].1);
    assert_eq!(forward(&kg, &params, &cfg).unwrap(), table);
}

#[test]
fn forward_rejects_mismatched_params() {
    let kg = toy_kg(ring6());
    let cfg = small_config();
    let params = init_params_sized(&cfg, 3, 3).unwrap();
    assert!(matches!(
        forward(&kg, &params, &cfg),
        Err(ModelError::Mismatch(_))
    ));
}

#[test]
fn forward_reports_non_finite_stage() {
    let kg = toy_kg(ring6());
    let cfg = small_config();
    let mut params = init_params(&cfg, &kg).unwrap();
    params.protein_features.set(0, 0, f64::NAN);
    assert!(matches!(
        forward(&kg, &params, &cfg),
        Err(ModelError::Numerical {
            stage: "context_layers"
        })
    ));
}

#[test]
fn every_softmax_segment_sums_to_one() {
    let kg = toy_kg(ring6());
    let cfg = small_config();
    let params = init_params(&cfg, &kg).unwrap();
    let trace = forward_trace(&kg, &params, &cfg).unwrap();
    let stages: BTreeSet<&str> = trace.attention.iter().map(|a| a.0).collect();
    assert_eq!(
        stages,
        ["bridge", "context_layer", "final_layer", "metagraph"].into()
    );
    for (stage, w, seg) in &trace.attention {
        let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
        for (&s, &x) in seg.iter().zip(w) {
            *sums.entry(s).or_default() += x;
        }
        for (s, total) in sums {
            assert!((total - 1.0).abs() < 1e-9, "{stage} segment {s}: {total}");
        }
    }
}

#[test]
fn context_edits_do_not_leak_before_the_bridge() {
    let cfg = small_config();
    let base = toy_kg(ring6());
    let edited = toy_kg(vec![(0, 1), (2, 3), (1, 4)]);
    let params = init_params(&cfg, &base).unwrap();
    let a = forward_trace(&base, &params, &cfg).unwrap();
    let b = forward_trace(&edited, &params, &cfg).unwrap();
    // Rows 6.. belong to context sB.
    for r in 6..14 {
        assert_eq!(a.pre_bridge.row(r), b.pre_bridge.row(r));
    }
    assert_ne!(a.pre_bridge.row(0), b.pre_bridge.row(0));
}

#[test]
fn edge_score_examples() {
    assert_eq!(edge_score(&[0.0; 3], &[0.0; 3]).unwrap(), 0.5);
    assert_eq!(edge_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.5);
    let z = [1.0, 3.0];
    let s = edge_score(&z, &z).unwrap();
    assert!((s - 1.0 / (1.0 + (-10.0f64).exp())).abs() < 1e-15);
    assert!((s - 0.99995).abs() < 1e-5);
    assert!(edge_score(&[1.0], &[1.0, 2.0]).is_err());
}

/// Loss touching both protein and cell outputs through a fixed random
/// readout, so every parameter has a nonzero path.
fn readout_loss(
    tape: &mut Tape,
    kg: &KnowledgeGraph,
    pv: &ParamVars,
    cfg: &ModelConfig,
) -> Result<Var, AutodiffError> {
    let layout = GraphLayout::new(kg);
    let out = forward_on_tape(tape, &layout, pv, cfg).map_err(|e| match e {
        ModelError::Autodiff(a) => a,
        other => AutodiffError::ContractViolation(other.to_string()),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let p = tape.value(out.proteins).shape();
    let c = tape.value(out.cells).shape();
    let rp = tape.constant(Matrix::xavier_uniform(p.0, p.1, &mut rng));
    let rc = tape.constant(Matrix::xavier_uniform(c.0, c.1, &mut rng));
    let sp = tape.mul(out.proteins, rp)?;
    let sp = tape.sigmoid(sp);
    let sp = tape.sum(sp);
    let sc = tape.mul(out.cells, rc)?;
    let sc = tape.sum(sc);
    tape.add(sp, sc)
}

#[test]
fn full_model_gradient_check() {
    let kg = toy_kg(ring6());
    assert!(kg.total_protein_representations() <= 20);
    let cfg = small_config();
    let mut params = init_params(&cfg, &kg).unwrap();
    // Nonzero bias so the bias path is exercised away from the kink.
    params.broadcast_bias = Matrix::from_rows(&[vec![0.05, -0.03, 0.02, 0.01]]).unwrap();
    let n = params.named_tensors().len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let x = params.named_tensors()[i].1.clone();
        let err = grad_check(
            |tape, leaf| {
                let mut pv = ParamVars::register(tape, &params);
                *pv.vars_mut()[i] = leaf;
                readout_loss(tape, &kg, &pv, &cfg)
            },
            &x,
            1e-5,
        )
        .unwrap();
        worst = worst.max(err);
        assert!(err < 1e-4, "{}: {err}", params.named_tensors()[i].0);
    }
    assert!(worst.is_finite());
}

#[test]
fn backward_covers_every_parameter() {
    let kg = toy_kg(ring6());
    let cfg = small_config();
    let params = init_params(&cfg, &kg).unwrap();
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, &params);
    let loss = readout_loss(&mut tape, &kg, &pv, &cfg).unwrap();
    let grads = tape.backward(loss).unwrap();
    for (v, (name, m)) in pv.vars().into_iter().zip(params.named_tensors()) {
        let g = grads.get(v).unwrap();
        assert_eq!(g.shape(), m.shape(), "{name}");
        assert!(g.is_finite());
    }
    assert!(sigmoid(0.0) == 0.5);
}

#[test]
fn tensors_round_trip_through_load() {
    let kg = toy_kg(ring6());
    let cfg = small_config();
    let a = init_params(&cfg, &kg).unwrap();
    let mut b = init_params(
        &ModelConfig {
            seed: 1,
            ..cfg.clone()
        },
        &kg,
    )
    .unwrap();
    let values = a
        .named_tensors()
        .into_iter()
        .map(|(n, m)| (n, m.clone()))
        .collect();
    b.load_tensors(values).unwrap();
    assert_eq!(a, b);
    assert!(b.load_tensors(vec![]).is_err());
}
