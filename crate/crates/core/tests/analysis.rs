use std::collections::{BTreeMap, BTreeSet};

use ctxppi_core::analysis::*;
use ctxppi_core::kg::{assemble_metagraph, ContextGraph, GlobalPpi, KnowledgeGraph};
use ctxppi_core::metrics::RankingMetrics;
use ctxppi_core::model::{forward, init_params, EmbeddingTable, ModelConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Entries = BTreeMap<String, BTreeMap<String, Vec<f64>>>;

fn table(entries: Entries) -> EmbeddingTable {
    EmbeddingTable::from_parts(entries, BTreeMap::new()).unwrap()
}

fn random_vec(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_entries(n_genes: usize, n_ctx: usize, d: usize, seed: u64) -> Entries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = Entries::new();
    for c in 0..n_ctx {
        for g in 0..n_genes {
            if rng.gen_bool(0.7) {
                e.entry(format!("c{c}"))
                    .or_default()
                    .insert(format!("g{g:02}"), random_vec(d, &mut rng));
            }
        }
    }
    e
}

#[test]
fn cosine_examples() {
    assert!((cosine(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(cosine(&[1.0, 0.0], &[0.0, 4.0]).unwrap(), 0.0);
    let c = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
    assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    assert_eq!(
        cosine(&[0.0, 0.0], &[1.0, 0.0]),
        Err(AnalysisError::DegenerateVector)
    );
}

#[test]
fn identical_embeddings_give_all_ones() {
    let mut e = Entries::new();
    for c in ["a", "b", "c"] {
        e.entry(c.into())
            .or_default()
            .insert("G".into(), vec![0.2, 0.4, -1.0]);
    }
    let m = protein_context_similarity("G", &table(e)).unwrap();
    assert_eq!(m.len(), 3);
    for row in &m.values {
        for &v in row {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn two_contexts_and_too_few() {
    let mut e = Entries::new();
    e.entry("a".into())
        .or_default()
        .insert("G".into(), vec![1.0, 0.0]);
    e.entry("b".into())
        .or_default()
        .insert("G".into(), vec![1.0, 1.0]);
    e.entry("b".into())
        .or_default()
        .insert("H".into(), vec![1.0, 1.0]);
    let t = table(e);
    let m = protein_context_similarity("G", &t).unwrap();
    assert_eq!(m.len(), 2);
    assert!(m.max_diagonal_error() < 1e-12);
    assert_eq!(
        protein_context_similarity("H", &t),
        Err(AnalysisError::InsufficientContexts {
            gene: "H".into(),
            found: 1
        })
    );
}

#[test]
fn clustering_places_planted_groups_together() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let centers = [
        random_vec(6, &mut rng),
        random_vec(6, &mut rng),
        random_vec(6, &mut rng),
    ];
    let mut e = Entries::new();
    // Contexts interleave the groups by name: c00 -> group 0, c01 -> group 1, ...
    for c in 0..12 {
        let z: Vec<f64> = centers[c % 3]
            .iter()
            .map(|x| x + 0.05 * rng.gen_range(-1.0..1.0))
            .collect();
        e.entry(format!("c{c:02}"))
            .or_default()
            .insert("G".into(), z);
    }
    let m = protein_context_similarity("G", &table(e)).unwrap();
    let groups: Vec<usize> = m
        .labels
        .iter()
        .map(|l| l[1..].parse::<usize>().unwrap() % 3)
        .collect();
    let switches = groups.windows(2).filter(|w| w[0] != w[1]).count();
    assert_eq!(switches, 2, "leaf order {:?}", m.labels);
}

fn meta_kg() -> KnowledgeGraph {
    let names: Vec<String> = (0..8).map(|i| format!("P{i}")).collect();
    let pairs: Vec<(String, String)> = (0..7)
        .map(|i| (names[i].clone(), names[i + 1].clone()))
        .collect();
    let (global, _) = GlobalPpi::from_pairs(pairs);
    let path: Vec<(usize, usize)> = (0..7).map(|i| (i, i + 1)).collect();
    let hierarchy: BTreeMap<String, String> =
        (0..6).map(|i| (format!("s{i}"), "T".to_string())).collect();
    let lr: BTreeSet<(String, String)> = [("s0", "s1"), ("s2", "s3"), ("s4", "s5")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    let contexts = (0..6)
        .map(|i| ContextGraph::new(format!("s{i}"), (0..8).collect(), path.clone()).unwrap())
        .collect();
    KnowledgeGraph::new(
        global,
        contexts,
        assemble_metagraph(&lr, &hierarchy).unwrap(),
    )
    .unwrap()
}

#[test]
fn cell_similarity_over_metagraph() {
    let kg = meta_kg();
    let mut connected = Vec::new();
    let mut disconnected = Vec::new();
    for seed in 0..10 {
        let cfg = ModelConfig {
            latent_dim: 8,
            seed,
            ..Default::default()
        };
        let t = forward(&kg, &init_params(&cfg, &kg).unwrap(), &cfg).unwrap();
        let m = cell_similarity(&t).unwrap();
        assert_eq!(m.len(), 7);
        assert!(m.max_asymmetry() < 1e-12 && m.max_diagonal_error() < 1e-9);
        for a in 0..6 {
            for b in a + 1..6 {
                let v = m.get(&format!("s{a}"), &format!("s{b}")).unwrap();
                if a % 2 == 0 && b == a + 1 {
                    connected.push(v);
                } else {
                    disconnected.push(v);
                }
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&connected) > mean(&disconnected),
        "{} vs {}",
        mean(&connected),
        mean(&disconnected)
    );
}

#[test]
fn single_subtype_metagraph_is_two_by_two() {
    let cells: BTreeMap<String, Vec<f64>> = [
        ("s".to_string(), vec![1.0, 2.0]),
        ("T".to_string(), vec![0.5, -1.0]),
    ]
    .into();
    let mut e = Entries::new();
    e.entry("s".into())
        .or_default()
        .insert("G".into(), vec![1.0, 0.0]);
    let t = EmbeddingTable::from_parts(e, cells).unwrap();
    let m = cell_similarity(&t).unwrap();
    assert_eq!(m.len(), 2);
    assert!(m.to_csv().starts_with("label,"));
    assert!(m.to_svg("cells").contains("<svg"));
}

#[test]
fn shared_gene_aligned_with_centroid_scores_zero() {
    let mut e = Entries::new();
    for c in ["a", "b", "c"] {
        e.entry(c.into())
            .or_default()
            .insert("G".into(), vec![1.0, 1.0]);
        e.entry(c.into())
            .or_default()
            .insert("H".into(), vec![2.0, 2.0]);
    }
    let scores = marker_contrast(&table(e)).unwrap();
    assert_eq!(scores.len(), 6);
    assert!(scores.iter().all(|s| s.contrast.abs() < 1e-12));
}

/// Context `c{k}` has its own direction; gene `SPEC` follows that direction
/// in `c0` only.
fn specific_gene_entries(seed: u64) -> Entries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<Vec<f64>> = (0..4).map(|_| random_vec(8, &mut rng)).collect();
    let mut e = Entries::new();
    for (k, dir) in dirs.iter().enumerate() {
        let ctx = e.entry(format!("c{k}")).or_default();
        for g in 0..15 {
            let z: Vec<f64> = dir
                .iter()
                .map(|x| x + 0.8 * rng.gen_range(-1.0..1.0))
                .collect();
            ctx.insert(format!("g{g:02}"), z);
        }
        let spec = if k == 0 {
            dir.iter()
                .map(|x| x + 0.05 * rng.gen_range(-1.0..1.0))
                .collect()
        } else {
            random_vec(8, &mut rng)
        };
        ctx.insert("SPEC".into(), spec);
    }
    e
}

#[test]
fn context_specific_gene_beats_median() {
    let scores = marker_contrast(&table(specific_gene_entries(21))).unwrap();
    let mut c0: Vec<f64> = scores
        .iter()
        .filter(|s| s.context == "c0")
        .map(|s| s.contrast)
        .collect();
    let spec = scores
        .iter()
        .find(|s| s.context == "c0" && s.gene == "SPEC")
        .unwrap()
        .contrast;
    c0.sort_by(f64::total_cmp);
    let median = c0[c0.len() / 2];
    assert!(spec > median);
    assert!(marker_csv(&scores).starts_with("context,rank,gene,contrast\nc0,1,"));
}

#[test]
fn marker_contrast_ignores_context_naming() {
    let e = specific_gene_entries(4);
    // Reverse the context names so enumeration order changes.
    let renamed: Entries = e
        .iter()
        .map(|(c, v)| {
            (
                format!("z{}", 9 - c[1..].parse::<usize>().unwrap()),
                v.clone(),
            )
        })
        .collect();
    let a = marker_contrast(&table(e)).unwrap();
    let b = marker_contrast(&table(renamed)).unwrap();
    let key = |ctx: &str| format!("z{}", 9 - ctx[1..].parse::<usize>().unwrap());
    let bmap: BTreeMap<(String, String), f64> = b
        .iter()
        .map(|s| ((s.context.clone(), s.gene.clone()), s.contrast))
        .collect();
    for s in &a {
        let other = bmap[&(key(&s.context), s.gene.clone())];
        assert!((s.contrast - other).abs() < 1e-12);
    }
}

#[test]
fn random_walk_separates_cliques() {
    let mut pairs = Vec::new();
    for base in [0, 10] {
        for a in base..base + 10 {
            for b in a + 1..base + 10 {
                pairs.push((format!("n{a:02}"), format!("n{b:02}")));
            }
        }
    }
    let (global, _) = GlobalPpi::from_pairs(pairs);
    let cfg = RandomWalkConfig {
        dim: 4,
        seed: 1,
        ..Default::default()
    };
    let emb = random_walk_embeddings(&global, &cfg).unwrap();
    assert_eq!(emb.vectors.len(), 20);
    assert_eq!(emb, random_walk_embeddings(&global, &cfg).unwrap());
    let (mut within, mut nw, mut across, mut na) = (0.0, 0, 0.0, 0);
    for i in 0..20 {
        for j in i + 1..20 {
            let c = cosine(&emb.vectors[i], &emb.vectors[j]).unwrap();
            if (i < 10) == (j < 10) {
                within += c;
                nw += 1;
            } else {
                across += c;
                na += 1;
            }
        }
    }
    assert!(within / nw as f64 > across / na as f64);

    let too_big = RandomWalkConfig {
        dim: 21,
        ..cfg.clone()
    };
    assert!(matches!(
        random_walk_embeddings(&global, &too_big),
        Err(AnalysisError::Contract(_))
    ));
}

#[test]
fn random_walk_replicates_into_contexts() {
    let kg = meta_kg();
    let emb = random_walk_embeddings(
        &kg.global,
        &RandomWalkConfig {
            dim: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let t = emb.replicate(&kg).unwrap();
    assert_eq!(t.n_protein_entries(), kg.total_protein_representations());
    assert_eq!(t.protein("s0", "P3"), t.protein("s5", "P3"));
}

fn metrics(v: f64) -> RankingMetrics {
    RankingMetrics {
        ap5: v,
        ap10: v,
        auprc: v,
        auroc: v,
        p5: v,
        p10: v,
        r5: v,
        r10: v,
    }
}

#[test]
fn table_two_percentage() {
    assert_eq!(win_percentage(34, 48), 70.83);
    let model: BTreeMap<String, Option<RankingMetrics>> = (0..48)
        .map(|i| {
            (
                format!("s{i:02}"),
                Some(metrics(if i < 34 { 0.9 } else { 0.5 })),
            )
        })
        .collect();
    let base: BTreeMap<String, Option<RankingMetrics>> = model
        .keys()
        .map(|k| (k.clone(), Some(metrics(0.5))))
        .collect();
    let r = compare_models(&model, &base).unwrap();
    assert_eq!(r.metrics.len(), 8);
    let ap5 = r.get("ap5").unwrap();
    assert_eq!((ap5.wins, ap5.total, ap5.percentage), (34, 48, 70.83));
    assert!(r.to_csv().contains("ap5,34,48,70.83\n"));

    let same = compare_models(&base, &base).unwrap();
    assert!(same.metrics.iter().all(|m| m.percentage == 0.0));
    let better: BTreeMap<_, _> = base
        .keys()
        .map(|k| (k.clone(), Some(metrics(0.6))))
        .collect();
    let all = compare_models(&better, &base).unwrap();
    assert!(all.metrics.iter().all(|m| m.percentage == 100.0));

    let mut fewer = base.clone();
    fewer.remove("s00");
    assert!(matches!(
        compare_models(&model, &fewer),
        Err(AnalysisError::Contract(_))
    ));
}

/// Rotation in the `(i, j)` plane.
fn rotate(v: &mut [f64], i: usize, j: usize, theta: f64) {
    let (a, b) = (v[i], v[j]);
    v[i] = theta.cos() * a - theta.sin() * b;
    v[j] = theta.sin() * a + theta.cos() * b;
}

proptest! {
    #[test]
    fn cosine_is_scale_invariant(seed in any::<u64>(), alpha in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_vec(7, &mut rng);
        let v = random_vec(7, &mut rng);
        let scaled: Vec<f64> = u.iter().map(|x| alpha * x).collect();
        prop_assert!((cosine(&scaled, &v).unwrap() - cosine(&u, &v).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn similarity_matrices_are_symmetric(seed in any::<u64>(), n_ctx in 2usize..8) {
        let t = table(random_entries(6, n_ctx, 5, seed));
        for g in t.proteins() {
            if let Ok(m) = protein_context_similarity(g, &t) {
                prop_assert!(m.max_asymmetry() < 1e-9);
                prop_assert!(m.max_diagonal_error() < 1e-9);
                let mut sorted = m.labels.clone();
                sorted.sort();
                let expected: Vec<String> = t.contexts_of(g).iter().map(|(c, _)| c.to_string()).collect();
                prop_assert_eq!(sorted, expected);
            }
        }
    }

    #[test]
    fn marker_contrast_is_rotation_invariant(seed in any::<u64>(), angles in proptest::collection::vec(-3.0f64..3.0, 3)) {
        let e = random_entries(6, 3, 4, seed);
        let base = marker_contrast(&table(e.clone())).unwrap();
        let rotated: Entries = e.into_iter().map(|(c, genes)| {
            let genes = genes.into_iter().map(|(g, mut z)| {
                rotate(&mut z, 0, 1, angles[0]);
                rotate(&mut z, 1, 2, angles[1]);
                rotate(&mut z, 2, 3, angles[2]);
                (g, z)
            }).collect();
            (c, genes)
        }).collect();
        let after = marker_contrast(&table(rotated)).unwrap();
        prop_assert_eq!(base.len(), after.len());
        let after: BTreeMap<(String, String), f64> =
            after.into_iter().map(|m| ((m.context, m.gene), m.contrast)).collect();
        for a in &base {
            prop_assert!((a.contrast - after[&(a.context.clone(), a.gene.clone())]).abs() < 1e-9);
        }
    }
}
