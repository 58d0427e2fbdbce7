use std::fs;
use std::path::PathBuf;

use ctxppi::config::{ConfigError, RunConfig};

#[test]
fn cli_beats_file_beats_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.conf");
    fs::write(
        &file,
        "# run\nseed = 3\nepochs = 7\nlr = 0.5  # inline\nlabels = data/labels.tsv\n",
    )
    .unwrap();
    let mut c = RunConfig::default();
    c.apply_file(&file).unwrap();
    c.apply_args(&["--epochs", "9", "--mlp-hidden=4"]).unwrap();
    assert_eq!(c.seed, Some(3));
    assert_eq!(c.epochs, 9);
    assert_eq!(c.lr, 0.5);
    assert_eq!(c.mlp_hidden, 4);
    assert_eq!(c.latent_dim, RunConfig::default().latent_dim);
    assert_eq!(c.labels, Some(dir.path().join("data/labels.tsv")));
    c.validate().unwrap();
}

#[test]
fn seed_is_mandatory() {
    assert_eq!(
        RunConfig::default().validate(),
        Err(ConfigError::MissingSeed)
    );
}

#[test]
fn ratios_must_sum_to_one() {
    let mut c = RunConfig::default();
    c.apply_args(&["--seed", "1", "--train-ratio", "0.7"])
        .unwrap();
    assert!(matches!(c.validate(), Err(ConfigError::Invalid(_))));
    c.apply_args(&["--valid-ratio", "0.2"]).unwrap();
    c.validate().unwrap();
}

#[test]
fn bad_input_is_reported_with_location() {
    let mut c = RunConfig::default();
    assert_eq!(
        c.apply_args(&["--no-such-key", "1"]),
        Err(ConfigError::UnknownKey("no_such_key".into()))
    );
    assert!(matches!(
        c.apply_args(&["--epochs", "many"]),
        Err(ConfigError::BadValue { .. })
    ));
    assert!(matches!(
        c.apply_args(&["--epochs"]),
        Err(ConfigError::Invalid(_))
    ));
    match c.apply_text("seed = 1\nthis line is wrong\n", "x.conf", None) {
        Err(ConfigError::Parse {
            line, source_name, ..
        }) => {
            assert_eq!((line, source_name.as_str()), (2, "x.conf"))
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        c.apply_file(&PathBuf::from("/nonexistent/run.conf")),
        Err(ConfigError::Io { .. })
    ));
}

#[test]
fn derived_paths_follow_out() {
    let mut c = RunConfig::default();
    c.apply_args(&["--out", "runs/a"]).unwrap();
    assert_eq!(c.graph_dir(), PathBuf::from("runs/a/graph"));
    assert_eq!(c.labels_path(), PathBuf::from("runs/a/graph/labels.tsv"));
    assert_eq!(c.embeddings_dir(), PathBuf::from("runs/a/pretrain"));
    c.apply_args(&["--graph", "g"]).unwrap();
    assert_eq!(c.labels_path(), PathBuf::from("g/labels.tsv"));
}

#[test]
fn seed_flows_into_every_stage() {
    let mut c = RunConfig::default();
    c.apply_args(&["--seed", "11"]).unwrap();
    assert_eq!(c.model_config().seed, 11);
    assert_eq!(c.train_config().seed, 11);
    assert_eq!(c.mlp_config().seed, 11);
    assert_eq!(c.random_walk_config().seed, 11);
    assert_eq!(c.random_walk_config().dim, c.latent_dim);
}
