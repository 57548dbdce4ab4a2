use gvecf::eval::{evaluate, top_k, EvalSplit};
use gvecf::graph::build_laplacian;
use gvecf::io::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use gvecf::io::dataset::{load_dir, write_split};
use gvecf::io::{generate_synthetic, SynthConfig};
use gvecf::kernel::xavier_init;
use gvecf::ngcf::{InitMode, PropagationConfig};
use gvecf::trainer::{grid_search, initial_embeddings, train, HyperGrid, TrainConfig};
use gvecf::vgae::{train_vgae, EncoderConfig};
use gvecf::{DenseMatrix, Model};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_split(seed: u64) -> gvecf::io::DatasetSplit {
    generate_synthetic(&SynthConfig {
        n_users: 40,
        n_items: 50,
        intra_p: 0.4,
        inter_p: 0.05,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 128,
        epochs: 3,
        lr: 0.01,
        seed,
        eval_every: 1,
        ..Default::default()
    }
}

fn prop(d: usize) -> PropagationConfig {
    PropagationConfig {
        layer_dims: vec![d, d],
        ..Default::default()
    }
}

#[test]
fn split_files_round_trip() {
    let ds = small_split(1);
    let dir = tempfile::tempdir().unwrap();
    write_split(&ds, dir.path()).unwrap();
    let back = load_dir(dir.path()).unwrap();
    assert_eq!(back.train, ds.train);
    assert_eq!(back.test, ds.test);
    assert_eq!(back.stats(), ds.stats());
}

#[test]
fn trained_model_checkpoint_round_trips_bitwise() {
    let ds = small_split(2);
    let z0 = xavier_init::<f64, _>(ds.train.n_nodes(), 6, &mut ChaCha8Rng::seed_from_u64(2));
    let out = train(&ds.train, z0, &prop(6), &quick(2), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &Checkpoint::from_model(&out.model, "seed=2\n", 3)).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.epoch, 3);
    let model: Model = loaded.to_model().unwrap();
    assert_eq!(model, out.model);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn embeddings_checkpoint_feeds_training() {
    let ds = small_split(3);
    let enc = EncoderConfig {
        hidden_dims: vec![16],
        latent_dim: 6,
        epochs: 20,
        seed: 3,
        ..Default::default()
    };
    let pre = train_vgae::<f64>(&ds.train, &enc).unwrap();
    let ck = Checkpoint::from_bytes(&Checkpoint::from_embeddings(&pre.embeddings, "", 20).to_bytes()).unwrap();
    let ve = ck.to_embeddings::<f64>().unwrap();
    assert_eq!(ve, pre.embeddings);
    let direct = initial_embeddings::<f64>(&ds.train, InitMode::Variational, 6, &enc, false, 3).unwrap();
    assert_eq!(direct, ve.mu);
    let out = train(&ds.train, ve.mu, &prop(6), &quick(3), Some(&ds.eval_split().unwrap())).unwrap();
    assert!(out.history.iter().all(|h| h.recall.is_some()));
}

#[test]
fn evaluation_never_ranks_training_items() {
    let ds = small_split(4);
    let split = ds.eval_split().unwrap();
    let z0 = xavier_init::<f64, _>(ds.train.n_nodes(), 5, &mut ChaCha8Rng::seed_from_u64(4));
    let out = train(&ds.train, z0, &prop(5), &quick(4), None).unwrap();
    let state = out.model.propagate(&build_laplacian(&ds.train)).unwrap();
    for u in 0..ds.n_users() {
        let scores = gvecf::ngcf::score_all_items(&state, u).unwrap();
        let ranked = top_k(&scores, ds.train.items_of(u), 20);
        assert!(ranked.iter().all(|i| !ds.train.contains(u, *i)));
    }
    let a = evaluate(&out.model, &build_laplacian(&ds.train), &split, 20).unwrap();
    let b = evaluate(&out.model, &build_laplacian(&ds.train), &split, 20).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n_users, split.n_test_users());
}

#[test]
fn grid_prefers_the_stable_learning_rate() {
    let ds = small_split(5);
    let validation: EvalSplit = ds.validation_split(0.2, 5).unwrap();
    let z0: DenseMatrix<f64> = xavier_init(ds.n_users() + ds.n_items(), 6, &mut ChaCha8Rng::seed_from_u64(5));
    let template = TrainConfig {
        epochs: 8,
        ..quick(5)
    };
    let grid = HyperGrid {
        lrs: vec![1e6, 0.01],
        regs: vec![1e-5],
        node_dropouts: vec![0.1],
    };
    let result = grid_search(&validation.train, &z0, &prop(6), &template, &grid, &validation).unwrap();
    assert_eq!(result.rows.len(), grid.len());
    assert_eq!(result.best.lr, 0.01, "{:?}", result.rows);
}
