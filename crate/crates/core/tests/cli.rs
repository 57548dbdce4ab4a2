use std::fs;
use std::path::Path;

use gvecf::cli::run;
use gvecf::eval::random_recall_expected;
use gvecf::io::dataset::load_dir;

fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["gvecf"];
    argv.extend_from_slice(args);
    run(argv)
}

fn synth(dir: &Path) -> String {
    let d = dir.join("data");
    let d = d.to_str().unwrap().to_string();
    assert_eq!(cli(&["gensynth", "--users", "80", "--items", "90", "--seed", "3", "--out", &d]), 0);
    d
}

const SMALL: [&str; 10] = [
    "--embed-size", "8", "--layers", "8,8", "--batch-size", "256", "--set", "pretrain_epochs=30", "--set", "eval_every=2",
];

#[test]
fn usage_errors_exit_nonzero() {
    assert_eq!(cli(&["train", "--no-such-flag"]), 2);
    assert_eq!(cli(&["frobnicate"]), 2);
    assert_eq!(cli(&["stats", "--dataset", "/definitely/not/here"]), 1);
    assert_eq!(cli(&["train", "--set", "bogus_key=1", "--dataset", "x"]), 1);
    assert_eq!(cli(&["train", "--node-dropout", "1.5", "--dataset", "x"]), 1);
}

#[test]
fn stats_on_generated_data() {
    let tmp = tempfile::tempdir().unwrap();
    let d = synth(tmp.path());
    assert_eq!(cli(&["stats", "--dataset", &d]), 0);
    let s = load_dir(&d).unwrap().stats();
    assert_eq!((s.n_users, s.n_items), (80, 90));
    assert!((s.density - s.n_interactions as f64 / 7200.0).abs() < 1e-10);
}

#[test]
fn xavier_and_variational_runs_give_overlayable_histories() {
    let tmp = tempfile::tempdir().unwrap();
    let d = synth(tmp.path());
    let mut headers = Vec::new();
    for init in ["xavier", "variational"] {
        let out = tmp.path().join(init);
        let mut args = vec!["train", "--dataset", &d, "--init", init, "--epochs", "4", "--lr", "0.01", "--seed", "1"];
        args.extend_from_slice(&SMALL);
        let out_s = out.to_str().unwrap().to_string();
        args.extend_from_slice(&["--out", &out_s]);
        assert_eq!(cli(&args), 0);
        let history = fs::read_to_string(out.join("history.csv")).unwrap();
        let lines: Vec<&str> = history.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[2].split(',').nth(2).is_some_and(|r| !r.is_empty()), "epoch 2 evaluated: {}", lines[2]);
        headers.push(lines[0].to_string());
        let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
        assert!(manifest.contains(&format!("init={init}")));
        assert!(manifest.contains("seed=1"));
        assert!(out.join("model.ckpt").exists() && out.join("metrics.json").exists());
    }
    assert_eq!(headers[0], "epoch,loss,recall,ndcg,seconds");
    assert_eq!(headers[0], headers[1]);
}

#[test]
fn untrained_xavier_model_scores_near_random() {
    let tmp = tempfile::tempdir().unwrap();
    let d = synth(tmp.path());
    let out = tmp.path().join("untrained");
    let o = out.to_str().unwrap();
    assert_eq!(cli(&["train", "--dataset", &d, "--init", "xavier", "--epochs", "0", "--seed", "4", "--out", o]), 0);
    let ckpt = out.join("model.ckpt");
    let eval_dir = tmp.path().join("eval");
    assert_eq!(
        cli(&["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", &d, "--out", eval_dir.to_str().unwrap()]),
        0
    );
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval_dir.join("metrics.json")).unwrap()).unwrap();
    let recall = report["recall"].as_f64().unwrap();
    let split = load_dir(&d).unwrap().eval_split().unwrap();
    let random = random_recall_expected(&split, 20);
    assert!(recall <= 3.0 * random && recall >= random / 3.0, "{recall} vs random {random}");
    assert_eq!(report["k"], 20);
}

#[test]
fn pretrain_then_train_from_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let d = synth(tmp.path());
    let pre = tmp.path().join("pre");
    let p = pre.to_str().unwrap();
    assert_eq!(cli(&["pretrain", "--dataset", &d, "--init", "gae", "--embed-size", "8", "--epochs", "15", "--out", p]), 0);
    assert_eq!(cli(&["pretrain", "--dataset", &d, "--init", "xavier", "--out", p]), 1);
    let history = fs::read_to_string(pre.join("pretrain_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 16);
    let emb = pre.join("embeddings.ckpt");
    let out = tmp.path().join("train");
    let mut args = vec!["train", "--dataset", &d, "--epochs", "2", "--seed", "2"];
    args.extend_from_slice(&SMALL);
    let (e, o) = (emb.to_str().unwrap().to_string(), out.to_str().unwrap().to_string());
    args.extend_from_slice(&["--embeddings", &e, "--out", &o]);
    assert_eq!(cli(&args), 0);
    assert!(out.join("model.ckpt").exists());
}

#[test]
fn gridsearch_writes_full_table() {
    let tmp = tempfile::tempdir().unwrap();
    let d = synth(tmp.path());
    let out = tmp.path().join("grid");
    let o = out.to_str().unwrap();
    let code = cli(&[
        "gridsearch", "--dataset", &d, "--init", "xavier", "--embed-size", "8", "--layers", "8", "--epochs", "2",
        "--batch-size", "256", "--set", "grid_lr=0.01,0.001", "--set", "grid_reg=0.00001", "--set",
        "grid_node_dropout=0.1,0.2", "--out", o,
    ]);
    assert_eq!(code, 0);
    let table = fs::read_to_string(out.join("grid.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 4);
    assert!(fs::read_to_string(out.join("best.cfg")).unwrap().contains("grid_lr=0.01,0.001"));
}
