//! Checkpoints, run records, report generation and the `kfgnet` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use kfgnet::classifier::{ClassifierConfig, ClassifierModel};
use kfgnet::harness::checkpoint::{header_len, save_classifier, save_localizer, tensor_record_len};
use kfgnet::harness::report::{emit_report, CURVE_SVG};
use kfgnet::harness::*;
use kfgnet::kernels::AdamState;
use kfgnet::localizer::{LocalizerConfig, LocalizerModel};
use kfgnet::params::Parameters;
use kfgnet::{Error, Tensor};

mod common;
use common::random;

fn tiny(dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        data_dir: dir.join("data"),
        out_dir: dir.join("run"),
        synth_videos: 10,
        synth_frames: 24,
        synth_width: 64,
        synth_height: 64,
        loc_epochs: 2,
        loc_batch_size: 4,
        loc_embed_dim: 8,
        loc_hidden_dim: 8,
        loc_head_dim: 4,
        clip_len: 16,
        geometry: Geometry::Compact,
        cls_epochs: 1,
        cls_epochs_late: 1,
        cls_batch_size: 4,
        folds: 2,
        ..ExperimentConfig::default()
    }
}

/// Every CSV under `dir`, keyed by relative path.
fn csvs(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.insert(
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}

#[test]
fn localizer_checkpoint_restores_bitwise_forward() {
    let dir = tempfile::tempdir().unwrap();
    let config = LocalizerConfig {
        feature_dim: 6,
        embed_dim: 4,
        hidden_dim: 3,
        head_dim: 3,
    };
    let model = LocalizerModel::new(config, 4);
    let mut state = AdamState::new(0.01, 0.0);
    state.step_count = 3;
    let path = dir.path().join("loc.ckpt");
    save_localizer(&path, &model, Some(&state)).unwrap();
    let (restored, opt) = load_checkpoint(&path).unwrap().into_localizer().unwrap();
    assert_eq!(restored, model);
    assert_eq!(opt.unwrap(), state);
    let inputs = kfgnet::localizer::LocalizerInputs {
        n_frames: 3,
        frames: vec![0, 1, 2],
        appearance: random(&[3, 6], 1),
        spatiotemporal: random(&[3, 5], 2),
    };
    let a = model.forward(&inputs).unwrap().probs;
    let b = restored.forward(&inputs).unwrap().probs;
    assert_eq!(
        a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn classifier_checkpoint_restores_bitwise_forward() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = ClassifierModel::new(ClassifierConfig::reduced(), 8, 0).unwrap();
    for (i, b) in model.buffers_mut().into_iter().enumerate() {
        *b = b.map(|v| v + 0.1 * (i + 1) as f64);
    }
    let path = dir.path().join("cls.ckpt");
    save_classifier(&path, &model, None).unwrap();
    let (restored, opt) = load_checkpoint(&path).unwrap().into_classifier().unwrap();
    assert!(opt.is_none());
    assert_eq!(restored, model);
    let x = random(&[2, 1, 8, 28, 28], 3);
    assert_eq!(model.predict(&x).unwrap(), restored.predict(&x).unwrap());
    assert!(load_checkpoint(&path).unwrap().into_localizer().is_err());
}

#[derive(Clone)]
struct Toy {
    a: Tensor,
    b: Tensor,
}

impl Parameters for Toy {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![("a".into(), &self.a), ("bb".into(), &self.b)]
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.a, &mut self.b]
    }
}

#[test]
fn two_parameter_checkpoint_has_predicted_length() {
    let toy = Toy {
        a: Tensor::vector(vec![1.0, 2.0, 3.0]),
        b: Tensor::zeros(&[2, 2]),
    };
    let cfg = "{\"toy\":true}".to_string();
    let ckpt = Checkpoint::from_model(ModelKind::Localizer, cfg.clone(), &toy, Vec::new(), None);
    let bytes = ckpt.encode().unwrap();
    assert_eq!(
        bytes.len(),
        header_len(cfg.len()) + tensor_record_len("a", &[3]) + tensor_record_len("bb", &[2, 2])
    );
    assert_eq!(header_len(cfg.len()), 50 + cfg.len());
    assert_eq!(&bytes[..4], b"KFGC");
    assert_eq!(Checkpoint::decode(&bytes).unwrap(), ckpt);
}

#[test]
fn truncated_checkpoint_reports_offset() {
    let model = LocalizerModel::new(LocalizerConfig::default(), 1);
    let bytes = Checkpoint::from(&model).encode().unwrap();
    for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
        match Checkpoint::decode(&bytes[..cut]) {
            Err(Error::Format { offset, msg }) => {
                assert!(offset as usize <= cut, "offset {offset} beyond cut {cut}");
                assert!(msg.contains("truncated"), "{msg}");
            }
            other => panic!("cut {cut}: {other:?}"),
        }
    }
}

#[test]
fn version_mismatch_names_both_versions() {
    let model = LocalizerModel::new(LocalizerConfig::default(), 1);
    let mut bytes = Checkpoint::from(&model).encode().unwrap();
    bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
    match Checkpoint::decode(&bytes) {
        Err(Error::Version { found, expected }) => assert_eq!((found, expected), (2, 1)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn report_on_empty_directory_fails_listing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let err = emit_report(dir.path()).unwrap_err().to_string();
    assert!(
        err.contains("crossval_metrics.csv") && err.contains("localizer_accuracy.csv"),
        "{err}"
    );
}

#[test]
fn pipeline_runs_and_replays_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let digest = |o: &Outcome| {
        o.message
            .lines()
            .find(|l| l.starts_with("sha256"))
            .unwrap()
            .to_string()
    };
    let first = run(Command::GenData, &cfg).unwrap();
    let again = run(Command::GenData, &cfg).unwrap();
    assert_eq!(digest(&first), digest(&again));

    run(Command::GenLabels, &cfg).unwrap();
    assert!(cfg.out_dir.join("labels/v0000.csv").exists());
    run(Command::TrainLocalizer, &cfg).unwrap();
    run(Command::EvalLocalizer, &cfg).unwrap();
    let curve = fs::read_to_string(cfg.out_dir.join("localizer_accuracy.csv")).unwrap();
    let rows: Vec<&str> = curve.lines().skip(1).collect();
    assert_eq!(rows.len(), 33);
    let acc: Vec<f64> = rows
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(acc.windows(2).all(|w| w[0] <= w[1]));

    let eval = |cmd: Command| {
        run(cmd, &cfg).unwrap();
        let before = csvs(&cfg.out_dir);
        replay(&cfg.out_dir.join(RUN_FILE)).unwrap();
        assert_eq!(before, csvs(&cfg.out_dir), "{cmd:?} replay differs");
    };
    eval(Command::EvalLocalizer);
    eval(Command::TrainClassifier);
    eval(Command::EvalClassifier);
    eval(Command::Crossval);

    let predicted = ExperimentConfig {
        key_frame_source: KeyFrameSource::Predicted,
        ..cfg.clone()
    };
    run(Command::EvalClassifier, &predicted).unwrap();
    let record: RunRecord =
        serde_json::from_str(&fs::read_to_string(cfg.out_dir.join(RUN_FILE)).unwrap()).unwrap();
    assert_eq!(record.command, "eval-classifier");
    assert_eq!(record.config, predicted);

    let crossval = fs::read_to_string(cfg.out_dir.join("crossval_metrics.csv")).unwrap();
    assert_eq!(crossval.lines().count(), 1 + cfg.folds + 1);
    assert!(crossval.lines().last().unwrap().starts_with("mean,"));

    let report = run(Command::Report, &cfg).unwrap();
    assert!(report.files.iter().any(|f| f.ends_with("summary.csv")));
    let svg = fs::read_to_string(cfg.out_dir.join(CURVE_SVG)).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert!(doc.descendants().any(|n| n.has_tag_name("polyline")));
    let summary = fs::read_to_string(cfg.out_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("section,name,accuracy,sensitivity,specificity,precision,f1\n"));
    // values are copied from the fold table verbatim
    let mean_row = crossval.lines().last().unwrap();
    let mean_values = mean_row.split_once(',').unwrap().1;
    assert!(summary.contains(&format!("crossval,mean,{mean_values}")));
}

#[test]
fn busy_run_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let _held = RunLock::acquire(&cfg.out_dir).unwrap();
    let err = run(Command::Report, &cfg).unwrap_err();
    assert!(err.to_string().contains("lock"), "{err}");
}

fn kfgnet(args: &[&str]) -> (i32, String) {
    let out = Process::new(env!("CARGO_BIN_EXE_kfgnet"))
        .args(args)
        .output()
        .unwrap();
    let text =
        String::from_utf8_lossy(&out.stdout).to_string() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(kfgnet(&["--help"]).0, 0);
    assert_eq!(kfgnet(&["no-such-command"]).0, 1);
    assert_eq!(kfgnet(&["report", "--folds", "abc"]).0, 1);
    let (code, text) = kfgnet(&["report", "--precision", "f32", "--out-dir", d]);
    assert_eq!(code, 1, "{text}");
    assert!(text.contains("f32") || text.contains("precision"), "{text}");
    assert_eq!(kfgnet(&["crossval", "--folds", "1", "--out-dir", d]).0, 1);
    let (code, text) = kfgnet(&["report", "--out-dir", d]);
    assert_eq!(code, 2, "{text}");

    let cfg_path = dir.path().join("bad.json");
    fs::write(&cfg_path, "{\"no_such_key\": 1}").unwrap();
    assert_eq!(
        kfgnet(&["report", "--config", cfg_path.to_str().unwrap()]).0,
        1
    );
}

#[test]
fn cli_gen_data_is_hash_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let path = dir.path().join("cfg.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let p = path.to_str().unwrap();
    let (c1, t1) = kfgnet(&["gen-data", "--config", p]);
    let (c2, t2) = kfgnet(&["gen-data", "--config", p]);
    assert_eq!((c1, c2), (0, 0), "{t1}{t2}");
    let sha = |t: &str| {
        t.lines()
            .find(|l| l.starts_with("sha256"))
            .unwrap()
            .to_string()
    };
    assert_eq!(sha(&t1), sha(&t2));
    let other = dir.path().join("other");
    let (c3, t3) = kfgnet(&[
        "gen-data",
        "--config",
        p,
        "--seed",
        "8",
        "--data-dir",
        other.to_str().unwrap(),
    ]);
    assert_eq!(c3, 0);
    assert_ne!(sha(&t1), sha(&t3));
}
