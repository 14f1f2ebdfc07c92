//! Experiment orchestration behind the `kfgnet` command line.
//!
//! Every command resolves an [`ExperimentConfig`], takes the output
//! directory's lock, does its work and records `run.json` so the exact run can
//! be replayed with `--config <out>/run.json`.

pub mod checkpoint;
pub mod config;
pub mod gradsuite;
pub mod report;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelKind, SavedModel};
pub use config::{ExperimentConfig, Geometry, KeyFrameSource, Precision, RunRecord};
pub use report::{emit_report, ReportFiles};

use crate::classifier::{
    ablate, crossval, evaluate, prepare_samples, train_classifier, write_ablation_csv,
    write_history_csv, ClassifierModel, ClassifierSample, MetricSummary,
};
use crate::data::{
    dataset_digest, generate_synthetic, holdout_split, kfold_split, load_dataset, write_dataset,
    HoldoutSplit, Label, VideoSample,
};
use crate::error::{Error, Result};
use crate::localizer::{
    accuracy_curve, predict_all, predict_keyframe, train_localizer, write_accuracy_csv,
    write_predictions_csv, LocalizerExample, LocalizerModel,
};
use crate::similarity::{generate_score_labels, motion_index, ScoreSequence};

pub const RUN_FILE: &str = "run.json";
pub const LOCK_FILE: &str = ".lock";
pub const LOCALIZER_CKPT: &str = "localizer.ckpt";
pub const CLASSIFIER_CKPT: &str = "classifier.ckpt";
/// Largest tolerance of the accuracy@D curve.
pub const MAX_TOLERANCE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    GenLabels,
    TrainLocalizer,
    EvalLocalizer,
    TrainClassifier,
    EvalClassifier,
    Crossval,
    Ablate,
    Gradcheck,
    Report,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::GenData,
        Command::GenLabels,
        Command::TrainLocalizer,
        Command::EvalLocalizer,
        Command::TrainClassifier,
        Command::EvalClassifier,
        Command::Crossval,
        Command::Ablate,
        Command::Gradcheck,
        Command::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::GenLabels => "gen-labels",
            Command::TrainLocalizer => "train-localizer",
            Command::EvalLocalizer => "eval-localizer",
            Command::TrainClassifier => "train-classifier",
            Command::EvalClassifier => "eval-classifier",
            Command::Crossval => "crossval",
            Command::Ablate => "ablate",
            Command::Gradcheck => "gradcheck",
            Command::Report => "report",
        }
    }

    pub fn from_name(name: &str) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.name() == name)
    }
}

/// Exclusive hold on a run directory; released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<RunLock> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Data(format!(
                "{} is locked by another command (remove {} if that command is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// What a command produced, for the caller to print.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub message: String,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes a CSV through `body` and records the path.
fn write_csv(
    out: &mut Outcome,
    path: PathBuf,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let mut w = create(&path)?;
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))?;
    out.files.push(path);
    Ok(())
}

fn load_videos(cfg: &ExperimentConfig) -> Result<Vec<VideoSample>> {
    let manifest = cfg.data_dir.join(crate::data::container::MANIFEST_FILE);
    if !manifest.exists() {
        return Err(Error::Data(format!(
            "no dataset at {} (run gen-data first)",
            manifest.display()
        )));
    }
    let videos = load_dataset(&manifest)?;
    if videos.is_empty() {
        return Err(Error::Data(format!(
            "{} lists no videos",
            manifest.display()
        )));
    }
    Ok(videos)
}

fn labelled_ids(videos: &[VideoSample]) -> Vec<(String, Label)> {
    videos.iter().map(|v| (v.id.clone(), v.label)).collect()
}

fn subset<'a>(videos: &'a [VideoSample], ids: &[String]) -> Vec<&'a VideoSample> {
    let by_id: BTreeMap<&str, &VideoSample> = videos.iter().map(|v| (v.id.as_str(), v)).collect();
    ids.iter()
        .filter_map(|id| by_id.get(id.as_str()).copied())
        .collect()
}

fn split(cfg: &ExperimentConfig, videos: &[VideoSample]) -> Result<HoldoutSplit> {
    holdout_split(&labelled_ids(videos), cfg.train_fraction, cfg.seed)
}

fn write_split(out: &mut Outcome, dir: &Path, s: &HoldoutSplit) -> Result<()> {
    write_csv(out, dir.join("split.csv"), |w| {
        writeln!(w, "video_id,subset")?;
        for id in &s.train {
            writeln!(w, "{id},train")?;
        }
        for id in &s.test {
            writeln!(w, "{id},test")?;
        }
        Ok(())
    })
}

fn load_localizer(cfg: &ExperimentConfig) -> Result<LocalizerModel> {
    let path = cfg.out_dir.join(LOCALIZER_CKPT);
    if !path.exists() {
        return Err(Error::Data(format!(
            "no localizer checkpoint at {} (run train-localizer first)",
            path.display()
        )));
    }
    Ok(load_checkpoint(&path)?.into_localizer()?.0)
}

/// Clip centres for every video according to the configured source.
fn key_frames(cfg: &ExperimentConfig, videos: &[VideoSample]) -> Result<Vec<usize>> {
    match cfg.key_frame_source {
        KeyFrameSource::GroundTruth => Ok(videos.iter().map(|v| v.key_frame_index).collect()),
        KeyFrameSource::Predicted => {
            let model = load_localizer(cfg)?;
            videos.iter().map(|v| predict_keyframe(&model, v)).collect()
        }
    }
}

fn classifier_samples(
    cfg: &ExperimentConfig,
    videos: &[VideoSample],
) -> Result<Vec<ClassifierSample>> {
    let keys = key_frames(cfg, videos)?;
    prepare_samples(videos, &keys, cfg.sampling, &cfg.classifier_config())
}

fn pick(samples: &[ClassifierSample], ids: &[String]) -> Vec<ClassifierSample> {
    samples
        .iter()
        .filter(|s| ids.binary_search(&s.id).is_ok())
        .cloned()
        .collect()
}

fn write_metric_row<W: Write>(w: &mut W, key: &str, m: &MetricSummary) -> std::io::Result<()> {
    writeln!(w, "{key},{}", m.values().map(|v| v.to_string()).join(","))
}

fn gen_data(cfg: &ExperimentConfig) -> Result<Outcome> {
    let _lock = if cfg.data_dir != cfg.out_dir {
        Some(RunLock::acquire(&cfg.data_dir)?)
    } else {
        None
    };
    let videos = generate_synthetic(&cfg.synth_config(), cfg.seed)?;
    let manifest = write_dataset(&cfg.data_dir, &videos)?;
    let digest = dataset_digest(&cfg.data_dir)?;
    Ok(Outcome {
        files: vec![manifest],
        message: format!(
            "{} videos written to {}\nsha256 {digest}",
            videos.len(),
            cfg.data_dir.display()
        ),
    })
}

fn gen_labels(cfg: &ExperimentConfig) -> Result<Outcome> {
    let videos = load_videos(cfg)?;
    let mut out = Outcome::default();
    for v in &videos {
        let labels = generate_score_labels(v)?;
        write_csv(
            &mut out,
            cfg.out_dir.join("labels").join(format!("{}.csv", v.id)),
            |w| labels.write_csv(w),
        )?;
        let motion = ScoreSequence::new(motion_index(&v.frames)?)?;
        write_csv(
            &mut out,
            cfg.out_dir.join("motion").join(format!("{}.csv", v.id)),
            |w| motion.write_csv(w),
        )?;
    }
    out.message = format!(
        "score labels and motion indices for {} videos",
        videos.len()
    );
    Ok(out)
}

fn train_localizer_cmd(cfg: &ExperimentConfig) -> Result<Outcome> {
    let videos = load_videos(cfg)?;
    let s = split(cfg, &videos)?;
    let mut out = Outcome::default();
    write_split(&mut out, &cfg.out_dir, &s)?;
    let examples = subset(&videos, &s.train)
        .into_iter()
        .map(LocalizerExample::from_video)
        .collect::<Result<Vec<_>>>()?;
    let mut model = LocalizerModel::new(cfg.localizer_config(), cfg.seed);
    let history = train_localizer(
        &mut model,
        &examples,
        &cfg.localizer_train_config(),
        cfg.seed,
    )?;
    write_csv(&mut out, cfg.out_dir.join("localizer_history.csv"), |w| {
        writeln!(w, "epoch,loss")?;
        for (i, l) in history.epoch_losses.iter().enumerate() {
            writeln!(w, "{},{l}", i + 1)?;
        }
        Ok(())
    })?;
    let path = cfg.out_dir.join(LOCALIZER_CKPT);
    checkpoint::save_localizer(&path, &model, Some(&history.optimizer))?;
    out.files.push(path);
    out.message = format!(
        "localizer trained on {} videos, final loss {}",
        examples.len(),
        history.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(out)
}

fn eval_localizer_cmd(cfg: &ExperimentConfig) -> Result<Outcome> {
    let videos = load_videos(cfg)?;
    let model = load_localizer(cfg)?;
    let s = split(cfg, &videos)?;
    let test: Vec<VideoSample> = subset(&videos, &s.test).into_iter().cloned().collect();
    let preds = predict_all(&model, &test)?;
    let p: Vec<usize> = preds.iter().map(|r| r.predicted).collect();
    let l: Vec<usize> = preds.iter().map(|r| r.label).collect();
    let curve = accuracy_curve(&p, &l, MAX_TOLERANCE)?;
    let mut out = Outcome::default();
    write_csv(
        &mut out,
        cfg.out_dir.join("keyframe_predictions.csv"),
        |w| write_predictions_csv(w, &preds),
    )?;
    write_csv(&mut out, cfg.out_dir.join(report::ACCURACY_CSV), |w| {
        write_accuracy_csv(w, &curve)
    })?;
    out.message = format!(
        "{} held-out videos: accuracy@5 {} accuracy@15 {}",
        test.len(),
        curve[5].1,
        curve[15].1
    );
    Ok(out)
}

fn train_classifier_cmd(cfg: &ExperimentConfig) -> Result<Outcome> {
    let videos = load_videos(cfg)?;
    let s = split(cfg, &videos)?;
    let samples = classifier_samples(cfg, &videos)?;
    let train = pick(&samples, &s.train);
    let mut model = ClassifierModel::new(cfg.classifier_config(), cfg.seed, 0)?;
    let history = train_classifier(
        &mut model,
        &train,
        &cfg.classifier_train_config(),
        cfg.seed,
        0,
    )?;
    let mut out = Outcome::default();
    write_split(&mut out, &cfg.out_dir, &s)?;
    write_csv(&mut out, cfg.out_dir.join("classifier_history.csv"), |w| {
        write_history_csv(w, &history, cfg.attention)
    })?;
    let path = cfg.out_dir.join(CLASSIFIER_CKPT);
    checkpoint::save_classifier(&path, &model, Some(&history.optimizer))?;
    out.files.push(path);
    let last = history
        .epochs
        .last()
        .map(|e| e.loss.total)
        .unwrap_or(f64::NAN);
    out.message = format!(
        "classifier trained on {} clips, final loss {last}",
        train.len()
    );
    Ok(out)
}

fn write_predictions<W: Write>(
    w: &mut W,
    rows: &[(String, f64, Label)],
    prefix: Option<usize>,
) -> std::io::Result<()> {
    for (id, p, l) in rows {
        let predicted = (*p >= crate::classifier::DECISION_THRESHOLD) as u8;
        match prefix {
            Some(f) => writeln!(w, "{f},{id},{p},{},{predicted}", *l as u8)?,
            None => writeln!(w, "{id},{p},{},{predicted}", *l as u8)?,
        }
    }
    Ok(())
}

fn eval_classifier_cmd(cfg: &ExperimentConfig) -> Result<Outcome> {
    let path = cfg.out_dir.join(CLASSIFIER_CKPT);
    if !path.exists() {
        return Err(Error::Data(format!(
            "no classifier checkpoint at {} (run train-classifier first)",
            path.display()
        )));
    }
    let (model, _) = load_checkpoint(&path)?.into_classifier()?;
    let videos = load_videos(cfg)?;
    let s = split(cfg, &videos)?;
    let keys = key_frames(cfg, &videos)?;
    let samples = prepare_samples(&videos, &keys, cfg.sampling, &model.config)?;
    let eval = evaluate(&model, &pick(&samples, &s.test))?;
    let mut out = Outcome::default();
    let m = &eval.metrics;
    write_csv(&mut out, cfg.out_dir.join(report::HOLDOUT_CSV), |w| {
        writeln!(
            w,
            "split,{},tp,fp,tn,fn,undefined",
            MetricSummary::COLUMNS.join(",")
        )?;
        let vals = m.summary().values().map(|v| v.to_string()).join(",");
        writeln!(
            w,
            "test,{vals},{},{},{},{},{}",
            m.tp,
            m.fp,
            m.tn,
            m.fn_,
            m.undefined.join(";")
        )
    })?;
    write_csv(
        &mut out,
        cfg.out_dir.join("classifier_predictions.csv"),
        |w| {
            writeln!(w, "video_id,probability,label,predicted")?;
            write_predictions(w, &eval.predictions, None)
        },
    )?;
    out.message = format!(
        "{} held-out clips: accuracy {}",
        eval.predictions.len(),
        m.accuracy
    );
    Ok(out)
}

fn crossval_cmd(cfg: &ExperimentConfig) -> Result<Outcome> {
    let videos = load_videos(cfg)?;
    let samples = classifier_samples(cfg, &videos)?;
    let folds = kfold_split(&labelled_ids(&videos), cfg.folds, cfg.seed)?;
    let cv = crossval(
        &samples,
        &folds,
        &cfg.classifier_config(),
        &cfg.classifier_train_config(),
        cfg.seed,
    )?;
    let mut out = Outcome::default();
    write_csv(&mut out, cfg.out_dir.join(report::CROSSVAL_CSV), |w| {
        writeln!(w, "fold,{}", MetricSummary::COLUMNS.join(","))?;
        for f in &cv.folds {
            write_metric_row(w, &f.fold.to_string(), &f.evaluation.metrics.summary())?;
        }
        write_metric_row(w, "mean", &cv.mean)
    })?;
    write_csv(
        &mut out,
        cfg.out_dir.join("crossval_predictions.csv"),
        |w| {
            writeln!(w, "fold,video_id,probability,label,predicted")?;
            for f in &cv.folds {
                write_predictions(w, &f.evaluation.predictions, Some(f.fold))?;
            }
            Ok(())
        },
    )?;
    for f in &cv.folds {
        write_csv(
            &mut out,
            cfg.out_dir.join(format!("history_fold{}.csv", f.fold)),
            |w| write_history_csv(w, &f.history, cfg.attention),
        )?;
    }
    out.message = format!("{}-fold mean accuracy {}", cfg.folds, cv.mean.accuracy);
    Ok(out)
}

fn ablate_cmd(cfg: &ExperimentConfig) -> Result<Outcome> {
    let videos = load_videos(cfg)?;
    let keys = key_frames(cfg, &videos)?;
    let folds = kfold_split(&labelled_ids(&videos), cfg.folds, cfg.seed)?;
    let rows = ablate(
        &videos,
        &keys,
        &folds,
        &cfg.classifier_config(),
        &cfg.classifier_train_config(),
        cfg.seed,
    )?;
    let mut out = Outcome::default();
    write_csv(&mut out, cfg.out_dir.join(report::ABLATION_CSV), |w| {
        write_ablation_csv(w, &rows)
    })?;
    let full = rows.first().map(|r| r.mean.accuracy).unwrap_or(f64::NAN);
    let base = rows.last().map(|r| r.mean.accuracy).unwrap_or(f64::NAN);
    out.message = format!("full model accuracy {full}, baseline accuracy {base}");
    Ok(out)
}

fn gradcheck_cmd(cfg: &ExperimentConfig) -> Result<Outcome> {
    let seeds: Vec<u64> = (0..5).map(|i| cfg.seed.wrapping_add(i)).collect();
    let entries = gradsuite::run_suite(&seeds)?;
    let mut out = Outcome::default();
    write_csv(&mut out, cfg.out_dir.join("gradcheck.csv"), |w| {
        writeln!(w, "check,max_rel_error,checked,skipped,passed")?;
        for e in &entries {
            writeln!(
                w,
                "{},{},{},{},{}",
                e.name, e.max_rel_error, e.checked, e.skipped, e.passed
            )?;
        }
        Ok(())
    })?;
    let mut msg = String::new();
    for e in &entries {
        msg.push_str(&format!(
            "{:<28} max rel err {:.3e} over {} coords{}\n",
            e.name,
            e.max_rel_error,
            e.checked,
            if e.passed { "" } else { "  FAILED" }
        ));
    }
    let failed: Vec<&str> = entries
        .iter()
        .filter(|e| !e.passed)
        .map(|e| e.name.as_str())
        .collect();
    if !failed.is_empty() {
        return Err(Error::Check(format!(
            "gradient checks failed: {}\n{msg}",
            failed.join(", ")
        )));
    }
    out.message = msg.trim_end().to_string();
    Ok(out)
}

fn report_cmd(cfg: &ExperimentConfig) -> Result<Outcome> {
    let r = emit_report(&cfg.out_dir)?;
    let mut files = vec![r.summary, r.csv];
    files.extend(r.svg);
    Ok(Outcome {
        files,
        message: r.text,
    })
}

fn write_run_record(cfg: &ExperimentConfig, command: Command) -> Result<PathBuf> {
    let record = RunRecord {
        command: command.name().to_string(),
        config: cfg.clone(),
    };
    let path = cfg.out_dir.join(RUN_FILE);
    let mut text = serde_json::to_string_pretty(&record)?;
    text.push('\n');
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Validates `cfg`, runs `command` under the output-directory lock and writes `run.json`.
pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let _lock = RunLock::acquire(&cfg.out_dir)?;
    let mut out = match command {
        Command::GenData => gen_data(cfg),
        Command::GenLabels => gen_labels(cfg),
        Command::TrainLocalizer => train_localizer_cmd(cfg),
        Command::EvalLocalizer => eval_localizer_cmd(cfg),
        Command::TrainClassifier => train_classifier_cmd(cfg),
        Command::EvalClassifier => eval_classifier_cmd(cfg),
        Command::Crossval => crossval_cmd(cfg),
        Command::Ablate => ablate_cmd(cfg),
        Command::Gradcheck => gradcheck_cmd(cfg),
        Command::Report => report_cmd(cfg),
    }?;
    out.files.push(write_run_record(cfg, command)?);
    Ok(out)
}

/// Re-runs the command recorded in a `run.json`.
pub fn replay(run_file: &Path) -> Result<(Command, Outcome)> {
    let text = fs::read_to_string(run_file).map_err(|e| Error::io(run_file, e))?;
    let record: RunRecord = serde_json::from_str(&text)?;
    let command = Command::from_name(&record.command).ok_or_else(|| {
        Error::Config(format!(
            "unknown command {:?} in {}",
            record.command,
            run_file.display()
        ))
    })?;
    Ok((command, run(command, &record.config)?))
}
