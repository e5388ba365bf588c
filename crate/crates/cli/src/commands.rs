//! One function per subcommand. Each echoes its effective configuration
//! into the directory it writes.

use std::fmt::Write as _;
use std::path::Path;

use aidnet_core::dataset::{
    holdout_sizes, prepare_subject, read_prepared, stratified_split, write_prepared, Partition, Sample,
};
use aidnet_core::eval::{binary_metrics, collapse_3to2, confusion, roc_auc};
use aidnet_core::model::{evaluate, log_csv, predict, train, AidNetParams, LossConfig, TrainConfig};
use aidnet_core::phantom::{build_cohort, Cohort};
use aidnet_core::preproc::PreprocConfig;
use aidnet_core::volgrid::{checkpoint, Tensor};
use aidnet_core::xai::{grad_cam, heatmap_argmax, overlay_export};
use aidnet_core::{write_atomic, Error, Result};

use crate::config::{Config, ECHO_FILE};

fn echo(cfg: &Config, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join(ECHO_FILE), cfg.to_text().as_bytes())
}

pub fn phantom_gen(cfg: &Config) -> Result<()> {
    let cohort = build_cohort(cfg.counts, cfg.seed, cfg.shape, cfg.spacing_mm)?;
    echo(cfg, &cfg.cohort_dir)?;
    cohort.write(&cfg.cohort_dir)?;
    eprintln!(
        "wrote {} subjects to {}",
        cohort.subjects.len(),
        cfg.cohort_dir.display()
    );
    Ok(())
}

pub fn preprocess(cfg: &Config) -> Result<()> {
    let cohort = Cohort::read(&cfg.cohort_dir)?;
    let pcfg = PreprocConfig {
        target_shape: cfg.shape,
        ..Default::default()
    };
    let samples = cohort
        .subjects
        .iter()
        .map(|s| prepare_subject(s, &pcfg))
        .collect::<Result<Vec<_>>>()?;
    let classes: Vec<usize> = samples.iter().map(|s| s.class).collect();
    let (n_test, n_val) = holdout_sizes(samples.len());
    let split = stratified_split(&classes, n_test, n_val, cfg.seed)?;
    echo(cfg, &cfg.prep_dir)?;
    write_prepared(&cfg.prep_dir, &samples, &split.assignments(samples.len()))?;
    eprintln!(
        "prepared {} subjects ({} train / {} val / {} test) in {}",
        samples.len(),
        split.train.len(),
        split.val.len(),
        split.test.len(),
        cfg.prep_dir.display()
    );
    Ok(())
}

fn load_partition(cfg: &Config, which: &str) -> Result<Vec<Sample>> {
    let all = read_prepared(&cfg.prep_dir)?;
    Ok(all
        .into_iter()
        .filter(|(_, p)| which == "all" || p.as_str() == which)
        .map(|(s, _)| s)
        .collect())
}

pub fn train_cmd(cfg: &Config) -> Result<()> {
    let all = read_prepared(&cfg.prep_dir)?;
    let pick =
        |want: Partition| -> Vec<Sample> { all.iter().filter(|(_, p)| *p == want).map(|(s, _)| s.clone()).collect() };
    let (train_set, val) = (pick(Partition::Train), pick(Partition::Val));
    let tc = TrainConfig {
        lr: cfg.lr,
        max_epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        loss: LossConfig {
            lambda: cfg.lambda,
            margin: cfg.margin,
            class_weights: None,
        },
        seed: cfg.seed,
        mode: cfg.mode,
    };
    tc.validate()?;
    echo(cfg, &cfg.out_dir)?;
    let out = train(&train_set, &val, &tc, |r| {
        let val = r.val_binary_accuracy.map_or("-".to_string(), |v| format!("{v:.4}"));
        eprintln!("epoch {:>3}  loss {:.6}  val_acc {val}", r.epoch, r.total_loss);
    })?;
    write_atomic(&cfg.out_dir.join("train_log.csv"), log_csv(&out.log).as_bytes())?;
    checkpoint::save(out.last.param_set(), &cfg.out_dir.join("last.ckpt"))?;
    checkpoint::save(out.best.param_set(), &cfg.out_dir.join("best.ckpt"))?;
    eprintln!(
        "best epoch {} -> {}",
        out.best_epoch,
        cfg.out_dir.join("best.ckpt").display()
    );
    Ok(())
}

fn load_params(cfg: &Config) -> Result<AidNetParams> {
    let set = checkpoint::load(&cfg.checkpoint)
        .map_err(|e| Error::MissingData(format!("{}: {e}", cfg.checkpoint.display())))?;
    AidNetParams::from_param_set(set)
}

pub fn eval_cmd(cfg: &Config) -> Result<String> {
    let params = load_params(cfg)?;
    let samples = load_partition(cfg, &cfg.partition)?;
    if samples.is_empty() {
        return Err(Error::MissingData(format!(
            "no subjects in partition {:?}",
            cfg.partition
        )));
    }
    let preds = evaluate(&params, &samples, 4)?;
    let truth: Vec<usize> = samples.iter().map(|s| s.class).collect();
    let pred: Vec<usize> = preds.iter().map(|p| p.class).collect();
    let three = confusion(&truth, &pred, 3)?;
    let two = collapse_3to2(&three)?;
    let metrics = binary_metrics(&two)?;
    let scores: Vec<f64> = preds.iter().map(|p| p.binary_score).collect();
    let positive: Vec<bool> = samples.iter().map(Sample::is_positive).collect();
    let roc = roc_auc(&scores, &positive).ok();

    let mut per_subject = String::from("subject_id,truth,pred,p0,p1,p2,binary_score\n");
    for (s, p) in samples.iter().zip(&preds) {
        let [p0, p1, p2] = p.probabilities;
        let _ = writeln!(
            per_subject,
            "{},{},{},{p0},{p1},{p2},{}",
            s.id, s.class, p.class, p.binary_score
        );
    }
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut m = String::from("metric,value\n");
    let _ = writeln!(m, "n,{}", samples.len());
    let _ = writeln!(m, "binary_accuracy,{}", metrics.accuracy);
    let _ = writeln!(m, "sensitivity,{}", opt(metrics.sensitivity));
    let _ = writeln!(m, "specificity,{}", opt(metrics.specificity));
    let _ = writeln!(m, "auc,{}", opt(roc.as_ref().map(|r| r.auc)));

    let dir = &cfg.out_dir;
    echo(cfg, dir)?;
    write_atomic(&dir.join("predictions.csv"), per_subject.as_bytes())?;
    write_atomic(&dir.join("confusion_3class.csv"), three.to_csv().as_bytes())?;
    write_atomic(&dir.join("confusion_binary.csv"), two.to_csv().as_bytes())?;
    if let Some(r) = &roc {
        write_atomic(&dir.join("roc.csv"), r.to_csv().as_bytes())?;
    }
    write_atomic(&dir.join("metrics.csv"), m.as_bytes())?;

    let mut report = three.to_text("3-class confusion (rows truth, cols prediction)");
    report.push_str(&two.to_text("binary confusion"));
    let _ = writeln!(report, "binary accuracy {:.4}", metrics.accuracy);
    if let Some(r) = &roc {
        let _ = writeln!(report, "AUC {:.4}", r.auc);
    }
    Ok(report)
}

pub fn gradcam_cmd(cfg: &Config) -> Result<String> {
    let id = cfg
        .subject
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("gradcam needs --subject".into()))?;
    let params = load_params(cfg)?;
    let sample = load_partition(cfg, "all")?
        .into_iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::MissingData(format!("subject {id} not in {}", cfg.prep_dir.display())))?;
    let [d, h, w] = sample.shape;
    let x = Tensor::constant(&[1, 2, d, h, w], sample.scan.clone())?;
    let pred = predict(&params, &x)?[0];
    let class = cfg.class.unwrap_or(pred.class);
    let result = grad_cam(&params, &x, class)?;
    let n = d * h * w;
    let source = aidnet_core::preproc::Volume::new(sample.shape, [1.0; 3], sample.scan[..n].to_vec())?;
    echo(cfg, &cfg.out_dir)?;
    let files = overlay_export(&result, &source, &cfg.out_dir, id)?;
    let peak = result.heatmap.coords(heatmap_argmax(&result.heatmap));
    Ok(format!(
        "subject {id}: predicted class {}, heatmap for class {class}, peak at {peak:?}, {} files in {}\n",
        pred.class,
        files.len(),
        cfg.out_dir.display()
    ))
}
