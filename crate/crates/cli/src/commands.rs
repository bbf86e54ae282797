use std::path::Path;

use decolite::data::{load_dataset, resolve_data_root, synthetic, TimeSeriesDataset};
use decolite::diversity::{embed_2d, feature_statistics, fid, filter_distance_matrix, FeaturePooling, FidResult};
use decolite::eval::{accuracy, ensemble_predict, mcm, predict_classes, ResultsTable};
use decolite::lite::{load_checkpoint, save_checkpoint, LiteModel};
use decolite::train::{build_ensemble, train_base, EnsembleKind, TrainOutcome};
use decolite::{Error, Result};
use serde::Serialize;

use crate::manifest::Recorder;
use crate::results;
use crate::settings::{seed_dir, Settings};

/// Name under which the bundled two-class dataset is addressed.
pub const SYNTHETIC: &str = "synthetic";

pub fn load(settings: &Settings, name: &str) -> Result<(TimeSeriesDataset, TimeSeriesDataset)> {
    if name == SYNTHETIC {
        let (mut train, mut test) = synthetic::two_class_pair(32, 32, 16, 0)?;
        train.name = SYNTHETIC.into();
        test.name = SYNTHETIC.into();
        return Ok((train, test));
    }
    let root = resolve_data_root(settings.data_root.as_deref())?;
    load_dataset(&root, name, settings.variable_length)
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Format(e.to_string()))
}

fn save_member(rec: &mut Recorder, dir: &Path, outcome: &TrainOutcome) -> Result<()> {
    let ckpt = dir.join("model.ckpt");
    save_checkpoint(&outcome.model, &ckpt)?;
    rec.record(&ckpt);
    let log = dir.join("train_log.csv");
    outcome.log.write_csv(&log)?;
    rec.record(&log);
    let seconds: f64 = outcome.log.records().iter().map(|r| r.seconds).sum();
    let key = dir.strip_prefix(rec.root()).unwrap_or(dir).display().to_string();
    rec.manifest.timings.insert(key, seconds);
    Ok(())
}

fn describe(rec: &mut Recorder, settings: &Settings, dataset: &str, kind: Option<EnsembleKind>, seeds: &[u64]) {
    let m = &mut rec.manifest;
    m.datasets = vec![dataset.to_string()];
    m.kind = kind.map(|k| k.tag().to_string());
    m.size = kind.map(|_| seeds.len());
    m.seeds = seeds.to_vec();
    m.config = settings.echo.clone();
}

pub fn train(settings: &Settings, rec: &mut Recorder) -> Result<()> {
    let name = settings.dataset()?;
    let seeds = settings.seeds.clone().unwrap_or_else(|| vec![0]);
    describe(rec, settings, name, None, &seeds);
    let (train, _) = load(settings, name)?;
    let run = settings.run_dir(name, EnsembleKind::Base, 1);
    for &seed in &seeds {
        let outcome = train_base(&train, &settings.arch, &settings.train.with_seed(seed))?;
        save_member(rec, &seed_dir(&run, seed), &outcome)?;
        let last = outcome.log.last().expect("at least one epoch");
        println!(
            "{name} seed {seed}: {} epochs, kept epoch {}, train accuracy {:.4}, loss {:.6}",
            outcome.log.records().len(),
            outcome.best_epoch,
            last.train_acc,
            last.total_loss
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EnsembleScore {
    dataset: String,
    ensemble: String,
    kind: EnsembleKind,
    seeds: Vec<u64>,
    n_test: usize,
    member_accuracy: Vec<f64>,
    ensemble_accuracy: f64,
}

fn score(models: &[&LiteModel], test: &TimeSeriesDataset, kind: EnsembleKind, seeds: &[u64]) -> Result<EnsembleScore> {
    let member_accuracy = models
        .iter()
        .map(|m| accuracy(&predict_classes(&m.predict_proba(&test.x)?), &test.y))
        .collect::<Result<Vec<_>>>()?;
    let proba = ensemble_predict(models, &test.x)?;
    Ok(EnsembleScore {
        dataset: test.name.clone(),
        ensemble: kind.ensemble_name(models.len()),
        kind,
        seeds: seeds.to_vec(),
        n_test: test.len(),
        member_accuracy,
        ensemble_accuracy: accuracy(&predict_classes(&proba), &test.y)?,
    })
}

pub fn ensemble(settings: &Settings, rec: &mut Recorder) -> Result<()> {
    let name = settings.dataset()?;
    let seeds = settings.ensemble_seeds()?;
    let kind = settings.kind;
    describe(rec, settings, name, Some(kind), &seeds);
    let (train, test) = load(settings, name)?;
    let ens = build_ensemble(&train, &settings.arch, &settings.train, kind, &seeds)?;
    let run = settings.run_dir(name, kind, seeds.len());
    for m in &ens.members {
        save_member(rec, &seed_dir(&run, m.seed), &m.outcome)?;
    }
    rec.write(&run.join("run_metadata.json"), to_json(&ens.metadata)?)?;
    let s = score(&ens.models(), &test, kind, &seeds)?;
    rec.write(&run.join("ensemble_accuracy.json"), to_json(&s)?)?;
    println!("{} on {name}: test accuracy {:.4} (members {:?})", s.ensemble, s.ensemble_accuracy, s.member_accuracy);
    Ok(())
}

fn load_members(settings: &Settings, name: &str) -> Result<(Vec<u64>, Vec<LiteModel>, std::path::PathBuf)> {
    let seeds = settings.ensemble_seeds()?;
    let run = settings.run_dir(name, settings.kind, seeds.len());
    let models = seeds
        .iter()
        .map(|&s| load_checkpoint(&seed_dir(&run, s).join("model.ckpt")))
        .collect::<Result<Vec<_>>>()?;
    Ok((seeds, models, run))
}

pub fn evaluate(settings: &Settings, rec: &mut Recorder) -> Result<()> {
    let name = settings.dataset()?;
    let (seeds, models, run) = load_members(settings, name)?;
    describe(rec, settings, name, Some(settings.kind), &seeds);
    let (_, test) = load(settings, name)?;
    let refs: Vec<&LiteModel> = models.iter().collect();
    let s = score(&refs, &test, settings.kind, &seeds)?;
    rec.write(&run.join("evaluation.json"), to_json(&s)?)?;
    if let Some(path) = &settings.results {
        let text = results::upsert(path, name, &s.ensemble, s.ensemble_accuracy)?;
        rec.write(path, text)?;
    }
    println!("{} on {name}: test accuracy {:.4}", s.ensemble, s.ensemble_accuracy);
    Ok(())
}

pub fn mcm_report(settings: &Settings, rec: &mut Recorder) -> Result<()> {
    let path = settings
        .results
        .as_ref()
        .ok_or_else(|| Error::Usage("--results is required".into()))?;
    rec.manifest.config = settings.echo.clone();
    let table = ResultsTable::read(path).map_err(|e| match e {
        Error::Io { .. } => Error::Data(e.to_string()),
        other => other,
    })?;
    rec.manifest.datasets = table.datasets.clone();
    let report = mcm(&table)?;
    let dir = settings.out.join("mcm");
    rec.write(&dir.join("pairwise.csv"), report.pairwise_csv()?)?;
    rec.write(&dir.join("report.json"), report.to_json()? + "\n")?;
    for r in report.pairwise_rows() {
        let diff = if r.mean_diff.abs() < 5e-5 { 0.0 } else { r.mean_diff };
        println!(
            "{} vs {}: mean diff {:+.4}, W/T/L {}/{}/{}, p {}{}",
            r.classifier_a,
            r.classifier_b,
            diff,
            r.wins,
            r.ties,
            r.losses,
            r.p_display,
            if r.significant { " *" } else { "" }
        );
    }
    Ok(())
}

pub fn diversity(settings: &Settings, rec: &mut Recorder) -> Result<()> {
    let name = settings.dataset()?;
    let (seeds, models, run) = load_members(settings, name)?;
    describe(rec, settings, name, Some(settings.kind), &seeds);
    let (_, test) = load(settings, name)?;
    let dir = run.join("diversity");
    let stats = models
        .iter()
        .zip(&seeds)
        .map(|(m, s)| feature_statistics(m, &test.x, &format!("seed{s}"), FeaturePooling::GlobalAverage))
        .collect::<Result<Vec<_>>>()?;
    for s in &stats {
        rec.write(&dir.join(format!("stats_{}.json", s.model_id)), to_json(s)?)?;
    }
    let mut pairs = Vec::new();
    for i in 0..stats.len() {
        for j in i + 1..stats.len() {
            pairs.push(FidResult {
                model_a: stats[i].model_id.clone(),
                model_b: stats[j].model_id.clone(),
                fid: fid(&stats[i], &stats[j])?,
            });
        }
    }
    rec.write(&dir.join("fid.json"), to_json(&pairs)?)?;
    for p in &pairs {
        println!("FID {} vs {}: {:.6}", p.model_a, p.model_b, p.fid);
    }
    let refs: Vec<&LiteModel> = models.iter().collect();
    let matrix = filter_distance_matrix(&refs)?;
    rec.write(&dir.join("filter_distances.csv"), matrix.to_csv()?)?;
    let embedding = embed_2d(&matrix)?;
    rec.write(&dir.join("embedding.csv"), embedding.to_csv()?)?;
    Ok(())
}
