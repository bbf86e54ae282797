//! Offline end-to-end checks on the bundled synthetic data.

use std::path::Path;

use decolite::data::{synthetic, TimeSeriesDataset};
use decolite::diversity::{embed_2d, feature_statistics, fid, filter_distance_matrix, FeaturePooling};
use decolite::eval::{accuracy, ensemble_predict, mcm, predict_classes, ResultsTable};
use decolite::lite::{load_checkpoint, save_checkpoint, LiteConfig, LiteModel};
use decolite::train::{
    build_ensemble, orthogonality_loss_value, train_base, train_decorrelated, EnsembleKind, OrthNormalization,
    OrthOptions, TrainConfig,
};
use decolite::{Error, Result, Tensor};
use serde::Serialize;

use crate::args::{Fault, SmokeArgs};
use crate::manifest::{io_err, Recorder};

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct SmokeReport {
    pub passed: usize,
    pub total: usize,
    pub checks: Vec<Check>,
}

struct Fixture {
    train: TimeSeriesDataset,
    test: TimeSeriesDataset,
    arch: LiteConfig,
}

fn short(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        ..TrainConfig::default()
    }
}

fn loss_algebra(_: &Fixture) -> Result<(bool, String)> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let deco = Tensor::new(&[1, 2, 2], vec![1., 0., h, h])?;
    let base = Tensor::new(&[1, 2, 2], vec![1., 0., 0., 1.])?;
    let raw = OrthOptions {
        normalization: OrthNormalization::RawSum,
        ..OrthOptions::default()
    };
    let r = orthogonality_loss_value(&deco, &base, &raw)?;
    let m = orthogonality_loss_value(&deco, &base, &OrthOptions::default())?;
    let same = orthogonality_loss_value(&base, &base, &raw)?;
    Ok((
        (r - h).abs() < 1e-6 && (m - h / 2.0).abs() < 1e-6 && same == 0.0,
        format!("raw {r:.6}, mean {m:.6}, orthonormal self {same}"),
    ))
}

fn training(f: &Fixture) -> Result<(bool, String)> {
    let out = train_base(&f.train, &f.arch, &short(30))?;
    let first = out.log.records().iter().position(|r| r.train_acc == 1.0);
    Ok((first.is_some(), format!("first epoch at train accuracy 1.0: {first:?}")))
}

fn determinism(f: &Fixture) -> Result<(bool, String)> {
    let a = train_base(&f.train, &f.arch, &short(5))?;
    let b = train_base(&f.train, &f.arch, &short(5))?;
    let (ca, cb) = (a.model.checksum(), b.model.checksum());
    let losses = |o: &decolite::train::TrainOutcome| -> Vec<u64> {
        o.log.records().iter().map(|r| r.total_loss.to_bits()).collect()
    };
    Ok((ca == cb && losses(&a) == losses(&b), format!("{ca:016x} / {cb:016x}")))
}

fn checkpoint(f: &Fixture, dir: &Path, fault: Option<Fault>, rec: &mut Recorder) -> Result<(bool, String)> {
    let model = train_base(&f.train, &f.arch, &short(3))?.model;
    let path = dir.join("model.ckpt");
    save_checkpoint(&model, &path)?;
    rec.record(&path);
    if fault == Some(Fault::Checkpoint) {
        let mut bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        let at = bytes.len() / 2;
        bytes[at] ^= 0x40;
        std::fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
    }
    let back = load_checkpoint(&path)?;
    let same_pred = back.predict_proba(&f.test.x)? == model.predict_proba(&f.test.x)?;
    Ok((
        back.checksum() == model.checksum() && same_pred,
        format!("checksum {:016x}, predictions identical {same_pred}", back.checksum()),
    ))
}

fn deco_ensemble(f: &Fixture) -> Result<(bool, String)> {
    let cfg = short(4);
    let seeds = [0, 1, 2];
    let deco = build_ensemble(&f.train, &f.arch, &cfg, EnsembleKind::Decorrelated, &seeds)?;
    let base = build_ensemble(&f.train, &f.arch, &cfg, EnsembleKind::Base, &seeds)?;
    let paired = deco
        .members
        .iter()
        .zip(&base.members)
        .all(|(d, b)| d.outcome.init_checksum == b.outcome.init_checksum);
    let previous: Vec<&LiteModel> = deco.members[..2].iter().map(|m| m.model()).collect();
    let before: Vec<u64> = previous.iter().map(|m| m.checksum()).collect();
    let rerun = train_decorrelated(&f.train, &f.arch, &cfg.with_seed(2), &previous)?;
    let frozen = previous.iter().zip(&before).all(|(m, b)| m.checksum() == *b);
    let repeat = rerun.model.checksum() == deco.members[2].model().checksum();
    let predecessors: Vec<usize> = deco.members.iter().map(|m| m.outcome.log.n_previous).collect();
    Ok((
        paired && frozen && repeat && predecessors == [0, 1, 2],
        format!(
            "{}: seed pairing {paired}, predecessors frozen {frozen}, rerun identical {repeat}, predecessors {predecessors:?}",
            deco.metadata.name
        ),
    ))
}

fn alpha_one(f: &Fixture) -> Result<(bool, String)> {
    let cfg = short(5).with_seed(1);
    let reference = train_base(&f.train, &f.arch, &cfg.with_seed(0))?;
    let base = train_base(&f.train, &f.arch, &cfg)?;
    let deco = train_decorrelated(&f.train, &f.arch, &TrainConfig { alpha: 1.0, ..cfg }, &[&reference.model])?;
    let (a, b) = (base.last.checksum(), deco.last.checksum());
    Ok((a == b, format!("{a:016x} / {b:016x}")))
}

fn evaluation(f: &Fixture) -> Result<(bool, String)> {
    let members: Vec<LiteModel> = (0..3)
        .map(|s| train_base(&f.train, &f.arch, &short(10).with_seed(s)).map(|o| o.model))
        .collect::<Result<_>>()?;
    let fwd: Vec<&LiteModel> = members.iter().collect();
    let rev: Vec<&LiteModel> = members.iter().rev().collect();
    let p = ensemble_predict(&fwd, &f.test.x)?;
    let order_free = p == ensemble_predict(&rev, &f.test.x)?;
    let rows_sum = p.data().chunks(2).all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let acc = accuracy(&predict_classes(&p), &f.test.y)?;
    Ok((order_free && rows_sum, format!("test accuracy {acc:.4}, order invariant {order_free}")))
}

fn mcm_table(_: &Fixture) -> Result<(bool, String)> {
    let table = ResultsTable::new(
        vec!["A".into(), "B".into()],
        vec!["d1".into(), "d2".into(), "d3".into()],
        vec![vec![0.9, 0.8, 0.7], vec![0.8, 0.8, 0.6]],
    )?;
    let r = mcm(&table)?;
    let (a, b) = (0, 1);
    let wtl = (r.wins[a][b], r.ties[a][b], r.losses[a][b]);
    Ok((
        format!("{:.4}", r.mean_diff[a][b]) == "0.0667" && wtl == (2, 1, 0) && (r.p_values[a][b] - 0.5).abs() < 1e-12,
        format!("mean diff {:.4}, W/T/L {wtl:?}, p {}", r.mean_diff[a][b], r.p_values[a][b]),
    ))
}

fn diversity(f: &Fixture) -> Result<(bool, String)> {
    let members: Vec<LiteModel> = (0..2)
        .map(|s| train_base(&f.train, &f.arch, &short(3).with_seed(s)).map(|o| o.model))
        .collect::<Result<_>>()?;
    let stats = |m: &LiteModel, id: &str| feature_statistics(m, &f.test.x, id, FeaturePooling::GlobalAverage);
    let (a, b) = (stats(&members[0], "a")?, stats(&members[1], "b")?);
    let (ab, ba, aa) = (fid(&a, &b)?, fid(&b, &a)?, fid(&a, &a)?);
    let refs: Vec<&LiteModel> = members.iter().collect();
    let matrix = filter_distance_matrix(&refs)?;
    let emb = embed_2d(&matrix)?;
    let ok = (ab - ba).abs() <= 1e-8 * ab.abs().max(1.0)
        && aa.abs() < 1e-8
        && emb.coords.len() == matrix.n()
        && emb.coords.iter().all(|c| c[0].is_finite() && c[1].is_finite());
    Ok((ok, format!("FID {ab:.6}, self {aa:.1e}, {} filters embedded", matrix.n())))
}

/// Runs every check, writes `smoke_report.json` and the manifest under
/// `args.out`, and returns the report.
pub fn run(args: &SmokeArgs) -> Result<SmokeReport> {
    let (mut train, mut test) = synthetic::two_class_pair(32, 32, 16, 0)?;
    train.name = "synthetic".into();
    test.name = "synthetic".into();
    let f = Fixture {
        train,
        test,
        arch: LiteConfig::default(),
    };
    let mut rec = Recorder::new("smoke", &args.out);
    rec.manifest.datasets = vec!["synthetic".into()];
    let ckpt_dir = args.out.join("checkpoint");

    type Plain = fn(&Fixture) -> Result<(bool, String)>;
    let plain: [(&'static str, Plain); 4] = [
        ("loss-algebra", loss_algebra),
        ("synthetic-training", training),
        ("determinism", determinism),
        ("deco-ensemble", deco_ensemble),
    ];
    let mut checks = Vec::new();
    let mut push = |name: &'static str, r: Result<(bool, String)>| {
        let (pass, detail) = r.unwrap_or_else(|e| (false, e.to_string()));
        checks.push(Check { name, pass, detail });
    };
    for (name, f_) in plain {
        push(name, f_(&f));
    }
    push("checkpoint-roundtrip", checkpoint(&f, &ckpt_dir, args.inject_fault, &mut rec));
    let rest: [(&'static str, Plain); 4] = [
        ("alpha-one", alpha_one),
        ("ensemble-evaluation", evaluation),
        ("mcm-hand-table", mcm_table),
        ("diversity-pipeline", diversity),
    ];
    for (name, f_) in rest {
        push(name, f_(&f));
    }

    let report = SmokeReport {
        passed: checks.iter().filter(|c| c.pass).count(),
        total: checks.len(),
        checks,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    rec.write(&args.out.join("smoke_report.json"), json + "\n")?;
    rec.finish()?;
    Ok(report)
}

pub fn print(report: &SmokeReport) {
    let width = report.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &report.checks {
        let status = if c.pass { "PASS" } else { "FAIL" };
        println!("{status}  {:width$}  {}", c.name, c.detail);
    }
    println!("{}/{} checks passed", report.passed, report.total);
}
