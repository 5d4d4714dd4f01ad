//! End-to-end experiment orchestration: split, train, evaluate, persist.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::checkpoint::{
    checkpoint_save, Checkpoint, CheckpointMeta, CheckpointPayload,
};
use super::config::{ModelKind, RunConfig};
use super::reports::emit_reports;
use crate::autodiff::ParamSet;
use crate::baselines::{itempop_scores, train_mlc};
use crate::dataio::{load_and_split, InteractionMatrix, SplitDataset};
use crate::error::{CheckpointFault, Error, Result};
use crate::evaluation::{evaluate_model, LearningCurve, MetricsReport, SplitTag};
use crate::models::{self, MlpSpec};
use crate::training::{train_gan, GanHyperParams};

#[derive(Debug)]
pub struct RunOutcome {
    /// Test metrics of the final model (retrained on train+validation when
    /// the protocol flag is set).
    pub final_report: MetricsReport,
    /// Test metrics of the train-only model at its best validation epoch;
    /// recorded alongside the retrained protocol.
    pub trainonly_report: Option<MetricsReport>,
    pub curve: LearningCurve,
    pub best_epoch: usize,
    pub checkpoint_path: PathBuf,
    pub digest: [u8; 32],
}

/// sha-256 over the canonical config echo followed by the raw dataset
/// bytes; enough, with the seed, to reproduce the run bit-exactly in
/// single-threaded mode.
pub fn run_digest(cfg: &RunConfig) -> Result<[u8; 32]> {
    let mut hasher = Sha256::new();
    hasher.update(cfg.echo().as_bytes());
    let data = std::fs::read(&cfg.dataset_path)?;
    hasher.update(&data);
    Ok(hasher.finalize().into())
}

/// Score provider backed by an MLP: condition vectors in, item scores out.
fn mlp_scorer<'a>(
    spec: &'a MlpSpec,
    params: &'a ParamSet,
    split: &'a SplitDataset,
    include_validation: bool,
) -> impl Fn(&[usize]) -> Result<Vec<Vec<f64>>> + Sync + 'a {
    move |users: &[usize]| {
        let rows: Vec<Vec<f64>> = users
            .iter()
            .map(|&u| split.condition_vector(u, include_validation))
            .collect::<Result<_>>()?;
        models::forward_values(spec, params, &rows)
    }
}

fn constant_scorer(scores: Vec<f64>) -> impl Fn(&[usize]) -> Result<Vec<Vec<f64>>> + Sync {
    move |users: &[usize]| Ok(users.iter().map(|_| scores.clone()).collect())
}

fn write_provenance(cfg: &RunConfig, split: &SplitDataset) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.echo"), cfg.echo())?;
    let mut manifest = Vec::new();
    split.write_manifest(&mut manifest)?;
    std::fs::write(cfg.out_dir.join("split_manifest.txt"), manifest)?;
    Ok(())
}

fn gan_phase(
    cfg: &RunConfig,
    split: &SplitDataset,
) -> Result<(MetricsReport, Option<MetricsReport>, LearningCurve, usize, Checkpoint)> {
    let n = split.items();
    let gen_spec = MlpSpec::generator(n, cfg.gen_hidden.clone())?;
    let disc_spec = MlpSpec::discriminator(n, cfg.disc_hidden.clone())?;

    let mut hook = |params: &ParamSet, epoch: usize| {
        let scorer = mlp_scorer(&gen_spec, params, split, false);
        let report = evaluate_model(&scorer, split, SplitTag::Valid, false, cfg.threads)?;
        println!(
            "epoch {epoch}: valid N@20={:.4} N@5={:.4} P@5={:.4}",
            report.n20, report.n5, report.p5
        );
        Ok(report.into())
    };
    let outcome = train_gan(&split.train, &gen_spec, &disc_spec, &cfg.gan, Some(&mut hook))?;
    let mut curve = outcome.curve.clone();

    // Test metrics of the train-only model, recorded on the curve at its
    // best epoch.
    let trainonly_report = {
        let scorer = mlp_scorer(&gen_spec, &outcome.generator, split, false);
        let report = evaluate_model(&scorer, split, SplitTag::Test, false, cfg.threads)?;
        curve.push(outcome.best_epoch.max(1), SplitTag::Test, report)?;
        report
    };

    let (final_report, final_gen, final_disc) = if cfg.retrain_on_train_valid {
        let merged = split.train_plus_valid()?;
        let refit_hp = GanHyperParams {
            max_epochs: outcome.best_epoch.max(1),
            eval_every: 0,
            ..cfg.gan.clone()
        };
        let refit = train_gan(&merged, &gen_spec, &disc_spec, &refit_hp, None)?;
        let report = {
            let scorer = mlp_scorer(&gen_spec, &refit.generator, split, true);
            evaluate_model(&scorer, split, SplitTag::Test, true, cfg.threads)?
        };
        (report, refit.generator, refit.discriminator)
    } else {
        (trainonly_report, outcome.generator, outcome.discriminator)
    };

    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            kind: cfg.model,
            seed: cfg.seed,
            epoch: outcome.best_epoch as u32,
            digest: [0u8; 32], // patched by the caller
        },
        payload: CheckpointPayload::Mlp(vec![
            (gen_spec.clone(), final_gen),
            (disc_spec.clone(), final_disc),
        ]),
    };
    Ok((
        final_report,
        Some(trainonly_report),
        curve,
        outcome.best_epoch,
        ckpt,
    ))
}

fn mlc_phase(
    cfg: &RunConfig,
    split: &SplitDataset,
) -> Result<(MetricsReport, Option<MetricsReport>, LearningCurve, usize, Checkpoint)> {
    let mut hook_spec: Option<MlpSpec> = None;
    let mut hook = |params: &ParamSet, epoch: usize| {
        let spec = hook_spec
            .get_or_insert_with(|| MlpSpec::mlc(split.items(), vec![cfg.mlc.hidden]).unwrap())
            .clone();
        let scorer = mlp_scorer(&spec, params, split, false);
        let report = evaluate_model(&scorer, split, SplitTag::Valid, false, cfg.threads)?;
        println!(
            "epoch {epoch}: valid N@20={:.4} N@5={:.4} P@5={:.4}",
            report.n20, report.n5, report.p5
        );
        Ok(report.into())
    };
    let outcome = train_mlc(&split.train, &cfg.mlc, Some(&mut hook))?;
    let mut curve = outcome.curve.clone();

    let trainonly_report = {
        let scorer = mlp_scorer(&outcome.spec, &outcome.params, split, false);
        let report = evaluate_model(&scorer, split, SplitTag::Test, false, cfg.threads)?;
        curve.push(outcome.best_epoch.max(1), SplitTag::Test, report)?;
        report
    };

    let (final_report, final_params) = if cfg.retrain_on_train_valid {
        let merged = split.train_plus_valid()?;
        let refit_hp = crate::baselines::MlcHyperParams {
            max_epochs: outcome.best_epoch.max(1),
            eval_every: 0,
            ..cfg.mlc.clone()
        };
        let refit = train_mlc(&merged, &refit_hp, None)?;
        let report = {
            let scorer = mlp_scorer(&refit.spec, &refit.params, split, true);
            evaluate_model(&scorer, split, SplitTag::Test, true, cfg.threads)?
        };
        (report, refit.params)
    } else {
        (trainonly_report, outcome.params)
    };

    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            kind: ModelKind::Mlc,
            seed: cfg.seed,
            epoch: outcome.best_epoch as u32,
            digest: [0u8; 32],
        },
        payload: CheckpointPayload::Mlp(vec![(outcome.spec.clone(), final_params)]),
    };
    Ok((
        final_report,
        Some(trainonly_report),
        curve,
        outcome.best_epoch,
        ckpt,
    ))
}

fn itempop_phase(
    cfg: &RunConfig,
    split: &SplitDataset,
) -> Result<(MetricsReport, Option<MetricsReport>, LearningCurve, usize, Checkpoint)> {
    let mut curve = LearningCurve::new();
    let valid_scores = itempop_scores(&split.train);
    let valid_report = evaluate_model(
        &constant_scorer(valid_scores.clone()),
        split,
        SplitTag::Valid,
        false,
        cfg.threads,
    )?;
    curve.push(1, SplitTag::Valid, valid_report)?;

    let trainonly_report = evaluate_model(
        &constant_scorer(valid_scores),
        split,
        SplitTag::Test,
        false,
        cfg.threads,
    )?;
    curve.push(1, SplitTag::Test, trainonly_report)?;

    let (final_report, final_scores) = if cfg.retrain_on_train_valid {
        let merged = split.train_plus_valid()?;
        let scores = itempop_scores(&merged);
        let report = evaluate_model(
            &constant_scorer(scores.clone()),
            split,
            SplitTag::Test,
            true,
            cfg.threads,
        )?;
        (report, scores)
    } else {
        (trainonly_report, itempop_scores(&split.train))
    };

    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            kind: ModelKind::ItemPop,
            seed: cfg.seed,
            epoch: 0,
            digest: [0u8; 32],
        },
        payload: CheckpointPayload::Scores(final_scores),
    };
    Ok((final_report, Some(trainonly_report), curve, 0, ckpt))
}

/// Train per the config, evaluate on validation during training and on
/// test at the end, and write the learning-curve CSV, final-metrics CSV,
/// comparison CSV, checkpoint, config echo and split manifest.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let digest = run_digest(cfg)?;
    let split = load_and_split(
        &cfg.dataset_path,
        cfg.dataset_format,
        cfg.test_ratio,
        cfg.valid_ratio,
        cfg.seed,
    )?;
    write_provenance(cfg, &split)?;

    let (final_report, trainonly_report, curve, best_epoch, mut ckpt) = match cfg.model {
        ModelKind::CfwganGp | ModelKind::CfganVanilla => gan_phase(cfg, &split)?,
        ModelKind::Mlc => mlc_phase(cfg, &split)?,
        ModelKind::ItemPop => itempop_phase(cfg, &split)?,
    };

    ckpt.meta.digest = digest;
    let checkpoint_path = cfg.out_dir.join("model.ckpt");
    checkpoint_save(&checkpoint_path, &ckpt)?;
    emit_reports(
        &cfg.out_dir,
        cfg.dataset_format,
        cfg.model.name(),
        cfg.seed,
        &curve,
        &final_report,
    )?;

    Ok(RunOutcome {
        final_report,
        trainonly_report,
        curve,
        best_epoch,
        checkpoint_path,
        digest,
    })
}

/// Re-evaluate a checkpoint on the test split of the config's dataset.
/// The stored digest must match the digest recomputed from the config;
/// a mismatch means the checkpoint belongs to a different run.
pub fn evaluate_checkpoint(cfg: &RunConfig, checkpoint_path: &Path) -> Result<MetricsReport> {
    cfg.validate()?;
    let ckpt = super::checkpoint::checkpoint_load(checkpoint_path)?;
    let digest = run_digest(cfg)?;
    if ckpt.meta.digest != digest {
        return Err(Error::Checkpoint {
            fault: CheckpointFault::DigestMismatch,
            msg: "checkpoint digest does not match this config/dataset".into(),
        });
    }
    if ckpt.meta.kind != cfg.model {
        return Err(Error::Checkpoint {
            fault: CheckpointFault::Corrupt,
            msg: format!(
                "checkpoint holds a {} model, config says {}",
                ckpt.meta.kind.name(),
                cfg.model.name()
            ),
        });
    }
    let split = load_and_split(
        &cfg.dataset_path,
        cfg.dataset_format,
        cfg.test_ratio,
        cfg.valid_ratio,
        cfg.seed,
    )?;
    match &ckpt.payload {
        CheckpointPayload::Mlp(ms) => {
            let (spec, params) = &ms[0];
            let scorer = mlp_scorer(spec, params, &split, cfg.retrain_on_train_valid);
            evaluate_model(
                &scorer,
                &split,
                SplitTag::Test,
                cfg.retrain_on_train_valid,
                cfg.threads,
            )
        }
        CheckpointPayload::Scores(scores) => evaluate_model(
            &constant_scorer(scores.clone()),
            &split,
            SplitTag::Test,
            cfg.retrain_on_train_valid,
            cfg.threads,
        ),
    }
}

/// The matrix a final model was conditioned on, per the protocol flag.
pub fn final_condition_matrix(cfg: &RunConfig, split: &SplitDataset) -> Result<InteractionMatrix> {
    if cfg.retrain_on_train_valid {
        split.train_plus_valid()
    } else {
        Ok(split.train.clone())
    }
}
