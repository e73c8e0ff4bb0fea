use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use wda::adaptation::{run_adaptation, AdaptInputs, Method};
use wda::checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
use wda::data::{class_names_for, generate_synthetic, load_manifest, write_dataset, Dataset};
use wda::divergence::DivergenceMeasurement;
use wda::domain::ParameterSet;
use wda::evaluation::{comparison_rows, render_table, DivergenceBlock, EvalReport, ModelKind};
use wda::experiment::{divergence_block, model_report};
use wda::models::{ModelSpec, Models};
use wda::source_training::train_source;

use crate::cli::{Command, MethodArg};
use crate::config::{io_failure, resolve, CliResult, Failure, Overrides, Resolved, Verbosity};
use crate::plot;

pub const EXTRACTOR: &str = "extractor.ckpt";
pub const CLASSIFIER: &str = "classifier.ckpt";
pub const CRITIC: &str = "critic.ckpt";
pub const SOURCE_EXTRACTOR: &str = "source_extractor.ckpt";
pub const SOURCE_HISTORY: &str = "source_history.json";
pub const ADAPT_HISTORY: &str = "history.jsonl";

pub struct Ctx {
    pub verbosity: Verbosity,
}

impl Ctx {
    fn info(&self, msg: impl AsRef<str>) {
        if self.verbosity >= Verbosity::Normal {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn debug(&self, msg: impl AsRef<str>) {
        if self.verbosity >= Verbosity::Debug {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn announce(&self, r: &Resolved) -> CliResult<()> {
        self.info(r.describe());
        self.debug(r.to_toml()?);
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::Config(format!("cannot encode JSON: {e}")))
}

fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    let manifest = dir.join("manifest.csv");
    if !manifest.exists() {
        return Err(Failure::Data(format!("{} not found", manifest.display())));
    }
    let names = class_names_for(&manifest)?;
    Ok(load_manifest(&manifest, &names)?)
}

fn header(role: &str, method: Option<Method>, spec: &ModelSpec) -> CliResult<CheckpointHeader> {
    Ok(CheckpointHeader {
        role: role.into(),
        method: method.map(|m| m.as_str().to_string()),
        spec: serde_json::to_value(spec).map_err(|e| Failure::Config(e.to_string()))?,
    })
}

/// Weights of one checkpoint directory.
struct Loaded {
    models: Models,
    method: Option<Method>,
    extractor: ParameterSet,
    classifier: ParameterSet,
    /// `M_S` the extractor was adapted from; `None` for a source directory.
    source_extractor: Option<ParameterSet>,
}

fn read_role(dir: &Path, file: &str, role: &str) -> CliResult<(CheckpointHeader, ParameterSet)> {
    let path = dir.join(file);
    if !path.exists() {
        return Err(Failure::Data(format!("{} not found", path.display())));
    }
    let (h, p) = read_checkpoint(&path)?;
    if h.role != role {
        return Err(Failure::Data(format!("{} holds a {} checkpoint, expected {role}", path.display(), h.role)));
    }
    Ok((h, p))
}

fn load_dir(dir: &Path) -> CliResult<Loaded> {
    let (h, extractor) = read_role(dir, EXTRACTOR, "extractor")?;
    let (_, classifier) = read_role(dir, CLASSIFIER, "classifier")?;
    let spec: ModelSpec =
        serde_json::from_value(h.spec.clone()).map_err(|e| Failure::Data(format!("{}: bad model spec: {e}", dir.display())))?;
    let method = h.method.as_deref().map(str::parse::<Method>).transpose()?;
    let source_extractor = match method {
        Some(_) => Some(read_role(dir, SOURCE_EXTRACTOR, "extractor")?.1),
        None => None,
    };
    let models = Models::new(spec)?;
    models.extractor.network().check_params(&extractor)?;
    models.classifier.network().check_params(&classifier)?;
    Ok(Loaded {
        models,
        method,
        extractor,
        classifier,
        source_extractor,
    })
}

fn kind_of(method: Option<Method>) -> ModelKind {
    match method {
        None => ModelKind::NonAdapted,
        Some(Method::Wgan) => ModelKind::AdaptedWgan,
        Some(Method::Gan) => ModelKind::AdaptedGan,
    }
}

fn check_shape(models: &Models, data: &Dataset) -> CliResult<()> {
    let spec = &models.spec.extractor;
    if (spec.time_frames, spec.mel_bands) != (data.time_frames, data.mel_bands) || models.classifier.num_classes() != data.num_classes() {
        return Err(Failure::Data(format!(
            "checkpoint expects {}x{} inputs and {} classes, dataset has {}x{} and {}",
            spec.time_frames,
            spec.mel_bands,
            models.classifier.num_classes(),
            data.time_frames,
            data.mel_bands,
            data.num_classes()
        )));
    }
    Ok(())
}

pub fn run(command: Command, ctx: &Ctx) -> CliResult<()> {
    match command {
        Command::GenData { out, severity, common } => {
            let r = resolve(&common, Overrides::new().set("--severity", severity, |c, v| c.data.gain_curve_severity = v))?;
            ctx.announce(&r)?;
            r.config.data.validate()?;
            let data = generate_synthetic(&r.config.data)?;
            let manifest = write_dataset(&out, &data)?;
            r.write_to(&out)?;
            ctx.info(format!(
                "wrote {} source and {} target samples to {}",
                data.source_len(),
                data.target_len(),
                manifest.display()
            ));
            Ok(())
        }
        Command::TrainSource {
            data,
            out,
            epochs,
            lr,
            batch_size,
            common,
        } => {
            let r = resolve(
                &common,
                Overrides::new()
                    .set("--epochs", epochs, |c, v| c.source.epochs = v)
                    .set("--lr", lr, |c, v| c.source.learning_rate = v)
                    .set("--batch-size", batch_size, |c, v| c.source.batch_size = v),
            )?;
            ctx.announce(&r)?;
            let dataset = load_dataset(&data)?;
            let spec = wda::experiment::model_spec(r.config.extractor, dataset.time_frames, dataset.mel_bands, dataset.num_classes());
            let models = Models::new(spec.clone())?;
            let trained = train_source(&models, &dataset.source.train, &dataset.source.valid, &r.config.source)?;
            for e in &trained.history {
                ctx.info(format!(
                    "epoch {:>3}  loss {:.4}  train acc {:.3}  valid acc {:.3}",
                    e.epoch, e.loss_mean, e.accuracy, e.valid_accuracy
                ));
            }
            ensure_dir(&out)?;
            write_checkpoint(&out.join(EXTRACTOR), &header("extractor", None, &spec)?, &trained.extractor_params)?;
            write_checkpoint(&out.join(CLASSIFIER), &header("classifier", None, &spec)?, &trained.classifier_params)?;
            write_text(&out.join(SOURCE_HISTORY), &to_json(&trained.history)?)?;
            r.write_to(&out)?;
            let valid = trained.history[trained.best_epoch - 1].valid_accuracy;
            println!("selected epoch {} with source validation accuracy {valid:.4}", trained.best_epoch);
            Ok(())
        }
        Command::Adapt {
            method,
            data,
            source_ckpt,
            out,
            lr,
            batch_size,
            n_d,
            clip,
            max_epochs,
            steps_per_epoch,
            common,
        } => {
            let method = match method {
                MethodArg::Wgan => Method::Wgan,
                MethodArg::Gan => Method::Gan,
            };
            let r = resolve(
                &common,
                Overrides::new()
                    .set("--lr", lr, |c, v| c.adapt.learning_rate = v)
                    .set("--batch-size", batch_size, |c, v| c.adapt.batch_size = v)
                    .set("--n-d", n_d, |c, v| c.adapt.n_d = v)
                    .set("--clip", clip, |c, v| c.adapt.clip_c = v)
                    .set("--max-epochs", max_epochs, |c, v| c.adapt.max_epochs = v)
                    .set("--steps-per-epoch", steps_per_epoch, |c, v| c.adapt.steps_per_epoch = Some(v)),
            )?;
            ctx.announce(&r)?;
            let src = load_dir(&source_ckpt)?;
            if src.method.is_some() {
                return Err(Failure::Data(format!("{} is not a source checkpoint directory", source_ckpt.display())));
            }
            let dataset = load_dataset(&data)?;
            check_shape(&src.models, &dataset)?;
            // adaptation only ever sees the label-free view of the target split
            let target = dataset.target.train.unlabeled();
            let inputs = AdaptInputs {
                models: &src.models,
                ms_params: &src.extractor,
                h_star_params: &src.classifier,
                source: &dataset.source.train,
                target: &target,
            };
            let outcome = run_adaptation(method, inputs, &r.config.adapt, &mut |_| {})?;
            for e in &outcome.history.epochs {
                ctx.debug(format!(
                    "epoch {:>3}  critic {:+.5}  generator {:+.5}  source CE {:.4}",
                    e.epoch, e.critic_loss_mean, e.generator_loss_mean, e.source_ce_mean
                ));
            }
            let spec = &src.models.spec;
            ensure_dir(&out)?;
            write_checkpoint(&out.join(EXTRACTOR), &header("extractor", Some(method), spec)?, &outcome.mt_params)?;
            write_checkpoint(&out.join(CLASSIFIER), &header("classifier", None, spec)?, &src.classifier)?;
            write_checkpoint(&out.join(SOURCE_EXTRACTOR), &header("extractor", None, spec)?, &src.extractor)?;
            write_checkpoint(&out.join(CRITIC), &header("critic", Some(method), spec)?, &outcome.critic_params)?;
            write_text(&out.join(ADAPT_HISTORY), &outcome.history.to_json_lines()?)?;
            r.write_to(&out)?;
            println!(
                "{} adaptation: {} epochs ({:?}), {} critic and {} generator updates",
                method.as_str(),
                outcome.history.epochs.len(),
                outcome.history.stop,
                outcome.history.critic_updates,
                outcome.history.generator_updates
            );
            Ok(())
        }
        Command::Evaluate { data, ckpts, out, common } => {
            let r = resolve(&common, Overrides::new())?;
            ctx.announce(&r)?;
            let dataset = load_dataset(&data)?;
            let echo = serde_json::to_value(&r.config).map_err(|e| Failure::Config(e.to_string()))?;
            let mut report = EvalReport::new(r.config.seed, dataset.class_names.clone(), echo);
            let mut seen = Vec::new();
            for dir in &ckpts {
                let l = load_dir(dir)?;
                check_shape(&l.models, &dataset)?;
                let kind = kind_of(l.method);
                if seen.contains(&kind) {
                    return Err(Failure::Config(format!("more than one {} checkpoint given", kind.as_str())));
                }
                seen.push(kind);
                report.set_model(model_report(&l.models, &l.extractor, &l.classifier, &dataset, kind)?);
                if let Some(ms) = &l.source_extractor {
                    let (block, _) = divergence_block(&l.models, ms, &l.extractor, &dataset, kind, &r.config.divergence)?;
                    report.divergence.push(block);
                }
            }
            report.divergence.sort_by_key(|b| b.model);
            write_text(&out, &report.to_json()?)?;
            for m in &report.models {
                for (domain, e) in [("source", &m.source), ("target", &m.target)] {
                    let csv = confusion_path(&out, m.model, domain);
                    write_text(&csv, &e.confusion.to_csv())?;
                }
                println!(
                    "{}: source accuracy {:.4} (macro {:.4}), target accuracy {:.4} (macro {:.4})",
                    m.model.as_str(),
                    m.source.micro_accuracy,
                    m.source.macro_accuracy,
                    m.target.micro_accuracy,
                    m.target.macro_accuracy
                );
            }
            if report.model(ModelKind::NonAdapted).is_some() {
                println!("{}", render_table(&comparison_rows(&report)?));
            }
            r.write_to(out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")))?;
            Ok(())
        }
        Command::Divergence { data, ckpts, out, common } => {
            let r = resolve(&common, Overrides::new())?;
            ctx.announce(&r)?;
            let dataset = load_dataset(&data)?;
            let l = load_dir(&ckpts)?;
            check_shape(&l.models, &dataset)?;
            let ms = l.source_extractor.as_ref().unwrap_or(&l.extractor);
            let (block, measurement) = divergence_block(&l.models, ms, &l.extractor, &dataset, kind_of(l.method), &r.config.divergence)?;
            #[derive(Serialize)]
            struct DivergenceOutput<'a> {
                seed: u64,
                summary: &'a DivergenceBlock,
                measurement: &'a DivergenceMeasurement,
            }
            write_text(
                &out,
                &to_json(&DivergenceOutput {
                    seed: r.config.seed,
                    summary: &block,
                    measurement: &measurement,
                })?,
            )?;
            println!(
                "critic estimate {:.4} -> {:.4}; H-divergence bound {:.3} -> {:.3} (network classifier {:.3} -> {:.3})",
                block.critic_wasserstein_estimate.before,
                block.critic_wasserstein_estimate.after,
                block.hdh_bound_estimate.before,
                block.hdh_bound_estimate.after,
                block.hdh_network_classifier.before,
                block.hdh_network_classifier.after
            );
            Ok(())
        }
        Command::Plot {
            report,
            out,
            history,
            common,
        } => {
            let r = resolve(&common, Overrides::new())?;
            ctx.announce(&r)?;
            let text = fs::read_to_string(&report).map_err(|e| io_failure(&report, e))?;
            let report = EvalReport::from_json(&text).map_err(|e| Failure::Data(e.to_string()))?;
            ensure_dir(&out)?;
            let mut written = Vec::new();
            for m in &report.models {
                for (domain, e) in [("source", &m.source), ("target", &m.target)] {
                    let path = out.join(format!("confusion_{}_{domain}.png", m.model.as_str()));
                    plot::confusion_heatmap(&e.confusion, &path)?;
                    written.push(path);
                }
            }
            for (i, h) in history.iter().enumerate() {
                let curves = plot::read_history(h)?;
                let path = out.join(format!("history_{i}_{}.png", curves.method));
                plot::history_curves(&curves, &path)?;
                written.push(path);
            }
            r.write_to(&out)?;
            for p in written {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn confusion_path(report: &Path, kind: ModelKind, domain: &str) -> PathBuf {
    let stem = report.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    report.with_file_name(format!("{stem}.{}.{domain}.confusion.csv", kind.as_str()))
}
