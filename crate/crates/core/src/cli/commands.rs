use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use super::{
    AblateArgs, Command, EvalArgs, ExportArgs, GenCorpusArgs, ProviderArgs, ProviderSource,
    ScoreArgs, ServeArgs, TrainArgs,
};
use crate::alliance::{score_rows, write_scores_csv};
use crate::corpus::{
    generate_with_inventory, load_corpus, write_corpus, Condition, GeneratorSpec, Session,
};
use crate::digest::{config_digest, derive_seed};
use crate::embedding::{write_vector_file, EmbedServer, Embedder, ProviderConfig, ProviderKind};
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::inventory::{load_inventory, Inventory};
use crate::models::{ModelCheckpoint, ModelConfig, SequenceModel};
use crate::pipeline::{
    evaluate, prepare_examples, run_ablation_grid, score_corpus, split_for_run, train,
    AblationConfig, GridSpec, LogRow, ProviderRun, RunContext, TrainConfig,
};

pub(super) fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::GenCorpus(a) => gen_corpus(a, out),
        Command::Score(a) => score(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Ablate(a) => ablate(a, out),
        Command::ServeEmbed(a) => serve(a, out),
        Command::ExportVectors(a) => export_vectors(a, out),
    }
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn digest_line<T: Serialize + ?Sized>(value: &T) -> String {
    format!("config_digest={}", config_digest(value))
}

fn load_inv(path: &Option<std::path::PathBuf>) -> Result<Inventory> {
    match path {
        Some(p) => load_inventory(p),
        None => Ok(Inventory::placeholder()),
    }
}

fn provider_config(name: &str, src: &ProviderSource) -> Result<ProviderConfig> {
    match name {
        "hash" => Ok(ProviderConfig {
            kind: ProviderKind::Hash {
                dim: src.dim,
                seed: src.hash_seed,
            },
            cache_capacity: 0,
        }),
        "file" => {
            let path = src
                .vectors
                .clone()
                .ok_or_else(|| Error::Config("the file provider needs --vectors".into()))?;
            Ok(ProviderConfig::file(path))
        }
        "remote" => {
            let endpoint = src
                .endpoint
                .clone()
                .ok_or_else(|| Error::Config("the remote provider needs --endpoint".into()))?;
            Ok(ProviderConfig::remote(endpoint).with_cache(src.cache))
        }
        other => Err(Error::Config(format!("unknown provider '{other}'"))),
    }
}

fn open_provider(config: &ProviderConfig) -> Result<Embedder> {
    Embedder::from_config(config)
        .map_err(|e| Error::from(e).context(format!("opening {} provider", config.name())))
}

fn provider_from_args(args: &ProviderArgs) -> Result<(ProviderConfig, Embedder)> {
    let cfg = provider_config(&args.provider, &args.source)?;
    let emb = open_provider(&cfg)?;
    Ok((cfg, emb))
}

fn gen_corpus(a: GenCorpusArgs, out: &mut dyn Write) -> Result<()> {
    let counts = match (a.sessions_per_class, &a.class_counts) {
        (Some(n), None) => [n as usize; Condition::COUNT],
        (None, Some(c)) if c.len() == Condition::COUNT => [c[0], c[1], c[2], c[3]],
        (None, Some(c)) => {
            return Err(Error::Config(format!(
                "--class-counts needs {} values, got {}",
                Condition::COUNT,
                c.len()
            )))
        }
        _ => {
            return Err(Error::Config(
                "one of --sessions-per-class or --class-counts is required".into(),
            ))
        }
    };
    let mut spec = GeneratorSpec::new(counts, a.turns, a.seed).with_marker_rate(a.marker_rate);
    spec.therapist_marker_rate = a.therapist_marker_rate;
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let digest = digest_line(&spec);
    let sessions = generate_with_inventory(&spec, &Inventory::placeholder())?;
    write_corpus(&a.out, &sessions, Some(&digest))?;
    say(out, &digest)?;
    for c in Condition::ALL {
        say(out, format!("{c}: {}", counts[c.code()]))?;
    }
    say(
        out,
        format!("sessions: {} -> {}", sessions.len(), a.out.display()),
    )
}

fn score(a: ScoreArgs, out: &mut dyn Write) -> Result<()> {
    let sessions = load_corpus(&a.corpus)?;
    let inventory = load_inv(&a.inventory)?;
    let (pcfg, embedder) = provider_from_args(&a.provider)?;
    let digest = digest_line(&(&pcfg, &inventory));
    let scored = score_corpus(&sessions, &inventory, &embedder, usize::MAX)?;
    let rows: Vec<_> = scored
        .iter()
        .flat_map(|s| score_rows(s, &inventory))
        .collect();
    let mut buf = Vec::new();
    write_scores_csv(&mut buf, &rows, inventory.size(), Some(&digest))
        .map_err(|e| Error::io(&a.out, e))?;
    fs::write(&a.out, buf).map_err(|e| Error::io(&a.out, e))?;
    say(out, &digest)?;
    say(out, format!("rows: {} -> {}", rows.len(), a.out.display()))
}

fn train_config(
    iters: u64,
    seed: u64,
    lr: f64,
    momentum: f64,
    max_pairs: usize,
    eval_every: Option<usize>,
    validation_draws: usize,
) -> TrainConfig {
    let mut cfg = TrainConfig::new(iters as usize, seed);
    cfg.lr = lr;
    cfg.momentum = momentum;
    cfg.max_pairs = max_pairs;
    cfg.validation_draws = validation_draws;
    if let Some(e) = eval_every {
        cfg.eval_every = e;
    }
    cfg
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "--test-fraction must lie in (0, 1), got {f}"
        )))
    }
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut tcfg = train_config(
        a.iters,
        a.seed,
        a.lr,
        a.momentum,
        a.max_pairs,
        a.eval_every,
        a.validation_draws,
    );
    tcfg.clip_norm = a.clip_norm;
    tcfg.plateau_window = a.plateau_window;
    tcfg.validate()?;
    check_fraction(a.test_fraction)?;
    say(
        out,
        format!(
            "lr={} momentum={} iters={} eval_every={} max_pairs={} seed={}",
            tcfg.lr, tcfg.momentum, tcfg.iterations, tcfg.eval_every, tcfg.max_pairs, tcfg.seed
        ),
    )?;

    let sessions = load_corpus(&a.corpus)?;
    let inventory = load_inv(&a.inventory)?;
    let (pcfg, embedder) = provider_from_args(&a.provider)?;
    let mut feature = FeatureConfig::new(a.features, a.turns, embedder.dim());
    feature.inventory_size = inventory.size();
    let run = RunContext {
        feature,
        provider: pcfg,
        inventory,
        train: tcfg.clone(),
        test_fraction: a.test_fraction,
        split_seed: a.split_seed.unwrap_or(a.seed),
    };
    let mut mcfg = ModelConfig::new(a.model, feature.feature_dim(), derive_seed(a.seed, "init"));
    mcfg.max_len = tcfg.max_pairs;
    let digest = ModelCheckpoint::digest_for(&mcfg, Some(&run));
    say(out, format!("config_digest={digest}"))?;

    let (_, train_sessions, _) = split_for_run(&sessions, &run)?;
    let examples = prepare_examples(&train_sessions, &run, &embedder)?;
    let model = SequenceModel::new(mcfg)?;
    let outcome = train(model, &examples, &tcfg)?;

    let ckpt = ModelCheckpoint::new(
        &outcome.best,
        Some(run),
        Some(&outcome.best_optimizer),
        outcome.best_iteration as u64,
        Some(&outcome.rng),
    );
    ckpt.save(&a.out_checkpoint)?;
    let mut log = format!("# config_digest={digest}\n");
    if outcome.failure.flagged {
        log.push_str(&format!("# failure={}\n", outcome.failure));
    }
    log.push_str(LogRow::csv_header());
    log.push('\n');
    for row in &outcome.log {
        log.push_str(&row.to_csv());
        log.push('\n');
    }
    write_file(&a.log, &log)?;
    say(
        out,
        format!(
            "best_iteration={} best_val_accuracy={:.2} iterations_run={}",
            outcome.best_iteration, outcome.best_val_accuracy, outcome.iterations_run
        ),
    )?;
    say(out, format!("failure={}", outcome.failure))?;
    say(out, format!("checkpoint -> {}", a.out_checkpoint.display()))
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = ModelCheckpoint::load(&a.checkpoint)?;
    let mut run = ckpt
        .run
        .clone()
        .ok_or_else(|| Error::Checkpoint("checkpoint carries no run context".into()))?;
    say(out, format!("config_digest={}", ckpt.config_digest))?;
    if let Some(s) = a.split_seed {
        run.split_seed = s;
    }
    let model = ckpt.to_model()?;
    let sessions = load_corpus(&a.corpus)?;
    let embedder = open_provider(&run.provider)?;
    let (_, _, test_sessions) = split_for_run(&sessions, &run)?;
    let test = prepare_examples(&test_sessions, &run, &embedder)?;
    let ev = evaluate(&model, &test, a.n as usize, a.seed)?;
    say(out, format!("accuracy={:.2}%", ev.accuracy))?;
    write!(out, "{}", ev.confusion).map_err(|e| Error::io("<stdout>", e))?;
    say(out, format!("failure={}", ev.failure))?;
    if let Some(path) = &a.confusion {
        write_file(
            path,
            &ev.confusion
                .to_csv(Some(&format!("config_digest={}", ckpt.config_digest))),
        )?;
    }
    Ok(())
}

fn ablate(a: AblateArgs, out: &mut dyn Write) -> Result<()> {
    check_fraction(a.test_fraction)?;
    let tcfg = train_config(
        a.iters,
        a.seed,
        a.lr,
        a.momentum,
        a.max_pairs,
        a.eval_every,
        a.validation_draws,
    );
    tcfg.validate()?;
    let sessions = load_corpus(&a.corpus)?;
    let inventory = load_inv(&a.inventory)?;
    let mut providers = Vec::new();
    for name in &a.providers {
        let cfg = provider_config(name, &a.source)?;
        providers.push(ProviderRun {
            name: name.clone(),
            embedder: Arc::new(open_provider(&cfg)?),
        });
    }
    let full = GridSpec::full();
    let spec = GridSpec {
        classifiers: a.classifiers.unwrap_or(full.classifiers),
        features: a.features.unwrap_or(full.features),
        sources: a.sources.unwrap_or(full.sources),
    };
    let mut config = AblationConfig::new(tcfg, a.seed);
    config.test_fraction = a.test_fraction;
    config.split_seed = a.split_seed.unwrap_or(a.seed);
    config.eval_samples = a.eval_samples;
    config.jobs = a.jobs;
    config.out_dir = Some(a.out_dir.clone());
    let result = run_ablation_grid(&sessions, &inventory, &providers, &spec, &config)?;
    let table = result.to_table();
    write_file(&a.out_dir.join("summary.csv"), &result.to_csv())?;
    write_file(
        &a.out_dir.join("summary.txt"),
        &format!("# config_digest={}\n{table}", result.config_digest),
    )?;
    say(out, format!("config_digest={}", result.config_digest))?;
    write!(out, "{table}").map_err(|e| Error::io("<stdout>", e))?;
    let errors = result.cells.iter().filter(|c| c.error.is_some()).count();
    let flagged = result.cells.iter().filter(|c| c.failure.flagged).count();
    say(
        out,
        format!(
            "cells={} flagged={flagged} errors={errors}",
            result.cells.len()
        ),
    )
}

fn serve(a: ServeArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = ProviderConfig {
        kind: ProviderKind::Hash {
            dim: a.dim,
            seed: a.hash_seed,
        },
        cache_capacity: 0,
    };
    let embedder = Arc::new(open_provider(&cfg)?);
    let server = EmbedServer::start(&format!("{}:{}", a.host, a.port), embedder)?;
    say(out, digest_line(&cfg))?;
    say(out, format!("listening on {}/embed", server.url()))?;
    out.flush().map_err(|e| Error::io("<stdout>", e))?;
    server.wait();
    Ok(())
}

fn export_vectors(a: ExportArgs, out: &mut dyn Write) -> Result<()> {
    let sessions: Vec<Session> = load_corpus(&a.corpus)?;
    let inventory = load_inv(&a.inventory)?;
    let cfg = ProviderConfig {
        kind: ProviderKind::Hash {
            dim: a.dim,
            seed: a.hash_seed,
        },
        cache_capacity: 0,
    };
    let embedder = open_provider(&cfg)?;
    let mut texts: Vec<String> = Vec::new();
    for s in &sessions {
        for p in &s.pairs {
            texts.push(p.patient.text.clone());
            texts.push(p.therapist.text.clone());
        }
    }
    for rater in crate::corpus::Speaker::BOTH {
        texts.extend(inventory.items(rater).iter().map(|i| i.text.clone()));
    }
    let n = write_vector_file(&a.out, &texts, &embedder)?;
    say(out, digest_line(&cfg))?;
    say(out, format!("vectors: {n} -> {}", a.out.display()))
}
