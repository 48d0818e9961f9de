use std::path::{Path, PathBuf};

use log::info;
use serde_json::json;

use memex_core::corpus::{
    generate_synthetic, AnswerKey, SyntheticConfig, ANSWER_KEY_FILE, FEATURES_FILE,
};
use memex_core::encoders::PretrainConfig;
use memex_core::engine::{Engine, EngineConfig, Model, ModelKind};
use memex_core::eval::{four_w_distribution, kl, CategoryDistribution};
use memex_core::index::InvertedIndex;
use memex_core::nn::{Checkpoint, FitConfig, OptimizerKind};
use memex_core::textproc::normalize;
use memex_core::{Corpus, FeatureStore};

use crate::settings::Settings;
use crate::{Cli, CliError, Command, CorpusArgs, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

pub struct Ctx {
    pub settings: Settings,
    pub seed: u64,
    pub json: bool,
}

impl Ctx {
    fn log_config(&self, command: &str) {
        info!(
            "{command}: {}",
            serde_json::to_string(self.settings.resolved()).unwrap_or_default()
        );
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut settings = Settings::load(cli.config.as_deref())?;
    let seed = settings.seed(cli.seed)?;
    if let Some(n) = settings.optional::<usize>("threads", cli.threads)? {
        if n == 0 {
            return Err(CliError::Validation("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let mut ctx = Ctx {
        settings,
        seed,
        json: cli.json,
    };
    match cli.command {
        Command::Gen {
            out,
            users,
            albums,
            photos,
            qas_per_photo,
            feature_dim,
        } => {
            let d = SyntheticConfig::default();
            let s = &mut ctx.settings;
            let config = SyntheticConfig {
                n_users: s.value("users", users, d.n_users)?,
                albums_per_user: s.value("albums", albums, d.albums_per_user)?,
                photos_per_album: s.value("photos", photos, d.photos_per_album)?,
                qas_per_photo: s.value("qas_per_photo", qas_per_photo, d.qas_per_photo)?,
                feature_dim: s.value("feature_dim", feature_dim, d.feature_dim)?,
                ..d
            };
            let out = s.required_path("out", out)?;
            gen(&ctx, &config, &out)
        }
        Command::Ingest { corpus, out } => {
            let out = ctx.settings.path("out", out)?;
            ingest(&mut ctx, &corpus, out.as_deref())
        }
        Command::Stats { corpus, reference } => {
            let reference = ctx.settings.path("reference", reference)?;
            stats(&mut ctx, &corpus, reference.as_deref())
        }
        Command::Index { corpus, out } => {
            let out = ctx.settings.required_path("out", out)?;
            index(&mut ctx, &corpus, &out)
        }
        Command::Search {
            user,
            query,
            corpus,
            index,
            k,
        } => {
            let index = ctx.settings.path("index", index)?;
            let k = ctx.settings.value("k", k, 5)?;
            search(&mut ctx, &corpus, index.as_deref(), &user, &query, k)
        }
        Command::Pretrain { corpus, out, train } => {
            let out = ctx.settings.required_path("out", out)?;
            pretrain(&mut ctx, &corpus, &train, &out)
        }
        Command::Train {
            kind,
            corpus,
            out,
            train: args,
            pretrained,
        } => {
            let kind: ModelKind = kind.parse()?;
            let out = ctx.settings.required_path("out", out)?;
            let pretrained = ctx.settings.path("pretrained", pretrained)?;
            train(&mut ctx, kind, &corpus, &args, &out, pretrained.as_deref())
        }
        Command::Eval {
            checkpoint,
            corpus,
            split,
        } => {
            let split = ctx.settings.value("split", split, "test".to_string())?;
            eval(&mut ctx, &checkpoint, &corpus, &split)
        }
        Command::Ask {
            checkpoint,
            user,
            corpus,
            explain,
        } => {
            let (engine, model) = load_model(&mut ctx, &checkpoint, &corpus)?;
            ctx.log_config("ask");
            let Model::MemexNet(net) = model else {
                return Err(CliError::Validation(format!(
                    "ask needs a memexnet checkpoint, {} holds {}",
                    checkpoint.display(),
                    model.kind()
                )));
            };
            if !engine.corpus.has_user(&user) {
                return Err(memex_core::Error::UnknownUser(user).into());
            }
            let stdin = std::io::stdin();
            crate::repl::run(&engine, &net, &user, explain, ctx.json, stdin.lock(), std::io::stdout())
        }
        Command::GradCheck {
            kind,
            corpus,
            per_param,
        } => {
            let per_param = ctx.settings.value("per_param", per_param, 20)?;
            grad_check(&mut ctx, &kind, &corpus, per_param)
        }
    }
}

fn existing(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{what} {} does not exist", path.display())))
    }
}

fn load_corpus(ctx: &mut Ctx, args: &CorpusArgs) -> Result<(Corpus, FeatureStore, PathBuf)> {
    let dir = ctx.settings.required_path("corpus", args.corpus.clone())?;
    existing(&dir, "corpus directory")?;
    let features = ctx
        .settings
        .path("features", args.features.clone())?
        .unwrap_or_else(|| dir.join(FEATURES_FILE));
    existing(&features, "feature file")?;
    let corpus = Corpus::load_dir(&dir)?;
    let store = FeatureStore::load(&features, &corpus)?;
    info!(
        "loaded {}: {} photos, {} questions, feature dim {}",
        dir.display(),
        corpus.photos().len(),
        corpus.qas().len(),
        store.dim()
    );
    Ok((corpus, store, dir))
}

fn engine_config(ctx: &mut Ctx, args: &TrainArgs) -> Result<EngineConfig> {
    let mut config = EngineConfig {
        seed: ctx.seed,
        ..EngineConfig::default()
    };
    config.top_k = ctx.settings.value("k", args.k, config.top_k)?;
    config.skipgram.dim = ctx.settings.value("word_dim", args.word_dim, config.skipgram.dim)?;
    if config.top_k == 0 || config.skipgram.dim == 0 {
        return Err(CliError::Validation("k and word_dim must be >= 1".into()));
    }
    Ok(config)
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn gen(ctx: &Ctx, config: &SyntheticConfig, out: &Path) -> Result<()> {
    ctx.log_config("gen");
    let (corpus, features, key) = generate_synthetic(config, ctx.seed)?;
    corpus.write_dir(out)?;
    features.write(&out.join(FEATURES_FILE))?;
    key.write(&out.join(ANSWER_KEY_FILE))?;
    let counts = corpus.counts();
    if ctx.json {
        print_json(&json!({ "out": out, "counts": counts, "feature_dim": features.dim() }))
    } else {
        println!(
            "wrote {}: {} users, {} albums, {} photos, {} questions",
            out.display(),
            counts.users,
            counts.albums,
            counts.photos,
            counts.qas
        );
        Ok(())
    }
}

fn ingest(ctx: &mut Ctx, args: &CorpusArgs, out: Option<&Path>) -> Result<()> {
    let (corpus, features, dir) = load_corpus(ctx, args)?;
    ctx.log_config("ingest");
    if let Some(out) = out {
        corpus.write_dir(out)?;
        features.write(&out.join(FEATURES_FILE))?;
        let key_path = dir.join(ANSWER_KEY_FILE);
        if key_path.exists() {
            AnswerKey::read(&key_path)?.write(&out.join(ANSWER_KEY_FILE))?;
        }
    }
    let counts = corpus.counts();
    if ctx.json {
        print_json(&json!({ "valid": true, "counts": counts, "feature_dim": features.dim() }))
    } else {
        println!(
            "ok: {} users, {} albums, {} photos, {} questions, feature dim {}",
            counts.users,
            counts.albums,
            counts.photos,
            counts.qas,
            features.dim()
        );
        if let Some(out) = out {
            println!("canonical copy written to {}", out.display());
        }
        Ok(())
    }
}

fn stats(ctx: &mut Ctx, args: &CorpusArgs, reference: Option<&Path>) -> Result<()> {
    let (corpus, _, _) = load_corpus(ctx, args)?;
    ctx.log_config("stats");
    let counts = corpus.counts();
    let dist = four_w_distribution(corpus.qas())?;
    let divergence = match reference {
        Some(path) => {
            existing(path, "reference distribution")?;
            let q = CategoryDistribution::read(path)?;
            Some(kl(&dist.to_vec(), &q.to_vec())?)
        }
        None => None,
    };
    if ctx.json {
        return print_json(&json!({ "counts": counts, "four_w": dist, "kl": divergence }));
    }
    println!("users      {}", counts.users);
    println!("albums     {}", counts.albums);
    println!("photos     {}", counts.photos);
    println!("questions  {}", counts.qas);
    println!("4W distribution:");
    for (name, p) in ["what", "when", "who", "where"].iter().zip(dist.to_vec()) {
        println!("  {name:<6} {p:.4}");
    }
    if let Some(d) = divergence {
        println!("KL(corpus || reference) = {d:.6}");
    }
    Ok(())
}

fn index(ctx: &mut Ctx, args: &CorpusArgs, out: &Path) -> Result<()> {
    let (corpus, _, _) = load_corpus(ctx, args)?;
    ctx.log_config("index");
    let index = InvertedIndex::build(&corpus);
    index.write(out)?;
    if ctx.json {
        print_json(&json!({ "out": out, "documents": index.num_docs(), "terms": index.terms().count() }))
    } else {
        println!(
            "indexed {} photos, {} terms -> {}",
            index.num_docs(),
            index.terms().count(),
            out.display()
        );
        Ok(())
    }
}

fn search(ctx: &mut Ctx, args: &CorpusArgs, snapshot: Option<&Path>, user: &str, query: &str, k: usize) -> Result<()> {
    let index = match snapshot {
        Some(path) => {
            existing(path, "index snapshot")?;
            ctx.log_config("search");
            InvertedIndex::read(path)?
        }
        None => {
            let (corpus, _, _) = load_corpus(ctx, args)?;
            ctx.log_config("search");
            InvertedIndex::build(&corpus)
        }
    };
    if !index.users().iter().any(|u| u == user) {
        return Err(memex_core::Error::UnknownUser(user.to_string()).into());
    }
    let terms = normalize(query).into_vec();
    let ranked = index.search_user(&terms, k, user);
    if ctx.json {
        return print_json(&json!({ "query": terms, "results": ranked }));
    }
    if ranked.is_empty() {
        println!("no photos match {terms:?}");
    }
    for (i, r) in ranked.iter().enumerate() {
        println!("{:>3}  {:<24} {:.6}", i + 1, r.photo_id, r.score);
    }
    Ok(())
}

fn fit_config(ctx: &mut Ctx, kind: ModelKind, args: &TrainArgs) -> Result<FitConfig> {
    let mut cfg = kind.fit_config(ctx.seed);
    cfg.epochs = ctx.settings.value("epochs", args.epochs, cfg.epochs)?;
    cfg.batch_size = ctx.settings.value("batch", args.batch, cfg.batch_size)?;
    if cfg.batch_size == 0 {
        return Err(CliError::Validation("--batch must be >= 1".into()));
    }
    if let Some(lr) = ctx.settings.optional::<f64>("lr", args.lr)? {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(CliError::Validation("--lr must be positive".into()));
        }
        cfg.optimizer = with_lr(cfg.optimizer, lr);
    }
    Ok(cfg)
}

fn with_lr(kind: OptimizerKind, lr: f64) -> OptimizerKind {
    match kind {
        OptimizerKind::Sgd { .. } => OptimizerKind::Sgd { lr },
        OptimizerKind::Adagrad {
            eps,
            initial_accumulator,
            ..
        } => OptimizerKind::Adagrad {
            lr,
            eps,
            initial_accumulator,
        },
    }
}

fn pretrain(ctx: &mut Ctx, args: &CorpusArgs, targs: &TrainArgs, out: &Path) -> Result<()> {
    let (corpus, features, _) = load_corpus(ctx, args)?;
    let econfig = engine_config(ctx, targs)?;
    let mut config = PretrainConfig::default();
    config.epochs = ctx.settings.value("epochs", targs.epochs, config.epochs)?;
    config.batch_size = ctx.settings.value("batch", targs.batch, config.batch_size)?;
    if let Some(lr) = ctx.settings.optional::<f64>("lr", targs.lr)? {
        config.optimizer = with_lr(config.optimizer, lr);
    }
    ctx.log_config("pretrain");
    let engine = Engine::with_wordvecs(corpus, features, empty_wordvecs(&econfig)?, econfig)?;
    let pre = engine.pretrain(&config, ctx.seed)?;
    engine.pretrain_checkpoint(&pre, &config)?.write(out)?;
    let last = pre.history.last().copied().unwrap_or(f64::NAN);
    if ctx.json {
        print_json(&json!({ "out": out, "loss": pre.history }))
    } else {
        println!(
            "pretrained question encoder on {} questions, final loss {last:.4} -> {}",
            engine.pretraining_questions().len(),
            out.display()
        );
        Ok(())
    }
}

/// Pretraining never looks at word vectors, so skip training them.
fn empty_wordvecs(config: &EngineConfig) -> Result<memex_core::encoders::WordVecs> {
    Ok(memex_core::encoders::WordVecs::new(
        Vec::new(),
        config.skipgram.dim,
        Vec::new(),
    )?)
}

fn train(
    ctx: &mut Ctx,
    kind: ModelKind,
    args: &CorpusArgs,
    targs: &TrainArgs,
    out: &Path,
    pretrained: Option<&Path>,
) -> Result<()> {
    let (corpus, features, _) = load_corpus(ctx, args)?;
    let econfig = engine_config(ctx, targs)?;
    let fcfg = fit_config(ctx, kind, targs)?;
    let init = match pretrained {
        Some(path) => {
            if kind != ModelKind::MemexNet {
                return Err(CliError::Validation("--pretrained applies to memexnet only".into()));
            }
            existing(path, "pretrained checkpoint")?;
            Some(Checkpoint::read(path)?.to_param_set())
        }
        None => None,
    };
    ctx.log_config("train");
    let engine = Engine::new(corpus, features, econfig)?;
    let split = engine.split()?;
    info!(
        "training {kind} on {} questions ({} val, {} test)",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    let trained = engine.train(kind, &split, &fcfg, init.as_ref())?;
    engine.checkpoint(&trained.model, Some(&trained.history))?.write(out)?;
    let report = engine.evaluate(&trained.model, &split.test)?;
    let h = &trained.history;
    if ctx.json {
        return print_json(&json!({
            "model": kind.name(),
            "out": out,
            "best_epoch": h.best_epoch,
            "train_loss": h.train_loss,
            "val_accuracy": h.val_accuracy,
            "test": report.to_json(),
        }));
    }
    if let Some(best) = h.best_epoch {
        println!(
            "{kind}: kept epoch {} of {} (val accuracy {:.4})",
            best + 1,
            h.train_loss.len(),
            h.val_accuracy[best]
        );
    }
    println!("checkpoint -> {}", out.display());
    println!("test split:");
    print!("{report}");
    Ok(())
}

fn load_model(ctx: &mut Ctx, checkpoint: &Path, args: &CorpusArgs) -> Result<(Engine, Model)> {
    existing(checkpoint, "checkpoint")?;
    let (corpus, features, _) = load_corpus(ctx, args)?;
    let (engine, model, _) = Engine::load_checkpoint(checkpoint, corpus, features)?;
    Ok((engine, model))
}

fn eval(ctx: &mut Ctx, checkpoint: &Path, args: &CorpusArgs, split_name: &str) -> Result<()> {
    let (engine, model) = load_model(ctx, checkpoint, args)?;
    ctx.log_config("eval");
    let split = engine.split()?;
    let ids = match split_name {
        "train" => split.train,
        "val" => split.val,
        "test" => split.test,
        "all" => engine.corpus.qa_ids(),
        other => {
            return Err(CliError::Validation(format!(
                "unknown split {other:?}; expected train, val, test or all"
            )))
        }
    };
    let report = engine.evaluate(&model, &ids)?;
    if ctx.json {
        print_json(&json!({ "model": model.kind().name(), "split": split_name, "report": report.to_json() }))
    } else {
        println!("{} on {split_name} ({} questions)", model.kind(), ids.len());
        print!("{report}");
        Ok(())
    }
}

fn grad_check(ctx: &mut Ctx, kind: &str, args: &CorpusArgs, per_param: usize) -> Result<()> {
    let kinds: Vec<ModelKind> = if kind == "all" {
        ModelKind::all()
    } else {
        vec![kind.parse()?]
    };
    let (corpus, features) = if args.corpus.is_some() || ctx.settings.path("corpus", None)?.is_some() {
        let (c, f, _) = load_corpus(ctx, args)?;
        (c, f)
    } else {
        let (c, f, _) = generate_synthetic(&SyntheticConfig::new(2, 2, 4, 2), ctx.seed)?;
        (c, f)
    };
    ctx.log_config("grad-check");
    let mut config = EngineConfig {
        seed: ctx.seed,
        ..EngineConfig::default()
    };
    config.skipgram.epochs = 5;
    let engine = Engine::new(corpus, features, config)?;
    let qa_id = engine.corpus.qas()[0].qa_id.clone();
    let mut failed = Vec::new();
    let mut rows = Vec::new();
    for k in kinds {
        let r = engine.grad_check(k, &qa_id, per_param, ctx.seed)?;
        if !r.passed {
            failed.push(k.name());
        }
        if !ctx.json {
            println!(
                "{:<18} {} max rel err {:.3e} over {} coords (worst {}[{}])",
                k.name(),
                if r.passed { "ok  " } else { "FAIL" },
                r.max_rel_err,
                r.checked,
                r.worst_param,
                r.worst_index
            );
        }
        rows.push(json!({ "kind": k.name(), "report": r }));
    }
    if ctx.json {
        print_json(&serde_json::Value::Array(rows))?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("gradient check failed for {}", failed.join(", "))))
    }
}
