//! Command-line surface: train, eval, tag, ablate, gen-corpus, check-grad,
//! validate-corpus.
//!
//! Exit codes: 0 success, 2 validation failure (parse errors, invariant
//! violations, scheme mismatches), 3 numerical abort (non-finite loss).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use clinitag::checkpoint::{load_checkpoint, save_checkpoint};
use clinitag::corpus::{
    generate_synthetic, load_canonical, write_canonical, GeneratorConfig, NER_COLUMN,
};
use clinitag::encoder::CharCnnConfig;
use clinitag::model::{Architecture, HeadWeight, Model, ModelConfig, WordVectors, NER_HEAD};
use clinitag::numerics::{check_gradients, ParameterStore};
use clinitag::train::{
    ablate, evaluate_prepared, prepare, render_ablation, train, AblationSpec, EvalOptions,
    TrainConfig, TrainError,
};

#[derive(Parser)]
#[command(
    name = "clinitag",
    about = "Joint clinical entity and attribute sequence tagging",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML config; writes a run directory with a config
    /// snapshot, training log, checkpoint, and dev reports.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "run")]
        out_dir: PathBuf,
        /// Override the config's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's learning rate.
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Override the config's gradient-accumulation window.
        #[arg(long)]
        accumulation: Option<usize>,
        /// Override the config's early-stop patience.
        #[arg(long)]
        patience: Option<usize>,
        /// Override the config's regime ("all" or "neg-only").
        #[arg(long)]
        regime: Option<String>,
    },
    /// Evaluate a checkpoint on a canonical corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Write the flat report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write machine-readable records (head, metric, class, value).
        #[arg(long)]
        records: Option<PathBuf>,
        /// Score the gold annotations against themselves (sanity oracle).
        #[arg(long)]
        inject_gold: bool,
    },
    /// Tag a canonical corpus with a trained model, emitting predictions as
    /// canonical SPAN/ATTR records.
    Tag {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep loss-weight tuples: one full train+eval per tuple.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Semicolon-separated weight tuples, e.g. "1,0;0.5,0.5;0,1".
        #[arg(long)]
        sweep: String,
        #[arg(long, default_value = "ablation")]
        out_dir: PathBuf,
    },
    /// Generate a synthetic corpus from a key=value generator config.
    GenCorpus {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient check suite on random mini-models
    /// of every architecture.
    CheckGrad {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Validate a canonical corpus file.
    ValidateCorpus {
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            // numerical aborts exit 3, everything else is a validation failure
            let numerical = err
                .downcast_ref::<TrainError>()
                .map(|e| matches!(e, TrainError::NonFiniteLoss { .. }))
                .unwrap_or(false);
            if numerical {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train {
            config,
            out_dir,
            epochs,
            seed,
            learning_rate,
            accumulation,
            patience,
            regime,
        } => cmd_train(
            &config,
            &out_dir,
            TrainOverrides {
                epochs,
                seed,
                learning_rate,
                accumulation,
                patience,
                regime,
            },
        ),
        Command::Eval {
            checkpoint,
            corpus,
            out,
            records,
            inject_gold,
        } => cmd_eval(
            &checkpoint,
            &corpus,
            out.as_deref(),
            records.as_deref(),
            inject_gold,
        ),
        Command::Tag {
            checkpoint,
            input,
            out,
        } => cmd_tag(&checkpoint, &input, &out),
        Command::Ablate {
            config,
            sweep,
            out_dir,
        } => cmd_ablate(&config, &sweep, &out_dir),
        Command::GenCorpus { config, seed, out } => cmd_gen_corpus(config.as_deref(), seed, &out),
        Command::CheckGrad {
            seed,
            step,
            tolerance,
        } => cmd_check_grad(seed, step, tolerance),
        Command::ValidateCorpus { input } => {
            let corpus = load_canonical(&input)?;
            println!(
                "ok: {} documents, {} sentences, columns: {}",
                corpus.num_documents(),
                corpus.num_sentences(),
                corpus
                    .schemes
                    .keys()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[derive(Default)]
struct TrainOverrides {
    epochs: Option<usize>,
    seed: Option<u64>,
    learning_rate: Option<f64>,
    accumulation: Option<usize>,
    patience: Option<usize>,
    regime: Option<String>,
}

fn cmd_train(config_path: &Path, out_dir: &Path, overrides: TrainOverrides) -> Result<ExitCode> {
    let mut config = TrainConfig::load(config_path)?;
    if let Some(epochs) = overrides.epochs {
        config.epochs = epochs;
    }
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(lr) = overrides.learning_rate {
        config.learning_rate = lr;
    }
    if let Some(accumulation) = overrides.accumulation {
        config.accumulation = accumulation;
    }
    if let Some(patience) = overrides.patience {
        config.patience = Some(patience);
    }
    if let Some(regime) = &overrides.regime {
        config.regime = match regime.as_str() {
            "all" => clinitag::train::Regime::AllPolarity,
            "neg-only" => clinitag::train::Regime::NegOnly,
            other => anyhow::bail!("unknown regime `{other}` (expected `all` or `neg-only`)"),
        };
    }
    config.validate()?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    // config snapshot for provenance (with overrides applied)
    std::fs::write(
        out_dir.join("config.toml"),
        toml::to_string_pretty(&config).context("serializing config snapshot")?,
    )?;

    let outcome = train(&config)?;
    std::fs::write(out_dir.join("train.log"), &outcome.log)?;
    save_checkpoint(
        out_dir.join("checkpoint.bin"),
        &outcome.model.config,
        &outcome.schemes,
        &outcome.store,
    )?;

    let dev_corpus = match &config.dev {
        Some(path) => load_canonical(path)?,
        None => load_canonical(&config.train)?,
    };
    let prepared_dev = prepare(&dev_corpus, &outcome.model)?;
    let report = evaluate_prepared(
        &outcome.model,
        &outcome.store,
        &prepared_dev,
        EvalOptions::default(),
    )?;
    std::fs::write(out_dir.join("report.txt"), report.render_table())?;
    std::fs::write(out_dir.join("report.tsv"), report.render_records())?;

    println!(
        "trained {} epochs (best epoch {}), checkpoint and reports in {}",
        outcome.history.len(),
        outcome.best_epoch,
        out_dir.display()
    );
    print!("{}", report.render_table());
    Ok(ExitCode::SUCCESS)
}

fn load_model(checkpoint_path: &Path) -> Result<(Model, ParameterStore)> {
    let checkpoint = load_checkpoint(checkpoint_path)?;
    let (model, store, _) = checkpoint.into_model()?;
    Ok((model, store))
}

fn cmd_eval(
    checkpoint_path: &Path,
    corpus_path: &Path,
    out: Option<&Path>,
    records: Option<&Path>,
    inject_gold: bool,
) -> Result<ExitCode> {
    let (model, store) = load_model(checkpoint_path)?;
    let corpus = load_canonical(corpus_path)?;
    let prepared = prepare(&corpus, &model)?;
    let report = evaluate_prepared(
        &model,
        &store,
        &prepared,
        EvalOptions {
            inject_gold,
            skip_absent_classes: false,
        },
    )?;
    match out {
        Some(path) => std::fs::write(path, report.render_table())?,
        None => print!("{}", report.render_table()),
    }
    if let Some(path) = records {
        std::fs::write(path, report.render_records())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_tag(checkpoint_path: &Path, input: &Path, out: &Path) -> Result<ExitCode> {
    let (model, store) = load_model(checkpoint_path)?;
    let corpus = load_canonical(input)?;

    let mut rendered = String::new();
    for doc in &corpus.documents {
        rendered.push_str(&format!("DOC {}\n", doc.id));
        for (sentence_index, sentence) in doc.sentences.iter().enumerate() {
            rendered.push_str("SENT\n");
            for tok in &sentence.tokens {
                rendered.push_str(&format!(
                    "TOK {} {} {}\n",
                    tok.char_start, tok.char_end, tok.text
                ));
            }
            if sentence.is_empty() {
                continue;
            }
            let predictions = model.predict(&store, &doc.id, sentence_index, &sentence.tokens)?;
            let entity_spans = &predictions[NER_HEAD].spans;
            for span in entity_spans {
                rendered.push_str(&format!(
                    "SPAN {} {} {} {}\n",
                    NER_COLUMN, span.start, span.end, span.label
                ));
            }
            // attributes attach to predicted entity spans on exact coverage
            for (head, prediction) in &predictions {
                if head == NER_HEAD {
                    continue;
                }
                for span in &prediction.spans {
                    let covered = entity_spans
                        .iter()
                        .any(|e| e.start == span.start && e.end == span.end);
                    if covered {
                        rendered.push_str(&format!(
                            "ATTR {} {} {} {}={}\n",
                            NER_COLUMN, span.start, span.end, head, span.label
                        ));
                    }
                }
            }
        }
    }
    std::fs::write(out, rendered)?;
    println!("tagged corpus written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(config_path: &Path, sweep: &str, out_dir: &Path) -> Result<ExitCode> {
    let config = TrainConfig::load(config_path)?;
    let spec = AblationSpec::parse(sweep)?;
    let train_corpus = load_canonical(&config.train)?;
    let dev_corpus = match &config.dev {
        Some(path) => load_canonical(path)?,
        None => train_corpus.clone(),
    };
    let rows = ablate(&spec, &config, &train_corpus, &dev_corpus)?;
    std::fs::create_dir_all(out_dir)?;
    let table = render_ablation(&rows);
    std::fs::write(out_dir.join("ablation.tsv"), &table)?;
    for row in &rows {
        let name: Vec<String> = row.weights.iter().map(|w| w.to_string()).collect();
        std::fs::write(
            out_dir.join(format!("report_{}.tsv", name.join("_"))),
            row.report.render_records(),
        )?;
    }
    print!("{table}");
    println!("ablation reports in {}", out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gen_corpus(config: Option<&Path>, seed: u64, out: &Path) -> Result<ExitCode> {
    let generator = match config {
        Some(path) => GeneratorConfig::load(path)?,
        None => GeneratorConfig::default(),
    };
    let corpus = generate_synthetic(&generator, seed)?;
    write_canonical(&corpus, out)?;
    println!(
        "wrote {} sentences ({} documents) to {}",
        corpus.num_sentences(),
        corpus.num_documents(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_check_grad(seed: u64, step: f64, tolerance: f64) -> Result<ExitCode> {
    let mut all_passed = true;
    for arch in [
        Architecture::NCrf,
        Architecture::CrfSmaxTf,
        Architecture::NCrfTf,
        Architecture::CondSoftmax,
    ] {
        let (model, mut store, gold, tokens) = random_mini_model(arch, seed)?;
        let report = check_gradients(
            |s: &mut ParameterStore| {
                model
                    .accumulate_gradients(s, "mini", 0, &tokens, &gold)
                    .expect("forward/backward")
                    .total_loss
            },
            &mut store,
            step,
            tolerance,
        )?;
        println!(
            "{:<14} {} (worst rel err {:.3e} over {} parameters)",
            format!("{arch:?}"),
            if report.passed { "PASS" } else { "FAIL" },
            report.max_rel_error(),
            report.entries.len()
        );
        if !report.passed {
            print!("{}", report.render());
            all_passed = false;
        }
    }
    if all_passed {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

type MiniModel = (
    Model,
    ParameterStore,
    BTreeMap<String, Vec<usize>>,
    Vec<clinitag::corpus::Token>,
);

/// A small random instance: 3 tokens, two heads, tiny dimensions.
fn random_mini_model(arch: Architecture, seed: u64) -> Result<MiniModel> {
    use clinitag::tags::TagScheme;
    let config = ModelConfig {
        architecture: arch,
        heads: vec![
            HeadWeight {
                name: NER_HEAD.to_string(),
                weight: 0.7,
            },
            HeadWeight {
                name: "polarity".to_string(),
                weight: 0.3,
            },
        ],
        hidden_size: 4,
        decoder_hidden: Some(4),
        tag_embedding_dim: 3,
        word_vectors: WordVectors::Hashed { dim: 5 },
        char: CharCnnConfig {
            char_emb_dim: 3,
            window: 3,
            out_dim: 4,
        },
        crf_mask: true,
        seed,
    };
    let mut schemes = BTreeMap::new();
    schemes.insert(NER_HEAD.to_string(), TagScheme::bilou(&["problem"]));
    let polarity = match arch.scheme_kind("polarity") {
        clinitag::tags::SchemeKind::Bilou => TagScheme::bilou(&["NEG"]),
        clinitag::tags::SchemeKind::Unprefixed => TagScheme::unprefixed(&["NEG"]),
    };
    schemes.insert("polarity".to_string(), polarity.clone());
    let model = Model::build(config, &schemes)?;
    let store = model.init_params()?;

    let tokens = vec![
        clinitag::corpus::Token::new("no", 0, 2),
        clinitag::corpus::Token::new("chest", 3, 8),
        clinitag::corpus::Token::new("pain", 9, 13),
    ];
    let ner_scheme = model.scheme(NER_HEAD).clone();
    let mut gold = BTreeMap::new();
    gold.insert(
        NER_HEAD.to_string(),
        vec![
            0,
            ner_scheme.tag_index("B-problem")?,
            ner_scheme.tag_index("L-problem")?,
        ],
    );
    let pol_scheme = model.scheme("polarity").clone();
    let polarity_col = match pol_scheme.kind() {
        clinitag::tags::SchemeKind::Bilou => vec![
            0,
            pol_scheme.tag_index("B-NEG")?,
            pol_scheme.tag_index("L-NEG")?,
        ],
        clinitag::tags::SchemeKind::Unprefixed => {
            vec![0, pol_scheme.tag_index("NEG")?, pol_scheme.tag_index("NEG")?]
        }
    };
    gold.insert("polarity".to_string(), polarity_col);
    Ok((model, store, gold, tokens))
}
