use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use trg_core::align::{self, AlignConfig, AlignedInstance, Metric};
use trg_core::corpus::{load_corpus, save_corpus, Corpus, CorpusError, Feature, FeatureCollection};
use trg_core::eval::evaluate;
use trg_core::generate::{generate_k, GenError, GenQuery, GenResult};
use trg_core::lattice::Neighbourhood;
use trg_core::model::{self, ModelDir, ModelError};
use trg_core::render::{render_svg, render_text, TriangleView};
use trg_core::stats::CooccurrenceTable;
use trg_core::synth::{parse_templates, synthesize, SynthError};

const EXIT_VALIDATION: u8 = 2;
const EXIT_THRESHOLD: u8 = 3;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;
const EXIT_NO_INPUT: u8 = 66;

/// Transparent statistical data-to-text generation.
#[derive(Parser)]
#[command(name = "trg", version, about)]
struct Cli {
    /// Worker threads for alignment and evaluation (default: all processors).
    #[arg(long, global = true, env = "TRG_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align fragments to features and write the segmented corpus.
    Align {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Align, extract schemata and fragments, and train the selectors.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Check a hand-edited model and retrain its selectors.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Generate text for a feature collection.
    Generate {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated attr=value pairs.
        #[arg(long, value_parser = parse_features)]
        features: FeatureCollection,
        /// Number of distinct texts.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        #[arg(long, default_value_t = 0.0, value_parser = parse_unit)]
        min_weight: f64,
        /// Schemata and fragments per placeholder kept in the search.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        beam: Option<u64>,
        /// Only schemata whose attributes all occur in the query.
        #[arg(long)]
        strict: bool,
        /// Best schema, then best fragments, without search.
        #[arg(long)]
        greedy: bool,
        /// Print the result and every computed selection weight as JSON.
        #[arg(long)]
        trace: bool,
        /// Insert query values for single-attribute fragments that express another value.
        #[arg(long)]
        copy_values: bool,
    },
    /// Print the scored fragment triangle of one instance for one feature.
    InspectTriangle {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        instance: String,
        #[arg(long, value_parser = parse_feature)]
        feature: Feature,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long, value_enum, default_value_t = MetricArg::Weight)]
        metric: MetricArg,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Sample a corpus and its gold alignment from templates.
    Synth {
        #[arg(long)]
        templates: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corpus output.
        #[arg(long)]
        out: PathBuf,
        /// Gold alignment output (default: next to the corpus, `.gold.jsonl`).
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    /// Score a model on a test corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        gold_align: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Minimum weight of an aligned fragment.
    #[arg(long, default_value_t = align::DEFAULT_SIGMA, value_parser = parse_unit)]
    sigma: f64,
    /// Longest fragment counted by the statistics.
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long, value_enum, default_value_t = NeighbourhoodArg::Comparable)]
    neighbourhood: NeighbourhoodArg,
}

impl ConfigArgs {
    fn config(&self) -> AlignConfig {
        let neighbourhood = match self.neighbourhood {
            NeighbourhoodArg::Comparable => Neighbourhood::Comparable,
            NeighbourhoodArg::Immediate => Neighbourhood::Immediate,
        };
        AlignConfig { sigma: self.sigma, max_len: self.max_len, neighbourhood }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NeighbourhoodArg {
    Comparable,
    Immediate,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Svg,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Express,
    Core,
    Weight,
}

fn parse_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn parse_features(s: &str) -> Result<FeatureCollection, String> {
    let cc = FeatureCollection::parse_list(s).map_err(|e| e.to_string())?;
    if cc.is_empty() {
        return Err("no features given".into());
    }
    Ok(cc)
}

fn parse_feature(s: &str) -> Result<Feature, String> {
    Feature::parse(s).map_err(|e| e.to_string())
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

type Outcome = Result<(), Failure>;

fn corpus_failure(path: &Path, e: CorpusError) -> Failure {
    let code = match &e {
        CorpusError::Io(_) | CorpusError::Empty => EXIT_NO_INPUT,
        _ => EXIT_DATA,
    };
    fail(code, format!("{}: {e}", path.display()))
}

fn model_failure(e: ModelError) -> Failure {
    let code = match &e {
        ModelError::Io { .. } => EXIT_NO_INPUT,
        ModelError::Json { .. } => EXIT_DATA,
        _ => EXIT_VALIDATION,
    };
    fail(code, e.to_string())
}

fn write_output(path: &Path, contents: &str) -> Outcome {
    fs::write(path, contents).map_err(|e| fail(1, format!("{}: {e}", path.display())))
}

fn read_input(path: &Path) -> Result<String, Failure> {
    let text = fs::read_to_string(path).map_err(|e| fail(EXIT_NO_INPUT, format!("{}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Err(fail(EXIT_NO_INPUT, format!("{}: empty file", path.display())));
    }
    Ok(text)
}

fn load(path: &Path) -> Result<Corpus, Failure> {
    load_corpus(path).map_err(|e| corpus_failure(path, e))
}

fn load_aligned(path: &Path) -> Result<Vec<AlignedInstance>, Failure> {
    let text = read_input(path)?;
    align::from_jsonl(&text).map_err(|e| fail(EXIT_DATA, format!("{}: {e}", path.display())))
}

fn result_json(result: &GenResult) -> serde_json::Value {
    serde_json::json!({
        "text": result.text,
        "weight": result.candidate.weight,
        "schema": result.candidate.schema,
        "schema_index": result.candidate.schema_index,
        "choices": result.candidate.choices,
        "trace": result.trace,
    })
}

fn run(command: Command) -> Outcome {
    match command {
        Command::Align { corpus, out, config } => {
            let data = load(&corpus)?;
            let aligned = align::align_corpus(&data, &config.config());
            for (instance, a) in data.instances().iter().zip(&aligned) {
                let covered: usize = a.segments.iter().map(|s| s.span.len()).sum();
                if covered != instance.tokens.len() {
                    return Err(fail(EXIT_VALIDATION, format!("{}: segmentation does not cover the text", a.id)));
                }
            }
            write_output(&out, &align::to_jsonl(&aligned))?;
            let linked = aligned.iter().flat_map(|a| &a.segments).filter(|s| !s.features.is_empty()).count();
            log::info!("{} instances, {linked} feature-bearing segments", aligned.len());
        }
        Command::Train { corpus, model, config } => {
            let data = load(&corpus)?;
            let trained = model::train_corpus(&data, &config.config()).map_err(model_failure)?;
            trained.write(&model).map_err(model_failure)?;
            log::info!(
                "{} schemata, {} fragment datasets, {} features",
                trained.model.schemata.len(),
                trained.model.fragments.len(),
                trained.model.selectors.schema.index().len()
            );
        }
        Command::Validate { model } => {
            let report = model::validate(&model).map_err(model_failure)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            if report.edited {
                eprintln!("hand edits detected; selectors retrained");
            }
        }
        Command::Generate { model, features, k, min_weight, beam, strict, greedy, trace, copy_values } => {
            let dir = ModelDir::load(&model).map_err(model_failure)?;
            let query = GenQuery { cc: features, min_weight, beam: beam.map(|b| b as usize), strict, greedy, copy_values };
            match generate_k(&dir.model, &query, k as usize) {
                Ok(results) => {
                    for result in &results {
                        if trace {
                            println!("{}", result_json(result));
                        } else {
                            println!("{}", result.text);
                        }
                    }
                }
                Err(GenError::BelowThreshold { best, threshold }) => {
                    eprintln!("{}", result_json(&best));
                    return Err(fail(
                        EXIT_THRESHOLD,
                        format!("best weight {} is below the threshold {threshold}", best.candidate.weight),
                    ));
                }
                Err(e @ GenError::EmptyQuery) => return Err(fail(EXIT_USAGE, e.to_string())),
                Err(e) => return Err(fail(EXIT_VALIDATION, e.to_string())),
            }
        }
        Command::InspectTriangle { corpus, instance, feature, format, metric, config } => {
            let data = load(&corpus)?;
            let Some(target) = data.get(&instance) else {
                return Err(fail(EXIT_DATA, format!("no instance {instance:?} in {}", corpus.display())));
            };
            if !data.feature_universe().contains(&feature) {
                log::warn!("{feature} does not occur in the corpus; every score is 0");
            }
            let config = config.config();
            let table = CooccurrenceTable::build(&data, config.max_len);
            let metric = match metric {
                MetricArg::Express => Metric::Express,
                MetricArg::Core => Metric::Core,
                MetricArg::Weight => Metric::Weight,
            };
            let view = TriangleView::new(target, &feature, &table, &config, metric);
            match format {
                Format::Text => print!("{}", render_text(&view)),
                Format::Svg => print!("{}", render_svg(&view)),
            }
        }
        Command::Synth { templates, n, seed, out, gold } => {
            let text = read_input(&templates)?;
            let parsed = parse_templates(&text).map_err(|e| fail(EXIT_DATA, format!("{}: {e}", templates.display())))?;
            let (corpus, aligned) = synthesize(&parsed, n, seed).map_err(|e| match e {
                SynthError::ZeroCount => fail(EXIT_USAGE, e.to_string()),
                e => fail(EXIT_DATA, e.to_string()),
            })?;
            save_corpus(&corpus, &out).map_err(|e| fail(1, format!("{}: {e}", out.display())))?;
            let gold = gold.unwrap_or_else(|| out.with_extension("gold.jsonl"));
            write_output(&gold, &align::to_jsonl(&aligned))?;
        }
        Command::Eval { model, test, gold_align } => {
            let dir = ModelDir::load(&model).map_err(model_failure)?;
            let data = load(&test)?;
            let gold = gold_align.as_deref().map(load_aligned).transpose()?;
            let report = evaluate(&dir, &data, gold.as_deref()).map_err(|e| fail(EXIT_DATA, e.to_string()))?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
