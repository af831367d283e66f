use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use udfcost::advisor::{SelectivityGrid, Strategy};
use udfcost::benchgen::{gen_database, gen_workload, label_workload, read_jsonl, write_jsonl, DbContext, GenConfig, WorkloadRecord};
use udfcost::datastore::Database;
use udfcost::harness::pipeline::{train_flat_model, train_graph_model, Corpus};
use udfcost::harness::{
    evaluate, evaluate_advisor, CostModel, Decider, FixedDecider, LabelMode, Metrics, ModelDecider, OracleDecider,
};
use udfcost::model::{FlatModel, Model, ModelConfig, TrainConfig};
use udfcost::plangraph::CardMode;

/// Generate UDF benchmarks, label them, and train and evaluate runtime models.
#[derive(Debug, Parser)]
#[command(name = "udfcost", version)]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// How runtime labels are produced.
    #[arg(long, global = true, value_enum, default_value_t = Mode::Synthetic)]
    mode: Mode,
    /// Which cardinalities annotate plans and UDF graphs for the model.
    #[arg(long, global = true, value_enum, default_value_t = Cards::Actual)]
    cards: Cards,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Measured,
    Synthetic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cards {
    Actual,
    Estimated,
}

/// `DB_DIR=WORKLOAD.jsonl`
#[derive(Debug, Clone)]
struct CorpusArg {
    db: PathBuf,
    workload: PathBuf,
}

impl FromStr for CorpusArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (db, workload) = s.split_once('=').ok_or_else(|| format!("expected DB_DIR=WORKLOAD, got `{s}`"))?;
        Ok(CorpusArg { db: db.into(), workload: workload.into() })
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random database and write it as CSV files plus schema.json.
    GenDb {
        #[arg(long)]
        out: PathBuf,
        /// Generator configuration (JSON); missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate UDFs and queries over a database. The database is conformed
    /// to the UDFs and written to `--prepared` (default: in place).
    GenWorkload {
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = 100)]
        queries: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        prepared: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Execute every query and store runtime labels.
    Run {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        workload: PathBuf,
        /// Output path (default: overwrite the workload).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also label the pull-up and push-down variants of UDF filters.
        #[arg(long)]
        variants: bool,
    },
    /// Train a model on one or more labeled corpora.
    Train {
        #[arg(long = "corpus", required = true)]
        corpora: Vec<CorpusArg>,
        #[arg(long)]
        out: PathBuf,
        /// Train the flat-vector baseline instead of the graph model.
        #[arg(long)]
        flat: bool,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
    },
    /// Q-error of a model on labeled corpora, overall and per UDF placement.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "corpus", required = true)]
        corpora: Vec<CorpusArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Placement decisions of every strategy on corpora labeled with variants.
    Advise {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "corpus", required = true)]
        corpora: Vec<CorpusArg>,
        /// Comma-separated selectivities in (0, 1].
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn eval and advise outputs into CSV tables.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Exit status classes: 1 usage, 2 data, 3 internal.
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Internal(anyhow::Error),
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

fn internal(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Internal(e.into())
}

type CliResult<T> = Result<T, Failure>;

impl Mode {
    fn label(self) -> LabelMode {
        match self {
            Mode::Measured => LabelMode::Measured,
            Mode::Synthetic => LabelMode::Synthetic,
        }
    }
}

impl Cards {
    fn card_mode(self) -> CardMode {
        match self {
            Cards::Actual => CardMode::Actual,
            Cards::Estimated => CardMode::Estimated,
        }
    }
}

fn read_json(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string()).map_err(data)?;
    serde_json::from_str(&text).with_context(|| path.display().to_string()).map_err(data)
}

fn write_json(path: &Path, v: &Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(internal)?;
    fs::write(path, text + "\n").with_context(|| path.display().to_string()).map_err(data)
}

fn gen_config(path: Option<&Path>, seed: u64) -> CliResult<GenConfig> {
    let mut cfg: GenConfig = match path {
        Some(p) => serde_json::from_value(read_json(p)?).with_context(|| p.display().to_string()).map_err(data)?,
        None => GenConfig::default(),
    };
    cfg.seed = seed;
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn load_db(dir: &Path) -> CliResult<Database> {
    Database::load(dir).map_err(data)
}

fn load_corpus(arg: &CorpusArg) -> CliResult<Corpus> {
    let db = load_db(&arg.db)?;
    let records: Vec<WorkloadRecord> = read_jsonl(&arg.workload).map_err(data)?;
    let name = arg.db.file_name().map_or_else(|| arg.db.display().to_string(), |n| n.to_string_lossy().into_owned());
    Ok(Corpus { name, ctx: DbContext::new(db), records })
}

enum Loaded {
    Graph(Model),
    Flat(FlatModel),
}

impl Loaded {
    fn as_cost_model(&self) -> &dyn CostModel {
        match self {
            Loaded::Graph(m) => m,
            Loaded::Flat(m) => m,
        }
    }

    fn card_mode(&self) -> CardMode {
        match self {
            Loaded::Graph(m) => m.encoder.card_mode,
            Loaded::Flat(m) => m.encoder.card_mode,
        }
    }
}

fn load_model(path: &Path) -> CliResult<Loaded> {
    let doc = read_json(path)?;
    let body = &doc["model"];
    match doc["kind"].as_str() {
        Some("graph") => Ok(Loaded::Graph(Model::from_json(body).map_err(data)?)),
        Some("flat") => Ok(Loaded::Flat(FlatModel::from_json(body).map_err(data)?)),
        _ => Err(data(anyhow!("{}: not a model checkpoint", path.display()))),
    }
}

fn check_cards(model: &Loaded, cards: CardMode) -> CliResult<()> {
    if model.card_mode() != cards {
        return Err(usage(anyhow!(
            "model was trained with {:?} cardinalities; pass --cards {}",
            model.card_mode(),
            format!("{:?}", model.card_mode()).to_lowercase()
        )));
    }
    Ok(())
}

fn print_metrics(name: &str, m: &Metrics) {
    let o = &m.overall;
    println!("{name}: n={} median={:.3} p95={:.3} p99={:.3} max={:.3}", o.count, o.median, o.p95, o.p99, o.max);
    for (placement, s) in &m.by_placement {
        println!("  {placement}: n={} median={:.3} p95={:.3}", s.count, s.median, s.p95);
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let cards = cli.cards.card_mode();
    match cli.command {
        Command::GenDb { out, config } => {
            let cfg = gen_config(config.as_deref(), cli.seed)?;
            let db = gen_database(&cfg, cli.seed);
            db.save(&out).map_err(data)?;
            let rows: usize = db.tables.iter().map(|t| t.row_count).sum();
            println!("wrote {} tables, {rows} rows to {}", db.tables.len(), out.display());
        }
        Command::GenWorkload { db, queries, out, prepared, config } => {
            let cfg = gen_config(config.as_deref(), cli.seed)?;
            let database = load_db(&db)?;
            let db_ref = db.file_name().map_or_else(|| "db".to_string(), |n| n.to_string_lossy().into_owned());
            let w = gen_workload(&cfg, &database, queries, cli.seed, &db_ref).map_err(data)?;
            let target = prepared.unwrap_or(db);
            w.db.save(&target).map_err(data)?;
            write_jsonl(&out, &w.records).map_err(data)?;
            println!("wrote {} queries to {}, prepared data to {}", w.records.len(), out.display(), target.display());
        }
        Command::Run { db, workload, out, variants } => {
            let database = load_db(&db)?;
            let mut records: Vec<WorkloadRecord> = read_jsonl(&workload).map_err(data)?;
            label_workload(&mut records, &database, cli.mode.label(), variants).map_err(data)?;
            let out = out.unwrap_or(workload);
            write_jsonl(&out, &records).map_err(data)?;
            println!("labeled {} queries ({}) into {}", records.len(), cli.mode.label().name(), out.display());
        }
        Command::Train { corpora, out, flat, hidden, epochs, lr } => {
            let mut queries = Vec::new();
            for c in &corpora {
                queries.extend(load_corpus(c)?.eval_set(cards).map_err(data)?);
            }
            let tc = TrainConfig { lr, epochs, seed: cli.seed, ..TrainConfig::default() };
            let doc = if flat {
                let m = train_flat_model(&queries, cards, hidden, &tc).map_err(internal)?;
                json!({"kind": "flat", "model": m.to_json()})
            } else {
                let m = train_graph_model(&queries, cards, &ModelConfig { hidden }, &tc).map_err(internal)?;
                json!({"kind": "graph", "model": m.to_json()})
            };
            write_json(&out, &doc)?;
            println!("trained on {} queries, wrote {}", queries.len(), out.display());
        }
        Command::Eval { model, corpora, out } => {
            let m = load_model(&model)?;
            check_cards(&m, cards)?;
            let mut queries = Vec::new();
            for c in &corpora {
                queries.extend(load_corpus(c)?.eval_set(cards).map_err(data)?);
            }
            let metrics = evaluate(m.as_cost_model(), &queries).map_err(data)?;
            print_metrics(&model.display().to_string(), &metrics);
            if let Some(out) = out {
                write_json(&out, &json!({"kind": "eval", "source": model.display().to_string(), "metrics": metrics}))?;
            }
        }
        Command::Advise { model, corpora, grid, out } => {
            let Loaded::Graph(m) = load_model(&model)? else {
                return Err(usage(anyhow!("the advisor needs a graph model")));
            };
            let grid = match grid {
                Some(g) => {
                    let values = g.split(',').map(|s| s.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(usage)?;
                    SelectivityGrid::new(values).map_err(usage)?
                }
                None => SelectivityGrid::default(),
            };
            let mut queries = Vec::new();
            for c in &corpora {
                queries.extend(load_corpus(c)?.advisor_set().map_err(data)?);
            }
            let mut deciders: Vec<Box<dyn Decider + '_>> = vec![
                Box::new(FixedDecider(udfcost::advisor::Placement::PushDown)),
                Box::new(FixedDecider(udfcost::advisor::Placement::PullUp)),
                Box::new(OracleDecider { strategy: Strategy::Ubc, grid: grid.clone() }),
            ];
            for strategy in Strategy::ALL {
                deciders.push(Box::new(ModelDecider { model: &m, strategy, grid: grid.clone() }));
            }
            let mut results = Vec::new();
            for d in &deciders {
                let a = evaluate_advisor(&queries, d.as_ref()).map_err(data)?;
                println!(
                    "{}: speedup={:.3} (optimal {:.3}) pull_ups={} fp_rate={:.3} fp_impact={:.3}",
                    a.decider, a.total_speedup, a.optimal_total_speedup, a.pull_up_decisions, a.false_positive_rate, a.fp_impact
                );
                results.push(a);
            }
            if let Some(out) = out {
                write_json(&out, &json!({"kind": "advise", "source": model.display().to_string(), "results": results}))?;
            }
        }
        Command::Report { inputs, out_dir } => report(&inputs, &out_dir)?,
    }
    Ok(())
}

fn report(inputs: &[PathBuf], out_dir: &Path) -> CliResult<()> {
    let mut qerror = String::from("source,placement,count,median,p95,p99,max\n");
    let mut advisor = String::from(
        "source,decider,queries,pull_up_decisions,total_speedup,median_speedup,optimal_total_speedup,optimal_decisions,false_positive_rate,fp_impact,overhead_fraction\n",
    );
    let (mut n_eval, mut n_advise) = (0, 0);
    for path in inputs {
        let doc = read_json(path)?;
        let source = doc["source"].as_str().unwrap_or_default().to_string();
        match doc["kind"].as_str() {
            Some("eval") => {
                let m: Metrics = serde_json::from_value(doc["metrics"].clone()).map_err(data)?;
                let rows = std::iter::once(("overall", &m.overall)).chain(m.by_placement.iter().map(|(k, v)| (k.as_str(), v)));
                for (placement, s) in rows {
                    qerror.push_str(&format!("{source},{placement},{},{},{},{},{}\n", s.count, s.median, s.p95, s.p99, s.max));
                }
                n_eval += 1;
            }
            Some("advise") => {
                let results: Vec<udfcost::harness::AdvisorMetrics> =
                    serde_json::from_value(doc["results"].clone()).map_err(data)?;
                for a in results {
                    advisor.push_str(&format!(
                        "{source},{},{},{},{},{},{},{},{},{},{}\n",
                        a.decider,
                        a.queries,
                        a.pull_up_decisions,
                        a.total_speedup,
                        a.median_speedup,
                        a.optimal_total_speedup,
                        a.optimal_decisions,
                        a.false_positive_rate,
                        a.fp_impact,
                        a.overhead_fraction
                    ));
                }
                n_advise += 1;
            }
            _ => return Err(data(anyhow!("{}: not an eval or advise output", path.display()))),
        }
    }
    fs::create_dir_all(out_dir).with_context(|| out_dir.display().to_string()).map_err(data)?;
    if n_eval > 0 {
        fs::write(out_dir.join("qerror.csv"), qerror).map_err(data)?;
    }
    if n_advise > 0 {
        fs::write(out_dir.join("advisor.csv"), advisor).map_err(data)?;
    }
    println!("wrote {n_eval} q-error and {n_advise} advisor tables to {}", out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(3)
        }
    }
}
