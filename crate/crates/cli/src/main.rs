use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ivm_core::delta::{ensure_relations, DeltaEngine, Mode};
use ivm_core::harness::gen::{adversarial_triangle, retail_stream, triangle_database, KeyDist, Oumv, StreamSpec};
use ivm_core::harness::{run_race, write_report, Command, RaceOptions, Stream};
use ivm_core::query::{classify, parse_query, Query};
use ivm_core::triangle::IvmEps;
use ivm_core::viewtree::ViewTree;
use ivm_core::{probe, Database, EngineKind, LiftingSpec};

#[derive(Parser)]
#[command(name = "ivm", version, about = "Incremental view maintenance engines and workloads")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the static classification of a query.
    Classify { query: PathBuf },
    /// Print the maintenance structure an engine builds for a query.
    Explain {
        query: PathBuf,
        #[arg(long, default_value = "viewtree")]
        engine: EngineKind,
        /// Auxiliary view definitions, one query per file.
        #[arg(long)]
        aux: Vec<PathBuf>,
    },
    /// Run engines on an update stream and compare them with recompute.
    Run {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        stream: PathBuf,
        /// Repeatable: delta-eager, delta-lazy, viewtree, ivm-eps[:eps].
        #[arg(long = "engine", required = true)]
        engines: Vec<EngineKind>,
        /// Threshold exponent for a plain `ivm-eps` engine.
        #[arg(long)]
        eps: Option<f64>,
        /// Initial database.
        #[arg(long)]
        db: Option<PathBuf>,
        /// Enumerate the output after every this many updates.
        #[arg(long)]
        enumerate_interval: Option<usize>,
        /// CSV report path.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Auxiliary view definitions for the delta engines.
        #[arg(long)]
        aux: Vec<PathBuf>,
        /// Run engines in separate threads.
        #[arg(long)]
        parallel: bool,
        /// Skip the recompute comparison.
        #[arg(long)]
        no_oracle: bool,
    },
    /// Generate an update stream.
    Gen {
        #[arg(value_enum)]
        kind: GenKind,
        /// Relations as `R:2,S:1`; defaults to the relations of `--query`.
        #[arg(long)]
        relations: Option<String>,
        #[arg(long)]
        query: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        domain: usize,
        #[arg(long, default_value_t = 10_000)]
        length: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Zipf exponent.
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[arg(long)]
        insert_only: bool,
        #[arg(long)]
        enumerate_interval: Option<usize>,
        /// Size parameter of `oumv` and `adversarial`.
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Stream output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Database output path for `adversarial`.
        #[arg(long)]
        db_out: Option<PathBuf>,
    },
    /// Maintain the triangle count with heavy/light partitioning.
    Triangle {
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        db: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Uniform,
    Zipf,
    Oumv,
    /// Skewed triangle database plus toggling stream.
    Adversarial,
    /// Five-relation retail-like workload.
    Retail,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_query(path: &Path) -> Result<Query> {
    parse_query(&read(path)?).with_context(|| format!("in {}", path.display()))
}

fn load_db(path: Option<&Path>, q: Option<&Query>) -> Result<Database> {
    let mut db = match path {
        Some(p) => Database::parse(&read(p)?).with_context(|| format!("in {}", p.display()))?,
        None => Database::new(),
    };
    if let Some(q) = q {
        ensure_relations(q, &mut db)?;
    }
    Ok(db)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Classify { query } => {
            let q = load_query(&query)?;
            println!("{q}");
            print!("{}", classify(&q));
        }
        Cmd::Explain { query, engine, aux } => {
            let q = load_query(&query)?;
            let db = load_db(None, Some(&q))?;
            match engine {
                EngineKind::ViewTree => print!("{}", ViewTree::build(&q, &db, LiftingSpec::new())?.explain()),
                EngineKind::DeltaEager | EngineKind::DeltaLazy => {
                    let mode = if engine == EngineKind::DeltaEager { Mode::Eager } else { Mode::Lazy };
                    let mut e = DeltaEngine::new(&q, &db, mode, LiftingSpec::new())?;
                    for a in &aux {
                        e.register_auxiliary_view(&load_query(a)?)?;
                    }
                    print!("{}", e.describe());
                }
                EngineKind::IvmEps(eps) => {
                    let st = IvmEps::for_query(&q, &db, eps)?;
                    let s = st.shape();
                    println!("heavy/light triangle count, eps {eps}");
                    for i in 0..3 {
                        let prev = (i + 2) % 3;
                        println!(
                            "{} partitioned on {}{}; V_{i}({},{}) = sum_{} {}_H * {}_L",
                            s.relations[i],
                            s.vars[i],
                            if s.flipped[i] { " (stored flipped)" } else { "" },
                            s.vars[i],
                            s.vars[prev],
                            s.vars[(i + 1) % 3],
                            s.relations[i],
                            s.relations[(i + 1) % 3],
                        );
                    }
                }
            }
        }
        Cmd::Run { query, stream, engines, eps, db, enumerate_interval, report, aux, parallel, no_oracle } => {
            let q = load_query(&query)?;
            let db = load_db(db.as_deref(), Some(&q))?;
            let stream = Stream::parse(&read(&stream)?).with_context(|| format!("in {}", stream.display()))?;
            let engines: Vec<EngineKind> = engines
                .into_iter()
                .map(|e| match (e, eps) {
                    (EngineKind::IvmEps(_), Some(x)) => EngineKind::IvmEps(x),
                    (e, _) => e,
                })
                .collect();
            let aux = aux.iter().map(|a| load_query(a)).collect::<Result<Vec<_>>>()?;
            let opts = RaceOptions { enumerate_interval, oracle: !no_oracle, parallel, lifts: LiftingSpec::new(), aux };
            let reports = run_race(&q, &db, &stream, &engines, &opts)?;
            println!("engine,updates,max_update_probes,total_probes,max_delay,wall_ms,checksum,oracle");
            for r in &reports {
                println!(
                    "{},{},{},{},{},{},{},{}",
                    r.engine,
                    r.rows.iter().filter(|x| x.op == "update").count(),
                    r.max_update_probes(),
                    r.total_probes(),
                    r.max_delay(),
                    r.wall.as_millis(),
                    &r.checksum[..16],
                    match &r.oracle_checksum {
                        Some(_) => "match",
                        None => "skipped",
                    }
                );
            }
            if let Some(path) = report {
                write_report(&reports, output(Some(&path))?)?;
            }
        }
        Cmd::Gen { kind, relations, query, domain, length, seed, s, insert_only, enumerate_interval, n, out, db_out } => {
            let mut w = output(out.as_deref())?;
            match kind {
                GenKind::Uniform | GenKind::Zipf => {
                    let rels: Vec<(String, usize)> = match (&relations, &query) {
                        (Some(spec), _) => parse_relations(spec)?,
                        (None, Some(q)) => StreamSpec::relations_of(&load_query(q)?),
                        (None, None) => bail!("gen needs --relations or --query"),
                    };
                    let refs: Vec<(&str, usize)> = rels.iter().map(|(r, a)| (r.as_str(), *a)).collect();
                    let dist = if matches!(kind, GenKind::Zipf) { KeyDist::Zipf(s) } else { KeyDist::Uniform };
                    let spec = StreamSpec::new(&refs, dist, domain, length, seed)
                        .insert_only(insert_only)
                        .enumerate_every(enumerate_interval);
                    write!(w, "{}", spec.generate())?;
                }
                GenKind::Oumv => {
                    let inst = Oumv::random(n, seed);
                    write!(w, "{}", inst.stream())?;
                    let truths: Vec<&str> = inst.truths().iter().map(|&t| if t { "1" } else { "0" }).collect();
                    writeln!(w, "# expected detect per round: {}", truths.join(" "))?;
                }
                GenKind::Adversarial => {
                    let (db, stream) = adversarial_triangle(n, length, seed);
                    write!(w, "{stream}")?;
                    match db_out {
                        Some(p) => fs::write(&p, db.to_text()).with_context(|| format!("writing {}", p.display()))?,
                        None => bail!("adversarial needs --db-out for its initial database"),
                    }
                }
                GenKind::Retail => write!(w, "{}", retail_stream(length, seed, enumerate_interval))?,
            }
            w.flush()?;
        }
        Cmd::Triangle { eps, stream, db, report } => {
            let mut base = triangle_database();
            if let Some(p) = &db {
                let loaded = Database::parse(&read(p)?).with_context(|| format!("in {}", p.display()))?;
                for (name, rel) in loaded.iter() {
                    base.insert_relation(name, rel.clone());
                }
            }
            let stream = Stream::parse(&read(&stream)?).with_context(|| format!("in {}", stream.display()))?;
            let mut st = IvmEps::init(&base, eps)?;
            let mut rows = csv::Writer::from_writer(output(report.as_deref())?);
            rows.write_record(["update_index", "op", "probes", "count", "partition_sizes"])?;
            for (i, c) in stream.commands.iter().enumerate() {
                let (op, probes) = match c {
                    Command::Update(u) => {
                        let (res, probes) = probe::measure(|| st.update(u));
                        res?;
                        (if u.delta > 0 { "insert" } else { "delete" }, probes)
                    }
                    Command::Count | Command::Enumerate => ("count", probe::measure(|| st.count()).1),
                    Command::Detect => ("detect", probe::measure(|| st.detect()).1),
                };
                let sizes: Vec<String> = st.partition_sizes().iter().map(|(l, h)| format!("{l}/{h}")).collect();
                rows.write_record([i.to_string(), op.into(), probes.to_string(), st.count().to_string(), sizes.join(";")])?;
            }
            rows.flush()?;
            if report.is_some() {
                println!("count {} detect {} theta {}", st.count(), st.detect(), st.threshold());
            }
        }
    }
    Ok(())
}

fn parse_relations(spec: &str) -> Result<Vec<(String, usize)>> {
    spec.split(',')
        .map(|part| {
            let (name, arity) = part.trim().split_once(':').with_context(|| format!("expected NAME:ARITY, got `{part}`"))?;
            Ok((name.to_string(), arity.parse().with_context(|| format!("bad arity in `{part}`"))?))
        })
        .collect()
}
