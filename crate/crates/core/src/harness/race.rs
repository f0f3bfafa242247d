//! Running engines side by side on one stream.

use std::io::Write;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::database::Database;
use crate::delta::{recompute, DeltaEngine, Mode};
use crate::engine::{Engine, EngineError, EngineKind};
use crate::probe;
use crate::query::Query;
use crate::relation::Relation;
use crate::ring::{LiftingSpec, Payload};
use crate::value::Tuple;

use super::stream::{Command, Stream};

#[derive(Debug, Error)]
pub enum RaceError {
    #[error("{engine}: {source}")]
    Engine { engine: String, source: EngineError },
    #[error("{engine} does not support {query}")]
    Unsupported { engine: String, query: String },
    #[error("{engine} diverges from recompute at command {index}: {detail}")]
    Divergence { engine: String, index: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Default)]
pub struct RaceOptions {
    /// Also enumerate after every this many updates.
    pub enumerate_interval: Option<usize>,
    /// Compare every enumeration with recompute.
    pub oracle: bool,
    /// One thread per engine.
    pub parallel: bool,
    pub lifts: LiftingSpec,
    /// Auxiliary view definitions registered with the delta engines.
    pub aux: Vec<Query>,
}

/// One line of the report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportRow {
    /// Position of the command in the stream; interval enumerations share
    /// the index of the update they follow.
    pub index: usize,
    /// `update`, `enumerate`, `count` or `detect`.
    pub op: &'static str,
    pub probes: u64,
    /// Largest number of probes between consecutive emissions, including
    /// before the first and after the last.
    pub max_delay: u64,
    pub output_size: usize,
    /// Count or detect result, empty otherwise.
    pub value: Option<Payload>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub engine: String,
    pub rows: Vec<ReportRow>,
    pub preprocessing_probes: u64,
    pub wall: Duration,
    /// SHA-256 of the canonical text of the final output.
    pub checksum: String,
    /// Same for recompute on the final database, when the oracle ran.
    pub oracle_checksum: Option<String>,
}

impl RunReport {
    fn ops(&self, op: &str) -> impl Iterator<Item = &ReportRow> + '_ {
        let op = op.to_string();
        self.rows.iter().filter(move |r| r.op == op)
    }

    pub fn max_update_probes(&self) -> u64 {
        self.ops("update").map(|r| r.probes).max().unwrap_or(0)
    }

    pub fn total_update_probes(&self) -> u64 {
        self.ops("update").map(|r| r.probes).sum()
    }

    pub fn total_enumeration_probes(&self) -> u64 {
        self.ops("enumerate").map(|r| r.probes).sum()
    }

    /// Probes over the whole run, excluding preprocessing.
    pub fn total_probes(&self) -> u64 {
        self.rows.iter().map(|r| r.probes).sum()
    }

    pub fn max_delay(&self) -> u64 {
        self.ops("enumerate").map(|r| r.max_delay).max().unwrap_or(0)
    }

    /// Results of the `detect` commands in order.
    pub fn detections(&self) -> Vec<bool> {
        self.ops("detect").map(|r| r.value == Some(1)).collect()
    }

    pub fn counts(&self) -> Vec<Payload> {
        self.ops("count").filter_map(|r| r.value).collect()
    }
}

/// Canonical text of a relation, hashed.
pub fn checksum(rel: &Relation) -> String {
    let mut h = Sha256::new();
    for (t, p) in rel.sorted_entries() {
        h.update(format!("{t} -> {p}\n").as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs every engine on the same stream from the same initial database.
pub fn run_race(
    q: &Query,
    db: &Database,
    stream: &Stream,
    engines: &[EngineKind],
    opts: &RaceOptions,
) -> Result<Vec<RunReport>, RaceError> {
    for &kind in engines {
        if !kind.supports(q) {
            return Err(RaceError::Unsupported { engine: kind.to_string(), query: q.to_string() });
        }
    }
    if opts.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> =
                engines.iter().map(|&kind| scope.spawn(move || run_one(q, db, stream, kind, opts))).collect();
            handles.into_iter().map(|h| h.join().expect("engine thread panicked")).collect()
        })
    } else {
        engines.iter().map(|&kind| run_one(q, db, stream, kind, opts)).collect()
    }
}

fn collect(engine: &mut dyn Engine) -> (Vec<(Tuple, Payload)>, u64, u64) {
    let mut out = Vec::new();
    let start = probe::count();
    let mut last = start;
    let mut max_delay = 0;
    engine.enumerate(&mut |t, p| {
        let now = probe::count();
        max_delay = max_delay.max(now - last);
        last = now;
        out.push((t.clone(), p));
    });
    let end = probe::count();
    (out, end - start, max_delay.max(end - last))
}

fn first_difference(got: &Relation, want: &Relation) -> String {
    for (t, p) in want.sorted_entries() {
        if got.get(&t) != p {
            return format!("tuple {t}: engine {} expected {p}", got.get(&t));
        }
    }
    for (t, p) in got.sorted_entries() {
        if want.get(&t) == 0 {
            return format!("tuple {t}: engine {p} expected 0");
        }
    }
    "outputs differ".into()
}

fn build(kind: EngineKind, q: &Query, db: &Database, opts: &RaceOptions) -> Result<Box<dyn Engine>, EngineError> {
    let mode = match kind {
        EngineKind::DeltaEager => Mode::Eager,
        EngineKind::DeltaLazy => Mode::Lazy,
        _ => return kind.build(q, db, &opts.lifts),
    };
    let mut engine = DeltaEngine::new(q, db, mode, opts.lifts.clone())?;
    for def in &opts.aux {
        engine.register_auxiliary_view(def)?;
    }
    Ok(Box::new(engine))
}

fn run_one(q: &Query, db: &Database, stream: &Stream, kind: EngineKind, opts: &RaceOptions) -> Result<RunReport, RaceError> {
    let name = kind.to_string();
    let fail = |source| RaceError::Engine { engine: name.clone(), source };
    let t0 = Instant::now();
    let (engine, preprocessing_probes) = probe::measure(|| build(kind, q, db, opts));
    let mut engine = engine.map_err(fail)?;
    let mut oracle_db = db.clone();
    let mut rows = Vec::new();
    let mut updates = 0usize;
    let enumerate = |engine: &mut Box<dyn Engine>, index: usize, oracle_db: &Database| -> Result<ReportRow, RaceError> {
        let (out, probes, max_delay) = collect(engine.as_mut());
        if opts.oracle {
            let mut got = Relation::new(q.head_schema());
            for (t, p) in &out {
                got.apply_delta(t.clone(), *p).map_err(|e| fail(e.into()))?;
            }
            let want = recompute(q, oracle_db, &opts.lifts).map_err(|e| fail(e.into()))?;
            if got != want || got.len() != out.len() {
                let detail = if got.len() != out.len() { "duplicate output tuples".into() } else { first_difference(&got, &want) };
                return Err(RaceError::Divergence { engine: name.clone(), index, detail });
            }
        }
        Ok(ReportRow { index, op: "enumerate", probes, max_delay, output_size: out.len(), value: None })
    };
    for (index, c) in stream.commands.iter().enumerate() {
        match c {
            Command::Update(u) => {
                let (res, probes) = probe::measure(|| engine.apply(u));
                res.map_err(fail)?;
                if opts.oracle {
                    oracle_db.apply(u).map_err(|e| fail(e.into()))?;
                }
                rows.push(ReportRow { index, op: "update", probes, max_delay: 0, output_size: 0, value: None });
                updates += 1;
                if opts.enumerate_interval.is_some_and(|k| k > 0 && updates.is_multiple_of(k)) {
                    rows.push(enumerate(&mut engine, index, &oracle_db)?);
                }
            }
            Command::Enumerate => rows.push(enumerate(&mut engine, index, &oracle_db)?),
            Command::Count | Command::Detect => {
                let (out, probes, max_delay) = collect(engine.as_mut());
                let total = out.iter().fold(0 as Payload, |acc, (_, p)| crate::ring::add(acc, *p));
                let (op, value) = if *c == Command::Count { ("count", total) } else { ("detect", (!out.is_empty()) as Payload) };
                rows.push(ReportRow { index, op, probes, max_delay, output_size: out.len(), value: Some(value) });
            }
        }
    }
    let final_out = engine.output();
    let checksum = checksum(&final_out);
    let oracle_checksum = if opts.oracle {
        let want = recompute(q, &oracle_db, &opts.lifts).map_err(|e| fail(e.into()))?;
        let sum = self::checksum(&want);
        if sum != checksum {
            return Err(RaceError::Divergence {
                engine: name.clone(),
                index: stream.len(),
                detail: first_difference(&final_out, &want),
            });
        }
        Some(sum)
    } else {
        None
    };
    Ok(RunReport { engine: name, rows, preprocessing_probes, wall: t0.elapsed(), checksum, oracle_checksum })
}

/// CSV with columns `engine,index,op,probes,max_delay,output_size,value`.
pub fn write_report<W: Write>(reports: &[RunReport], out: W) -> Result<(), RaceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["engine", "index", "op", "probes", "max_delay", "output_size", "value"])?;
    for r in reports {
        for row in &r.rows {
            w.write_record([
                r.engine.clone(),
                row.index.to_string(),
                row.op.to_string(),
                row.probes.to_string(),
                row.max_delay.to_string(),
                row.output_size.to_string(),
                row.value.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::gen::{KeyDist, StreamSpec};
    use crate::query::parse_query;

    fn empty_db(q: &Query) -> Database {
        let mut db = Database::new();
        crate::delta::ensure_relations(q, &mut db).unwrap();
        db
    }

    #[test]
    fn q_hierarchical_race_agrees_with_oracle() {
        let q = parse_query("Q(Y,X,Z) := R(Y,X), S(Y,Z)").unwrap();
        let stream = StreamSpec::new(&[("R", 2), ("S", 2)], KeyDist::Zipf(1.0), 6, 300, 2).enumerate_every(Some(25)).generate();
        let opts = RaceOptions { oracle: true, ..Default::default() };
        let engines = [EngineKind::DeltaEager, EngineKind::DeltaLazy, EngineKind::ViewTree];
        let reports = run_race(&q, &empty_db(&q), &stream, &engines, &opts).unwrap();
        assert_eq!(reports.len(), 3);
        for r in &reports {
            assert_eq!(Some(&r.checksum), r.oracle_checksum.as_ref(), "{}", r.engine);
            assert_eq!(r.checksum, reports[0].checksum);
        }
        let par = run_race(&q, &empty_db(&q), &stream, &engines, &RaceOptions { parallel: true, ..opts }).unwrap();
        for (a, b) in reports.iter().zip(&par) {
            assert_eq!(a.rows, b.rows, "{}", a.engine);
        }
    }

    #[test]
    fn unsupported_engine_is_rejected() {
        let q = parse_query("Q(A) := sum(B) R(A,B), S(B)").unwrap();
        let err = run_race(&q, &empty_db(&q), &Stream::default(), &[EngineKind::ViewTree], &RaceOptions::default()).unwrap_err();
        assert!(matches!(err, RaceError::Unsupported { .. }));
    }

    #[test]
    fn csv_columns() {
        let q = parse_query("Q() := sum(A) R(A)").unwrap();
        let stream = Stream::parse("+ R(1)\ncount\ndetect\n- R(1)\ndetect\n").unwrap();
        let reports = run_race(&q, &empty_db(&q), &stream, &[EngineKind::DeltaEager], &RaceOptions::default()).unwrap();
        assert_eq!(reports[0].detections(), [true, false]);
        assert_eq!(reports[0].counts(), [1]);
        let mut buf = Vec::new();
        write_report(&reports, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("engine,index,op,probes,max_delay,output_size,value"));
        assert!(lines.nth(1).unwrap().starts_with("delta-eager,1,count,"));
    }
}
