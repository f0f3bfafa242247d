//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ivm_core::delta::{ensure_relations, recompute};
use ivm_core::harness::gen::{adversarial_triangle, retail_query, retail_stream, triangle_database, Oumv};
use ivm_core::harness::{run_race, RaceOptions, Stream};
use ivm_core::query::{
    check_static_dynamic, fd_closure, is_hierarchical, is_q_hierarchical, is_tractable_cqap, parse_query, sigma_reduct,
    Fd, Query,
};
use ivm_core::{probe, Database, Engine, EngineKind, LiftingSpec, Payload, Tuple, Update};

type Check = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn sample_triangle() -> Database {
    Database::parse(
        "schema R(A,B)\nschema S(B,C)\nschema T(C,A)\n\
         R(a1,b1) -> 2\nR(a2,b1) -> 3\n\
         S(b1,c1) -> 2\nS(b1,c2) -> 1\n\
         T(c1,a1) -> 1\nT(c2,a1) -> 3\nT(c2,a2) -> 3\n",
    )
    .unwrap()
}

fn triangle() -> Query {
    parse_query("Q() := sum(A,B,C) R(A,B), S(B,C), T(C,A)").unwrap()
}

fn scalar(e: &mut dyn Engine) -> Payload {
    e.output().get(&Tuple::empty())
}

fn triangle_end_to_end() -> Outcome {
    let start = Instant::now();
    let q = triangle();
    let mut notes = Vec::new();
    let mut ok = true;
    for kind in [EngineKind::DeltaEager, EngineKind::DeltaLazy, EngineKind::IvmEps(0.5)] {
        let mut e = kind.build(&q, &sample_triangle(), &LiftingSpec::new()).unwrap();
        let before = scalar(e.as_mut());
        e.apply(&Update::new("R", Tuple::parse(&["a2", "b1"]), -2)).unwrap();
        let after = scalar(e.as_mut());
        ok &= before == 19 && after - before == -6 && after == 13;
        notes.push(format!("{kind}: {before} {:+} = {after}", after - before));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(1);
    outcome(ok, format!("{} in {elapsed:.1?}", notes.join(", ")))
}

/// Random query over at most four atoms and variables `A..D`.
fn random_query(rng: &mut ChaCha8Rng) -> Query {
    if rng.random_bool(0.1) {
        let mut names = ["A", "B", "C"];
        names.shuffle(rng);
        let [x, y, z] = names;
        let atoms = [format!("R({x},{y})"), format!("S({y},{z})"), format!("T({z},{x})")];
        let flip = |a: &str, rng: &mut ChaCha8Rng| {
            if rng.random_bool(0.3) {
                let inner = &a[2..a.len() - 1];
                let (l, r) = inner.split_once(',').unwrap();
                format!("{}({r},{l})", &a[..1])
            } else {
                a.to_string()
            }
        };
        let body: Vec<String> = atoms.iter().map(|a| flip(a, rng)).collect();
        return parse_query(&format!("Q() := sum(A,B,C) {}", body.join(", "))).unwrap();
    }
    loop {
        let vars = ["A", "B", "C", "D"];
        let n = rng.random_range(1..=4);
        let mut atoms = Vec::new();
        for i in 0..n {
            let arity = rng.random_range(0..=3usize).max(1);
            let mut vs: Vec<&str> = vars.to_vec();
            vs.shuffle(rng);
            vs.truncate(arity);
            // occasional self-join
            let name = if i > 0 && rng.random_bool(0.1) { "R0".to_string() } else { format!("R{i}") };
            atoms.push((name, vs));
        }
        // self-joins need equal arities
        let arity0 = atoms[0].1.len();
        for a in atoms.iter_mut().skip(1) {
            if a.0 == "R0" {
                a.1.truncate(arity0);
                while a.1.len() < arity0 {
                    let extra = vars.iter().find(|v| !a.1.contains(v)).unwrap();
                    a.1.push(extra);
                }
            }
        }
        let used: BTreeSet<&str> = atoms.iter().flat_map(|a| a.1.iter().copied()).collect();
        let (free, bound): (Vec<&str>, Vec<&str>) = used.iter().partition(|_| rng.random_bool(0.5));
        let body: Vec<String> = atoms.iter().map(|(r, vs)| format!("{r}({})", vs.join(","))).collect();
        let sum = if bound.is_empty() { String::new() } else { format!("sum({}) ", bound.join(",")) };
        if let Ok(q) = parse_query(&format!("Q({}) := {sum}{}", free.join(","), body.join(", "))) {
            return q;
        }
    }
}

fn random_stream(q: &Query, len: usize, rng: &mut ChaCha8Rng) -> Vec<Update> {
    let rels: Vec<(String, usize)> = q.relations().into_iter().map(|r| (r.clone(), q.atoms[q.atoms_over(&r)[0]].vars().len())).collect();
    let mut live: Vec<Update> = Vec::new();
    let mut out = Vec::new();
    for _ in 0..len {
        if !live.is_empty() && rng.random_bool(0.3) {
            let u = live.swap_remove(rng.random_range(0..live.len()));
            out.push(u.negated());
        } else {
            let (r, arity) = &rels[rng.random_range(0..rels.len())];
            let vals: Vec<String> = (0..*arity).map(|_| rng.random_range(1..=4).to_string()).collect();
            let refs: Vec<&str> = vals.iter().map(String::as_str).collect();
            let u = Update::new(r.clone(), Tuple::parse(&refs), rng.random_range(1..=2));
            live.push(u.clone());
            out.push(u);
        }
    }
    out
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    let exercised = std::cell::RefCell::new([0usize; 4]);
    let result = runner.run(&(any::<u64>(), 1..=500usize), |(seed, len)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_query(&mut rng);
        let trivial = q.bound.is_empty() || rng.random_bool(0.7);
        let lifts = if trivial { LiftingSpec::new() } else { LiftingSpec::new().with_value_lift(&q.bound[0]) };
        let mut db = Database::new();
        ensure_relations(&q, &mut db).unwrap();
        let kinds = [EngineKind::DeltaEager, EngineKind::DeltaLazy, EngineKind::ViewTree, EngineKind::IvmEps(0.5)];
        let mut engines: Vec<Box<dyn Engine>> = Vec::new();
        for (k, kind) in kinds.iter().enumerate() {
            if kind.supports(&q) && (trivial || !matches!(kind, EngineKind::IvmEps(_))) {
                engines.push(kind.build(&q, &db, &lifts).map_err(|e| TestCaseError::fail(format!("{kind}: {e}")))?);
                exercised.borrow_mut()[k] += 1;
            }
        }
        for (i, u) in random_stream(&q, len, &mut rng).iter().enumerate() {
            db.apply(u).unwrap();
            let want = recompute(&q, &db, &lifts).unwrap();
            for e in engines.iter_mut() {
                e.apply(u).map_err(|err| TestCaseError::fail(format!("{}: {err}", e.name())))?;
                let got = e.output();
                prop_assert!(got == want, "{} differs from recompute on {q} after update {i} ({u})", e.name());
            }
        }
        Ok(())
    });
    let elapsed = start.elapsed();
    let [eager, lazy, tree, eps] = *exercised.borrow();
    let counts = format!("engine runs: delta-eager {eager}, delta-lazy {lazy}, viewtree {tree}, ivm-eps {eps}");
    match result {
        Ok(()) => outcome(elapsed < Duration::from_secs(300), format!("1000 cases, {counts}, {elapsed:.1?}")),
        Err(e) => outcome(false, format!("{e}; {counts}")),
    }
}

fn classifier_fixtures() -> Outcome {
    let q = |t: &str| parse_query(t).unwrap();
    let set = |vs: &[&str]| vs.iter().map(|v| v.to_string()).collect::<BTreeSet<String>>();
    let checks: Vec<(&str, bool)> = vec![
        ("Q = sum R(X)S(X,Y)T(Y) non-hierarchical", !is_hierarchical(&q("Q() := sum(X,Y) R(X), S(X,Y), T(Y)")).unwrap().holds),
        ("Q(X) = sum_Y R(X,Y)S(Y) hierarchical", is_hierarchical(&q("Q(X) := sum(Y) R(X,Y), S(Y)")).unwrap().holds),
        ("Q(X) = sum_Y R(X,Y)S(Y) not q-hierarchical", !is_q_hierarchical(&q("Q(X) := sum(Y) R(X,Y), S(Y)")).unwrap().holds),
        ("Q(Y,X,Z) = R(Y,X)S(Y,Z) q-hierarchical", is_q_hierarchical(&q("Q(Y,X,Z) := R(Y,X), S(Y,Z)")).unwrap().holds),
        ("Q(.|A,B,C) tractable", is_tractable_cqap(&q("Q(·|A,B,C) := E(A,B), E(B,C), E(C,A)")).holds),
        ("Q(C|A,B) not tractable", !is_tractable_cqap(&q("Q(C|A,B) := E(A,B), E(B,C), E(C,A)")).holds),
        ("Q(A|B) tractable", is_tractable_cqap(&q("Q(A|B) := S(A,B), T(B)")).holds),
        (
            "closure of {A,B} under A->C, BC->D",
            fd_closure(&set(&["A", "B"]), &[Fd::new(&["A"], &["C"]), Fd::new(&["B", "C"], &["D"])]) == set(&["A", "B", "C", "D"]),
        ),
        ("fd example reduct q-hierarchical", {
            let orig = q("Q(Z,Y,X,W) := R(X,W), S(X,Y), T(Y,Z)\nfd: X -> Y; Y -> Z");
            !is_q_hierarchical(&orig).unwrap().holds && is_q_hierarchical(&sigma_reduct(&orig, &orig.fds)).unwrap().holds
        }),
        (
            "static/dynamic example tractable",
            check_static_dynamic(&q("Q(A,B,C) := sum(D) R(A,D)@dynamic, S(A,B)@dynamic, T(B,C)@static")).holds
                && !is_q_hierarchical(&q("Q(A,B,C) := sum(D) R(A,D), S(A,B), T(B,C)")).unwrap().holds,
        ),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        outcome(true, format!("{} fixtures", checks.len()))
    } else {
        outcome(false, format!("failed: {}", failed.join("; ")))
    }
}

/// Max probes per update over a 10^4-update stream and max probes between
/// emissions over a full enumeration, for a database of `n` tuples.
fn view_tree_costs(n: usize) -> (u64, u64) {
    let q = parse_query("Q(Y,X,Z) := R(Y,X), S(Y,Z)").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let ys = (n / 10).max(1);
    let mut db = Database::new();
    ensure_relations(&q, &mut db).unwrap();
    let mut live = Vec::new();
    for i in 0..n {
        let r = if i % 2 == 0 { "R" } else { "S" };
        let u = Update::new(r, Tuple::parse(&[&format!("y{}", rng.random_range(0..ys)), &format!("v{i}")]), 1);
        db.apply(&u).unwrap();
        live.push(u);
    }
    let mut e = EngineKind::ViewTree.build(&q, &db, &LiftingSpec::new()).unwrap();
    let mut max_update = 0;
    for k in 0..10_000 {
        let u = if k % 2 == 1 {
            live.swap_remove(rng.random_range(0..live.len())).negated()
        } else {
            let r = if rng.random_bool(0.5) { "R" } else { "S" };
            let u = Update::new(r, Tuple::parse(&[&format!("y{}", rng.random_range(0..ys + 5)), &format!("w{k}")]), 1);
            live.push(u.clone());
            u
        };
        let ((), p) = probe::measure(|| e.apply(&u).unwrap());
        max_update = max_update.max(p);
    }
    let mut last = probe::count();
    let mut max_delay = 0;
    e.enumerate(&mut |_, _| {
        let now = probe::count();
        max_delay = max_delay.max(now - last);
        last = now;
    });
    max_delay = max_delay.max(probe::count() - last);
    (max_update, max_delay)
}

fn view_tree_constant() -> Outcome {
    let start = Instant::now();
    let small = view_tree_costs(10_000);
    let large = view_tree_costs(100_000);
    let elapsed = start.elapsed();
    outcome(
        small == large && elapsed < Duration::from_secs(120),
        format!(
            "N=10^4: update {} delay {}; N=10^5: update {} delay {}; {elapsed:.1?}",
            small.0, small.1, large.0, large.1
        ),
    )
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

fn ivm_eps_scaling() -> Outcome {
    let start = Instant::now();
    let q = triangle();
    let mut eps_points = Vec::new();
    let mut delta_points = Vec::new();
    let mut notes = Vec::new();
    for n in [1_000usize, 4_000, 16_000] {
        let (db, stream) = adversarial_triangle(n, 500, 7);
        let opts = RaceOptions::default();
        let reports = run_race(&q, &db, &stream, &[EngineKind::IvmEps(0.5), EngineKind::DeltaEager], &opts).unwrap();
        let (e, d) = (reports[0].max_update_probes(), reports[1].max_update_probes());
        if reports[0].checksum != reports[1].checksum {
            return outcome(false, format!("engines disagree at N={n}"));
        }
        eps_points.push((n as f64, e as f64));
        delta_points.push((n as f64, d as f64));
        notes.push(format!("N={n}: ivm-eps {e}, delta {d}"));
    }
    let (se, sd) = (slope(&eps_points), slope(&delta_points));
    let elapsed = start.elapsed();
    outcome(
        (0.35..=0.65).contains(&se) && sd >= 0.85 && elapsed < Duration::from_secs(600),
        format!("slopes ivm-eps {se:.3}, delta {sd:.3} ({}); {elapsed:.1?}", notes.join(", ")),
    )
}

fn oumv_harness() -> Outcome {
    let start = Instant::now();
    let q = triangle();
    let mut rounds = 0;
    for n in [4usize, 8, 16] {
        for seed in 0..20 {
            let inst = Oumv::random(n, seed);
            let engines = [EngineKind::IvmEps(0.5), EngineKind::DeltaEager];
            let reports = run_race(&q, &triangle_database(), &inst.stream(), &engines, &RaceOptions::default()).unwrap();
            let truths = inst.truths();
            for r in &reports {
                if r.detections() != truths {
                    return outcome(false, format!("{} wrong for n={n} seed={seed}", r.engine));
                }
            }
            rounds += truths.len();
        }
    }
    let elapsed = start.elapsed();
    outcome(elapsed < Duration::from_secs(60), format!("{rounds} rounds on ivm-eps and delta-eager, {elapsed:.1?}"))
}

fn batch_order_independence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let setups: [(Query, Vec<EngineKind>); 2] = [
        (
            parse_query("Q(Y,X,Z) := R(Y,X), S(Y,Z)").unwrap(),
            vec![EngineKind::DeltaEager, EngineKind::DeltaLazy, EngineKind::ViewTree],
        ),
        (triangle(), vec![EngineKind::DeltaEager, EngineKind::DeltaLazy, EngineKind::IvmEps(0.5)]),
    ];
    let mut runs = 0;
    for b in 0..100 {
        let (q, kinds) = &setups[b % 2];
        let rels = q.relations();
        let mut db = Database::new();
        ensure_relations(q, &mut db).unwrap();
        let mut existing = Vec::new();
        for _ in 0..60 {
            let r = &rels[rng.random_range(0..rels.len())];
            let t = Tuple::parse(&[&rng.random_range(0..6).to_string(), &rng.random_range(0..6).to_string()]);
            let u = Update::new(r.clone(), t, rng.random_range(1..3));
            db.apply(&u).unwrap();
            existing.push(u);
        }
        // fresh inserts and one-copy deletes of distinct existing tuples, so
        // every order keeps multiplicities nonnegative
        let size = rng.random_range(1..=50);
        let mut batch = Vec::new();
        let mut deleted = BTreeSet::new();
        for k in 0..size {
            if rng.random_bool(0.4) {
                let u = &existing[rng.random_range(0..existing.len())];
                if deleted.insert((u.relation.clone(), u.tuple.to_string())) {
                    batch.push(Update::new(u.relation.clone(), u.tuple.clone(), -1));
                    continue;
                }
            }
            let r = &rels[rng.random_range(0..rels.len())];
            let t = Tuple::parse(&[&format!("n{k}"), &rng.random_range(0..6).to_string()]);
            batch.push(Update::new(r.clone(), t, 1));
        }
        for kind in kinds {
            let mut reference: Option<String> = None;
            for _ in 0..10 {
                batch.shuffle(&mut rng);
                let mut e = kind.build(q, &db, &LiftingSpec::new()).unwrap();
                for u in &batch {
                    e.apply(u).unwrap();
                }
                let fp = e.fingerprint();
                match &reference {
                    None => reference = Some(fp),
                    Some(r) if *r != fp => return outcome(false, format!("{kind} differs across permutations of batch {b}")),
                    _ => {}
                }
                runs += 1;
            }
        }
    }
    outcome(true, format!("100 batches, {runs} permuted runs with identical fingerprints"))
}

fn retail_ordering() -> Outcome {
    let q = retail_query();
    let mut db = Database::new();
    ensure_relations(&q, &mut db).unwrap();
    let engines = [EngineKind::ViewTree, EngineKind::DeltaEager];
    let mut ok = true;
    let mut notes = Vec::new();
    for interval in [Some(1000), Some(10_000), None] {
        let stream: Stream = retail_stream(20_000, 11, interval);
        let reports = run_race(&q, &db, &stream, &engines, &RaceOptions::default()).unwrap();
        let (fact, list) = (reports[0].total_probes(), reports[1].total_probes());
        if reports[0].checksum != reports[1].checksum {
            return outcome(false, "engines disagree on the final output");
        }
        match interval {
            Some(k) => {
                ok &= fact < list;
                notes.push(format!("interval {k}: fact {fact} < list {list}"));
            }
            None => notes.push(format!("no enumeration: fact {fact}, list {list}")),
        }
    }
    outcome(ok, notes.join("; "))
}

fn main() {
    let criteria: [Check; 8] = [
        ("triangle end-to-end", triangle_end_to_end),
        ("oracle equivalence", oracle_equivalence),
        ("classifier fixtures", classifier_fixtures),
        ("view tree constant update and delay", view_tree_constant),
        ("ivm-eps scaling", ivm_eps_scaling),
        ("oumv harness", oumv_harness),
        ("batch-order independence", batch_order_independence),
        ("factorized vs list ordering", retail_ordering),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = check();
        println!("criterion {} {} {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
