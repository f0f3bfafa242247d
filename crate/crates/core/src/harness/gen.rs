//! Reproducible workload generators.

use hashlink::LinkedHashMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::database::{Database, Update};
use crate::query::{parse_query, Query};
use crate::relation::Schema;
use crate::triangle::threshold;
use crate::value::Tuple;

use super::stream::{Command, Stream};

/// How key values are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeyDist {
    Uniform,
    /// Rank `k` of the domain has weight `1/k^s`.
    Zipf(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    /// Relation names with their arities.
    pub relations: Vec<(String, usize)>,
    pub dist: KeyDist,
    /// Values are drawn from `1..=domain`.
    pub domain: usize,
    /// Number of updates.
    pub length: usize,
    pub seed: u64,
    pub insert_only: bool,
    /// Probability that an update deletes a live tuple.
    pub delete_ratio: f64,
    /// Emit `enumerate` after every this many updates.
    pub enumerate_interval: Option<usize>,
}

impl StreamSpec {
    pub fn new(relations: &[(&str, usize)], dist: KeyDist, domain: usize, length: usize, seed: u64) -> Self {
        StreamSpec {
            relations: relations.iter().map(|(r, a)| (r.to_string(), *a)).collect(),
            dist,
            domain: domain.max(1),
            length,
            seed,
            insert_only: false,
            delete_ratio: 0.3,
            enumerate_interval: None,
        }
    }

    pub fn insert_only(mut self, on: bool) -> Self {
        self.insert_only = on;
        self
    }

    pub fn enumerate_every(mut self, interval: Option<usize>) -> Self {
        self.enumerate_interval = interval.filter(|&i| i > 0);
        self
    }

    /// Relations and arities of a query.
    pub fn relations_of(q: &Query) -> Vec<(String, usize)> {
        q.relations()
            .into_iter()
            .map(|r| {
                let arity = q.atoms[q.atoms_over(&r)[0]].vars().len();
                (r, arity)
            })
            .collect()
    }

    pub fn generate(&self) -> Stream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let zipf = match self.dist {
            KeyDist::Zipf(s) => Some(Zipf::new(self.domain as f64, s.max(0.0)).expect("valid zipf parameters")),
            KeyDist::Uniform => None,
        };
        let draw = |rng: &mut ChaCha8Rng| -> i64 {
            match &zipf {
                Some(z) => z.sample(rng) as i64,
                None => rng.random_range(1..=self.domain as i64),
            }
        };
        let mut live = LiveSet::default();
        let mut out = Stream::default();
        for i in 0..self.length {
            let delete = !self.insert_only && !live.is_empty() && rng.random_bool(self.delete_ratio.clamp(0.0, 1.0));
            let u = if delete {
                live.take(&mut rng)
            } else {
                let (rel, arity) = &self.relations[rng.random_range(0..self.relations.len())];
                let tuple: Tuple = (0..*arity).map(|_| crate::value::Value::Int(draw(&mut rng))).collect();
                let u = Update::new(rel.clone(), tuple, 1);
                live.add(&u);
                u
            };
            out.push(Command::Update(u));
            if let Some(k) = self.enumerate_interval {
                if (i + 1) % k == 0 {
                    out.push(Command::Enumerate);
                }
            }
        }
        out
    }
}

/// Multiset of live tuples supporting uniform removal of one copy.
#[derive(Default)]
struct LiveSet {
    counts: LinkedHashMap<(String, Tuple), i64>,
    keys: Vec<(String, Tuple)>,
}

impl LiveSet {
    fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn add(&mut self, u: &Update) {
        let key = (u.relation.clone(), u.tuple.clone());
        let c = self.counts.entry(key.clone()).or_insert(0);
        if *c == 0 {
            self.keys.push(key);
        }
        *c += u.delta;
    }

    fn take(&mut self, rng: &mut ChaCha8Rng) -> Update {
        let i = rng.random_range(0..self.keys.len());
        let key = self.keys[i].clone();
        let c = self.counts.get_mut(&key).expect("live key");
        *c -= 1;
        if *c == 0 {
            self.counts.remove(&key);
            self.keys.swap_remove(i);
        }
        Update::new(key.0, key.1, -1)
    }
}

/// Checks that no prefix of the stream deletes more than is live.
pub fn is_valid(stream: &Stream) -> bool {
    let mut live: LinkedHashMap<(String, Tuple), i64> = LinkedHashMap::new();
    for u in stream.updates() {
        let c = live.entry((u.relation.clone(), u.tuple.clone())).or_insert(0);
        *c += u.delta;
        if *c < 0 {
            return false;
        }
    }
    true
}

/// An online vector-matrix-vector instance encoded as triangle detection
/// over `R(A,B), S(B,C), T(C,A)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Oumv {
    pub matrix: Vec<Vec<bool>>,
    pub rounds: Vec<(Vec<bool>, Vec<bool>)>,
}

/// The constant standing in for the `A` variable.
pub const OUMV_CONSTANT: &str = "a";

impl Oumv {
    /// Random `n x n` matrix and `n` rounds of vectors.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bits = |k: usize| -> Vec<bool> { (0..k).map(|_| rng.random_bool(0.5)).collect() };
        let matrix = (0..n).map(|_| bits(n)).collect();
        let rounds = (0..n).map(|_| (bits(n), bits(n))).collect();
        Oumv { matrix, rounds }
    }

    /// `u^T M v` over the Boolean semiring.
    pub fn truth(&self, round: usize) -> bool {
        let (u, v) = &self.rounds[round];
        (0..u.len()).any(|i| u[i] && (0..v.len()).any(|j| self.matrix[i][j] && v[j]))
    }

    pub fn truths(&self) -> Vec<bool> {
        (0..self.rounds.len()).map(|r| self.truth(r)).collect()
    }

    /// `S(i,j)` for every one of the matrix, then per round: delete all of
    /// `R` and `T`, insert `R(a,i)` for `u_i = 1` and `T(j,a)` for
    /// `v_j = 1`, and ask `detect`. Indices start at 1.
    pub fn stream(&self) -> Stream {
        let mut out = Stream::default();
        let a = OUMV_CONSTANT;
        for (i, row) in self.matrix.iter().enumerate() {
            for (j, &bit) in row.iter().enumerate() {
                if bit {
                    out.push(Command::Update(Update::insert("S", &[&(i + 1).to_string(), &(j + 1).to_string()])));
                }
            }
        }
        let mut live_r: Vec<String> = Vec::new();
        let mut live_t: Vec<String> = Vec::new();
        for (u, v) in &self.rounds {
            for i in live_r.drain(..) {
                out.push(Command::Update(Update::delete("R", &[a, &i])));
            }
            for j in live_t.drain(..) {
                out.push(Command::Update(Update::delete("T", &[&j, a])));
            }
            for (i, _) in u.iter().enumerate().filter(|(_, b)| **b) {
                let i = (i + 1).to_string();
                out.push(Command::Update(Update::insert("R", &[a, &i])));
                live_r.push(i);
            }
            for (j, _) in v.iter().enumerate().filter(|(_, b)| **b) {
                let j = (j + 1).to_string();
                out.push(Command::Update(Update::insert("T", &[&j, a])));
                live_t.push(j);
            }
            out.push(Command::Detect);
        }
        out
    }
}

/// Empty `R(A,B), S(B,C), T(C,A)`.
pub fn triangle_database() -> Database {
    let mut db = Database::new();
    for (r, s) in [("R", ["A", "B"]), ("S", ["B", "C"]), ("T", ["C", "A"])] {
        db.declare(r, Schema::new(s).expect("distinct")).expect("fresh");
    }
    db
}

/// A skewed triangle database of about `n` tuples and a stream that
/// toggles tuples on and off without moving any key across the heavy/light
/// threshold for `ε = 1/2`.
///
/// * `S(b*, c_k)` and `T(c_k, a*)` for `k < n/4`: toggling `R(a*, b*)`
///   costs a first-order delta `Θ(n)` but is one view lookup for a heavy
///   `b*`.
/// * `S(b', d_k)` and `T(d_k, a')` for `k < θ - 1`: toggling `R(a', b')`
///   scans a light block just below the threshold.
/// * light filler in `R` up to `n` tuples.
pub fn adversarial_triangle(n: usize, toggles: usize, seed: u64) -> (Database, Stream) {
    let mut db = triangle_database();
    let theta = threshold(n, 0.5);
    let fat = n / 4;
    let slim = theta.saturating_sub(1);
    let ins = |db: &mut Database, r: &str, a: &str, b: &str| db.apply(&Update::insert(r, &[a, b])).expect("binary");
    for k in 0..fat {
        let c = format!("c{k}");
        ins(&mut db, "S", "bstar", &c);
        ins(&mut db, "T", &c, "astar");
    }
    for k in 0..slim {
        let d = format!("d{k}");
        ins(&mut db, "S", "bslim", &d);
        ins(&mut db, "T", &d, "aslim");
    }
    let filler = n.saturating_sub(db.size());
    for k in 0..filler {
        ins(&mut db, "R", &format!("f{k}"), &format!("g{k}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: [(&str, String, String); 4] = [
        ("R", "astar".into(), "bstar".into()),
        ("R", "aslim".into(), "bslim".into()),
        ("T", "c0".into(), "aslim".into()),
        ("S", "bslim".into(), "extra".into()),
    ];
    let mut stream = Stream::default();
    for _ in 0..toggles {
        let (r, a, b) = &targets[rng.random_range(0..targets.len())];
        stream.push(Command::Update(Update::insert(r, &[a, b])));
        stream.push(Command::Update(Update::delete(r, &[a, b])));
    }
    (db, stream)
}

/// A five-relation q-hierarchical join over a retail-like schema, all
/// variables free.
pub fn retail_query() -> Query {
    parse_query("Q(L,D,K,W,Z,P,S) := Inv(L,D,K), Wea(L,D,W), Loc(L,Z), Cen(L,Z,P), Store(L,S)")
        .expect("well-formed")
}

/// Mixed stream over [`retail_query`] with small per-key fan-outs.
pub fn retail_stream(length: usize, seed: u64, enumerate_interval: Option<usize>) -> Stream {
    let domains: [(&str, &[usize]); 5] = [
        ("Inv", &[40, 8, 4]),
        ("Wea", &[40, 8, 3]),
        ("Loc", &[40, 2]),
        ("Cen", &[40, 2, 2]),
        ("Store", &[40, 3]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut live = LiveSet::default();
    let mut out = Stream::default();
    for i in 0..length {
        let u = if !live.is_empty() && rng.random_bool(0.2) {
            live.take(&mut rng)
        } else {
            let (rel, dom) = domains[rng.random_range(0..domains.len())];
            let tuple: Tuple = dom.iter().map(|&d| crate::value::Value::Int(rng.random_range(1..=d as i64))).collect();
            let u = Update::new(rel, tuple, 1);
            live.add(&u);
            u
        };
        out.push(Command::Update(u));
        if let Some(k) = enumerate_interval.filter(|&k| k > 0) {
            if (i + 1) % k == 0 {
                out.push(Command::Enumerate);
            }
        }
    }
    out
}
