//! Constant-delay enumeration over a calibrated view tree.

use crate::engine::EngineError;
use crate::relation::Block;
use crate::ring::{self, Payload};
use crate::value::{Tuple, Value};

use super::ViewTree;

/// One free variable of the order, in preorder.
struct Level {
    node: usize,
    /// Levels holding the values of `dep(node)`.
    dep: Vec<usize>,
    /// Atoms placed at the node, with the level of each atom position.
    atoms: Vec<(usize, Vec<usize>)>,
    /// Bound children, with the level of each variable of their view.
    bound_children: Vec<(usize, Vec<usize>)>,
}

/// Odometer over the free variables. Moving from one output tuple to the
/// next touches every level at most twice, so the delay depends only on the
/// query.
pub struct EnumCursor<'a> {
    tree: &'a ViewTree,
    levels: Vec<Level>,
    /// For every head variable, the level that binds it.
    head: Vec<usize>,
    blocks: Vec<Option<Block<'a>>>,
    values: Vec<Value>,
    /// `acc[i]` is the payload contributed by levels `< i`.
    acc: Vec<Payload>,
    fixed: usize,
    started: bool,
    done: bool,
}

impl<'a> EnumCursor<'a> {
    pub(super) fn new(tree: &'a ViewTree, binding: Option<&Tuple>) -> Result<Self, EngineError> {
        let mut order = Vec::new();
        for &r in &tree.roots {
            preorder(tree, r, &mut order);
        }
        let level_of = |var: &str| order.iter().position(|&n| tree.nodes[n].var == var).expect("free variable");
        let levels: Vec<Level> = order
            .iter()
            .map(|&n| {
                let node = &tree.nodes[n];
                Level {
                    node: n,
                    dep: node.dep.iter().map(|v| level_of(v)).collect(),
                    atoms: node
                        .atoms
                        .iter()
                        .map(|&a| (a, tree.query.atoms[a].vars().iter().map(|v| level_of(v)).collect()))
                        .collect(),
                    bound_children: node
                        .children
                        .iter()
                        .filter(|&&c| !tree.nodes[c].free)
                        .map(|&c| (c, tree.nodes[c].dep.iter().map(|v| level_of(v)).collect()))
                        .collect(),
                }
            })
            .collect();
        let head = tree.query.free.iter().map(|v| level_of(v)).collect();
        let n = levels.len();
        let mut cursor = EnumCursor {
            tree,
            levels,
            head,
            blocks: (0..n).map(|_| None).collect(),
            values: vec![Value::Int(0); n],
            acc: vec![0; n + 1],
            fixed: 0,
            started: false,
            done: false,
        };
        cursor.acc[0] = tree.scalar();
        if cursor.acc[0] == 0 {
            cursor.done = true;
        }
        if let Some(binding) = binding {
            cursor.bind_inputs(binding)?;
        }
        Ok(cursor)
    }

    fn bind_inputs(&mut self, binding: &Tuple) -> Result<(), EngineError> {
        let q = &self.tree.query;
        if binding.arity() != q.inputs.len() {
            return Err(EngineError::UnsupportedAccessPattern(format!(
                "expected {} input values, got {}",
                q.inputs.len(),
                binding.arity()
            )));
        }
        let k = q.inputs.len();
        let top: Vec<&str> = self.levels[..k.min(self.levels.len())]
            .iter()
            .map(|l| self.tree.nodes[l.node].var.as_str())
            .collect();
        if top.len() < k || !q.inputs.iter().all(|v| top.contains(&v.as_str())) {
            return Err(EngineError::UnsupportedAccessPattern(format!(
                "inputs {} are not a top fragment of the variable order",
                q.inputs.join(",")
            )));
        }
        for (i, v) in q.inputs.iter().enumerate() {
            let lvl = self.levels.iter().position(|l| self.tree.nodes[l.node].var == *v).unwrap();
            self.values[lvl] = binding.get(i);
        }
        self.fixed = k;
        for lvl in 0..k {
            if self.done {
                break;
            }
            let level = &self.levels[lvl];
            let node = &self.tree.nodes[level.node];
            let key: Tuple = level.dep.iter().chain(std::iter::once(&lvl)).map(|&l| self.values[l]).collect();
            if node.join.get(&key) == 0 {
                self.done = true;
            } else {
                self.acc[lvl + 1] = ring::mul(self.acc[lvl], self.factor(lvl));
            }
        }
        Ok(())
    }

    fn open(&mut self, lvl: usize) {
        let level = &self.levels[lvl];
        let node = &self.tree.nodes[level.node];
        let key: Tuple = level.dep.iter().map(|&l| self.values[l]).collect();
        self.blocks[lvl] = Some(node.join.probe(node.join_by_dep, &key));
    }

    fn factor(&self, lvl: usize) -> Payload {
        let level = &self.levels[lvl];
        let tree = self.tree;
        let mut p: Payload = 1;
        for (a, pos) in &level.atoms {
            let t: Tuple = pos.iter().map(|&l| self.values[l]).collect();
            p = ring::mul(p, tree.atom_rels[*a].get(&t));
        }
        for (c, pos) in &level.bound_children {
            let t: Tuple = pos.iter().map(|&l| self.values[l]).collect();
            p = ring::mul(p, tree.nodes[*c].marg.get(&t));
        }
        let node = &tree.nodes[level.node];
        if node.level_lift {
            p = ring::mul(p, tree.lifts.lift(&node.var, &self.values[lvl]));
        }
        p
    }

    fn emit(&self) -> (Tuple, Payload) {
        (self.head.iter().map(|&l| self.values[l]).collect(), self.acc[self.levels.len()])
    }
}

fn preorder(tree: &ViewTree, n: usize, out: &mut Vec<usize>) {
    if !tree.nodes[n].free {
        return;
    }
    out.push(n);
    for &c in &tree.nodes[n].children {
        preorder(tree, c, out);
    }
}

impl Iterator for EnumCursor<'_> {
    type Item = (Tuple, Payload);

    fn next(&mut self) -> Option<(Tuple, Payload)> {
        if self.done {
            return None;
        }
        let depth = self.levels.len();
        let mut lvl = if self.started {
            depth - 1
        } else {
            self.started = true;
            if self.fixed == depth {
                self.done = true;
                return Some(self.emit());
            }
            self.open(self.fixed);
            self.fixed
        };
        if self.fixed == depth {
            self.done = true;
            return None;
        }
        loop {
            let item = self.blocks[lvl].as_mut().and_then(Iterator::next);
            match item {
                Some((t, _)) => {
                    self.values[lvl] = t.get(t.arity() - 1);
                    self.acc[lvl + 1] = ring::mul(self.acc[lvl], self.factor(lvl));
                    if lvl + 1 == depth {
                        return Some(self.emit());
                    }
                    lvl += 1;
                    self.open(lvl);
                }
                None => {
                    if lvl == self.fixed {
                        self.done = true;
                        return None;
                    }
                    lvl -= 1;
                }
            }
        }
    }
}
