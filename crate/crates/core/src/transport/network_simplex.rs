//! Primal network simplex for balanced transportation problems on an
//! implicit complete bipartite graph.
//!
//! Arcs are generated lazily: the caller proposes candidate pairs, a greedy
//! assignment over them gives the starting tree, and a full pricing sweep
//! over all source/target pairs adds violated arcs until none remain.
//! Supplies are integers so degenerate pivots compare exactly; the
//! strongly-feasible leaving rule prevents cycling.

use rayon::prelude::*;
use std::collections::HashMap;

/// Keeps the `PRICE_PER_NODE` most negative reduced costs.
fn most_violated(mut v: Vec<(f64, usize)>) -> Vec<(f64, usize)> {
    if v.len() > PRICE_PER_NODE {
        v.select_nth_unstable_by(PRICE_PER_NODE, |a, b| a.0.total_cmp(&b.0));
        v.truncate(PRICE_PER_NODE);
    }
    v
}

/// Proposes candidate pairs between the given sources and targets.
pub type Near<'n> = dyn Fn(&[usize], &[usize]) -> Vec<(usize, usize)> + 'n;

const NONE: usize = usize::MAX;
/// Arcs added per node and pricing sweep.
const PRICE_PER_NODE: usize = 8;

#[derive(Debug, Clone, Copy)]
struct Arc {
    tail: usize,
    head: usize,
    cost: f64,
    flow: i64,
}

/// Optimal flow on the real arcs plus node potentials with
/// `pot[i] - pot[n + j] <= cost(i, j)` for every pair.
#[derive(Debug, Clone)]
pub struct Solution {
    /// `(source, target, flow)` with positive flow.
    pub flows: Vec<(usize, usize, i64)>,
    pub pot_sources: Vec<f64>,
    pub pot_targets: Vec<f64>,
    pub pivots: usize,
    pub rounds: usize,
}

struct Tree {
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    children: Vec<Vec<usize>>,
    child_pos: Vec<usize>,
    size: Vec<usize>,
    stamp: Vec<u64>,
    generation: u64,
    stack: Vec<usize>,
    pot: Vec<f64>,
}

impl Tree {
    fn detach(&mut self, w: usize) {
        let p = self.parent[w];
        let pos = self.child_pos[w];
        let list = &mut self.children[p];
        list.swap_remove(pos);
        if pos < list.len() {
            let moved = list[pos];
            self.child_pos[moved] = pos;
        }
    }

    /// Nearest common ancestor, climbing from both ends in turn.
    fn join(&mut self, u: usize, v: usize) -> usize {
        self.generation += 1;
        let (mu, mv) = (2 * self.generation, 2 * self.generation + 1);
        let (mut a, mut b) = (u, v);
        loop {
            if self.stamp[a] == mv {
                return a;
            }
            self.stamp[a] = mu;
            if self.stamp[b] == mu {
                return b;
            }
            self.stamp[b] = mv;
            if self.parent[a] != NONE {
                a = self.parent[a];
            }
            if self.parent[b] != NONE {
                b = self.parent[b];
            }
        }
    }

    fn attach(&mut self, w: usize, p: usize, arc: usize) {
        self.parent[w] = p;
        self.parent_arc[w] = arc;
        self.child_pos[w] = self.children[p].len();
        self.children[p].push(w);
    }
}

pub struct NetworkSimplex<'a, C: Fn(usize, usize) -> f64 + Sync> {
    n: usize,
    m: usize,
    cost: &'a C,
    arcs: Vec<Arc>,
    present: HashMap<(usize, usize), usize>,
    tree: Tree,
    eps: f64,
    next_arc: usize,
    pivots: usize,
}

impl<'a, C: Fn(usize, usize) -> f64 + Sync> NetworkSimplex<'a, C> {
    /// `cost(i, j)` must be nonnegative and bounded by `max_cost`.
    ///
    /// The starting basis is a greedy cheapest-first assignment over the
    /// candidate pairs `near(sources, targets)` proposes for the nodes still
    /// unsaturated, repeated until every node is saturated. Saturating
    /// assignments never close a cycle, so the support is a forest; each
    /// component hangs from the root by a zero-flow arc into one of its
    /// targets, which keeps the tree strongly feasible. Arcs proposed along
    /// the way stay as candidates.
    pub fn new(supply: &[i64], demand: &[i64], cost: &'a C, max_cost: f64, near: &Near) -> Self {
        let (n, m) = (supply.len(), demand.len());
        assert!(supply.iter().chain(demand).all(|&w| w > 0), "weights must be positive");
        assert_eq!(supply.iter().sum::<i64>(), demand.iter().sum::<i64>(), "unbalanced");
        let root = n + m;
        let nodes = n + m + 1;
        let big = max_cost + 1.0;
        let mut ns = Self {
            n,
            m,
            cost,
            arcs: Vec::new(),
            present: HashMap::new(),
            tree: Tree {
                parent: vec![NONE; nodes],
                parent_arc: vec![NONE; nodes],
                children: vec![Vec::new(); nodes],
                child_pos: vec![0; nodes],
                size: vec![1; nodes],
                stamp: vec![0; nodes],
                generation: 0,
                stack: Vec::new(),
            pot: vec![0.0; nodes],
            },
            eps: 1e-12 * big,
            next_arc: 0,
            pivots: 0,
        };
        let mut rem_s = supply.to_vec();
        let mut rem_d = demand.to_vec();
        let mut first = true;
        loop {
            let left_s: Vec<usize> = (0..n).filter(|&i| rem_s[i] > 0).collect();
            let left_d: Vec<usize> = (0..m).filter(|&j| rem_d[j] > 0).collect();
            if left_s.is_empty() {
                break;
            }
            let mut pairs: Vec<(f64, usize, usize)> = near(&left_s, &left_d)
                .into_iter()
                .map(|(i, j)| (cost(i, j), i, j))
                .collect();
            assert!(!pairs.is_empty(), "no candidate pairs proposed");
            pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
            pairs.dedup_by(|x, y| (x.1, x.2) == (y.1, y.2));
            // Later rounds keep only the arcs they use.
            for (_, i, j) in pairs {
                let f = rem_s[i].min(rem_d[j]);
                if f > 0 || first {
                    let e = ns.add_arc(i, j);
                    ns.arcs[e].flow += f;
                    rem_s[i] -= f;
                    rem_d[j] -= f;
                }
            }
            first = false;
        }

        // Spanning tree: the forest plus one root arc per component.
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n + m];
        for (e, a) in ns.arcs.iter().enumerate() {
            if a.flow > 0 {
                adj[a.tail].push(e);
                adj[a.head].push(e);
            }
        }
        let mut seen = vec![false; n + m];
        let mut stack = Vec::new();
        for t in n..n + m {
            if seen[t] {
                continue;
            }
            ns.arcs.push(Arc {
                tail: root,
                head: t,
                cost: 0.0,
                flow: 0,
            });
            ns.tree.attach(t, root, ns.arcs.len() - 1);
            seen[t] = true;
            stack.push(t);
            while let Some(w) = stack.pop() {
                for &e in &adj[w] {
                    let a = ns.arcs[e];
                    let other = if a.tail == w { a.head } else { a.tail };
                    if !seen[other] {
                        seen[other] = true;
                        ns.tree.attach(other, w, e);
                        stack.push(other);
                    }
                }
            }
        }
        debug_assert!(seen.iter().all(|&s| s));
        ns.refresh_potentials();
        ns.recount_sizes();
        ns
    }

    /// Index of the arc `i -> j`, adding it if new.
    pub fn add_arc(&mut self, i: usize, j: usize) -> usize {
        let next = self.arcs.len();
        let e = *self.present.entry((i, j)).or_insert(next);
        if e == next {
            self.arcs.push(Arc {
                tail: i,
                head: self.n + j,
                cost: (self.cost)(i, j),
                flow: 0,
            });
        }
        e
    }

    fn reduced(&self, a: &Arc) -> f64 {
        a.cost - self.tree.pot[a.tail] + self.tree.pot[a.head]
    }

    /// Block pricing over the current arc list.
    fn find_entering(&mut self) -> Option<usize> {
        let len = self.arcs.len();
        let block = ((len as f64).sqrt() as usize).max(64);
        let mut scanned = 0;
        let mut best = None;
        let mut best_rc = -self.eps;
        let mut in_block = 0;
        while scanned < len {
            let e = self.next_arc;
            self.next_arc = (self.next_arc + 1) % len;
            scanned += 1;
            in_block += 1;
            let a = &self.arcs[e];
            if self.tree.parent_arc[a.head] != e && self.tree.parent_arc[a.tail] != e {
                let rc = self.reduced(a);
                if rc < best_rc {
                    best_rc = rc;
                    best = Some(e);
                }
            }
            if in_block >= block {
                if best.is_some() {
                    return best;
                }
                in_block = 0;
            }
        }
        best
    }

    fn pivot(&mut self, e: usize, path: &mut Vec<(usize, bool, bool)>) {
        let Arc { tail: u, head: v, .. } = self.arcs[e];
        let join = self.tree.join(u, v);
        let t = &self.tree;
        // Cycle order: join -> ... -> u, then u -> v, then v -> ... -> join.
        // Entries are (child node, backward?, on u side?).
        path.clear();
        let mut w = u;
        while w != join {
            let arc = &self.arcs[t.parent_arc[w]];
            path.push((w, arc.tail == w, true));
            w = t.parent[w];
        }
        path.reverse();
        let mut w = v;
        while w != join {
            let arc = &self.arcs[t.parent_arc[w]];
            path.push((w, arc.tail != w, false));
            w = t.parent[w];
        }
        let mut delta = i64::MAX;
        for &(w, back, _) in path.iter() {
            if back {
                delta = delta.min(self.arcs[t.parent_arc[w]].flow);
            }
        }
        assert!(delta < i64::MAX, "cycle without backward arc");
        let mut leave = NONE;
        let mut leave_u_side = false;
        for &(w, back, u_side) in path.iter() {
            if back && self.arcs[t.parent_arc[w]].flow == delta {
                leave = w;
                leave_u_side = u_side;
            }
        }
        if delta > 0 {
            for &(w, back, _) in path.iter() {
                let pa = self.tree.parent_arc[w];
                if back {
                    self.arcs[pa].flow -= delta;
                } else {
                    self.arcs[pa].flow += delta;
                }
            }
            self.arcs[e].flow += delta;
        }

        // Re-hang the subtree below the leaving arc from the entering arc.
        let (x, y) = if leave_u_side { (u, v) } else { (v, u) };
        let q = leave;
        let cost = self.arcs[e].cost;
        let shift = if x == v {
            self.tree.pot[u] - cost - self.tree.pot[v]
        } else {
            cost + self.tree.pot[v] - self.tree.pot[u]
        };
        let tree = &mut self.tree;
        let moved = tree.size[q];
        // Ancestors between q and the join lose the subtree, those between y
        // and the join gain it.
        let mut w = tree.parent[q];
        while w != join {
            tree.size[w] -= moved;
            w = tree.parent[w];
        }
        let mut w = y;
        while w != join {
            tree.size[w] += moved;
            w = tree.parent[w];
        }
        tree.detach(q);
        let (mut prev_node, mut prev_arc, mut w) = (y, e, x);
        let mut below = 0;
        loop {
            let old_parent = tree.parent[w];
            let old_arc = tree.parent_arc[w];
            let old_size = tree.size[w];
            tree.size[w] = moved - below;
            below = old_size;
            if w != q {
                tree.detach(w);
            }
            tree.attach(w, prev_node, prev_arc);
            if w == q {
                break;
            }
            prev_node = w;
            prev_arc = old_arc;
            w = old_parent;
        }
        // Potentials matter only up to a constant: shift the smaller side.
        let total = tree.parent.len();
        let mut stack = std::mem::take(&mut tree.stack);
        if 2 * moved <= total {
            stack.push(x);
            while let Some(s) = stack.pop() {
                tree.pot[s] += shift;
                stack.extend_from_slice(&tree.children[s]);
            }
        } else {
            stack.push(total - 1);
            while let Some(s) = stack.pop() {
                tree.pot[s] -= shift;
                stack.extend(tree.children[s].iter().copied().filter(|&c| c != x));
            }
        }
        tree.stack = stack;
        self.pivots += 1;
    }

    fn recount_sizes(&mut self) {
        let root = self.n + self.m;
        let tree = &mut self.tree;
        let mut order = vec![root];
        let mut i = 0;
        while i < order.len() {
            order.extend_from_slice(&tree.children[order[i]]);
            i += 1;
        }
        tree.size.iter_mut().for_each(|s| *s = 1);
        for &w in order.iter().rev().filter(|&&w| w != root) {
            let p = tree.parent[w];
            tree.size[p] += tree.size[w];
        }
    }

    /// Recomputes potentials from the root to remove accumulated drift.
    fn refresh_potentials(&mut self) {
        let root = self.n + self.m;
        let tree = &mut self.tree;
        tree.pot[root] = 0.0;
        let mut stack = vec![root];
        while let Some(s) = stack.pop() {
            for idx in 0..tree.children[s].len() {
                let c = tree.children[s][idx];
                let arc = &self.arcs[tree.parent_arc[c]];
                tree.pot[c] = if arc.tail == c {
                    tree.pot[s] + arc.cost
                } else {
                    tree.pot[s] - arc.cost
                };
                stack.push(c);
            }
        }
    }

    /// Up to `PRICE_PER_NODE` most violated pairs per source and per target
    /// over the complete graph.
    fn price_all(&self) -> Vec<(usize, usize)> {
        let pot = &self.tree.pot;
        let (n, m, eps) = (self.n, self.m, self.eps);
        let pick = most_violated;
        let rows: Vec<Vec<(f64, usize)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let row = (0..m)
                    .map(|j| ((self.cost)(i, j) - pot[i] + pot[n + j], j))
                    .filter(|e| e.0 < -eps)
                    .collect();
                pick(row)
            })
            .collect();
        let cols: Vec<Vec<(f64, usize)>> = (0..m)
            .into_par_iter()
            .map(|j| {
                let col = (0..n)
                    .map(|i| ((self.cost)(i, j) - pot[i] + pot[n + j], i))
                    .filter(|e| e.0 < -eps)
                    .collect();
                pick(col)
            })
            .collect();
        let mut out: Vec<(usize, usize)> = rows
            .into_iter()
            .enumerate()
            .flat_map(|(i, r)| r.into_iter().map(move |(_, j)| (i, j)))
            .collect();
        out.extend(cols.into_iter().enumerate().flat_map(|(j, c)| c.into_iter().map(move |(_, i)| (i, j))));
        out
    }

    pub fn solve(mut self) -> Solution {
        let mut path = Vec::new();
        let mut rounds = 0;
        loop {
            let mut since_refresh = 0;
            while let Some(e) = self.find_entering() {
                self.pivot(e, &mut path);
                since_refresh += 1;
                if since_refresh > 4 * (self.n + self.m) {
                    self.refresh_potentials();
                    since_refresh = 0;
                }
            }
            self.refresh_potentials();
            rounds += 1;
            let violated = self.price_all();
            let before = self.arcs.len();
            for (i, j) in violated {
                self.add_arc(i, j);
            }
            if self.arcs.len() == before {
                // Violations can only repeat for arcs already present when the
                // local search missed them due to drift; a final local pass settles it.
                if self.find_entering().is_none() {
                    break;
                }
            }
        }
        let root = self.n + self.m;
        debug_assert!(self
            .arcs
            .iter()
            .filter(|a| a.tail == root || a.head == root)
            .all(|a| a.flow == 0));
        let flows = self
            .arcs
            .iter()
            .filter(|a| a.flow > 0 && a.tail != root && a.head != root)
            .map(|a| (a.tail, a.head - self.n, a.flow))
            .collect();
        Solution {
            flows,
            pot_sources: self.tree.pot[..self.n].to_vec(),
            pot_targets: self.tree.pot[self.n..self.n + self.m].to_vec(),
            pivots: self.pivots,
            rounds,
        }
    }
}

/// Solves the transportation problem, seeding the basis from `near`.
pub fn solve_transport<C: Fn(usize, usize) -> f64 + Sync>(
    supply: &[i64],
    demand: &[i64],
    cost: &C,
    max_cost: f64,
    near: &Near,
) -> Solution {
    NetworkSimplex::new(supply, demand, cost, max_cost, near).solve()
}
