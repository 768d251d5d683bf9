//! Best/worst decoding-order search.
//!
//! Scoring a decoding order sums per-stage rates, and the rate of decoding a
//! cell depends only on the SET of cells already decoded — not on the order
//! they were decoded in. That additive set-cost structure makes the search
//! exact and cheap: instead of enumerating all n²! orders (infeasible at
//! n = 4), a Held-Karp-style dynamic program over the 2^(n²) subsets finds
//! the true optimum, and a depth-first search with an admissible bound
//! confirms it independently. Exhaustive enumeration stays available for
//! small patches as the ground-truth oracle.

use itertools::Itertools;

use crate::error::Error;
use crate::field::{cond_stats, theoretical_order_rate, FieldModel, OrderScore};
use crate::grid::{PatchOrder, D4};
use crate::mask::{ContextMask, WINDOW_RADIUS};
use crate::parallel;
use crate::Result;

/// Rate of every (cell, already-decoded-subset) pair for an n×n patch.
///
/// Internally the table is collapsed by the key insight that the induced
/// context mask depends only on the *relative* (wrapped) displacement classes
/// of the decoded cells, so all n² cells share one table of 2^(n²−1)
/// entries. Keying the cache by induced mask pattern rather than raw subset
/// turns n²·2^(n²−1) logical entries into 2^(n²−1) computed ones.
#[derive(Debug, Clone)]
pub struct SubsetCostTable {
    n: usize,
    cells: usize,
    /// rate_bits indexed by relative displacement-class bitset.
    rel_costs: Vec<f64>,
    /// rel_class[a][b] = displacement-class bit of cell b relative to cell a.
    rel_class: Vec<Vec<u8>>,
}

impl SubsetCostTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_cells(&self) -> usize {
        self.cells
    }

    /// Entries actually computed (= distinct induced masks).
    pub fn distinct_masks(&self) -> usize {
        self.rel_costs.len()
    }

    /// Logical (cell, subset) pairs the table answers for.
    pub fn logical_pairs(&self) -> u64 {
        self.cells as u64 * (1u64 << (self.cells - 1))
    }

    /// Fraction of logical queries answered from an already-computed entry.
    pub fn cache_hit_rate(&self) -> f64 {
        1.0 - self.distinct_masks() as f64 / self.logical_pairs() as f64
    }

    fn rel_key(&self, cell: usize, subset: u32) -> usize {
        debug_assert_eq!(subset & (1 << cell), 0, "subset must not contain the cell");
        let mut key = 0usize;
        let mut rest = subset;
        while rest != 0 {
            let b = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            key |= 1 << self.rel_class[cell][b];
        }
        key
    }

    /// Rate in bits of decoding `cell` when exactly the cells in `subset`
    /// (an n²-bit set, excluding `cell`) are already decoded.
    pub fn cost(&self, cell: usize, subset: u32) -> f64 {
        self.rel_costs[self.rel_key(cell, subset)]
    }
}

/// Context mask induced by a set of relative displacement classes.
fn mask_from_rel(n: usize, rel: usize) -> ContextMask {
    let n = n as isize;
    let mut offsets = Vec::new();
    for dy in -WINDOW_RADIUS..=WINDOW_RADIUS {
        for dx in -WINDOW_RADIUS..=WINDOW_RADIUS {
            if dy == 0 && dx == 0 {
                continue;
            }
            let dr = dy.rem_euclid(n);
            let dc = dx.rem_euclid(n);
            if dr == 0 && dc == 0 {
                // Wraps onto the cell itself; never decoded context.
                continue;
            }
            let class = (dr * n + dc - 1) as usize;
            if rel & (1 << class) != 0 {
                offsets.push((dy, dx));
            }
        }
    }
    ContextMask::from_offsets(offsets)
}

/// Builds the subset-cost table for an n×n patch under `model`.
pub fn build_subset_costs(
    n: usize,
    model: &FieldModel,
    quant_noise: f64,
) -> Result<SubsetCostTable> {
    if n == 0 || n > 4 {
        return Err(Error::UnsupportedPatchSize { n });
    }
    let cells = n * n;

    let rel_costs = {
        let results = parallel::map_range(1usize << (cells - 1), |rel| {
            cond_stats(model, &mask_from_rel(n, rel), quant_noise).map(|s| s.rate_bits())
        });
        let mut costs = Vec::with_capacity(results.len());
        for r in results {
            costs.push(r?);
        }
        costs
    };

    let mut rel_class = vec![vec![0u8; cells]; cells];
    for a in 0..cells {
        let (ra, ca) = (a / n, a % n);
        for b in 0..cells {
            if a == b {
                continue;
            }
            let (rb, cb) = (b / n, b % n);
            let dr = (rb + n - ra) % n;
            let dc = (cb + n - ca) % n;
            debug_assert!(dr != 0 || dc != 0);
            rel_class[a][b] = (dr * n + dc - 1) as u8;
        }
    }

    Ok(SubsetCostTable {
        n,
        cells,
        rel_costs,
        rel_class,
    })
}

/// Rate of a decoding order: per-stage interior mask rates and their mean.
/// Scores straight through the mask/oracle path, independent of any
/// [`SubsetCostTable`]; the DP cross-check in the tests relies on that.
pub fn score_order(order: &PatchOrder, model: &FieldModel, quant_noise: f64) -> Result<OrderScore> {
    theoretical_order_rate(model, order, quant_noise)
}

/// All n²! orders scored and ranked (ascending; descending when `worst`),
/// ties broken by the hex string. n = 3 means 362 880 orders and must be
/// opted into via `allow_large`; n = 4 is rejected outright.
pub fn exhaustive_search(
    n: usize,
    model: &FieldModel,
    quant_noise: f64,
    worst: bool,
    allow_large: bool,
) -> Result<Vec<OrderScore>> {
    if n == 0 || n > 4 {
        return Err(Error::UnsupportedPatchSize { n });
    }
    if n == 4 {
        // 16! ≈ 2·10¹³ orders; the subset DP answers the same question exactly.
        return Err(Error::ExhaustiveInfeasible { n });
    }
    if n == 3 && !allow_large {
        return Err(Error::EnumerationTooLarge { n, count: 362_880 });
    }
    let cells = (n * n) as u8;
    let perms: Vec<Vec<u8>> = (0..cells).permutations(cells as usize).collect();
    let scores = parallel::map_slice(&perms, |perm| {
        let order = PatchOrder::new(n, perm.clone()).expect("permutation");
        score_order(&order, model, quant_noise)
    });
    let mut out = Vec::with_capacity(scores.len());
    for s in scores {
        out.push(s?);
    }
    out.sort_by(|a, b| {
        let by_total = a
            .total_bits_per_position()
            .total_cmp(&b.total_bits_per_position());
        let by_total = if worst { by_total.reverse() } else { by_total };
        by_total.then_with(|| a.order_string().cmp(b.order_string()))
    });
    Ok(out)
}

/// Exact optimum of the additive stage-cost objective by subset DP:
/// best(S) = opt over c ∈ S of best(S∖{c}) + cost(c, S∖{c}).
///
/// Returns one optimal order; when several orders tie bit-exactly, the
/// lexicographically smallest hex string among the optimum's dihedral orbit
/// is reported.
pub fn dp_search(table: &SubsetCostTable, worst: bool) -> OrderScore {
    let m = table.num_cells();
    let full = ((1u64 << m) - 1) as u32;
    let num_states = 1usize << m;

    let mut best = vec![0.0f64; num_states];
    let mut choice = vec![0u8; num_states];

    // Layer the states by popcount so each layer only reads the previous
    // ones and parallelizes cleanly.
    let mut layers: Vec<Vec<u32>> = vec![Vec::new(); m + 1];
    for s in 1..num_states {
        layers[(s as u32).count_ones() as usize].push(s as u32);
    }

    for layer in &layers[1..] {
        let results = parallel::map_slice(layer, |&s| {
            let mut best_val = if worst { f64::NEG_INFINITY } else { f64::INFINITY };
            let mut best_cell = 0u8;
            let mut rest = s;
            while rest != 0 {
                let c = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                let without = s & !(1u32 << c);
                let cand = best[without as usize] + table.cost(c, without);
                let better = if worst { cand > best_val } else { cand < best_val };
                if better {
                    best_val = cand;
                    best_cell = c as u8;
                }
            }
            (best_val, best_cell)
        });
        for (&s, (val, cell)) in layer.iter().zip(results) {
            best[s as usize] = val;
            choice[s as usize] = cell;
        }
    }

    // Backtrack: choice[S] is the cell decoded last among S.
    let mut stages = vec![0u8; m];
    let mut s = full;
    for stage in (0..m).rev() {
        let c = choice[s as usize] as usize;
        stages[c] = stage as u8;
        s &= !(1u32 << c);
    }
    let order = PatchOrder::new(table.n(), stages).expect("DP reconstructs a permutation");
    let order = canonical_equal_scoring(table, &order, best[full as usize]);

    OrderScore::new(&order, per_stage_costs(table, &order))
}

/// Per-stage costs of an order read off the subset table, in stage order.
fn per_stage_costs(table: &SubsetCostTable, order: &PatchOrder) -> Vec<f64> {
    let m = table.num_cells();
    let mut cell_of_stage = vec![0usize; m];
    for (cell, &stage) in order.stages().iter().enumerate() {
        cell_of_stage[stage as usize] = cell;
    }
    let mut decoded = 0u32;
    let mut per_stage = Vec::with_capacity(m);
    for &cell in &cell_of_stage {
        per_stage.push(table.cost(cell, decoded));
        decoded |= 1 << cell;
    }
    per_stage
}

/// Path-sum of an order through the table, folded in stage order — the same
/// accumulation the DP performs along that order's path.
fn path_sum(table: &SubsetCostTable, order: &PatchOrder) -> f64 {
    per_stage_costs(table, order).iter().fold(0.0, |a, b| a + b)
}

/// Among the dihedral orbit of `order`, returns the lexicographically
/// smallest member whose path-sum equals `target` bit-exactly. Symmetric
/// orders score equally in exact arithmetic but may differ in the last ulp,
/// in which case only provably-equal members are considered.
fn canonical_equal_scoring(
    table: &SubsetCostTable,
    order: &PatchOrder,
    target: f64,
) -> PatchOrder {
    let mut best = order.clone();
    for t in D4::ALL {
        let candidate = order.transform(t);
        if path_sum(table, &candidate) == target
            && candidate.format() < best.format()
        {
            best = candidate;
        }
    }
    best
}

/// Outcome of the depth-first search.
#[derive(Debug, Clone)]
pub struct BranchAndBoundOutcome {
    pub score: OrderScore,
    /// Prefix nodes entered (the root is not counted).
    pub nodes_expanded: u64,
    pub pruned: bool,
}

impl BranchAndBoundOutcome {
    /// Prefix nodes a pruning-free DFS would enter: Σ_{k=1..m} m!/(m−k)!.
    pub fn unpruned_node_count(m: usize) -> u128 {
        let mut total = 0u128;
        let mut falling = 1u128;
        for k in 1..=m {
            falling *= (m - k + 1) as u128;
            total += falling;
        }
        total
    }

    pub fn pruning_ratio(&self) -> f64 {
        self.nodes_expanded as f64
            / Self::unpruned_node_count(self.score.per_stage_bits().len()) as f64
    }
}

/// Depth-first search over order prefixes with admissible pruning.
///
/// Two sound prunes keep 16! in check:
///
/// - **Lower bound.** When t cells are decoded, the next one costs at
///   least g(t) = min over all size-t context subsets (the relative-class
///   encoding preserves subset size, so the size-t minimum bounds every
///   cell). A depth-d prefix is bounded by its cost + Σ_{t=d..m−1} g(t);
///   prune when that reaches the incumbent.
/// - **Dominance.** Prefix cost depends only on the *set* of decoded
///   cells, so a prefix reaching a subset at a cost no better than a
///   previous visit cannot improve on that visit's subtree.
///
/// Minimization only; must agree with [`dp_search`].
pub fn branch_and_bound_search(table: &SubsetCostTable, prune: bool) -> BranchAndBoundOutcome {
    let m = table.num_cells();

    // g(t): cheapest decode given exactly t available cells, any geometry.
    let mut cheapest_at_size = vec![f64::INFINITY; m];
    for (key, &cost) in table.rel_costs.iter().enumerate() {
        let t = key.count_ones() as usize;
        if cost < cheapest_at_size[t] {
            cheapest_at_size[t] = cost;
        }
    }
    // suffix[d] = Σ_{t=d..m−1} g(t): lower bound on all remaining steps.
    let mut suffix = vec![0.0; m + 1];
    for d in (0..m).rev() {
        suffix[d] = suffix[d + 1] + cheapest_at_size[d];
    }

    struct Dfs<'a> {
        table: &'a SubsetCostTable,
        suffix: &'a [f64],
        prune: bool,
        incumbent: f64,
        best_stages: Vec<u8>,
        stages: Vec<u8>,
        /// Best known cost of reaching each decoded subset.
        reached: Vec<f64>,
        nodes: u64,
        m: usize,
    }

    impl Dfs<'_> {
        fn run(&mut self, decoded: u32, depth: usize, cost_so_far: f64) {
            if depth == self.m {
                if cost_so_far < self.incumbent {
                    self.incumbent = cost_so_far;
                    self.best_stages = self.stages.clone();
                }
                return;
            }
            // Children sorted by immediate cost so the first leaf is the
            // greedy order and the incumbent tightens early.
            let mut children: Vec<(f64, usize)> = (0..self.m)
                .filter(|c| decoded & (1 << c) == 0)
                .map(|c| (self.table.cost(c, decoded), c))
                .collect();
            children.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

            for (step_cost, c) in children {
                let child_cost = cost_so_far + step_cost;
                let child_set = decoded | (1 << c);
                if self.prune {
                    if child_cost + self.suffix[depth + 1] >= self.incumbent {
                        continue;
                    }
                    if child_cost >= self.reached[child_set as usize] {
                        continue;
                    }
                    self.reached[child_set as usize] = child_cost;
                }
                self.nodes += 1;
                self.stages[c] = depth as u8;
                self.run(child_set, depth + 1, child_cost);
            }
        }
    }

    let mut dfs = Dfs {
        table,
        suffix: &suffix,
        prune,
        incumbent: f64::INFINITY,
        best_stages: vec![0; m],
        stages: vec![0; m],
        reached: if prune {
            vec![f64::INFINITY; 1usize << m]
        } else {
            Vec::new()
        },
        nodes: 0,
        m,
    };
    dfs.run(0, 0, 0.0);

    let order = PatchOrder::new(table.n(), dfs.best_stages).expect("DFS builds a permutation");
    let order = canonical_equal_scoring(table, &order, dfs.incumbent);
    BranchAndBoundOutcome {
        score: OrderScore::new(&order, per_stage_costs(table, &order)),
        nodes_expanded: dfs.nodes,
        pruned: prune,
    }
}

/// Orbit of an order under the eight symmetries of the square, deduplicated
/// and sorted by hex string.
pub fn d4_orbit(order: &PatchOrder) -> Vec<PatchOrder> {
    let mut members: Vec<PatchOrder> = D4::ALL.iter().map(|&t| order.transform(t)).collect();
    members.sort_by_key(|o| o.format());
    members.dedup();
    members
}

/// Groups the given orders into dihedral equivalence classes. Classes are
/// sorted by their smallest member, members sorted within each class.
pub fn group_into_classes(orders: &[PatchOrder]) -> Vec<Vec<PatchOrder>> {
    use std::collections::BTreeMap;
    let mut classes: BTreeMap<String, Vec<PatchOrder>> = BTreeMap::new();
    for order in orders {
        let canonical = d4_orbit(order)
            .into_iter()
            .map(|o| o.format())
            .min()
            .expect("orbit non-empty");
        let entry = classes.entry(canonical).or_default();
        if !entry.contains(order) {
            entry.push(order.clone());
        }
    }
    classes
        .into_values()
        .map(|mut members| {
            members.sort_by_key(|o| o.format());
            members
        })
        .collect()
}

/// Dihedral equivalence classes of *all* orders for patch side n (n ≤ 2;
/// larger sides are grouped on demand via [`group_into_classes`]).
pub fn symmetry_classes(n: usize) -> Result<Vec<Vec<PatchOrder>>> {
    if n == 0 || n > 2 {
        return Err(Error::EnumerationTooLarge {
            n,
            count: (1..=(n * n) as u64).product(),
        });
    }
    let cells = (n * n) as u8;
    let orders: Vec<PatchOrder> = (0..cells)
        .permutations(cells as usize)
        .map(|perm| PatchOrder::new(n, perm).expect("permutation"))
        .collect();
    Ok(group_into_classes(&orders))
}
