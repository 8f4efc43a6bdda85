//! Tuple-width accounting under a push-down plan.
//!
//! The width of a node's emitted tuples has three parts: raw feature
//! slots that no push at or below the node has consumed, one slot block
//! per surviving pushed result, and join-key slots that ancestors still
//! need. Aggregation merges same-group blocks: at a push site as part
//! of the pushed computation, and (when aggressive aggregation is on)
//! wherever blocks from sibling subtrees first meet. The root's emitted
//! width is measured before the residual computation, so blocks
//! arriving at the root stay separate unless the root itself pushes.
//! A group's blocks stop flowing once its last reading unit has
//! consumed them; groups read by the residual ride to the root.

use crate::{Error, Result};

use super::pushdown::{unit_sites, validate_plan_with_homes, PushdownPlan};
use super::tree::{JoinTree, NodeId};

/// How a group of factorized-unit outputs combines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineKind {
    /// Elementwise sum (dense partials). All member dims are equal.
    Sum,
    /// Bitwise AND (tree-scorer masks). All member dims are equal.
    And,
    /// Concatenation (distance tables); dims add, order matters.
    Concat,
    /// No combining; each output is carried on its own.
    Independent,
}

#[derive(Debug, Clone)]
pub struct UnitWidthInfo {
    pub home: NodeId,
    pub out_dim: usize,
    pub group: usize,
    /// Member position within the group (fold/concat order).
    pub group_pos: usize,
}

#[derive(Debug, Clone)]
pub struct GroupWidthInfo {
    pub kind: CombineKind,
    /// Units reading the combined output (their sites bound how far the
    /// blocks travel).
    pub readers: Vec<usize>,
    /// The residual reads it at the root.
    pub residual_reads: bool,
}

/// Raw slots of one leaf shared by some units and/or the residual.
#[derive(Debug, Clone)]
pub struct RawGroup {
    pub leaf: NodeId,
    pub slots: usize,
    pub consumers: Vec<usize>,
    pub residual: bool,
}

/// A fold performed at a node: `items` same-group blocks merged.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldEvent {
    pub group: usize,
    pub items: usize,
    /// Result dimension in slots.
    pub dim: usize,
}

/// One surviving block: a combine-group fragment covering member
/// positions [lo, hi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub group: usize,
    pub dim: usize,
    pub lo: usize,
    pub hi: usize,
}

/// Emitted-tuple state of one node under a plan.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub raw_slots: usize,
    pub key_slots: usize,
    pub blocks: Vec<Block>,
    /// Folds performed at this node (meets, push-site aggregation, and
    /// group reads by landing units).
    pub folds: Vec<FoldEvent>,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub struct WidthModel {
    pub units: Vec<UnitWidthInfo>,
    pub groups: Vec<GroupWidthInfo>,
    pub raw_groups: Vec<RawGroup>,
    pub aggressive: bool,
}

impl WidthModel {
    /// The simple one-unit-per-leaf model: unit j consumes all of leaf
    /// j's raw feature slots and emits `out_dims[j]` slots.
    pub fn per_leaf(
        leaf_raw_slots: &[usize],
        out_dims: &[usize],
        kind: CombineKind,
        aggressive: bool,
    ) -> Self {
        let m = leaf_raw_slots.len();
        let units = out_dims
            .iter()
            .enumerate()
            .map(|(i, &dim)| UnitWidthInfo {
                home: i + 1,
                out_dim: dim,
                group: if matches!(kind, CombineKind::Independent) {
                    i
                } else {
                    0
                },
                group_pos: if matches!(kind, CombineKind::Independent) {
                    0
                } else {
                    i
                },
            })
            .collect();
        let groups = if matches!(kind, CombineKind::Independent) {
            (0..m)
                .map(|_| GroupWidthInfo {
                    kind,
                    readers: Vec::new(),
                    residual_reads: true,
                })
                .collect()
        } else {
            vec![GroupWidthInfo {
                kind,
                readers: Vec::new(),
                residual_reads: true,
            }]
        };
        let raw_groups = leaf_raw_slots
            .iter()
            .enumerate()
            .map(|(i, &slots)| RawGroup {
                leaf: i + 1,
                slots,
                consumers: vec![i],
                residual: false,
            })
            .collect();
        WidthModel {
            units,
            groups,
            raw_groups,
            aggressive,
        }
    }

    pub fn homes(&self) -> Vec<NodeId> {
        self.units.iter().map(|u| u.home).collect()
    }

    /// Simulate the plan bottom-up, producing per-node emitted state.
    pub fn simulate(&self, tree: &JoinTree, plan: &PushdownPlan) -> Result<Vec<NodeState>> {
        let homes = self.homes();
        let violations = validate_plan_with_homes(tree, plan, &homes);
        if !violations.is_empty() {
            return Err(Error::InvalidPlan(format!("{violations:?}")));
        }
        let sites: Vec<NodeId> = unit_sites(tree, plan, &homes)
            .into_iter()
            .map(|s| s.expect("valid plans place every unit"))
            .collect();
        let n = tree.node_count();
        let root = tree.root();

        // Raw slots surviving at each node.
        let mut raw_at = vec![0usize; n + 1];
        for rg in &self.raw_groups {
            if rg.slots == 0 {
                continue;
            }
            let stop = if rg.residual {
                None
            } else {
                Some(highest_site(tree, &sites, &rg.consumers))
            };
            for id in tree.path_to_root(rg.leaf) {
                if stop == Some(id) {
                    break;
                }
                raw_at[id] += rg.slots;
            }
        }

        // Group retirement: the highest reader's site, unless the
        // residual keeps it alive to the root.
        let retire: Vec<Option<NodeId>> = self
            .groups
            .iter()
            .map(|g| {
                if g.residual_reads || g.readers.is_empty() {
                    None
                } else {
                    Some(highest_site(tree, &sites, &g.readers))
                }
            })
            .collect();

        let mut fresh_at: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
        for (u, &site) in sites.iter().enumerate() {
            fresh_at[site].push(u);
        }
        for list in &mut fresh_at {
            list.sort_unstable();
        }

        let mut states: Vec<NodeState> = Vec::with_capacity(n);
        for id in 1..=n {
            let mut blocks: Vec<Block> = Vec::new();
            let mut folds: Vec<FoldEvent> = Vec::new();
            if let Some((l, r)) = tree.node(id).children {
                blocks.extend(states[l - 1].blocks.iter().copied());
                blocks.extend(states[r - 1].blocks.iter().copied());
                if self.aggressive && id != root {
                    fold_blocks(&mut blocks, &mut folds, &self.groups, None);
                }
            }
            if plan.get(id) && !fresh_at[id].is_empty() {
                // Landing units read their groups first (fold-to-read),
                // then contribute fresh blocks, then the push site
                // aggregates what it touched.
                let mut read_groups: Vec<usize> = Vec::new();
                for &u in &fresh_at[id] {
                    for (g, info) in self.groups.iter().enumerate() {
                        if info.readers.contains(&u) && !read_groups.contains(&g) {
                            read_groups.push(g);
                        }
                    }
                }
                if !read_groups.is_empty() {
                    if self.aggressive {
                        fold_blocks(&mut blocks, &mut folds, &self.groups, Some(&read_groups));
                    } else {
                        // Blocks stay separate, but the reader still pays
                        // for combining them privately.
                        for &g in &read_groups {
                            let present: Vec<&Block> =
                                blocks.iter().filter(|b| b.group == g).collect();
                            if present.len() > 1 {
                                let dim = match self.groups[g].kind {
                                    CombineKind::Concat => present.iter().map(|b| b.dim).sum(),
                                    _ => present.iter().map(|b| b.dim).max().unwrap_or(0),
                                };
                                folds.push(FoldEvent {
                                    group: g,
                                    items: present.len(),
                                    dim,
                                });
                            }
                        }
                    }
                }
                let mut touched: Vec<usize> = Vec::new();
                for &u in &fresh_at[id] {
                    let info = &self.units[u];
                    blocks.push(Block {
                        group: info.group,
                        dim: info.out_dim,
                        lo: info.group_pos,
                        hi: info.group_pos,
                    });
                    if !touched.contains(&info.group) {
                        touched.push(info.group);
                    }
                }
                if self.aggressive {
                    fold_blocks(&mut blocks, &mut folds, &self.groups, Some(&touched));
                }
            }
            // Drop blocks of groups fully consumed at or below this node.
            blocks.retain(|b| match retire[b.group] {
                Some(site) => !tree.is_ancestor_or_self(id, site),
                None => true,
            });
            blocks.sort_by_key(|b| (b.group, b.lo));
            let raw_slots = raw_at[id];
            let key_slots = tree.key_slots_above(id);
            let width = raw_slots + key_slots + blocks.iter().map(|b| b.dim).sum::<usize>();
            states.push(NodeState {
                raw_slots,
                key_slots,
                blocks,
                folds,
                width,
            });
        }
        Ok(states)
    }

    /// Emitted-tuple width of one node under the plan.
    pub fn node_width(&self, tree: &JoinTree, plan: &PushdownPlan, node: NodeId) -> Result<usize> {
        Ok(self.simulate(tree, plan)?[node - 1].width)
    }

    /// Folds the residual still has to perform at the root: one per
    /// group with more than one surviving block.
    pub fn residual_folds(&self, states: &[NodeState]) -> Vec<FoldEvent> {
        let root_state = states.last().expect("non-empty tree");
        let mut per_group: Vec<(usize, usize, usize)> = Vec::new();
        for b in &root_state.blocks {
            match per_group.iter_mut().find(|(g, _, _)| *g == b.group) {
                Some(e) => {
                    e.1 += 1;
                    e.2 = match self.groups[b.group].kind {
                        CombineKind::Concat => e.2 + b.dim,
                        _ => e.2.max(b.dim),
                    };
                }
                None => per_group.push((b.group, 1, b.dim)),
            }
        }
        per_group
            .into_iter()
            .filter(|&(_, items, _)| items > 1)
            .map(|(group, items, dim)| FoldEvent { group, items, dim })
            .collect()
    }
}

/// Highest site (closest to the root) among the given units. All sites
/// lie on one root path, so the comparison is ancestor order.
fn highest_site(tree: &JoinTree, sites: &[NodeId], units: &[usize]) -> NodeId {
    let mut best = sites[units[0]];
    for &u in &units[1..] {
        if tree.is_ancestor_or_self(sites[u], best) {
            best = sites[u];
        }
    }
    best
}

/// Merge same-group blocks in place. With `only` set, just those groups
/// fold; otherwise every foldable group does (meet-point aggregation).
/// Sum/And merge freely; Concat merges only position-adjacent runs;
/// Independent never merges.
fn fold_blocks(
    blocks: &mut Vec<Block>,
    folds: &mut Vec<FoldEvent>,
    groups: &[GroupWidthInfo],
    only: Option<&[usize]>,
) {
    blocks.sort_by_key(|b| (b.group, b.lo));
    let mut out: Vec<Block> = Vec::with_capacity(blocks.len());
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &b in blocks.iter() {
        let foldable = !matches!(groups[b.group].kind, CombineKind::Independent)
            && only.map(|t| t.contains(&b.group)).unwrap_or(true);
        if !foldable {
            out.push(b);
            continue;
        }
        let merged = match out.last_mut() {
            Some(prev) if prev.group == b.group => match groups[b.group].kind {
                CombineKind::Concat => {
                    if prev.hi + 1 == b.lo {
                        prev.dim += b.dim;
                        prev.hi = b.hi;
                        true
                    } else {
                        false
                    }
                }
                _ => {
                    prev.dim = prev.dim.max(b.dim);
                    prev.hi = prev.hi.max(b.hi);
                    true
                }
            },
            _ => false,
        };
        if merged {
            match counts.iter_mut().find(|(g, _)| *g == b.group) {
                Some(c) => c.1 += 1,
                None => counts.push((b.group, 2)),
            }
        } else {
            out.push(b);
        }
    }
    for (g, items) in counts {
        let dim = out
            .iter()
            .filter(|b| b.group == g)
            .map(|b| b.dim)
            .max()
            .unwrap_or(0);
        folds.push(FoldEvent {
            group: g,
            items,
            dim,
        });
    }
    *blocks = out;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::pushdown::{enumerate_feasible_plans, repair_bits};

    fn left_deep(m: usize) -> JoinTree {
        crate::plan::pushdown::tests::left_deep(m)
    }

    /// The worked two-leaf costing scenario: raw widths 50/50, unit out
    /// dims 5/5 carried independently, one key slot per leaf.
    #[test]
    fn two_leaf_leaf_push_widths() {
        let tree = left_deep(2);
        let model = WidthModel::per_leaf(&[50, 50], &[5, 5], CombineKind::Independent, true);
        let plan = PushdownPlan {
            bits: vec![true, true, false],
        };
        let states = model.simulate(&tree, &plan).unwrap();
        assert_eq!(states[0].width, 5 + 1);
        assert_eq!(states[1].width, 5 + 1);
        assert_eq!(states[2].width, 10);
    }

    #[test]
    fn no_pushdown_width_is_raw_plus_keys() {
        let tree = left_deep(3);
        let model = WidthModel::per_leaf(&[40, 30, 20], &[8, 8, 8], CombineKind::Sum, true);
        let plan = repair_bits(&tree, vec![false; 5], &model.homes());
        let states = model.simulate(&tree, &plan).unwrap();
        assert_eq!(states[0].width, 40 + 1);
        assert_eq!(states[3].width, 40 + 30 + 1); // upstream key still live
        // Root pushes everything: one summed block, keys retired.
        assert_eq!(states[4].width, 8);
    }

    /// Three same-group 30-dim partials pushed to one node aggregate to
    /// a single 30-slot payload there, not 90.
    #[test]
    fn grouped_push_aggregates_payload() {
        let tree = left_deep(4);
        let model =
            WidthModel::per_leaf(&[100, 100, 100, 60], &[30, 30, 30, 30], CombineKind::Sum, true);
        // Node 6 covers leaves 1..3; push there and at leaf 4.
        let plan = repair_bits(
            &tree,
            vec![false, false, false, true, false, true, false],
            &model.homes(),
        );
        let states = model.simulate(&tree, &plan).unwrap();
        let payload = states[5].width - states[5].key_slots;
        assert_eq!(payload, 30);
        assert_eq!(
            states[5].folds,
            vec![FoldEvent {
                group: 0,
                items: 3,
                dim: 30
            }]
        );
    }

    #[test]
    fn meet_fold_only_when_aggressive() {
        // Units at leaves 1 and 2 pushed at their scans; their blocks
        // meet at node 4 (not a push site).
        let tree = left_deep(3);
        for (aggressive, expected_mid) in [(true, 8), (false, 16)] {
            let model =
                WidthModel::per_leaf(&[32, 32, 16], &[8, 8, 8], CombineKind::Sum, aggressive);
            let plan = repair_bits(
                &tree,
                vec![true, true, false, false, false],
                &model.homes(),
            );
            let states = model.simulate(&tree, &plan).unwrap();
            let mid_payload = states[3].width - states[3].key_slots - states[3].raw_slots;
            assert_eq!(mid_payload, expected_mid, "aggressive={aggressive}");
        }
    }

    #[test]
    fn root_keeps_arrived_blocks_separate() {
        let tree = left_deep(2);
        let model = WidthModel::per_leaf(&[32, 32], &[8, 8], CombineKind::Sum, true);
        let plan = PushdownPlan {
            bits: vec![true, true, false],
        };
        let states = model.simulate(&tree, &plan).unwrap();
        assert_eq!(states[2].blocks.len(), 2);
        assert_eq!(states[2].width, 16);
        let folds = model.residual_folds(&states);
        assert_eq!(
            folds,
            vec![FoldEvent {
                group: 0,
                items: 2,
                dim: 8
            }]
        );
    }

    #[test]
    fn concat_blocks_fold_adjacent_runs() {
        let tree = left_deep(3);
        let model = WidthModel::per_leaf(&[16, 16, 16], &[4, 6, 8], CombineKind::Concat, true);
        let plan = repair_bits(&tree, vec![true, true, true, false, false], &model.homes());
        let states = model.simulate(&tree, &plan).unwrap();
        // Meet at node 4 folds positions 0..1 into one 10-slot block.
        assert_eq!(states[3].blocks.len(), 1);
        assert_eq!(states[3].blocks[0].dim, 10);
        // At the root, positions 0-1 and 2 arrive separately.
        assert_eq!(states[4].blocks.len(), 2);
    }

    #[test]
    fn residual_raw_rides_to_root() {
        let tree = left_deep(2);
        let mut model = WidthModel::per_leaf(&[10, 10], &[2, 2], CombineKind::Sum, true);
        model.raw_groups.push(RawGroup {
            leaf: 1,
            slots: 3,
            consumers: vec![],
            residual: true,
        });
        let plan = PushdownPlan {
            bits: vec![true, true, false],
        };
        let states = model.simulate(&tree, &plan).unwrap();
        assert_eq!(states[0].raw_slots, 3);
        assert_eq!(states[2].raw_slots, 3);
    }

    /// A group read only by a unit pushed at an interior node stops
    /// occupying width above that reader's site.
    #[test]
    fn read_groups_retire_at_reader_site() {
        let tree = left_deep(3);
        // Unit 0 at leaf 1 (dim 8) grouped alone; unit 1 homed at node 4
        // reads that group and emits dim 2.
        let model = WidthModel {
            units: vec![
                UnitWidthInfo {
                    home: 1,
                    out_dim: 8,
                    group: 0,
                    group_pos: 0,
                },
                UnitWidthInfo {
                    home: 4,
                    out_dim: 2,
                    group: 1,
                    group_pos: 0,
                },
            ],
            groups: vec![
                GroupWidthInfo {
                    kind: CombineKind::Independent,
                    readers: vec![1],
                    residual_reads: false,
                },
                GroupWidthInfo {
                    kind: CombineKind::Independent,
                    readers: vec![],
                    residual_reads: true,
                },
            ],
            raw_groups: vec![RawGroup {
                leaf: 1,
                slots: 20,
                consumers: vec![0],
                residual: false,
            }],
            aggressive: true,
        };
        let plan = repair_bits(&tree, vec![true, false, false, true, false], &model.homes());
        let states = model.simulate(&tree, &plan).unwrap();
        // Leaf 1 emits unit 0's block.
        assert_eq!(states[0].width - states[0].key_slots, 8);
        // Node 4: unit 1 consumed group 0, emits its own block only.
        assert_eq!(states[3].width - states[3].key_slots, 2);
        assert_eq!(states[4].width, 2);
    }

    /// Flipping a bit on (with repair) never widens that node or any
    /// ancestor without its own push, when units do not widen tuples.
    /// With aggressive aggregation the flip may strip an ancestor push
    /// site of its fold (repair clears it), which surrenders that
    /// aggregation; those cases are excluded.
    #[test]
    fn pushdown_is_width_monotone() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut checked = 0;
        while checked < 200 {
            let m = rng.random_range(2..6usize);
            let tree = left_deep(m);
            let raw: Vec<usize> = (0..m).map(|_| rng.random_range(8..64)).collect();
            let dims: Vec<usize> = raw.iter().map(|&r| rng.random_range(1..=r)).collect();
            let kind = if rng.random_bool(0.5) {
                CombineKind::Sum
            } else {
                CombineKind::Independent
            };
            let aggressive = rng.random_bool(0.5);
            let model = WidthModel::per_leaf(&raw, &dims, kind, aggressive);
            let plans = enumerate_feasible_plans(&tree).unwrap();
            let plan = plans[rng.random_range(0..plans.len())].clone();
            let candidates: Vec<NodeId> =
                (1..=tree.node_count()).filter(|&i| !plan.get(i)).collect();
            if candidates.is_empty() {
                continue;
            }
            let flip = candidates[rng.random_range(0..candidates.len())];
            let mut bits = plan.bits.clone();
            bits[flip - 1] = true;
            let flipped = repair_bits(&tree, bits, &model.homes());
            if !flipped.get(flip) {
                continue; // repair rejected the flip (nothing available)
            }
            let cleared_a_site = plan
                .bits
                .iter()
                .zip(&flipped.bits)
                .any(|(&was, &now)| was && !now);
            if aggressive && cleared_a_site {
                continue;
            }
            checked += 1;
            let before = model.simulate(&tree, &plan).unwrap();
            let after = model.simulate(&tree, &flipped).unwrap();
            for id in tree.path_to_root(flip) {
                if id != flip && flipped.get(id) {
                    break;
                }
                assert!(
                    after[id - 1].width <= before[id - 1].width,
                    "width grew at node {id}: {} -> {}",
                    before[id - 1].width,
                    after[id - 1].width
                );
            }
        }
    }
}
