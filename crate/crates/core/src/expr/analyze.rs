//! Factorization analysis: partition an expression into per-source
//! units that each depend on a single join-tree node, plus a residual
//! evaluated at the root.
//!
//! The analysis walks the DAG in topological order, growing units
//! upward from input references. A consumer is absorbed when it has a
//! single input or is one of the factorizable operators; factorizable
//! operators fed by multiple sources split per source (a matrix product
//! over a concatenation becomes one partial product per source range,
//! combined by summation; a forest becomes per-range mask partials
//! combined by AND; a quantizer becomes per-part tables combined by
//! concatenation). The first multi-input non-factorizable operator
//! seeds the residual, and everything downstream stays there.

use std::collections::HashMap;

use crate::plan::{CombineKind, JoinTree, NodeId};
use crate::{Error, Result};

use super::cost::{expr_cost, CostTable};
use super::graph::{BoolKind, ExprGraph, ExprNode, ExprOp, ModelStore, Schema};
use super::graph::infer_dims;
use super::lineage::lineage;

/// One factorized unit: a sub-expression whose inputs are complete at
/// `home` (raw columns of that subtree and/or lower group outputs).
#[derive(Debug, Clone)]
pub struct FactorizedUnit {
    pub id: usize,
    pub home: NodeId,
    /// Local graph; sources are `InputRef`/`GroupRef`, the single
    /// output is the unit's block value.
    pub graph: ExprGraph,
    pub output_dim: usize,
    pub flops: f64,
    pub group: usize,
    /// Member position inside the group (fixes fold order).
    pub group_pos: usize,
}

#[derive(Debug, Clone)]
pub struct UnitGroup {
    pub combine: CombineKind,
    pub dim: usize,
    pub home: NodeId,
    pub members: Vec<usize>,
    /// Units reading this group's combined output via `GroupRef`.
    pub readers: Vec<usize>,
    pub residual_reads: bool,
}

/// Raw columns of one leaf consumed by the listed units and/or the
/// residual; drives tuple-width retirement.
#[derive(Debug, Clone)]
pub struct RawColumn {
    pub leaf: NodeId,
    pub column: String,
    pub slots: usize,
    pub consumers: Vec<usize>,
    pub residual: bool,
}

#[derive(Debug, Clone)]
pub struct FactorizationMap {
    pub units: Vec<FactorizedUnit>,
    pub groups: Vec<UnitGroup>,
    pub residual: ExprGraph,
    pub raw_columns: Vec<RawColumn>,
    pub residual_flops: f64,
    /// Output column names (out_<original node id>) and whether they
    /// carry integer-valued data that must compare exactly.
    pub output_names: Vec<String>,
    pub output_exact: Vec<bool>,
}

impl FactorizationMap {
    pub fn homes(&self) -> Vec<NodeId> {
        self.units.iter().map(|u| u.home).collect()
    }
}

#[derive(Debug, Clone)]
enum PieceSrc {
    Raw { columns: Vec<String>, home: NodeId },
    Unit(usize),
    Group(usize),
}

#[derive(Debug, Clone)]
struct Piece {
    src: PieceSrc,
    dim: usize,
}

#[derive(Debug, Clone)]
enum Val {
    Raw {
        columns: Vec<String>,
        dim: usize,
        home: NodeId,
    },
    Owned(usize),
    Pieces(Vec<Piece>),
    Group(usize),
    Residual(usize),
}

struct UnitBuilder {
    home: NodeId,
    nodes: Vec<ExprNode>,
    out_dim: usize,
    group: Option<(usize, usize)>,
}

struct GroupBuilder {
    combine: CombineKind,
    dim: usize,
    members: Vec<usize>,
    home: NodeId,
}

struct Analyzer<'a> {
    tree: &'a JoinTree,
    store: &'a ModelStore,
    schema: &'a Schema,
    dims: Vec<usize>,
    units: Vec<UnitBuilder>,
    groups: Vec<GroupBuilder>,
    residual_nodes: Vec<ExprNode>,
    residual_dims: Vec<usize>,
}

impl<'a> Analyzer<'a> {
    fn new_unit(&mut self, home: NodeId) -> usize {
        self.units.push(UnitBuilder {
            home,
            nodes: Vec::new(),
            out_dim: 0,
            group: None,
        });
        self.units.len() - 1
    }

    fn unit_push(&mut self, u: usize, op: ExprOp, from_terminal: bool, out_dim: usize) {
        let unit = &mut self.units[u];
        let id = unit.nodes.len();
        let inputs = if from_terminal {
            vec![id - 1]
        } else {
            Vec::new()
        };
        unit.nodes.push(ExprNode { id, op, inputs });
        unit.out_dim = out_dim;
    }

    /// Unit over raw columns: starts with their `InputRef`.
    fn unit_from_raw(&mut self, columns: Vec<String>, dim: usize, home: NodeId) -> usize {
        let u = self.new_unit(home);
        self.unit_push(u, ExprOp::InputRef { columns }, false, dim);
        u
    }

    /// Unit reading a group's combined output.
    fn unit_from_group(&mut self, g: usize) -> usize {
        let home = self.groups[g].home;
        let dim = self.groups[g].dim;
        let u = self.new_unit(home);
        self.unit_push(u, ExprOp::GroupRef { group: g }, false, dim);
        u
    }

    fn piece_unit(&mut self, piece: &Piece) -> usize {
        match &piece.src {
            PieceSrc::Raw { columns, home } => self.unit_from_raw(columns.clone(), piece.dim, *home),
            PieceSrc::Unit(u) => *u,
            PieceSrc::Group(g) => self.unit_from_group(*g),
        }
    }

    fn val_dim(&self, val: &Val) -> usize {
        match val {
            Val::Raw { dim, .. } => *dim,
            Val::Owned(u) => self.units[*u].out_dim,
            Val::Pieces(ps) => ps.iter().map(|p| p.dim).sum(),
            Val::Group(g) => self.groups[*g].dim,
            Val::Residual(nid) => self.residual_dims[*nid],
        }
    }

    /// Terminate units into a new combine group, in member order.
    fn make_group(&mut self, combine: CombineKind, dim: usize, members: Vec<usize>) -> usize {
        let homes: Vec<NodeId> = members.iter().map(|&u| self.units[u].home).collect();
        let home = self.tree.lca(&homes);
        let g = self.groups.len();
        for (pos, &u) in members.iter().enumerate() {
            debug_assert!(self.units[u].group.is_none(), "unit already grouped");
            self.units[u].group = Some((g, pos));
        }
        self.groups.push(GroupBuilder {
            combine,
            dim,
            members,
            home,
        });
        g
    }

    /// Make a value readable across units: a group id.
    fn materialize(&mut self, val: Val) -> Result<usize> {
        match val {
            Val::Group(g) => Ok(g),
            Val::Owned(u) => {
                let dim = self.units[u].out_dim;
                Ok(self.make_group(CombineKind::Independent, dim, vec![u]))
            }
            Val::Raw { columns, dim, home } => {
                let u = self.unit_from_raw(columns, dim, home);
                Ok(self.make_group(CombineKind::Independent, dim, vec![u]))
            }
            Val::Pieces(ps) => {
                let dim = ps.iter().map(|p| p.dim).sum();
                let members: Vec<usize> = ps
                    .iter()
                    .map(|p| self.piece_unit(p))
                    .collect();
                Ok(self.make_group(CombineKind::Concat, dim, members))
            }
            Val::Residual(_) => Err(Error::Expr(
                "residual values cannot feed factorized units".into(),
            )),
        }
    }

    /// Convert a value into a residual-graph node id.
    fn to_residual(&mut self, val: Val) -> Result<usize> {
        match val {
            Val::Residual(nid) => Ok(nid),
            Val::Raw { columns, dim, .. } => {
                Ok(self.residual_push(ExprOp::InputRef { columns }, vec![], dim))
            }
            other => {
                let dim = self.val_dim(&other);
                let g = self.materialize(other)?;
                Ok(self.residual_push(ExprOp::GroupRef { group: g }, vec![], dim))
            }
        }
    }

    fn residual_push(&mut self, op: ExprOp, inputs: Vec<usize>, dim: usize) -> usize {
        let id = self.residual_nodes.len();
        self.residual_nodes.push(ExprNode { id, op, inputs });
        self.residual_dims.push(dim);
        id
    }

    fn flatten_pieces(&mut self, vals: Vec<Val>) -> Vec<Piece> {
        let mut pieces = Vec::new();
        for val in vals {
            match val {
                Val::Raw { columns, dim, home } => pieces.push(Piece {
                    src: PieceSrc::Raw { columns, home },
                    dim,
                }),
                Val::Owned(u) => pieces.push(Piece {
                    src: PieceSrc::Unit(u),
                    dim: self.units[u].out_dim,
                }),
                Val::Group(g) => pieces.push(Piece {
                    src: PieceSrc::Group(g),
                    dim: self.groups[g].dim,
                }),
                Val::Pieces(ps) => pieces.extend(ps),
                Val::Residual(_) => unreachable!("residual handled before flattening"),
            }
        }
        // Adjacent raw pieces from the same home merge into one range.
        let mut merged: Vec<Piece> = Vec::with_capacity(pieces.len());
        for p in pieces {
            if let (
                Some(Piece {
                    src: PieceSrc::Raw { columns: prev, home: ph },
                    dim: pd,
                }),
                PieceSrc::Raw { columns, home },
            ) = (merged.last_mut(), &p.src)
            {
                if ph == home {
                    prev.extend(columns.iter().cloned());
                    *pd += p.dim;
                    continue;
                }
            }
            merged.push(p);
        }
        merged
    }
}

fn is_factorizable(op: &ExprOp) -> bool {
    matches!(
        op,
        ExprOp::MatMul { .. }
            | ExprOp::MatAdd
            | ExprOp::Concat
            | ExprOp::DecisionForest { .. }
            | ExprOp::PqSearch { .. }
            | ExprOp::MinMaxScale { .. }
            | ExprOp::OneHot { .. }
    )
}

/// Whether a one-input op distributes over a positional concatenation
/// (its parameters, if any, can be sliced by position).
fn splits_over_pieces(op: &ExprOp) -> bool {
    matches!(
        op,
        ExprOp::Relu
            | ExprOp::Bias { .. }
            | ExprOp::MinMaxScale { .. }
            | ExprOp::Compare { rhs: Some(_), .. }
            | ExprOp::Arith { rhs: Some(_), .. }
            | ExprOp::BoolOp {
                bool: BoolKind::Not
            }
    )
}

fn sliced(op: &ExprOp, offset: usize) -> ExprOp {
    match op {
        ExprOp::Bias { bias, offset: base } => ExprOp::Bias {
            bias: bias.clone(),
            offset: base + offset,
        },
        ExprOp::MinMaxScale { scaler, offset: base } => ExprOp::MinMaxScale {
            scaler: scaler.clone(),
            offset: base + offset,
        },
        other => other.clone(),
    }
}

/// Run the factorization analysis of an expression against a join tree.
pub fn analyze(
    expr: &ExprGraph,
    tree: &JoinTree,
    schema: &Schema,
    store: &ModelStore,
    cost_table: &CostTable,
) -> Result<FactorizationMap> {
    expr.validate()?;
    let homes = lineage(expr, tree)?;
    let dims = infer_dims(expr, schema, store, &HashMap::new())?;
    let consumers = expr.consumers();

    let mut az = Analyzer {
        tree,
        store,
        schema,
        dims,
        units: Vec::new(),
        groups: Vec::new(),
        residual_nodes: Vec::new(),
        residual_dims: Vec::new(),
    };

    let mut vals: Vec<Option<Val>> = vec![None; expr.nodes.len()];
    for node in &expr.nodes {
        let input_vals: Vec<Val> = node
            .inputs
            .iter()
            .map(|&i| vals[i].clone().expect("topological order"))
            .collect();
        let mut val = eval_annotation(&mut az, node, input_vals, &homes)?;
        // A value with several consumers must be shareable: growable
        // units would otherwise get extended by each consumer.
        let fanout = consumers[node.id].len();
        if fanout > 1 {
            val = match val {
                Val::Owned(u) => {
                    let dim = az.units[u].out_dim;
                    Val::Group(az.make_group(CombineKind::Independent, dim, vec![u]))
                }
                Val::Pieces(ps) => {
                    let shared = ps
                        .into_iter()
                        .map(|p| match p.src {
                            PieceSrc::Unit(u) => {
                                let g = az.make_group(
                                    CombineKind::Independent,
                                    p.dim,
                                    vec![u],
                                );
                                Piece {
                                    src: PieceSrc::Group(g),
                                    dim: p.dim,
                                }
                            }
                            other => Piece {
                                src: other,
                                dim: p.dim,
                            },
                        })
                        .collect();
                    Val::Pieces(shared)
                }
                other => other,
            };
        }
        vals[node.id] = Some(val);
    }

    // Residual outputs, one per graph output.
    let mut output_ids = Vec::new();
    let mut output_names = Vec::new();
    let mut output_exact = Vec::new();
    for &o in &expr.outputs {
        let val = vals[o].clone().unwrap();
        let nid = match val {
            Val::Pieces(ps) => {
                let dim: usize = ps.iter().map(|p| p.dim).sum();
                let converted: Vec<usize> = ps
                    .into_iter()
                    .map(|p| {
                        let v = match p.src {
                            PieceSrc::Raw { columns, home } => Val::Raw {
                                columns,
                                dim: p.dim,
                                home,
                            },
                            PieceSrc::Unit(u) => Val::Owned(u),
                            PieceSrc::Group(g) => Val::Group(g),
                        };
                        az.to_residual(v)
                    })
                    .collect::<Result<_>>()?;
                az.residual_push(ExprOp::Concat, converted, dim)
            }
            other => az.to_residual(other)?,
        };
        output_ids.push(nid);
        output_names.push(format!("out_{o}"));
        output_exact.push(matches!(
            &expr.node(o).op,
            ExprOp::DecisionForest {
                output: super::graph::ForestOutput::Leaves,
                ..
            } | ExprOp::OneHot { .. }
                | ExprOp::Compare { .. }
                | ExprOp::BoolOp { .. }
        ));
    }

    finalize(az, expr, output_ids, output_names, output_exact, cost_table)
}

fn eval_annotation(
    az: &mut Analyzer,
    node: &ExprNode,
    input_vals: Vec<Val>,
    homes: &HashMap<usize, NodeId>,
) -> Result<Val> {
    // Anything fed by the residual is residual.
    if input_vals.iter().any(|v| matches!(v, Val::Residual(_))) {
        let inputs: Vec<usize> = input_vals
            .into_iter()
            .map(|v| az.to_residual(v))
            .collect::<Result<_>>()?;
        let dim = az.dims[node.id];
        return Ok(Val::Residual(az.residual_push(node.op.clone(), inputs, dim)));
    }

    let out_dim = az.dims[node.id];
    match &node.op {
        ExprOp::InputRef { columns } => Ok(Val::Raw {
            columns: columns.clone(),
            dim: out_dim,
            home: homes[&node.id],
        }),
        ExprOp::GroupRef { .. }
        | ExprOp::MatMulRows { .. }
        | ExprOp::ForestPartial { .. }
        | ExprOp::ForestFromMasks { .. }
        | ExprOp::PqPartial { .. }
        | ExprOp::PqFromTables { .. } => Err(Error::Expr(
            "factorized forms are analysis outputs, not query inputs".into(),
        )),
        ExprOp::Concat => Ok(Val::Pieces(az.flatten_pieces(input_vals))),
        ExprOp::MatMul { weight } => {
            let val = input_vals.into_iter().next().unwrap();
            match val {
                Val::Pieces(ps) => {
                    // Split the product by weight-row ranges. Pieces are
                    // always distinct units here: raw and group pieces
                    // spawn fresh units and shared values were already
                    // normalized to groups.
                    let mut members: Vec<usize> = Vec::new();
                    let mut offset = 0usize;
                    for p in &ps {
                        let u = az.piece_unit(p);
                        az.unit_push(
                            u,
                            ExprOp::MatMulRows {
                                weight: weight.clone(),
                                start: offset,
                                len: p.dim,
                            },
                            true,
                            out_dim,
                        );
                        members.push(u);
                        offset += p.dim;
                    }
                    Ok(Val::Group(az.make_group(CombineKind::Sum, out_dim, members)))
                }
                Val::Raw { columns, dim, home } => {
                    let u = az.unit_from_raw(columns, dim, home);
                    az.unit_push(u, node.op.clone(), true, out_dim);
                    Ok(Val::Owned(u))
                }
                Val::Owned(u) => {
                    az.unit_push(u, node.op.clone(), true, out_dim);
                    Ok(Val::Owned(u))
                }
                Val::Group(g) => {
                    let u = az.unit_from_group(g);
                    az.unit_push(u, node.op.clone(), true, out_dim);
                    Ok(Val::Owned(u))
                }
                Val::Residual(_) => unreachable!(),
            }
        }
        ExprOp::MatAdd => {
            let mut members = Vec::with_capacity(input_vals.len());
            for v in input_vals {
                let u = match v {
                    Val::Owned(u) => u,
                    Val::Raw { columns, dim, home } => az.unit_from_raw(columns, dim, home),
                    Val::Group(g) => az.unit_from_group(g),
                    Val::Pieces(ps) => {
                        let g = az.materialize(Val::Pieces(ps))?;
                        az.unit_from_group(g)
                    }
                    Val::Residual(_) => unreachable!(),
                };
                members.push(u);
            }
            Ok(Val::Group(az.make_group(CombineKind::Sum, out_dim, members)))
        }
        ExprOp::DecisionForest { model, output } => {
            let val = input_vals.into_iter().next().unwrap();
            match val {
                Val::Pieces(ps) => {
                    let forest = az.store.forest(model)?;
                    let mask_dim = 2 * forest.mask_blocks();
                    let mut members = Vec::new();
                    let mut offset = 0usize;
                    for p in &ps {
                        let u = az.piece_unit(p);
                        az.unit_push(
                            u,
                            ExprOp::ForestPartial {
                                model: model.clone(),
                                start: offset,
                                len: p.dim,
                            },
                            true,
                            mask_dim,
                        );
                        members.push(u);
                        offset += p.dim;
                    }
                    let g = az.make_group(CombineKind::And, mask_dim, members);
                    let finisher = az.unit_from_group(g);
                    az.unit_push(
                        finisher,
                        ExprOp::ForestFromMasks {
                            model: model.clone(),
                            output: *output,
                        },
                        true,
                        out_dim,
                    );
                    Ok(Val::Owned(finisher))
                }
                other => absorb_single(az, node, other, out_dim),
            }
        }
        ExprOp::PqSearch { model } => {
            let val = input_vals.into_iter().next().unwrap();
            match val {
                Val::Pieces(ps) => {
                    let pq = az.store.pq_model(model)?.clone();
                    // Pieces must cover whole parts; otherwise fall back
                    // to evaluating the search over the reassembled vector.
                    let mut assignments: Vec<(usize, usize)> = Vec::new();
                    let mut aligned = true;
                    let mut part_idx = 0usize;
                    let mut offset = 0usize;
                    for p in &ps {
                        let end = offset + p.dim;
                        let first = part_idx;
                        let mut covered = 0usize;
                        while part_idx < pq.parts.len()
                            && pq.parts[part_idx].offset + pq.parts[part_idx].len <= end
                        {
                            covered += pq.parts[part_idx].len;
                            part_idx += 1;
                        }
                        if covered != p.dim {
                            aligned = false;
                            break;
                        }
                        assignments.push((first, part_idx - first));
                        offset = end;
                    }
                    if !aligned {
                        let g = az.materialize(Val::Pieces(ps))?;
                        let u = az.unit_from_group(g);
                        az.unit_push(u, node.op.clone(), true, out_dim);
                        return Ok(Val::Owned(u));
                    }
                    let mut members = Vec::new();
                    let mut table_dim = 0usize;
                    for (p, &(first, count)) in ps.iter().zip(&assignments) {
                        let u = az.piece_unit(p);
                        let dim: usize = pq.parts[first..first + count]
                            .iter()
                            .map(|pp| pp.centroids.rows)
                            .sum();
                        az.unit_push(
                            u,
                            ExprOp::PqPartial {
                                model: model.clone(),
                                first,
                                count,
                            },
                            true,
                            dim,
                        );
                        members.push(u);
                        table_dim += dim;
                    }
                    let g = az.make_group(CombineKind::Concat, table_dim, members);
                    let finisher = az.unit_from_group(g);
                    az.unit_push(
                        finisher,
                        ExprOp::PqFromTables {
                            model: model.clone(),
                        },
                        true,
                        out_dim,
                    );
                    Ok(Val::Owned(finisher))
                }
                other => absorb_single(az, node, other, out_dim),
            }
        }
        // Single-input operators.
        ExprOp::Bias { .. }
        | ExprOp::Relu
        | ExprOp::Softmax
        | ExprOp::MinMaxScale { .. }
        | ExprOp::OneHot { .. }
        | ExprOp::Compare { rhs: Some(_), .. }
        | ExprOp::Arith { rhs: Some(_), .. }
        | ExprOp::BoolOp {
            bool: BoolKind::Not,
        } => {
            let val = input_vals.into_iter().next().unwrap();
            match val {
                Val::Pieces(ps) if splits_over_pieces(&node.op) => {
                    let mut out = Vec::with_capacity(ps.len());
                    let mut offset = 0usize;
                    for p in ps {
                        let u = az.piece_unit(&p);
                        az.unit_push(u, sliced(&node.op, offset), true, p.dim);
                        offset += p.dim;
                        out.push(Piece {
                            src: PieceSrc::Unit(u),
                            dim: p.dim,
                        });
                    }
                    Ok(Val::Pieces(out))
                }
                other => absorb_single(az, node, other, out_dim),
            }
        }
        ExprOp::OpaqueUdf { .. } if node.inputs.len() == 1 => {
            let val = input_vals.into_iter().next().unwrap();
            absorb_single(az, node, val, out_dim)
        }
        // Multi-input non-factorizable operators seed the residual.
        ExprOp::Compare { .. }
        | ExprOp::Arith { .. }
        | ExprOp::BoolOp { .. }
        | ExprOp::Cond
        | ExprOp::OpaqueUdf { .. } => {
            let inputs: Vec<usize> = input_vals
                .into_iter()
                .map(|v| az.to_residual(v))
                .collect::<Result<_>>()?;
            Ok(Val::Residual(az.residual_push(
                node.op.clone(),
                inputs,
                out_dim,
            )))
        }
    }
}

/// Absorb a one-input (or whole-vector factorizable) operator into the
/// unit owning its input.
fn absorb_single(az: &mut Analyzer, node: &ExprNode, val: Val, out_dim: usize) -> Result<Val> {
    let u = match val {
        Val::Owned(u) => u,
        Val::Raw { columns, dim, home } => az.unit_from_raw(columns, dim, home),
        Val::Group(g) => az.unit_from_group(g),
        Val::Pieces(ps) => {
            let g = az.materialize(Val::Pieces(ps))?;
            az.unit_from_group(g)
        }
        Val::Residual(_) => unreachable!(),
    };
    az.unit_push(u, node.op.clone(), true, out_dim);
    Ok(Val::Owned(u))
}

fn finalize(
    az: Analyzer,
    expr: &ExprGraph,
    output_ids: Vec<usize>,
    output_names: Vec<String>,
    output_exact: Vec<bool>,
    cost_table: &CostTable,
) -> Result<FactorizationMap> {
    // Units never grouped were dead ends feeding the residual or
    // outputs through materialization; every live unit has a group by
    // construction. Assert rather than filter.
    for (i, u) in az.units.iter().enumerate() {
        if u.group.is_none() {
            return Err(Error::Expr(format!("unit {i} was never terminated")));
        }
    }

    let residual = ExprGraph {
        nodes: az.residual_nodes.clone(),
        outputs: output_ids,
    };
    residual.validate()?;

    let group_dims: HashMap<usize, usize> =
        az.groups.iter().enumerate().map(|(g, gb)| (g, gb.dim)).collect();

    // Per-unit graphs, dims and flops.
    let mut units = Vec::with_capacity(az.units.len());
    for (id, ub) in az.units.iter().enumerate() {
        let graph = ExprGraph {
            nodes: ub.nodes.clone(),
            outputs: vec![ub.nodes.len() - 1],
        };
        graph.validate()?;
        let flops = expr_cost(&graph, az.schema, az.store, &group_dims, cost_table)?;
        let (group, group_pos) = ub.group.unwrap();
        units.push(FactorizedUnit {
            id,
            home: ub.home,
            graph,
            output_dim: ub.out_dim,
            flops,
            group,
            group_pos,
        });
    }

    // Group readers.
    let mut groups: Vec<UnitGroup> = az
        .groups
        .iter()
        .map(|gb| UnitGroup {
            combine: gb.combine,
            dim: gb.dim,
            home: gb.home,
            members: gb.members.clone(),
            readers: Vec::new(),
            residual_reads: false,
        })
        .collect();
    for unit in &units {
        for n in &unit.graph.nodes {
            if let ExprOp::GroupRef { group } = &n.op {
                groups[*group].readers.push(unit.id);
            }
        }
    }
    for n in &residual.nodes {
        if let ExprOp::GroupRef { group } = &n.op {
            groups[*group].residual_reads = true;
        }
    }
    for g in &mut groups {
        g.readers.sort_unstable();
        g.readers.dedup();
    }

    let residual_flops = expr_cost(&residual, az.schema, az.store, &group_dims, cost_table)?;

    // Column-level consumption for width retirement.
    let mut raw: HashMap<(NodeId, String), (usize, Vec<usize>, bool)> = HashMap::new();
    let mut record = |az: &Analyzer,
                      raw: &mut HashMap<(NodeId, String), (usize, Vec<usize>, bool)>,
                      columns: &[String],
                      consumer: Option<usize>|
     -> Result<()> {
        for qualified in columns {
            let col = crate::plan::ColumnRef::parse(qualified)?;
            let leaf = az
                .tree
                .leaf_of(&col.table)
                .ok_or_else(|| Error::UnknownColumn(qualified.clone()))?;
            let slots = az.schema.slots(qualified)?;
            let entry = raw
                .entry((leaf, qualified.clone()))
                .or_insert((slots, Vec::new(), false));
            match consumer {
                Some(u) => entry.1.push(u),
                None => entry.2 = true,
            }
        }
        Ok(())
    };
    for unit in &units {
        for n in &unit.graph.nodes {
            if let ExprOp::InputRef { columns } = &n.op {
                record(&az, &mut raw, columns, Some(unit.id))?;
            }
        }
    }
    for n in &residual.nodes {
        if let ExprOp::InputRef { columns } = &n.op {
            record(&az, &mut raw, columns, None)?;
        }
    }
    let mut raw_columns: Vec<RawColumn> = raw
        .into_iter()
        .map(|((leaf, column), (slots, mut consumers, residual))| {
            consumers.sort_unstable();
            consumers.dedup();
            RawColumn {
                leaf,
                column,
                slots,
                consumers,
                residual,
            }
        })
        .collect();
    raw_columns.sort_by(|a, b| (a.leaf, &a.column).cmp(&(b.leaf, &b.column)));

    let _ = expr;
    Ok(FactorizationMap {
        units,
        groups,
        residual,
        raw_columns,
        residual_flops,
        output_names,
        output_exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::graph::{parse_expr, ForestOutput};
    use crate::infer::DenseMatrix;
    use crate::relational::DataType;

    fn schema_for(tables: &[(&str, &[&str])]) -> Schema {
        let mut schema = Schema::default();
        for (t, cols) in tables {
            for c in *cols {
                schema
                    .columns
                    .insert(format!("{t}.{c}"), DataType::Float32);
            }
        }
        schema
    }

    fn ffnn_store(n: usize, k: usize) -> ModelStore {
        let mut store = ModelStore::default();
        store
            .weights
            .insert("w".into(), DenseMatrix::zeros(n, k));
        store.biases.insert("b".into(), vec![0.0; k]);
        store
            .weights
            .insert("w2".into(), DenseMatrix::zeros(k, 2));
        store.biases.insert("b2".into(), vec![0.0; 2]);
        store
    }

    /// m input refs into a concat into a matmul: m units, one sum
    /// group, residual reduces to the group output.
    #[test]
    fn pure_matmul_gives_per_leaf_units() {
        let tree = crate::plan::pushdown::tests::left_deep(3);
        let schema = schema_for(&[("t1", &["a"]), ("t2", &["b"]), ("t3", &["c"])]);
        let store = ffnn_store(3, 4);
        let text = r#"{"nodes":[
            {"id":0,"op":"input_ref","columns":["t1.a"]},
            {"id":1,"op":"input_ref","columns":["t2.b"]},
            {"id":2,"op":"input_ref","columns":["t3.c"]},
            {"id":3,"op":"concat","inputs":[0,1,2]},
            {"id":4,"op":"matmul","weight":"w","inputs":[3]}
        ],"outputs":[4]}"#;
        let expr = parse_expr(text).unwrap();
        let map = analyze(&expr, &tree, &schema, &store, &CostTable::default()).unwrap();
        assert_eq!(map.units.len(), 3);
        let homes: Vec<_> = map.units.iter().map(|u| u.home).collect();
        assert_eq!(homes, vec![1, 2, 3]);
        assert_eq!(map.groups.len(), 1);
        assert_eq!(map.groups[0].combine, CombineKind::Sum);
        assert!(map.groups[0].residual_reads);
        // Residual is just the group reference.
        assert_eq!(map.residual.nodes.len(), 1);
    }

    /// A udf over two sources is not factorizable at all.
    #[test]
    fn opaque_udf_over_two_sources_is_all_residual() {
        let tree = crate::plan::pushdown::tests::left_deep(2);
        let schema = schema_for(&[("t1", &["a"]), ("t2", &["b"])]);
        let store = ModelStore::default();
        let text = r#"{"nodes":[
            {"id":0,"op":"input_ref","columns":["t1.a"]},
            {"id":1,"op":"input_ref","columns":["t2.b"]},
            {"id":2,"op":"opaque_udf","name":"mix","inputs":[0,1]}
        ],"outputs":[2]}"#;
        let expr = parse_expr(text).unwrap();
        let map = analyze(&expr, &tree, &schema, &store, &CostTable::default()).unwrap();
        assert!(map.units.is_empty());
        assert_eq!(map.residual.nodes.len(), 3);
        assert_eq!(map.raw_columns.len(), 2);
        assert!(map.raw_columns.iter().all(|c| c.residual && c.consumers.is_empty()));
    }

    /// The layered workflow shape: two sources feed per-source chains,
    /// their product-sum feeds a second split product together with a
    /// third source (homed at the first join), like the worked
    /// two-level example.
    #[test]
    fn layered_split_homes_at_join() {
        let tree = crate::plan::pushdown::tests::left_deep(3);
        let schema = schema_for(&[("t1", &["a"]), ("t2", &["b"]), ("t3", &["c"])]);
        let mut store = ModelStore::default();
        store.weights.insert("w3".into(), DenseMatrix::zeros(2, 4));
        store.weights.insert("w4".into(), DenseMatrix::zeros(5, 2));
        let text = r#"{"nodes":[
            {"id":0,"op":"input_ref","columns":["t1.a"]},
            {"id":1,"op":"input_ref","columns":["t2.b"]},
            {"id":2,"op":"concat","inputs":[0,1]},
            {"id":3,"op":"matmul","weight":"w3","inputs":[2]},
            {"id":4,"op":"input_ref","columns":["t3.c"]},
            {"id":5,"op":"concat","inputs":[3,4]},
            {"id":6,"op":"matmul","weight":"w4","inputs":[5]}
        ],"outputs":[6]}"#;
        let expr = parse_expr(text).unwrap();
        let map = analyze(&expr, &tree, &schema, &store, &CostTable::default()).unwrap();
        // Units: matmul3 split over t1/t2 (homes 1, 2), matmul4 split
        // over the combined product (home = join node 4) and t3 (home 3).
        let mut homes: Vec<_> = map.units.iter().map(|u| u.home).collect();
        homes.sort_unstable();
        assert_eq!(homes, vec![1, 2, 3, 4]);
        let join_unit = map.units.iter().find(|u| u.home == 4).unwrap();
        assert!(join_unit
            .graph
            .nodes
            .iter()
            .any(|n| matches!(n.op, ExprOp::GroupRef { .. })));
        assert!(join_unit
            .graph
            .nodes
            .iter()
            .any(|n| matches!(n.op, ExprOp::MatMulRows { .. })));
    }

    /// Forest over a two-way concat splits into mask partials.
    #[test]
    fn forest_splits_into_mask_partials() {
        use crate::infer::{compile_tree, QsForest};
        let tree = crate::plan::pushdown::tests::left_deep(2);
        let schema = schema_for(&[("t1", &["a", "b"]), ("t2", &["c"])]);
        let mut store = ModelStore::default();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        let naive = crate::infer::random_naive_tree(&mut rng, 3, 4);
        store.forests.insert(
            "f".into(),
            QsForest {
                trees: vec![compile_tree(&naive)],
                input_dim: 3,
            },
        );
        let text = r#"{"nodes":[
            {"id":0,"op":"input_ref","columns":["t1.a","t1.b"]},
            {"id":1,"op":"input_ref","columns":["t2.c"]},
            {"id":2,"op":"concat","inputs":[0,1]},
            {"id":3,"op":"decision_forest","model":"f","output":"score","inputs":[2]}
        ],"outputs":[3]}"#;
        let expr = parse_expr(text).unwrap();
        let map = analyze(&expr, &tree, &schema, &store, &CostTable::default()).unwrap();
        // Two mask partial units plus the finisher reading their AND.
        assert_eq!(map.units.len(), 3);
        let and_group = map
            .groups
            .iter()
            .find(|g| g.combine == CombineKind::And)
            .unwrap();
        assert_eq!(and_group.members.len(), 2);
        assert_eq!(and_group.readers.len(), 1);
        let finisher = &map.units[and_group.readers[0]];
        assert!(matches!(
            finisher.graph.nodes.last().unwrap().op,
            ExprOp::ForestFromMasks {
                output: ForestOutput::Score,
                ..
            }
        ));
    }
}
