//! Oblivious natural joins.
//!
//! The binary join computes each tuple's degree with a semi-join
//! aggregation, expands both sides by their degrees and stitches the two
//! expansions after sorting them into matching orders.
//!
//! The multiway join does the same over a join tree. Each tuple's full
//! degree (the number of output tuples it belongs to) is the product of
//! its count below (`N`, bottom-up) and its count above (`N_up`,
//! top-down). The root is expanded by its full degree, then every child is
//! expanded and stitched onto the partial result edge by edge. Within a
//! join value `v`, an edge `i -> j` has `B_v = Σ N(child)` subtree
//! completions; each partial row gets a residue in `0..B_v` and each copy
//! of a child tuple gets one residue out of the block of `N` residues
//! reserved for it, so sorting both sides by (join attrs, residue) lines
//! every child copy up with a partial row it joins with.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expansion::expand;
use crate::memsim::{Machine, RelHandle};
use crate::primitives::{
    augment, augment_const, fold_sum, grouping_identity, grouping_running_sum, int_at, obl_project, obl_sort,
    stitch, Predicate, RunKind,
};
use crate::relmodel::{Attr, Schema, SortKey, Value};
use crate::semijoin::{semijoin_agg_on, Contribution};

/// A rooted tree over the relations of an acyclic join.
///
/// Nodes are listed in pre-order, so a parent always precedes its children.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinTree {
    pub nodes: Vec<JoinNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinNode {
    pub name: String,
    pub attrs: Vec<String>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Attributes shared with the parent.
    pub join_attrs: Vec<String>,
}

impl JoinTree {
    /// Builds a tree from schemas in pre-order and each node's parent index.
    pub fn new(schemas: &[&Schema], parents: &[Option<usize>]) -> Result<JoinTree> {
        if schemas.is_empty() || schemas.len() != parents.len() {
            return Err(Error::InvalidQuery("a join tree needs one parent entry per relation".into()));
        }
        let mut nodes: Vec<JoinNode> = schemas
            .iter()
            .map(|s| JoinNode {
                name: s.name.clone(),
                attrs: s.names(),
                parent: None,
                children: Vec::new(),
                join_attrs: Vec::new(),
            })
            .collect();
        // `path` is the chain from the root to the previous node
        let mut path: Vec<usize> = Vec::new();
        for (i, p) in parents.iter().enumerate() {
            match (i, p) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::InvalidQuery("the first node must be the root".into())),
                (_, None) => return Err(Error::InvalidQuery(format!("node {i} has no parent"))),
                (_, Some(p)) => {
                    while path.last().is_some_and(|&top| top != *p) {
                        path.pop();
                    }
                    if path.is_empty() {
                        return Err(Error::InvalidQuery(format!("nodes are not in pre-order at {i}")));
                    }
                    nodes[i].parent = Some(*p);
                    nodes[*p].children.push(i);
                    nodes[i].join_attrs = schemas[i].shared_with(schemas[*p]);
                }
            }
            path.push(i);
        }
        let tree = JoinTree { nodes };
        if let Some((i, j, k)) = tree.running_intersection_violation() {
            return Err(Error::CyclicJoin(format!(
                "`{}` lies between `{}` and `{}` but lacks some of their shared attributes",
                tree.nodes[k].name, tree.nodes[i].name, tree.nodes[j].name
            )));
        }
        Ok(tree)
    }

    /// Two-node tree with `r` as the root.
    pub fn pair(r: &Schema, s: &Schema) -> Result<JoinTree> {
        JoinTree::new(&[r, s], &[None, Some(0)])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn path(&self, i: usize, j: usize) -> Vec<usize> {
        let up = |mut x: usize| {
            let mut v = vec![x];
            while let Some(p) = self.nodes[x].parent {
                v.push(p);
                x = p;
            }
            v
        };
        let (a, b) = (up(i), up(j));
        let lca = *a.iter().find(|x| b.contains(x)).unwrap();
        let mut out: Vec<usize> = a.iter().copied().take_while(|&x| x != lca).collect();
        out.push(lca);
        out.extend(b.iter().copied().take_while(|&x| x != lca));
        out
    }

    /// Exhaustive check over all node pairs; returns `(i, j, k)` with `k` on
    /// the path from `i` to `j` missing part of `attrs(i) ∩ attrs(j)`.
    pub fn running_intersection_violation(&self) -> Option<(usize, usize, usize)> {
        let q = self.nodes.len();
        for i in 0..q {
            for j in i + 1..q {
                let shared: Vec<&String> = self.nodes[i]
                    .attrs
                    .iter()
                    .filter(|a| self.nodes[j].attrs.contains(a))
                    .collect();
                for k in self.path(i, j) {
                    if shared.iter().any(|a| !self.nodes[k].attrs.contains(a)) {
                        return Some((i, j, k));
                    }
                }
            }
        }
        None
    }

    fn check_inputs(&self, rels: &[RelHandle]) -> Result<()> {
        if rels.len() != self.nodes.len() {
            return Err(Error::InvalidQuery(format!(
                "join tree has {} nodes, {} relations given",
                self.nodes.len(),
                rels.len()
            )));
        }
        for (n, r) in self.nodes.iter().zip(rels) {
            if r.schema.names() != n.attrs {
                return Err(Error::InvalidQuery(format!("relation for `{}` has a different schema", n.name)));
            }
        }
        Ok(())
    }
}

/// Intermediate relations of [`binary_join_stages`], kept for inspection.
#[derive(Debug, Clone)]
pub struct BinaryJoinStages {
    /// `R` with `#N`, `#Id` and the degree `#N_S`.
    pub r_tilde: RelHandle,
    /// `S` with `#N`, `#Id`, the degree `#N_R` and the subscript `#JId`.
    pub s_tilde: RelHandle,
    /// Expanded `R` sorted by (join attrs, `#JId`).
    pub r_exp: RelHandle,
    /// Expanded `S` sorted by (join attrs, `#JId`).
    pub s_exp: RelHandle,
}

pub const N: &str = "#N";
pub const ID: &str = "#Id";
pub const N_S: &str = "#N_S";
pub const N_R: &str = "#N_R";
pub const JID: &str = "#JId";

/// `R ⋈ S` over their shared attributes, in a trace fixed by
/// `(|R|, |S|, |R ⋈ S|)`.
pub fn binary_join(m: &mut Machine, r: &RelHandle, s: &RelHandle) -> Result<RelHandle> {
    let (out, st) = binary_join_stages(m, r, s)?;
    for h in [&st.r_tilde, &st.s_tilde, &st.r_exp, &st.s_exp] {
        m.free(h);
    }
    Ok(out)
}

pub fn binary_join_stages(m: &mut Machine, r: &RelHandle, s: &RelHandle) -> Result<(RelHandle, BinaryJoinStages)> {
    let join = r.schema.shared_with(&s.schema);
    if join.is_empty() {
        return Err(Error::InvalidQuery(format!(
            "`{}` and `{}` share no attributes",
            r.schema.name, s.schema.name
        )));
    }
    let tag = |m: &mut Machine, x: &RelHandle| -> Result<RelHandle> {
        let a = augment_const(m, x, N, 1)?;
        let b = grouping_identity::<&str>(m, &a, &[], &SortKey::default(), ID)?;
        m.free(&a);
        Ok(b)
    };
    let r1 = tag(m, r)?;
    let s1 = tag(m, s)?;
    let r_tilde = semijoin_agg_on(m, &r1, &s1, &join, N_S, Contribution::Attr(N), RunKind::Sum)?;
    let s2 = semijoin_agg_on(m, &s1, &r1, &join, N_R, Contribution::Attr(N), RunKind::Sum)?;
    m.free(&r1);
    m.free(&s1);
    let s_tilde = grouping_identity(m, &s2, &join, &SortKey::default(), JID)?;
    m.free(&s2);

    let re = expand(m, &r_tilde, N_S)?;
    let re2 = grouping_identity(m, &re, &[ID], &SortKey::default(), JID)?;
    m.free(&re);
    let se = expand(m, &s_tilde, N_R)?;

    let mut key = SortKey::default();
    for j in &join {
        key = key.then(j, crate::relmodel::Direction::Asc);
    }
    let key = key.then(JID, crate::relmodel::Direction::Asc);
    let r_exp = obl_sort(m, &re2, &key)?;
    m.free(&re2);
    let s_exp = obl_sort(m, &se, &key)?;
    m.free(&se);

    let with_jid = |names: Vec<String>| {
        let mut v = names;
        v.push(JID.to_string());
        v
    };
    let rp = obl_project(m, &r_exp, &with_jid(r.schema.names()))?;
    let sp = obl_project(m, &s_exp, &with_jid(s.schema.names()))?;
    let joined = stitch(m, &rp, &sp)?;
    m.free(&rp);
    m.free(&sp);
    let mut names = r.schema.names();
    names.extend(s.schema.names().into_iter().filter(|a| !r.schema.has(a)));
    let out = obl_project(m, &joined, &names)?;
    m.free(&joined);
    Ok((
        out,
        BinaryJoinStages {
            r_tilde,
            s_tilde,
            r_exp,
            s_exp,
        },
    ))
}

/// Selection mask of node `i` (1 when its predicate holds, else 0).
pub fn mask_attr(i: usize) -> String {
    format!("#P{i}")
}

/// Count of join tuples below node `i` through its child `k`.
pub fn child_count_attr(i: usize, k: usize) -> String {
    format!("#Nc{i}.{k}")
}

/// Count of join tuples in the subtree of node `i` a tuple belongs to.
pub fn down_attr(i: usize) -> String {
    format!("#N{i}")
}

/// Number of completions of a tuple of node `i` outside its subtree.
pub fn up_attr(i: usize) -> String {
    format!("#Nup{i}")
}

/// Number of output tuples a tuple of node `i` belongs to.
pub fn full_attr(i: usize) -> String {
    format!("#Nfull{i}")
}

pub(crate) fn is_internal(name: &str) -> bool {
    name.starts_with('#')
}

pub(crate) fn user_attrs(schema: &Schema) -> Vec<String> {
    schema.names().into_iter().filter(|a| !is_internal(a)).collect()
}

/// Appends the 0/1 mask column for `pred`.
pub(crate) fn attach_mask(m: &mut Machine, r: &RelHandle, pred: &Predicate, name: &str) -> Result<RelHandle> {
    let bound = pred.bind(&r.schema)?;
    let _consts = m.tm.alloc(bound.words())?;
    augment(m, r, Attr::int(name), |t| Ok(Value::Int(bound.eval(t) as i64)))
}

/// Appends the checked product of integer columns `cols`.
pub(crate) fn attach_product<S: AsRef<str>>(
    m: &mut Machine,
    r: &RelHandle,
    cols: &[S],
    name: &str,
) -> Result<RelHandle> {
    let idx: Vec<usize> = cols.iter().map(|c| r.schema.index_of(c.as_ref())).collect::<Result<_>>()?;
    augment(m, r, Attr::int(name), |t| {
        idx.iter()
            .try_fold(1i64, |acc, &c| acc.checked_mul(int_at(t, c)))
            .map(Value::Int)
            .ok_or(Error::Overflow("degree product"))
    })
}

fn replace(m: &mut Machine, slot: &mut RelHandle, next: RelHandle) {
    m.free(slot);
    *slot = next;
}

fn predicates_for(tree: &JoinTree, preds: &[Predicate]) -> Result<Vec<Predicate>> {
    match preds.len() {
        0 => Ok(vec![Predicate::always(); tree.len()]),
        n if n == tree.len() => Ok(preds.to_vec()),
        n => Err(Error::InvalidQuery(format!("{n} predicates for {} relations", tree.len()))),
    }
}

/// Bottom-up counting: every node gets its mask, one child count per child
/// and `down = mask · Π child counts`.
pub(crate) fn count_bottom_up(
    m: &mut Machine,
    tree: &JoinTree,
    rels: &[RelHandle],
    preds: &[Predicate],
) -> Result<Vec<RelHandle>> {
    tree.check_inputs(rels)?;
    let preds = predicates_for(tree, preds)?;
    let mut out: Vec<Option<RelHandle>> = vec![None; tree.len()];
    for i in (0..tree.len()).rev() {
        let mut cur = attach_mask(m, &rels[i], &preds[i], &mask_attr(i))?;
        let mut factors = vec![mask_attr(i)];
        for &k in &tree.nodes[i].children {
            let child = out[k].as_ref().unwrap();
            let next = semijoin_agg_on(
                m,
                &cur,
                child,
                &tree.nodes[k].join_attrs,
                &child_count_attr(i, k),
                Contribution::Attr(&down_attr(k)),
                RunKind::Sum,
            )?;
            replace(m, &mut cur, next);
            factors.push(child_count_attr(i, k));
        }
        let next = attach_product(m, &cur, &factors, &down_attr(i))?;
        replace(m, &mut cur, next);
        out[i] = Some(cur);
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

/// Per-node relations carrying `#P{i}`, `#Nc{i}.{k}`, `#N{i}`, `#Nup{i}`
/// and `#Nfull{i}`. An empty `preds` means no selections.
pub fn multiway_full_degrees(
    m: &mut Machine,
    tree: &JoinTree,
    rels: &[RelHandle],
    preds: &[Predicate],
) -> Result<Vec<RelHandle>> {
    let mut state = count_bottom_up(m, tree, rels, preds)?;
    let root_up = augment_const(m, &state[0], &up_attr(0), 1)?;
    replace(m, &mut state[0], root_up);
    for i in 0..tree.len() {
        let kids = tree.nodes[i].children.clone();
        for &k in &kids {
            // what a parent tuple contributes to each joining child tuple
            let mut factors = vec![up_attr(i), mask_attr(i)];
            factors.extend(kids.iter().filter(|&&c| c != k).map(|&c| child_count_attr(i, c)));
            let via = attach_product(m, &state[i], &factors, "#via")?;
            let next = semijoin_agg_on(
                m,
                &state[k],
                &via,
                &tree.nodes[k].join_attrs,
                &up_attr(k),
                Contribution::Attr("#via"),
                RunKind::Sum,
            )?;
            m.free(&via);
            replace(m, &mut state[k], next);
        }
        let next = attach_product(m, &state[i], &[up_attr(i), down_attr(i)], &full_attr(i))?;
        replace(m, &mut state[i], next);
    }
    Ok(state)
}

fn asc_key<S: AsRef<str>>(attrs: &[S]) -> SortKey {
    let mut key = SortKey::default();
    for a in attrs {
        key = key.then(a.as_ref(), crate::relmodel::Direction::Asc);
    }
    key
}

const RES: &str = "#res";

fn residue(x: i64, b: i64) -> Result<i64> {
    x.checked_rem(b)
        .filter(|_| b > 0)
        .ok_or_else(|| Error::InternalSchedule(format!("residue of {x} modulo {b}")))
}

const RANK: &str = "#rank";
const CUM: &str = "#cum";
const START: &str = "#start";

/// Natural join of all relations of `tree`, optionally under per-relation
/// selections. The trace depends only on the relation sizes and the output
/// size.
pub fn multiway_join(m: &mut Machine, tree: &JoinTree, rels: &[RelHandle], preds: &[Predicate]) -> Result<RelHandle> {
    let deg = multiway_full_degrees(m, tree, rels, preds)?;
    let total = fold_sum(m, &deg[0], &full_attr(0))?;
    let total = usize::try_from(total).map_err(|_| Error::Overflow("join size"))?;
    m.tm.declare_sizes(0, total as u64);

    let carried = |i: usize, schema: &Schema| -> Vec<String> {
        let mut v = user_attrs(schema);
        v.extend(tree.nodes[i].children.iter().map(|&k| child_count_attr(i, k)));
        v
    };

    let root = expand(m, &deg[0], &full_attr(0))?;
    let mut e = obl_project(m, &root, &carried(0, &deg[0].schema))?;
    m.free(&root);

    for j in 1..tree.len() {
        let i = tree.nodes[j].parent.unwrap();
        let join = &tree.nodes[j].join_attrs;
        let nj = down_attr(j);

        // child side: copies of each tuple take the residues reserved for it
        let c1 = grouping_running_sum(m, &deg[j], join, &SortKey::default(), &nj, CUM)?;
        let (cum_c, n_c) = (c1.schema.index_of(CUM)?, c1.schema.index_of(&nj)?);
        let c2 = augment(m, &c1, Attr::int(START), |t| Ok(Value::Int(int_at(t, cum_c) - int_at(t, n_c))))?;
        m.free(&c1);
        let ce = expand(m, &c2, &full_attr(j))?;
        m.free(&c2);
        let mut g: Vec<String> = join.clone();
        g.push(START.to_string());
        let cr = grouping_identity(m, &ce, &g, &SortKey::default(), RANK)?;
        m.free(&ce);
        let (st, rk, nd) = (cr.schema.index_of(START)?, cr.schema.index_of(RANK)?, cr.schema.index_of(&nj)?);
        let c3 = augment(m, &cr, Attr::int(RES), |t| {
            Ok(Value::Int(int_at(t, st) + residue(int_at(t, rk) - 1, int_at(t, nd))?))
        })?;
        m.free(&cr);
        let mut keep = carried(j, &deg[j].schema);
        keep.push(RES.to_string());
        let c4 = obl_project(m, &c3, &keep)?;
        m.free(&c3);
        let mut key_attrs = join.clone();
        key_attrs.push(RES.to_string());
        let child = obl_sort(m, &c4, &asc_key(&key_attrs))?;
        m.free(&c4);

        // partial side: rows of each join value cycle through its residues
        let all = e.schema.names();
        let e1 = grouping_identity(m, &e, join, &asc_key(&all), RANK)?;
        let nc = child_count_attr(i, j);
        let (rk, b) = (e1.schema.index_of(RANK)?, e1.schema.index_of(&nc)?);
        let e2 = augment(m, &e1, Attr::int(RES), |t| Ok(Value::Int(residue(int_at(t, rk) - 1, int_at(t, b))?)))?;
        m.free(&e1);
        let mut keep: Vec<String> = all.into_iter().filter(|a| *a != nc).collect();
        keep.push(RES.to_string());
        let e3 = obl_project(m, &e2, &keep)?;
        m.free(&e2);
        let partial = obl_sort(m, &e3, &asc_key(&key_attrs))?;
        m.free(&e3);

        let joined = stitch(m, &partial, &child)?;
        m.free(&partial);
        m.free(&child);
        if joined.len != total {
            return Err(Error::SizeMismatch(format!(
                "intermediate join has {} rows, expected {total}",
                joined.len
            )));
        }
        let names: Vec<String> = joined.schema.names().into_iter().filter(|a| a != RES).collect();
        let next = obl_project(m, &joined, &names)?;
        m.free(&joined);
        replace(m, &mut e, next);
    }
    for d in &deg {
        m.free(d);
    }
    let out = obl_project(m, &e, &user_attrs(&e.schema))?;
    m.free(&e);
    Ok(out)
}
