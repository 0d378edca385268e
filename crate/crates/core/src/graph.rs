//! Prioritization graph over the regions of an edited image.
//!
//! The graph is grown breadth-first from a seed region. Each dequeued region
//! links to at most three regions that have not been reached yet, choosing
//! candidates by rule (both subjects, then shared edit label, then box
//! overlap), then by larger overlap, then by lower index. Because targets are
//! marked as reached when their edge is added, the result is a tree rooted at
//! the seed and therefore acyclic. Its topological order becomes the
//! per-region priority index consumed by the model.

use std::collections::VecDeque;
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::data::{Question, Region};
use crate::error::{Error, Result};
use crate::geometry::{self, OverlapConfig};

/// Most outgoing edges per region.
pub const MAX_OUT_DEGREE: usize = 3;
/// Most regions kept per image.
pub const MAX_REGIONS: usize = 64;

/// Why two regions are linked, in decreasing priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeRule {
    BothSubjects,
    SameLabel,
    Overlap,
}

impl EdgeRule {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeRule::BothSubjects => "both_subjects",
            EdgeRule::SameLabel => "same_label",
            EdgeRule::Overlap => "overlap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub rule: EdgeRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditGraph {
    pub nodes: Vec<Region>,
    pub seed: usize,
    /// Edges in insertion order.
    pub edges: Vec<Edge>,
}

impl EditGraph {
    /// A graph with explicit edges. Endpoints and the seed must be valid
    /// region positions; acyclicity is not checked here.
    pub fn from_edges(nodes: Vec<Region>, seed: usize, edges: Vec<Edge>) -> Result<Self> {
        let n = nodes.len();
        if seed >= n {
            return Err(Error::invalid(
                "graph",
                format!("seed {seed} out of range for {n} regions"),
            ));
        }
        if let Some(e) = edges.iter().find(|e| e.from >= n || e.to >= n) {
            return Err(Error::invalid(
                "graph",
                format!("edge {}->{} out of range", e.from, e.to),
            ));
        }
        Ok(EditGraph { nodes, seed, edges })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|e| e.from == v).count()
    }

    /// Children of every node, each list in edge-insertion order.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            out[e.from].push(e.to);
        }
        out
    }

    /// Line-oriented text form: a header, one line per node, one per edge.
    pub fn render(&self, image_id: &str, priorities: &PriorityAssignment) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "graph image={image_id} seed={} nodes={} edges={}",
            self.seed,
            self.nodes.len(),
            self.edges.len()
        );
        for (i, r) in self.nodes.iter().enumerate() {
            let _ = writeln!(
                s,
                "node {i} subject={} label={} priority={}",
                r.is_subject,
                r.edit_label.as_str(),
                priorities.get(i)
            );
        }
        for e in &self.edges {
            let _ = writeln!(s, "edge {} {} {}", e.from, e.to, e.rule.as_str());
        }
        s
    }
}

/// Priority of one region: its topological position, or unreachable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Priority {
    Rank(usize),
    Unreachable,
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Priority::Rank(k) => write!(f, "{k}"),
            Priority::Unreachable => f.write_str("unreachable"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PriorityAssignment(pub Vec<Priority>);

impl PriorityAssignment {
    pub fn unreachable(n: usize) -> Self {
        PriorityAssignment(vec![Priority::Unreachable; n])
    }

    pub fn get(&self, region: usize) -> Priority {
        self.0.get(region).copied().unwrap_or(Priority::Unreachable)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Region holding a given rank, if any.
    pub fn region_at(&self, rank: usize) -> Option<usize> {
        self.0.iter().position(|p| *p == Priority::Rank(rank))
    }

    pub fn reachable_count(&self) -> usize {
        self.0.iter().filter(|p| matches!(p, Priority::Rank(_))).count()
    }
}

/// Root region for a question: its subject, else the first subject, else
/// the first edited region, else region 0.
pub fn select_seed(regions: &[Region], question: &Question) -> usize {
    if let Some(s) = question.subject_index {
        return s;
    }
    regions
        .iter()
        .position(|r| r.is_subject)
        .or_else(|| regions.iter().position(|r| r.edit_label.is_edit()))
        .unwrap_or(0)
}

/// First matching linking rule between two distinct regions.
pub fn notationally_similar(u: &Region, v: &Region, cfg: &OverlapConfig) -> Option<EdgeRule> {
    if u.is_subject && v.is_subject {
        Some(EdgeRule::BothSubjects)
    } else if u.edit_label.is_edit() && u.edit_label == v.edit_label {
        Some(EdgeRule::SameLabel)
    } else if geometry::overlaps(&u.bbox, &v.bbox, cfg) {
        Some(EdgeRule::Overlap)
    } else {
        None
    }
}

pub fn build_graph(regions: &[Region], seed: usize, cfg: &OverlapConfig) -> Result<EditGraph> {
    let n = regions.len();
    if seed >= n {
        return Err(Error::invalid(
            "graph",
            format!("seed {seed} out of range for {n} regions"),
        ));
    }
    let mut visited = vec![false; n];
    let mut edges = Vec::new();
    let mut frontier = VecDeque::from([seed]);
    visited[seed] = true;

    while let Some(u) = frontier.pop_front() {
        let mut candidates: Vec<(EdgeRule, f64, usize)> = (0..n)
            .filter(|&v| !visited[v])
            .filter_map(|v| {
                notationally_similar(&regions[u], &regions[v], cfg).map(|rule| {
                    let ov = geometry::overlap_value(&regions[u].bbox, &regions[v].bbox, cfg);
                    (rule, ov, v)
                })
            })
            .collect();
        candidates.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(&b.2)));
        for (rule, _, v) in candidates.into_iter().take(MAX_OUT_DEGREE) {
            visited[v] = true;
            edges.push(Edge { from: u, to: v, rule });
            frontier.push_back(v);
        }
    }

    Ok(EditGraph {
        nodes: regions.to_vec(),
        seed,
        edges,
    })
}

/// Kahn's algorithm over the part of the graph reachable from the seed, with
/// a FIFO queue and children taken in edge-insertion order.
pub fn topo_sort(g: &EditGraph) -> Result<Vec<usize>> {
    let n = g.len();
    let children = g.children();

    let mut reachable = vec![false; n];
    let mut stack = vec![g.seed];
    reachable[g.seed] = true;
    while let Some(u) = stack.pop() {
        for &v in &children[u] {
            if !reachable[v] {
                reachable[v] = true;
                stack.push(v);
            }
        }
    }

    let mut indegree = vec![0usize; n];
    for e in g.edges.iter().filter(|e| reachable[e.from]) {
        indegree[e.to] += 1;
    }
    if indegree[g.seed] != 0 {
        return Err(Error::Invariant(format!("cycle through seed {}", g.seed)));
    }

    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([g.seed]);
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &v in &children[u] {
            indegree[v] -= 1;
            if indegree[v] == 0 {
                queue.push_back(v);
            }
        }
    }

    let expected = reachable.iter().filter(|&&r| r).count();
    if order.len() != expected {
        return Err(Error::Invariant(format!(
            "cycle detected: sorted {} of {expected} reachable regions",
            order.len()
        )));
    }
    Ok(order)
}

pub fn priority_indices(g: &EditGraph) -> Result<PriorityAssignment> {
    let mut out = PriorityAssignment::unreachable(g.len());
    for (rank, v) in topo_sort(g)?.into_iter().enumerate() {
        out.0[v] = Priority::Rank(rank);
    }
    Ok(out)
}

/// Seed selection, graph construction and priority assignment in one step.
pub fn prioritize(
    regions: &[Region],
    question: &Question,
    cfg: &OverlapConfig,
) -> Result<(EditGraph, PriorityAssignment)> {
    if regions.is_empty() {
        return Ok((
            EditGraph {
                nodes: Vec::new(),
                seed: 0,
                edges: Vec::new(),
            },
            PriorityAssignment::unreachable(0),
        ));
    }
    let seed = select_seed(regions, question);
    let g = build_graph(regions, seed, cfg)?;
    let p = priority_indices(&g)?;
    Ok((g, p))
}

/// Keeps at most `max` regions: subjects and edited regions first, then the
/// largest boxes. Survivors keep their relative order and are re-indexed;
/// the returned map sends old indices to new ones.
pub fn truncate_regions(regions: &[Region], max: usize) -> (Vec<Region>, Vec<Option<usize>>) {
    if regions.len() <= max {
        return (regions.to_vec(), (0..regions.len()).map(Some).collect());
    }
    let mut order: Vec<usize> = (0..regions.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&regions[a], &regions[b]);
        let key = |r: &Region| (r.is_subject || r.edit_label.is_edit()) as u8;
        key(rb)
            .cmp(&key(ra))
            .then(rb.bbox.area().total_cmp(&ra.bbox.area()))
            .then(a.cmp(&b))
    });
    let mut keep = vec![false; regions.len()];
    for &i in order.iter().take(max) {
        keep[i] = true;
    }
    let mut map = vec![None; regions.len()];
    let mut kept = Vec::with_capacity(max);
    for (i, r) in regions.iter().enumerate() {
        if keep[i] {
            map[i] = Some(kept.len());
            let mut r = r.clone();
            r.index = kept.len();
            kept.push(r);
        }
    }
    (kept, map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BBox, EditLabel, QuestionType};

    fn reg(index: usize, b: (f64, f64, f64, f64), subject: bool, label: EditLabel) -> Region {
        Region::new(index, BBox::new(b.0, b.1, b.2, b.3).unwrap(), subject, label)
    }

    fn question(qtype: QuestionType, subject: Option<usize>) -> Question {
        Question {
            qtype,
            subject_index: subject,
            text: String::new(),
        }
    }

    fn far(i: usize) -> (f64, f64, f64, f64) {
        let x = 100.0 * (i as f64 + 1.0);
        (x, x, x + 1.0, x + 1.0)
    }

    #[test]
    fn seed_selection_chain() {
        let regions = vec![
            reg(0, far(0), false, EditLabel::None),
            reg(1, far(1), true, EditLabel::None),
            reg(2, far(2), true, EditLabel::None),
            reg(3, far(3), true, EditLabel::None),
        ];
        assert_eq!(
            select_seed(&regions, &question(QuestionType::SubjectEmotion, Some(2))),
            2
        );
        let two_subjects = vec![
            reg(0, far(0), false, EditLabel::None),
            reg(1, far(1), true, EditLabel::None),
            reg(2, far(2), false, EditLabel::None),
            reg(3, far(3), true, EditLabel::None),
        ];
        assert_eq!(select_seed(&two_subjects, &question(QuestionType::Intent, None)), 1);
        let labeled: Vec<_> = (0..5)
            .map(|i| {
                reg(
                    i,
                    far(i),
                    false,
                    if i == 4 { EditLabel::Introduced } else { EditLabel::None },
                )
            })
            .collect();
        assert_eq!(select_seed(&labeled, &question(QuestionType::Intent, None)), 4);
        let plain: Vec<_> = (0..3).map(|i| reg(i, far(i), false, EditLabel::None)).collect();
        assert_eq!(select_seed(&plain, &question(QuestionType::Intent, None)), 0);
    }

    #[test]
    fn similarity_rule_priority() {
        let cfg = OverlapConfig::default();
        let a = reg(0, (0.0, 0.0, 2.0, 2.0), true, EditLabel::Introduced);
        let b = reg(1, (0.0, 0.0, 2.0, 2.0), true, EditLabel::Introduced);
        assert_eq!(notationally_similar(&a, &b, &cfg), Some(EdgeRule::BothSubjects));
        let c = reg(0, far(0), false, EditLabel::Introduced);
        let d = reg(1, far(1), false, EditLabel::Introduced);
        assert_eq!(notationally_similar(&c, &d, &cfg), Some(EdgeRule::SameLabel));
        let e = reg(0, (0.0, 0.0, 2.0, 2.0), false, EditLabel::Altered);
        let f = reg(1, (1.0, 1.0, 3.0, 3.0), false, EditLabel::Missing);
        assert_eq!(notationally_similar(&e, &f, &cfg), Some(EdgeRule::Overlap));
        let g = reg(1, far(3), false, EditLabel::Missing);
        assert_eq!(notationally_similar(&e, &g, &cfg), None);
    }

    #[test]
    fn none_labels_are_not_similar() {
        let cfg = OverlapConfig::default();
        let a = reg(0, far(0), false, EditLabel::None);
        let b = reg(1, far(1), false, EditLabel::None);
        assert_eq!(notationally_similar(&a, &b, &cfg), None);
    }

    #[test]
    fn three_region_fixture() {
        let regions = vec![
            reg(0, (0.0, 0.0, 2.0, 2.0), true, EditLabel::None),
            reg(1, (1.0, 1.0, 3.0, 3.0), false, EditLabel::Introduced),
            reg(2, (10.0, 10.0, 11.0, 11.0), false, EditLabel::None),
        ];
        let g = build_graph(&regions, 0, &OverlapConfig::default()).unwrap();
        assert_eq!(
            g.edges,
            vec![Edge {
                from: 0,
                to: 1,
                rule: EdgeRule::Overlap
            }]
        );
        let p = priority_indices(&g).unwrap();
        assert_eq!(p.0, vec![Priority::Rank(0), Priority::Rank(1), Priority::Unreachable]);
    }

    #[test]
    fn cap_and_tie_break() {
        // Seed and five "altered" candidates with overlaps 0, 0.5, 0, 0.25 and
        // 0.5 against the seed: the cap keeps the two 0.5 ties by index, then
        // the 0.25 one.
        let seed = reg(0, (0.0, 0.0, 4.0, 4.0), false, EditLabel::Altered);
        let regions = vec![
            seed,
            reg(1, far(1), false, EditLabel::Altered),
            reg(2, (0.0, 0.0, 4.0, 2.0), false, EditLabel::Altered),
            reg(3, far(3), false, EditLabel::Altered),
            reg(4, (0.0, 0.0, 4.0, 1.0), false, EditLabel::Altered),
            reg(5, (0.0, 2.0, 4.0, 4.0), false, EditLabel::Altered),
        ];
        let g = build_graph(&regions, 0, &OverlapConfig::default()).unwrap();
        let from_seed: Vec<_> = g.edges.iter().filter(|e| e.from == 0).map(|e| e.to).collect();
        assert_eq!(from_seed, vec![2, 5, 4]);
        assert!(g.edges.iter().all(|e| e.rule == EdgeRule::SameLabel));
        // The remaining two are picked up from the first child.
        assert_eq!(g.edges.len(), 5);
        assert_eq!(
            g.edges[3..].iter().map(|e| (e.from, e.to)).collect::<Vec<_>>(),
            vec![(2, 1), (2, 3)]
        );
    }

    #[test]
    fn single_region_graph() {
        let regions = vec![reg(0, far(0), true, EditLabel::None)];
        let g = build_graph(&regions, 0, &OverlapConfig::default()).unwrap();
        assert!(g.edges.is_empty());
        assert_eq!(topo_sort(&g).unwrap(), vec![0]);
    }

    #[test]
    fn topo_sort_chain_and_diamond() {
        let nodes: Vec<_> = (0..4).map(|i| reg(i, far(i), false, EditLabel::None)).collect();
        let e = |from, to| Edge {
            from,
            to,
            rule: EdgeRule::Overlap,
        };
        let chain = EditGraph::from_edges(nodes[..3].to_vec(), 0, vec![e(0, 1), e(1, 2)]).unwrap();
        assert_eq!(topo_sort(&chain).unwrap(), vec![0, 1, 2]);
        let p = priority_indices(&chain).unwrap();
        assert_eq!(p.0, vec![Priority::Rank(0), Priority::Rank(1), Priority::Rank(2)]);

        let diamond = EditGraph::from_edges(nodes.clone(), 0, vec![e(0, 1), e(0, 2), e(1, 3), e(2, 3)]).unwrap();
        assert_eq!(topo_sort(&diamond).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn cycle_is_an_internal_failure() {
        let nodes: Vec<_> = (0..3).map(|i| reg(i, far(i), false, EditLabel::None)).collect();
        let e = |from, to| Edge {
            from,
            to,
            rule: EdgeRule::Overlap,
        };
        let g = EditGraph::from_edges(nodes, 0, vec![e(0, 1), e(1, 2), e(2, 1)]).unwrap();
        let err = topo_sort(&g).unwrap_err();
        assert!(err.is_internal());
    }

    #[test]
    fn isolated_region_unreachable() {
        let regions = vec![
            reg(0, far(0), true, EditLabel::None),
            reg(1, far(1), false, EditLabel::None),
        ];
        let g = build_graph(&regions, 0, &OverlapConfig::default()).unwrap();
        let p = priority_indices(&g).unwrap();
        assert_eq!(p.get(0), Priority::Rank(0));
        assert_eq!(p.get(1), Priority::Unreachable);
    }

    #[test]
    fn subject_seed_with_two_introduced_regions() {
        // Seed subject overlapping two introduced regions.
        let regions = vec![
            reg(0, (0.0, 0.0, 10.0, 10.0), true, EditLabel::None),
            reg(1, (5.0, 0.0, 15.0, 10.0), false, EditLabel::Introduced),
            reg(2, (0.0, 6.0, 10.0, 16.0), false, EditLabel::Introduced),
        ];
        let g = build_graph(&regions, 0, &OverlapConfig::default()).unwrap();
        let p = priority_indices(&g).unwrap();
        // IoU 1/3 for region 1 beats 1/4 for region 2.
        assert_eq!(p.0, vec![Priority::Rank(0), Priority::Rank(1), Priority::Rank(2)]);
    }

    #[test]
    fn render_format() {
        let regions = vec![
            reg(0, (0.0, 0.0, 2.0, 2.0), true, EditLabel::None),
            reg(1, (1.0, 1.0, 3.0, 3.0), false, EditLabel::Introduced),
        ];
        let g = build_graph(&regions, 0, &OverlapConfig::default()).unwrap();
        let p = priority_indices(&g).unwrap();
        assert_eq!(
            g.render("img", &p),
            "graph image=img seed=0 nodes=2 edges=1\n\
             node 0 subject=true label=none priority=0\n\
             node 1 subject=false label=introduced priority=1\n\
             edge 0 1 overlap\n"
        );
    }

    #[test]
    fn truncation_keeps_annotated_then_largest() {
        let mut regions: Vec<_> = (0..5)
            .map(|i| {
                let s = 1.0 + i as f64;
                reg(i, (0.0, 0.0, s, s), false, EditLabel::None)
            })
            .collect();
        regions[0].is_subject = true;
        let (kept, map) = truncate_regions(&regions, 3);
        assert_eq!(map, vec![Some(0), None, None, Some(1), Some(2)]);
        assert!(kept.iter().enumerate().all(|(i, r)| r.index == i));
        assert!(kept[0].is_subject);
    }
}
