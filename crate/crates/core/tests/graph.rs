mod common;

use common::{bx, question, random_regions};
use pelican::data::{EditLabel, QuestionType, Region};
use pelican::geometry::OverlapConfig;
use pelican::graph::{
    build_graph, notationally_similar, prioritize, priority_indices, select_seed, topo_sort, Edge, EdgeRule, EditGraph,
    Priority, MAX_OUT_DEGREE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check_invariants(regions: &[Region], g: &EditGraph) {
    let n = regions.len();
    for v in 0..n {
        assert!(g.out_degree(v) <= MAX_OUT_DEGREE);
    }
    let p = priority_indices(g).unwrap();
    assert_eq!(p.get(g.seed), Priority::Rank(0));
    for e in &g.edges {
        assert!(e.from < n && e.to < n);
        match (p.get(e.from), p.get(e.to)) {
            (Priority::Rank(a), Priority::Rank(b)) => assert!(a < b, "edge {e:?} against order"),
            other => panic!("edge between unranked regions {other:?}"),
        }
    }
    // Ranks form a bijection onto 0..k.
    let mut ranks: Vec<usize> =
        p.0.iter()
            .filter_map(|x| match x {
                Priority::Rank(r) => Some(*r),
                Priority::Unreachable => None,
            })
            .collect();
    ranks.sort_unstable();
    assert!(ranks.iter().copied().eq(0..ranks.len()));
}

#[test]
fn random_graphs_are_capped_dags() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = OverlapConfig::default();
    for _ in 0..1000 {
        let n = rng.gen_range(1..=32);
        let regions = random_regions(&mut rng, n);
        let g = build_graph(&regions, 0, &cfg).unwrap();
        check_invariants(&regions, &g);
    }
}

#[test]
fn construction_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let regions = random_regions(&mut rng, 20);
    let cfg = OverlapConfig::default();
    let a = build_graph(&regions, 0, &cfg).unwrap();
    let b = build_graph(&regions, 0, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        a.render("x", &priority_indices(&a).unwrap()),
        b.render("x", &priority_indices(&b).unwrap())
    );
}

#[test]
fn three_region_hand_trace() {
    let record = common::three_region_record();
    let g = build_graph(&record.regions, 0, &OverlapConfig::default()).unwrap();
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
fn figure_style_seed_with_two_introduced() {
    let regions = vec![
        Region::new(0, bx(0.0, 0.0, 10.0, 10.0), true, EditLabel::None),
        Region::new(1, bx(5.0, 0.0, 15.0, 10.0), false, EditLabel::Introduced),
        Region::new(2, bx(0.0, 5.0, 10.0, 15.0), false, EditLabel::Introduced),
    ];
    let p = priority_indices(&build_graph(&regions, 0, &OverlapConfig::default()).unwrap()).unwrap();
    assert_eq!(p.get(0), Priority::Rank(0));
    let mut linked = [p.get(1), p.get(2)];
    linked.sort_by_key(|x| format!("{x:?}"));
    assert_eq!(linked, [Priority::Rank(1), Priority::Rank(2)]);
}

#[test]
fn seed_selection_fallbacks() {
    let r = |i, subject, label| Region::new(i, bx(0.0, 0.0, 1.0, 1.0), subject, label);
    let regions = vec![
        r(0, false, EditLabel::None),
        r(1, true, EditLabel::None),
        r(2, true, EditLabel::None),
        r(3, true, EditLabel::None),
        r(4, false, EditLabel::Introduced),
    ];
    assert_eq!(
        select_seed(&regions, &question(QuestionType::SubjectEmotion, Some(2), Some(2))),
        2
    );
    assert_eq!(select_seed(&regions, &question(QuestionType::Intent, None, None)), 1);
    let plain: Vec<Region> = (0..5)
        .map(|i| r(i, false, if i == 4 { EditLabel::Introduced } else { EditLabel::None }))
        .collect();
    assert_eq!(select_seed(&plain, &question(QuestionType::Intent, None, None)), 4);
    let nothing: Vec<Region> = (0..3).map(|i| r(i, false, EditLabel::None)).collect();
    assert_eq!(select_seed(&nothing, &question(QuestionType::Intent, None, None)), 0);
}

#[test]
fn similarity_rule_order() {
    let cfg = OverlapConfig::default();
    let a = bx(0.0, 0.0, 2.0, 2.0);
    let b = bx(1.0, 1.0, 3.0, 3.0);
    let far = bx(50.0, 50.0, 51.0, 51.0);
    let s = |bb, subject, label| Region::new(0, bb, subject, label);
    assert_eq!(
        notationally_similar(
            &s(a, true, EditLabel::Introduced),
            &s(far, true, EditLabel::Introduced),
            &cfg
        ),
        Some(EdgeRule::BothSubjects)
    );
    assert_eq!(
        notationally_similar(
            &s(a, false, EditLabel::Introduced),
            &s(far, false, EditLabel::Introduced),
            &cfg
        ),
        Some(EdgeRule::SameLabel)
    );
    assert_eq!(
        notationally_similar(
            &s(a, false, EditLabel::Introduced),
            &s(b, false, EditLabel::Altered),
            &cfg
        ),
        Some(EdgeRule::Overlap)
    );
    assert_eq!(
        notationally_similar(&s(a, false, EditLabel::None), &s(far, false, EditLabel::None), &cfg),
        None
    );
}

#[test]
fn cap_picks_largest_overlaps_then_lowest_index() {
    // Seed plus five altered candidates; candidates 2 and 5 have equal
    // overlap with the seed.
    let seed = Region::new(0, bx(0.0, 0.0, 10.0, 10.0), false, EditLabel::Altered);
    let boxes = [
        bx(8.0, 0.0, 18.0, 10.0),  // IoU 2/18
        bx(5.0, 0.0, 15.0, 10.0),  // IoU 1/3
        bx(30.0, 0.0, 40.0, 10.0), // disjoint
        bx(2.0, 0.0, 12.0, 10.0),  // IoU 2/3
        bx(0.0, 5.0, 10.0, 15.0),  // IoU 1/3
    ];
    let mut regions = vec![seed];
    regions.extend(
        boxes
            .iter()
            .enumerate()
            .map(|(i, b)| Region::new(i + 1, *b, false, EditLabel::Altered)),
    );
    let g = build_graph(&regions, 0, &OverlapConfig::default()).unwrap();
    let from_seed: Vec<usize> = g.edges.iter().filter(|e| e.from == 0).map(|e| e.to).collect();
    assert_eq!(from_seed, vec![4, 2, 5]);
    assert!(g.edges.iter().all(|e| e.rule == EdgeRule::SameLabel));
}

/// Every topological order of a small DAG, by brute force.
fn all_orders(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    fn go(n: usize, edges: &[(usize, usize)], prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for v in 0..n {
            let ready = !prefix.contains(&v) && edges.iter().filter(|e| e.1 == v).all(|e| prefix.contains(&e.0));
            if ready {
                prefix.push(v);
                go(n, edges, prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(n, edges, &mut Vec::new(), &mut out);
    out
}

fn unit_regions(n: usize) -> Vec<Region> {
    (0..n)
        .map(|i| Region::new(i, bx(0.0, 0.0, 1.0, 1.0), false, EditLabel::None))
        .collect()
}

fn graph_of(n: usize, edges: &[(usize, usize)]) -> EditGraph {
    let edges = edges
        .iter()
        .map(|&(from, to)| Edge {
            from,
            to,
            rule: EdgeRule::Overlap,
        })
        .collect();
    EditGraph::from_edges(unit_regions(n), 0, edges).unwrap()
}

#[test]
fn topo_sort_chain_and_diamond() {
    assert_eq!(topo_sort(&graph_of(1, &[])).unwrap(), vec![0]);
    assert_eq!(topo_sort(&graph_of(3, &[(0, 1), (1, 2)])).unwrap(), vec![0, 1, 2]);
    let diamond = [(0, 1), (0, 2), (1, 3), (2, 3)];
    let order = topo_sort(&graph_of(4, &diamond)).unwrap();
    assert_eq!(order, vec![0, 1, 2, 3]);
    assert!(all_orders(4, &diamond).contains(&order));
}

#[test]
fn topo_sort_reports_cycles_as_internal() {
    let g = graph_of(3, &[(0, 1), (1, 2), (2, 1)]);
    let err = topo_sort(&g).unwrap_err();
    assert!(err.is_internal());
}

#[test]
fn single_region_graph() {
    let regions = unit_regions(1);
    let g = build_graph(&regions, 0, &OverlapConfig::default()).unwrap();
    assert!(g.edges.is_empty());
    assert_eq!(priority_indices(&g).unwrap().0, vec![Priority::Rank(0)]);
}

#[test]
fn relabeling_permutes_edges_when_overlaps_are_distinct() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = OverlapConfig::default();
    let mut checked = 0;
    while checked < 200 {
        let n = rng.gen_range(2..12);
        let regions = random_regions(&mut rng, n);
        let mut values: Vec<f64> = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                values.push(pelican::geometry::iou(&regions[i].bbox, &regions[j].bbox));
            }
        }
        values.sort_by(f64::total_cmp);
        if values.windows(2).any(|w| w[0] == w[1] && w[0] > 0.0) {
            continue;
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let mut permuted = vec![regions[0].clone(); n];
        for (old, &new) in perm.iter().enumerate() {
            permuted[new] = Region {
                index: new,
                ..regions[old].clone()
            };
        }
        let g = build_graph(&regions, 0, &cfg).unwrap();
        let h = build_graph(&permuted, perm[0], &cfg).unwrap();
        let mut mapped: Vec<(usize, usize)> = g.edges.iter().map(|e| (perm[e.from], perm[e.to])).collect();
        let mut got: Vec<(usize, usize)> = h.edges.iter().map(|e| (e.from, e.to)).collect();
        // Equal-rule candidates with zero overlap still tie on index.
        let ties = regions.iter().filter(|r| r.is_subject).count() > 1
            || EditLabel::ALL[1..]
                .iter()
                .any(|&l| regions.iter().filter(|r| r.edit_label == l).count() > 1);
        if ties {
            continue;
        }
        mapped.sort_unstable();
        got.sort_unstable();
        assert_eq!(got, mapped);
        checked += 1;
    }
}

#[test]
fn reachability_is_monotone_when_the_cap_never_binds() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = OverlapConfig::default();
    for _ in 0..500 {
        // With at most four regions no vertex has more than three
        // candidates, so the cap cannot displace an edge.
        let n = rng.gen_range(1..=3);
        let mut regions = random_regions(&mut rng, n + 1);
        let extra = regions.pop().unwrap();
        let before = priority_indices(&build_graph(&regions, 0, &cfg).unwrap()).unwrap();
        regions.push(extra);
        let after = priority_indices(&build_graph(&regions, 0, &cfg).unwrap()).unwrap();
        for i in 0..n {
            if before.get(i) != Priority::Unreachable {
                assert_ne!(after.get(i), Priority::Unreachable);
            }
        }
    }
}

#[test]
fn prioritize_uses_the_question_subject() {
    let regions = vec![
        Region::new(0, bx(0.0, 0.0, 2.0, 2.0), true, EditLabel::None),
        Region::new(1, bx(50.0, 50.0, 52.0, 52.0), true, EditLabel::None),
    ];
    let (g, p) = prioritize(
        &regions,
        &question(QuestionType::SubjectEmotion, Some(1), Some(2)),
        &OverlapConfig::default(),
    )
    .unwrap();
    assert_eq!(g.seed, 1);
    assert_eq!(p.0, vec![Priority::Rank(1), Priority::Rank(0)]);
}
