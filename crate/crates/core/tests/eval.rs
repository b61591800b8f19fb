use std::collections::BTreeSet;

use hgen_core::eval::{
    average_precision, concept_coverage, count_orphans, evaluate, mean_average_precision, precision_recall,
    ConceptAnnotation, EvalError, GroundTruth, Pair,
};
use hgen_core::model::{Artifact, ArtifactTree, Layer, TraceLink};
use proptest::prelude::*;

fn link(p: &str, c: &str, score: f64) -> TraceLink {
    TraceLink { parent_id: p.into(), child_id: c.into(), score }
}

fn pair(p: &str, c: &str) -> Pair {
    (p.to_string(), c.to_string())
}

/// Independent AP: for every relevant position, count relevant items at or above it.
fn oracle_map(links: &[TraceLink], truth: &BTreeSet<Pair>) -> Option<f64> {
    let parents: BTreeSet<&String> = truth.iter().map(|(p, _)| p).collect();
    if parents.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for p in &parents {
        let mut mine: Vec<&TraceLink> = links.iter().filter(|l| &&l.parent_id == p).collect();
        mine.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.child_id.cmp(&b.child_id)));
        let relevant: Vec<usize> = (0..mine.len())
            .filter(|&i| truth.contains(&((*p).clone(), mine[i].child_id.clone())))
            .collect();
        if relevant.is_empty() {
            continue;
        }
        let ap: f64 = relevant
            .iter()
            .map(|&r| relevant.iter().filter(|&&o| o <= r).count() as f64 / (r + 1) as f64)
            .sum::<f64>()
            / relevant.len() as f64;
        total += ap;
    }
    Some(total / parents.len() as f64)
}

#[test]
fn hit_miss_hit_ranking() {
    let links = [link("p", "a", 0.9), link("p", "b", 0.8), link("p", "c", 0.7)];
    let truth = BTreeSet::from([pair("p", "a"), pair("p", "c")]);
    let map = mean_average_precision(&links, &truth).unwrap();
    assert!((map - 0.8333).abs() < 1e-4);
}

#[test]
fn ties_rank_by_child_id() {
    let links = [link("p", "b", 0.5), link("p", "a", 0.5)];
    let truth = BTreeSet::from([pair("p", "b")]);
    assert_eq!(mean_average_precision(&links, &truth), Some(0.5));
}

#[test]
fn no_true_parents_gives_absent_map() {
    assert_eq!(mean_average_precision(&[link("p", "a", 0.5)], &BTreeSet::new()), None);
    assert_eq!(average_precision(&[]), 0.0);
}

#[test]
fn one_extra_wrong_link() {
    let truth: BTreeSet<Pair> = ["a", "b", "c", "d"].iter().map(|c| pair("p", c)).collect();
    let mut predicted = truth.clone();
    predicted.insert(pair("p", "x"));
    assert_eq!(precision_recall(&predicted, &truth), (Some(0.8), Some(1.0)));
}

fn tree() -> ArtifactTree {
    let mut t = ArtifactTree::new("t");
    let mut code = Layer::new(0, "code");
    for name in ["A", "B", "C"] {
        let mut a = Artifact::text(0, "code", name, &format!("{name} body"));
        a.source_path = Some(format!("{name}.java"));
        code.push_unique(a);
    }
    let mut stories = Layer::new(1, "user story");
    stories.push_unique(Artifact::text(1, "user story", "S", "story"));
    let s = stories.artifacts[0].id.clone();
    let a = code.artifacts[0].id.clone();
    t.layers = vec![code, stories];
    t.links = vec![link(&s, &a, 0.7)];
    t
}

#[test]
fn orphans_are_counted_per_layer() {
    let t = tree();
    assert_eq!(count_orphans(&t, 0), 2);
    assert_eq!(count_orphans(&t, 1), 1);
    assert_eq!(count_orphans(&t, 7), 0);
    let report = evaluate(&t, None, None).unwrap();
    assert_eq!(report.orphan_count, 2);
}

#[test]
fn coverage_seven_of_eight() {
    let generated: BTreeSet<String> = ["g1", "g2", "g3", "g4"].iter().map(|s| s.to_string()).collect();
    let mut concepts: Vec<ConceptAnnotation> = (0..7)
        .map(|i| ConceptAnnotation { concept: format!("c{i}"), present_in_ids: BTreeSet::from([format!("g{}", i % 3 + 1)]) })
        .collect();
    concepts.push(ConceptAnnotation { concept: "missing".into(), present_in_ids: BTreeSet::new() });
    let (coverage, covered_by) = concept_coverage(&concepts, &generated);
    assert_eq!(coverage, Some(0.875));
    assert_eq!(covered_by, Some(0.75));
    assert_eq!(concept_coverage(&[], &generated), (None, None));
    let empty: Vec<_> = concepts.iter().map(|c| ConceptAnnotation { present_in_ids: BTreeSet::new(), ..c.clone() }).collect();
    assert_eq!(concept_coverage(&empty, &generated), (Some(0.0), Some(0.0)));
}

#[test]
fn evaluate_identity_and_unknown_ids() {
    let t = tree();
    let gt = GroundTruth {
        approved: t.links.iter().map(|l| (l.parent_id.clone(), l.child_id.clone())).collect(),
        added: BTreeSet::new(),
    };
    let r = evaluate(&t, Some(&gt), None).unwrap();
    assert_eq!((r.precision, r.recall, r.map), (Some(1.0), Some(1.0), Some(1.0)));
    let json = serde_json::to_value(&r).unwrap();
    assert!(json.get("coverage_pct").is_none());

    let bad = GroundTruth { approved: BTreeSet::from([pair("ghost", "A")]), added: BTreeSet::new() };
    assert!(matches!(evaluate(&t, Some(&bad), None), Err(EvalError::UnknownId(id)) if id == "ghost"));

    let concepts = vec![ConceptAnnotation { concept: "x".into(), present_in_ids: BTreeSet::from(["nope".to_string()]) }];
    assert!(matches!(evaluate(&t, None, Some(&concepts)), Err(EvalError::UnknownId(_))));
}

fn instance() -> impl Strategy<Value = (Vec<TraceLink>, BTreeSet<Pair>)> {
    (1usize..=20, 1usize..=20).prop_flat_map(|(np, nc)| {
        (
            prop::collection::vec((prop::bool::weighted(0.6), 0u8..8, prop::bool::weighted(0.4)), np * nc),
            Just(nc),
        )
            .prop_map(|(cells, nc)| {
                let mut links = Vec::new();
                let mut truth = BTreeSet::new();
                for (k, (predicted, score, correct)) in cells.into_iter().enumerate() {
                    let (p, c) = (format!("p{:02}", k / nc), format!("c{:02}", k % nc));
                    if predicted {
                        // coarse scores force ties
                        links.push(link(&p, &c, score as f64 / 8.0));
                    }
                    if correct {
                        truth.insert((p, c));
                    }
                }
                (links, truth)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn map_matches_rank_walk((links, truth) in instance()) {
        let got = mean_average_precision(&links, &truth);
        let want = oracle_map(&links, &truth);
        match (got, want) {
            (Some(g), Some(w)) => prop_assert!((g - w).abs() < 1e-9, "{} vs {}", g, w),
            (g, w) => prop_assert_eq!(g, w),
        }
        if let Some(g) = got {
            prop_assert!((0.0..=1.0).contains(&g));
        }
    }

    #[test]
    fn recall_and_precision_monotone((links, truth) in instance(), pick in 0usize..1000) {
        let predicted: BTreeSet<Pair> = links.iter().map(|l| (l.parent_id.clone(), l.child_id.clone())).collect();
        let (p0, r0) = precision_recall(&predicted, &truth);
        let missing: Vec<&Pair> = truth.difference(&predicted).collect();
        if !missing.is_empty() {
            let mut more = predicted.clone();
            more.insert(missing[pick % missing.len()].clone());
            let (_, r1) = precision_recall(&more, &truth);
            prop_assert!(r1.unwrap() >= r0.unwrap());
        }
        let mut wrong = predicted.clone();
        wrong.insert(("zz".into(), "zz".into()));
        let (p1, _) = precision_recall(&wrong, &truth);
        if let Some(p0) = p0 {
            prop_assert!(p1.unwrap() <= p0);
        }
        for v in [p0, r0].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
