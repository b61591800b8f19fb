//! Acceptance suite. Runs as a plain binary (no test harness) so every criterion prints
//! one PASS/FAIL line even when all of them pass.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use hgen_core::cluster::{cluster_layer, cohesion_of, importance, ClusterParams};
use hgen_core::eval::{concept_coverage, count_orphans, mean_average_precision, precision_recall, ConceptAnnotation, Pair};
use hgen_core::generate::{concept_diversity, information_density, max_inverse_cohesion, n_targets};
use hgen_core::model::TraceLink;
use hgen_core::pipeline::{Engine, PipelineConfig};
use hgen_core::prompts::PromptSet;
use hgen_core::provider::{Embedding, Gateway};
use hgen_core::trace::{ensure_no_orphans, merge_duplicates, share_links, DuplicateFlag, LinkParams, SimilarityMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}

fn brute_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn cohesion_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let started = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..=50);
        let dim = rng.random_range(1..=32);
        let raw: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, dim)).collect();
        let emb: Vec<Embedding> = raw.iter().map(|v| Embedding::new(v.clone()).unwrap()).collect();
        let got = cohesion_of(&emb).map_err(|e| e.to_string())?;
        let mut sum = 0.0;
        let mut pairs = 0;
        for i in 0..n {
            for j in i + 1..n {
                sum += brute_cosine(&raw[i], &raw[j]);
                pairs += 1;
            }
        }
        worst = worst.max((got - sum / pairs as f64).abs());
    }
    let elapsed = started.elapsed();
    ensure!(worst <= 1e-9, "max deviation {worst:e}");
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("200 clusters, max |diff| {worst:.1e}, {} ms", elapsed.as_millis()))
}

fn importance_formula() -> Outcome {
    let spot = importance(0.62, 2, 4, 0.1);
    ensure!((spot - 1.5173).abs() < 1e-4, "spot value {spot}");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let h = rng.random_range(-1.0..1.0);
        let v = rng.random_range(1..20usize);
        let s = rng.random_range(1..60usize);
        let a = rng.random_range(0.0..1.0);
        let want = (a * (s as f64).ln() + h) * v as f64;
        ensure!((importance(h, v, s, a) - want).abs() < 1e-12, "formula at h={h} v={v} s={s} a={a}");
        let doubled = importance(h, 2 * v, s, a);
        ensure!((doubled - 2.0 * importance(h, v, s, a)).abs() < 1e-12, "not linear in v");
        ensure!(importance(h, v, 1, a) == importance(h, v, 1, 0.0), "s=1 depends on alpha");
    }
    Ok(format!("spot {spot:.4}, 1000 random formula/linearity/alpha checks"))
}

/// Points scattered around a few random centres, plus some uniform noise.
fn blob_layer(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Embedding> {
    let centres: Vec<Vec<f64>> = (0..rng.random_range(1..=6)).map(|_| random_vec(rng, dim)).collect();
    (0..n)
        .map(|_| {
            let v = if rng.random_bool(0.15) {
                random_vec(rng, dim)
            } else {
                let c = &centres[rng.random_range(0..centres.len())];
                let spread = rng.random_range(0.05..0.6);
                c.iter().map(|x| x + rng.random_range(-spread..spread)).collect()
            };
            Embedding::new(v).unwrap()
        })
        .collect()
}

fn coverage_invariant() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut clusters = 0;
    for layer in 0..100 {
        let n = rng.random_range(3..=60);
        let emb = blob_layer(&mut rng, n, 12);
        let ids: Vec<String> = (0..n).map(|i| format!("a{i:02}")).collect();
        let params = ClusterParams { seed: layer, ..ClusterParams::default() };
        let (c, report) = cluster_layer(0, &ids, &emb, &params).map_err(|e| e.to_string())?;
        let mut seen = BTreeSet::new();
        for id in c.clusters.iter().flat_map(|k| k.member_ids.iter()).chain(&c.singletons) {
            ensure!(seen.insert(id.clone()), "layer {layer}: {id} appears twice");
        }
        ensure!(seen.len() == n, "layer {layer}: covered {} of {n}", seen.len());
        if let Some(big) = report.candidates.iter().find(|k| k.size >= params.large_cluster_min) {
            return Err(format!("layer {layer}: candidate of size {} survived the size filter", big.size));
        }
        clusters += c.clusters.len();
    }
    Ok(format!("100 layers partitioned exactly ({clusters} clusters), no candidate >= 5"))
}

fn n_targets_example() -> Outcome {
    let density = information_density(&[250, 180, 170, 130], 109.0);
    let max_inv = max_inverse_cohesion([0.3, 0.9, 0.3 / 0.56]);
    let diversity = concept_diversity(Some(0.3 / 0.56), max_inv);
    let n = n_targets(diversity, density, 4, (0.5, 1.0));
    ensure!(n == 3, "730/109 with diversity {diversity:.2} gave {n}");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let size = rng.random_range(1..=200usize);
        let sizes: Vec<usize> = (0..size).map(|_| rng.random_range(1..400)).collect();
        let d = information_density(&sizes, rng.random_range(20.0..200.0));
        let v = concept_diversity(Some(rng.random_range(0.0..1.0)), rng.random_range(1.0..10.0));
        let n = n_targets(v, d, size, (0.5, 1.0));
        if size <= 2 {
            ensure!(n == 1, "size {size} gave {n}");
        } else {
            ensure!(n as f64 > 0.5 * size as f64 && n < size, "size {size} gave {n}");
        }
    }
    Ok(format!("density {density:.2} x diversity {diversity:.2} -> {n}; 1000 random clusters in bounds"))
}

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ze", "pa", "qui", "dor", "fen", "gal", "hul", "jor",
    "bex", "cyn", "wam", "yil", "tras", "mond", "prel", "stov",
];

fn topic_words(rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    (0..6)
        .map(|_| {
            (0..40)
                .map(|_| (0..3).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect::<String>())
                .collect()
        })
        .collect()
}

fn random_project(rng: &mut ChaCha8Rng, dir: &Path) {
    let topics = topic_words(rng);
    for f in 0..rng.random_range(3..=14) {
        let mut words = Vec::new();
        for _ in 0..rng.random_range(1..=2) {
            let t = &topics[rng.random_range(0..topics.len())];
            for _ in 0..rng.random_range(15..60) {
                words.push(t[rng.random_range(0..t.len())].clone());
            }
        }
        let lines: Vec<String> = words.chunks(8).map(|c| c.join(" ")).collect();
        std::fs::write(dir.join(format!("file{f:02}.txt")), lines.join("\n")).unwrap();
    }
}

fn config_for(src: &Path, seed: u64) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.source.root = Some(src.to_path_buf());
    c.seed = seed;
    c
}

fn zero_orphans() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut children = 0;
    for run in 0..100 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        random_project(&mut rng, dir.path());
        let engine = Engine::new(config_for(dir.path(), run), Gateway::mock(), PromptSet::builtin());
        let (tree, _) = engine.run_pipeline().map_err(|e| format!("run {run}: {e}"))?;
        for layer in &tree.layers[..tree.layers.len() - 1] {
            let orphans = count_orphans(&tree, layer.index);
            ensure!(orphans == 0, "run {run}: {orphans} orphans in layer {}", layer.index);
            children += layer.len();
        }
    }
    let engine = Engine::new(config_for(&fixtures().join("dissimilar"), 0), Gateway::mock(), PromptSet::builtin());
    let baseline = engine.run_baseline().map_err(|e| e.to_string())?;
    let odd = baseline.layers[0]
        .artifacts
        .iter()
        .find(|a| a.source_path.as_deref() == Some("e_astronomy.txt"))
        .ok_or("fixture child missing")?;
    let base_orphans = count_orphans(&baseline, 0);
    ensure!(base_orphans >= 1, "baseline produced no orphan");
    ensure!(baseline.links.iter().all(|l| l.child_id != odd.id), "baseline linked the dissimilar child");
    let (tree, _) = engine.run_pipeline().map_err(|e| e.to_string())?;
    ensure!(count_orphans(&tree, 0) == 0, "pipeline orphaned a child of the crafted fixture");
    Ok(format!("100 pipelines, {children} children all linked; baseline left {base_orphans} orphan(s)"))
}

fn kids(links: &[TraceLink]) -> BTreeMap<String, BTreeSet<String>> {
    let mut m: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for l in links {
        m.entry(l.parent_id.clone()).or_default().insert(l.child_id.clone());
    }
    m
}

fn merge_safety() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = LinkParams::default();
    let mut merges = 0;
    for case in 0..2000 {
        let (np, nc) = (rng.random_range(2..8), rng.random_range(1..8));
        // coarse scores make identical child sets common
        let scores: Vec<Vec<f64>> =
            (0..np).map(|_| (0..nc).map(|_| rng.random_range(0..5) as f64 / 4.0).collect()).collect();
        let sim = SimilarityMatrix::from_scores(
            (0..np).map(|i| format!("p{i}")).collect(),
            (0..nc).map(|i| format!("c{i}")).collect(),
            scores,
        );
        let mut links = Vec::new();
        for p in 0..np {
            for c in 0..nc {
                if rng.random_bool(0.4) {
                    links.push(TraceLink { parent_id: format!("p{p}"), child_id: format!("c{c}"), score: sim.score(p, c) });
                }
            }
        }
        let links = ensure_no_orphans(links, &sim).map_err(|e| e.to_string())?;
        let flags: Vec<DuplicateFlag> = (0..rng.random_range(0..5))
            .filter_map(|_| {
                let (a, b) = (rng.random_range(0..np), rng.random_range(0..np));
                (a < b).then(|| DuplicateFlag { a: format!("p{a}"), b: format!("p{b}"), score: 0.9 })
            })
            .collect();
        let shared = share_links(&flags, links, &sim, &params);
        let before = kids(&shared);
        let (removed, kept) = merge_duplicates(&flags, shared, &sim);
        let linked: BTreeSet<&str> = kept.iter().map(|l| l.child_id.as_str()).collect();
        ensure!(linked.len() == nc, "case {case}: merge orphaned a child");
        let empty = BTreeSet::new();
        for r in &removed {
            let ok = flags.iter().any(|f| {
                let other = if &f.a == r { &f.b } else if &f.b == r { &f.a } else { return false };
                before.get(other).unwrap_or(&empty) == before.get(r).unwrap_or(&empty)
            });
            ensure!(ok, "case {case}: {r} merged without an identical partner");
        }
        merges += removed.len();
    }

    let sim = SimilarityMatrix::from_scores(
        vec!["US3".into(), "US4".into()],
        vec!["Hero".into(), "Villain".into(), "Crime".into()],
        vec![vec![0.80, 0.70, 0.75], vec![0.76, 0.78, 0.40]],
    );
    let link = |p: usize, c: usize| TraceLink {
        parent_id: sim.parent_ids[p].clone(),
        child_id: sim.child_ids[c].clone(),
        score: sim.score(p, c),
    };
    let flags = vec![DuplicateFlag { a: "US3".into(), b: "US4".into(), score: 0.9 }];
    let shared = share_links(&flags, vec![link(0, 0), link(0, 2), link(1, 1)], &sim, &params);
    let (removed, _) = merge_duplicates(&flags, shared.clone(), &sim);
    let k = kids(&shared);
    ensure!(k["US3"].contains("Crime") && !k["US4"].contains("Crime"), "Crime was shared");
    ensure!(removed.is_empty(), "US3/US4 merged: {removed:?}");
    Ok(format!("2000 random cases ({merges} merges) safe; US3 and US4 both retained"))
}

fn oracle_map(links: &[TraceLink], truth: &BTreeSet<Pair>) -> Option<f64> {
    let parents: BTreeSet<&String> = truth.iter().map(|(p, _)| p).collect();
    if parents.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for p in &parents {
        let mut ranked: Vec<&TraceLink> = links.iter().filter(|l| &&l.parent_id == p).collect();
        ranked.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.child_id.cmp(&b.child_id)));
        let hits: Vec<usize> =
            (0..ranked.len()).filter(|&i| truth.contains(&((*p).clone(), ranked[i].child_id.clone()))).collect();
        if !hits.is_empty() {
            total += hits.iter().map(|&r| hits.iter().filter(|&&o| o <= r).count() as f64 / (r + 1) as f64).sum::<f64>()
                / hits.len() as f64;
        }
    }
    Some(total / parents.len() as f64)
}

fn evaluator_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let (np, nc) = (rng.random_range(1..=20), rng.random_range(1..=20));
        let mut links = Vec::new();
        let mut truth = BTreeSet::new();
        for p in 0..np {
            for c in 0..nc {
                let (pid, cid) = (format!("p{p:02}"), format!("c{c:02}"));
                if rng.random_bool(0.6) {
                    links.push(TraceLink { parent_id: pid.clone(), child_id: cid.clone(), score: rng.random_range(0..6) as f64 / 5.0 });
                }
                if rng.random_bool(0.4) {
                    truth.insert((pid, cid));
                }
            }
        }
        match (mean_average_precision(&links, &truth), oracle_map(&links, &truth)) {
            (Some(g), Some(w)) => worst = worst.max((g - w).abs()),
            (None, None) => {}
            other => return Err(format!("case {case}: {other:?}")),
        }
    }
    ensure!(worst <= 1e-9, "max deviation {worst:e}");
    let ranked = [
        TraceLink { parent_id: "p".into(), child_id: "a".into(), score: 0.9 },
        TraceLink { parent_id: "p".into(), child_id: "b".into(), score: 0.8 },
        TraceLink { parent_id: "p".into(), child_id: "c".into(), score: 0.7 },
    ];
    let truth = BTreeSet::from([("p".to_string(), "a".to_string()), ("p".to_string(), "c".to_string())]);
    let ap = mean_average_precision(&ranked, &truth).unwrap_or(f64::NAN);
    ensure!((ap - 0.8333).abs() < 1e-4, "[correct, wrong, correct] gave {ap}");
    let (p, r) = precision_recall(&truth, &truth);
    ensure!(p == Some(1.0) && r == Some(1.0), "identity gave {p:?} {r:?}");
    Ok(format!("200 instances, max |diff| {worst:.1e}; AP {ap:.4}; identity P=R=1"))
}

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let src = fixtures().join("hero");
    let mut outputs = Vec::new();
    let mut slowest = Duration::ZERO;
    for i in 0..3 {
        let out = dir.path().join(format!("run{i}.json"));
        let started = Instant::now();
        let o = Command::new(env!("CARGO_BIN_EXE_hgen"))
            .args(["generate", "--provider", "mock", "--seed", "42", "--src"])
            .arg(&src)
            .arg("--out")
            .arg(&out)
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        slowest = slowest.max(started.elapsed());
        ensure!(o.status.success(), "run {i} failed: {}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    ensure!(outputs.windows(2).all(|w| w[0] == w[1]), "tree JSON differs between runs");
    ensure!(slowest < Duration::from_secs(30), "slowest run took {slowest:?}");
    Ok(format!("3 runs byte-identical ({} bytes), slowest {} ms", outputs[0].len(), slowest.as_millis()))
}

fn coverage_arithmetic() -> Outcome {
    let concepts: Vec<ConceptAnnotation> = (0..8)
        .map(|i| ConceptAnnotation {
            concept: format!("concept {i}"),
            present_in_ids: if i < 7 { BTreeSet::from([format!("g{i}")]) } else { BTreeSet::new() },
        })
        .collect();
    let generated: BTreeSet<String> = (0..7).map(|i| format!("g{i}")).collect();
    let (coverage, _) = concept_coverage(&concepts, &generated);
    ensure!(coverage == Some(0.875), "got {coverage:?}");
    Ok("8 concepts, 7 covered -> 87.5%".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("cohesion oracle", cohesion_oracle),
        ("importance formula", importance_formula),
        ("clustering coverage", coverage_invariant),
        ("n_targets example and bounds", n_targets_example),
        ("zero-orphan guarantee", zero_orphans),
        ("merge safety", merge_safety),
        ("evaluator oracle", evaluator_oracle),
        ("end-to-end determinism", end_to_end_determinism),
        ("concept coverage", coverage_arithmetic),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
