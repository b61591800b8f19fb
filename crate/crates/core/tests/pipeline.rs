use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use hgen_core::eval::count_orphans;
use hgen_core::model::{save_tree, validate_tree, ArtifactTree};
use hgen_core::pipeline::{export, Engine, ExportFormat, PipelineConfig, PipelineError};
use hgen_core::provider::{Gateway, ProviderKind};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn config(src: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.project = "hero".into();
    c.source.root = Some(src.to_path_buf());
    c
}

fn linked_children(tree: &ArtifactTree) -> BTreeSet<&str> {
    tree.links.iter().map(|l| l.child_id.as_str()).collect()
}

#[test]
fn hero_tree_is_valid_and_orphan_free() {
    let engine = Engine::from_config(config(&fixture("hero"))).unwrap();
    let (tree, reports) = engine.run_pipeline().unwrap();
    assert!(validate_tree(&tree).is_empty());
    assert_eq!(tree.layers.len(), 3);
    assert_eq!(tree.layers[0].len(), 12);
    assert_eq!(reports.len(), 2);
    for layer in &tree.layers[..2] {
        assert_eq!(count_orphans(&tree, layer.index), 0, "layer {}", layer.index);
    }
    for layer in &tree.layers[1..] {
        assert!(layer.len() < tree.layers[layer.index - 1].len(), "layer {} did not shrink", layer.index);
    }
    for key in ["config_digest", "completion_provider", "embedding_provider", "prompts", "seed"] {
        assert!(tree.provenance.contains_key(key), "{key}");
    }
    let code: BTreeSet<&str> = tree.layers[0].artifacts.iter().filter_map(|a| a.source_path.as_deref()).collect();
    assert!(code.contains("Hero.java") && code.contains("SuperheroGameController.java"));
}

#[test]
fn same_seed_same_bytes() {
    let run = || {
        let engine = Engine::from_config(config(&fixture("hero"))).unwrap();
        save_tree(&engine.run_pipeline().unwrap().0).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn reports_account_for_every_generated_artifact() {
    let engine = Engine::from_config(config(&fixture("hero"))).unwrap();
    let (tree, reports) = engine.run_pipeline().unwrap();
    for (report, layer) in reports.iter().zip(&tree.layers[1..]) {
        let mut listed: BTreeSet<&str> =
            report.records.iter().flat_map(|r| r.generated_ids.iter().map(String::as_str)).collect();
        for m in &report.merged {
            listed.remove(m.as_str());
        }
        let present: BTreeSet<&str> = layer.artifacts.iter().map(|a| a.id.as_str()).collect();
        assert_eq!(listed, present);
        assert!(report.records.iter().all(|r| r.n_targets >= 1));
    }
}

#[test]
fn baseline_leaves_the_dissimilar_child_unlinked() {
    let engine = Engine::from_config(config(&fixture("dissimilar"))).unwrap();
    let baseline = engine.run_baseline().unwrap();
    assert!(validate_tree(&baseline).is_empty());
    let linked = linked_children(&baseline);
    let astronomy = baseline.layers[0]
        .artifacts
        .iter()
        .find(|a| a.source_path.as_deref() == Some("e_astronomy.txt"))
        .unwrap();
    assert!(!linked.contains(astronomy.id.as_str()));
    assert!(count_orphans(&baseline, 0) >= 1);

    let (tree, _) = engine.run_pipeline().unwrap();
    assert_eq!(count_orphans(&tree, 0), 0);
    assert!(linked_children(&tree).contains(astronomy.id.as_str()));
}

#[test]
fn toml_overrides_defaults() {
    let c = PipelineConfig::from_toml(
        r#"
        project = "demo"
        seed = 9
        [[layers]]
        artifact_type = "feature"
        [cluster]
        outlier_sigma = 2.0
        techniques = ["kmeans", "optics"]
        [links]
        normalization = "raw-max"
        "#,
    )
    .unwrap();
    assert_eq!(c.seed, 9);
    assert_eq!(c.layers.len(), 1);
    assert_eq!(c.layers[0].n_target_bounds, (0.5, 1.0));
    assert_eq!(c.cluster.outlier_sigma, 2.0);
    assert_eq!(c.cluster.techniques.len(), 2);
    assert_eq!(c.cluster.alpha, 0.1);
    c.validate().unwrap();
}

#[test]
fn bad_config_is_config_error() {
    assert!(matches!(PipelineConfig::from_toml("sede = 1"), Err(PipelineError::Config(_))));
    assert!(matches!(PipelineConfig::from_toml("[cluster]\nalpha = \"x\""), Err(PipelineError::Config(_))));
    let mut c = PipelineConfig::default();
    c.layers.clear();
    assert!(matches!(c.validate(), Err(PipelineError::Config(_))));
    let mut c = PipelineConfig::default();
    c.completion.kind = ProviderKind::HttpCompletion;
    assert!(matches!(Engine::from_config(c), Err(PipelineError::Config(_))));
}

#[test]
fn missing_key_variable_fails_before_any_call() {
    let mut c = config(&fixture("hero"));
    c.completion.kind = ProviderKind::HttpCompletion;
    c.completion.endpoint = Some("http://127.0.0.1:9/v1".into());
    c.completion.api_key_env = Some("HGEN_TEST_SURELY_UNSET_KEY".into());
    let err = Engine::from_config(c).err().unwrap();
    assert!(err.to_string().contains("HGEN_TEST_SURELY_UNSET_KEY"), "{err}");
}

#[test]
fn digest_ignores_paths_but_not_settings() {
    let a = config(Path::new("/one"));
    let mut b = config(Path::new("/two"));
    b.cache_dir = Some("/tmp/cache".into());
    assert_eq!(a.digest(), b.digest());
    b.seed = 1;
    assert_ne!(a.digest(), b.digest());
}

#[test]
fn empty_source_root_is_no_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let engine = Engine::from_config(config(dir.path())).unwrap();
    assert!(matches!(engine.run_pipeline(), Err(PipelineError::NoInputs(_))));
}

#[test]
fn cache_dir_makes_reruns_free() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(&fixture("hero"));
    c.cache_dir = Some(dir.path().to_path_buf());
    let first = save_tree(&Engine::from_config(c.clone()).unwrap().run_pipeline().unwrap().0).unwrap();
    let second = save_tree(&Engine::from_config(c).unwrap().run_pipeline().unwrap().0).unwrap();
    assert_eq!(first, second);
    assert!(std::fs::read_dir(dir.path()).unwrap().count() > 0);
}

#[test]
fn markdown_has_a_heading_per_artifact() {
    let engine = Engine::new(config(&fixture("hero")), Gateway::mock(), hgen_core::prompts::PromptSet::builtin());
    let (tree, _) = engine.run_pipeline().unwrap();
    let md = String::from_utf8(export(&tree, ExportFormat::Markdown)).unwrap();
    let headings = md.lines().filter(|l| l.starts_with("##")).count();
    assert_eq!(headings, tree.artifact_count());
    let levels: BTreeSet<usize> =
        md.lines().filter(|l| l.starts_with("##")).map(|l| l.chars().take_while(|&c| c == '#').count()).collect();
    assert_eq!(levels.len(), 3);
    let csv = String::from_utf8(export(&tree, ExportFormat::CsvLinks)).unwrap();
    assert_eq!(csv.lines().count(), tree.links.len() + 1);
}
