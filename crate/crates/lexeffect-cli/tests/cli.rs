//! End-to-end CLI behavior: exit codes, file handoffs between stages and
//! the cross-domain perception path.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lexeffect::candidates::LseTuple;
use lexeffect::io;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_lexeffect")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(binary())
        .arg("--config")
        .arg(dir.join("lexeffect.toml"))
        .args(args)
        .output()
        .unwrap()
}

fn base_config(out: &str) -> String {
    format!(
        r#"
seed = 7
output_dir = "{out}"

[[corpora]]
domain = "synthetic"
path = "{out}/corpus.synthetic.jsonl"

[corpus]
min_doc_count = 2
tag_lexicon = "{out}/tags.synthetic.tsv"

[candidates]
paraphrase_table = "{out}/paraphrases.synthetic.tsv"

[linear]
l2_strength = 0.001

[estimate]
estimators = ["knn", "vt_rf", "cf_rf", "csf"]
knn_k = 10

[forest]
n_trees = 30

[synth]
n_sentences = 500
vocabulary_size = 40

[[synth.pairs]]
control_word = "plainword"
treatment_word = "fancyword"
effect = 0.35

[[synth.pairs]]
control_word = "dullword"
treatment_word = "blandword"
effect = 0.0

[rct]
top_pairs = 2
per_pair = 3

[[rct.dummies]]
text = "certainly the finest example sentence"
expected = "high"

[[rct.dummies]]
text = "certainly the worst example sentence"
expected = "low"
"#
    )
}

#[test]
fn unknown_estimator_exits_with_schema_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("lexeffect.toml"), base_config("out")).unwrap();
    assert!(run_in(dir.path(), &["synth"]).status.success());
    assert!(run_in(dir.path(), &["candidates"]).status.success());
    let output = run_in(dir.path(), &["estimate", "--estimators", "knn,bogus"]);
    assert_eq!(output.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("--estimators"), "stderr: {stderr}");
    assert!(stderr.contains("\"error\""), "stderr: {stderr}");
}

#[test]
fn missing_inputs_exit_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("lexeffect.toml"), base_config("out")).unwrap();
    // No synth ran: the corpus file is missing.
    let output = run_in(dir.path(), &["candidates"]);
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("\"error\""), "stderr: {stderr}");
}

#[test]
fn rct_round_trip_and_eval_against_rct() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    std::fs::write(dir.path().join("lexeffect.toml"), base_config("out")).unwrap();
    for command in ["synth", "candidates", "estimate"] {
        let output = run_in(dir.path(), &[command]);
        assert!(
            output.status.success(),
            "{command}: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let output = run_in(dir.path(), &["rank", "--estimator", "knn"]);
    assert!(output.status.success());
    assert!(out.join("ranked.knn.synthetic.jsonl").exists());

    let output = run_in(dir.path(), &["rct-sample"]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let (_, batches): (_, Vec<lexeffect::rct::Batch>) =
        io::read_jsonl(&out.join("batches.synthetic.jsonl")).unwrap();
    assert!(!batches.is_empty());

    // Simulated raters: treatment variants score high, control variants
    // low, and all dummies are answered correctly except for one worker
    // who must be disqualified.
    let mut ratings = Vec::new();
    for batch in &batches {
        for worker in 0..3 {
            let worker_id = format!("{}-w{worker}", batch.batch_id);
            for item in &batch.items {
                // Per-sentence wobble keeps ratings non-constant within a
                // batch so worker agreement is defined.
                let wobble = (item.sentence_key.bytes().map(u64::from).sum::<u64>() % 2) as u8;
                let rating = if item.dummy {
                    let expect_high = item.text.contains("finest");
                    match (expect_high, worker) {
                        (true, 2) => 1, // worker 2 fails the check
                        (true, _) => 5,
                        (false, _) => 1,
                    }
                } else if item.sentence_key.ends_with("|treatment") {
                    4 + wobble
                } else {
                    1 + wobble
                };
                ratings.push(lexeffect::rct::RatingRecord {
                    worker_id: worker_id.clone(),
                    batch_id: batch.batch_id.clone(),
                    sentence_key: item.sentence_key.clone(),
                    rating,
                });
            }
        }
    }
    let ratings_path = dir.path().join("ratings.csv");
    io::write_ratings(&ratings_path, &ratings).unwrap();

    let output = run_in(
        dir.path(),
        &["rct-aggregate", "--ratings", ratings_path.to_str().unwrap()],
    );
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("disqualified"), "stderr: {stderr}");

    let (_, effects): (_, Vec<lexeffect::rct::AggregatedEffect>) =
        io::read_jsonl(&out.join("rct_effects.synthetic.jsonl")).unwrap();
    assert!(!effects.is_empty());
    for effect in &effects {
        // Medians: treatment in {4,5} -> 4 or 4.5, control in {1,2}.
        assert!(effect.effect >= 2.0 && effect.effect <= 4.0);
    }
    assert!(out.join("agreement.synthetic.json").exists());
    assert!(out.join("labeled_tuples.synthetic.jsonl").exists());

    let output = run_in(dir.path(), &["eval", "--reference", "rct"]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.synthetic.json")).unwrap())
            .unwrap();
    assert_eq!(metrics["reference"], "rct");
    assert!(metrics["n_tuples"].as_u64().unwrap() > 0);
}

/// Builds one source domain: synthetic corpus plus RCT-labeled tuples
/// derived from the planted truths (rating-scale effect = 4 x delta).
fn build_source_domain(dir: &Path, name: &str, seed: u64) -> (PathBuf, PathBuf) {
    let out_name = format!("out-{name}");
    let config = base_config(&out_name).replace("seed = 7", &format!("seed = {seed}"));
    let config_path = dir.join(format!("{name}.toml"));
    std::fs::write(&config_path, config).unwrap();
    let output = Command::new(binary())
        .arg("--config")
        .arg(&config_path)
        .arg("synth")
        .output()
        .unwrap();
    assert!(output.status.success());

    let out = dir.join(&out_name);
    let corpus_path = out.join("corpus.synthetic.jsonl");
    let (_, truths): (_, Vec<lexeffect::synth::GroundTruth>) =
        io::read_jsonl(&out.join("truth.synthetic.jsonl")).unwrap();
    let labeled: Vec<LseTuple> = truths
        .iter()
        .take(120)
        .map(|t| {
            let mut tuple = LseTuple::new(
                lexeffect::candidates::SubstitutionPair {
                    control_word: t.control_word.clone(),
                    treatment_word: t.treatment_word.clone(),
                    equivalence: 0.5,
                    pos: "NN".into(),
                },
                t.sentence_id.clone(),
            );
            tuple.rct_effect = Some(t.effect * 4.0);
            tuple
        })
        .collect();
    let tuples_path = out.join("labeled_tuples.synthetic.jsonl");
    io::write_jsonl(&tuples_path, None, &labeled).unwrap();
    (corpus_path, tuples_path)
}

#[test]
fn perception_classifier_transfers_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus_a, tuples_a) = build_source_domain(dir.path(), "srca", 101);
    let (corpus_b, tuples_b) = build_source_domain(dir.path(), "srcb", 202);

    let mut config = base_config("out");
    config.push_str(&format!(
        r#"
[[perception.train]]
domain = "srca"
tuples = "{}"
corpus = "{}"

[[perception.train]]
domain = "srcb"
tuples = "{}"
corpus = "{}"
"#,
        tuples_a.display(),
        corpus_a.display(),
        tuples_b.display(),
        corpus_b.display()
    ));
    std::fs::write(dir.path().join("lexeffect.toml"), config).unwrap();

    for command in ["synth", "candidates"] {
        let output = run_in(dir.path(), &[command]);
        assert!(output.status.success());
    }
    let output = run_in(
        dir.path(),
        &["estimate", "--estimators", "knn,perception_clf"],
    );
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );

    let out = dir.path().join("out");
    assert!(out.join("perception_model.synthetic.json").exists());
    let (_, estimates): (_, Vec<LseTuple>) =
        io::read_jsonl(&out.join("estimates.synthetic.jsonl")).unwrap();
    assert!(!estimates.is_empty());
    let mut positive_pair_scores = Vec::new();
    let mut null_pair_scores = Vec::new();
    for tuple in &estimates {
        let score = tuple.estimates["perception_clf"];
        assert!((0.0..=1.0).contains(&score));
        if tuple.pair.control_word == "plainword" {
            positive_pair_scores.push(score);
        } else {
            null_pair_scores.push(score);
        }
    }
    // The planted-effect pair should score above the null pair on
    // average: its treatment word carries a positive coefficient.
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&positive_pair_scores) > mean(&null_pair_scores),
        "positive {} vs null {}",
        mean(&positive_pair_scores),
        mean(&null_pair_scores)
    );
}
