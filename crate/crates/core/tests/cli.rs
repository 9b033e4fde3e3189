mod common;

use std::path::Path;

use clarify_core::cli::{DecisionRecord, RunMeta};
use clarify_core::dataset::{read_records, read_single, QueryRecord};
use clarify_core::engine::{Decision, Episode};
use clarify_core::metrics::EvalReport;
use clarify_core::prefs::{CandidateKind, LabelSummary, PreferenceRecord};
use clarify_core::sft::{SftRow, SftStats, Skipped};
use common::{clarify, fixture_dir};

fn ok(args: &[&str]) -> String {
    let o = clarify(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn code(args: &[&str]) -> (i32, String) {
    let o = clarify(args);
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stderr).into_owned())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    let cfg = std::fs::read_to_string(fixture_dir().join("run.json"))
        .unwrap()
        .replace("\"simulator\": \"simulator\"", "\"simulator\": \"ghost\"");
    std::fs::write(&bad, cfg).unwrap();
    for f in ["assistant.json", "simulator.json", "rm.json", "decider.json", "oracle.json"] {
        std::fs::copy(fixture_dir().join(f), tmp.path().join(f)).unwrap();
    }
    let out = tmp.path().join("o");
    let (c, err) = code(&["simulate", "--config", s(&bad), "--queries", "queries.jsonl", "--out", s(&out)]);
    assert_eq!(c, 2);
    assert!(err.contains("ghost"), "{err}");
    assert!(!out.exists(), "no partial output on config errors");

    let (c, _) = code(&["no-such-command"]);
    assert_eq!(c, 2);
    let (c, _) = code(&["simulate", "--config", "run.json", "--queries", "missing.jsonl", "--out", s(&out)]);
    assert_eq!(c, 1);
    let (c, err) = code(&["label-prefs", "--config", "run.json", "--queries", "queries.jsonl", "--ranker", "likelihood", "--out", s(&out)]);
    assert_eq!(c, 3);
    assert!(err.contains("score"), "{err}");
    assert!(!out.exists(), "capability errors happen before any output");
    let (c, _) = code(&["simulate", "--config", "run.json", "--queries", "queries.jsonl", "--workers", "0", "--out", s(&out)]);
    assert_eq!(c, 2);
}

#[test]
fn forced_decisions_override_the_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("forced");
    ok(&["simulate", "--config", "run.json", "--queries", "queries.jsonl", "--decisions", "decisions.jsonl", "--out", s(&out)]);
    let episodes: Vec<Episode> = read_records(&out.join("episodes.jsonl")).unwrap();
    let by_id = |id: &str| episodes.iter().find(|e| e.query_id == id).unwrap().clone();
    let u2 = by_id("u2");
    assert_eq!((u2.forced, u2.is_clarify, u2.model_turns), (Some(Decision::Clarify), true, 2));
    let a6 = by_id("a6");
    assert_eq!((a6.forced, a6.is_clarify), (Some(Decision::Direct), false));
    assert_eq!(a6.direct_answers.as_deref(), Some(&["30,000".to_owned()][..]));
    assert_eq!(by_id("u1").forced, None);

    let report: EvalReport = read_single(&out.join("eval_report.json")).unwrap();
    let f1 = |id: &str| report.per_query_f1.iter().find(|q| q.query_id == id).unwrap().f1;
    assert_eq!(f1("u2"), 1.0);
    // one pred matching one of four groups: P = 1, R = 1/4
    assert_eq!(f1("a6"), 0.4);
}

#[test]
fn sampled_direct_answers() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sampled");
    ok(&["simulate", "--config", "run.json", "--queries", "queries.jsonl", "--mode", "force-direct", "--direct-samples", "3", "--out", s(&out)]);
    let episodes: Vec<Episode> = read_records(&out.join("episodes.jsonl")).unwrap();
    assert!(episodes.iter().all(|e| !e.is_clarify && e.direct_answers.as_ref().unwrap().len() == 1));
}

#[test]
fn match_preferences_on_the_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("prefs");
    ok(&["label-prefs", "--config", "run.json", "--queries", "queries.jsonl", "--ranker", "match", "--out", s(&out)]);
    let pairs: Vec<PreferenceRecord> = read_records(&out.join("preferences.jsonl")).unwrap();
    use CandidateKind::{Clarify as C, Direct as D};
    let got: Vec<(&str, CandidateKind, f64, CandidateKind, f64)> = pairs
        .iter()
        .map(|p| (p.query_id.as_str(), p.preferred.kind, p.score_preferred, p.rejected.kind, p.score_rejected))
        .collect();
    let want = vec![
        ("u1", D, 1.0, C, 1.0),
        ("u2", C, 1.0, D, 0.0),
        ("u3", D, 1.0, C, 1.0),
        ("u4", D, 1.0, C, 0.0),
        ("u5", D, 0.0, C, 0.0),
        ("u6", D, 1.0, C, 0.0),
        ("a1", C, 1.0, C, 0.5),
        ("a1", C, 1.0, D, 0.5),
        ("a1", D, 0.5, C, 0.5),
        ("a2", C, 2.0 / 3.0, D, 1.0 / 3.0),
        ("a3", D, 0.5, C, 0.5),
        ("a4", C, 1.0, D, 0.5),
        ("a5", C, 0.5, D, 0.0),
        ("a6", C, 0.5, D, 0.25),
    ];
    assert_eq!(got, want);
    assert!(pairs.iter().all(|p| p.score_preferred >= p.score_rejected));
    assert_eq!(pairs[0].prompt, "Question: who wrote the novel moby dick\nResponse:");

    let summary: LabelSummary = read_single(&out.join("label_summary.json")).unwrap();
    assert_eq!((summary.queries, summary.candidates, summary.pairs), (12, 25, 14));

    let again = tmp.path().join("prefs2");
    ok(&["label-prefs", "--config", "run.json", "--queries", "queries.jsonl", "--ranker", "match", "--workers", "1", "--out", s(&again)]);
    for f in ["preferences.jsonl", "candidates.jsonl", "label_summary.json"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn reward_model_ranking_follows_the_script() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("rm");
    ok(&["label-prefs", "--config", "run.json", "--queries", "queries.jsonl", "--ranker", "rm", "--out", s(&out)]);
    let pairs: Vec<PreferenceRecord> = read_records(&out.join("preferences.jsonl")).unwrap();
    assert_eq!(pairs.len(), 1);
    assert_eq!(pairs[0].preferred.text, "Clarifying Question: Do you mean the city?");
    assert_eq!((pairs[0].score_preferred, pairs[0].score_rejected), (0.9, 0.2));
}

#[test]
fn sft_generation_from_human_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let feasible = tmp.path().join("feasible.jsonl");
    ok(&["gen-feasible", "--queries", "queries.jsonl", "--source", "human", "--out", s(&feasible)]);
    let out = tmp.path().join("sft");
    ok(&["gen-sft", "--config", "run.json", "--feasible", s(&feasible), "--out", s(&out)]);
    let skipped: Vec<Skipped> = read_records(&out.join("sft_skipped.jsonl")).unwrap();
    let reasons: Vec<String> = skipped
        .iter()
        .map(|s| format!("{}:{}", s.query_id, serde_json::to_value(s.reason).unwrap().as_str().unwrap()))
        .collect();
    assert_eq!(
        reasons,
        [
            "u1:single_answer", "u2:single_answer", "u3:single_answer", "u4:single_answer", "u5:single_answer",
            "u6:single_answer", "a2:oracle_none", "a3:parse_error", "a4:no_matched_pairs",
        ]
    );
    let rows: Vec<SftRow> = read_records(&out.join("sft_flat.jsonl")).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.q.starts_with("Clarifying Question: ")));
    let stats: SftStats = read_single(&out.join("sft_stats.json")).unwrap();
    assert_eq!((stats.n_xq, stats.n_xqay), (3, 8));
    assert_eq!(stats.n_xq_train + stats.n_xq_dev, 3);
    let meta: RunMeta = read_single(&out.join("run_meta.json")).unwrap();
    assert_eq!(meta.command, "gen-sft");
    assert_eq!(meta.seed, Some(7));
    assert!(meta.template_versions.contains_key("sft_gen"));
}

#[test]
fn decisions_from_a_prompted_decider_and_at_random() {
    let tmp = tempfile::tempdir().unwrap();
    let procot = tmp.path().join("procot.jsonl");
    ok(&["decide", "--queries", "queries.jsonl", "--config", "run.json", "--out", s(&procot)]);
    let got: Vec<DecisionRecord> = read_records(&procot).unwrap();
    // u6's decider output has no decision line and is left out
    assert_eq!(got.len(), 11);
    assert!(got.iter().all(|d| (d.decision == Decision::Clarify) == d.query_id.starts_with('a')));

    let random = tmp.path().join("random.jsonl");
    ok(&["decide", "--queries", "queries.jsonl", "--random-pct", "0.25", "--seed", "9", "--out", s(&random)]);
    let got: Vec<DecisionRecord> = read_records(&random).unwrap();
    assert_eq!(got.iter().filter(|d| d.decision == Decision::Direct).count(), 3);
    let (c, _) = code(&["decide", "--queries", "queries.jsonl", "--random-pct", "1.5", "--out", s(&random)]);
    assert_eq!(c, 2);
}

#[test]
fn report_and_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("auto");
    let b = tmp.path().join("forced");
    ok(&["simulate", "--config", "run.json", "--queries", "queries.jsonl", "--out", s(&a)]);
    ok(&["simulate", "--config", "run.json", "--queries", "queries.jsonl", "--decisions", "decisions.jsonl", "--out", s(&b)]);
    let table = ok(&["report", "--runs", s(&a), s(&b)]);
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("System") && lines[0].contains("Ambig Acc"));
    assert!(lines[2].starts_with("auto") && lines[2].contains("52.8"), "{table}");
    let json: serde_json::Value = serde_json::from_str(&ok(&["report", "--runs", s(&a), "--format", "json"])).unwrap();
    assert_eq!(json[0]["eval"]["n_by_split"]["all"], 12);

    let same: serde_json::Value = serde_json::from_str(&ok(&["compare", "--a", s(&a), "--b", s(&a), "--bootstrap", "500"])).unwrap();
    assert_eq!(same["p_value"], 1.0);
    let diff: serde_json::Value = serde_json::from_str(&ok(&["compare", "--a", s(&a), "--b", s(&b), "--bootstrap", "500", "--seed", "4"])).unwrap();
    // u2 gains 1.0, a6 loses 0.1
    assert!((diff["mean_diff"].as_f64().unwrap() - 0.9 / 12.0).abs() < 1e-12);
}

#[test]
fn run_meta_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["simulate", "--config", "run.json", "--queries", "queries.jsonl", "--out", s(&a)]);
    ok(&["simulate", "--config", "run.json", "--queries", "queries.jsonl", "--out", s(&b)]);
    let meta = std::fs::read(a.join("run_meta.json")).unwrap();
    assert_eq!(meta, std::fs::read(b.join("run_meta.json")).unwrap());
    let meta: RunMeta = read_single(&a.join("run_meta.json")).unwrap();
    assert_eq!(meta.config_digest.as_ref().map(String::len), Some(64));
    assert_eq!(meta.template_versions.len(), 6);
}

#[test]
fn prep_and_rlhf_pool() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("nq.jsonl");
    std::fs::write(
        &raw,
        "{\"question\": \"who wrote hamlet\", \"answer\": [\"William Shakespeare\", \"Shakespeare\"]}\n\
         {\"question\": \"capital of peru\", \"answer\": [\"Lima\"]}\n\
         not json\n",
    )
    .unwrap();
    let native = tmp.path().join("native.jsonl");
    let (c, err) = code(&["prep", "--input", s(&raw), "--schema", "nq-open", "--out", s(&native)]);
    assert_eq!(c, 1);
    assert!(err.contains("line 3"), "{err}");
    let stats: serde_json::Value =
        serde_json::from_str(&ok(&["prep", "--input", s(&raw), "--schema", "nq-open", "--out", s(&native), "--lenient"])).unwrap();
    assert_eq!(stats["total"].as_u64().unwrap() + stats["unlabeled"].as_u64().unwrap(), 2);
    let records: Vec<QueryRecord> = read_records(&native).unwrap();
    assert_eq!(records.len(), 2);

    let out = tmp.path().join("rl");
    let summary: serde_json::Value = serde_json::from_str(&ok(&[
        "rlhf-pool", "--queries", "queries.jsonl", "--sft-queries", s(&native), "--dev-ratio", "0.5", "--out", s(&out),
    ]))
    .unwrap();
    assert_eq!(summary["excluded"], 0);
    let train: Vec<QueryRecord> = read_records(&out.join("rlhf_train.jsonl")).unwrap();
    let dev: Vec<QueryRecord> = read_records(&out.join("rlhf_dev.jsonl")).unwrap();
    assert_eq!(train.len() + dev.len(), 12);
    let summary: serde_json::Value = serde_json::from_str(&ok(&[
        "rlhf-pool", "--queries", "queries.jsonl", "--sft-queries", "queries.jsonl", "--out", s(&out),
    ]))
    .unwrap();
    assert_eq!(summary["excluded"], 12);
}
