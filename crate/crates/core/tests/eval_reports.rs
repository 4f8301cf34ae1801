//! Metric aggregation over recorded score fixtures.

use std::fs;
use std::path::PathBuf;

use npc_core::eval::{
    geneval_accuracy, imagine_report, read_score_records, write_report, ScoreRecord, GENEVAL_TASKS,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/eval")
        .join(name)
}

fn load(name: &str) -> Vec<ScoreRecord> {
    read_score_records(fs::read(fixture(name)).unwrap().as_slice()).unwrap()
}

/// Compare against a frozen file; `NPC_BLESS=1` rewrites it.
fn golden(name: &str, actual: &str) {
    let path = fixture(name);
    if std::env::var_os("NPC_BLESS").is_some() {
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read_to_string(&path).unwrap();
    assert_eq!(actual, expected, "golden mismatch for {name}");
}

#[test]
fn geneval_fourteen_outcomes_match_golden() {
    let r = geneval_accuracy(&load("geneval_14.jsonl")).unwrap();
    let per: Vec<(usize, usize)> = r
        .per_task
        .iter()
        .map(|t| (t.accuracy.correct, t.accuracy.total))
        .collect();
    assert_eq!(
        per,
        [(2, 2), (1, 2), (0, 2), (1, 2), (2, 2), (1, 2), (1, 2)]
    );
    assert_eq!((r.overall.correct, r.overall.total), (8, 14));
    assert!(r.unknown_tasks.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let (json, txt) = write_report(dir.path(), "geneval", &r, &r.to_table("NPC")).unwrap();
    golden("geneval_14.report.json", &fs::read_to_string(json).unwrap());
    golden("geneval_14.report.txt", &fs::read_to_string(txt).unwrap());
}

#[test]
fn geneval_report_is_order_independent() {
    let mut rs = load("geneval_14.jsonl");
    let a = geneval_accuracy(&rs).unwrap();
    rs.reverse();
    assert_eq!(a, geneval_accuracy(&rs).unwrap());
}

#[test]
fn geneval_overall_of_equal_sized_tasks() {
    // Seven tasks of 40 prompts with the published per-task counts.
    let correct = [22, 27, 14, 21, 22, 29, 25];
    let rs: Vec<ScoreRecord> = GENEVAL_TASKS
        .iter()
        .zip(correct)
        .flat_map(|(task, c)| {
            (0..40).map(move |i| ScoreRecord {
                prompt_id: format!("{task}-{i}"),
                task_type: Some(task.to_string()),
                correct: Some(i < c),
                imagine_scores: None,
                evaluator_id: None,
            })
        })
        .collect();
    let r = geneval_accuracy(&rs).unwrap();
    let cells: Vec<f64> = r
        .per_task
        .iter()
        .map(|t| t.accuracy.accuracy.unwrap())
        .collect();
    assert_eq!(cells, [0.550, 0.675, 0.350, 0.525, 0.550, 0.725, 0.625]);
    let overall = r.overall.accuracy.unwrap();
    assert!((overall - 0.571).abs() <= 0.0005, "{overall}");
    assert!((r.mean_of_tasks.unwrap() - overall).abs() < 1e-12);
}

#[test]
fn adding_a_correct_outcome_never_lowers_overall() {
    let mut rs = load("geneval_14.jsonl");
    let before = geneval_accuracy(&rs).unwrap().overall.accuracy.unwrap();
    rs.push(ScoreRecord {
        prompt_id: "extra".into(),
        task_type: Some("Count".into()),
        correct: Some(true),
        imagine_scores: None,
        evaluator_id: None,
    });
    assert!(geneval_accuracy(&rs).unwrap().overall.accuracy.unwrap() >= before);
}

#[test]
fn imagine_fixture_reproduces_the_published_row() {
    let r = imagine_report(&load("imagine_table.jsonl")).unwrap();
    let cells = [6.31, 6.76, 7.57, 6.52];
    for (c, want) in r.per_category.iter().zip(cells) {
        assert!(
            (c.mean.unwrap() - want).abs() < 1e-9,
            "{}: {:?}",
            c.category,
            c.mean
        );
    }
    // Categories differ in size, so the overall mean is prompt-weighted.
    let overall = r.overall.mean.unwrap();
    assert!((overall - 6.80).abs() <= 0.005, "{overall}");
    let weighted: f64 = r
        .per_category
        .iter()
        .map(|c| c.mean.unwrap() * c.count as f64)
        .sum::<f64>()
        / r.overall.count as f64;
    assert!((weighted - overall).abs() < 1e-12);

    let dir = tempfile::tempdir().unwrap();
    let (json, txt) = write_report(dir.path(), "imagine", &r, &r.to_table("NPC")).unwrap();
    golden(
        "imagine_table.report.json",
        &fs::read_to_string(json).unwrap(),
    );
    golden(
        "imagine_table.report.txt",
        &fs::read_to_string(txt).unwrap(),
    );
}

#[test]
fn empty_outcomes_give_valid_reports() {
    let g = geneval_accuracy(&[]).unwrap();
    assert_eq!(g.overall.total, 0);
    assert!(g
        .per_task
        .iter()
        .all(|t| t.accuracy.total == 0 && t.accuracy.accuracy.is_none()));
    let i = imagine_report(&[]).unwrap();
    assert_eq!(i.overall.count, 0);
    let dir = tempfile::tempdir().unwrap();
    let (json, _) = write_report(dir.path(), "empty", &g, &g.to_table("NPC")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["overall"]["total"], 0);
}
