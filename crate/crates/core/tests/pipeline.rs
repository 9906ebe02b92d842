use std::collections::HashSet;
use std::fs;
use std::path::Path;

use capmatch::pipeline::{artifact, run_pipeline, run_stage, PipelineConfig, Submission, STAGES, SUBMISSION_WIDTH};
use capmatch::retrieval::Ranking;
use capmatch::Error;

fn quick(dir: &Path) -> PipelineConfig {
    PipelineConfig {
        epochs: 3,
        rerank_epochs: 1,
        ..PipelineConfig::preset("synthetic-small", dir).unwrap()
    }
}

#[test]
fn both_candidate_settings_are_rejected_up_front() {
    let err = PipelineConfig::from_toml("preset = \"synthetic-small\"\ncandidate_k = 10\ncandidate_fraction = 0.1\n");
    assert!(matches!(err, Err(Error::Config(_))));

    let dir = tempfile::tempdir().unwrap();
    let mut config = quick(dir.path());
    config.candidate_k = Some(10);
    config.candidate_fraction = Some(0.1);
    assert!(run_pipeline(&config).is_err());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0, "nothing should be written");
}

#[test]
fn stage_errors_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick(dir.path());
    // no candidates on disk yet
    match run_stage(&config, "rerank") {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "rerank"),
        other => panic!("expected a stage error, got {other:?}"),
    }
    assert!(run_stage(&config, "nonsense").is_err());
}

#[test]
fn full_run_regenerates_and_supports_external_scores() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick(dir.path());
    let (submission, metrics) = run_pipeline(&config).unwrap();

    assert_eq!(submission.rows.len(), config.holdout);
    for (_, ids) in &submission.rows {
        assert_eq!(ids.iter().collect::<HashSet<_>>().len(), SUBMISSION_WIDTH);
    }
    let on_disk = fs::read_to_string(dir.path().join(artifact::SUBMISSION)).unwrap();
    assert_eq!(Submission::from_tsv(&on_disk).unwrap(), submission);
    assert!(metrics.ndcg5 > 0.0 && metrics.ndcg5 <= 1.0);
    assert!(fs::read_dir(dir.path())
        .unwrap()
        .all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".incomplete")));

    // Dropping downstream artifacts and rerunning those stages gives the same bytes.
    let downstream = [artifact::RERANKED, artifact::RERANK_STATS, artifact::SUBMISSION, artifact::METRICS];
    let before: Vec<Vec<u8>> = downstream.iter().map(|f| fs::read(dir.path().join(f)).unwrap()).collect();
    for f in downstream {
        fs::remove_file(dir.path().join(f)).unwrap();
    }
    let from = STAGES.iter().position(|s| *s == "rerank").unwrap();
    for name in &STAGES[from..] {
        run_stage(&config, name).unwrap();
    }
    let after: Vec<Vec<u8>> = downstream.iter().map(|f| fs::read(dir.path().join(f)).unwrap()).collect();
    assert_eq!(before, after);

    // Imported scores: reverse the candidate order by giving earlier candidates lower scores.
    let candidates =
        Ranking::from_candidate_tsv(&fs::read_to_string(dir.path().join(artifact::CANDIDATES)).unwrap()).unwrap();
    let mut table = String::from("query_id\tcaption_id\tscore\n");
    for list in &candidates.lists {
        let n = list.items.len();
        for (i, s) in list.items.iter().enumerate() {
            table.push_str(&format!("{}\t{}\t{}\n", list.query_id, s.caption_id, (i + 1) as f64 / (n + 1) as f64));
        }
    }
    let scores = dir.path().join("external.tsv");
    fs::write(&scores, table).unwrap();
    let external = PipelineConfig {
        external_scores: Some(scores),
        ..config.clone()
    };
    run_stage(&external, "rerank").unwrap();
    let reranked =
        Ranking::from_ranking_tsv(&fs::read_to_string(dir.path().join(artifact::RERANKED)).unwrap()).unwrap();
    for (c, r) in candidates.lists.iter().zip(&reranked.lists) {
        assert_eq!(c.items.first().unwrap().caption_id, r.items.last().unwrap().caption_id);
    }

    // A score file missing a candidate pair is an error naming the stage.
    fs::write(external.external_scores.as_ref().unwrap(), "1\t2\t0.5\n").unwrap();
    assert!(matches!(run_stage(&external, "rerank"), Err(Error::Stage { stage: "rerank", .. })));
}
