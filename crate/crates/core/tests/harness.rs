use std::fs;

use neurons::harness::{layout, run_pipeline, ExperimentConfig, PipelineOptions, RunManifest, STAGES};
use neurons::inference::StubT2V;
use neurons::Error;

fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::parse(
        "seed = 11\n\
         [data]\nnum_clips = 4\nvoxels = 256\n\
         [brain]\nepochs = 3\n\
         [decoupler]\nepochs = 3\n\
         [eval]\nrepeats = 10\n",
    )
    .unwrap();
    c.data.seed = c.seed;
    c
}

fn run(config: &ExperimentConfig, dir: &std::path::Path, stop_after: Option<&str>) -> neurons::Result<neurons::harness::PipelineOutcome> {
    let backend = StubT2V::default();
    run_pipeline(
        config,
        dir,
        &PipelineOptions {
            backend: &backend,
            stop_after,
        },
    )
}

#[test]
fn interrupted_run_resumes_and_skips_completed_stages() {
    let config = small_config();
    let dir = tempfile::tempdir().unwrap();
    let first = run(&config, dir.path(), Some("train-brain")).unwrap();
    assert_eq!(first.ran, ["prepare-data", "train-brain"]);
    assert!(first.report.is_none());
    let brain_bytes = fs::read(dir.path().join(layout::BRAIN)).unwrap();

    let second = run(&config, dir.path(), None).unwrap();
    assert_eq!(second.ran, ["train-decoupler", "infer", "eval"]);
    assert_eq!(fs::read(dir.path().join(layout::BRAIN)).unwrap(), brain_bytes);
    assert_eq!(second.manifest.stages.len(), STAGES.len());
    second.manifest.verify(dir.path()).unwrap();
    assert_eq!(second.manifest.report.as_deref(), Some(layout::REPORT_JSON));

    let third = run(&config, dir.path(), None).unwrap();
    assert!(third.ran.is_empty());
    assert_eq!(third.report, second.report);
}

#[test]
fn reruns_are_identical_and_deleted_checkpoints_are_rebuilt() {
    let config = small_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run(&config, a.path(), None).unwrap();
    let rb = run(&config, b.path(), None).unwrap();
    assert!(ra.manifest.same_lineage(&rb.manifest));
    assert_eq!(ra.report, rb.report);
    assert_eq!(
        fs::read(a.path().join(layout::REPORT_CSV)).unwrap(),
        fs::read(b.path().join(layout::REPORT_CSV)).unwrap()
    );

    fs::remove_file(a.path().join(layout::BRAIN)).unwrap();
    let again = run(&config, a.path(), None).unwrap();
    assert_eq!(again.ran, ["train-brain", "train-decoupler", "infer", "eval"]);
    assert_eq!(again.report, ra.report);
    assert!(again.manifest.same_lineage(&ra.manifest));
    assert!(RunManifest::load(a.path()).unwrap().same_lineage(&ra.manifest));
}

#[test]
fn different_config_in_same_directory_is_rejected() {
    let config = small_config();
    let dir = tempfile::tempdir().unwrap();
    run(&config, dir.path(), Some("prepare-data")).unwrap();
    let other = config.clone().with_seed(12);
    assert!(matches!(run(&other, dir.path(), None), Err(Error::Config { .. })));
}
