use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use humeval_core::aggregation::{score_reference_side, score_submission, AggregationPolicy, Combine, Labeling};
use humeval_core::config::default_task_specs;
use humeval_core::dispatch::{build_batches, AnnotationBackend, BatchPlan, DispatchConfig, Dispatcher, SimulatedPool};
use humeval_core::model::{Instance, PresentationKey, SchemeKind, Split, Submission, SubmissionStatus, Usd};
use humeval_core::sim::{AnnotatorModel, SimulatedAnnotator};

#[test]
fn paired_labels_are_unscrambled_before_scoring() {
    let task = default_task_specs().into_iter().find(|t| t.task_id == "xsum").unwrap();
    let instances: BTreeMap<String, Instance> = (0..60)
        .map(|i| {
            let id = format!("doc-{i:03}");
            let inst = Instance {
                instance_id: id.clone(),
                input_fields: [("article".to_string(), format!("article {i}"))].into(),
                references: vec![format!("gold summary {i}")],
                split: Split::Test,
            };
            (id, inst)
        })
        .collect();
    let ids: Vec<String> = instances.keys().cloned().collect();
    let submission = Submission {
        submission_id: "sub-000001".into(),
        task_id: "xsum".into(),
        submitter: "team".into(),
        created_at: Utc.with_ymd_and_hms(2021, 3, 1, 12, 0, 0).unwrap(),
        predictions: ids
            .iter()
            .map(|id| (id.clone(), format!("system summary of {id}")))
            .collect(),
        status: SubmissionStatus::Sampled,
    };
    let release = Utc.with_ymd_and_hms(2021, 3, 2, 18, 0, 0).unwrap();
    let plan = BatchPlan {
        labels_per_instance: 2,
        batch_size: 20,
        permutation_seed: 5,
    };
    let batches = build_batches(
        &submission,
        &ids,
        &task,
        &instances,
        plan,
        release,
        Usd::from_micros(60_000),
    )
    .unwrap();

    let annotators = (0..4)
        .map(|i| SimulatedAnnotator {
            annotator_id: format!("sim-{i}"),
            model: AnnotatorModel {
                bias: 0.0,
                noise_sd: 0.0,
            },
        })
        .collect();
    // Gold text is always rated highly, system text poorly.
    let judge = Arc::new(|_: &str, _: &str, text: &str| if text.starts_with("gold") { 0.95 } else { 0.3 });
    let mut pool = SimulatedPool::new(annotators, judge, 11).unwrap();
    let mut d = Dispatcher::new(DispatchConfig::default());
    for p in pool.profiles(["xsum"]) {
        d.register(p).unwrap();
    }
    d.create(batches).unwrap();
    for batch_id in d.release_due(release) {
        pool.release(&d.batch(&batch_id).unwrap().published()).unwrap();
    }
    for c in pool.poll(release).unwrap() {
        d.complete(&c, release).unwrap();
    }
    assert_eq!(d.progress("sub-000001"), (600, 600));

    let records = d.records_for("sub-000001");
    let a_gold = records
        .iter()
        .filter(|r| r.presentation_key == PresentationKey::AGold)
        .count();
    assert!((200..400).contains(&a_gold), "gold shown first {a_gold} of 600 times");

    let policy = AggregationPolicy {
        elicitation: SchemeKind::Likert5,
        combine: Combine::Mean,
        labeling: Labeling::Multilabeling { k: 2 },
    };
    let scores = score_submission(&records, &task, &policy).unwrap();
    let reference = score_reference_side(&records).unwrap();
    for aspect in task.aspect_names() {
        assert!(scores[aspect].estimate <= 0.5, "{aspect}: {}", scores[aspect].estimate);
        assert!(reference[aspect] >= 0.75, "{aspect}: {}", reference[aspect]);
        assert_eq!(scores[aspect].instance_scores.len(), 60);
    }
}
