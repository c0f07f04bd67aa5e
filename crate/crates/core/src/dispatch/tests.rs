use std::sync::Arc;

use chrono::TimeZone;

use super::*;
use crate::config::default_task_specs;
use crate::model::Split;
use crate::sim::{AnnotatorModel, SimulatedAnnotator};

fn task(id: &str) -> TaskSpec {
    default_task_specs().into_iter().find(|t| t.task_id == id).unwrap()
}

fn instances(n: usize, task: &TaskSpec) -> BTreeMap<String, Instance> {
    (0..n)
        .map(|i| {
            let id = format!("{}-{i}", task.task_id);
            let fields = [
                ("question", "why is the sky blue?"),
                ("source", "Das ist gut."),
                ("article", "A long article."),
                ("observation_1", "o1"),
                ("observation_2", "o2"),
            ]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
            let inst = Instance {
                instance_id: id.clone(),
                input_fields: fields,
                references: vec![format!("gold {i}")],
                split: Split::Test,
            };
            (id, inst)
        })
        .collect()
}

fn submission(task: &TaskSpec, ids: &[String]) -> Submission {
    Submission {
        submission_id: "sub-000001".into(),
        task_id: task.task_id.clone(),
        submitter: "team".into(),
        created_at: Utc.with_ymd_and_hms(2021, 3, 1, 12, 0, 0).unwrap(),
        predictions: ids.iter().map(|id| (id.clone(), format!("model {id}"))).collect(),
        status: SubmissionStatus::Sampled,
    }
}

fn release() -> DateTime<Utc> {
    // 10:00 Pacific on Tuesday 2021-03-02.
    Utc.with_ymd_and_hms(2021, 3, 2, 18, 0, 0).unwrap()
}

fn plan(k: usize) -> BatchPlan {
    BatchPlan {
        labels_per_instance: k,
        batch_size: 20,
        permutation_seed: 99,
    }
}

fn qualified(id: &str, tasks: &[&str]) -> AnnotatorProfile {
    AnnotatorProfile {
        annotator_id: id.into(),
        locale: "US".into(),
        hits_completed: 9000,
        approval_rate: 0.995,
        passed_qual_tests: tasks.iter().map(|s| s.to_string()).collect(),
    }
}

fn setup(task_id: &str, n: usize, k: usize) -> (TaskSpec, Dispatcher) {
    let t = task(task_id);
    let inst = instances(n, &t);
    let ids: Vec<String> = inst.keys().cloned().collect();
    let sub = submission(&t, &ids);
    let batches = build_batches(&sub, &ids, &t, &inst, plan(k), release(), Usd::from_micros(100_000)).unwrap();
    let mut d = Dispatcher::new(DispatchConfig::default());
    d.create(batches).unwrap();
    for a in ["w1", "w2", "w3"] {
        d.register(qualified(a, &[task_id])).unwrap();
    }
    (t, d)
}

#[test]
fn batches_cover_every_pair_k_times() {
    let t = task("wmt19");
    let inst = instances(45, &t);
    let ids: Vec<String> = inst.keys().cloned().collect();
    let sub = submission(&t, &ids);
    let batches = build_batches(&sub, &ids, &t, &inst, plan(3), release(), Usd::ZERO).unwrap();
    assert_eq!(batches.len(), 7);
    assert_eq!(batches[0].batch_id, "sub-000001-b0000");
    assert_eq!(batches[0].items[5].assignment_id, "sub-000001-b0000-005");
    let total: usize = batches.iter().map(|b| b.items.len()).sum();
    assert_eq!(total, 135);
    let mut per: BTreeMap<&str, usize> = BTreeMap::new();
    for b in &batches {
        for it in &b.items {
            *per.entry(it.instance_id.as_str()).or_default() += 1;
            assert_eq!(it.presentation_key, PresentationKey::Unpaired);
            assert!(it.prompt.contains(&format!("model {}", it.instance_id)));
        }
    }
    assert!(per.values().all(|&c| c == 3));
}

#[test]
fn build_requires_sampled_and_known_ids() {
    let t = task("wmt19");
    let inst = instances(3, &t);
    let ids: Vec<String> = inst.keys().cloned().collect();
    let mut sub = submission(&t, &ids);
    let mut bad = ids.clone();
    bad.push("nope".into());
    assert!(build_batches(&sub, &bad, &t, &inst, plan(1), release(), Usd::ZERO).is_err());
    sub.status = SubmissionStatus::Validated;
    assert!(build_batches(&sub, &ids, &t, &inst, plan(1), release(), Usd::ZERO).is_err());
}

#[test]
fn paired_items_hide_gold_position() {
    let t = task("xsum");
    let inst = instances(40, &t);
    let ids: Vec<String> = inst.keys().cloned().collect();
    let sub = submission(&t, &ids);
    let batches = build_batches(&sub, &ids, &t, &inst, plan(1), release(), Usd::ZERO).unwrap();
    let keys: Vec<PresentationKey> = batches
        .iter()
        .flat_map(|b| b.items.iter().map(|i| i.presentation_key))
        .collect();
    assert_eq!(keys.len(), 200);
    assert!(keys.contains(&PresentationKey::AGold) && keys.contains(&PresentationKey::BGold));
    for b in &batches {
        let json = serde_json::to_string(&b.published()).unwrap();
        for key in ["A-gold", "B-gold", "presentation_key", "reference"] {
            assert!(!json.contains(key), "{key} leaked");
        }
        for it in &b.items {
            assert_eq!(it.panels.len(), 2);
            let gold_idx = usize::from(it.presentation_key == PresentationKey::BGold);
            assert!(it.panels[gold_idx].starts_with("gold"));
        }
    }
    let again = build_batches(&sub, &ids, &t, &inst, plan(1), release(), Usd::ZERO).unwrap();
    assert_eq!(batches, again);
}

#[test]
fn nothing_assigned_before_release() {
    let (_, mut d) = setup("wmt19", 10, 1);
    let before = release() - Duration::minutes(1);
    assert!(d.release_due(before).is_empty());
    assert_eq!(d.assign_next("w1", before).unwrap(), None);
    assert_eq!(d.release_due(release()).len(), 1);
    assert!(d.assign_next("w1", release()).unwrap().is_some());
}

#[test]
fn lease_then_label_is_idempotent() {
    let (_, mut d) = setup("wmt19", 10, 1);
    let now = release();
    d.release_due(now);
    let a = d.assign_next("w1", now).unwrap().unwrap();
    // A second request while the lease is live returns the same work.
    assert_eq!(
        d.assign_next("w1", now).unwrap().unwrap().assignment_id,
        a.assignment_id
    );
    let label = LabelSubmission::Single { label: 4 };
    let r1 = d.record_label(&a.assignment_id, "w1", label, now).unwrap();
    let r2 = d.record_label(&a.assignment_id, "w1", label, now).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(d.records_for("sub-000001").len(), 1);
    assert_eq!(r1.day_tag, chrono::NaiveDate::from_ymd_opt(2021, 3, 2).unwrap());
    assert!(matches!(
        d.record_label(&a.assignment_id, "w2", label, now),
        Err(Error::StaleLease(_))
    ));
}

#[test]
fn invalid_labels_are_rejected() {
    let (_, mut d) = setup("wmt19", 5, 1);
    let now = release();
    d.release_due(now);
    let a = d.assign_next("w1", now).unwrap().unwrap();
    assert!(matches!(
        d.record_label(&a.assignment_id, "w1", LabelSubmission::Single { label: 5 }, now),
        Err(Error::Domain(_))
    ));
    assert!(d
        .record_label(
            &a.assignment_id,
            "w1",
            LabelSubmission::Paired { label_a: 1, label_b: 2 },
            now
        )
        .is_err());
    assert!(matches!(
        d.record_label("missing", "w1", LabelSubmission::Single { label: 1 }, now),
        Err(Error::NotFound { .. })
    ));
}

#[test]
fn expired_lease_is_stale_and_reassigned() {
    let (_, mut d) = setup("wmt19", 1, 1);
    let now = release();
    d.release_due(now);
    let a = d.assign_next("w1", now).unwrap().unwrap();
    let later = now + Duration::minutes(31);
    assert!(matches!(
        d.record_label(&a.assignment_id, "w1", LabelSubmission::Single { label: 2 }, later),
        Err(Error::StaleLease(_))
    ));
    let b = d.assign_next("w2", later).unwrap().unwrap();
    assert_eq!(a.assignment_id, b.assignment_id);
    // The first annotator already received this pair and gets nothing new.
    assert_eq!(d.assign_next("w1", later).unwrap(), None);
}

#[test]
fn annotator_never_sees_a_pair_twice() {
    let (t, mut d) = setup("wmt19", 4, 3);
    let now = release();
    d.release_due(now);
    let mut seen = BTreeSet::new();
    while let Some(a) = d.assign_next("w1", now).unwrap() {
        assert!(seen.insert((a.instance_id.clone(), a.aspect.clone())));
        d.record_label(&a.assignment_id, "w1", LabelSubmission::Single { label: 3 }, now)
            .unwrap();
    }
    assert_eq!(seen.len(), 4 * t.aspects.len());
    assert_eq!(d.progress("sub-000001"), (4, 12));
}

#[test]
fn unqualified_annotators_are_refused() {
    let (_, mut d) = setup("wmt19", 3, 1);
    let now = release();
    d.release_due(now);
    let mut p = qualified("low", &["wmt19"]);
    p.approval_rate = 0.9;
    d.register(p).unwrap();
    assert!(matches!(d.assign_next("low", now), Err(Error::Unauthorized(_))));
    assert!(matches!(d.assign_next("ghost", now), Err(Error::Unauthorized(_))));
    d.register(qualified("other", &["xsum"])).unwrap();
    assert!(matches!(d.assign_next("other", now), Err(Error::Unauthorized(_))));
}

#[test]
fn paired_labels_map_back_to_model_and_gold() {
    let (_, mut d) = setup("xsum", 10, 1);
    let now = release();
    d.release_due(now);
    let mut n = 0;
    while let Some(a) = d.assign_next("w1", now).unwrap() {
        let model_panel = a.panels.iter().position(|p| p.starts_with("model")).unwrap();
        let (label_a, label_b) = if model_panel == 0 { (4, 0) } else { (0, 4) };
        let r = d
            .record_label(
                &a.assignment_id,
                "w1",
                LabelSubmission::Paired { label_a, label_b },
                now,
            )
            .unwrap();
        assert_eq!((r.raw_label, r.reference_label), (4, Some(0)));
        n += 1;
    }
    assert_eq!(n, 50);
}

#[test]
fn replaying_events_rebuilds_state() {
    let t = task("wmt19");
    let inst = instances(6, &t);
    let ids: Vec<String> = inst.keys().cloned().collect();
    let sub = submission(&t, &ids);
    let batches = build_batches(&sub, &ids, &t, &inst, plan(2), release(), Usd::ZERO).unwrap();

    let mut live = Dispatcher::new(DispatchConfig::default());
    let mut log = Vec::new();
    let mut step = |d: &mut Dispatcher, ev: Vec<DispatchEvent>| {
        for e in &ev {
            d.apply(e);
        }
        log.extend(ev);
    };
    let ev = live.decide_create(batches).unwrap();
    step(&mut live, ev);
    for a in ["w1", "w2"] {
        let ev = live.decide_register(qualified(a, &["wmt19"])).unwrap();
        step(&mut live, ev);
    }
    let ev = live.decide_release(release());
    step(&mut live, ev);
    for (i, who) in ["w1", "w2", "w1", "w2", "w1"].iter().enumerate() {
        let (ev, a) = live.decide_assign_next(who, release()).unwrap();
        step(&mut live, ev);
        if i % 2 == 0 {
            let a = a.unwrap();
            let (ev, _) = live
                .decide_record_label(
                    &a.assignment_id,
                    who,
                    LabelSubmission::Single { label: 1 },
                    release(),
                    Some(3.5),
                )
                .unwrap();
            step(&mut live, ev);
        }
    }

    let json: Vec<String> = log.iter().map(|e| serde_json::to_string(e).unwrap()).collect();
    let mut replayed = Dispatcher::new(DispatchConfig::default());
    for line in &json {
        replayed.apply(&serde_json::from_str(line).unwrap());
    }
    assert_eq!(live, replayed);
}

#[test]
fn simulated_pool_completes_released_work() {
    let t = task("xsum");
    let inst = instances(8, &t);
    let ids: Vec<String> = inst.keys().cloned().collect();
    let sub = submission(&t, &ids);
    let batches = build_batches(&sub, &ids, &t, &inst, plan(3), release(), Usd::ZERO).unwrap();
    let annotators: Vec<SimulatedAnnotator> = (0..4)
        .map(|i| SimulatedAnnotator {
            annotator_id: format!("sim-{i}"),
            model: AnnotatorModel {
                bias: 0.0,
                noise_sd: 0.1,
            },
        })
        .collect();
    let judge: JudgeFn = Arc::new(|_, _, text: &str| if text.starts_with("gold") { 0.9 } else { 0.4 });
    let run = || {
        let mut pool = SimulatedPool::new(annotators.clone(), judge.clone(), 5).unwrap();
        let mut d = Dispatcher::new(DispatchConfig::default());
        d.create(batches.clone()).unwrap();
        for p in pool.profiles(["xsum"]) {
            d.register(p).unwrap();
        }
        for id in d.release_due(release()) {
            pool.release(&d.batch(&id).unwrap().published()).unwrap();
        }
        for c in pool.poll(release()).unwrap() {
            d.complete(&c, release()).unwrap();
        }
        d
    };
    let d = run();
    assert_eq!(d.progress("sub-000001"), (120, 120));
    assert!(d.batches_for("sub-000001").all(|b| b.status == BatchStatus::Complete));
    let records = d.records_for("sub-000001");
    let mean_ref: f64 = records.iter().map(|r| r.reference_label.unwrap() as f64).sum::<f64>() / 120.0;
    let mean_model: f64 = records.iter().map(|r| r.raw_label as f64).sum::<f64>() / 120.0;
    assert!(mean_ref > mean_model + 1.0);
    let mut per_pair: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    for r in &records {
        assert!(per_pair
            .entry((r.instance_id.clone(), r.aspect.clone()))
            .or_default()
            .insert(r.annotator_id.clone()));
    }
    assert_eq!(records, run().records_for("sub-000001"));
}
