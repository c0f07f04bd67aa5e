//! Synthetic instances, predictions and a simulated crowd for demos and
//! tests, standing in for real datasets and annotators.

use std::collections::BTreeMap;
use std::sync::Arc;

use humeval_core::dispatch::{JudgeFn, SimulatedPool};
use humeval_core::metrics::{rouge_n, tokenize_lower};
use humeval_core::model::{Instance, Split, TaskSpec};
use humeval_core::rng::{derive_seed, rng_from_seed, uniform_index};
use humeval_core::sim::{AnnotatorModel, SimulatedAnnotator};
use humeval_core::Result;
use rand::Rng;
use rand_distr::{Distribution, Normal};

const VOCAB: &[&str] = &[
    "the", "a", "river", "model", "city", "council", "voted", "to", "build", "new", "bridge", "over", "water",
    "children", "played", "in", "park", "after", "school", "rain", "fell", "heavily", "during", "night", "plants",
    "need", "light", "grow", "energy", "from", "sun", "warms", "earth", "ice", "melts", "when", "heated", "she",
    "opened", "door", "and", "saw", "dog", "waiting", "outside", "he", "forgot", "his", "keys", "at", "home",
];

fn sentence<R: Rng>(rng: &mut R, len: usize) -> String {
    (0..len)
        .map(|_| VOCAB[uniform_index(rng, VOCAB.len())])
        .collect::<Vec<_>>()
        .join(" ")
        + "."
}

/// `n` test instances whose input fields cover every placeholder of the
/// task's prompt template.
pub fn synthetic_instances(task: &TaskSpec, n: usize, seed: u64) -> Vec<Instance> {
    let mut rng = rng_from_seed(derive_seed(seed, &task.task_id, 0));
    (0..n)
        .map(|i| {
            let mut fields = BTreeMap::new();
            for name in ["question", "source", "observation_1", "observation_2", "article"] {
                if task.prompt_template.contains(&format!("{{{name}}}")) {
                    let len = if name == "article" { 40 } else { 8 };
                    fields.insert(name.to_string(), sentence(&mut rng, len));
                }
            }
            Instance {
                instance_id: format!("{}-{i:05}", task.task_id),
                input_fields: fields,
                references: vec![sentence(&mut rng, 12)],
                split: Split::Test,
            }
        })
        .collect()
}

/// Predictions that copy each reference token with probability `quality`
/// and substitute a random word otherwise.
pub fn synthetic_predictions(instances: &[Instance], quality: f64, seed: u64) -> BTreeMap<String, String> {
    let mut rng = rng_from_seed(seed);
    instances
        .iter()
        .map(|inst| {
            let reference = inst.references.first().map(String::as_str).unwrap_or("");
            let words: Vec<&str> = reference
                .trim_end_matches('.')
                .split_whitespace()
                .map(|w| {
                    if rng.random_bool(quality.clamp(0.0, 1.0)) {
                        w
                    } else {
                        VOCAB[uniform_index(&mut rng, VOCAB.len())]
                    }
                })
                .collect();
            (inst.instance_id.clone(), words.join(" ") + ".")
        })
        .collect()
}

/// Judges a text by its unigram overlap with the instance's first reference,
/// mapped into [0.1, 0.95].
pub fn overlap_judge(instances: &[Instance]) -> JudgeFn {
    let refs: BTreeMap<String, Vec<String>> = instances
        .iter()
        .map(|i| {
            let r = i.references.first().map(String::as_str).unwrap_or("");
            (i.instance_id.clone(), tokenize_lower(r))
        })
        .collect();
    Arc::new(move |instance_id: &str, _aspect: &str, text: &str| {
        let Some(r) = refs.get(instance_id) else {
            return 0.5;
        };
        let f = rouge_n(&tokenize_lower(text), r, 1).f;
        0.1 + 0.85 * f
    })
}

/// Crowd of `n` annotators with small individual biases.
pub fn simulated_crowd(n: usize, noise_sd: f64, seed: u64) -> Vec<SimulatedAnnotator> {
    let mut rng = rng_from_seed(derive_seed(seed, "crowd", 0));
    let bias = Normal::new(0.0, 0.05).expect("valid sd");
    (0..n)
        .map(|i| SimulatedAnnotator {
            annotator_id: format!("crowd-{i:03}"),
            model: AnnotatorModel {
                bias: bias.sample(&mut rng),
                noise_sd,
            },
        })
        .collect()
}

pub fn simulated_pool(instances: &[Instance], annotators: usize, seed: u64) -> Result<SimulatedPool> {
    SimulatedPool::new(simulated_crowd(annotators, 0.15, seed), overlap_judge(instances), seed)
}
