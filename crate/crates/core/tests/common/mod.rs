#![allow(dead_code)]

use std::path::{Path, PathBuf};

use pacit_core::corpus::{LabeledExample, Tag, Task, TaskInstance};
use pacit_core::templater::{ActionText, Renderer, SeedPair, Templates, DEFAULT_MAX_EXAMPLES};
use serde_json::json;

pub const DEFINITION: &str = "Given a country, answer with its capital city.";

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn ex(input: &str, output: &str, tag: Tag) -> LabeledExample {
    LabeledExample::new(input, output, tag, None).unwrap()
}

fn two_examples() -> Vec<LabeledExample> {
    vec![ex("France", "Paris", Tag::Positive), ex("Japan", "Osaka", Tag::Negative)]
}

fn demos() -> Vec<SeedPair> {
    [
        ("Translate the sentence into French.", "Good morning.", "Bonjour.", "Good morning.", "Au revoir."),
        ("Classify the review as positive or negative.", "I loved it.", "positive", "I loved it.", "negative"),
        ("Answer the arithmetic question.", "2 + 2", "4", "2 + 2", "5"),
        ("Reverse the given word.", "abc", "cba", "abc", "abc"),
    ]
    .iter()
    .enumerate()
    .map(|(i, (d, pi, po, ni, no))| SeedPair {
        task_id: format!("demo{i}"),
        task_def: d.to_string(),
        positive: ex(pi, po, Tag::Positive),
        negative: ex(ni, no, Tag::Negative),
    })
    .collect()
}

/// (fixture file, freshly rendered text) for every versioned template fixture.
pub fn golden_cases() -> Vec<(&'static str, String)> {
    let r = Renderer::default();
    let bare = Renderer::new(Templates::builtin(), false, DEFAULT_MAX_EXAMPLES);
    let action = ActionText::default();
    let exs = two_examples();
    let pacit = r.render_pacit(DEFINITION, &exs, "Italy", "Rome", Some(&action)).unwrap();
    let zero = r.render_pacit(DEFINITION, &[], "Italy", "Rome", Some(&action)).unwrap();
    vec![
        ("pacit_prompt.txt", pacit.prompt),
        ("pacit_target.txt", pacit.target),
        (
            "pacit_target_no_headers.txt",
            bare.render_pacit(DEFINITION, &exs, "Italy", "Rome", Some(&action)).unwrap().target,
        ),
        (
            "pacit_target_no_action.txt",
            r.render_pacit(DEFINITION, &exs, "Italy", "Rome", None).unwrap().target,
        ),
        ("pacit_zero_examples_prompt.txt", zero.prompt),
        ("pacit_zero_examples_target.txt", zero.target),
        ("superni_prompt.txt", r.render_superni_fewshot(DEFINITION, &exs, "Italy", "Rome").unwrap().prompt),
        ("zero_shot_prompt.txt", r.render_zero_shot(DEFINITION, "Italy", "Rome").unwrap().prompt),
        ("separated_prompt.txt", r.separated_prompt(DEFINITION, &exs)),
        (
            "separated_target.txt",
            r.render_separated_classification(DEFINITION, &exs, Some(&action)).unwrap().target,
        ),
        ("selfinstruct_prompt.txt", r.render_selfinstruct_prompt(&demos(), DEFINITION).unwrap()),
    ]
}

/// Deterministic toy task: `n_pos`/`n_neg` pool examples and `n_inst` instances.
pub fn toy_task(id: &str, n_pos: usize, n_neg: usize, n_inst: usize) -> Task {
    Task {
        task_id: id.to_string(),
        definition: format!("Copy the input of {id} in upper case."),
        positive_pool: (0..n_pos).map(|i| ex(&format!("p{i} word"), &format!("P{i} WORD"), Tag::Positive)).collect(),
        negative_pool: (0..n_neg).map(|i| ex(&format!("n{i} word"), &format!("n{i} word"), Tag::Negative)).collect(),
        instances: (0..n_inst)
            .map(|i| TaskInstance {
                id: format!("{id}-{i}"),
                input: format!("item {i} of {id}"),
                outputs: vec![format!("ITEM {i} OF {}", id.to_uppercase())],
            })
            .collect(),
    }
}

/// Writes tasks as SuperNI JSON plus split lists; returns (task dir, train list, test list).
pub fn write_task_dir(root: &Path, n_train: usize, n_test: usize, n_inst: usize) -> (PathBuf, PathBuf, PathBuf) {
    let tasks = root.join("tasks");
    std::fs::create_dir_all(&tasks).unwrap();
    let mut train = String::from("# training tasks\n");
    let mut test = String::new();
    for i in 0..n_train + n_test {
        let id = format!("task{i:03}_toy");
        let t = toy_task(&id, 2, 2, n_inst);
        let doc = json!({
            "Definition": [t.definition],
            "Positive Examples": t.positive_pool.iter().map(|e| json!({"input": e.input, "output": e.output, "explanation": "follows the rule"})).collect::<Vec<_>>(),
            "Negative Examples": t.negative_pool.iter().map(|e| json!({"input": e.input, "output": e.output, "explanation": "not upper case"})).collect::<Vec<_>>(),
            "Instances": t.instances.iter().map(|x| json!({"id": x.id, "input": x.input, "output": x.outputs})).collect::<Vec<_>>(),
        });
        std::fs::write(tasks.join(format!("{id}.json")), serde_json::to_string_pretty(&doc).unwrap()).unwrap();
        if i < n_train {
            train.push_str(&format!("{id}\n"));
        } else {
            test.push_str(&format!("{id}.json\n"));
        }
    }
    let train_p = root.join("train_tasks.txt");
    let test_p = root.join("test_tasks.txt");
    std::fs::write(&train_p, train).unwrap();
    std::fs::write(&test_p, test).unwrap();
    (tasks, train_p, test_p)
}
