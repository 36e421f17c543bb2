mod common;

use std::fs;

use finadapt::augment::{EntityTag, EntityType};
use finadapt::evalharness::{
    accuracy, classify_constrained, entity_f1, load_task, render_table, run_eval, weighted_f1,
    write_predictions, Answer, EvalError, EvalSample, GenerationSettings, TaskHeader, TaskSpec,
};
use finadapt::instruct::{render_prompt, TaskKind};
use finadapt::modelio::{MockModel, ScriptedModel};
use proptest::prelude::*;

use common::{
    brute_accuracy, brute_entity_f1, brute_weighted_f1, entity_predictions, fast_client,
    label_predictions,
};

fn labels_and_preds() -> impl Strategy<Value = (Vec<String>, Vec<String>)> {
    (1usize..=4, 1usize..=10).prop_flat_map(|(k, n)| {
        let label = (0..k).prop_map(|i| format!("c{i}"));
        (
            prop::collection::vec(label.clone(), n),
            prop::collection::vec(label, n),
        )
    })
}

fn entity_sets() -> impl Strategy<Value = (Vec<Vec<EntityTag>>, Vec<Vec<EntityTag>>)> {
    let tag = (0u8..4, 0u8..3).prop_map(|(s, t)| {
        let etype = [EntityType::Per, EntityType::Org, EntityType::Loc][t as usize];
        EntityTag::new(format!("E{s}"), etype)
    });
    (1usize..=10).prop_flat_map(move |n| {
        let set = prop::collection::vec(tag.clone(), 0..4);
        (
            prop::collection::vec(set.clone(), n),
            prop::collection::vec(set, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn label_metrics_match_reference((gold, pred) in labels_and_preds()) {
        let p = label_predictions(&gold, &pred);
        prop_assert!((accuracy(&p).unwrap() - brute_accuracy(&gold, &pred)).abs() <= 1e-12);
        prop_assert!((weighted_f1(&p).unwrap() - brute_weighted_f1(&gold, &pred)).abs() <= 1e-12);
    }

    #[test]
    fn entity_metric_matches_reference((gold, pred) in entity_sets()) {
        let p = entity_predictions(&gold, &pred);
        prop_assert!((entity_f1(&p).unwrap() - brute_entity_f1(&gold, &pred)).abs() <= 1e-12);
    }

    #[test]
    fn metrics_are_bounded((gold, pred) in labels_and_preds()) {
        let p = label_predictions(&gold, &pred);
        let f = weighted_f1(&p).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        let perfect = label_predictions(&gold, &gold);
        prop_assert!((weighted_f1(&perfect).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert_eq!(accuracy(&perfect).unwrap(), 1.0);
    }

    #[test]
    fn constrained_choice_is_argmax(scores in prop::collection::vec(-4i32..0, 3)) {
        let labels: Vec<String> = ["positive", "negative", "neutral"].map(String::from).to_vec();
        let s = scores.clone();
        let model = ScriptedModel::new(|_, _| Ok(String::new())).with_scorer(move |_, c| {
            let i = ["positive", "negative", "neutral"].iter().position(|l| *l == c).unwrap();
            Ok(s[i] as f64)
        });
        let client = fast_client(model);
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let (label, table) = rt.block_on(classify_constrained(&client, "p", &labels)).unwrap();
        let max = *scores.iter().max().unwrap();
        let first = scores.iter().position(|&x| x == max).unwrap();
        prop_assert_eq!(label, labels[first].clone());
        prop_assert_eq!(table.len(), 3);
    }
}

fn sentiment_spec() -> TaskSpec {
    TaskSpec {
        header: TaskHeader {
            task: TaskKind::Fpb,
            instruction: "What is the sentiment?".into(),
            labels: Some(vec!["positive".into(), "negative".into(), "neutral".into()]),
        },
        samples: vec![
            EvalSample {
                id: "1".into(),
                input: "Sales up".into(),
                gold: Answer::Label("positive".into()),
                subtask: None,
            },
            EvalSample {
                id: "2".into(),
                input: "Sales down".into(),
                gold: Answer::Label("negative".into()),
                subtask: None,
            },
            EvalSample {
                id: "3".into(),
                input: "Sales flat".into(),
                gold: Answer::Label("neutral".into()),
                subtask: None,
            },
        ],
    }
}

#[tokio::test]
async fn run_eval_with_tabled_scores() {
    let spec = sentiment_spec();
    let mut mock = MockModel::new();
    let table = [
        ("Sales up", [-0.1, -2.0, -3.0]),
        ("Sales down", [-1.0, -1.0, -3.0]),
        ("Sales flat", [-2.0, -2.5, -0.2]),
    ];
    for (input, scores) in table {
        let prompt = render_prompt(&spec.header.instruction, input).unwrap();
        for (label, s) in ["positive", "negative", "neutral"].iter().zip(scores) {
            mock.insert_score(&prompt, *label, s);
        }
    }
    let run = run_eval(&spec, &fast_client(mock), &GenerationSettings::default())
        .await
        .unwrap();
    let predicted: Vec<_> = run.predictions.iter().map(|p| p.predicted.clone()).collect();
    // the tie on "Sales down" goes to the first label
    assert_eq!(
        predicted,
        ["positive", "positive", "neutral"].map(|l| Answer::Label(l.into()))
    );
    assert_eq!(run.report.count, 3);
    assert!((run.report.extras["accuracy"] - 2.0 / 3.0).abs() < 1e-12);

    let mut out = Vec::new();
    write_predictions(&run.predictions, &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().count(), 3);
}

#[tokio::test]
async fn headline_value_is_mean_over_subtasks() {
    let mut spec = sentiment_spec();
    spec.header.task = TaskKind::Headline;
    spec.header.labels = Some(vec!["yes".into(), "no".into()]);
    let golds = ["yes", "no", "yes", "yes"];
    spec.samples = golds
        .iter()
        .enumerate()
        .map(|(i, g)| EvalSample {
            id: i.to_string(),
            input: format!("headline {i}"),
            gold: Answer::Label(g.to_string()),
            subtask: Some(if i < 2 { "price_up" } else { "price_down" }.into()),
        })
        .collect();
    // always answers "yes"
    let model = ScriptedModel::new(|_, _| Ok(String::new()))
        .with_scorer(|_, c| Ok(if c == "yes" { -0.1 } else { -1.0 }));
    let run = run_eval(&spec, &fast_client(model), &GenerationSettings::default())
        .await
        .unwrap();
    // price_up: yes F1 2/3 weight 1/2, no F1 0 -> 1/3; price_down: 1.0
    assert_eq!(run.report.subtasks.len(), 2);
    assert!((run.report.value - (1.0 / 3.0 + 1.0) / 2.0).abs() < 1e-12);
    assert!(run.report.extras.contains_key("pooled_weighted_f1"));
}

#[tokio::test]
async fn ner_generation_is_parsed_leniently() {
    let spec = TaskSpec {
        header: TaskHeader {
            task: TaskKind::Ner,
            instruction: "List the entities.".into(),
            labels: None,
        },
        samples: vec![
            EvalSample {
                id: "a".into(),
                input: "Acme hired Ann".into(),
                gold: Answer::Entities(vec![
                    EntityTag::new("Acme", EntityType::Org),
                    EntityTag::new("Ann", EntityType::Per),
                ]),
                subtask: None,
            },
            EvalSample {
                id: "b".into(),
                input: "Nothing here".into(),
                gold: Answer::Entities(vec![EntityTag::new("Rome", EntityType::Loc)]),
                subtask: None,
            },
        ],
    };
    let model = ScriptedModel::new(|req, _| {
        Ok(if req.prompt.contains("Acme") {
            "Acme, ORG | Ann, PERSON\n| Bob, PER".into()
        } else {
            "I don't know".into()
        })
    });
    let run = run_eval(&spec, &fast_client(model), &GenerationSettings::default())
        .await
        .unwrap();
    // tp 1, fp 0, fn 2
    assert!((run.report.value - 0.5).abs() < 1e-12);
    assert_eq!(run.report.metric, "entity_f1");
}

#[test]
fn task_files_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ner.jsonl");
    fs::write(
        &path,
        concat!(
            r#"{"task":"ner","instruction":"Entities?"}"#,
            "\n",
            r#"{"id":1,"input":"Acme hired Ann","gold":"Acme, ORG | Ann, PER"}"#,
            "\n",
            r#"{"id":"2","input":"x","gold":[{"surface":"Rome","type":"LOC"}]}"#,
            "\n"
        ),
    )
    .unwrap();
    let spec = load_task(&path, None).unwrap();
    assert_eq!(spec.samples.len(), 2);
    assert_eq!(spec.samples[0].id, "1");
    assert_eq!(spec.samples[0].gold.entities().unwrap().len(), 2);

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    assert!(matches!(load_task(&empty, None), Err(EvalError::EmptyTask)));

    let bad = dir.path().join("bad.jsonl");
    fs::write(
        &bad,
        "{\"task\":\"fpb\",\"instruction\":\"S?\",\"labels\":[\"positive\",\"negative\"]}\n{\"id\":1,\"input\":\"x\",\"gold\":\"bullish\"}\n",
    )
    .unwrap();
    assert!(matches!(load_task(&bad, None), Err(EvalError::InvalidSpec(_))));

    let table = render_table(&[]);
    assert!(table.starts_with("Model"));
}
