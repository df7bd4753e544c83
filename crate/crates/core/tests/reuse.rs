mod common;

use common::Harness;
use intent_canvas::error::Stage;
use intent_canvas::model::ReuseMode;
use intent_canvas::provider::mock::MockProvider;
use intent_canvas::provider::schema::PathStep;
use intent_canvas::provider::TemplateId;
use intent_canvas::reuse::{self, adapt_steps, organize_logs, recommend_for};
use intent_canvas::{BlockId, Error, ImageMode, Session};
use serde_json::{json, Value};

fn logs(entries: &[&str]) -> Vec<(String, String)> {
    entries.iter().enumerate().map(|(i, d)| ((i + 1).to_string(), d.to_string())).collect()
}

#[test]
fn organize_examples() {
    let h = Harness::new(ImageMode::Economy);
    let gw = h.gateway(0);
    assert_eq!(organize_logs(&gw, &logs(&["hippie attires", "classic attires"]), "student's attires").unwrap().as_deref(), Some("2"));
    assert_eq!(organize_logs(&gw, &logs(&["avant-garde art", "futuristic design"]), "medieval architecture").unwrap(), None);
    // every worked example, verbatim
    for (template, vars, reply) in MockProvider::fixtures() {
        if template != TemplateId::OrganizeHistory {
            continue;
        }
        let entries: Vec<(String, String)> = vars["logs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|l| (l["id"].as_str().unwrap().to_owned(), l["direction"].as_str().unwrap().to_owned()))
            .collect();
        let got = organize_logs(&gw, &entries, vars["new_log"].as_str().unwrap()).unwrap();
        assert_eq!(got.map(Value::from).unwrap_or(Value::Null), reply["id"], "{vars:?}");
    }
    assert_eq!(organize_logs(&gw, &[], "anything").unwrap(), None);
}

#[test]
fn organize_ignores_invented_ids() {
    let h = Harness::new(ImageMode::Economy);
    h.chat.push_reply(TemplateId::OrganizeHistory, r#"{"id": "7"}"#);
    assert_eq!(organize_logs(&h.gateway(0), &logs(&["a", "b"]), "c").unwrap(), None);
}

#[test]
fn evolution_graph_stays_property_homogeneous() {
    let h = Harness::new(ImageMode::Economy);
    let mut s = h.session(3);
    let dirs = ["hippie attires", "classic attires", "student's attires", "medieval armor", "classic armor"];
    for (i, d) in dirs.iter().enumerate() {
        h.block(&mut s, "Mascot's Entity", d, 3, None);
        h.block(&mut s, "Background", &format!("scene {i}"), 2, None);
        for prop in ["Mascot's Entity", "Background"] {
            let g = reuse::evolution_graph(&s, prop).unwrap();
            for (child, parent) in &g.parent_links {
                if let Some(p) = parent {
                    assert_eq!(s.block(p).unwrap().property, prop);
                    assert!(s.block(p).unwrap().created_at < s.block(child).unwrap().created_at, "acyclic by age");
                }
            }
        }
    }
    let g = reuse::evolution_graph(&s, "Mascot's Entity").unwrap();
    let by_dir = |d: &str| g.nodes.iter().find(|n| n.direction == d).unwrap().block_id.clone();
    assert_eq!(g.parent_links[&by_dir("student's attires")], Some(by_dir("classic attires")));
}

fn chain3(h: &Harness, s: &mut Session) -> Vec<BlockId> {
    let a = h.block(s, "Mascot's Entity", "Street musician", 5, None);
    let b = h.block(s, "Image Style", "Watercolor", 1, Some(&a));
    let c = h.block(s, "Background", "Starry Night", 1, Some(&b));
    vec![a, b, c]
}

#[test]
fn copy_block_keeps_settings_and_recrafts() {
    let h = Harness::new(ImageMode::Economy);
    let mut s = h.session(9);
    let path = chain3(&h, &mut s);
    let src = s.block(&path[2]).unwrap().clone();
    let copy = h.engine.copy_block(&mut s, &path[2], None).unwrap();
    let c = s.block(&copy).unwrap();
    assert_ne!(copy, src.id);
    assert_eq!((&c.property, &c.direction, c.typicality), (&src.property, &src.direction, src.typicality));
    let origin = c.reuse_origin.as_ref().unwrap();
    assert_eq!((&origin.source_block_id, origin.mode), (&src.id, ReuseMode::BlockCopy));
    assert_eq!(c.suggestions.len(), 4, "re-crafted in the new context");
    assert!(s.parent_of(&copy).is_none());

    let under = h.engine.copy_block(&mut s, &path[2], Some(&path[0])).unwrap();
    assert_eq!(s.parent_of(&under), Some(&path[0]));
    assert!(matches!(h.engine.copy_block(&mut s, &BlockId("b404".into()), None), Err(Error::NotFound(_))));
    assert!(h.engine.copy_block(&mut s, &path[0], Some(&BlockId("b404".into()))).is_err());
    s.check_invariants().unwrap();
}

#[test]
fn literal_path_copy_is_isomorphic_and_continues() {
    let h = Harness::new(ImageMode::Economy);
    let mut s = h.session(9);
    let path = chain3(&h, &mut s);
    let root = h.block(&mut s, "Color Scheme", "Pastel", 2, None);
    let copies = h.engine.copy_path_literal(&mut s, &path, Some(&root)).unwrap();
    assert_eq!(copies.len(), 3);
    assert_eq!(s.parent_of(&copies[0]), Some(&root));
    for w in copies.windows(2) {
        assert_eq!(s.parent_of(&w[1]), Some(&w[0]));
    }
    for (src, cp) in path.iter().zip(&copies) {
        let (a, b) = (s.block(src).unwrap(), s.block(cp).unwrap());
        assert_eq!((&a.property, &a.direction, a.typicality), (&b.property, &b.direction, b.typicality));
        assert_eq!(b.reuse_origin.as_ref().unwrap().mode, ReuseMode::PathLiteral);
        assert!(s.block(src).unwrap().created_at < b.created_at);
        assert_eq!(b.suggestions.len(), 4);
        assert!(s.latest_result(cp).is_some(), "paste continues with images");
    }
    let ord: Vec<u64> = copies.iter().map(|c| s.block(c).unwrap().created_at).collect();
    assert!(ord.windows(2).all(|w| w[0] < w[1]), "root-first creation order");

    let disconnected = vec![path[0].clone(), path[2].clone()];
    assert!(matches!(h.engine.copy_path_literal(&mut s, &disconnected, None), Err(Error::Graph(_))));
    assert!(h.engine.copy_path_literal(&mut s, &[], None).is_err());
}

fn ids_and_props(steps: &[PathStep]) -> (Vec<String>, Vec<String>) {
    let mut ids: Vec<String> = steps.iter().map(|s| s.id.clone()).collect();
    ids.sort();
    (ids, steps.iter().map(|s| s.property.clone()).collect())
}

#[test]
fn adaptive_fixtures_verbatim() {
    let h = Harness::new(ImageMode::Economy);
    let gw = h.gateway(0);
    let mut seen = 0;
    for (template, vars, reply) in MockProvider::fixtures() {
        if template != TemplateId::AdaptivePath {
            continue;
        }
        let replication: Vec<PathStep> = serde_json::from_value(vars["replication"].clone()).unwrap();
        let got = adapt_steps(&gw, vars["topic"].as_str().unwrap(), &vars["pre_explored"], &replication).unwrap();
        assert_eq!(serde_json::to_value(&got).unwrap(), reply);
        for v in &got {
            assert_eq!(ids_and_props(v), ids_and_props(&replication));
        }
        seen += 1;
    }
    assert_eq!(seen, 5);

    // the laboratory example: third variant moves to the zoo
    let replication = vec![
        PathStep { id: "2".into(), property: "Laboratory Setting".into(), direction: "Computer".into(), novelty: 3 },
        PathStep { id: "3".into(), property: "Color Scheme".into(), direction: "professional blue".into(), novelty: 1 },
    ];
    let pre = json!([{"id": "9", "property": "Character Entity", "direction": "Fluffy animal", "novelty": 1, "options": ["Bear", "Rabbit", "Puppy", "Raccoon"]}]);
    let got = adapt_steps(&gw, "A professional character for a laboratory", &pre, &replication).unwrap();
    assert_eq!(got[2].iter().map(|s| s.direction.as_str()).collect::<Vec<_>>(), ["Zoo Laboratory", "Green and Wood"]);
}

#[test]
fn adaptive_menu_and_apply() {
    let h = Harness::new(ImageMode::Economy);
    let mut s = h.session(12);
    let path = chain3(&h, &mut s);
    let target = h.block(&mut s, "Color Scheme", "Neon", 4, None);
    let menu = h.engine.adaptive_menu(&s, &path[1..], Some(&target)).unwrap();
    assert_eq!(menu.variants.len(), 3);
    assert_eq!(menu.literal.len(), 2);
    for v in &menu.variants {
        assert_eq!(ids_and_props(v), ids_and_props(&menu.literal));
    }
    let call = h.chat.calls().into_iter().rev().find(|c| c.template == TemplateId::AdaptivePath).unwrap();
    assert_eq!(call.vars["pre_explored"][0]["id"], json!(target.to_string()));
    assert_eq!(call.vars["pre_explored"][0]["options"].as_array().unwrap().len(), 4);

    let ids = h.engine.apply_adaptive(&mut s, &path[1..], Some(&target), &menu, 3).unwrap();
    assert_eq!(ids.len(), 2);
    assert_eq!(s.parent_of(&ids[0]), Some(&target));
    assert_eq!(s.parent_of(&ids[1]), Some(&ids[0]));
    for (step, id) in menu.variants[2].iter().zip(&ids) {
        let b = s.block(id).unwrap();
        assert_eq!(b.direction, step.direction);
        assert_eq!(i64::from(b.typicality.level()), step.novelty.clamp(1, 5));
        assert_eq!(b.reuse_origin.as_ref().unwrap().mode, ReuseMode::PathAdaptive);
        assert!(s.latest_result(id).is_some());
    }
    assert!(h.engine.apply_adaptive(&mut s, &path[1..], Some(&target), &menu, 4).is_err());

    // empty pre-explored aspects: the first variant stays closest to literal
    let menu = h.engine.adaptive_menu(&s, &path[1..], None).unwrap();
    assert_eq!(menu.variants[0].iter().map(|x| &x.direction).collect::<Vec<_>>(), menu.literal.iter().map(|x| &x.direction).collect::<Vec<_>>());
}

#[test]
fn malformed_adaptive_replies_are_rejected() {
    let h = Harness::new(ImageMode::Economy);
    let replication = vec![
        PathStep { id: "2".into(), property: "Laboratory Setting".into(), direction: "Computer".into(), novelty: 3 },
        PathStep { id: "3".into(), property: "Color Scheme".into(), direction: "blue".into(), novelty: 1 },
    ];
    let wrong_ids = json!([
        [{"id": "2", "property": "Laboratory Setting", "direction": "a", "novelty": 3}, {"id": "4", "property": "Color Scheme", "direction": "b", "novelty": 1}],
        [{"id": "2", "property": "Laboratory Setting", "direction": "a", "novelty": 3}, {"id": "3", "property": "Color Scheme", "direction": "b", "novelty": 1}],
        [{"id": "2", "property": "Laboratory Setting", "direction": "a", "novelty": 3}, {"id": "3", "property": "Color Scheme", "direction": "b", "novelty": 1}]
    ])
    .to_string();
    let swapped_props = json!([
        [{"id": "2", "property": "Color Scheme", "direction": "a", "novelty": 3}, {"id": "3", "property": "Laboratory Setting", "direction": "b", "novelty": 1}],
        [], []
    ])
    .to_string();
    let extra_field = r#"[[{"id":"2","property":"Laboratory Setting","direction":"a","novelty":3,"why":"x"}]]"#;
    for bad in [wrong_ids.as_str(), swapped_props.as_str(), extra_field, "not json"] {
        for _ in 0..3 {
            h.chat.push_reply(TemplateId::AdaptivePath, bad);
        }
        let err = adapt_steps(&h.gateway(0), "t", &json!([]), &replication).unwrap_err();
        assert_eq!(err.stage(), Some(Stage::Adaptive), "{bad}");
    }
    // one bad reply, then the mock: retried successfully
    h.chat.push_reply(TemplateId::AdaptivePath, wrong_ids);
    h.chat.clear_calls();
    assert!(adapt_steps(&h.gateway(0), "t", &json!([]), &replication).is_ok());
    assert_eq!(h.chat.count(TemplateId::AdaptivePath), 2);
}

#[test]
fn recommend_examples() {
    let h = Harness::new(ImageMode::Economy);
    let gw = h.gateway(0);
    let r = recommend_for(&gw, "A professional character for a laboratory", "Image Style", &[], &["Character Entity: Robot".into()]).unwrap();
    assert_eq!((r.typical.as_str(), r.unique.as_str()), ("Realistic", "Steampunk"));
    for (template, vars, reply) in MockProvider::fixtures() {
        if template != TemplateId::RecommendDirections {
            continue;
        }
        let strings = |v: &Value| v.as_array().unwrap().iter().map(|x| x.as_str().unwrap().to_owned()).collect::<Vec<_>>();
        let r = recommend_for(&gw, vars["topic"].as_str().unwrap(), vars["property"].as_str().unwrap(), &strings(&vars["history"]), &strings(&vars["settings"])).unwrap();
        assert_eq!(json!({"typical": r.typical, "unique": r.unique}), reply);
    }
}

#[test]
fn recommendations_never_repeat_history() {
    let h = Harness::new(ImageMode::Economy);
    for _ in 0..3 {
        h.chat.push_reply(TemplateId::RecommendDirections, r#"{"typical":"watercolor","unique":"Cubism"}"#);
    }
    let err = recommend_for(&h.gateway(0), "t", "Image Style", &["Watercolor".into()], &[]).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Recommend));

    let mut s = h.session(2);
    let a = h.block(&mut s, "Image Style", "Watercolor", 1, None);
    h.block(&mut s, "Image Style", "Ink sketch", 2, Some(&a));
    let r = h.engine.recommend(&mut s, "Image Style", Some(&a)).unwrap();
    for d in ["watercolor", "ink sketch"] {
        assert_ne!(r.typical.to_lowercase(), d);
        assert_ne!(r.unique.to_lowercase(), d);
    }
    let call = h.chat.calls().into_iter().rev().find(|c| c.template == TemplateId::RecommendDirections).unwrap();
    assert_eq!(call.vars["history"], json!(["Watercolor", "Ink sketch"]));
    assert_eq!(call.vars["settings"], json!(["Image Style: Watercolor"]));
    assert!(r.typical.split_whitespace().count() <= 3 && r.unique.split_whitespace().count() <= 3);
}
