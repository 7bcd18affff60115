use vla_demo::ops::{
    information_gain_json, simulate, simulate_json, weighted_entropy_json, EntropyOutput, IgOutput, SimulationParams,
};

#[test]
fn disjoint_boxes_weigh_one() {
    let out = weighted_entropy_json(r#"{"boxes": [[0,0,10,10],[50,50,60,60]], "probs": [0.5, 0.5]}"#).unwrap();
    let v: EntropyOutput = serde_json::from_str(&out).unwrap();
    assert_eq!(v.weights, vec![1.0, 1.0]);
    assert!((v.weighted_entropy - 2f64.ln()).abs() < 1e-12);
    assert_eq!(v.weighted_entropy, v.unweighted_entropy);
}

#[test]
fn identical_boxes_halve_the_weights() {
    let out = weighted_entropy_json(r#"{"boxes": [[0,0,10,10],[0,0,10,10]], "probs": [0.5, 0.5]}"#).unwrap();
    let v: EntropyOutput = serde_json::from_str(&out).unwrap();
    assert_eq!(v.weights, vec![0.5, 0.5]);
    assert!((v.weighted_entropy - 0.5 * 2f64.ln()).abs() < 1e-12);
}

#[test]
fn bad_input_is_reported() {
    assert!(weighted_entropy_json("nope").unwrap_err().contains("invalid input"));
    assert!(weighted_entropy_json(r#"{"boxes": [[0,0,1,1]], "probs": [1.5]}"#).is_err());
    assert!(
        information_gain_json(r#"{"hw": 0.1, "table": [{"i":0,"j":1,"label":"a","relation":"r","p":0.5}]}"#)
            .unwrap_err()
            .contains("sum")
    );
}

#[test]
fn information_gain_of_a_uniform_table() {
    let table: Vec<String> = ["a", "b", "c", "d"]
        .iter()
        .map(|l| format!(r#"{{"i":0,"j":1,"label":"{l}","relation":"near","p":0.25}}"#))
        .collect();
    let input = format!(r#"{{"hw": {}, "table": [{}]}}"#, 2f64.ln(), table.join(","));
    let v: IgOutput = serde_json::from_str(&information_gain_json(&input).unwrap()).unwrap();
    assert!((v.global_entropy - 4f64.ln()).abs() < 1e-12);
    assert!((v.information_gain + 2f64.ln()).abs() < 1e-12);
}

#[test]
fn perfect_oracles_fix_every_injected_error() {
    let p = SimulationParams {
        images: 40,
        noise: 0.3,
        alpha: 1.0,
        beta: 0.0,
        gamma: 1.0,
        seed: 2,
    };
    let out = simulate(&p).unwrap();
    assert!(out.injected > 0);
    assert_eq!(out.ed as usize, out.injected);
    assert_eq!(out.cd, out.ed);
    assert_eq!(out.relabeled, out.injected);
    assert_eq!(out.ap_after, Some(1.0));
    assert!(out.ap_before.unwrap() < 1.0);
    assert_eq!(simulate(&p).unwrap(), out);
}

#[test]
fn simulation_rejects_bad_parameters() {
    assert!(simulate_json(r#"{"images": 0, "noise": 0.2, "alpha": 1, "beta": 0, "gamma": 1, "seed": 1}"#).is_err());
    assert!(simulate_json(r#"{"images": 5, "noise": 0.2, "alpha": 2, "beta": 0, "gamma": 1, "seed": 1}"#).is_err());
    assert!(
        simulate_json(r#"{"images": 5, "noise": 0.2, "alpha": 1, "beta": 0, "gamma": 1, "seed": 1, "x": 0}"#).is_err()
    );
}
