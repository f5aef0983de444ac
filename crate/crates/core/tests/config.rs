use proptest::prelude::*;
use toda_hydro::config::{apply_override, apply_overrides, parse_config, resolve_path};
use toda_hydro::lattice::Integrator;
use toda_hydro::mc::ExperimentConfig;
use toda_hydro::Error;

fn base() -> ExperimentConfig {
    ExperimentConfig::default()
}

fn is_invalid<T: std::fmt::Debug>(r: toda_hydro::Result<T>) -> bool {
    matches!(r, Err(Error::InvalidConfig(_)))
}

#[test]
fn empty_document_gives_defaults() {
    let cfg = parse_config("{}").unwrap();
    assert_eq!(serde_json::to_value(&cfg).unwrap(), serde_json::to_value(base()).unwrap());
}

#[test]
fn partial_nested_document_keeps_other_defaults() {
    let cfg = parse_config(r#"{ "lattice": { "beta": 2.5 }, "tau_list": [0.5, 2] }"#).unwrap();
    assert_eq!(cfg.lattice.beta, 2.5);
    assert_eq!(cfg.lattice.theta, base().lattice.theta);
    assert_eq!(cfg.tau_list, vec![0.5, 2.0]);
}

#[test]
fn malformed_documents_are_rejected() {
    for text in ["", "[]", "{", r#"{"lattice": 3}"#, r#"{"lattice": {"n_sites": -4}}"#, r#"{"unknown": 1}"#] {
        assert!(is_invalid(parse_config(text)), "{text}");
    }
}

#[test]
fn dotted_path_override() {
    let cfg = apply_override(&base(), "lattice.beta=3").unwrap();
    assert_eq!(cfg.lattice.beta, 3.0);
    let cfg = apply_override(&base(), "tolerances.z_max=2.5").unwrap();
    assert_eq!(cfg.tolerances.z_max, 2.5);
}

#[test]
fn bare_leaf_override_when_unique() {
    let cfg = apply_override(&base(), "theta=0.5").unwrap();
    assert_eq!(cfg.lattice.theta, 0.5);
    let cfg = apply_override(&base(), "n_nodes=800").unwrap();
    assert_eq!(cfg.grid.n_nodes, 800);
}

#[test]
fn array_values_and_indices() {
    let cfg = apply_override(&base(), "tau_list=[0, 0.5, 1]").unwrap();
    assert_eq!(cfg.tau_list, vec![0.0, 0.5, 1.0]);
    let cfg = apply_override(&cfg, "tau_list.1=0.25").unwrap();
    assert_eq!(cfg.tau_list, vec![0.0, 0.25, 1.0]);
    assert!(is_invalid(apply_override(&cfg, "tau_list.7=1")));
    assert!(is_invalid(apply_override(&cfg, "tau_list.x=1")));
}

#[test]
fn strings_need_no_quotes() {
    let cfg = apply_override(&base(), "lattice.integrator=verlet2").unwrap();
    assert_eq!(cfg.lattice.integrator, Integrator::Verlet2);
    let cfg = apply_override(&base(), "experiment=\"q0\"").unwrap();
    assert_eq!(serde_json::to_value(cfg.experiment).unwrap(), "q0");
}

#[test]
fn bare_leaf_resolution_on_a_tree() {
    let tree = serde_json::json!({ "a": { "x": 1, "y": 2 }, "b": { "x": 3 }, "list": [ { "x": 4 } ] });
    assert_eq!(resolve_path(&tree, "y").unwrap(), ["a", "y"]);
    assert_eq!(resolve_path(&tree, "b.x").unwrap(), ["b", "x"]);
    assert_eq!(resolve_path(&tree, "list.0.x").unwrap(), ["list", "0", "x"]);
    let Err(Error::InvalidConfig(msg)) = resolve_path(&tree, "x") else { panic!("`x` is ambiguous") };
    assert!(msg.contains("a.x") && msg.contains("b.x"), "{msg}");
    assert!(is_invalid(resolve_path(&tree, "z")));
    assert!(is_invalid(resolve_path(&tree, "a.y.z")));
}

#[test]
fn every_config_leaf_name_is_unique() {
    // Bare names are therefore always accepted for the real schema.
    let tree = serde_json::to_value(base()).unwrap();
    for section in ["lattice", "grid", "tolerances"] {
        for key in tree[section].as_object().unwrap().keys() {
            assert_eq!(resolve_path(&tree, key).unwrap(), [section, key.as_str()]);
        }
    }
}

#[test]
fn unknown_and_malformed_assignments_are_rejected() {
    for a in ["gamma=1", "lattice.gamma=1", "lattice.beta.x=1", "=1", "beta", "lattice..beta=1", ".=2"] {
        assert!(is_invalid(apply_override(&base(), a)), "{a}");
    }
}

#[test]
fn type_errors_are_rejected() {
    for a in [
        "lattice.beta=fast",
        "lattice.n_sites=1.5",
        "ensemble_size=-3",
        "tau_list=3",
        "lattice.integrator=euler",
        "lattice=4",
    ] {
        assert!(is_invalid(apply_override(&base(), a)), "{a}");
    }
}

#[test]
fn overrides_apply_in_order() {
    let cfg = apply_overrides(&base(), &["lattice.beta=2", "beta=5", "base_seed=17"]).unwrap();
    assert_eq!(cfg.lattice.beta, 5.0);
    assert_eq!(cfg.base_seed, 17);
    let none: [&str; 0] = [];
    let cfg = apply_overrides(&base(), &none).unwrap();
    assert_eq!(serde_json::to_value(cfg).unwrap(), serde_json::to_value(base()).unwrap());
}

proptest! {
    #[test]
    fn numeric_override_round_trips(beta in 1e-3f64..1e3, seed in any::<u64>(), n in 2usize..100_000) {
        let cfg = apply_overrides(&base(), &[
            format!("lattice.beta={beta}"),
            format!("base_seed={seed}"),
            format!("n_sites={n}"),
        ]).unwrap();
        prop_assert_eq!(cfg.lattice.beta, beta);
        prop_assert_eq!(cfg.base_seed, seed);
        prop_assert_eq!(cfg.lattice.n_sites, n);
        let echo = serde_json::to_string(&cfg).unwrap();
        let back = parse_config(&echo).unwrap();
        prop_assert_eq!(serde_json::to_value(back).unwrap(), serde_json::to_value(cfg).unwrap());
    }

    #[test]
    fn arbitrary_assignments_never_panic(a in "\\PC{0,40}") {
        let _ = apply_override(&base(), &a);
    }

    #[test]
    fn arbitrary_documents_never_panic(text in "\\PC{0,200}") {
        let _ = parse_config(&text);
    }
}
