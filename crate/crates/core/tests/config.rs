use adagraph_core::checkpoint::{write_atomic, Checkpoint};
use adagraph_core::config::{TrainConfig, KEYS};
use adagraph_core::Tensor;

#[test]
fn empty_document_gives_defaults() {
    let c = TrainConfig::from_toml("").unwrap();
    assert_eq!(c, TrainConfig::default());
    assert_eq!((c.k, c.hvg, c.k_order), (15, 1500, 3));
    assert_eq!((c.pretrain_epochs, c.formal_epochs), (1000, 300));
    assert_eq!((c.lr_pre, c.lr_formal), (1e-2, 5e-4));
    assert_eq!((c.lambda1, c.lambda2, c.lambda3, c.lambda4), (0.3, 1.0, 0.01, 1.5));
    assert_eq!((c.tau, c.tau_c), (1.0, 0.7));
    assert_eq!(c.widths, vec![512, 256, 128]);
    assert_eq!(c.p_refresh_interval, 1);
    assert_eq!(c.clusters, None);
}

#[test]
fn flag_overrides_file() {
    let mut c = TrainConfig::default();
    c.merge_toml("k = 20\nclusters = 4\n").unwrap();
    assert_eq!(c.k, 20);
    c.set_str("k", "10").unwrap();
    assert_eq!(c.k, 10);
    assert_eq!(c.clusters, Some(4));
    c.set_str("widths", "[8, 4]").unwrap();
    assert_eq!(c.widths, vec![8, 4]);
    c.set_str("disable_contrastive", "true").unwrap();
    assert!(c.disable_contrastive);
}

#[test]
fn errors_name_the_key() {
    let err = TrainConfig::from_toml("kk = 3").unwrap_err();
    assert!(err.to_string().contains("`kk`"), "{err}");
    let err = TrainConfig::from_toml("k = \"many\"").unwrap_err();
    assert!(err.to_string().contains("`k`"), "{err}");
    let err = TrainConfig::from_toml("clusters = 0").unwrap_err();
    assert!(err.to_string().contains("`clusters`"), "{err}");
    let err = TrainConfig::from_toml("lr_pre = -1.0").unwrap_err();
    assert!(err.to_string().contains("`lr_pre`"), "{err}");
    let err = TrainConfig::from_toml("lambda3 = -0.1").unwrap_err();
    assert!(err.to_string().contains("`lambda3`"), "{err}");
    let err = TrainConfig::from_toml("widths = []").unwrap_err();
    assert!(err.to_string().contains("`widths`"), "{err}");
    let err = TrainConfig::default().require_clusters().unwrap_err();
    assert!(err.to_string().contains("`clusters`"), "{err}");
}

#[test]
fn every_key_round_trips_through_set() {
    let c = TrainConfig { clusters: Some(3), sigma: Some(0.5), ..TrainConfig::default() };
    let json: serde_json::Value = serde_json::from_str(&c.canonical_json()).unwrap();
    let obj = json.as_object().unwrap();
    assert_eq!(obj.len(), KEYS.len());
    let mut back = TrainConfig::default();
    for key in KEYS {
        let text = obj[*key].to_string();
        back.set_str(key, &text).unwrap();
    }
    assert_eq!(back, c);
}

#[test]
fn hash_tracks_content() {
    let a = TrainConfig::default();
    assert_eq!(a.hash(), TrainConfig::default().hash());
    assert_eq!(a.hash().len(), 64);
    let b = TrainConfig { seed: 1, ..TrainConfig::default() };
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn ablations_map_to_weights() {
    let c = TrainConfig { disable_contrastive: true, ..TrainConfig::default() };
    assert_eq!(c.effective_weights().lambda3, 0.0);
    assert_eq!(TrainConfig::default().effective_weights().lambda3, 0.01);
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let mut tensors = std::collections::BTreeMap::new();
    tensors.insert("a".to_string(), Tensor::from_rows(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap());
    tensors.insert("b".to_string(), Tensor::scalar(std::f64::consts::PI));
    let ck = Checkpoint { config_hash: "abc".into(), meta: serde_json::json!({"epoch": 3}), tensors };
    let bytes = ck.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert!(back.tensors["a"].data()[1].is_sign_negative());

    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
    assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    write_atomic(&path, b"x").unwrap();
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 1);
}
