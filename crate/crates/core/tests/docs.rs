use dyckformer::harness::ExperimentConfig;

fn toml_blocks(text: &str) -> Vec<String> {
    text.split("```toml").skip(1).map(|b| b.split("```").next().unwrap().to_string()).collect()
}

#[test]
fn documented_config_parses_to_the_defaults() {
    let doc = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/config.md")).unwrap();
    let blocks = toml_blocks(&doc);
    assert_eq!(blocks.len(), 1);
    let cfg = ExperimentConfig::from_toml(&blocks[0]).unwrap();
    let mut expected = ExperimentConfig::default();
    expected.name = "standard".into();
    expected.seeds = vec![0, 1, 2];
    expected.output_dir = "runs/standard".into();
    assert_eq!(cfg, expected);
}

#[test]
fn shipped_configs_validate() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            ExperimentConfig::load(&p).unwrap_or_else(|err| panic!("{}: {err}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 6);
}
