use eamamba_core::harness::image_io::{decode_pnm, encode_pnm};
use eamamba_core::harness::{
    evaluate, load_checkpoint, parse_run_config, save_checkpoint, synth_dataset, train, TrainConfig,
};
use eamamba_core::harness::config::format_run_config;
use eamamba_core::{build_network, Error, NetConfig, Tensor};

const SMOKE: &str = "
base_channels = 8
level_blocks = 1,1,1,1
refinement_blocks = 1
iterations = 6
stages = 16x2@0, 8x4@3
train_count = 4
val_count = 2
image_height = 24
image_width = 24
";

#[test]
fn train_save_load_infer() {
    let cfg = parse_run_config(SMOKE).unwrap();
    let data = synth_dataset(&cfg.data.train_spec()).unwrap();
    let val = synth_dataset(&cfg.data.val_spec()).unwrap();
    let mut net = build_network::<f32>(&cfg.net, cfg.init_seed).unwrap();
    let before = net.params.clone();
    let log = train(&mut net, &data, &cfg.train, None, |_| {}).unwrap();
    assert_eq!(log.records.len(), 6);
    assert_eq!(log.records[4].patch, 8);
    assert_ne!(net.params, before);

    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(dir.path(), &net).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    let img = &val[0].degraded;
    assert_eq!(back.infer(img).unwrap(), net.infer(img).unwrap());
    let ev = evaluate(&back, &val).unwrap();
    assert!(ev.psnr_input.is_finite() && ev.psnr_output.is_finite());
}

#[test]
fn formatted_config_parses_back() {
    let cfg = parse_run_config(SMOKE).unwrap();
    assert_eq!(parse_run_config(&format_run_config(&cfg)).unwrap(), cfg);
}

#[test]
fn infer_output_round_trips_through_ppm() {
    let net = build_network::<f32>(&NetConfig::tiny(), 2).unwrap();
    let mut bytes = b"P6\n7 5\n255\n".to_vec();
    bytes.extend((0..7 * 5 * 3).map(|i| (i * 29 % 256) as u8));
    let img: Tensor<f32> = decode_pnm(&bytes).unwrap();
    let y = net.infer(&img).unwrap().map(|v| v.clamp(0.0, 1.0));
    let out = encode_pnm(&y).unwrap();
    assert_eq!(out.len(), bytes.len());
    assert_eq!(decode_pnm::<f32>(&out).unwrap().shape(), &[5, 7, 3]);
}

#[test]
fn stage_patch_must_fit_the_network() {
    let cfg = TrainConfig {
        stages: vec!["12x2@0".parse().unwrap()],
        ..TrainConfig::default()
    };
    assert!(matches!(cfg.validate(8), Err(Error::Config(_))));
}
