use freres_core::io::{
    load_weights, read_latents, read_token_stream, token_stream_to_string, write_latents,
    write_weights,
};
use freres_core::synthetic::{gen_synthetic, SyntheticKind, SyntheticSpec};
use freres_core::{
    run_pipeline, FreresError, FusionMode, Grid, LatentSequence, ModelWeights, PipelineConfig,
};

fn small_spec(kind: SyntheticKind, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        frames: 8,
        grid: Grid::new(12, 12),
        dim: 4,
        ..SyntheticSpec::new(kind, seed)
    }
}

#[test]
fn latent_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clip.frl");
    let seq = gen_synthetic(&small_spec(SyntheticKind::Noise, 7)).unwrap();
    write_latents(&seq, &path).unwrap();
    let back = read_latents(&path).unwrap();
    assert_eq!(back, seq);
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), 28 + 8 * 144 * 4 * 4);
    write_latents(&back, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

#[test]
fn header_declaring_more_than_present_is_truncated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.frl");
    let seq = LatentSequence::from_flat(2, Grid::new(3, 3), 1, &[0.5; 18], None).unwrap();
    write_latents(&seq, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 4);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(
        read_latents(&path),
        Err(FreresError::TruncatedFile { .. })
    ));
    assert!(matches!(
        read_latents(dir.path().join("missing.frl")),
        Err(FreresError::Io(_))
    ));
}

#[test]
fn weights_file_round_trip_and_dimension_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.frw");
    let w = ModelWeights::seeded(42, 8);
    write_weights(&w, &path).unwrap();
    assert_eq!(load_weights(&path, 8).unwrap(), w);
    assert!(matches!(
        load_weights(&path, 4),
        Err(FreresError::ShapeMismatch(_))
    ));

    let id = ModelWeights::identity(8);
    write_weights(&id, &path).unwrap();
    let back = load_weights(&path, 8).unwrap();
    assert_eq!(back.absorber.w_q, back.absorber.w_k);
    assert_eq!(back.adapter, id.adapter);
}

#[test]
fn encoded_stream_survives_text_round_trip() {
    let seq = gen_synthetic(&small_spec(SyntheticKind::SlowMotion, 3)).unwrap();
    let cfg = PipelineConfig {
        budget: 800,
        anchors: 2,
        kraw: 128,
        kmax: 3,
        mode: FusionMode::Absorber,
        ..PipelineConfig::default()
    };
    let (stream, _) = run_pipeline(&seq, &cfg, &ModelWeights::seeded(9, 4)).unwrap();
    let text = token_stream_to_string(&stream).unwrap();
    let back = read_token_stream(&text).unwrap();
    assert_eq!(back, stream);
    assert_eq!(token_stream_to_string(&back).unwrap(), text);
}
