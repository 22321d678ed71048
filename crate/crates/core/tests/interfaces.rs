//! Files the exporter hands to the engine: patch tokens with their sidecar
//! and prompt embeddings, at the shapes a ViT-B/16 exporter produces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use symdec::config::RunConfig;
use symdec::decoder::{decode, init_decoder};
use symdec::encoder::{load_tokens, save_tokens, sidecar_path, PatchTokens};
use symdec::gridmath::csym;
use symdec::sapg::{load_text_embeddings, TextTokens};
use symdec::{Error, Tensor};

#[test]
fn exported_tokens_and_text_decode_under_paper_geometry() {
    let cfg = RunConfig::preset("paper-geometry").unwrap();
    let grid = cfg.model.encoder.grid();
    assert_eq!(grid, 26);
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let tokens = PatchTokens::new(Tensor::randn(&[26, 26, 768], 1.0, &mut rng), 16, (417, 417)).unwrap();
    let tpath = dir.path().join("img.csym");
    save_tokens(&tpath, &tokens).unwrap();
    assert!(sidecar_path(&tpath).is_file());
    let loaded = load_tokens(&tpath).unwrap();
    assert_eq!(loaded, tokens);

    // written the way the exporter does: a bare rank-2 CSYM table
    let text = Tensor::<f32>::randn(&[25, 512], 1.0, &mut rng);
    let xpath = dir.path().join("text.csym");
    csym::write(&xpath, &text).unwrap();
    let loaded_text: TextTokens = load_text_embeddings(&xpath).unwrap();
    assert!(loaded_text.trainable);
    assert_eq!((loaded_text.count(), loaded_text.dim()), (25, 512));

    let params = init_decoder::<f32, _>(&cfg.model.decoder, 768, 512, 25, &mut rng);
    let heat = decode(&loaded, &loaded_text, &params, &cfg.model.decoder).unwrap();
    assert_eq!((heat.height(), heat.width()), (417, 417));
    assert!(heat.scores().data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
}

#[test]
fn wrong_rank_files_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csym");
    csym::write(&p, &Tensor::<f32>::zeros(&[2, 3, 4])).unwrap();
    assert!(matches!(load_text_embeddings(&p), Err(Error::Format { .. })));
    csym::write(&p, &Tensor::<f32>::zeros(&[3, 4])).unwrap();
    assert!(load_tokens(&p).is_err());
}
