#![no_main]

use avhubert::model::{model_from_checkpoint, CheckpointHeader};
use avhubert_neural::{decode_checkpoint, encode_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(ckpt) = decode_checkpoint(data) else { return };
    let bytes = encode_checkpoint(&ckpt).expect("decoded checkpoint re-encodes");
    assert_eq!(bytes, data);
    // only build architectures small enough to allocate quickly
    let Ok(h) = serde_json::from_str::<CheckpointHeader>(&ckpt.header) else { return };
    let m = &h.model;
    let small = m.dim <= 256
        && m.layers <= 8
        && m.ffn_dim <= 1024
        && m.codebook_size <= 4096
        && m.audio_dim <= 256
        && m.visual_hidden <= 1024
        && m.conv_width <= 16
        && m.image_height * m.image_width <= 4096
        && m.ctc_vocab.unwrap_or(0) <= 4096;
    if small {
        let _ = model_from_checkpoint::<f32>(&ckpt);
    }
});
