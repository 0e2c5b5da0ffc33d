//! Checkpoint bytes through the loader: no panics on arbitrary input, and
//! accepted checkpoints survive a re-encode/re-load cycle bit for bit.

#![no_main]

use gluenote::model::{checkpoint_bytes, load_checkpoint_bytes};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(checkpoint) = load_checkpoint_bytes(data) else {
        return;
    };
    let again = load_checkpoint_bytes(&checkpoint_bytes(&checkpoint))
        .expect("re-encoded checkpoint parses");
    // Bit-level so NaN payloads smuggled into parameters still compare.
    let bits = |p: &[f32]| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&checkpoint.params.data), bits(&again.params.data));
    assert_eq!(checkpoint.state.step, again.state.step);
    assert_eq!(checkpoint.state.seed, again.state.seed);
});
