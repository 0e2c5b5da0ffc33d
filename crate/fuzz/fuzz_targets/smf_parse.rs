//! Arbitrary bytes through the SMF parser: must never panic, and anything
//! it accepts must survive re-encoding with the event stream reaching a
//! fixpoint after one round.

#![no_main]

use gluenote::smf::{parse_smf, smf_bytes};
use libfuzzer_sys::fuzz_target;

fn events(seq: &gluenote::NoteSequence) -> Vec<(u32, u8, u32, u8)> {
    seq.notes()
        .iter()
        .map(|n| (n.onset, n.pitch, n.duration, n.velocity))
        .collect()
}

fuzz_target!(|data: &[u8]| {
    let Ok(parsed) = parse_smf(data) else { return };
    let Ok(seq) = parsed.into_sequence("fuzz".into()) else {
        return;
    };
    let once = parse_smf(&smf_bytes(&seq))
        .expect("re-encoded SMF parses")
        .into_sequence("fuzz".into())
        .expect("re-encoded SMF decodes");
    let twice = parse_smf(&smf_bytes(&once))
        .expect("fixpoint encoding parses")
        .into_sequence("fuzz".into())
        .expect("fixpoint encoding decodes");
    assert_eq!(events(&once), events(&twice), "decode is not a fixpoint");
});
