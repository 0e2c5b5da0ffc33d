//! Alignment text through the parser: no panics, and accepted inputs print
//! back to a form that reparses to the same pairs.

#![no_main]

use gluenote::alignment::{alignment_to_string, parse_alignment};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(pairs) = parse_alignment(text) else {
        return;
    };
    let printed = alignment_to_string(&pairs);
    let reparsed = parse_alignment(&printed).expect("printed alignment parses");
    assert_eq!(pairs, reparsed, "print/parse round trip changed the pairs");
});
