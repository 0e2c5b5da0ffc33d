//! Vocabulary TOML through the parser: no panics, and accepted tables print
//! back to a stable, still-accepted form.

#![no_main]

use gluenote::tokenizer::TokenVocabulary;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(vocab) = TokenVocabulary::from_toml_str(text) else {
        return;
    };
    let printed = vocab.to_toml_string();
    let again = TokenVocabulary::from_toml_str(&printed).expect("printed vocabulary parses");
    assert_eq!(vocab.field_sizes(), again.field_sizes());
    assert_eq!(printed, again.to_toml_string(), "printing is not stable");
});
