#![no_main]

use amkl::io::{state_from_text, state_to_text};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(state) = state_from_text(text) {
        let again = state_from_text(&state_to_text(&state)).expect("written state parses");
        assert_eq!(state_to_text(&again), state_to_text(&state));
    }
});
