#![no_main]

use fedmix::train::parse_round_log_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_round_log_csv(text);
    }
});
