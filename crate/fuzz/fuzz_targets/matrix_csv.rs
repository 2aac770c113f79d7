#![no_main]

use fedmix::io::{matrix_csv, parse_matrix_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_matrix_csv(text) {
        if rows.iter().flatten().all(|v| v.is_finite()) {
            assert_eq!(parse_matrix_csv(&matrix_csv(&rows)).expect("rendered matrix parses"), rows);
        }
    }
});
