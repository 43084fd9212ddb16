#![no_main]

use libfuzzer_sys::fuzz_target;

use gaswait::ingest::parse_line;

fuzz_target!(|data: &str| {
    // Whatever parses must re-serialize to a line that parses identically.
    if let Ok(record) = parse_line(data) {
        let line = serde_json::to_string(&record).unwrap();
        assert_eq!(parse_line(&line).as_ref(), Ok(&record));
    }
});
