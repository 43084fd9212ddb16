#![no_main]

use libfuzzer_sys::fuzz_target;

use gaswait::ingest::hexqty::{parse_quantity, parse_quantity_u64, to_quantity};

fuzz_target!(|data: &str| {
    if let Ok(v) = parse_quantity(data) {
        assert_eq!(parse_quantity(&to_quantity(v)), Ok(v));
    }
    let _ = parse_quantity_u64(data);
});
