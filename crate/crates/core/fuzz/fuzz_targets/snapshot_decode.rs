#![no_main]

use libfuzzer_sys::fuzz_target;

use gaswait::pipeline::{decode_snapshot, encode_snapshot};

fuzz_target!(|data: &[u8]| {
    // Decoded snapshots are valid, so predicting with them must not panic
    // and re-encoding must be stable.
    if let Ok(snapshot) = decode_snapshot(data) {
        let _ = snapshot.model.predict(&[20.0, 21_000.0, 0.0, 0.0, 100.0, 20.0, 15.0]);
        let again = decode_snapshot(&encode_snapshot(&snapshot)).unwrap();
        assert_eq!(again, snapshot);
    }
});
