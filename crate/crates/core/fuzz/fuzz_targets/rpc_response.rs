#![no_main]

use libfuzzer_sys::fuzz_target;

use gaswait::ingest::rpc::{decode_block, decode_receipt, decode_response, decode_tx, decode_txpool_pending};

fuzz_target!(|data: &str| {
    let Ok(result) = decode_response("fuzz", data) else { return };
    let _ = decode_block(&result);
    let _ = decode_tx(&result);
    let _ = decode_receipt(&result);
    let _ = decode_txpool_pending(&result);
});
