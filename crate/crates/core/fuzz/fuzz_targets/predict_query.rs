#![no_main]

use libfuzzer_sys::fuzz_target;

use gaswait::pipeline::{parse_model_query, parse_predict_query};

fuzz_target!(|data: &str| {
    if let Ok(q) = parse_predict_query(data) {
        assert!(q.gas_price_gwei.is_finite() && q.gas_price_gwei >= 0.0);
        assert!(q.to_record().validate().is_ok());
    }
    let _ = parse_model_query(data);
});
