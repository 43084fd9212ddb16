#![no_main]

use libfuzzer_sys::fuzz_target;

use gaswait::pipeline::Settings;

fuzz_target!(|data: &str| {
    let _ = Settings::from_text(data);
    let _ = Settings::default().apply_override(data);
});
