#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    delaycea_fuzz::parse_delay_spec(data);
});
