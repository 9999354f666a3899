#![no_main]

use libfuzzer_sys::fuzz_target;
use vcluster::repro::MpiRuntime;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rt) = text.parse::<MpiRuntime>() {
        assert_eq!(rt.to_string().parse::<MpiRuntime>().unwrap(), rt);
    }
});
