#![no_main]

use libfuzzer_sys::fuzz_target;
use vcluster::hpl::parse_hpl_dat;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let _ = parse_hpl_dat(&text);
});
