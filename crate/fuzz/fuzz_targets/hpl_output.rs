#![no_main]

use libfuzzer_sys::fuzz_target;
use vcluster::hpl::{best_result, parse_hpl_output};

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    if let Ok(rows) = parse_hpl_output(&text) {
        if let Some(best) = best_result(&rows) {
            assert!(rows.iter().all(|r| r.gflops <= best.gflops));
        }
    }
});
