#![no_main]

use libfuzzer_sys::fuzz_target;
use vcluster::trace::WorkloadTrace;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(trace) = WorkloadTrace::parse(text) {
        let back = WorkloadTrace::parse(&trace.render()).expect("rendered trace must parse");
        assert_eq!(back, trace);
    }
});
