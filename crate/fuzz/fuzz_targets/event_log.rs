//! Parsing an event log must never panic, and any log it accepts must
//! render back to the same bytes.

#![no_main]

use libfuzzer_sys::fuzz_target;
use vcluster::EventLog;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(log) = EventLog::parse(text) else { return };
    let rendered = log.render();
    let again = EventLog::parse(&rendered).expect("rendered log must parse");
    assert_eq!(again.render(), rendered);
    assert_eq!(again.events(), log.events());
});
