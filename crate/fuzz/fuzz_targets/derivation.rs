//! Accepted derivation files keep their digest through a render/parse cycle.

#![no_main]

use libfuzzer_sys::fuzz_target;
use vcluster::repro::Derivation;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(d) = Derivation::from_toml(text) else { return };
    let back = Derivation::from_toml(&d.to_toml()).expect("rendered derivation must parse");
    assert_eq!(back.digest(), d.digest());
});
