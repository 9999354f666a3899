#![no_main]

use libfuzzer_sys::fuzz_target;
use vcluster::provider::CloudProfile;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(profile) = CloudProfile::from_toml(text) {
            assert!(profile.validate().is_ok());
        }
    }
});
