#![no_main]

use libfuzzer_sys::fuzz_target;
use vcluster::config::ClusterFile;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(file) = ClusterFile::from_toml(text) {
            assert!(file.cluster.validate().is_ok());
            assert!(file.sim_provider.validate().is_ok());
        }
    }
});
