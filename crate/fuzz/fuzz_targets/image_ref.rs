#![no_main]

use libfuzzer_sys::fuzz_target;
use vcluster::repro::ImageRef;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(image) = text.parse::<ImageRef>() {
        let again: ImageRef = image.to_string().parse().expect("displayed image must parse");
        assert_eq!(again, image);
        let _ = image.sif_file_name();
    }
});
