#![no_main]

use libfuzzer_sys::fuzz_target;
use weakkam::semiconcave::GraphCloud;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cloud) = GraphCloud::from_csv(text) else {
        return;
    };
    let once = cloud.to_csv();
    let again = GraphCloud::from_csv(&once).expect("written cloud parses");
    assert_eq!(again.to_csv(), once);
});
