#![no_main]

use libfuzzer_sys::fuzz_target;
use weakkam::lo_solver::io::{from_csv_str, to_csv_string};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok((grid, header)) = from_csv_str(text) else {
        return;
    };
    let Ok(once) = to_csv_string(&grid, &header) else {
        return;
    };
    let (grid, header) = from_csv_str(&once).expect("written grid parses");
    assert_eq!(to_csv_string(&grid, &header).unwrap(), once);
});
