#![no_main]

use libfuzzer_sys::fuzz_target;
use weakkam::lo_solver::io::{from_binary, to_binary};

fuzz_target!(|data: &[u8]| {
    let Ok((grid, header)) = from_binary(data) else {
        return;
    };
    let Ok(once) = to_binary(&grid, &header) else {
        return;
    };
    let (grid, header) = from_binary(&once).expect("written grid parses");
    assert_eq!(to_binary(&grid, &header).unwrap(), once);
});
