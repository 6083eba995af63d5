#![no_main]

use libfuzzer_sys::fuzz_target;
use weakkam::dynamics::{parse_model_spec, Hamiltonian};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(model) = parse_model_spec(text) {
        let d = model.dim();
        let q = vec![0.25; d];
        let p = vec![0.5; d];
        let _ = model.energy(&q, &p);
        let _ = model.hessian(&q, &p);
    }
});
