#![no_main]

use libfuzzer_sys::fuzz_target;
use weakkam::cli::{parse_run_config, ExperimentSpec};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((cfg, _)) = parse_run_config(text) {
        let _ = cfg.solver.validate();
        let _ = cfg.build_model();
    }
    if let Ok(spec) = ExperimentSpec::from_json(text) {
        let _ = spec.validate();
    }
});
