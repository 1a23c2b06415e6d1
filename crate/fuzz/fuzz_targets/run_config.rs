#![no_main]

use amkl_cli::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::from_json(text) {
        cfg.validate().expect("parsed configs are valid");
        assert_eq!(cfg.digest().len(), 64);
    }
});
