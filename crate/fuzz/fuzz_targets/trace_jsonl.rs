#![no_main]

use amkl::io::{read_trace, write_trace};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = read_trace(data) {
        let mut buf = Vec::new();
        write_trace(&mut buf, &trace).expect("valid traces serialize");
        let back = read_trace(buf.as_slice()).expect("written trace parses");
        assert_eq!(back, trace);
    }
});
