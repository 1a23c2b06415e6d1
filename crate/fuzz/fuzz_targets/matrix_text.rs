#![no_main]

use amkl::Matrix;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = Matrix::from_text(text) {
        let back = Matrix::from_text(&m.to_text()).expect("written text parses");
        assert_eq!(back.shape(), m.shape());
        for (a, b) in back.data().iter().zip(m.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
});
