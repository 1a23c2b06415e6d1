#![no_main]

use amkl::io::read_csv_dataset;
use libfuzzer_sys::fuzz_target;

// The first two bytes pick the feature and label widths.
fuzz_target!(|data: &[u8]| {
    let [a, b, rest @ ..] = data else { return };
    let d0 = usize::from(a % 4) + 1;
    let dn = usize::from(b % 3) + 1;
    if let Ok(ds) = read_csv_dataset(rest, d0, dn) {
        assert_eq!(ds.inputs.rows(), d0);
        assert_eq!(ds.labels.rows(), dn);
        assert_eq!(ds.inputs.cols(), ds.labels.cols());
        assert!(ds
            .inputs
            .data()
            .iter()
            .chain(ds.labels.data())
            .all(|x| x.is_finite()));
    }
});
