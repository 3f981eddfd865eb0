#![no_main]

use libfuzzer_sys::fuzz_target;
use routeprobe::trace::{read_trace, validate_trace, write_trace};

fuzz_target!(|data: &[u8]| {
    // Accepted traces are valid and survive a write/read round trip.
    let Ok((header, records)) = read_trace(data) else {
        return;
    };
    assert!(validate_trace(&header, &records).is_valid());
    let mut buf = Vec::new();
    write_trace(&header, &records, &mut buf).expect("accepted trace rewrites");
    let (h2, r2) = read_trace(buf.as_slice()).expect("rewritten trace reads");
    assert_eq!(h2, header);
    assert_eq!(r2, records);
});
