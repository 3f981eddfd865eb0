#![no_main]

use libfuzzer_sys::fuzz_target;
use routeprobe::corpus::PosTagset;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(tagset) = PosTagset::parse(text) {
        let again = PosTagset::parse(&tagset.to_text()).expect("serialized tagset parses");
        assert_eq!(again, tagset);
    }
});
