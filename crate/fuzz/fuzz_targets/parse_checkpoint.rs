#![no_main]

use libfuzzer_sys::fuzz_target;
use routeprobe::moe::{parse_checkpoint, write_checkpoint};

fuzz_target!(|data: &[u8]| {
    let Ok(model) = parse_checkpoint(data) else {
        return;
    };
    let mut first = Vec::new();
    write_checkpoint(&model, &mut first).expect("accepted model writes");
    let again = parse_checkpoint(&first).expect("written checkpoint parses");
    let mut second = Vec::new();
    write_checkpoint(&again, &mut second).expect("accepted model writes");
    assert_eq!(first, second);
});
