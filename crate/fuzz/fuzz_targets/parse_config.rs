#![no_main]

use libfuzzer_sys::fuzz_target;
use routeprobe_cli::config::{Settings, COMMAND_KEYS};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(settings) = Settings::parse(text) else {
        return;
    };
    for &(command, keys) in COMMAND_KEYS {
        let scope = settings.scope(command);
        for key in keys {
            let _ = scope.get::<f64>(key);
            let _ = scope.get::<String>(key);
            let _ = scope.get::<bool>(key);
        }
        let _ = scope.get::<u64>("seed");
    }
});
