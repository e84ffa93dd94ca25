#![no_main]

use ensembleq::cli::parse_args;
use libfuzzer_sys::fuzz_target;

// One argument per line, program name prepended.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let argv = std::iter::once("ensembleq").chain(text.lines());
    let _ = parse_args(argv);
});
