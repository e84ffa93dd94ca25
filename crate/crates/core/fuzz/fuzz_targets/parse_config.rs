#![no_main]

use ensembleq::config::{parse_config, Experiment};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Accepted packet configs must resolve their times and pass the grid checks without panicking.
    if let Ok(cfg) = parse_config(text) {
        if let Experiment::Wavepacket(w) = &cfg.experiment {
            for t in &w.times {
                let _ = w.grid.check_packet(&w.params, t.resolve(&w.params));
            }
        }
    }
});
