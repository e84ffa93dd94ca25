#![no_main]

use ensembleq::config::{OutputFormat, TimeSpec};
use ensembleq::measurement::Mode;
use ensembleq::scenarios::ScenarioId;
use ensembleq::wavepacket::PacketParams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(id) = s.parse::<ScenarioId>() {
        assert_eq!(id.as_str().parse::<ScenarioId>().ok(), Some(id));
    }
    let _ = s.parse::<Mode>();
    let _ = s.parse::<OutputFormat>();
    if let Ok(t) = s.parse::<TimeSpec>() {
        let _ = t.resolve(&PacketParams::default());
    }
});
