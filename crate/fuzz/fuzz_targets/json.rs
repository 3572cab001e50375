#![no_main]

use jga_bridge::SamplerConfig;
use jga_io::config::parse_json;
use jga_io::{DepthSidecar, SynthOptions};
use jga_vae::VaeConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_json::<SynthOptions>(data, "fuzz");
    if let Ok(c) = parse_json::<VaeConfig>(data, "fuzz") {
        let _ = c.validate();
    }
    if let Ok(c) = parse_json::<SamplerConfig>(data, "fuzz") {
        let _ = c.validate();
    }
    let _ = parse_json::<DepthSidecar>(data, "fuzz");
});
