#![no_main]

use jga_io::png_io::{decode_depth_u16, encode_depth_u16};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((w, h, values)) = decode_depth_u16(data) {
        assert_eq!(values.len(), w * h);
        let bytes = encode_depth_u16(w, h, &values).expect("decoded depth encodes");
        assert_eq!(
            decode_depth_u16(&bytes).expect("re-encoded PNG decodes"),
            (w, h, values)
        );
    }
});
