#![no_main]

use jga_io::png_io::{decode_rgb, encode_rgb};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_rgb(data) {
        let again = decode_rgb(&encode_rgb(&img).expect("decoded image encodes")).expect("re-encoded PNG decodes");
        assert_eq!(again, img);
    }
});
