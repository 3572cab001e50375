#![no_main]

use jga_core::Cube;
use jga_io::ply::{encode_ply, parse_ply};
use jga_io::PlyFormat;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = parse_ply(data, Cube::default()) {
        for format in [PlyFormat::BinaryLittleEndian, PlyFormat::Ascii] {
            let again = parse_ply(&encode_ply(&set, format), Cube::default()).expect("re-encoded PLY parses");
            assert_eq!(again.len(), set.len());
        }
    }
});
