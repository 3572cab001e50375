#![no_main]

use jga_io::obj::{encode_obj, parse_obj};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(mesh) = parse_obj(data) {
        let again = parse_obj(&encode_obj(&mesh)).expect("re-encoded OBJ parses");
        assert_eq!(again.faces, mesh.faces);
        assert_eq!(again.vertices.len(), mesh.vertices.len());
    }
});
