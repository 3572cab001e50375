#![no_main]

use jga_io::tensor::{encode_tensor, latent_from_tensor, parse_tensor, sparse_from_tensor, SparseMeta};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = parse_tensor(data) {
        assert_eq!(encode_tensor(&t), data);
        let _ = latent_from_tensor(&t);
        if let [_, cols] = t.dims[..] {
            let meta = SparseMeta {
                resolution: 16,
                stride: 1,
                channels: cols.saturating_sub(3),
            };
            let _ = sparse_from_tensor(&t, meta);
        }
    }
});
