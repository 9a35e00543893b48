#![no_main]

use condgap::datasets::{parse_jsonl, to_jsonl};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(seqs) = parse_jsonl(text) {
        // whatever parses must survive a write/read cycle
        let again = parse_jsonl(&to_jsonl(&seqs).unwrap()).unwrap();
        assert_eq!(seqs.len(), again.len());
    }
});
