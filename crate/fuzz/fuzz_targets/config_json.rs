#![no_main]

use libfuzzer_sys::fuzz_target;

const COMMANDS: [&str; 8] = [
    "demo-univariate",
    "demo-bimodal",
    "gap-lgssm",
    "gen-data",
    "train",
    "eval-elbo",
    "prefix-sample",
    "model",
];

// first byte picks the command, the rest is the document
fuzz_target!(|data: &[u8]| {
    let Some((&pick, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let _ = condgap_cli::check_config(COMMANDS[pick as usize % COMMANDS.len()], text);
});
