//! Print a preset as a TOML configuration file.
//!
//! ```text
//! cargo run --example presets -- test2 > test2.toml
//! ```

use kincontrol::config::{RunConfig, PRESETS};

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "test1".into());
    match RunConfig::preset(&name) {
        Ok(cfg) => print!("{}", cfg.to_toml_string()),
        Err(e) => {
            eprintln!("{e}\navailable: {}", PRESETS.join(", "));
            std::process::exit(2);
        }
    }
}
