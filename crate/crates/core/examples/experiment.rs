//! Drive a whole run from a TOML config: repeats, run directory, report.
//!
//! cargo run --release --example experiment

use sqnrec::experiment::{run_experiment, ExperimentConfig};

const CONFIG: &str = r#"
name = "sqn-small"
variant = "sqn"
repeats = 2

[reward]
r_click = 1.0
r_purchase = 5.0
gamma = 0.5

[dataset]
source = "synthetic"
held_out_sessions = 1000

[dataset.spec]
n_items = 80
n_sessions = 800

[model]
kind = "recurrent"
embed_dim = 16
hidden_dim = 16

[train]
max_updates = 120
eval_every = 40
batch_size = 64
"#;

fn main() -> sqnrec::Result<()> {
    let cfg = ExperimentConfig::from_toml_str(CONFIG)?;
    cfg.validate()?;
    let dir = tempfile::tempdir()?;
    let result = run_experiment(&cfg, Some(dir.path()))?;
    print!("{}", result.report.render());
    let mut files: Vec<String> = std::fs::read_dir(dir.path())?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    files.sort();
    println!("run directory: {}", files.join(", "));
    Ok(())
}
