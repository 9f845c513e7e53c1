//! Resolve an experiment configuration over a profile and print it.

use sar_wcl::cli::ExperimentConfig;
use sar_wcl::trainer::Profile;

const TOML: &str = r#"
seed = 42

[pretrain]
epochs = 20

[pretrain.bid]
k = 3

[split]
kind = "few_shot"
shots = 5
label_noise_ratio = 0.1
"#;

fn main() -> sar_wcl::Result<()> {
    let cfg = ExperimentConfig::resolve(Some(TOML), Some(Profile::Desk))?;
    println!("{}", cfg.to_toml()?);

    match ExperimentConfig::resolve(Some("[pretrain]\nepoch = 3"), None) {
        Err(e) => println!("typo rejected ({}): {e}", e.exit_code()),
        Ok(_) => println!("typo accepted?"),
    }
    Ok(())
}
