use std::ops::Range;

use modci_core::network::run_network;
use modci_core::scenario::{FusionMethod, ScenarioConfig};
use rayon::prelude::*;

use crate::files::{write_atomic, CliError};
use crate::{MethodChoice, SimulateArgs};

pub fn parse_seeds(s: &str) -> Result<Range<u64>, CliError> {
    let bad = || CliError::Config(format!("--seeds: expected `a..b`, `a..=b` or a number, got `{s}`"));
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
    let range = if let Some((a, b)) = s.split_once("..=") {
        num(a)?..num(b)?.checked_add(1).ok_or_else(bad)?
    } else if let Some((a, b)) = s.split_once("..") {
        num(a)?..num(b)?
    } else {
        let n = num(s)?;
        n..n + 1
    };
    if range.is_empty() {
        return Err(CliError::Config(format!("--seeds: `{s}` selects no seeds")));
    }
    Ok(range)
}

pub fn methods(choice: MethodChoice) -> Vec<FusionMethod> {
    match choice {
        MethodChoice::Ci => vec![FusionMethod::Ci],
        MethodChoice::Modci => vec![FusionMethod::ModifiedCi],
        MethodChoice::Bci => vec![FusionMethod::Bci],
        MethodChoice::Mbci => vec![FusionMethod::Mbci],
        MethodChoice::Both => vec![FusionMethod::Ci, FusionMethod::ModifiedCi],
    }
}

pub fn record_name(config: &ScenarioConfig, seed: u64) -> String {
    let name: String = config
        .scenario
        .name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{name}-seed{seed:04}.json")
}

pub fn run(args: &SimulateArgs) -> Result<(), CliError> {
    let mut config = ScenarioConfig::load(&args.config)?;
    if let Some(m) = args.method {
        config.fusion.methods = methods(m);
    }
    if args.baseline_kf {
        config.scenario.baseline_kf = true;
    }
    config.validate()?;
    let seeds = match &args.seeds {
        Some(s) => parse_seeds(s)?,
        None => config.scenario.seed..config.scenario.seed + 1,
    };

    let written: Vec<String> = seeds
        .into_par_iter()
        .map(|seed| {
            let record = run_network(&config, seed)?;
            let path = args.out.join(record_name(&config, seed));
            write_atomic(&path, record.to_json()?.as_bytes())?;
            Ok(path.display().to_string())
        })
        .collect::<Result<_, CliError>>()?;
    for p in written {
        println!("{p}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("0..50").unwrap(), 0..50);
        assert_eq!(parse_seeds("3..=5").unwrap(), 3..6);
        assert_eq!(parse_seeds("7").unwrap(), 7..8);
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("a..b").is_err());
    }
}
