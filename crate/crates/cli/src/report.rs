use modci_core::metrics::{aggregate, check_same_scenario, compare as compare_methods, score_record, MetricsRow, Role};
use modci_core::scenario::FusionMethod;

use crate::files::{csv_bytes, load_records, write_atomic, CliError};
use crate::{CompareArgs, MetricsArgs};

fn role_name(r: Role) -> &'static str {
    match r {
        Role::Monitoring => "monitoring",
        Role::Baseline => "baseline",
        Role::Processing => "processing",
    }
}

fn rows_csv(rows: &[MetricsRow]) -> Result<Vec<u8>, CliError> {
    csv_bytes(|w| {
        for r in rows {
            w.serialize(r)?;
        }
        Ok(())
    })
}

fn aggregate_csv(rows: &[MetricsRow]) -> Result<Vec<u8>, CliError> {
    csv_bytes(|w| {
        w.write_record([
            "source_id",
            "role",
            "algorithm",
            "seeds",
            "mse_median",
            "mse_iqr",
            "mncm_median",
            "mncm_iqr",
            "count_within_one_median",
        ])?;
        for a in aggregate(rows) {
            w.write_record([
                a.source_id.to_string(),
                role_name(a.role).to_string(),
                a.algorithm.clone(),
                a.seeds.to_string(),
                a.mse.median.to_string(),
                a.mse.iqr().to_string(),
                a.mncm.median.to_string(),
                a.mncm.iqr().to_string(),
                a.count_within_one.map(|s| s.median.to_string()).unwrap_or_default(),
            ])?;
        }
        Ok(())
    })
}

pub fn metrics(args: &MetricsArgs) -> Result<(), CliError> {
    let records = load_records(&args.records)?;
    check_same_scenario(&records)?;
    let mut rows = Vec::new();
    for r in &records {
        rows.extend(score_record(r)?);
    }
    match &args.out {
        Some(dir) => {
            write_atomic(&dir.join("metrics.csv"), &rows_csv(&rows)?)?;
            write_atomic(&dir.join("aggregate.csv"), &aggregate_csv(&rows)?)?;
        }
        None => {
            let bytes = if args.aggregate { aggregate_csv(&rows)? } else { rows_csv(&rows)? };
            print!("{}", String::from_utf8_lossy(&bytes));
        }
    }
    Ok(())
}

fn method(flag: &str, value: &str) -> Result<FusionMethod, CliError> {
    FusionMethod::parse(value)
        .ok_or_else(|| CliError::Config(format!("--{flag}: unknown method `{value}` (ci, modci, bci, mbci)")))
}

pub fn compare(args: &CompareArgs) -> Result<(), CliError> {
    let baseline = method("baseline", &args.baseline)?;
    let challenger = method("challenger", &args.challenger)?;
    let records = load_records(&args.records)?;
    let table = compare_methods(&records, baseline, challenger)?;
    for c in &table {
        println!(
            "processor {} {}: {} vs {}: {} wins, {} losses, {} ties; sign-test p = {:.4}",
            c.processor, c.metric, c.challenger, c.baseline, c.wins, c.losses, c.ties, c.p_value
        );
    }
    if let Some(path) = &args.json {
        let text = serde_json::to_string_pretty(&table).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_atomic(path, text.as_bytes())?;
    }
    Ok(())
}
