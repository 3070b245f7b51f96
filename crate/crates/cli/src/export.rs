use modci_core::linalg::spectral_norm;
use modci_core::record::RunRecord;

use crate::files::{csv_bytes, write_atomic, CliError};
use crate::ExportArgs;

fn fmt(v: &[f64]) -> Vec<String> {
    v.iter().map(f64::to_string).collect()
}

fn cov_norm(mean: &[f64], cov: &[f64]) -> Result<String, CliError> {
    let est = modci_core::GaussianEstimate::from_slices(mean, cov)?;
    Ok(spectral_norm(&est.cov).to_string())
}

pub fn run(args: &ExportArgs) -> Result<(), CliError> {
    let rec = RunRecord::load(&args.record)?;
    let time = |k: usize| rec.times.get(k).copied().unwrap_or(f64::NAN).to_string();

    let truth = csv_bytes(|w| {
        w.write_record(["step", "time", "target", "x", "y", "vx", "vy"])?;
        for t in &rec.truth.targets {
            for (i, s) in t.states.iter().enumerate() {
                let k = t.start_step + i;
                let mut row = vec![k.to_string(), time(k), t.id.to_string()];
                row.extend(fmt(s));
                w.write_record(&row)?;
            }
        }
        Ok(())
    })?;

    let measurements = csv_bytes(|w| {
        w.write_record(["node", "step", "time", "x", "y"])?;
        for s in &rec.scans {
            for (k, scan) in s.scans.iter().enumerate() {
                for y in scan {
                    let mut row = vec![s.node.to_string(), k.to_string(), time(k)];
                    row.extend(fmt(y));
                    w.write_record(&row)?;
                }
            }
        }
        Ok(())
    })?;

    let estimates = csv_bytes(|w| {
        w.write_record(["node", "algorithm", "step", "time", "track", "x", "y", "vx", "vy", "cov_norm"])?;
        for stream in rec.nodes.iter().chain(&rec.baselines) {
            for step in &stream.steps {
                for e in &step.estimates {
                    let mut row = vec![
                        stream.node.to_string(),
                        stream.algorithm.clone(),
                        step.step.to_string(),
                        step.time.to_string(),
                        e.track.to_string(),
                    ];
                    row.extend(fmt(&e.mean));
                    row.push(cov_norm(&e.mean, &e.cov)?);
                    w.write_record(&row)?;
                }
            }
        }
        Ok(())
    })?;

    let fused = csv_bytes(|w| {
        w.write_record([
            "processor", "method", "step", "time", "key", "fused", "members", "x", "y", "vx", "vy", "cov_norm",
        ])?;
        for stream in &rec.fused {
            for step in &stream.steps {
                for o in &step.outputs {
                    let members: Vec<String> = o.members.iter().map(|(n, t)| format!("{n}:{t}")).collect();
                    let mut row = vec![
                        stream.processor.to_string(),
                        stream.method.key().to_string(),
                        step.step.to_string(),
                        step.time.to_string(),
                        o.key.clone(),
                        o.fused.to_string(),
                        members.join(" "),
                    ];
                    row.extend(fmt(&o.mean));
                    row.push(cov_norm(&o.mean, &o.cov)?);
                    w.write_record(&row)?;
                }
            }
        }
        Ok(())
    })?;

    for (name, bytes) in [
        ("truth.csv", truth),
        ("measurements.csv", measurements),
        ("estimates.csv", estimates),
        ("fused.csv", fused),
    ] {
        write_atomic(&args.out.join(name), &bytes)?;
    }
    Ok(())
}
