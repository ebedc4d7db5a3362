//! Log-log plot tables from a result manifest.

use anyhow::{anyhow, bail, Result};
use mclt_core::bounds::BoundId;

use crate::experiment::{ResultManifest, Series};
use crate::ConfigError;

/// Rate manifests give `log_abscissa, log_d_hat, log_<ID>...` sorted by
/// abscissa; rows with `d_hat = 0` keep a blank `log_d_hat` and a warning.
/// Bounds-table manifests pass their table through unchanged.
pub fn emit_plot_data(manifest: &ResultManifest, references: &[BoundId]) -> Result<Vec<u8>> {
    match &manifest.series {
        Series::Rates(s) => {
            if s.points.is_empty() {
                bail!(ConfigError::new("manifest has an empty rate series"));
            }
            for id in references {
                if !s.bound_ids.contains(id) {
                    bail!(ConfigError::new(format!("reference {id} is not in the manifest")));
                }
            }
            let mut order: Vec<usize> = (0..s.points.len()).collect();
            order.sort_by(|&a, &b| s.points[a].abscissa.total_cmp(&s.points[b].abscissa).then(a.cmp(&b)));
            let any_zero = s.points.iter().any(|p| p.estimate.d_hat <= 0.0);
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["log_abscissa".to_string(), "log_d_hat".to_string()];
            header.extend(references.iter().map(|id| format!("log_{id}")));
            if any_zero {
                header.push("warning".into());
            }
            w.write_record(&header)?;
            for row in order {
                let p = &s.points[row];
                let mut rec = vec![p.abscissa.ln().to_string()];
                rec.push(if p.estimate.d_hat > 0.0 {
                    p.estimate.d_hat.ln().to_string()
                } else {
                    String::new()
                });
                for &id in references {
                    rec.push(s.bound(row, id).filter(|v| *v > 0.0).map(|v| v.ln().to_string()).unwrap_or_default());
                }
                if any_zero {
                    rec.push(if p.estimate.d_hat > 0.0 {
                        String::new()
                    } else {
                        "d_hat = 0 excluded".into()
                    });
                }
                w.write_record(&rec)?;
            }
            w.into_inner().map_err(|e| anyhow!("csv: {e}"))
        }
        Series::BoundsTable(_) => manifest.series_csv(),
        _ => bail!(ConfigError::new(format!(
            "manifest of kind {} has no plottable series",
            manifest.config.kind
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::execute;
    use crate::ExperimentConfig;

    #[test]
    fn rates_plot_is_sorted_with_reference_column() {
        let c = ExperimentConfig::from_json(
            r#"{"kind":"rates","kernel":{"name":"iid_rademacher"},"seed":2,
                "grid":[{"n":64,"m":1000},{"n":16,"m":1000},{"n":32,"m":1000}],"bounds":["T1"]}"#,
        )
        .unwrap();
        let mut m = execute(&c).unwrap();
        let out = String::from_utf8(emit_plot_data(&m, &[BoundId::T1]).unwrap()).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "log_abscissa,log_d_hat,log_T1");
        let xs: Vec<f64> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(xs, vec![16f64.ln(), 32f64.ln(), 64f64.ln()]);

        let Series::Rates(s) = &mut m.series else { panic!() };
        s.points[0].estimate.d_hat = 0.0;
        let out = String::from_utf8(emit_plot_data(&m, &[]).unwrap()).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "log_abscissa,log_d_hat,warning");
        assert_eq!(lines[3], format!("{},,d_hat = 0 excluded", 64f64.ln()));
        assert!(emit_plot_data(&m, &[BoundId::Renz]).is_err());
    }

    #[test]
    fn bounds_table_passes_through() {
        let c = ExperimentConfig::from_json(
            r#"{"kind":"bounds-table","seed":1,"bounds":["C1"],"table":[{"epsilon":0.1,"rho":1}]}"#,
        )
        .unwrap();
        let m = execute(&c).unwrap();
        assert_eq!(emit_plot_data(&m, &[]).unwrap(), m.series_csv().unwrap());
    }
}
