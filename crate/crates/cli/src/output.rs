use std::io::Write;
use std::path::Path;

use drpi::data::PeptideInference;

use crate::CliError;

/// `-log10(q)` for `q = 0`.
pub const NEG_LOG10_CAP: f64 = 300.0;

fn csv_error(path: &str) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{path}: {e}"))
}

/// Results table: `peptide_id,method,beta,se,z,p_value,q_value,selected`.
pub fn write_results<W: Write>(results: &[PeptideInference], selected: &[bool], out: W) -> Result<(), CliError> {
    let err = csv_error("results");
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["peptide_id", "method", "beta", "se", "z", "p_value", "q_value", "selected"])
        .map_err(&err)?;
    for (r, &s) in results.iter().zip(selected) {
        w.write_record([
            r.peptide_id.as_str(),
            r.method.as_str(),
            &r.beta.to_string(),
            &r.se.to_string(),
            &r.z.to_string(),
            &r.p_value.to_string(),
            &r.q_value.to_string(),
            &s.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("results: {e}")))
}

/// `-log10(q)`, capped at [`NEG_LOG10_CAP`]; the flag reports the cap.
pub fn neg_log10_q(q: f64) -> (f64, bool) {
    if q <= 0.0 {
        (NEG_LOG10_CAP, true)
    } else {
        let v = -q.log10();
        // -log10(1) is -0.0
        (if v == 0.0 { 0.0 } else { v.min(NEG_LOG10_CAP) }, v >= NEG_LOG10_CAP)
    }
}

/// Volcano-plot data: `peptide_id,beta,neg_log10_q,selected,capped`.
pub fn emit_volcano_data(results: &[PeptideInference], selected: &[bool], path: &Path) -> Result<(), CliError> {
    if results.is_empty() {
        return Err(CliError::Usage("no results to write volcano data for".into()));
    }
    let display = path.display().to_string();
    let err = csv_error(&display);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(["peptide_id", "beta", "neg_log10_q", "selected", "capped"])
        .map_err(&err)?;
    for (r, &s) in results.iter().zip(selected) {
        let (v, capped) = neg_log10_q(r.q_value);
        w.write_record([r.peptide_id.as_str(), &r.beta.to_string(), &v.to_string(), &s.to_string(), &capped.to_string()])
            .map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{display}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use drpi::data::MethodKind;

    #[test]
    fn neg_log10_examples() {
        assert!((neg_log10_q(0.05).0 - 1.3010299956639813).abs() < 1e-12);
        assert_eq!(neg_log10_q(1.0), (0.0, false));
        assert_eq!(neg_log10_q(0.0), (300.0, true));
        assert_eq!(neg_log10_q(1e-320), (300.0, true));
    }

    #[test]
    fn volcano_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        let r = PeptideInference {
            peptide_id: "p1".into(),
            method: MethodKind::DrUw,
            beta: 0.5,
            se: 0.1,
            z: 5.0,
            p_value: 0.0,
            q_value: 0.0,
            degenerate: true,
        };
        emit_volcano_data(&[r], &[true], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "peptide_id,beta,neg_log10_q,selected,capped\np1,0.5,300,true,true\n");
        assert!(emit_volcano_data(&[], &[], &path).is_err());
    }
}
