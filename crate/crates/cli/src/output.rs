use std::io::Write;
use std::path::Path;

use dlnmlps::LatentFit;

use crate::CliError;

/// Provenance written at the top of every tabular output.
#[derive(Debug, Clone)]
pub struct Stamp {
    pub config_hash: String,
    pub master_seed: u64,
}

pub fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Writes to a temporary file next to `path`, then renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// CSV with a leading `# config_hash=... master_seed=...` comment line.
pub fn csv_bytes<I, R, S>(stamp: &Stamp, header: &[&str], rows: I) -> Result<Vec<u8>, CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut buf = format!("# config_hash={} master_seed={}\n", stamp.config_hash, stamp.master_seed).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).map_err(dlnmlps::Error::from)?;
        for r in rows {
            w.write_record(r).map_err(dlnmlps::Error::from)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

pub fn fit_log(fit: &LatentFit, stamp: &Stamp, elapsed: f64) -> String {
    let mut s = format!("# config_hash={} master_seed={}\n", stamp.config_hash, stamp.master_seed);
    s.push_str("iteration\tobjective\tnewton_iters\tgrad_norm\thypers\n");
    for t in &fit.trace {
        let v: Vec<String> = t.v.iter().map(|x| format!("{x:.6}")).collect();
        s.push_str(&format!("{}\t{:.10}\t{}\t{:.3e}\t{}\n", t.eval, t.objective, t.newton_iters, t.grad_norm, v.join(",")));
    }
    s.push_str(&format!(
        "# final: objective {:.10}, newton iterations {}, grad norm {:.3e}, newton converged {}, hyperparameters converged {} after {} evaluations\n",
        fit.logpost, fit.newton_iters, fit.grad_norm, fit.converged, fit.hyper_converged, fit.hyper_evals
    ));
    for (name, v) in fit.natural_hypers() {
        s.push_str(&format!("# {name} = {v}\n"));
    }
    s.push_str(&format!("# elapsed {elapsed:.2}s\n"));
    s
}
