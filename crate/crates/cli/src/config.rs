//! Config-file merging and thread setup.
//!
//! A config file holds `key=value` lines whose keys are long flag names
//! without the leading dashes (`epochs=500`, `no-pose-correction=true`).
//! Its entries are spliced in right after the subcommand, so flags given on
//! the command line come later and win.

use std::ffi::OsString;
use std::path::Path;

use selfcal_core::io::read_kv;

pub const THREADS_ENV: &str = "SELFCAL_THREADS";

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let pairs = read_kv(Path::new(&path)).map_err(|e| e.to_string())?;
    let mut injected = Vec::new();
    for (k, v) in pairs {
        if k == "config" {
            return Err("config files cannot include other config files".into());
        }
        match v.as_str() {
            "true" => injected.push(OsString::from(format!("--{k}"))),
            "false" => {}
            _ => injected.push(OsString::from(format!("--{k}={v}"))),
        }
    }
    // argv[0], subcommand, then file entries, then the user's flags
    let split = args.len().min(2);
    let mut out: Vec<OsString> = args[..split].to_vec();
    out.extend(injected);
    out.extend(args[split..].iter().cloned());
    Ok(out)
}

/// Sizes the global worker pool from the environment, if set.
pub fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn file_entries_precede_user_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "# comment\nepochs=10\nno-pose-correction=true\nverbose=false\n").unwrap();
        let args = os(&["selfcal", "reconstruct", "--config", cfg.to_str().unwrap(), "--epochs", "3"]);
        let out = expand_args(args).unwrap();
        let s: Vec<String> = out.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert_eq!(&s[..4], &["selfcal", "reconstruct", "--epochs=10", "--no-pose-correction"]);
        assert_eq!(s.last().unwrap(), "3");
    }

    #[test]
    fn no_config_is_passthrough() {
        let args = os(&["selfcal", "fbp", "--sinogram", "x.bin"]);
        assert_eq!(expand_args(args.clone()).unwrap(), args);
    }
}
