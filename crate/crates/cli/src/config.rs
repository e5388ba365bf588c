//! Flat `key = value` run configuration.
//!
//! Values are layered: built-in defaults, then the config file, then the
//! `AIDNET_SEED` environment variable, then command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use aidnet_core::model::NetMode;
use aidnet_core::phantom::{DEFAULT_SPACING_MM, DESK_COUNTS};
use aidnet_core::preproc::DESK_SHAPE;

pub const SEED_ENV: &str = "AIDNET_SEED";
pub const ECHO_FILE: &str = "effective_config.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub mode: NetMode,
    pub lambda: f64,
    pub margin: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub shape: [usize; 3],
    pub counts: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub cohort_dir: PathBuf,
    pub prep_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
    pub partition: String,
    pub subject: Option<String>,
    pub class: Option<usize>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            mode: NetMode::Aid,
            lambda: 0.001,
            margin: 1.0,
            lr: 1e-4,
            epochs: 100,
            batch_size: 2,
            shape: DESK_SHAPE,
            counts: DESK_COUNTS,
            spacing_mm: DEFAULT_SPACING_MM,
            cohort_dir: "cohort".into(),
            prep_dir: "prepared".into(),
            checkpoint: "run/best.ckpt".into(),
            out_dir: "run".into(),
            partition: "test".into(),
            subject: None,
            class: None,
        }
    }
}

fn triple<T: std::str::FromStr>(value: &str, sep: char) -> Option<[T; 3]> {
    let parts: Vec<T> = value.split(sep).map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    parts.try_into().ok()
}

fn bad(key: &str, value: &str) -> String {
    format!("invalid value {value:?} for {key}")
}

impl Config {
    /// Apply one setting. Unknown keys and unparsable values are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let num = |x: Option<f64>| x.filter(|f| f.is_finite()).ok_or_else(|| bad(key, v));
        match key {
            "seed" => self.seed = v.parse().map_err(|_| bad(key, v))?,
            "mode" => self.mode = v.parse().map_err(|e: aidnet_core::Error| e.to_string())?,
            "lambda" => self.lambda = num(v.parse().ok())?,
            "margin" => self.margin = num(v.parse().ok())?,
            "lr" => self.lr = num(v.parse().ok())?,
            "epochs" => self.epochs = v.parse().map_err(|_| bad(key, v))?,
            "batch_size" => self.batch_size = v.parse().map_err(|_| bad(key, v))?,
            "shape" => self.shape = triple(v, 'x').ok_or_else(|| bad(key, v))?,
            "counts" => self.counts = triple(v, ',').ok_or_else(|| bad(key, v))?,
            "spacing_mm" => self.spacing_mm = triple(v, ',').ok_or_else(|| bad(key, v))?,
            "cohort_dir" => self.cohort_dir = v.into(),
            "prep_dir" => self.prep_dir = v.into(),
            "checkpoint" => self.checkpoint = v.into(),
            "out_dir" => self.out_dir = v.into(),
            "partition" => {
                if !["train", "val", "test", "all"].contains(&v) {
                    return Err(bad(key, v));
                }
                self.partition = v.into();
            }
            "subject" => self.subject = Some(v.into()),
            "class" => {
                let c: usize = v.parse().map_err(|_| bad(key, v))?;
                if c > 2 {
                    return Err(bad(key, v));
                }
                self.class = Some(c);
            }
            _ => return Err(format!("unknown config key {key:?}")),
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("config line {}: expected key = value", n + 1))?;
            self.set(k.trim(), v)
                .map_err(|e| format!("config line {}: {e}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        self.apply_text(&text)
    }

    /// Every key, in a form [`Config::apply_text`] reads back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let [d, h, w] = self.shape;
        let [c0, c1, c2] = self.counts;
        let [s0, s1, s2] = self.spacing_mm;
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "mode = {}", self.mode.as_str());
        let _ = writeln!(s, "lambda = {:?}", self.lambda);
        let _ = writeln!(s, "margin = {:?}", self.margin);
        let _ = writeln!(s, "lr = {:?}", self.lr);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "shape = {d}x{h}x{w}");
        let _ = writeln!(s, "counts = {c0},{c1},{c2}");
        let _ = writeln!(s, "spacing_mm = {s0:?},{s1:?},{s2:?}");
        let _ = writeln!(s, "cohort_dir = {}", self.cohort_dir.display());
        let _ = writeln!(s, "prep_dir = {}", self.prep_dir.display());
        let _ = writeln!(s, "checkpoint = {}", self.checkpoint.display());
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "partition = {}", self.partition);
        if let Some(id) = &self.subject {
            let _ = writeln!(s, "subject = {id}");
        }
        if let Some(c) = self.class {
            let _ = writeln!(s, "class = {c}");
        }
        s
    }

    /// Defaults, then `file`, then the seed variable, then `flags`.
    pub fn resolve(file: Option<&Path>, env_seed: Option<&str>, flags: &[(&str, String)]) -> Result<Config, String> {
        let mut cfg = Config::default();
        if let Some(f) = file {
            cfg.apply_file(f)?;
        }
        if let Some(seed) = env_seed {
            cfg.set("seed", seed).map_err(|e| format!("{SEED_ENV}: {e}"))?;
        }
        for (k, v) in flags {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut c = Config::default();
        c.apply_text("seed = 9\nlambda=0\nshape = 16x16x8 # small\nsubject = s0003\nclass = 2\nlr = 0.00031")
            .unwrap();
        let mut back = Config::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        let mut d = Config::default();
        d.apply_text(&Config::default().to_text()).unwrap();
        assert_eq!(d, Config::default());
    }

    #[test]
    fn layering_order() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.txt");
        std::fs::write(&f, "seed = 1\nepochs = 5\n").unwrap();
        let c = Config::resolve(Some(&f), None, &[]).unwrap();
        assert_eq!((c.seed, c.epochs), (1, 5));
        let c = Config::resolve(Some(&f), Some("2"), &[]).unwrap();
        assert_eq!(c.seed, 2);
        let c = Config::resolve(Some(&f), Some("2"), &[("seed", "3".into())]).unwrap();
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn rejects_garbage() {
        let mut c = Config::default();
        assert!(c.set("shape", "48x32").is_err());
        assert!(c.set("lr", "NaN").is_err());
        assert!(c.set("mode", "resnet").is_err());
        assert!(c.set("class", "3").is_err());
        assert!(c.set("colour", "red").is_err());
        assert!(c.apply_text("just words").is_err());
        assert!(Config::resolve(None, Some("x"), &[]).is_err());
    }
}
