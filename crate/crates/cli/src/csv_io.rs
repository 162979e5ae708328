//! Versioned results CSV. The first line is a `#` comment carrying the
//! schema version and the hash of the producing config; step rows and one
//! summary row per episode follow the header.

use std::io::{BufRead, Write};
use std::path::Path;

use latent_refine_core::episode::{EpisodeRecord, Mode};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const COLUMNS: [&str; 16] = [
    "kind",
    "seed",
    "step",
    "reward",
    "mse_pre",
    "psnr_pre",
    "ssim_pre",
    "mse_post",
    "psnr_post",
    "ssim_post",
    "obj_iter0",
    "obj_itern",
    "grad_norm_mean",
    "flags",
    "score",
    "length",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Meta {
    pub schema: u32,
    pub config_hash: String,
    /// Free-form `key=value` pairs after the fixed fields.
    pub extra: Vec<(String, String)>,
}

impl Meta {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Meta { schema: SCHEMA_VERSION, config_hash: config_hash.into(), extra: Vec::new() }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.extra.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.extra.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn line(&self) -> String {
        let mut s = format!("# latent-refine schema={} config={}", self.schema, self.config_hash);
        for (k, v) in &self.extra {
            s.push_str(&format!(" {k}={v}"));
        }
        s
    }

    pub fn parse(line: &str) -> Result<Self> {
        let rest = line
            .strip_prefix("# latent-refine ")
            .ok_or_else(|| CliError::Data("missing results header line".into()))?;
        let mut schema = None;
        let mut hash = None;
        let mut extra = Vec::new();
        for field in rest.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| CliError::Data(format!("bad header field {field:?}")))?;
            match k {
                "schema" => schema = v.parse().ok(),
                "config" => hash = Some(v.to_string()),
                _ => extra.push((k.to_string(), v.to_string())),
            }
        }
        let schema = schema.ok_or_else(|| CliError::Data("header lacks schema version".into()))?;
        if schema != SCHEMA_VERSION {
            return Err(CliError::Data(format!("unsupported results schema {schema}")));
        }
        let config_hash = hash.ok_or_else(|| CliError::Data("header lacks config hash".into()))?;
        Ok(Meta { schema, config_hash, extra })
    }
}

/// One episode as read back from a results file.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub refined: bool,
    pub score: f64,
    pub length: usize,
    pub flags: u32,
    pub mse_pre: f64,
    pub psnr_pre: f64,
    pub ssim_pre: f64,
    pub mse_post: Option<f64>,
    pub psnr_post: Option<f64>,
    pub ssim_post: Option<f64>,
    pub obj_iter0: Option<f64>,
    pub obj_itern: Option<f64>,
    /// Per-step `mse_post − mse_pre`, empty for baseline episodes.
    pub immediate: Vec<f64>,
}

impl EpisodeSummary {
    pub fn from_record(r: &EpisodeRecord) -> Self {
        let mean = |f: &dyn Fn(&latent_refine_core::episode::StepRecord) -> Option<f64>| {
            let v: Vec<f64> = r.steps.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        EpisodeSummary {
            seed: r.seed,
            refined: r.mode == Mode::Refined,
            score: r.score,
            length: r.length,
            flags: r.flags,
            mse_pre: mean(&|s| Some(s.pre.mse)).unwrap_or(f64::NAN),
            psnr_pre: mean(&|s| Some(s.pre.psnr)).unwrap_or(f64::NAN),
            ssim_pre: mean(&|s| Some(s.pre.ssim)).unwrap_or(f64::NAN),
            mse_post: mean(&|s| s.post.map(|q| q.mse)),
            psnr_post: mean(&|s| s.post.map(|q| q.psnr)),
            ssim_post: mean(&|s| s.post.map(|q| q.ssim)),
            obj_iter0: mean(&|s| s.obj_iter0),
            obj_itern: mean(&|s| s.obj_itern),
            immediate: r.steps.iter().filter_map(|s| s.post.map(|q| q.mse - s.pre.mse)).collect(),
        }
    }

    /// Reconstruction error of the states the agent acted from.
    pub fn mse(&self) -> f64 {
        self.mse_post.unwrap_or(self.mse_pre)
    }

    pub fn psnr(&self) -> f64 {
        self.psnr_post.unwrap_or(self.psnr_pre)
    }

    pub fn ssim(&self) -> f64 {
        self.ssim_post.unwrap_or(self.ssim_pre)
    }

    pub fn immediate_mse(&self) -> Option<f64> {
        let v = &self.immediate;
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_results<W: Write>(out: W, meta: &Meta, records: &[EpisodeRecord]) -> Result<()> {
    let mut out = out;
    writeln!(out, "{}", meta.line()).map_err(|e| CliError::Data(e.to_string()))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for r in records {
        for s in &r.steps {
            let post = |f: fn(&latent_refine_core::metrics::Quality) -> f64| opt(s.post.as_ref().map(f));
            w.write_record([
                "step".to_string(),
                r.seed.to_string(),
                s.step.to_string(),
                num(s.reward),
                num(s.pre.mse),
                num(s.pre.psnr),
                num(s.pre.ssim),
                post(|q| q.mse),
                post(|q| q.psnr),
                post(|q| q.ssim),
                opt(s.obj_iter0),
                opt(s.obj_itern),
                opt(s.grad_norm_mean),
                s.flags.to_string(),
                String::new(),
                String::new(),
            ])?;
        }
        let e = EpisodeSummary::from_record(r);
        w.write_record([
            "episode".to_string(),
            r.seed.to_string(),
            String::new(),
            String::new(),
            num(e.mse_pre),
            num(e.psnr_pre),
            num(e.ssim_pre),
            opt(e.mse_post),
            opt(e.psnr_post),
            opt(e.ssim_post),
            opt(e.obj_iter0),
            opt(e.obj_itern),
            String::new(),
            r.flags.to_string(),
            num(r.score),
            r.length.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(())
}

pub fn save_results(path: &Path, meta: &Meta, records: &[EpisodeRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(CliError::io(path))?;
    write_results(std::io::BufWriter::new(file), meta, records)
}

fn field<'a>(row: &'a csv::StringRecord, i: usize) -> &'a str {
    row.get(i).unwrap_or("")
}

fn parse_f(row: &csv::StringRecord, i: usize) -> Result<f64> {
    field(row, i)
        .parse()
        .map_err(|_| CliError::Data(format!("column {} is not a number: {:?}", COLUMNS[i], field(row, i))))
}

fn parse_opt(row: &csv::StringRecord, i: usize) -> Result<Option<f64>> {
    if field(row, i).is_empty() {
        Ok(None)
    } else {
        parse_f(row, i).map(Some)
    }
}

fn parse_int<T: std::str::FromStr>(row: &csv::StringRecord, i: usize) -> Result<T> {
    field(row, i)
        .parse()
        .map_err(|_| CliError::Data(format!("column {} is not an integer: {:?}", COLUMNS[i], field(row, i))))
}

/// Reads a results file back into per-episode summaries, in file order.
pub fn read_results<R: BufRead>(mut input: R) -> Result<(Meta, Vec<EpisodeSummary>)> {
    let mut first = String::new();
    input.read_line(&mut first).map_err(|e| CliError::Data(e.to_string()))?;
    let meta = Meta::parse(first.trim_end())?;
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(COLUMNS.iter().copied()) {
        return Err(CliError::Data("results columns do not match schema".into()));
    }
    let mut episodes = Vec::new();
    let mut immediate: Vec<f64> = Vec::new();
    let mut refined = false;
    for row in rd.records() {
        let row = row?;
        match field(&row, 0) {
            "step" => {
                if let Some(post) = parse_opt(&row, 7)? {
                    immediate.push(post - parse_f(&row, 4)?);
                    refined = true;
                }
            }
            "episode" => {
                episodes.push(EpisodeSummary {
                    seed: parse_int(&row, 1)?,
                    refined,
                    score: parse_f(&row, 14)?,
                    length: parse_int(&row, 15)?,
                    flags: parse_int(&row, 13)?,
                    mse_pre: parse_f(&row, 4)?,
                    psnr_pre: parse_f(&row, 5)?,
                    ssim_pre: parse_f(&row, 6)?,
                    mse_post: parse_opt(&row, 7)?,
                    psnr_post: parse_opt(&row, 8)?,
                    ssim_post: parse_opt(&row, 9)?,
                    obj_iter0: parse_opt(&row, 10)?,
                    obj_itern: parse_opt(&row, 11)?,
                    immediate: std::mem::take(&mut immediate),
                });
                refined = false;
            }
            other => return Err(CliError::Data(format!("unknown row kind {other:?}"))),
        }
    }
    Ok((meta, episodes))
}

pub fn load_results(path: &Path) -> Result<(Meta, Vec<EpisodeSummary>)> {
    let file = std::fs::File::open(path).map_err(CliError::io(path))?;
    read_results(std::io::BufReader::new(file)).map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}
