use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::autodiff::Tensor;

use super::{Architecture, AutoencoderModel, ModelConfig, ModelError, Parameter};

const MAGIC: &str = "FTAED-MODEL v1";

/// Text header (config, then one `tensor <name> <rows> <cols>` line per
/// parameter) terminated by `end_header`, followed by the parameters as
/// little-endian f32 in header order.
pub fn write_checkpoint<W: Write>(mut w: W, model: &AutoencoderModel) -> std::io::Result<()> {
    let c = model.config();
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "architecture={}", c.architecture)?;
    writeln!(w, "hidden_dim={}", c.hidden_dim)?;
    writeln!(w, "latent_dim={}", c.latent_dim)?;
    writeln!(w, "n_layers={}", c.n_layers)?;
    writeln!(w, "dropout={}", c.dropout)?;
    writeln!(w, "gat_heads={}", c.gat_heads)?;
    writeln!(w, "timesteps={}", c.timesteps)?;
    writeln!(w, "learning_rate={}", c.learning_rate)?;
    writeln!(w, "gat_self_loops={}", c.gat_self_loops)?;
    writeln!(w, "rgcn_learned_norm={}", c.rgcn_learned_norm)?;
    writeln!(w, "n_base={}", model.n_base())?;
    writeln!(w, "n_relations={}", model.n_relations())?;
    for p in model.params() {
        writeln!(w, "tensor {} {} {}", p.name, p.value.rows(), p.value.cols())?;
    }
    writeln!(w, "end_header")?;
    for p in model.params() {
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn bad(m: impl Into<String>) -> ModelError {
    ModelError::BadCheckpoint(m.into())
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ModelError> {
    v.parse().map_err(|_| bad(format!("bad value for `{key}`: `{v}`")))
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<AutoencoderModel, ModelError> {
    let mut line = String::new();
    let mut next = |r: &mut R| -> Result<String, ModelError> {
        line.clear();
        r.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
        Ok(line.trim_end().to_string())
    };
    if next(&mut r)? != MAGIC {
        return Err(bad("missing magic line"));
    }
    let mut cfg = ModelConfig::defaults(Architecture::Gcn);
    let mut seen_arch = false;
    let (mut n_base, mut n_relations) = (None, None);
    let mut shapes = Vec::new();
    loop {
        let l = next(&mut r)?;
        if l == "end_header" {
            break;
        }
        if l.is_empty() {
            return Err(bad("truncated header"));
        }
        if let Some(rest) = l.strip_prefix("tensor ") {
            let f: Vec<&str> = rest.split(' ').collect();
            if f.len() != 3 {
                return Err(bad(format!("bad tensor line `{l}`")));
            }
            shapes.push((
                f[0].to_string(),
                parse::<usize>("rows", f[1])?,
                parse::<usize>("cols", f[2])?,
            ));
            continue;
        }
        let (k, v) = l.split_once('=').ok_or_else(|| bad(format!("bad header line `{l}`")))?;
        match k {
            "architecture" => {
                cfg.architecture = v.parse()?;
                seen_arch = true;
            }
            "hidden_dim" => cfg.hidden_dim = parse(k, v)?,
            "latent_dim" => cfg.latent_dim = parse(k, v)?,
            "n_layers" => cfg.n_layers = parse(k, v)?,
            "dropout" => cfg.dropout = parse(k, v)?,
            "gat_heads" => cfg.gat_heads = parse(k, v)?,
            "timesteps" => cfg.timesteps = parse(k, v)?,
            "learning_rate" => cfg.learning_rate = parse(k, v)?,
            "gat_self_loops" => cfg.gat_self_loops = parse(k, v)?,
            "rgcn_learned_norm" => cfg.rgcn_learned_norm = parse(k, v)?,
            "n_base" => n_base = Some(parse(k, v)?),
            "n_relations" => n_relations = Some(parse(k, v)?),
            _ => return Err(bad(format!("unknown header key `{k}`"))),
        }
    }
    if !seen_arch {
        return Err(bad("missing architecture"));
    }
    let n_base = n_base.ok_or_else(|| bad("missing n_base"))?;
    let n_relations = n_relations.ok_or_else(|| bad("missing n_relations"))?;
    let mut params = Vec::with_capacity(shapes.len());
    for (name, rows, cols) in shapes {
        let mut raw = vec![0u8; rows * cols * 4];
        r.read_exact(&mut raw)
            .map_err(|_| bad(format!("truncated data for `{name}`")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.push(Parameter {
            name,
            value: Tensor::from_vec(rows, cols, data),
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| bad(e.to_string()))? != 0 {
        return Err(bad("trailing bytes"));
    }
    AutoencoderModel::from_parts(cfg, n_base, n_relations, params)
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &AutoencoderModel) -> Result<(), ModelError> {
    let path = path.as_ref();
    let io = |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write_checkpoint(&mut w, model).map_err(io)?;
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<AutoencoderModel, ModelError> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_checkpoint(BufReader::new(f))
}
