//! Decode-spec strings: `mode:key=values[:key=values…]`.
//!
//! `mode` is `online` or `batch`; pairs are separated by `:` and each value
//! list by `,`. Multi-valued keys expand as a cartesian product in the fixed
//! order context, lookahead, predict, so `batch:context=40,35,30:lookahead=20`
//! yields three configs. Every expanded config gets a canonical label that
//! parses back to exactly that config.

use rnnlab_core::graphs::{DecodeConfig, DecodeMode};

pub fn label(cfg: &DecodeConfig) -> String {
    match cfg.mode {
        DecodeMode::Online => format!("online:lookahead={}", cfg.lookahead),
        DecodeMode::Batch => format!(
            "batch:context={}:lookahead={}:predict={}",
            cfg.context, cfg.lookahead, cfg.consecutive
        ),
    }
}

fn parse_values(key: &str, text: &str) -> Result<Vec<usize>, String> {
    if text.is_empty() {
        return Err(format!("decode spec: empty value for `{key}`"));
    }
    text.split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|_| format!("decode spec: `{key}={v}` is not a count")))
        .collect()
}

/// Expands one spec string into labeled configs; every config is validated.
pub fn parse_decode_spec(spec: &str) -> Result<Vec<(String, DecodeConfig)>, String> {
    let mut parts = spec.split(':');
    let mode = parts.next().unwrap_or("").trim();
    let allowed: &[&str] = match mode {
        "online" => &["lookahead"],
        "batch" => &["context", "lookahead", "predict"],
        other => return Err(format!("decode spec: unknown mode {other:?} (expected online or batch)")),
    };

    let mut contexts = vec![];
    let mut lookaheads = vec![1usize];
    let mut predicts = vec![1usize];
    for part in parts {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| format!("decode spec: expected key=value, got {part:?}"))?;
        let key = key.trim();
        if !allowed.contains(&key) {
            return Err(format!("decode spec: key `{key}` is not valid for mode `{mode}`"));
        }
        let values = parse_values(key, values)?;
        match key {
            "context" => contexts = values,
            "lookahead" => lookaheads = values,
            "predict" => predicts = values,
            _ => unreachable!(),
        }
    }

    let mut out = Vec::new();
    if mode == "online" {
        for &l in &lookaheads {
            out.push(DecodeConfig::online(l));
        }
    } else {
        if contexts.is_empty() {
            return Err("decode spec: batch mode requires `context=`".to_string());
        }
        for &k in &contexts {
            for &l in &lookaheads {
                for &p in &predicts {
                    out.push(DecodeConfig::batch(k, l, p));
                }
            }
        }
    }
    for cfg in &out {
        cfg.validate().map_err(|e| format!("decode spec `{spec}`: {e}"))?;
    }
    Ok(out.into_iter().map(|cfg| (label(&cfg), cfg)).collect())
}

/// Expands a list of spec strings in order, concatenating their configs.
pub fn parse_decode_specs(specs: &[String]) -> Result<Vec<(String, DecodeConfig)>, String> {
    let mut out = Vec::new();
    for s in specs {
        out.extend(parse_decode_spec(s)?);
    }
    Ok(out)
}
