use std::path::Path;

use serde_json::{json, Map, Value};

use super::Command;
use crate::error::{Error, Result};

pub const SEED_ENV: &str = "RELTASK_SEED";

/// Built-in document used when no `--config` is given.
pub fn default_document(cmd: Command) -> Value {
    let reg_model = json!({
        "k": 0, "vocab": 0, "d_emb": 64, "d_head": 32, "heads": 4, "d_mlp": 128
    });
    let small_train = json!({ "lr": 1e-3, "batch_size": 16, "epochs": 100 });
    match cmd {
        Command::Gen => json!({ "task": { "builtin": "same_different" }, "n": 512 }),
        Command::Train => json!({
            "task": { "builtin": "aba_vs_abb" },
            "arch": { "kind": "transformer", "model": reg_model },
            "n": 256,
            "train": small_train,
        }),
        Command::Kernel => json!({
            "task": { "builtin": "same_different" },
            "kernel": trans_kernel(),
            "n_grid": [64, 128, 256, 512],
        }),
        Command::Nmatrix => json!({
            "task": { "builtin": "same_different" },
            "kernel": with(&trans_kernel(), "n_samples", json!(crate::kernel::N_MATRIX_MC_SAMPLES)),
        }),
        Command::Probe => json!({ "d_emb": [64, 128, 256, 512, 1024] }),
        Command::Sweep => json!({
            "task": { "builtin": "aba_vs_abb" },
            "variants": [
                { "name": "vanilla", "model": reg_model },
                { "name": "attn_identity", "model": with(&reg_model, "attn_identity", json!(true)) },
            ],
            "n_grid": [128, 256, 512, 1024],
            "lrs": [1e-3],
            "train": small_train,
        }),
        Command::Figures | Command::Selftest => json!({}),
    }
}

fn trans_kernel() -> Value {
    json!({ "kind": "trans", "beta": 0.5, "gamma": 0.5, "b1": 1.0, "b2": 0.3 })
}

fn with(v: &Value, key: &str, val: Value) -> Value {
    let mut v = v.clone();
    v[key] = val;
    v
}

/// Parses an override value: JSON if it parses, a list if it contains
/// commas, a string otherwise.
pub fn parse_value(s: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(s) {
        return v;
    }
    if s.contains(',') {
        return Value::Array(s.split(',').map(|p| parse_value(p.trim())).collect());
    }
    Value::String(s.to_string())
}

/// `--key value`, `--key=value` or a bare `--flag` (true).
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, Value)>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        let Some(body) = a.strip_prefix("--") else {
            return Err(Error::Config(format!("expected --key, found {a:?}")));
        };
        if let Some((k, v)) = body.split_once('=') {
            out.push((k.replace('-', "_"), parse_value(v)));
            i += 1;
        } else if i + 1 < args.len() && !args[i + 1].starts_with("--") {
            out.push((body.replace('-', "_"), parse_value(&args[i + 1])));
            i += 2;
        } else {
            out.push((body.replace('-', "_"), Value::Bool(true)));
            i += 1;
        }
    }
    Ok(out)
}

fn set_path(doc: &mut Value, path: &str, val: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {path:?}: {p:?} is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(p.to_string(), val);
            return Ok(());
        }
        cur = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn kernel_alias(v: Value) -> Result<Value> {
    match v.as_str() {
        Some("mlp") | Some("inner_product") => Ok(json!({ "kind": "inner_product" })),
        Some("trans") => Ok(trans_kernel()),
        Some("attn") => Ok(json!({ "kind": "attn", "beta": 0.5, "gamma": 0.5 })),
        Some(other) => Err(Error::Config(format!("unknown kernel {other:?} (mlp, trans, attn)"))),
        None => Ok(v),
    }
}

/// Applies one override, expanding the command-specific shorthands.
fn apply(cmd: Command, doc: &mut Value, key: &str, val: Value) -> Result<()> {
    let list = |v: Value| if v.is_array() { v } else { Value::Array(vec![v]) };
    match (cmd, key) {
        (_, "builtin") => set_path(doc, "task", json!({ "builtin": val })),
        (_, "out") => set_path(doc, "out_dir", val),
        (Command::Nmatrix, "kernel") => {
            let mut k = kernel_alias(val)?;
            if k["kind"] != "inner_product" && k.get("n_samples").is_none() {
                k["n_samples"] = json!(crate::kernel::N_MATRIX_MC_SAMPLES);
            }
            set_path(doc, "kernel", k)
        }
        (_, "kernel") => set_path(doc, "kernel", kernel_alias(val)?),
        (Command::Probe, "demb") => set_path(doc, "d_emb", list(val)),
        (Command::Probe, "d_emb") => set_path(doc, "d_emb", list(val)),
        (Command::Kernel | Command::Sweep, "n_grid") => set_path(doc, "n_grid", list(val)),
        (Command::Train, "arch") => match val.as_str() {
            Some("mlp") => set_path(doc, "arch", json!({ "kind": "mlp", "width": 256, "depth": 1 })),
            Some("transformer") => set_path(doc, "arch", default_document(Command::Train)["arch"].clone()),
            _ => set_path(doc, "arch", val),
        },
        (Command::Train, "attn_identity" | "value_identity" | "d_emb" | "d_head" | "heads" | "d_mlp" | "depth") => {
            set_path(doc, &format!("arch.model.{key}"), val)
        }
        (Command::Train | Command::Sweep, "lr" | "epochs" | "batch_size") => set_path(doc, &format!("train.{key}"), val),
        _ => set_path(doc, key, val),
    }
}

/// Config document after the file (or built-in default), the seed
/// environment variable and the overrides, in that order.
pub fn resolve_document(cmd: Command, file: Option<&Path>, overrides: &[String], env_seed: Option<&str>) -> Result<Value> {
    let mut doc = match file {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => default_document(cmd),
    };
    if !doc.is_object() {
        return Err(Error::Config("config must be a JSON object".into()));
    }
    if let Some(s) = env_seed {
        if doc.get("seed").is_none() {
            let seed: u64 = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {s:?}")))?;
            doc["seed"] = json!(seed);
        }
    }
    for (k, v) in parse_overrides(overrides)? {
        apply(cmd, &mut doc, &k, v)?;
    }
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn override_forms() {
        let o = parse_overrides(&args("--n 512 --value-identity --demb 64,128 --x=\"s\" --name abc")).unwrap();
        assert_eq!(o[0], ("n".into(), json!(512)));
        assert_eq!(o[1], ("value_identity".into(), json!(true)));
        assert_eq!(o[2], ("demb".into(), json!([64, 128])));
        assert_eq!(o[3], ("x".into(), json!("s")));
        assert_eq!(o[4], ("name".into(), json!("abc")));
        assert!(parse_overrides(&args("n 5")).is_err());
    }

    #[test]
    fn aliases_expand() {
        let d = resolve_document(Command::Nmatrix, None, &args("--builtin aba_vs_abb --kernel mlp"), None).unwrap();
        assert_eq!(d["task"], json!({ "builtin": "aba_vs_abb" }));
        assert_eq!(d["kernel"], json!({ "kind": "inner_product" }));
        let d = resolve_document(Command::Train, None, &args("--attn-identity --lr 0.01"), None).unwrap();
        assert_eq!(d["arch"]["model"]["attn_identity"], json!(true));
        assert_eq!(d["train"]["lr"], json!(0.01));
        let d = resolve_document(Command::Probe, None, &args("--demb 32"), None).unwrap();
        assert_eq!(d["d_emb"], json!([32]));
    }

    #[test]
    fn env_seed_is_a_default_only() {
        let d = resolve_document(Command::Gen, None, &[], Some("9")).unwrap();
        assert_eq!(d["seed"], json!(9));
        let d = resolve_document(Command::Gen, None, &args("--seed 3"), Some("9")).unwrap();
        assert_eq!(d["seed"], json!(3));
        assert!(resolve_document(Command::Gen, None, &[], Some("x")).is_err());
    }
}
