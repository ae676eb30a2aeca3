//! Plain-text module configuration.
//!
//! ```text
//! # comments run from '#' to the end of the line
//! kind = module_b              # aspp | aspp_plus | module_a | module_b (required)
//! pyramid_impl = cascaded      # naive | cascaded (default cascaded)
//! include_image_level = true   # default true
//! branch_out_c = 256           # default 256
//!
//! [branch pool3]               # one block per branch, in order
//! pool_kernel = 3              # default 1
//! pool_dilation = 1            # default 1
//! conv_kernel = 3              # required
//! conv_dilation = 3            # default 1
//! ```
//!
//! Top-level keys must precede the first branch block. Unknown keys,
//! repeated keys and malformed values are errors carrying the line number.
//! After parsing, the branch list must match the layout required by `kind`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;
use vortex_core::context::{BranchSpec, ModuleConfig, ModuleKind, DEFAULT_BRANCH_OUT_C};
use vortex_core::pooling::PyramidImpl;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error(transparent)]
    Invalid(#[from] vortex_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn syntax(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Syntax { line, message: message.into() }
}

#[derive(Default)]
struct RawBranch {
    name: String,
    line: usize,
    pool_kernel: Option<usize>,
    pool_dilation: Option<usize>,
    conv_kernel: Option<usize>,
    conv_dilation: Option<usize>,
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| syntax(line, format!("invalid value `{value}` for `{key}`")))
}

fn set<T>(slot: &mut Option<T>, line: usize, key: &str, value: T) -> Result<(), ConfigError> {
    if slot.replace(value).is_some() {
        return Err(syntax(line, format!("duplicate key `{key}`")));
    }
    Ok(())
}

pub fn parse_config(text: &str) -> Result<ModuleConfig, ConfigError> {
    let mut kind: Option<ModuleKind> = None;
    let mut imp: Option<PyramidImpl> = None;
    let mut image_level: Option<bool> = None;
    let mut out_c: Option<usize> = None;
    let mut branches: Vec<RawBranch> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(header) = content.strip_prefix('[') {
            let inner = header.strip_suffix(']').ok_or_else(|| syntax(line, "unterminated section header"))?;
            let mut parts = inner.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some("branch"), Some(name), None) => {
                    branches.push(RawBranch { name: name.to_owned(), line, ..Default::default() })
                }
                _ => return Err(syntax(line, format!("expected `[branch <name>]`, found `[{inner}]`"))),
            }
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| syntax(line, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            return Err(syntax(line, format!("missing value for `{key}`")));
        }
        match branches.last_mut() {
            None => match key {
                "kind" => {
                    let v = value.parse().map_err(|e: vortex_core::Error| syntax(line, e.to_string()))?;
                    set(&mut kind, line, key, v)?
                }
                "pyramid_impl" => {
                    let v = value.parse().map_err(|e: vortex_core::Error| syntax(line, e.to_string()))?;
                    set(&mut imp, line, key, v)?
                }
                "include_image_level" => set(&mut image_level, line, key, parse_value(line, key, value)?)?,
                "branch_out_c" => set(&mut out_c, line, key, parse_value(line, key, value)?)?,
                _ => return Err(syntax(line, format!("unknown key `{key}`"))),
            },
            Some(b) => {
                let slot = match key {
                    "pool_kernel" => &mut b.pool_kernel,
                    "pool_dilation" => &mut b.pool_dilation,
                    "conv_kernel" => &mut b.conv_kernel,
                    "conv_dilation" => &mut b.conv_dilation,
                    _ => return Err(syntax(line, format!("unknown branch key `{key}`"))),
                };
                set(slot, line, key, parse_value(line, key, value)?)?;
            }
        }
    }

    let kind = kind.ok_or_else(|| ConfigError::Missing("kind".into()))?;
    let branches = branches
        .into_iter()
        .map(|b| {
            let conv_kernel = b
                .conv_kernel
                .ok_or_else(|| syntax(b.line, format!("branch `{}` is missing `conv_kernel`", b.name)))?;
            Ok(BranchSpec {
                name: b.name,
                pool_kernel: b.pool_kernel.unwrap_or(1),
                pool_dilation: b.pool_dilation.unwrap_or(1),
                conv_kernel,
                conv_dilation: b.conv_dilation.unwrap_or(1),
            })
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    let cfg = ModuleConfig {
        kind,
        branches,
        pyramid_impl: imp.unwrap_or_default(),
        include_image_level: image_level.unwrap_or(true),
        branch_out_c: out_c.unwrap_or(DEFAULT_BRANCH_OUT_C),
    };
    cfg.check_layout()?;
    Ok(cfg)
}

/// Canonical text form; `parse_config(&render_config(c)) == c` for any
/// config that passes layout checks.
pub fn render_config(cfg: &ModuleConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "kind = {}", cfg.kind.name());
    let _ = writeln!(s, "pyramid_impl = {}", cfg.pyramid_impl.name());
    let _ = writeln!(s, "include_image_level = {}", cfg.include_image_level);
    let _ = writeln!(s, "branch_out_c = {}", cfg.branch_out_c);
    for b in &cfg.branches {
        let _ = write!(
            s,
            "\n[branch {}]\npool_kernel = {}\npool_dilation = {}\nconv_kernel = {}\nconv_dilation = {}\n",
            b.name, b.pool_kernel, b.pool_dilation, b.conv_kernel, b.conv_dilation
        );
    }
    s
}

pub fn read_config(path: impl AsRef<Path>) -> Result<ModuleConfig, ConfigError> {
    parse_config(&fs::read_to_string(path)?)
}
