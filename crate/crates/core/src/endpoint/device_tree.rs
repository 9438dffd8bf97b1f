//! Line-oriented device-tree description.
//!
//! ```text
//! # label      compatible             register window        driver dir
//! node axi0    compatible=xlnx,axi    reg=0x80000000,0x1000
//! node dac0    compatible=adi,ad5675r sysfs=bus/iio/devices
//! ```
//!
//! Platform nodes need a non-empty `reg` window; nodes with `sysfs=` are
//! driver-backed and their `reg` (if any) is informational only.

use std::collections::HashSet;
use std::fs;
use std::path::{Component, Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegRange {
    pub base: u64,
    pub size: u64,
}

impl RegRange {
    pub fn end(&self) -> u64 {
        self.base.saturating_add(self.size)
    }

    pub fn overlaps(&self, other: &RegRange) -> bool {
        self.base < other.end() && other.base < self.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceNode {
    pub label: String,
    pub compatible: String,
    pub reg: Option<RegRange>,
    /// Directory, relative to the sysfs root, where the bound driver lives.
    pub sysfs_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeFlavor {
    Platform,
    Sysfs,
}

impl DeviceNode {
    pub fn platform(label: &str, compatible: &str, base: u64, size: u64) -> Self {
        Self {
            label: label.into(),
            compatible: compatible.into(),
            reg: Some(RegRange { base, size }),
            sysfs_path: None,
        }
    }

    pub fn sysfs(label: &str, compatible: &str, sysfs_path: impl Into<PathBuf>) -> Self {
        Self {
            label: label.into(),
            compatible: compatible.into(),
            reg: None,
            sysfs_path: Some(sysfs_path.into()),
        }
    }

    pub fn flavor(&self) -> NodeFlavor {
        if self.sysfs_path.is_some() {
            NodeFlavor::Sysfs
        } else {
            NodeFlavor::Platform
        }
    }

    pub fn reg_size(&self) -> u64 {
        self.reg.map_or(0, |r| r.size)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DeviceTreeError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("register windows of `{first}` and `{second}` overlap")]
    Overlap { first: String, second: String },
    #[error("more than one sysfs directory matches `{label}`: {candidates:?}")]
    AmbiguousMatch { label: String, candidates: Vec<PathBuf> },
}

fn parse_u64(text: &str) -> Option<u64> {
    let digits = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")).unwrap_or(text);
    if digits.is_empty() {
        return None;
    }
    u64::from_str_radix(digits, 16).ok()
}

fn valid_label(label: &str) -> bool {
    !label.is_empty()
        && label.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.' | b':' | b'@'))
}

fn contained_relative(path: &Path) -> bool {
    path.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

pub fn parse_device_tree(source: &str) -> Result<Vec<DeviceNode>, DeviceTreeError> {
    let mut nodes: Vec<DeviceNode> = Vec::new();
    let mut labels = HashSet::new();

    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| DeviceTreeError::Parse { line, message };
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let mut tokens = text.split_whitespace();
        match tokens.next() {
            Some("node") => {}
            Some(other) => return Err(err(format!("expected `node`, found `{other}`"))),
            None => unreachable!(),
        }
        let label = tokens.next().ok_or_else(|| err("missing node label".into()))?;
        if !valid_label(label) {
            return Err(err(format!("invalid label `{label}`")));
        }
        if !labels.insert(label.to_string()) {
            return Err(err(format!("duplicate label `{label}`")));
        }

        let mut compatible = None;
        let mut reg = None;
        let mut sysfs = None;
        for token in tokens {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, found `{token}`")))?;
            let seen = match key {
                "compatible" => compatible.replace(value.to_string()).is_some(),
                "reg" => {
                    let (base, size) = value
                        .split_once(',')
                        .and_then(|(b, s)| Some((parse_u64(b)?, parse_u64(s)?)))
                        .ok_or_else(|| err(format!("reg must be <hex base>,<hex size>, found `{value}`")))?;
                    if base.checked_add(size).is_none() {
                        return Err(err("reg window wraps the address space".into()));
                    }
                    reg.replace(RegRange { base, size }).is_some()
                }
                "sysfs" => {
                    let path = PathBuf::from(value);
                    if value.is_empty() || !contained_relative(&path) {
                        return Err(err(format!("sysfs path `{value}` must be relative and stay below the root")));
                    }
                    sysfs.replace(path).is_some()
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            };
            if seen {
                return Err(err(format!("key `{key}` given twice")));
            }
        }

        let compatible = compatible.filter(|c| !c.is_empty()).ok_or_else(|| err("missing compatible=".into()))?;
        if sysfs.is_none() {
            match reg {
                None => return Err(err(format!("platform node `{label}` needs reg=<base>,<size>"))),
                Some(r) if r.size == 0 => return Err(err(format!("platform node `{label}` has an empty register window"))),
                _ => {}
            }
        }
        nodes.push(DeviceNode { label: label.to_string(), compatible, reg, sysfs_path: sysfs });
    }

    check_overlaps(&nodes)?;
    Ok(nodes)
}

fn check_overlaps(nodes: &[DeviceNode]) -> Result<(), DeviceTreeError> {
    let platform: Vec<(&str, RegRange)> = nodes
        .iter()
        .filter(|n| n.flavor() == NodeFlavor::Platform)
        .filter_map(|n| Some((n.label.as_str(), n.reg?)))
        .collect();
    for (i, (first, a)) in platform.iter().enumerate() {
        for (second, b) in &platform[i + 1..] {
            if a.overlaps(b) {
                return Err(DeviceTreeError::Overlap { first: first.to_string(), second: second.to_string() });
            }
        }
    }
    Ok(())
}

fn dir_matches(dir: &Path, label: &str) -> bool {
    if dir.file_name().is_some_and(|n| n == label) {
        return true;
    }
    fs::read_to_string(dir.join("name")).is_ok_and(|name| name.trim_end() == label)
}

/// Finds the driver directory for a node: a directory below
/// `sysfs_root/<node.sysfs_path>` whose name, or whose `name` attribute,
/// equals the node label. The search directory itself also qualifies.
pub fn match_sysfs(node: &DeviceNode, sysfs_root: &Path) -> Result<Option<PathBuf>, DeviceTreeError> {
    let base = match &node.sysfs_path {
        Some(rel) if contained_relative(rel) => sysfs_root.join(rel),
        Some(_) => return Ok(None),
        None => sysfs_root.to_path_buf(),
    };
    if !base.is_dir() {
        return Ok(None);
    }

    let mut candidates = Vec::new();
    if base != sysfs_root && fs::read_to_string(base.join("name")).is_ok_and(|n| n.trim_end() == node.label) {
        candidates.push(base.clone());
    }
    let mut children: Vec<PathBuf> = fs::read_dir(&base)
        .map(|rd| rd.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect())
        .unwrap_or_default();
    children.sort();
    candidates.extend(children.into_iter().filter(|dir| dir_matches(dir, &node.label)));

    match candidates.len() {
        0 => Ok(None),
        1 => Ok(candidates.pop()),
        _ => Err(DeviceTreeError::AmbiguousMatch { label: node.label.clone(), candidates }),
    }
}
