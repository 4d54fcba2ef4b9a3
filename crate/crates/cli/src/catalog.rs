//! Bundled scenarios and directory listings.

use std::fs;
use std::path::Path;

use crate::scenario::Scenario;

/// `(name, JSON text)` of the scenarios shipped with the binary.
pub const BUNDLED: &[(&str, &str)] = &[
    ("cascade_demo", include_str!("../scenarios/cascade_demo.json")),
    ("chained3_fading", include_str!("../scenarios/chained3_fading.json")),
    ("chained3_sine", include_str!("../scenarios/chained3_sine.json")),
    ("chainedN_n4", include_str!("../scenarios/chainedN_n4.json")),
    ("channels_n3", include_str!("../scenarios/channels_n3.json")),
    ("channels_n3_dead", include_str!("../scenarios/channels_n3_dead.json")),
    ("skew_m4", include_str!("../scenarios/skew_m4.json")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".json").unwrap_or(name);
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

fn describe(s: &Scenario) -> String {
    if s.demo {
        format!("{} (demo, no checker)", s.description)
    } else {
        s.description.clone()
    }
}

/// `(name, description)` of the bundled catalog, or of every `*.json` in `dir`.
pub fn list(dir: Option<&Path>) -> Result<Vec<(String, String)>, String> {
    let Some(dir) = dir else {
        return BUNDLED
            .iter()
            .map(|(name, text)| {
                Scenario::parse(text, name)
                    .map(|s| (name.to_string(), describe(&s)))
                    .map_err(|e| e.to_string())
            })
            .collect();
    };
    let entries = fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let s = Scenario::load(p).map_err(|e| e.to_string())?;
            let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((stem, describe(&s)))
        })
        .collect()
}
