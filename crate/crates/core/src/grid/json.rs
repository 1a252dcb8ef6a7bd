//! Native JSON case format:
//! `{"base_mva": .., "buses": [..], "branches": [..], "generators": [..]}`
//! with the field names of [`Bus`], [`Branch`] and [`Generator`].

use serde::{Deserialize, Serialize};

use super::{Branch, Bus, CaseError, Generator, GridCase};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    #[serde(default)]
    generators: Vec<Generator>,
}

#[derive(Serialize)]
struct CaseFileRef<'a> {
    base_mva: f64,
    buses: &'a [Bus],
    branches: &'a [Branch],
    generators: &'a [Generator],
}

pub(super) fn parse(text: &str) -> Result<GridCase, CaseError> {
    let file: CaseFile = serde_json::from_str(text).map_err(|e| CaseError::Json(e.to_string()))?;
    GridCase::new(file.base_mva, file.buses, file.branches, file.generators)
}

pub(super) fn serialize(case: &GridCase) -> String {
    let file = CaseFileRef {
        base_mva: case.base_mva,
        buses: &case.buses,
        branches: &case.branches,
        generators: &case.generators,
    };
    serde_json::to_string_pretty(&file).expect("case data is always serializable")
}
