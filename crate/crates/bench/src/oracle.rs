//! Ground-truth extraction and hit classification.

use std::sync::LazyLock;

use gencache_core::prompt::ResponseDoc;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::generate::{Family, GroundTruth, STRUCTURAL_TEMPLATES, VERBS};

/// Lowercase, trim, collapse whitespace and drop a trailing ".00".
pub fn normalize(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    match collapsed.strip_suffix(".00") {
        Some(stripped) => stripped.to_string(),
        None => collapsed,
    }
}

static PARAM_ONLY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^I want to buy (?<item>.+), under the price range of (?<price>\d+) dollars$").unwrap()
});

static SYNONYM: LazyLock<Regex> = LazyLock::new(|| {
    let verbs = VERBS.join("|");
    Regex::new(&format!(
        r"^(?:please )?(?:{verbs}) (?:(?:a|an|some) )?(?:(?<name>[^.]+)\. need it to be (?<attr>.+)|(?<item>.+)), under the price range of (?<price>\d+) dollars$"
    ))
    .unwrap()
});

static STRUCTURAL: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    STRUCTURAL_TEMPLATES
        .iter()
        .map(|t| {
            let pattern = regex::escape(t)
                .replace(r"\{item\}", "(?<item>.+)")
                .replace(r"\{price\}", r"(?<price>\d+)");
            Regex::new(&format!("^{pattern}$")).unwrap()
        })
        .collect()
});

/// Recovers (item, price) from an instruction of the given family.
pub fn extract(family: Family, text: &str) -> Option<GroundTruth> {
    let truth = |item: &str, price: &str| GroundTruth {
        item: item.to_string(),
        price: price.to_string(),
    };
    match family {
        Family::ParamOnly => {
            let c = PARAM_ONLY.captures(text)?;
            Some(truth(&c["item"], &c["price"]))
        }
        Family::ParamWithSynonym => {
            let c = SYNONYM.captures(text)?;
            let item = match (c.name("name"), c.name("attr"), c.name("item")) {
                (Some(name), Some(attr), _) => format!("{} {}", attr.as_str(), name.as_str()),
                (_, _, Some(item)) => item.as_str().to_string(),
                _ => return None,
            };
            Some(truth(&item, &c["price"]))
        }
        Family::Structural => STRUCTURAL.iter().find_map(|re| {
            let c = re.captures(text)?;
            Some(truth(&c["item"], &c["price"]))
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HitClass {
    Positive,
    Negative,
}

/// A hit is positive iff the response's item and price both match after normalization.
pub fn classify(response_text: &str, truth: &GroundTruth) -> HitClass {
    let doc = ResponseDoc::parse(response_text);
    let same = |key: &str, expected: &str| doc.get(key).is_some_and(|v| normalize(v) == normalize(expected));
    if same("item", &truth.item) && same("price", &truth.price) {
        HitClass::Positive
    } else {
        HitClass::Negative
    }
}
