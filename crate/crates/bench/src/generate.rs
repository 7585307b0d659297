//! Seeded shopping-instruction generators.
//!
//! Every draw is a distinct (item, price) pair, so no two instructions in a
//! stream share a ground truth or a text.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::catalog::Catalog;

/// Shared system message prepended to every instruction.
pub const SYSTEM_PROMPT: &str = "You are a shopping assistant that operates the search page of an \
online store on behalf of a customer. Read the customer instruction that follows and reply with \
one JSON object that describes the next search action. The object must contain the fields action, \
site, department, sort, currency, page, quantity, item and price, in that order, and nothing else. \
Do not add commentary, explanations or markdown.";

pub const VERBS: [&str; 6] = ["i want to buy", "buy", "purchase", "find me", "i am looking for", "get"];

pub const SPLIT_PROBABILITY: f64 = 0.1;

/// Ten phrasings of the same request; the first is the canonical one.
pub const STRUCTURAL_TEMPLATES: [&str; 10] = [
    "I want to buy {item}, under the price range of {price} dollars",
    "For under {price} dollars, I want {item}",
    "My budget is {price} dollars and I need {item}",
    "Looking for {item} that costs less than {price} dollars",
    "Show me {item} priced below {price} dollars",
    "{item} is what I need, with a maximum spend of {price} dollars",
    "Can you locate {item} for no more than {price} dollars?",
    "Under {price} dollars: {item}, please",
    "I have {price} dollars to spend on {item}",
    "Please search for {item} within a {price} dollar limit",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    ParamOnly,
    #[serde(rename = "param-w-synonym")]
    ParamWithSynonym,
    Structural,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::ParamOnly, Family::ParamWithSynonym, Family::Structural];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::ParamOnly => "param-only",
            Family::ParamWithSynonym => "param-w-synonym",
            Family::Structural => "structural",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenerateError {
    #[error("unknown dataset {0:?}; expected param-only, param-w-synonym or structural")]
    UnknownFamily(String),
    #[error("n must be at least 1")]
    Empty,
    #[error("catalog too small for {0} distinct draws")]
    Exhausted(usize),
}

impl FromStr for Family {
    type Err = GenerateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| GenerateError::UnknownFamily(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundTruth {
    pub item: String,
    pub price: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticInstruction {
    /// The user instruction alone.
    pub text: String,
    pub ground_truth: GroundTruth,
    pub family: Family,
    pub seed_item_id: usize,
    /// Structural template index; 0 for the other families.
    pub template: usize,
    /// Whether the item's attribute was moved into a second sentence.
    pub split: bool,
}

impl SyntheticInstruction {
    /// The complete prompt sent to the model: system message plus instruction.
    pub fn full_text(&self) -> String {
        full_text(&self.text)
    }
}

pub fn full_text(instruction: &str) -> String {
    format!("{SYSTEM_PROMPT}\n\nCustomer instruction: {instruction}")
}

/// The response a correct model gives for `truth`.
pub fn expected_response(truth: &GroundTruth) -> String {
    json!({
        "action": "search",
        "site": "store.example",
        "department": "all",
        "sort": "relevance",
        "currency": "usd",
        "page": "1",
        "quantity": "1",
        "item": truth.item,
        "price": truth.price,
    })
    .to_string()
}

struct Draw {
    product: usize,
    name: String,
    attribute: Option<String>,
    price: u32,
}

impl Draw {
    fn item(&self) -> String {
        match &self.attribute {
            Some(a) => format!("{a} {}", self.name),
            None => self.name.clone(),
        }
    }

    fn truth(&self) -> GroundTruth {
        GroundTruth {
            item: self.item(),
            price: self.price.to_string(),
        }
    }
}

/// Draws distinct (item, attribute, price) combinations.
struct Sampler<'a> {
    catalog: &'a Catalog,
    seen: HashSet<(usize, Option<String>, u32)>,
}

impl<'a> Sampler<'a> {
    fn new(catalog: &'a Catalog) -> Self {
        Self {
            catalog,
            seen: HashSet::new(),
        }
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng, force_attribute: bool) -> Option<Draw> {
        for _ in 0..10_000 {
            let product = rng.random_range(0..self.catalog.len());
            let p = &self.catalog.products()[product];
            let attribute = if force_attribute || rng.random_bool(0.75) {
                p.attributes.choose(rng).cloned()
            } else {
                None
            };
            let price = rng.random_range(p.min_price..=p.max_price);
            if self.seen.insert((product, attribute.clone(), price)) {
                return Some(Draw {
                    product,
                    name: p.name.clone(),
                    attribute,
                    price,
                });
            }
        }
        None
    }
}

fn article(word: &str) -> &'static str {
    if word.ends_with('s') {
        "some"
    } else if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

pub fn gen_param_only(catalog: &Catalog, n: usize, seed: u64) -> Result<Vec<SyntheticInstruction>, GenerateError> {
    generate(catalog, n, seed, |d| {
        let truth = d.truth();
        let text = format!(
            "I want to buy {}, under the price range of {} dollars",
            truth.item, truth.price
        );
        (text, truth, 0)
    })
}

pub fn gen_param_w_synonym(
    catalog: &Catalog,
    n: usize,
    seed: u64,
) -> Result<Vec<SyntheticInstruction>, GenerateError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5e11);
    let mut sampler = Sampler::new(catalog);
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return Err(GenerateError::Empty);
    }
    for _ in 0..n {
        let split = rng.random_bool(SPLIT_PROBABILITY);
        let d = sampler.draw(&mut rng, split).ok_or(GenerateError::Exhausted(n))?;
        let verb = *VERBS.choose(&mut rng).expect("verbs");
        let please = if rng.random_bool(0.3) { "please " } else { "" };
        let truth = d.truth();
        let text = if split {
            let attr = d.attribute.as_deref().expect("split draws carry an attribute");
            format!(
                "{please}{verb} {} {}. need it to be {attr}, under the price range of {} dollars",
                article(&d.name),
                d.name,
                truth.price
            )
        } else {
            let item = truth.item.clone();
            let art = if rng.random_bool(0.5) {
                format!("{} ", article(&item))
            } else {
                String::new()
            };
            format!("{please}{verb} {art}{item}, under the price range of {} dollars", truth.price)
        };
        out.push(SyntheticInstruction {
            text,
            ground_truth: truth,
            family: Family::ParamWithSynonym,
            seed_item_id: d.product,
            template: 0,
            split,
        });
    }
    Ok(out)
}

pub fn render_structural(truth: &GroundTruth, template: usize) -> String {
    STRUCTURAL_TEMPLATES[template]
        .replace("{item}", &truth.item)
        .replace("{price}", &truth.price)
}

pub fn gen_structural(catalog: &Catalog, n: usize, seed: u64) -> Result<Vec<SyntheticInstruction>, GenerateError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x57_7c_7a_11);
    generate(catalog, n, seed, |d| {
        let truth = d.truth();
        let template = rng.random_range(0..STRUCTURAL_TEMPLATES.len());
        (render_structural(&truth, template), truth, template)
    })
    .map(|mut v| {
        for i in &mut v {
            i.family = Family::Structural;
        }
        v
    })
}

pub fn generate_family(
    catalog: &Catalog,
    family: Family,
    n: usize,
    seed: u64,
) -> Result<Vec<SyntheticInstruction>, GenerateError> {
    match family {
        Family::ParamOnly => gen_param_only(catalog, n, seed),
        Family::ParamWithSynonym => gen_param_w_synonym(catalog, n, seed),
        Family::Structural => gen_structural(catalog, n, seed),
    }
}

fn generate(
    catalog: &Catalog,
    n: usize,
    seed: u64,
    mut render: impl FnMut(&Draw) -> (String, GroundTruth, usize),
) -> Result<Vec<SyntheticInstruction>, GenerateError> {
    if n == 0 {
        return Err(GenerateError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampler = Sampler::new(catalog);
    (0..n)
        .map(|_| {
            let d = sampler.draw(&mut rng, false).ok_or(GenerateError::Exhausted(n))?;
            let (text, ground_truth, template) = render(&d);
            Ok(SyntheticInstruction {
                text,
                ground_truth,
                family: Family::ParamOnly,
                seed_item_id: d.product,
                template,
                split: false,
            })
        })
        .collect()
}
