#![allow(dead_code)]

use gencache_core::codegen::{ChatMessage, FnBackend, LlmBackend};
use serde_json::json;

pub const SYSTEM: &str = "You are a shopping assistant working for an online store. Read the \
customer request below and reply with a single JSON object describing the search action that \
should be taken next. Keep every field of the action document and never add commentary, \
explanations or markdown around the object.";

pub const ITEMS: &[&str] = &[
    "bluetooth headphones",
    "usb-c charging cable",
    "stainless steel water bottle",
    "wireless gaming mouse",
    "ceramic coffee mug",
    "yoga mat with carrying strap",
    "led desk lamp",
    "hiking backpack",
    "cast iron skillet",
    "mechanical keyboard",
];

pub fn shop_prompt_with(system: &str, item: &str, price: u32) -> String {
    format!("{system}\n\nI want to buy {item}, under the price range of {price} dollars")
}

pub fn shop_prompt(item: &str, price: u32) -> String {
    shop_prompt_with(SYSTEM, item, price)
}

pub fn shop_response(item: &str, price: &str) -> String {
    json!({
        "action": "search",
        "site": "store.example",
        "department": "all",
        "sort": "relevance",
        "currency": "usd",
        "page": "1",
        "quantity": "1",
        "item": item,
        "price": price,
    })
    .to_string()
}

pub fn shop_program_reply() -> String {
    let entries: Vec<_> = [
        ("action", "search"),
        ("site", "store.example"),
        ("department", "all"),
        ("sort", "relevance"),
        ("currency", "usd"),
        ("page", "1"),
        ("quantity", "1"),
        ("item", "{item}"),
        ("price", "{price}"),
    ]
    .iter()
    .map(|(k, v)| json!({"key": k, "value": v}))
    .collect();
    json!({
        "structural_regex": "i want to buy .+, under the price range of \\d+ dollars",
        "rules": [{
            "match_regex": "i want to buy (?<item>.+?), under the price range of (?<price>\\d+) dollars",
            "response": {"structured": entries},
        }],
    })
    .to_string()
}

/// Answers shop prompts with the canonical document and anything else with an echo.
pub fn shop_answer(text: &str) -> String {
    let re = regex::Regex::new(r"(?s)buy (.+?), under the price range of (\d+) dollars").unwrap();
    match re.captures(text) {
        Some(c) => shop_response(&c[1], &c[2]),
        None => format!("echo: {}", text.chars().take(40).collect::<String>()),
    }
}

pub fn shop_agent() -> impl LlmBackend {
    FnBackend(|messages: &[ChatMessage]| {
        let text = messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        Ok(shop_answer(&text))
    })
}

pub fn shop_codegen() -> impl LlmBackend {
    FnBackend(|_: &[ChatMessage]| Ok(shop_program_reply()))
}

/// Approves every comparison in the prompt.
pub fn approving_validator() -> impl LlmBackend {
    FnBackend(|messages: &[ChatMessage]| {
        let prompt = &messages[0].content;
        let n = gencache_core::codegen::prompts::parse_comparison_blocks(prompt).len();
        Ok(json!({"valid": vec![1; n], "reason": ""}).to_string())
    })
}
