#![allow(dead_code)]

use gencache_core::codegen::{ChatMessage, FnBackend, LlmBackend, LlmError};
use serde_json::json;

pub const SYSTEM: &str = "You are a shopping assistant working for an online store. Read the \
customer request below and reply with a single JSON object describing the search action that \
should be taken next. Keep every field of the action document and never add commentary, \
explanations or markdown around the object.";

pub fn shop_prompt(item: &str, price: u32) -> String {
    format!("{SYSTEM}\n\nI want to buy {item}, under the price range of {price} dollars")
}

pub fn shop_response(item: &str, price: u32) -> String {
    json!({
        "action": "search",
        "site": "store.example",
        "department": "all",
        "sort": "relevance",
        "currency": "usd",
        "page": "1",
        "quantity": "1",
        "item": item,
        "price": price.to_string(),
    })
    .to_string()
}

/// A declarative program reproducing `shop_response` for `shop_prompt`.
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
    "portable phone charger",
    "noise cancelling earbuds",
    "electric toothbrush",
    "memory foam pillow",
    "digital kitchen scale",
    "aluminum laptop stand",
];

/// Miss-path backend answering shop prompts with their canonical response.
pub fn shop_agent() -> impl LlmBackend {
    FnBackend(|messages: &[ChatMessage]| {
        let text = &messages.last().expect("at least one message").content;
        let re = regex::Regex::new(r"buy (.+?), under the price range of (\d+) dollars").unwrap();
        match re.captures(text) {
            Some(c) => Ok(shop_response(&c[1], c[2].parse().unwrap())),
            None => Ok("I can only help with shopping requests.".to_string()),
        }
    })
}

pub fn failing_backend() -> impl LlmBackend {
    FnBackend(|_: &[ChatMessage]| Err(LlmError::Transport("connection refused".into())))
}
